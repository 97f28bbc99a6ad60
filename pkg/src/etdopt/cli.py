"""Experiment harness.

Parses flat key-value config files (flags override), generates or loads
instances, runs (seed x schedule) sweeps, and emits plot-ready CSV traces
plus text summaries. Schedule comparison mode tabulates the broadcasts
needed to reach objective-gap thresholds against the always-broadcast
baseline.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics, trigger
from .engine import RunConfig, RunTrace, run
from .graph import check_stepsize_strongly_convex, generate_random_graph, laplacian
from .objective import (
    CompositeObjective,
    instance_hash,
    instance_to_text,
    make_lasso_instance,
    make_logistic_instance,
    make_quadratic_instance,
)
from .reference import (
    ReferenceSolution,
    reference_from_text,
    reference_to_text,
    solve_centralized,
)

PROBLEMS = ("lasso", "logistic", "quadratic")
DEFAULT_ROUNDS = {"lasso": 2000, "logistic": 5000, "quadratic": 2000}
DEFAULT_VARIANT = {"lasso": "composite", "logistic": "smooth", "quadratic": "smooth"}
GAP_THRESHOLDS = (1e-1, 1e-2, 1e-3, 1e-4)

CSV_HEADER = "round,objective_gap,consensus_error,primal_residual,broadcasts_agent0,broadcasts_total_cum"


class ConfigFileError(ValueError):
    """Config file or flag rejected, with position information."""


@dataclass
class ExperimentConfig:
    problem: str = "lasso"
    n: int = 100
    m: int = 50
    p: int = 3          # rows per agent (sparse least squares)
    mi: int = 8         # samples per agent (logistic)
    tau: float = 0.1
    ridge: float = 0.0
    graph_r: float = 0.4
    graph_seed: Optional[int] = None
    beta: float = 0.0025
    eta: tuple = (0.6,)
    variant: Optional[str] = None
    schedule: str = "poly:20:1.2"
    rounds: Optional[int] = None
    seeds: tuple = (1,)
    out: str = "runs"
    reference_tol: float = 1e-10
    certificate: bool = False
    dual_radius: Optional[float] = None
    # hand-tuned benchmark stepsizes can violate the sufficient condition
    # while still converging, so the harness records margins instead of
    # rejecting; flip to True to hard-enforce.
    enforce_stepsize: bool = False
    compare: tuple = ()

    def effective_rounds(self) -> int:
        return self.rounds if self.rounds is not None else DEFAULT_ROUNDS[self.problem]

    def effective_variant(self) -> str:
        return self.variant if self.variant is not None else DEFAULT_VARIANT[self.problem]

    def eta_vector(self, n: int) -> np.ndarray:
        if len(self.eta) == 1:
            return np.full(n, self.eta[0])
        if len(self.eta) != n:
            raise ConfigFileError(f"eta list has {len(self.eta)} entries for n={n}")
        return np.asarray(self.eta, dtype=np.float64)


def _parse_bool(value: str, where: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigFileError(f"{where}: expected a boolean, got {value!r}")


def _parse_int_list(value: str, where: str) -> tuple:
    try:
        return tuple(int(v.strip()) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigFileError(f"{where}: expected comma-separated integers, got {value!r}") from None


def _parse_float_list(value: str, where: str) -> tuple:
    try:
        return tuple(float(v.strip()) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigFileError(f"{where}: expected comma-separated numbers, got {value!r}") from None


def _apply_key(cfg: dict, key: str, value: str, where: str):
    key = key.strip()
    value = value.strip()
    try:
        if key == "problem":
            if value not in PROBLEMS:
                raise ConfigFileError(f"{where}: problem must be one of {PROBLEMS}, got {value!r}")
            cfg[key] = value
        elif key in ("n", "m", "p", "mi"):
            cfg[key] = int(value)
        elif key in ("tau", "ridge", "graph_r", "beta", "reference_tol", "dual_radius"):
            cfg[key] = float(value)
        elif key == "graph_seed":
            cfg[key] = int(value) if value else None
        elif key == "eta":
            cfg[key] = _parse_float_list(value, where)
        elif key == "variant":
            cfg[key] = value
        elif key == "schedule":
            trigger.parse_schedule(value)  # validate early
            cfg[key] = value
        elif key == "rounds":
            cfg[key] = int(value)
        elif key == "seeds":
            cfg[key] = _parse_int_list(value, where)
        elif key == "out":
            cfg[key] = value
        elif key == "certificate":
            cfg[key] = _parse_bool(value, where)
        elif key == "enforce_stepsize":
            cfg[key] = _parse_bool(value, where)
        elif key == "compare":
            specs = tuple(s.strip() for s in value.split(",") if s.strip())
            for s in specs:
                trigger.parse_schedule(s)
            cfg[key] = specs
        else:
            raise ConfigFileError(f"{where}: unknown key {key!r}")
    except ValueError as err:
        if isinstance(err, ConfigFileError):
            raise
        raise ConfigFileError(f"{where}: bad value for {key}: {value!r}") from None
    except trigger.ScheduleError as err:
        raise ConfigFileError(f"{where}: {err}") from None


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.beta <= 0:
        raise ConfigFileError(f"beta must be positive, got {cfg.beta}")
    if any(e <= 0 for e in cfg.eta):
        raise ConfigFileError("eta entries must be positive")
    if not (0.0 < cfg.graph_r <= 1.0):
        raise ConfigFileError(f"graph_r must be in (0, 1], got {cfg.graph_r}")
    if cfg.rounds is not None and cfg.rounds < 0:
        raise ConfigFileError(f"rounds must be >= 0, got {cfg.rounds}")
    if cfg.reference_tol <= 0:
        raise ConfigFileError("reference_tol must be positive")
    if not cfg.seeds:
        raise ConfigFileError("need at least one seed")
    if cfg.variant is not None and cfg.variant not in ("composite", "smooth", "nonsmooth"):
        raise ConfigFileError(f"unknown variant {cfg.variant!r}")
    return cfg


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus flag overrides.

    The file is flat "key = value" text with '#' comments; unknown keys are
    rejected with their line number. An empty file yields the defaults.
    """
    cfg: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigFileError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            _apply_key(cfg, key, value, f"{path}:{lineno}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        _apply_key(cfg, key, str(value), f"flag --{key.replace('_', '-')}")
    return _validate(ExperimentConfig(**cfg))


def build_instance(cfg: ExperimentConfig, seed: int) -> CompositeObjective:
    if cfg.problem == "lasso":
        obj, _ = make_lasso_instance(cfg.n, cfg.p, cfg.m, cfg.tau, seed)
    elif cfg.problem == "logistic":
        obj, _ = make_logistic_instance(cfg.n, cfg.mi, cfg.m, seed, ridge=cfg.ridge)
    else:
        obj = make_quadratic_instance(cfg.n, cfg.m, seed)
    return obj


def _cached_reference(cfg: ExperimentConfig, objective: CompositeObjective,
                      cache_dir: Path) -> ReferenceSolution:
    digest = instance_hash(objective)
    cache_dir.mkdir(parents=True, exist_ok=True)
    instance_path = cache_dir / f"instance_{digest}.txt"
    if not instance_path.exists():
        instance_path.write_text(instance_to_text(objective))
    ref_path = cache_dir / f"reference_{digest}_tol{cfg.reference_tol:.3g}.txt"
    if ref_path.exists():
        sol, stored_digest = reference_from_text(ref_path.read_text())
        if stored_digest == digest:
            return sol
    sol = solve_centralized(objective, tol=cfg.reference_tol)
    ref_path.write_text(reference_to_text(sol, digest))
    return sol


def _schedule_dirname(spec: str) -> str:
    return spec.replace(":", "-").replace("^", "pow").replace(".", "_")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _residual(trace: RunTrace, k: int, x_star: np.ndarray) -> float:
    """Relative residual when defined; when the start point coincides with
    the replicated minimizer (regularizer-pinned optimum at the all-zero
    start) the unnormalized distance is reported instead."""
    if float(np.linalg.norm(trace.x_at(0) - x_star[None, :])) > 0.0:
        return metrics.primal_residual(trace, k, x_star)
    return float(np.linalg.norm(trace.x_at(k) - x_star[None, :]))


def write_trace_csv(path: Path, trace: RunTrace, objective: CompositeObjective,
                    lap: np.ndarray, reference: ReferenceSolution):
    """Emit one row per stored round; ergodic quantities start at round 1
    (round 0 reports the starting point itself). A diverged run ends with a
    sentinel row of NaNs at the failing round."""
    summary = metrics.broadcast_summary(trace)
    lines = [CSV_HEADER]
    for k in trace.stored_rounds():
        point = trace.x_at(k) if k == 0 else metrics.ergodic_average(trace, k)
        gap = metrics.objective_gap(objective, point, reference.f_star)
        cons = metrics.consensus_error(lap, point)
        resid = _residual(trace, k, reference.x_star)
        lines.append(
            f"{k},{_fmt(gap)},{_fmt(cons)},{_fmt(resid)},"
            f"{int(summary.cumulative[k, 0])},{int(summary.cumulative[k].sum())}"
        )
    if trace.diverged:
        lines.append(f"{trace.diverged_round},nan,nan,nan,nan,nan")
    path.write_text("\n".join(lines) + "\n")


def _strong_convexity_margin(cfg_run: RunConfig) -> Optional[float]:
    mu = cfg_run.objective.strong_convexity()
    if np.any(mu <= 0.0):
        return None
    k1 = float(np.min(mu))  # midpoint of the admissible interval (0, 2 min mu)
    check = check_stepsize_strongly_convex(
        cfg_run.eta, cfg_run.beta, laplacian(cfg_run.graph),
        cfg_run.objective.lipschitz(), mu, k1,
    )
    return check.margin


def write_summary(path: Path, cfg: ExperimentConfig, run_cfg: RunConfig, trace: RunTrace,
                  objective: CompositeObjective, lap: np.ndarray,
                  reference: ReferenceSolution, certificate_text: str):
    done = trace.completed_rounds
    lines = [
        f"problem {cfg.problem}",
        f"schedule {run_cfg.schedule.spec_string()}",
        f"seed {run_cfg.seed}",
        f"n {run_cfg.n}",
        f"m {run_cfg.m}",
        f"instance {trace.instance_digest}",
        f"rounds_completed {done}",
        f"diverged {int(trace.diverged)}",
        f"stepsize_margin {_fmt(trace.stepsize_margin)}",
    ]
    sc_margin = _strong_convexity_margin(run_cfg)
    if sc_margin is not None:
        lines.append(f"strong_convexity_margin {_fmt(sc_margin)}")
    if trace.diverged:
        lines.append(f"diverged_round {trace.diverged_round}")
        lines.append(f"diverged_agent {trace.diverged_agent}")
    if done >= 1 and not trace.diverged:
        avg = metrics.ergodic_average(trace, done)
        lines += [
            f"final_objective_gap {_fmt(metrics.objective_gap(objective, avg, reference.f_star))}",
            f"final_consensus_error {_fmt(metrics.consensus_error(lap, avg))}",
            f"final_primal_residual {_fmt(_residual(trace, done, reference.x_star))}",
        ]
    summary = metrics.broadcast_summary(trace)
    lines += [
        f"broadcasts_agent0 {int(summary.totals[0])}",
        f"broadcasts_total {int(summary.totals.sum())}",
        f"seconds_per_round {trace.seconds_per_round:.6g}",
        f"max_dual_imbalance {_fmt(trace.max_dual_imbalance)}",
    ]
    if trace.max_trigger_slack is not None:
        lines.append(f"max_trigger_slack {_fmt(trace.max_trigger_slack)}")
    body = "\n".join(lines) + "\n"
    if certificate_text:
        body += certificate_text
    path.write_text(body)


@dataclass
class ComparisonTable:
    """Broadcasts by agent 0 needed to first reach each objective-gap
    threshold, per schedule, with ratios against the always-broadcast
    baseline."""

    thresholds: tuple
    schedules: tuple
    broadcasts: dict            # schedule spec -> list of Optional[int]
    ratios: dict                # schedule spec -> list of Optional[float]

    def render(self) -> str:
        width = max(len(s) for s in self.schedules) + 2
        head = "schedule".ljust(width) + "".join(f"{thr:>12g}" for thr in self.thresholds)
        rows = [head]
        for spec in self.schedules:
            cells = []
            for count, ratio in zip(self.broadcasts[spec], self.ratios[spec]):
                if count is None:
                    cells.append(f"{'—':>12}")
                elif ratio is None:
                    cells.append(f"{count:>12d}")
                else:
                    cells.append(f"{f'{count} ({ratio:.2f})':>12}")
            rows.append(spec.ljust(width) + "".join(cells))
        return "\n".join(rows) + "\n"


def compare_schedules(traces: dict, objective: CompositeObjective, lap: np.ndarray,
                      reference: ReferenceSolution,
                      thresholds=GAP_THRESHOLDS) -> ComparisonTable:
    """Tabulate agent-0 broadcasts needed to reach each gap threshold.

    `traces` maps schedule spec strings to traces that share one instance and
    seed; a "zero" entry provides the ratio baseline.
    """
    counts: dict = {}
    for spec, trace in traces.items():
        summary = metrics.broadcast_summary(trace)
        row = []
        for thr in thresholds:
            hit = None
            for k in trace.stored_rounds():
                if k < 1:
                    continue
                gap = metrics.objective_gap(
                    objective, metrics.ergodic_average(trace, k), reference.f_star
                )
                if gap <= thr:
                    hit = int(summary.cumulative[k, 0])
                    break
            row.append(hit)
        counts[spec] = row
    baseline = counts.get("zero")
    ratios = {}
    for spec, row in counts.items():
        spec_ratios = []
        for i, count in enumerate(row):
            base = baseline[i] if baseline is not None else None
            spec_ratios.append(count / base if count is not None and base else None)
        ratios[spec] = spec_ratios
    return ComparisonTable(
        thresholds=tuple(thresholds),
        schedules=tuple(counts),
        broadcasts=counts,
        ratios=ratios,
    )


@dataclass
class ExperimentResult:
    exit_code: int
    run_dirs: list = field(default_factory=list)
    diverged_runs: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute the full (seed x schedule) sweep, writing trace.csv and
    summary.txt per run. Divergence is recorded and the sweep continues;
    the exit code is nonzero if any run diverged."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    result = ExperimentResult(exit_code=0)

    # canonical spec strings so the comparison baseline is always keyed "zero"
    raw_specs = cfg.compare if cfg.compare else (cfg.schedule,)
    schedule_specs = []
    for raw in raw_specs:
        canonical = trigger.parse_schedule(raw).spec_string()
        if canonical not in schedule_specs:
            schedule_specs.append(canonical)
    if cfg.compare and "zero" not in schedule_specs:
        schedule_specs.append("zero")

    for seed in cfg.seeds:
        objective = build_instance(cfg, seed)
        graph_seed = cfg.graph_seed if cfg.graph_seed is not None else seed
        graph = generate_random_graph(cfg.n, cfg.graph_r, graph_seed)
        lap = laplacian(graph)
        reference = _cached_reference(cfg, objective, cache_dir)
        seed_traces: dict = {}

        for spec in schedule_specs:
            schedule = trigger.parse_schedule(spec)
            run_cfg = RunConfig(
                graph=graph,
                objective=objective,
                schedule=schedule,
                beta=cfg.beta,
                eta=cfg.eta_vector(cfg.n),
                rounds=cfg.effective_rounds(),
                seed=seed,
                variant=cfg.effective_variant(),
                enforce_stepsize=cfg.enforce_stepsize,
            )
            trace = run(run_cfg)
            seed_traces[spec] = trace

            run_dir = out_dir / f"{cfg.problem}_s{seed}_{_schedule_dirname(spec)}"
            run_dir.mkdir(parents=True, exist_ok=True)
            certificate_text = ""
            if cfg.certificate and not trace.diverged:
                certificate_text = _certificate_block(cfg, run_cfg, trace, reference)
            write_trace_csv(run_dir / "trace.csv", trace, objective, lap, reference)
            write_summary(run_dir / "summary.txt", cfg, run_cfg, trace, objective, lap,
                          reference, certificate_text)
            result.run_dirs.append(run_dir)
            if trace.diverged:
                result.diverged_runs.append(
                    f"{cfg.problem} seed={seed} schedule={spec} round={trace.diverged_round}"
                )
                result.exit_code = 1

        if cfg.compare:
            table = compare_schedules(seed_traces, objective, lap, reference)
            table_path = out_dir / f"compare_{cfg.problem}_s{seed}.txt"
            table_path.write_text(table.render())
            result.tables[seed] = table

    return result


def _certificate_block(cfg: ExperimentConfig, run_cfg: RunConfig, trace: RunTrace,
                       reference: ReferenceSolution) -> str:
    try:
        cert = metrics.ergodic_rate_certificate(run_cfg, trace, reference, cfg.dual_radius)
        return cert.to_text()
    except metrics.CertificateError as err:
        return f"certificate_skipped {err}\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="etdopt",
        description="Event-triggered decentralized optimization experiment harness.",
    )
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--problem", choices=PROBLEMS)
    parser.add_argument("--schedule", help='e.g. "poly:20:1.2", "exp:1:0.99", "zero", "everyN:2"')
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--seed", help="comma-separated seed list")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--eta", help="scalar or comma-separated per-agent list")
    parser.add_argument("--graph-r", type=float, dest="graph_r")
    parser.add_argument("--certificate", action="store_true", default=None,
                        help="emit the ergodic rate certificate (n <= 64)")
    parser.add_argument("--compare", help="comma-separated schedule specs to compare")
    args = parser.parse_args(argv)

    overrides = {
        "problem": args.problem,
        "schedule": args.schedule,
        "rounds": args.rounds,
        "seeds": args.seed,
        "out": args.out,
        "beta": args.beta,
        "eta": args.eta,
        "graph_r": args.graph_r,
        "certificate": args.certificate,
        "compare": args.compare,
    }
    try:
        cfg = parse_config(args.config, overrides)
    except (ConfigFileError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    result = run_experiment(cfg)
    for run_dir in result.run_dirs:
        print(f"wrote {run_dir}")
    for failure in result.diverged_runs:
        print(f"diverged: {failure}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
