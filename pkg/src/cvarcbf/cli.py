"""Experiment orchestration and machine-readable outputs.

Covers configuration files, Monte Carlo fan-out over trials, CSV and JSON
artifacts, the large-sample ground-truth CVaR oracle, the per-step bound
error report, and the command-line entry point.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .beliefs import GaussianBelief, sample_particles, stream_seed
from .concentration import RiskConfig
from .cvar import (
    SampleVector,
    certified_cvar_bound,
    default_support_max,
    dkw_truncation_bound,
    empirical_cvar,
)
from .dynamics import (
    BarrierFunction,
    ControlAffineModel,
    affine_increment_coefficients,
    barrier_increments,
    unicycle_model,
)
from .errors import ConfigError, CvarCbfError, InvalidInput, MissingColumns
from .sim import (
    SEED_PURPOSES,
    ExperimentConfig,
    Method,
    Outcome,
    TrialLog,
    run_trial,
)

TRIAL_COLUMNS = (
    "trial", "method", "outcome", "violated", "center_violated", "reached",
    "first_violation_step", "first_violation_time", "init_seed",
    "initially_safe", "n_steps", "error",
)

STEP_COLUMNS = (
    "trial", "method", "step", "time",
    "true_x", "true_y", "true_theta",
    "est_x", "est_y", "est_theta",
    "cov_xx", "cov_xy", "cov_xth", "cov_yy", "cov_yth", "cov_thth",
    "cov_trace", "cov_max_eig",
    "meas_y", "meas_theta",
    "u_des_v", "u_des_omega", "u_v", "u_omega",
    "barrier_true", "barrier_true_next",
    "bound", "empirical_cvar", "band_term", "tail_term", "sigma_bar",
    "feasible", "fallback", "verification_bound",
    "measurement_seed", "optimizer_seed", "verification_seed", "truth_seed",
)

ERROR_COLUMNS = (
    "trial", "method", "step", "time",
    "bound", "ground_truth", "ground_truth_se", "error",
    "bound_udes", "ground_truth_udes", "ground_truth_udes_se", "error_udes",
    "feasible", "fallback",
)

_ORACLE_BATCHES = 10


def format_real(x: float) -> str:
    """17 significant digits: enough for float64 round trips to be exact."""
    return f"{float(x):.17g}"


def _step_row(log: TrialLog, record, dt: float) -> list[str]:
    cov = record.covariance
    reals = {
        "time": record.step * dt,
        "true_x": record.true_state[0],
        "true_y": record.true_state[1],
        "true_theta": record.true_state[2],
        "est_x": record.estimated_mean[0],
        "est_y": record.estimated_mean[1],
        "est_theta": record.estimated_mean[2],
        "cov_xx": cov[0, 0], "cov_xy": cov[0, 1], "cov_xth": cov[0, 2],
        "cov_yy": cov[1, 1], "cov_yth": cov[1, 2], "cov_thth": cov[2, 2],
        "cov_trace": record.cov_trace,
        "cov_max_eig": record.cov_max_eig,
        "meas_y": record.measurement[0],
        "meas_theta": record.measurement[1],
        "u_des_v": record.u_des[0],
        "u_des_omega": record.u_des[1],
        "u_v": record.u[0],
        "u_omega": record.u[1],
        "barrier_true": record.barrier_true,
        "barrier_true_next": record.barrier_true_next,
        "bound": record.bound,
        "empirical_cvar": record.empirical_cvar,
        "band_term": record.band_term,
        "tail_term": record.tail_term,
        "sigma_bar": record.sigma_bar,
        "verification_bound": record.verification_bound,
    }
    ints = {
        "trial": log.trial_index,
        "step": record.step,
        "feasible": int(record.feasible),
        "fallback": int(record.fallback),
        "measurement_seed": record.measurement_seed,
        "optimizer_seed": record.optimizer_seed,
        "verification_seed": record.verification_seed,
        "truth_seed": record.truth_seed,
    }
    row = []
    for name in STEP_COLUMNS:
        if name == "method":
            row.append(log.method.value)
        elif name in ints:
            row.append(str(ints[name]))
        else:
            row.append(format_real(reals[name]))
    return row


def write_steps_csv(path: Path, logs: list[TrialLog], dt: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_COLUMNS)
        for log in logs:
            for record in log.steps:
                writer.writerow(_step_row(log, record, dt))


def write_trials_csv(path: Path, logs: list[TrialLog], dt: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_COLUMNS)
        for log in logs:
            step = log.first_violation_step
            writer.writerow([
                str(log.trial_index),
                log.method.value,
                log.outcome.value,
                str(int(log.violated)),
                str(int(log.center_violated)),
                str(int(log.reached)),
                "" if step is None else str(step),
                "" if step is None else format_real(step * dt),
                str(log.init_seed),
                str(int(log.initially_safe)),
                str(len(log.steps)),
                log.error or "",
            ])


def _parse_step_row(row: dict[str, str]) -> dict:
    out: dict = {}
    for name in STEP_COLUMNS:
        raw = row[name]
        if name == "method":
            out[name] = raw
        elif name in (
            "trial", "step", "feasible", "fallback", "measurement_seed",
            "optimizer_seed", "verification_seed", "truth_seed",
        ):
            out[name] = int(raw)
        else:
            out[name] = float(raw)
    return out


def read_steps_csv(path: Path) -> list[dict]:
    """Parse steps.csv back into typed rows; floats round-trip bit-exactly."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        missing = [c for c in STEP_COLUMNS if c not in names]
        if missing:
            raise MissingColumns(f"steps table lacks columns: {missing}")
        return [_parse_step_row(row) for row in reader]


@dataclass(frozen=True)
class MethodMetrics:
    trials: int
    failures: int
    outcome_counts: dict
    violation_rate: float | None
    center_violation_rate: float | None
    reached_rate: float | None
    mean_first_violation_time: float | None
    mean_control_deviation: float | None
    bound_error: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MetricsSummary:
    trial_count: int
    q0_estimate: float | None
    methods: dict

    def to_dict(self) -> dict:
        return {
            "trial_count": self.trial_count,
            "q0_estimate": self.q0_estimate,
            "methods": {k: v.to_dict() for k, v in self.methods.items()},
        }


def _method_metrics(logs: list[TrialLog], dt: float) -> MethodMetrics:
    counts = {o.value: 0 for o in Outcome}
    for log in logs:
        counts[log.outcome.value] += 1
    if not logs:
        return MethodMetrics(
            trials=0, failures=0, outcome_counts=counts,
            violation_rate=None, center_violation_rate=None,
            reached_rate=None,
            mean_first_violation_time=None, mean_control_deviation=None,
        )
    violation_times = [
        log.first_violation_step * dt
        for log in logs if log.first_violation_step is not None
    ]
    deviations = [
        float(np.linalg.norm(r.u - r.u_des))
        for log in logs for r in log.steps
    ]
    return MethodMetrics(
        trials=len(logs),
        failures=sum(1 for log in logs if log.error is not None),
        outcome_counts=counts,
        violation_rate=sum(log.violated for log in logs) / len(logs),
        center_violation_rate=(
            sum(log.center_violated for log in logs) / len(logs)
        ),
        reached_rate=sum(log.reached for log in logs) / len(logs),
        mean_first_violation_time=(
            float(np.mean(violation_times)) if violation_times else None
        ),
        mean_control_deviation=(
            float(np.mean(deviations)) if deviations else None
        ),
    )


def summarize(
    logs_by_method: dict[Method, list[TrialLog]], config: ExperimentConfig
) -> MetricsSummary:
    first = next(iter(logs_by_method.values()), [])
    q0 = (
        sum(log.initially_safe for log in first) / len(first) if first else None
    )
    return MetricsSummary(
        trial_count=config.trials,
        q0_estimate=q0,
        methods={
            method.value: _method_metrics(logs, config.dt)
            for method, logs in logs_by_method.items()
        },
    )


def _config_to_json(config: ExperimentConfig) -> dict:
    out = {}
    for field in dataclasses.fields(config):
        value = getattr(config, field.name)
        if isinstance(value, np.ndarray):
            out[field.name] = value.tolist()
        elif field.name == "methods":
            out[field.name] = [m.value for m in value]
        else:
            out[field.name] = value
    return out


def _failed_log(
    config: ExperimentConfig, method: Method, master_seed: int,
    trial_index: int, exc: BaseException,
) -> TrialLog:
    return TrialLog(
        trial_index=trial_index,
        method=method,
        init_seed=int(stream_seed(master_seed, trial_index, SEED_PURPOSES["init"], 0)),
        outcome=Outcome.TIMED_OUT,
        violated=False,
        center_violated=False,
        reached=False,
        first_violation_step=None,
        initial_true_state=config.initial_mean,
        initially_safe=False,
        steps=(),
        error=f"{type(exc).__name__}: {exc}",
    )


def run_montecarlo(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> MetricsSummary:
    """Run every (method, trial) pair and write the three artifacts.

    Deterministic given the master seed: trials are keyed by index, and the
    merge sorts by (method order, trial index) before the single-writer
    output phase. Trial-level errors are recorded in the logs and never stop
    the run.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        (method, trial)
        for method in config.methods
        for trial in range(config.trials)
    ]
    results: dict[tuple[Method, int], TrialLog] = {}
    if config.workers > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=config.workers
        ) as pool:
            futures = {
                pool.submit(run_trial, config, m, config.master_seed, t): (m, t)
                for m, t in tasks
            }
            for fut in concurrent.futures.as_completed(futures):
                method, trial = futures[fut]
                try:
                    results[(method, trial)] = fut.result()
                except Exception as exc:
                    results[(method, trial)] = _failed_log(
                        config, method, config.master_seed, trial, exc
                    )
    else:
        for method, trial in tasks:
            try:
                results[(method, trial)] = run_trial(
                    config, method, config.master_seed, trial
                )
            except Exception as exc:
                results[(method, trial)] = _failed_log(
                    config, method, config.master_seed, trial, exc
                )

    logs_by_method = {
        method: [results[(method, t)] for t in range(config.trials)]
        for method in config.methods
    }
    ordered = [log for logs in logs_by_method.values() for log in logs]
    write_trials_csv(out / "trials.csv", ordered, config.dt)
    write_steps_csv(out / "steps.csv", ordered, config.dt)

    summary = summarize(logs_by_method, config)
    first = next(iter(logs_by_method.values()), [])
    payload = {
        "schema": "cvarcbf-summary-v1",
        "config": _config_to_json(config),
        "seed_ledger": {
            "master_seed": config.master_seed,
            "derivation": "stream_seed(master_seed, trial_index, purpose, step)",
            "purposes": dict(SEED_PURPOSES),
            "trial_init_seeds": {
                str(log.trial_index): log.init_seed for log in first
            },
            "per_step_seed_columns": [
                "measurement_seed", "optimizer_seed",
                "verification_seed", "truth_seed",
            ],
        },
        "metrics": summary.to_dict(),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return summary


@dataclass(frozen=True)
class GroundTruthResult:
    value: float
    standard_error: float
    oracle_n: int
    seed: int


def cvar_ground_truth(
    state_belief: GaussianBelief,
    disturbance_belief: GaussianBelief,
    model: ControlAffineModel,
    barrier: BarrierFunction,
    u: np.ndarray,
    gamma: float,
    alpha: float,
    oracle_n: int,
    seed: int = 0,
) -> GroundTruthResult:
    """Monte Carlo CVaR of the one-step barrier increment at a fixed control.

    The standard error comes from batch means: the draw splits into
    _ORACLE_BATCHES equal batches whose per-batch CVaRs estimate the
    sampling spread of the pooled value.
    """
    if oracle_n < 10**5:
        raise InvalidInput(f"oracle_n must be at least 1e5, got {oracle_n}")
    u = np.asarray(u, dtype=float)
    particles = sample_particles(state_belief, disturbance_belief, oracle_n, seed)
    increments = barrier_increments(model, barrier, particles, u, gamma)
    value = empirical_cvar(SampleVector(increments), alpha)
    batch_values = [
        empirical_cvar(SampleVector(chunk), alpha)
        for chunk in np.array_split(increments, _ORACLE_BATCHES)
    ]
    spread = float(np.std(batch_values, ddof=1))
    return GroundTruthResult(
        value=float(value),
        standard_error=spread / math.sqrt(_ORACLE_BATCHES),
        oracle_n=oracle_n,
        seed=seed,
    )


def _error_stats(errors: list[float]) -> dict | None:
    if not errors:
        return None
    arr = np.asarray(errors)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": int(arr.size),
    }


def cvar_error_report(
    steps_csv: str | Path,
    config: ExperimentConfig,
    output_path: str | Path | None = None,
    oracle_n: int | None = None,
    seed: int = 0,
) -> tuple[list[dict], dict]:
    """Per-step certified-bound error against the ground-truth oracle.

    For every probabilistic-method step the primary error compares the
    logged bound with the oracle CVaR at the executed control; the secondary
    columns redo both at the desired control, regenerating the original
    particle draw from the logged optimizer seed to recompute the bound.
    Emits cvar_error.csv next to the input unless output_path is given.
    """
    steps_csv = Path(steps_csv)
    oracle_n = config.oracle_n if oracle_n is None else oracle_n
    rows = read_steps_csv(steps_csv)
    bundle = unicycle_model(
        config.unicycle(), decay=config.gamma, scale=config.subgaussian_scale
    )
    risk = config.risk()
    box = config.control_box()
    disturbance_belief = GaussianBelief(
        mean=np.zeros(3), covariance=config.process_cov
    )
    method_tags = {Method.DKW.value: 0, Method.SUBGAUSSIAN.value: 1}

    out_rows: list[dict] = []
    for row in rows:
        tag = method_tags.get(row["method"])
        if tag is None:
            continue
        mean = np.array([row["est_x"], row["est_y"], row["est_theta"]])
        cov = np.array([
            [row["cov_xx"], row["cov_xy"], row["cov_xth"]],
            [row["cov_xy"], row["cov_yy"], row["cov_yth"]],
            [row["cov_xth"], row["cov_yth"], row["cov_thth"]],
        ])
        point_belief = bundle.transform_belief(GaussianBelief(mean, cov))
        u = np.array([row["u_v"], row["u_omega"]])
        u_des = np.array([row["u_des_v"], row["u_des_omega"]])

        truth = cvar_ground_truth(
            point_belief, disturbance_belief, bundle.point_model,
            bundle.point_barrier, u, config.gamma, config.alpha, oracle_n,
            seed=stream_seed(seed, row["trial"], row["step"], 2 * tag),
        )
        truth_udes = cvar_ground_truth(
            point_belief, disturbance_belief, bundle.point_model,
            bundle.point_barrier, u_des, config.gamma, config.alpha, oracle_n,
            seed=stream_seed(seed, row["trial"], row["step"], 2 * tag + 1),
        )
        particles = sample_particles(
            point_belief, disturbance_belief, config.n, row["optimizer_seed"]
        )
        increments = affine_increment_coefficients(
            bundle.point_model, bundle.point_barrier, particles,
            decay=config.gamma,
        )
        udes_values = SampleVector(increments.evaluate(u_des))
        if row["method"] == Method.SUBGAUSSIAN.value:
            bound_udes = certified_cvar_bound(
                udes_values, risk, row["sigma_bar"]
            ).bound
        else:
            support = default_support_max(
                SampleVector(increments.evaluate(box.clip(u_des)))
            )
            bound_udes = dkw_truncation_bound(
                udes_values, config.alpha, config.delta, support
            )
        out_rows.append({
            "trial": row["trial"],
            "method": row["method"],
            "step": row["step"],
            "time": row["time"],
            "bound": row["bound"],
            "ground_truth": truth.value,
            "ground_truth_se": truth.standard_error,
            "error": row["bound"] - truth.value,
            "bound_udes": float(bound_udes),
            "ground_truth_udes": truth_udes.value,
            "ground_truth_udes_se": truth_udes.standard_error,
            "error_udes": float(bound_udes) - truth_udes.value,
            "feasible": row["feasible"],
            "fallback": row["fallback"],
        })

    output = Path(
        output_path if output_path is not None
        else steps_csv.parent / "cvar_error.csv"
    )
    with open(output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ERROR_COLUMNS)
        for row in out_rows:
            writer.writerow([
                str(row[c]) if c in ("trial", "method", "step", "feasible", "fallback")
                else format_real(row[c])
                for c in ERROR_COLUMNS
            ])

    stats = {
        "oracle_n": oracle_n,
        "oracle_seed": seed,
        "methods": {
            name: {
                "error": _error_stats(
                    [r["error"] for r in out_rows if r["method"] == name]
                ),
                "error_udes": _error_stats(
                    [r["error_udes"] for r in out_rows if r["method"] == name]
                ),
            }
            for name in method_tags
            if any(r["method"] == name for r in out_rows)
        },
    }
    return out_rows, stats


_METHOD_CHOICES = ("det", "dkw", "subgauss", "all")


def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Build the experiment config from an optional YAML file plus overrides.

    The file holds field names of ExperimentConfig as keys; one level of
    nesting is allowed for grouping and is flattened. Unknown keys are
    config errors.
    """
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping at top level")
        flat: dict = {}
        for key, value in loaded.items():
            if isinstance(value, dict) and key not in known:
                for sub, subvalue in value.items():
                    if sub in flat:
                        raise ConfigError(f"duplicate config key: {sub}")
                    flat[sub] = subvalue
            else:
                if key in flat:
                    raise ConfigError(f"duplicate config key: {key}")
                flat[key] = value
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs.update(flat)
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**kwargs)
    except CvarCbfError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _methods_from_flag(flag: str) -> tuple[Method, ...]:
    if flag == "all":
        return (Method.DETERMINISTIC, Method.DKW, Method.SUBGAUSSIAN)
    return (Method(flag),)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict = {
        "trials": getattr(args, "trials", None),
        "master_seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
    }
    method = getattr(args, "method", None)
    if method is not None:
        overrides["methods"] = _methods_from_flag(method)
    return load_config(args.config, overrides)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if len(config.methods) != 1:
        raise ConfigError("simulate runs one method; pass --method det|dkw|subgauss")
    method = config.methods[0]
    log = run_trial(config, method, config.master_seed, args.trial_index)
    for r in log.steps:
        bound = "" if math.isnan(r.bound) else f" bound={r.bound:+.4f}"
        print(
            f"step {r.step:02d} t={r.step * config.dt:5.1f}s"
            f" u=[{r.u[0]:+.3f},{r.u[1]:+.3f}]"
            f" h={r.barrier_true:+.4f}{bound}"
            f" feasible={int(r.feasible)} fallback={int(r.fallback)}"
        )
    print(json.dumps({
        "trial": log.trial_index,
        "method": log.method.value,
        "outcome": log.outcome.value,
        "violated": log.violated,
        "reached": log.reached,
        "first_violation_step": log.first_violation_step,
        "steps": len(log.steps),
        "init_seed": log.init_seed,
        "error": log.error,
    }, indent=2))
    return 3 if log.error is not None else 0


def cmd_montecarlo(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    summary = run_montecarlo(config)
    print(json.dumps(summary.to_dict(), indent=2))
    failures = sum(m.failures for m in summary.methods.values())
    return 3 if failures else 0


def cmd_cvar_bound(args: argparse.Namespace) -> int:
    try:
        values = np.loadtxt(args.samples, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read samples file {args.samples}: {exc}") from exc
    samples = SampleVector(values)
    if args.method == "subgauss":
        cfg = RiskConfig(alpha=args.alpha, delta=args.delta, n=samples.n)
        cert = certified_cvar_bound(samples, cfg, args.sigma_bar)
        payload = {
            "method": "subgauss",
            "bound": cert.bound,
            "empirical_cvar": cert.empirical_cvar,
            "band_term": cert.band_term,
            "tail_term": cert.tail_term,
            "alpha": cert.alpha,
            "delta": cert.delta,
            "n": cert.n,
            "sigma_bar": args.sigma_bar,
        }
    else:
        support = args.support
        bound = dkw_truncation_bound(samples, args.alpha, args.delta, support)
        payload = {
            "method": "dkw",
            "bound": bound,
            "empirical_cvar": empirical_cvar(samples, args.alpha),
            "support_max": (
                default_support_max(samples) if support is None else support
            ),
            "alpha": args.alpha,
            "delta": args.delta,
            "n": samples.n,
        }
    print(json.dumps(payload, indent=2))
    return 0


def cmd_ground_truth(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    try:
        u = np.array([float(part) for part in args.u.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--u must be 'v,omega', got {args.u!r}") from exc
    if u.shape != (2,):
        raise ConfigError(f"--u must have two components, got {args.u!r}")
    bundle = unicycle_model(
        config.unicycle(), decay=config.gamma, scale=config.subgaussian_scale
    )
    belief = bundle.transform_belief(
        GaussianBelief(config.initial_mean, config.initial_cov)
    )
    result = cvar_ground_truth(
        belief,
        GaussianBelief(np.zeros(3), config.process_cov),
        bundle.point_model,
        bundle.point_barrier,
        u,
        config.gamma,
        config.alpha,
        args.oracle_n if args.oracle_n is not None else config.oracle_n,
        seed=config.master_seed,
    )
    print(json.dumps(dataclasses.asdict(result), indent=2))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out = Path(config.output_dir)
    steps_csv = Path(args.steps) if args.steps else out / "steps.csv"
    if not steps_csv.exists():
        raise ConfigError(f"steps table not found: {steps_csv}")
    _, stats = cvar_error_report(
        steps_csv, config,
        output_path=out / "cvar_error.csv",
        oracle_n=args.oracle_n,
        seed=config.master_seed,
    )
    with open(out / "error_summary.json", "w") as fh:
        json.dump(stats, fh, indent=2, allow_nan=False)
        fh.write("\n")
    print(json.dumps(stats, indent=2))
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--method", choices=_METHOD_CHOICES, default=None)
    parser.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvarcbf",
        description="Risk-certified barrier filtering experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trial with a verbose log")
    _add_common_flags(p)
    p.add_argument("--trial-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="run the full study")
    _add_common_flags(p)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("cvar-bound", help="certificate from a sample file")
    p.add_argument("samples", help="text file, one sample per line")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--method", choices=("subgauss", "dkw"), default="subgauss")
    p.add_argument("--sigma-bar", type=float, default=0.0)
    p.add_argument("--support", type=float, default=None)
    p.set_defaults(func=cmd_cvar_bound)

    p = sub.add_parser("ground-truth", help="oracle CVaR at a fixed control")
    _add_common_flags(p)
    p.add_argument("--u", default="0.0,0.0", help="control 'v,omega'")
    p.add_argument("--oracle-n", type=int, default=None)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("report", help="bound error tables from steps.csv")
    _add_common_flags(p)
    p.add_argument("--steps", default=None, help="steps.csv path override")
    p.add_argument("--oracle-n", type=int, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CvarCbfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
