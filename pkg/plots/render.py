"""Render study figures from the simulation CSV outputs.

Reads the documented trials/steps/error tables and draws two figures:
per-method trajectory overlays, and time-resolved metric curves
(barrier value, certified-bound error). Every number shown originates
in the CSVs; this module only aggregates (means, quantiles) and draws.

Run as a script:

    python3 plots/render.py --spec spec.json

The spec file is a JSON object holding PlotSpec fields. Relative paths
inside it resolve against the spec file's directory.
"""

from __future__ import annotations

import argparse
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# Fixed salt keeps SVG element ids stable across renders.
plt.rcParams["svg.hashsalt"] = "cvarcbf-plots"

_METHOD_COLORS = {
    "det": "tab:orange",
    "dkw": "tab:red",
    "subgauss": "tab:blue",
}


class MissingColumns(ValueError):
    """An input CSV lacks columns this renderer needs."""


@dataclass(frozen=True)
class PlotSpec:
    """Inputs, outputs, and sampling knobs for the two figures.

    The goal marker position is a config value of the simulation, not a
    CSV column, so it rides along here with the harness default.
    """

    trials_csv: Path
    steps_csv: Path
    cvar_error_csv: Path | None = None
    trajectory_count: int = 10
    seed: int = 0
    trajectories_out: Path = Path("trajectories.png")
    metrics_out: Path = Path("metrics.png")
    goal: tuple[float, float] = (0.0, -0.05)

    def __post_init__(self) -> None:
        if self.trajectory_count < 0:
            raise ValueError("trajectory_count must be nonnegative")
        if len(self.goal) != 2:
            raise ValueError("goal must be an (x, y) pair")


_SPEC_KEYS = (
    "trials_csv", "steps_csv", "cvar_error_csv",
    "trajectory_count", "seed", "trajectories_out", "metrics_out",
    "goal",
)
_PATH_KEYS = (
    "trials_csv", "steps_csv", "cvar_error_csv",
    "trajectories_out", "metrics_out",
)


def load_spec(path: str | Path) -> PlotSpec:
    """Parse a JSON plot spec file into a PlotSpec."""
    path = Path(path)
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict):
        raise ValueError("plot spec must be a JSON object")
    unknown = sorted(set(raw) - set(_SPEC_KEYS))
    if unknown:
        raise ValueError(f"unknown plot spec keys: {unknown}")
    for key in ("trials_csv", "steps_csv"):
        if key not in raw:
            raise ValueError(f"plot spec needs {key}")

    kwargs: dict = {}
    for key in _SPEC_KEYS:
        if key not in raw or raw[key] is None:
            continue
        value = raw[key]
        if key in _PATH_KEYS:
            p = Path(value)
            # Relative paths are relative to the spec file, so a spec
            # can travel with its run directory.
            kwargs[key] = p if p.is_absolute() else path.parent / p
        elif key == "goal":
            kwargs[key] = (float(value[0]), float(value[1]))
        elif key in ("trajectory_count", "seed"):
            kwargs[key] = int(value)
    return PlotSpec(**kwargs)


def _read_rows(path: Path, required: tuple[str, ...]) -> list[dict]:
    """Load a CSV as dicts, checking the columns this plot reads."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        missing = [c for c in required if c not in names]
        if missing:
            raise MissingColumns(
                f"{path}: missing columns {', '.join(missing)}"
            )
        return list(reader)


def _select_trials(
    trial_rows: list[dict], count: int, seed: int
) -> dict[str, set[int]]:
    """Pick up to `count` trial ids per method, reproducibly.

    Methods are visited in sorted order and ids are deduplicated and
    sorted before sampling, so the choice depends only on the id sets
    and the seed, not on row order.
    """
    by_method: dict[str, set[int]] = {}
    for row in trial_rows:
        by_method.setdefault(row["method"], set()).add(int(row["trial"]))
    rng = np.random.default_rng(seed)
    chosen: dict[str, set[int]] = {}
    for method in sorted(by_method):
        ids = np.array(sorted(by_method[method]))
        take = min(count, ids.size)
        pick = rng.choice(ids, size=take, replace=False)
        chosen[method] = {int(t) for t in pick}
    return chosen


def _paths_by_trial(
    step_rows: list[dict], method: str, wanted: set[int]
) -> list[np.ndarray]:
    """Ordered (x, y) arrays for each wanted trial of one method."""
    grouped: dict[int, list[tuple[int, float, float]]] = {}
    for row in step_rows:
        if row["method"] != method:
            continue
        trial = int(row["trial"])
        if trial not in wanted:
            continue
        grouped.setdefault(trial, []).append(
            (int(row["step"]), float(row["true_x"]), float(row["true_y"]))
        )
    paths = []
    for trial in sorted(grouped):
        pts = sorted(grouped[trial])
        paths.append(np.array([(x, y) for _, x, y in pts]))
    return paths


def _time_curves(
    rows: list[dict], key: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-step aggregates of one column: time, mean, and quartiles."""
    by_step: dict[int, list[float]] = {}
    time_by_step: dict[int, list[float]] = {}
    for row in rows:
        step = int(row["step"])
        by_step.setdefault(step, []).append(float(row[key]))
        time_by_step.setdefault(step, []).append(float(row["time"]))
    steps = sorted(by_step)
    time = np.array([np.mean(time_by_step[s]) for s in steps])
    mean = np.empty(len(steps))
    q25 = np.empty(len(steps))
    q75 = np.empty(len(steps))
    for i, s in enumerate(steps):
        values = np.asarray(by_step[s])
        mean[i] = values.mean()
        q25[i] = np.quantile(values, 0.25)
        q75[i] = np.quantile(values, 0.75)
    return time, mean, q25, q75


def _color(method: str) -> str:
    return _METHOD_COLORS.get(method, "tab:gray")


def _decorate_panel(ax, goal: tuple[float, float]) -> None:
    # Every panel shares the same scene furniture.
    ax.axhline(
        0.0, color="red", linestyle=":", linewidth=1.2, label="boundary"
    )
    ax.plot(
        goal[0], goal[1], marker="*", markersize=12,
        color="goldenrod", linestyle="none", label="goal", zorder=5,
    )
    ax.set_xlabel("x [m]")
    ax.grid(True, alpha=0.3)


def _trajectory_figure(spec: PlotSpec):
    trial_rows = _read_rows(spec.trials_csv, ("trial", "method"))
    step_rows = _read_rows(
        spec.steps_csv, ("trial", "method", "step", "true_x", "true_y")
    )
    chosen = _select_trials(trial_rows, spec.trajectory_count, spec.seed)
    methods = sorted(chosen)

    n_panels = max(1, len(methods))
    fig, axes = plt.subplots(
        1, n_panels, figsize=(3.6 * n_panels, 4.0),
        sharex=True, sharey=True, squeeze=False,
    )
    row = axes[0]
    if not methods:
        _decorate_panel(row[0], spec.goal)
        row[0].set_title("no trials")
        row[0].set_ylabel("y [m]")
        fig.tight_layout()
        return fig

    for index, (ax, method) in enumerate(zip(row, methods)):
        _decorate_panel(ax, spec.goal)
        for path in _paths_by_trial(step_rows, method, chosen[method]):
            ax.plot(
                path[:, 0], path[:, 1],
                color=_color(method), alpha=0.7, linewidth=1.0,
            )
            ax.plot(
                path[0, 0], path[0, 1], marker="o", markersize=5,
                color="green", linestyle="none", zorder=4,
            )
        ax.set_title(method)
        if index == 0:
            ax.set_ylabel("y [m]")
            handles, labels = ax.get_legend_handles_labels()
            ax.legend(handles, labels, loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def _metrics_figure(spec: PlotSpec):
    if spec.cvar_error_csv is None:
        raise ValueError("plot_metrics needs cvar_error_csv in the spec")
    step_rows = _read_rows(
        spec.steps_csv, ("method", "step", "time", "barrier_true")
    )
    error_rows = _read_rows(
        spec.cvar_error_csv, ("method", "step", "time", "error")
    )

    fig, (ax_h, ax_e) = plt.subplots(1, 2, figsize=(9.0, 4.0))

    ax_h.axhline(0.0, color="black", linestyle="--", linewidth=1.0)
    for method in sorted({r["method"] for r in step_rows}):
        rows = [r for r in step_rows if r["method"] == method]
        time, mean, _, _ = _time_curves(rows, "barrier_true")
        ax_h.plot(time, mean, color=_color(method), label=method)
    ax_h.set_xlabel("time [s]")
    ax_h.set_ylabel("mean barrier value")
    ax_h.grid(True, alpha=0.3)
    if ax_h.get_legend_handles_labels()[0]:
        ax_h.legend(fontsize=8)

    for method in sorted({r["method"] for r in error_rows}):
        rows = [r for r in error_rows if r["method"] == method]
        time, mean, q25, q75 = _time_curves(rows, "error")
        ax_e.plot(time, mean, color=_color(method), label=method)
        ax_e.fill_between(time, q25, q75, color=_color(method), alpha=0.2)
    ax_e.set_xlabel("time [s]")
    ax_e.set_ylabel("bound minus oracle")
    ax_e.grid(True, alpha=0.3)
    if ax_e.get_legend_handles_labels()[0]:
        ax_e.legend(fontsize=8)

    fig.tight_layout()
    return fig


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kwargs: dict = {"dpi": 150}
    if path.suffix == ".svg":
        # The default SVG metadata stamps the render date, which would
        # break byte-identical re-rendering.
        kwargs["metadata"] = {"Date": None}
    fig.savefig(path, **kwargs)
    plt.close(fig)
    return path


def plot_trajectories(spec: PlotSpec) -> Path:
    """Draw sampled per-method center paths; return the image path."""
    return _save(_trajectory_figure(spec), spec.trajectories_out)


def plot_metrics(spec: PlotSpec) -> Path:
    """Draw barrier and bound-error curves; return the image path."""
    return _save(_metrics_figure(spec), spec.metrics_out)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="Render study figures from simulation CSV tables."
    )
    parser.add_argument(
        "--spec", required=True, help="JSON file of PlotSpec fields"
    )
    args = parser.parse_args(argv)
    spec = load_spec(args.spec)
    print(f"wrote {plot_trajectories(spec)}")
    if spec.cvar_error_csv is not None:
        print(f"wrote {plot_metrics(spec)}")
    else:
        print("no cvar_error_csv in spec, skipping the metrics figure")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
