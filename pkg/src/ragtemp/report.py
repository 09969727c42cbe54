"""Byte-stable CSV tables and SVG figures.

Figures are drawn with matplotlib's object API (no pyplot state) and saved
as SVG with a fixed hash salt, text kept as text, and no date metadata, so
identical inputs give identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingSeries
from .metrics import ScoreRecord
from .perturb import PerturbationKind
from .stats import ConditionStats, RunStats, baseline_cv

SCORES_HEADER = ("sample_id", "model", "temperature", "perturbation", "question_type",
                 "fact_count", "run_index", "metric", "value", "cached")
RUN_STATS_HEADER = ("metric", "model", "temperature", "perturbation", "question_type",
                    "sample_id", "n_runs", "mean", "std", "cv")
CONDITION_STATS_HEADER = ("metric", "model", "temperature", "perturbation", "question_type",
                          "n_samples", "mean_of_means", "mean_of_stds", "mean_cv", "condition_cv")

_SVG_RC = {"svg.hashsalt": "ragtemp", "svg.fonttype": "none", "path.simplify": False}
_SERIES_ORDER = [k.value for k in PerturbationKind]


def _num(x: float) -> str:
    return f"{x:.6f}"


def _temp(t: float) -> str:
    return repr(float(t))


def _write_csv(path, header, rows) -> int:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))
    return len(rows)


def score_sort_key(r: ScoreRecord):
    return (r.model, r.temperature, r.perturbation, r.question_type, r.sample_id, r.run_index, r.metric)


def emit_scores_csv(records: Iterable[ScoreRecord], path) -> int:
    rows = [
        (r.sample_id, r.model, _temp(r.temperature), r.perturbation, r.question_type,
         r.fact_count, r.run_index, r.metric, _num(r.value), int(r.cached))
        for r in sorted(records, key=score_sort_key)
    ]
    return _write_csv(path, SCORES_HEADER, rows)


def emit_run_stats_csv(stats_by_metric: Mapping[str, Sequence[RunStats]], path) -> int:
    rows = []
    for metric in sorted(stats_by_metric):
        for s in sorted(stats_by_metric[metric], key=lambda s: (s.key, s.sample_id)):
            k = s.key
            rows.append((metric, k.model, _temp(k.temperature), k.perturbation, k.question_type,
                         s.sample_id, s.n_runs, _num(s.mean), _num(s.std), _num(s.cv)))
    return _write_csv(path, RUN_STATS_HEADER, rows)


def emit_condition_stats_csv(stats_by_metric: Mapping[str, Sequence[ConditionStats]], path) -> int:
    rows = []
    for metric in sorted(stats_by_metric):
        for c in sorted(stats_by_metric[metric], key=lambda c: c.key):
            k = c.key
            rows.append((metric, k.model, _temp(k.temperature), k.perturbation, k.question_type,
                         c.n_samples, _num(c.mean_of_means), _num(c.mean_of_stds),
                         _num(c.mean_cv), _num(c.condition_cv)))
    return _write_csv(path, CONDITION_STATS_HEADER, rows)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_artifact_manifest(paths: Iterable, out_path, root=None) -> dict[str, str]:
    """JSON map of artifact path (relative to ``root``) -> sha256 of its bytes."""
    root = Path(root) if root is not None else Path(out_path).parent
    table = {str(Path(p).resolve().relative_to(root.resolve())): file_digest(p) for p in paths}
    table = dict(sorted(table.items()))
    Path(out_path).write_text(json.dumps(table, indent=1) + "\n", encoding="utf-8")
    return table


# --------------------------------------------------------------------------- figures


@dataclass(frozen=True)
class FigureSpec:
    kind: str  # temperature_trend | cv_trend | score_boxplot
    output: Path
    question_type: str | None = None
    series: tuple[str, ...] = ()
    temperatures: tuple[float, ...] = ()
    metric_label: str = "BERTScore F1"
    allow_gaps: bool = False
    models: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("temperature_trend", "cv_trend", "score_boxplot"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if self.kind == "score_boxplot" and not self.temperatures:
            raise ValueError("score_boxplot needs explicit temperatures")
        object.__setattr__(self, "output", Path(self.output))
        object.__setattr__(self, "series", tuple(PerturbationKind(s).value for s in self.series))


def box_stats(values: Sequence[float], whis: float = 1.5) -> dict:
    """Quartiles by linear interpolation between order statistics; Tukey whiskers."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise ValueError("no values")
    q1, med, q3 = np.percentile(x, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo_lim, hi_lim = q1 - whis * iqr, q3 + whis * iqr
    inside = x[(x >= lo_lim) & (x <= hi_lim)]
    return {
        "med": float(med), "q1": float(q1), "q3": float(q3),
        "whislo": float(inside.min()), "whishi": float(inside.max()),
        "fliers": x[(x < lo_lim) | (x > hi_lim)].tolist(),
        "mean": float(x.mean()),
    }


def _order(series: Iterable[str]) -> list[str]:
    return sorted(set(series), key=lambda s: _SERIES_ORDER.index(s))


def trend_series(stats: Sequence[ConditionStats], model: str, question_type: str | None,
                 value: str = "mean_of_means") -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """perturbation -> (temperatures, values, stds) sorted by temperature."""
    out = {}
    rows = [c for c in stats if c.key.model == model
            and (question_type is None or c.key.question_type == question_type)]
    for pert in _order(c.key.perturbation for c in rows):
        pts = sorted((c.key.temperature, getattr(c, value), c.mean_of_stds)
                     for c in rows if c.key.perturbation == pert)
        temps = [p[0] for p in pts]
        if len(set(temps)) != len(temps):
            raise ValueError(f"{model}/{pert}: several entries per temperature; filter by question type")
        arr = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        out[pert] = (arr[:, 0], arr[:, 1], arr[:, 2])
    return out


def _check_coverage(panels: Mapping[str, Mapping], spec: FigureSpec) -> None:
    if spec.allow_gaps:
        return
    grid = sorted({float(x) for series in panels.values() for t, _, _ in series.values() for x in t})
    wanted = spec.series or _order(p for series in panels.values() for p in series)
    for model, series in panels.items():
        for pert in wanted:
            if pert not in series or sorted(series[pert][0].tolist()) != grid:
                raise MissingSeries(f"{model}: series {pert} does not cover temperatures {grid}")


def _new_figure(n_rows, n_cols, width=3.6, height=3.0):
    from matplotlib.figure import Figure

    fig = Figure(figsize=(width * n_cols, height * n_rows))
    axes = fig.subplots(n_rows, n_cols, squeeze=False)
    return fig, axes


def _save(fig, path: Path) -> Path:
    import matplotlib

    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _models(spec, items) -> list[str]:
    return list(spec.models) or sorted({c.key.model for c in items})


def render_figure(spec: FigureSpec, condition_stats: Sequence[ConditionStats] = (),
                  run_stats: Sequence[RunStats] = ()) -> Path:
    """Draw ``spec`` and return the written SVG path.

    ``temperature_trend`` and ``cv_trend`` read condition stats;
    ``score_boxplot`` reads the per-sample means in ``run_stats``.
    """
    if spec.kind == "score_boxplot":
        return _render_boxplot(spec, run_stats)
    if not condition_stats:
        raise MissingSeries("no condition stats to plot")
    cv = spec.kind == "cv_trend"
    models = _models(spec, condition_stats)
    panels = {m: trend_series(condition_stats, m, spec.question_type,
                              "mean_cv" if cv else "mean_of_means") for m in models}
    _check_coverage(panels, spec)

    fig, axes = _new_figure(1, len(models))
    for ax, model in zip(axes[0], models):
        for i, (pert, (t, y, sd)) in enumerate(panels[model].items()):
            if spec.series and pert not in spec.series:
                continue
            color = f"C{_SERIES_ORDER.index(pert) % 10}"
            (line,) = ax.plot(t, y, "-o", color=color, lw=1.5, ms=3, label=pert)
            line.set_gid(f"series-{model}-{pert}")
            if not cv:
                band = ax.fill_between(t, y - sd, y + sd, color=color, alpha=0.2, lw=0)
                band.set_gid(f"band-{model}-{pert}")
        if cv:
            base = [c for c in condition_stats
                    if c.key.model == model and c.key.perturbation == PerturbationKind.Original.value
                    and (spec.question_type is None or c.key.question_type == spec.question_type)]
            if base:
                value = baseline_cv(base) if spec.question_type else float(np.mean([c.mean_cv for c in base]))
                ax.axhline(value, color="gray", ls=":", lw=1.2).set_gid(f"baseline-{model}")
                ax.text(0.03, 0.95, f"baseline CV: {value:.3f}", transform=ax.transAxes,
                        va="top", ha="left", fontsize=8, color="dimgray")
        ax.set_title(model, fontsize=9)
        ax.set_xlabel("temperature")
        ax.set_ylabel(f"CV of {spec.metric_label}" if cv else spec.metric_label)
        ax.grid(alpha=0.3)
    axes[0][-1].legend(fontsize=7, loc="lower left")
    if spec.question_type:
        fig.suptitle(f"{spec.question_type} questions", fontsize=10)
    fig.tight_layout()
    return _save(fig, spec.output)


def _render_boxplot(spec: FigureSpec, run_stats: Sequence[RunStats]) -> Path:
    rows = [s for s in run_stats
            if spec.question_type is None or s.key.question_type == spec.question_type]
    if not rows:
        raise MissingSeries("no per-sample scores to plot")
    models = _models(spec, rows)
    fig, axes = _new_figure(len(models), len(spec.temperatures), width=4.2)
    for r, model in enumerate(models):
        for c, temp in enumerate(spec.temperatures):
            ax = axes[r][c]
            cell = [s for s in rows if s.key.model == model and np.isclose(s.key.temperature, temp)]
            perts = list(spec.series) or _order(s.key.perturbation for s in cell)
            stats, labels = [], []
            for pert in perts:
                values = [s.mean for s in cell if s.key.perturbation == pert]
                if not values:
                    if spec.allow_gaps:
                        continue
                    raise MissingSeries(f"{model} T={temp}: no scores for {pert}")
                b = box_stats(values)
                b["label"] = pert
                stats.append(b)
                labels.append(pert)
            if not stats:
                continue
            parts = ax.bxp(stats, showfliers=True, flierprops={"markerfacecolor": "white"})
            for pert, med in zip(labels, parts["medians"]):
                med.set_gid(f"median-{model}-{temp!r}-{pert}")
            for i, pert in enumerate(labels, start=1):
                values = [s.mean for s in cell if s.key.perturbation == pert]
                jitter = np.linspace(-0.12, 0.12, len(values)) if len(values) > 1 else [0.0]
                ax.plot(i + np.asarray(jitter), values, "k.", ms=2, alpha=0.6)
            ax.set_title(f"{model}, T={temp:g}", fontsize=9)
            ax.set_ylabel(spec.metric_label)
            ax.tick_params(axis="x", labelrotation=30, labelsize=7)
    fig.tight_layout()
    return _save(fig, spec.output)
