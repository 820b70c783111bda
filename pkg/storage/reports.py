"""
Report writers: run CSV/JSON, grid-search tables and SVG charts.

SVG output is byte-stable for identical inputs: text stays text, the id salt
is fixed and no date metadata is written.
"""

import csv
import io
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from core.errors import DataError  # noqa: E402
from core.models import CSV_HEADER, TARGETS, ReportRow  # noqa: E402
from utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

SVG_RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "gsmo",
    "font.size": 9,
}

GRID_HEADER = ("rank", "b1", "b2", "d1", "d2", "seed", "epochs", "val_both_f1")
HEATMAP_HEADER = ("slice", "row_axis", "row_value", "col_axis", "col_value", "val_both_f1")

# (slice name, row axis, column axis); cells take the best F1 over the other two axes
HEATMAP_SLICES = (
    ("stage2", "beta2", "delta2"),
    ("stage1", "beta1", "delta1"),
)


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc}") from exc
    return path


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_report_csv(rows: Sequence[ReportRow], path: Union[str, Path]) -> Path:
    """Run rows with the fixed header; aggregate rows use run ids '<approach>-mean' / '-std'."""
    return _write_text(path, _csv_text(CSV_HEADER, [row.csv_row() for row in rows]))


def write_json(payload: Dict, path: Union[str, Path]) -> Path:
    return _write_text(path, json.dumps(payload, indent=2, sort_keys=False) + "\n")


def report_payload(rows: Sequence[ReportRow], **extra) -> Dict:
    payload = {"averaging": "macro", "zero_division": 0.0, "rows": [row.to_dict() for row in rows]}
    payload.update(extra)
    return payload


def _fmt(value: float) -> str:
    return repr(round(float(value), 6))


def write_grid_csv(rows, path: Union[str, Path]) -> Path:
    """Ranked grid-search table (rows are GridRow, best first)."""
    table = [
        (row.rank, *(repr(float(w)) for w in row.weights.as_tuple()), row.seed, row.epochs, _fmt(row.val_f1))
        for row in rows
    ]
    return _write_text(path, _csv_text(GRID_HEADER, table))


def heatmap_cells(rows) -> Dict[str, Tuple[List[float], List[float], Dict[Tuple[float, float], float]]]:
    """Per slice: row values, column values and best val F1 per (row, column) cell."""
    slices = {}
    for name, row_axis, col_axis in HEATMAP_SLICES:
        cells: Dict[Tuple[float, float], float] = {}
        for row in rows:
            key = (getattr(row.weights, row_axis), getattr(row.weights, col_axis))
            cells[key] = max(cells.get(key, float("-inf")), row.val_f1)
        row_values = sorted({k[0] for k in cells})
        col_values = sorted({k[1] for k in cells})
        slices[name] = (row_values, col_values, cells)
    return slices


def write_heatmap_csv(rows, path: Union[str, Path]) -> Path:
    table = []
    for (name, row_axis, col_axis), (row_values, col_values, cells) in zip(HEATMAP_SLICES, heatmap_cells(rows).values()):
        for r in row_values:
            for c in col_values:
                if (r, c) in cells:
                    table.append((name, row_axis, repr(r), col_axis, repr(c), _fmt(cells[(r, c)])))
    return _write_text(path, _csv_text(HEATMAP_HEADER, table))


def _save_svg(fig, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def write_heatmap_svg(rows, path: Union[str, Path]) -> Path:
    """One panel per weight slice; cell i, j of slice s carries gid 'cell-<s>-<i>-<j>'."""
    slices = heatmap_cells(rows)
    with plt.rc_context(SVG_RC):
        fig, axes = plt.subplots(1, len(HEATMAP_SLICES), figsize=(5 * len(HEATMAP_SLICES), 4.2))
        cmap = plt.get_cmap("viridis")
        for ax, (name, row_axis, col_axis) in zip(axes, HEATMAP_SLICES):
            row_values, col_values, cells = slices[name]
            for i, r in enumerate(row_values):
                for j, c in enumerate(col_values):
                    if (r, c) not in cells:
                        continue
                    value = cells[(r, c)]
                    patch = Rectangle((j, i), 1, 1, facecolor=cmap(value), edgecolor="white")
                    patch.set_gid(f"cell-{name}-{i}-{j}")
                    ax.add_patch(patch)
                    ax.text(j + 0.5, i + 0.5, f"{value:.3f}", ha="center", va="center",
                            color="white" if value < 0.6 else "black")
            ax.set_xlim(0, len(col_values))
            ax.set_ylim(0, len(row_values))
            ax.set_xticks([j + 0.5 for j in range(len(col_values))], [f"{c:g}" for c in col_values])
            ax.set_yticks([i + 0.5 for i in range(len(row_values))], [f"{r:g}" for r in row_values])
            ax.set_xlabel(f"{col_axis} (disease)")
            ax.set_ylabel(f"{row_axis} (plant)")
            ax.set_title(f"{name}: best val both-F1")
        fig.tight_layout()
        return _save_svg(fig, Path(path))


def write_compare_svg(rows: Sequence[ReportRow], path: Union[str, Path], metric: str = "f1") -> Path:
    """Grouped bars: one group per target, one bar per approach (gid 'bar-<approach>-<target>').

    rows are the per-approach mean rows; error bars come from the matching std rows.
    """
    means = [row for row in rows if row.statistic == "mean"]
    stds = {row.approach: row for row in rows if row.statistic == "std"}
    width = 0.8 / max(len(means), 1)

    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(8, 4.2))
        for k, row in enumerate(means):
            for t, target in enumerate(TARGETS):
                value = row.metric(target, metric)
                if value is None:
                    continue
                spread: Optional[float] = stds[row.approach].metric(target, metric) if row.approach in stds else None
                bars = ax.bar(
                    t + (k - (len(means) - 1) / 2) * width, value, width,
                    yerr=spread, capsize=2, color=plt.get_cmap("tab10")(k),
                    label=row.approach if t == 0 else None,
                )
                bars[0].set_gid(f"bar-{row.approach}-{target}")
        ax.set_xticks(range(len(TARGETS)), list(TARGETS))
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(f"test macro-{metric}" if metric != "acc" else "test accuracy")
        ax.legend(loc="lower right", fontsize=7)
        fig.tight_layout()
        return _save_svg(fig, Path(path))
