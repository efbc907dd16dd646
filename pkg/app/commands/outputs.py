import csv
import logging
import statistics
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.schemas import ExperimentReport, SplitDataset
from app.service.dataset import audit_unlabeled_truth
from app.service.semisup import PipelineResult
from app.service.svm import decision_surface

logger = logging.getLogger(__name__)

GRID_RESOLUTION = 200
GRID_MARGIN = 0.10

# Published test errors (%). Rows for methods this project does not implement are
# quoted only, never recomputed.
PUBLISHED: Dict[str, Dict[str, float]] = {
    "two-moons": {
        "pnn-training": 10.23,
        "self-training": 33.68,
        "Help-Training": 15.07,
        "Branch and Bound": 0.0,
    },
    "usps": {
        "pnn-training": 7.42,
        "self-training": 8.22,
        "Help-Training": 7.77,
        "TSVM/SVMLight": 14.70,
    },
}
COMPUTED_METHODS = ("pnn-training", "self-training", "supervised")


@dataclass(frozen=True)
class Aggregate:
    method: str
    repeats: int
    mean: float
    std: float
    minimum: float
    maximum: float

    CSV_HEADER = "method,repeats,mean_error,std_error,min_error,max_error,published_error"

    def to_csv_row(self, published: Optional[float]) -> str:
        ref = "" if published is None else repr(published)
        return f"{self.method},{self.repeats},{self.mean!r},{self.std!r},{self.minimum!r},{self.maximum!r},{ref}"


def aggregate(reports: Sequence[ExperimentReport]) -> Aggregate:
    """Mean, sample standard deviation (0 for one trial), min and max of the test error."""
    errors = [r.test_error_percent for r in reports]
    return Aggregate(
        method=reports[0].method,
        repeats=len(errors),
        mean=statistics.fmean(errors),
        std=statistics.stdev(errors) if len(errors) > 1 else 0.0,
        minimum=min(errors),
        maximum=max(errors),
    )


def published_error(experiment: str, method: str) -> Optional[float]:
    return PUBLISHED.get(experiment, {}).get(method)


# --- 1. Run directories & per-trial files ---
def make_run_directory(output_dir: str, label: str, run_name: Optional[str] = None) -> Path:
    """Timestamps go into the directory name only, never into file contents."""
    if run_name is None:
        run_name = f"{label}_{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%SZ')}"
    path = Path(output_dir) / run_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_trial_report(directory: Path, report: ExperimentReport) -> Path:
    path = directory / f"trial_{report.method}_{report.seed}.json"
    path.write_text(report.to_document() + "\n", encoding="utf-8")
    return path


def write_trials_csv(path: Path, reports: Sequence[ExperimentReport]) -> None:
    lines = [ExperimentReport.CSV_HEADER] + [r.to_csv_row() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_aggregate_csv(path: Path, experiment: str, aggregates: Sequence[Aggregate]) -> None:
    lines = [Aggregate.CSV_HEADER] + [a.to_csv_row(published_error(experiment, a.method)) for a in aggregates]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- 2. Plot data for 2-D datasets ---
def decision_grid(points: np.ndarray, resolution: int = GRID_RESOLUTION, margin: float = GRID_MARGIN) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = (hi - lo) * margin
    xs = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    ys = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def write_plot_data(path: Path, split: SplitDataset, result: PipelineResult) -> None:
    """Rows `x,y,true_label,pseudo_label,split,decision_value`; grid rows leave both labels empty."""
    if split.dim != 2:
        raise ValueError("plot data needs two-dimensional samples")
    truth = audit_unlabeled_truth(split)
    rows = []
    for s in split.labeled:
        rows.append((s.features, s.label, "", "labeled"))
    for i, s in enumerate(split.unlabeled):
        pseudo = result.pseudo_labels[i] if i < len(result.pseudo_labels) else -1
        rows.append((s.features, truth[i] if truth else "", pseudo if pseudo >= 0 else "", "unlabeled"))
    for s in split.test:
        rows.append((s.features, s.label, "", "test"))

    points = np.asarray([r[0] for r in rows], dtype=np.float64)
    point_values = decision_surface(result.model, points)
    grid = decision_grid(points)
    grid_values = decision_surface(result.model, grid)

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "true_label", "pseudo_label", "split", "decision_value"])
        for (features, true_label, pseudo, name), value in zip(rows, point_values.tolist()):
            writer.writerow([repr(features[0]), repr(features[1]), true_label, pseudo, name, repr(value)])
        for (gx, gy), value in zip(grid.tolist(), grid_values.tolist()):
            writer.writerow([repr(gx), repr(gy), "", "", "grid", repr(value)])
    logger.info(f"Wrote plot data ({len(rows)} points, {len(grid)} grid cells) to {path}")


# --- 3. Comparison table ---
def write_comparison(path: Path, experiment: str, aggregates: Sequence[Aggregate]) -> None:
    lines = [
        f"Experiment: {experiment}",
        "",
        f"{'Method':<20} {'Test error (%)':>22} {'Published (%)':>14}",
    ]
    for a in aggregates:
        measured = f"{a.mean:.2f}" if a.repeats == 1 else f"{a.mean:.2f} +/- {a.std:.2f}"
        ref = published_error(experiment, a.method)
        lines.append(f"{a.method:<20} {measured:>22} {'' if ref is None else f'{ref:.2f}':>14}")
    references = {m: v for m, v in PUBLISHED.get(experiment, {}).items() if m not in COMPUTED_METHODS}
    for method, value in references.items():
        lines.append(f"{method + ' *':<20} {'-':>22} {value:>14.2f}")
    if references:
        lines += ["", "* not recomputed; published figure quoted for reference"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def summary_lines(experiment: str, aggregates: Sequence[Aggregate]) -> List[str]:
    out = []
    for a in aggregates:
        ref = published_error(experiment, a.method)
        line = (
            f"{a.method}: mean {a.mean:.2f}% (std {a.std:.2f}, min {a.minimum:.2f}, max {a.maximum:.2f}) "
            f"over {a.repeats} trial(s)"
        )
        if ref is not None:
            line += f"; published {ref:.2f}%"
        out.append(line)
    return out
