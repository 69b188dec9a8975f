"""
Results Module
==============

Result tables of the experiments: CSV output, log-log slope fits, SVG plots and a printed summary
next to known reference values.

"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from polydg.helpers import print_table  # noqa: E402

logger = logging.getLogger(__name__)

COLUMNS = ["experiment", "Nh", "NH", "h", "H", "p", "q", "rho_e", "K", "iters", "bound_factor"]
_INT_COLUMNS = {"Nh", "NH", "p", "q", "iters"}


def _build_references() -> dict:
    """Published condition numbers, keyed by (experiment, p, case key)."""
    refs = {("example1-aligned", 1, 10.0): 231.0, ("example1-aligned", 1, 1e6): 234.0}
    not_aligned = [2.92e2, 1.04e3, 7.73e3, 7.42e4, 7.39e5, 7.38e6]
    for rho_e, K in zip([10.0, 1e2, 1e3, 1e4, 1e5, 1e6], not_aligned):
        refs[("example1-not-aligned", 1, rho_e)] = K
    nested_table = {
        (64, 16): 20.70, (256, 16): 72.31, (1024, 16): 269.70, (4096, 16): 818.09,
        (256, 64): 21.89, (1024, 64): 73.42, (4096, 64): 261.36,
        (1024, 256): 20.91, (4096, 256): 83.77,
        (4096, 1024): 23.08,
    }
    for key, K in nested_table.items():
        refs[("example2", 1, key)] = K
    non_nested_table = {
        (64, 16): 23.29, (256, 16): 92.13, (1024, 16): 387.61, (4096, 16): 1624.26,
        (256, 64): 25.91, (1024, 256): 26.73, (4096, 1024): 31.81,
    }
    for key, K in non_nested_table.items():
        refs[("example4", 1, key)] = K
    refs.update({
        ("example5-nested", 1, None): 43.4, ("example5-nested", 9, None): 631.0,
        ("example5-nonnested", 1, None): 60.5, ("example5-nonnested", 9, None): 3906.0,
    })
    return refs


def reference_value(row: dict) -> Optional[float]:
    label = row["experiment"]
    if label.startswith("example1"):
        key = float(row["rho_e"])
    elif label in ("example2", "example4"):
        key = (int(row["Nh"]), int(row["NH"]))
    else:
        key = None
    return REFERENCE_VALUES.get((label, int(row["p"]), key))


REFERENCE_VALUES = _build_references()


def _format_value(column: str, value) -> str:
    if column in _INT_COLUMNS:
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "{:.10g}".format(float(value))
    return str(value)


@dataclass
class ResultsTable:
    """Rows of ``COLUMNS`` plus fitted slopes."""

    rows: List[dict] = field(default_factory=list)
    slopes: Dict[str, float] = field(default_factory=dict)

    def add(self, row: dict):
        missing = [c for c in COLUMNS if c not in row]
        if missing:
            raise ValueError(f"results row misses columns {missing}")
        self.rows.append({c: row[c] for c in COLUMNS})

    def extend(self, rows):
        for row in rows:
            self.add(row)

    def sorted(self) -> "ResultsTable":
        key = lambda r: (r["experiment"], r["p"], r["q"], r["Nh"], r["NH"], r["rho_e"])  # noqa: E731
        return ResultsTable(rows=sorted(self.rows, key=key), slopes=dict(self.slopes))

    def select(self, **criteria) -> List[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in criteria.items())]

    def column(self, name: str, **criteria) -> np.ndarray:
        return np.array([r[name] for r in self.select(**criteria)])

    def __len__(self) -> int:
        return len(self.rows)


def write_results(table: ResultsTable, path: str):
    """
    Write a table as CSV with header ``experiment,Nh,NH,h,H,p,q,rho_e,K,iters,bound_factor``.

    Rows are written in sorted order and floats with 10 significant digits, so equal runs give
    identical files.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in table.sorted().rows:
            writer.writerow([_format_value(c, row[c]) for c in COLUMNS])
    logger.info("wrote %d rows to %s", len(table), path)


def read_results(path: str) -> ResultsTable:
    table = ResultsTable()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            table.add({c: (row[c] if c == "experiment" else int(row[c]) if c in _INT_COLUMNS else float(row[c])) for c in COLUMNS})
    return table


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Least squares slope of ``log y`` against ``log x``.

    Args:
        xs (Sequence[float]): Positive abscissae.
        ys (Sequence[float]): Positive ordinates.

    Returns:
        float: The slope.

    Raises:
        ValueError: On nonpositive data, fewer than three points or a single abscissa.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or len(xs) < 3:
        raise ValueError("slope fit needs matching arrays with at least three points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("slope fit needs positive data")
    if np.ptp(np.log(xs)) == 0:
        raise ValueError("slope fit needs distinct abscissae")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


_PLOT_AXES = {
    "example1-aligned": ("rho_e", "K"),
    "example1-not-aligned": ("rho_e", "K"),
    "example2": ("ratio", "K"),
    "example4": ("NH", "K"),
    "example5-nested": ("p", "K"),
    "example5-nonnested": ("p", "K"),
    "unprec-h": ("inv_h", "K"),
    "unprec-p": ("p", "K"),
}


def _x_value(row: dict, name: str) -> float:
    if name == "ratio":
        return math.sqrt(row["Nh"] / row["NH"])
    if name == "inv_h":
        return 1.0 / row["h"]
    return float(row[name])


def plot_results(table: ResultsTable, out_dir: str) -> List[str]:
    """
    Write one log-log SVG chart per experiment label.

    Returns:
        List[str]: Paths written.
    """
    paths = []
    labels = sorted({r["experiment"] for r in table.rows})
    for label in labels:
        xname, yname = _PLOT_AXES.get(label, ("Nh", "K"))
        rows = table.select(experiment=label)
        group_key = "Nh" if label in ("example2", "example4") else "p"
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for g in sorted({r[group_key] for r in rows}):
            pts = sorted((_x_value(r, xname), r[yname]) for r in rows if r[group_key] == g)
            ax.loglog([x for x, _ in pts], [y for _, y in pts], marker="o", label=f"{group_key}={g}")
        ax.set_xlabel(xname)
        ax.set_ylabel(yname)
        ax.set_title(label)
        ax.grid(True, which="both", linewidth=0.3)
        ax.legend(fontsize="small")
        path = os.path.join(out_dir, f"{label}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths


def print_summary(table: ResultsTable):
    """Print the table, with reference values alongside where they exist."""
    rows = [dict(row, reference=reference_value(row)) for row in table.sorted().rows]
    print_table(rows, COLUMNS + ["reference"])
    for name, value in sorted(table.slopes.items()):
        print(f"slope {name}: {value:.3f}")
