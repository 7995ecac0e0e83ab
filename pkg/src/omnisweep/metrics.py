"""Depth metrics and report tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import EmptyEvaluationError, InvalidArgumentError
from .matching import DepthMap

DEFAULT_CAP = 10.0


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    absrel: float
    sqrel: float
    silog: float
    delta1: float  # percent
    delta2: float
    delta3: float
    n_valid: int
    depth_cap: float

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        return (f"MAE {self.mae:.4f} m  RMSE {self.rmse:.4f} m  AbsRel {self.absrel:.4f}  "
                f"SqRel {self.sqrel:.4f}  SILog {self.silog:.4f}  "
                f"d1 {self.delta1:.2f}%  d2 {self.delta2:.2f}%  d3 {self.delta3:.2f}%  "
                f"(n={self.n_valid}, cap {self.depth_cap:g} m)")


def _as_array(m) -> np.ndarray:
    return np.asarray(m.depths if isinstance(m, DepthMap) else m, dtype=np.float64)


def evaluate(pred, gt, depth_cap: float = DEFAULT_CAP) -> MetricReport:
    """Standard depth errors over pixels valid in both maps with ``gt <= depth_cap``.

    A pixel is valid when its depth is finite and positive.
    """
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise InvalidArgumentError(f"shape mismatch: {p.shape} vs {g.shape}")
    if not depth_cap > 0:
        raise InvalidArgumentError("depth_cap must be positive")
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(p) & (p > 0) & np.isfinite(g) & (g > 0) & (g <= depth_cap)
    n = int(mask.sum())
    if n == 0:
        raise EmptyEvaluationError("no pixel is valid in both maps within the depth cap")
    p, g = p[mask], g[mask]
    diff = p - g
    log_diff = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    silog_var = max(float(np.mean(log_diff ** 2) - np.mean(log_diff) ** 2), 0.0)
    return MetricReport(
        mae=float(np.mean(np.abs(diff))),
        rmse=float(math.sqrt(np.mean(diff ** 2))),
        absrel=float(np.mean(np.abs(diff) / g)),
        sqrel=float(np.mean(diff ** 2 / g)),
        silog=math.sqrt(silog_var),
        delta1=100.0 * float(np.mean(ratio < 1.25)),
        delta2=100.0 * float(np.mean(ratio < 1.25 ** 2)),
        delta3=100.0 * float(np.mean(ratio < 1.25 ** 3)),
        n_valid=n,
        depth_cap=float(depth_cap),
    )


REPORT_COLUMNS = ["method", "dataset"] + [f.name for f in fields(MetricReport)]


def report_csv(rows) -> str:
    """CSV with one row per ``(method, dataset, report)`` triple."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for method, dataset, rep in rows:
        d = rep.as_dict()
        writer.writerow([method, dataset] + [d[c] for c in REPORT_COLUMNS[2:]])
    return buf.getvalue()


def report_text(rows) -> str:
    return "\n".join(f"{method} / {dataset}: {rep.format()}" for method, dataset, rep in rows) + "\n"
