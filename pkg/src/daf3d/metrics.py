"""3D segmentation metrics: overlap ratios and boundary distances.

Distances are Euclidean in voxel index space. Surfaces use 6-connectivity
with the volume border counted as background.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ._kernels import squared_edt, surface_mask

METRIC_NAMES = ("dice", "jaccard", "cc", "adb", "hd95", "precision", "recall")
CSV_COLUMNS = ("case_id", "dice", "jaccard", "cc", "adb", "hd95", "precision", "recall")


class UndefinedMetricWarning(UserWarning):
    pass


def _as_bool(m):
    data = getattr(m, "data", m)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3D mask, got shape {data.shape}")
    return data.astype(bool)


def _pair(s, g):
    s, g = _as_bool(s), _as_bool(g)
    if s.shape != g.shape:
        raise ValueError(f"mask shapes differ: {s.shape} vs {g.shape}")
    return s, g


def overlap_metrics(S, G):
    """``(dice, jaccard, cc, precision, recall)``; undefined entries are None."""
    s, g = _pair(S, G)
    ng = int(g.sum())
    if ng == 0:
        raise ValueError("ground truth mask is empty")
    ns = int(s.sum())
    inter = int(np.count_nonzero(s & g))
    union = ns + ng - inter
    dice = 2.0 * inter / (ns + ng)
    jaccard = inter / union
    if inter == 0:
        warnings.warn("empty intersection: conformity coefficient undefined", UndefinedMetricWarning)
        cc = None
    else:
        cc = 2.0 - union / inter
    if ns == 0:
        warnings.warn("empty segmentation: precision undefined", UndefinedMetricWarning)
        precision = None
    else:
        precision = inter / ns
    recall = inter / ng
    return dice, jaccard, cc, precision, recall


def extract_surface(m):
    """Surface voxel coordinates, shape (n, 3), in C order."""
    return np.argwhere(surface_mask(_as_bool(m)))


def directed_distances(A, B, backend=None):
    """Distance from every surface voxel of ``A`` to the nearest surface voxel of ``B``."""
    a, b = _pair(A, B)
    sa, sb = surface_mask(a, backend), surface_mask(b, backend)
    if not sa.any() or not sb.any():
        return None
    sq = squared_edt(sb, backend)
    return np.sqrt(sq[sa].astype(np.float64))


def _scale(units, spacing):
    if units == "voxel":
        return 1.0
    if units != "mm":
        raise ValueError(f"units must be 'voxel' or 'mm', got {units!r}")
    spacing = tuple(float(x) for x in spacing)
    if max(spacing) != min(spacing):
        raise ValueError(f"mm output needs isotropic spacing, got {spacing}")
    return spacing[0]


def _both(S, G, backend):
    d_sg = directed_distances(S, G, backend)
    d_gs = directed_distances(G, S, backend)
    if d_sg is None or d_gs is None:
        warnings.warn("empty mask: boundary distance undefined", UndefinedMetricWarning)
        return None
    return d_sg, d_gs


def adb(S, G, units="voxel", spacing=(0.5, 0.5, 0.5), backend=None):
    """Average distance of boundaries: mean of the two directed mean distances."""
    d = _both(S, G, backend)
    if d is None:
        return None
    return 0.5 * (d[0].mean() + d[1].mean()) * _scale(units, spacing)


def percentile_nearest_rank(values, q=95):
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise ValueError("empty sample")
    rank = max(1, (q * n + 99) // 100)
    return float(v[rank - 1])


def hd95_directed(S, G, backend=None):
    """``(hd95 S->G, hd95 G->S)`` in voxels, or None when a mask is empty."""
    d = _both(S, G, backend)
    if d is None:
        return None
    return percentile_nearest_rank(d[0]), percentile_nearest_rank(d[1])


def hd95(S, G, units="voxel", spacing=(0.5, 0.5, 0.5), backend=None):
    """Max of the two directed 95th-percentile surface distances."""
    d = hd95_directed(S, G, backend)
    if d is None:
        return None
    return max(d) * _scale(units, spacing)


@dataclass
class MetricsReport:
    case_id: str
    dice: float | None
    jaccard: float | None
    cc: float | None
    adb: float | None
    hd95: float | None
    precision: float | None
    recall: float | None
    hd95_sg: float | None = None
    hd95_gs: float | None = None

    def values(self):
        return tuple(getattr(self, k) for k in METRIC_NAMES)


def evaluate_case(S, G, case_id="", backend=None) -> MetricsReport:
    dice, jaccard, cc, precision, recall = overlap_metrics(S, G)
    d = _both(S, G, backend)
    if d is None:
        a = h = hsg = hgs = None
    else:
        a = 0.5 * (d[0].mean() + d[1].mean())
        hsg, hgs = percentile_nearest_rank(d[0]), percentile_nearest_rank(d[1])
        h = max(hsg, hgs)
    return MetricsReport(case_id, dice, jaccard, cc, a, h, precision, recall, hsg, hgs)


def aggregate(reports):
    """Per-metric ``(mean, sd, n)`` over defined values; SD uses ddof=1."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports if getattr(r, name) is not None],
                        dtype=np.float64)
        if len(vals) == 0:
            out[name] = (math.nan, math.nan, 0)
        else:
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[name] = (float(vals.mean()), sd, len(vals))
    return out


_LABELS = {"dice": "Dice", "jaccard": "Jaccard", "cc": "CC", "adb": "ADB", "hd95": "95HD",
           "precision": "Precision", "recall": "Recall"}


def format_table(columns):
    """Metric-by-method table of mean±SD strings.

    ``columns`` maps a method name to the output of :func:`aggregate`.
    """
    names = list(columns)
    rows = [["Metric"] + names]
    for m in METRIC_NAMES:
        row = [_LABELS[m]]
        for n in names:
            mean, sd, count = columns[n][m]
            row.append("n/a" if count == 0 else f"{mean:.2f}±{sd:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_reports_csv(path, reports):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([r.case_id] + [_fmt(getattr(r, k)) for k in CSV_COLUMNS[1:]])


def read_reports_csv(path):
    reports = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            vals = {k: (None if row[k] == "" else float(row[k])) for k in CSV_COLUMNS[1:]}
            reports.append(MetricsReport(row["case_id"], **vals))
    return reports


def report_dict(r: MetricsReport):
    return {f.name: getattr(r, f.name) for f in fields(r)}


__all__ = [
    "MetricsReport", "UndefinedMetricWarning", "adb", "aggregate", "directed_distances",
    "evaluate_case", "extract_surface", "format_table", "hd95", "hd95_directed",
    "overlap_metrics", "percentile_nearest_rank", "read_reports_csv", "write_reports_csv",
]
