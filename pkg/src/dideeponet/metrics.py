"""Evaluation metrics M1-M4, the configurable unified score and report output.

M1-M3 are relative 2-norm scores at fluid element centers (100 is perfect).
M4 is the Gauss-quadrature continuity residual of the predicted nodal field
and shares its implementation with :func:`fem.continuity_residual`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import ConfigurationError, UndefinedMetricError

log = logging.getLogger(__name__)

BOUNDARY_LAYER = 0.2
METRIC_NAMES = ("M1", "M2", "M3", "M4")
MODEL_LABELS = {"deeponet": "DeepONet", "geometric": "Geometric-DeepONet"}
SPLIT_ORDER = ("random", "extrapolatory")


def _score(diff, ref, what):
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise UndefinedMetricError(f"{what}: reference norm is zero")
    return 100.0 * (1.0 - np.linalg.norm(diff) / denom)


def metric_M1(pred: fem.ElementField, truth: fem.ElementField):
    m = truth.mask
    return _score(pred.centers[m] - truth.centers[m], truth.centers[m], "M1")


def boundary_layer_mask(sdf_centers, band=BOUNDARY_LAYER):
    sdf_centers = np.asarray(sdf_centers)
    return (sdf_centers >= 0.0) & (sdf_centers <= band)


def metric_M2(pred: fem.ElementField, truth: fem.ElementField, sdf_centers=None,
              band=BOUNDARY_LAYER, sample=None):
    sel = boundary_layer_mask(truth.sdf if sdf_centers is None else sdf_centers, band)
    if not sel.any():
        raise UndefinedMetricError(f"sample {sample}: no element centers with 0 <= SDF <= {band}")
    return _score(pred.centers[sel] - truth.centers[sel], truth.centers[sel], f"M2 (sample {sample})")


def metric_M3(pred: fem.ElementField, truth: fem.ElementField, sample=None):
    m = truth.mask
    errors, skipped = [], []
    for n in range(3):
        for j in range(3):
            ref = truth.gradients[m, n, j]
            denom = np.linalg.norm(ref)
            if denom == 0.0:
                skipped.append("uvw"[n] + "xyz"[j])
                continue
            errors.append(np.linalg.norm(pred.gradients[m, n, j] - ref) / denom)
    if skipped:
        log.warning("M3 sample %s: excluding zero-norm gradient components %s", sample, skipped)
    if not errors:
        raise UndefinedMetricError(f"M3 sample {sample}: every gradient component has zero norm")
    return 100.0 * (1.0 - float(np.mean(errors)))


def metric_M4(pred: fem.NodalField):
    return fem.continuity_residual(pred)[1]


def sample_metrics(pred: fem.NodalField, truth: fem.NodalField, sdf_grid, sample=None):
    """M1-M4 for one sample; an undefined M2 becomes NaN with a warning."""
    p = fem.postprocess(pred, sdf_grid)
    t = fem.postprocess(truth, sdf_grid)
    try:
        m2 = metric_M2(p, t, sample=sample)
    except UndefinedMetricError as exc:
        log.warning("%s", exc)
        m2 = math.nan
    return {"M1": metric_M1(p, t), "M2": m2, "M3": metric_M3(p, t, sample), "M4": metric_M4(pred)}


def unified_score(m1, m2, m3, m4, weights=(1 / 3, 1 / 3, 1 / 3), penalty=100.0):
    """Weighted mean of M1-M3 minus ``penalty * M4``."""
    weights = tuple(float(x) for x in weights)
    if len(weights) != 3 or any(x < 0 for x in weights) or penalty < 0:
        raise ConfigurationError(f"weights must be 3 non-negative values and penalty >= 0, "
                                 f"got {weights}, {penalty}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigurationError(f"weights must sum to 1, got {sum(weights)}")
    # anchored at m1 so equal scores come back exactly (weights sum to 1)
    mean = m1 + weights[1] * (m2 - m1) + weights[2] * (m3 - m1)
    return mean - penalty * m4


@dataclass
class MetricsReport:
    model: str
    loss: str
    split: str
    samples: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, sample, values):
        self.samples.append(sample)
        self.rows.append({k: float(values[k]) for k in METRIC_NAMES})

    def aggregate(self):
        return {k: float(np.nanmean([r[k] for r in self.rows])) for k in METRIC_NAMES}

    def unified(self, **kwargs):
        a = self.aggregate()
        return unified_score(a["M1"], a["M2"], a["M3"], a["M4"], **kwargs)

    def csv_rows(self):
        head = ["model", "loss", "split", "sample", *METRIC_NAMES]
        out = [head]
        for s, r in zip(self.samples, self.rows):
            out.append([self.model, self.loss, self.split, str(s), *(repr(r[k]) for k in METRIC_NAMES)])
        agg = self.aggregate()
        out.append([self.model, self.loss, self.split, "mean", *(repr(agg[k]) for k in METRIC_NAMES)])
        return out


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    for i, rep in enumerate(reports):
        rows = rep.csv_rows()
        w.writerows(rows if i == 0 else rows[1:])
    return buf.getvalue()


def _fmt(metric, value):
    if math.isnan(value):
        return "n/a"
    return f"{value:.3e}" if metric == "M4" else f"{value:.2f}"


def format_table(reports):
    """Aligned text table: one row per (model, loss), M1-M4 per split, random first."""
    splits = [s for s in SPLIT_ORDER if any(r.split == s for r in reports)]
    splits += sorted({r.split for r in reports} - set(splits))
    keys = []
    for r in reports:
        if (r.model, r.loss) not in keys:
            keys.append((r.model, r.loss))
    by_key = {(r.model, r.loss, r.split): r.aggregate() for r in reports}

    header1 = ["", ""] + [s.capitalize() if i == 0 else "" for s in splits for i in range(len(METRIC_NAMES))]
    header2 = ["Model", "Loss"] + [m for _ in splits for m in METRIC_NAMES]
    body = []
    for model, loss in keys:
        row = [MODEL_LABELS.get(model, model), loss]
        for s in splits:
            agg = by_key.get((model, loss, s))
            row += [_fmt(m, agg[m]) if agg else "-" for m in METRIC_NAMES]
        body.append(row)
    table = [header1, header2] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(header2))]
    lines = []
    for r in table:
        cells = [c.ljust(widths[i]) if i < 2 else c.rjust(widths[i]) for i, c in enumerate(r)]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
