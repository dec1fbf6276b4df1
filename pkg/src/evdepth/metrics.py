"""Depth error metrics, sparsification curves and AUSE.

Ground-truth depth 0 marks an invalid pixel and is excluded everywhere.
Subset sizes use exact rational ceilings and ties are broken by pixel index,
so curves are reproducible to the last bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import NoValidPixels, ShapeMismatch, ZeroTotalError

DEFAULT_FRACTIONS = 100
DEFAULT_RETAIN = 0.10


def _select(gt, pred, mask, subset="all"):
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"gt {gt.shape} vs pred {pred.shape}")
    sel = gt > 0
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs gt {gt.shape}")
        sel = sel & mask
    if not sel.any():
        raise NoValidPixels(subset)
    return gt[sel], pred[sel]


def absrel(gt, pred, mask=None) -> float:
    y, yh = _select(gt, pred, mask)
    return float(np.mean(np.abs(y - yh) / y))


def rmse(gt, pred, mask=None) -> float:
    y, yh = _select(gt, pred, mask)
    return float(np.sqrt(np.mean((y - yh) ** 2)))


def mae(gt, pred, mask=None) -> float:
    y, yh = _select(gt, pred, mask)
    return float(np.mean(np.abs(y - yh)))


def _exact_fraction(x) -> Fraction:
    # 0.3 should mean 3/10, not the nearest binary double
    return Fraction(x).limit_denominator(10**9)


def retained_count(n: int, keep: Fraction) -> int:
    """``ceil(keep * n)`` evaluated exactly."""
    return math.ceil(keep * n)


@dataclass(frozen=True, eq=False)
class SparsificationCurve:
    """Normalized MAE as the most uncertain (pred) or most wrong (oracle) pixels are removed."""

    fractions: np.ndarray
    pred: np.ndarray
    oracle: np.ndarray
    ause: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("alpha,pred,oracle\n")
        for a, p, o in zip(self.fractions, self.pred, self.oracle):
            buf.write(f"{float(a)!r},{float(p)!r},{float(o)!r}\n")
        return buf.getvalue()


def _prefix_mae(errors, order, counts):
    csum = np.concatenate([[0.0], np.cumsum(errors[order])])
    return csum[counts] / counts


def sparsification(errors, uncertainty, n_fractions: int = DEFAULT_FRACTIONS) -> SparsificationCurve:
    """Sparsification curves at ``alpha = j / F`` for ``j = 0..F-1`` and their AUSE.

    At each fraction the ``ceil((1 - alpha) n)`` pixels with the lowest
    uncertainty (pred) or lowest error (oracle) are kept. AUSE is the
    trapezoidal integral of the normalized curve gap over the sampled alphas.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    u = np.asarray(uncertainty, dtype=np.float64).ravel()
    if e.shape != u.shape:
        raise ShapeMismatch(f"errors {e.shape} vs uncertainty {u.shape}")
    n = e.size
    if n < 2:
        raise ValueError("sparsification needs at least two pixels")
    if n_fractions < 1:
        raise ValueError("need at least one fraction")
    total = float(np.mean(e))
    if not total > 0:
        raise ZeroTotalError("mean absolute error is zero; curve undefined")
    F = int(n_fractions)
    j = np.arange(F)
    counts = ((F - j) * n + F - 1) // F
    pred = _prefix_mae(e, np.argsort(u, kind="stable"), counts) / total
    oracle = _prefix_mae(e, np.argsort(e, kind="stable"), counts) / total
    gap = pred - oracle
    ause = float(np.sum(0.5 * (gap[1:] + gap[:-1])) / F) if F > 1 else 0.0
    return SparsificationCurve(j / F, pred, oracle, ause)


def confidence_mask(uncertainty, retain: float = DEFAULT_RETAIN, valid=None) -> np.ndarray:
    """Mask of the ``ceil(retain * n)`` lowest-uncertainty pixels (ties: lower index first).

    ``n`` counts the pixels of ``valid`` when given, else all pixels.
    """
    if not 0 < retain <= 1:
        raise ValueError("retain must lie in (0, 1]")
    u = np.asarray(uncertainty, dtype=np.float64)
    flat_valid = np.ones(u.size, dtype=bool) if valid is None else np.asarray(valid, bool).ravel()
    idx = np.flatnonzero(flat_valid)
    k = retained_count(idx.size, _exact_fraction(retain))
    order = idx[np.argsort(u.ravel()[idx], kind="stable")]
    out = np.zeros(u.size, dtype=bool)
    out[order[:k]] = True
    return out.reshape(u.shape)


TABLE_COLUMNS = ("AbsRel", "RMSE", "AUSE", "AbsRel(M)", "RMSE(M)", "AbsRel(C)", "RMSE(C)")


@dataclass(frozen=True)
class MetricsReport:
    absrel: float
    rmse: float
    mae: float
    ause: float
    absrel_M: float
    rmse_M: float
    absrel_C: float
    rmse_C: float
    retain: float
    n_all: int
    n_M: int
    n_C: int

    def table_row(self):
        return (self.absrel, self.rmse, self.ause, self.absrel_M, self.rmse_M,
                self.absrel_C, self.rmse_C)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerow([repr(float(v)) for v in self.table_row()])
        return buf.getvalue()


def evaluate(gt, pred, uncertainty, event_mask, retain: float = DEFAULT_RETAIN,
             n_fractions: int = DEFAULT_FRACTIONS, return_curve: bool = False):
    """Dense, event-masked (M) and confidence-selected (C) errors plus AUSE.

    ``uncertainty`` is the ranking plane: the variance for Gaussian and
    log-normal models, the epistemic variance for the evidential model.
    The C subset keeps the ``retain`` fraction of valid pixels with the
    lowest uncertainty. With zero total error the AUSE is reported as 0.
    """
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    unc = np.asarray(uncertainty, dtype=np.float64)
    emask = np.asarray(event_mask, dtype=bool)
    for name, arr in (("pred", pred), ("uncertainty", unc), ("event_mask", emask)):
        if arr.shape != gt.shape:
            raise ShapeMismatch(f"{name} {arr.shape} vs gt {gt.shape}")
    valid = gt > 0
    if not valid.any():
        raise NoValidPixels("all")
    cmask = confidence_mask(unc, retain, valid)
    y, yh = _select(gt, pred, None, "all")
    err = np.abs(y - yh)
    curve: Optional[SparsificationCurve] = None
    if y.size >= 2 and np.mean(err) > 0:
        curve = sparsification(err, unc[valid], n_fractions)
        ause = curve.ause
    else:
        ause = 0.0
    ym, yhm = _select(gt, pred, emask, "M")
    yc, yhc = _select(gt, pred, cmask, "C")
    report = MetricsReport(
        absrel=float(np.mean(err / y)),
        rmse=float(np.sqrt(np.mean(err**2))),
        mae=float(np.mean(err)),
        ause=ause,
        absrel_M=float(np.mean(np.abs(ym - yhm) / ym)),
        rmse_M=float(np.sqrt(np.mean((ym - yhm) ** 2))),
        absrel_C=float(np.mean(np.abs(yc - yhc) / yc)),
        rmse_C=float(np.sqrt(np.mean((yc - yhc) ** 2))),
        retain=float(retain),
        n_all=int(y.size),
        n_M=int(ym.size),
        n_C=int(yc.size),
    )
    return (report, curve) if return_curve else report


def evaluate_field(gt, field, event_mask, retain: float = DEFAULT_RETAIN,
                   n_fractions: int = DEFAULT_FRACTIONS, return_curve: bool = False):
    """:func:`evaluate` with depth and ranking plane taken from an UncertaintyField."""
    return evaluate(gt, field.depth, field.ranking, event_mask, retain, n_fractions, return_curve)
