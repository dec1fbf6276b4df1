"""Dense event representations and their preprocessing.

Builders take an :class:`~evdepth.events.EventWindow` (or, for TORE, a whole
stream plus a query time) and return a :class:`RepTensor` of shape C x H x W.
The accumulation loops run in :mod:`evdepth.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import NonDivisibleShape, ZeroDurationWindow


@dataclass(frozen=True, eq=False)
class RepTensor:
    """C x H x W float64 tensor tagged with the representation that made it.

    ``kind`` is one of ``voxel``, ``cstr``, ``tore`` (or ``raw`` for tensors
    loaded from disk); ``param`` holds B for voxel and K for TORE.
    """

    data: np.ndarray
    kind: str = "raw"
    param: Optional[int] = None

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"RepTensor data must be 3-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("RepTensor values must be finite")
        expected = {"voxel": self.param, "cstr": 3,
                    "tore": None if self.param is None else 2 * self.param}.get(self.kind)
        if expected is not None and d.shape[0] != expected:
            raise ValueError(f"{self.kind} tensor needs {expected} channels, got {d.shape[0]}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def replace(self, data) -> "RepTensor":
        return RepTensor(data, self.kind, self.param)


@dataclass(frozen=True)
class ToreConfig:
    K: int = 3
    tau: float = 5e4
    tau_prime: float = 150.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.tau_prime < self.tau:
            raise ValueError("need 0 < tau_prime < tau")


def _check_duration(window):
    if window.dt <= 0:
        raise ZeroDurationWindow(f"window duration {window.dt} us")


def build_voxel_grid(window, bins: int) -> RepTensor:
    """Temporal voxel grid with triangular (bilinear-in-time) bin weights.

    Each event adds ``p * max(0, 1 - |b - t*|)`` to bin ``b`` at its pixel,
    where ``t* = (B - 1)(t - t0) / dt``.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    _check_duration(window)
    grid = kernels.voxel_accumulate(window.x, window.y, window.t, window.p,
                                    int(window.t0), int(window.dt), int(bins),
                                    window.height, window.width)
    return RepTensor(grid, "voxel", bins)


def build_cstr(window) -> RepTensor:
    """Channels: mean normalized time of +1 events, normalized count, mean time of -1 events."""
    _check_duration(window)
    counts, sums = kernels.cstr_accumulate(window.x, window.y, window.t, window.p,
                                           int(window.t0), int(window.dt),
                                           window.height, window.width)
    mean_t = np.divide(sums, counts, out=np.zeros_like(sums), where=counts != 0)
    total = counts[0] + counts[1]
    peak = total.max() if total.size else 0
    # empty window: no normalizer, count channel stays zero
    norm = total / peak if peak > 0 else np.zeros(total.shape)
    return RepTensor(np.stack([mean_t[0], norm, mean_t[1]]), "cstr")


def build_tore(stream, t_query: int, cfg: ToreConfig = ToreConfig()) -> RepTensor:
    """Log-ages of the K most recent events per pixel and polarity at ``t_query``.

    Only events with ``t <= t_query`` are used. Ages are clipped to
    ``[log tau', log tau]``; slots without an event hold ``log tau``. Channels
    ``0..K-1`` are positive polarity (most recent first), ``K..2K-1`` negative.
    """
    t_query = int(t_query)
    # anything older than tau - 1 saturates at the upper clip like an empty slot
    oldest = t_query - int(np.ceil(cfg.tau)) + 1
    lo = np.searchsorted(stream.t, oldest, side="left")
    hi = np.searchsorted(stream.t, t_query, side="right")
    ages = kernels.tore_ages(stream.x[lo:hi], stream.y[lo:hi], stream.t[lo:hi],
                             stream.p[lo:hi], t_query, int(cfg.K), stream.height, stream.width)
    lo_clip, hi_clip = np.log(cfg.tau_prime), np.log(cfg.tau)
    vals = np.full(ages.shape, hi_clip)
    have = ages >= 0
    vals[have] = np.clip(np.log(ages[have] + 1.0), lo_clip, hi_clip)
    return RepTensor(vals, "tore", cfg.K)


def normalize_nonzero(t: RepTensor, per_channel: bool = False, return_status: bool = False):
    """Standardize nonzero entries to zero mean, unit population variance.

    Zeros are left in place. Status is ``"ok"``, ``"all_zero"`` (input returned
    unchanged) or ``"zero_variance"`` (nonzeros only mean-subtracted).
    """
    data = np.array(t.data)
    groups = [data[c] for c in range(data.shape[0])] if per_channel else [data]
    statuses = []
    for g in groups:
        nz = g != 0
        if not nz.any():
            statuses.append("all_zero")
            continue
        vals = g[nz]
        mean = vals.mean()
        std = np.sqrt(np.mean((vals - mean) ** 2))
        if std == 0:
            g[nz] = vals - mean
            statuses.append("zero_variance")
        else:
            g[nz] = (vals - mean) / std
            statuses.append("ok")
    if "zero_variance" in statuses:
        status = "zero_variance"
    elif all(s == "all_zero" for s in statuses):
        status = "all_zero"
    else:
        status = "ok"
    out = t.replace(data)
    return (out, status) if return_status else out


def downsample_array(a: np.ndarray, factor: int, mode: str) -> np.ndarray:
    """Block downsampling of the last two axes by an integer factor."""
    a = np.asarray(a)
    if factor < 2:
        raise ValueError("factor must be >= 2")
    h, w = a.shape[-2:]
    if h % factor or w % factor:
        raise NonDivisibleShape(f"{h}x{w} not divisible by {factor}")
    blocks = a.reshape(*a.shape[:-2], h // factor, factor, w // factor, factor)
    if mode == "nearest":
        return blocks[..., :, 0, :, 0].copy()
    if mode == "minpool":
        return blocks.min(axis=(-3, -1))
    if mode == "maxpool":
        return blocks.max(axis=(-3, -1))
    if mode == "bilinear":
        return blocks.mean(axis=(-3, -1))
    raise ValueError(f"unknown downsampling mode {mode!r}")


def downsample(t: RepTensor, factor: int, mode: str) -> RepTensor:
    return t.replace(downsample_array(t.data, factor, mode))


DEFAULT_DOWNSAMPLE_MODE = {"voxel": "bilinear", "cstr": "bilinear", "tore": "minpool"}


def hflip(t: RepTensor) -> RepTensor:
    return t.replace(t.data[:, :, ::-1])
