"""Synthetic scenes with known depth and the ideal brightness-threshold event model.

Two scenes are available:

``translating-texture``
    A seeded periodic texture rolling right by ``velocity`` whole pixels per
    frame in front of a fixed slanted plane.
``approaching-plane``
    A textured plane moving toward the camera at constant speed; its image
    magnifies about the center as the depth shrinks linearly in time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, IndexOutOfRange, NonMonotonicFrames, OutOfSpan
from .events import EventStream

SCENES = ("translating-texture", "approaching-plane")


@dataclass(frozen=True)
class GenConfig:
    threshold: float = 0.2
    seed: int = 42
    scene: str = "translating-texture"
    frame_rate: float = 200.0
    duration: float = 1.0
    width: int = 64
    height: int = 48
    velocity: int = 1
    contrast: float = 0.6
    depth_near: float = 2.0
    depth_far: float = 6.0
    approach_speed: float = 1.5
    jitter_us: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError("threshold C must be > 0")
        if self.scene not in SCENES:
            raise ConfigError(f"scene must be one of {SCENES}")
        if self.width < 1 or self.height < 1:
            raise ConfigError("width and height must be positive")
        if self.frame_rate <= 0 or self.duration <= 0 or self.n_frames < 2:
            raise ConfigError("frame_rate x duration must give at least 2 frames")
        if 1e6 / self.frame_rate < 1:
            raise ConfigError("frame interval below 1 us")
        if not 0 < self.depth_near < self.depth_far:
            raise ConfigError("need 0 < depth_near < depth_far")
        if self.scene == "approaching-plane" and self.depth_at(self.duration) <= 0:
            raise ConfigError("approaching plane would pass the camera")
        if self.jitter_us < 0:
            raise ConfigError("jitter_us must be >= 0")

    @property
    def n_frames(self) -> int:
        return int(np.floor(self.frame_rate * self.duration + 1e-9)) + 1

    @property
    def duration_us(self) -> int:
        return int(round(self.duration * 1e6))

    def frame_time(self, index: int) -> int:
        return int(round(index * 1e6 / self.frame_rate))

    def depth_at(self, seconds: float) -> float:
        """Center depth of the approaching plane at a time in seconds."""
        return self.depth_far - self.approach_speed * seconds

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                raise ConfigError(f"unknown generator key {k!r}")
            kind = {"float": float, "int": int, "str": str}[types[k]]
            try:
                kw[k] = kind(v)
            except ValueError:
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SceneFrame:
    log_intensity: np.ndarray
    depth: np.ndarray
    t: int


def _texture_terms(cfg: GenConfig):
    rng = np.random.default_rng(cfg.seed)
    n = 4
    fx = rng.integers(1, 4, n)
    fy = rng.integers(1, 4, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(0.5, 1.0, n)
    amp = amp / amp.sum()
    return fx, fy, phase, amp


def _texture(cfg, u, v):
    """Smooth log-intensity texture, periodic with period (W, H) in (u, v)."""
    fx, fy, phase, amp = _texture_terms(cfg)
    out = np.zeros(np.broadcast(u, v).shape)
    for a, kx, ky, ph in zip(amp, fx, fy, phase):
        out += a * np.sin(2 * np.pi * (kx * u / cfg.width + ky * v / cfg.height) + ph)
    return cfg.contrast * out


def slanted_plane(cfg: GenConfig, x, y):
    """Depth of the fixed background plane used by the translating scene."""
    span = cfg.depth_far - cfg.depth_near
    return cfg.depth_near + span * (0.7 * x / max(cfg.width - 1, 1) + 0.3 * y / max(cfg.height - 1, 1))


def render_scene(cfg: GenConfig, index: int) -> SceneFrame:
    if not 0 <= index < cfg.n_frames:
        raise IndexOutOfRange(f"frame {index} outside 0..{cfg.n_frames - 1}")
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    t_us = cfg.frame_time(index)
    if cfg.scene == "translating-texture":
        base = _texture(cfg, xx, yy)
        logi = np.roll(base, cfg.velocity * index, axis=1)
        depth = slanted_plane(cfg, xx, yy)
    else:
        d_center = cfg.depth_at(t_us * 1e-6)
        mag = cfg.depth_far / d_center
        cx, cy = (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0
        logi = _texture(cfg, cx + (xx - cx) / mag, cy + (yy - cy) / mag)
        tilt = 1.0 + 0.25 * (yy - cy) / max(cfg.height - 1, 1)
        depth = d_center * tilt
    return SceneFrame(logi, depth, t_us)


def render_sequence(cfg: GenConfig) -> list:
    return [render_scene(cfg, i) for i in range(cfg.n_frames)]


def generate_events(frames: Sequence[SceneFrame], threshold: float, jitter_us: int = 0,
                    seed: int = 0) -> EventStream:
    """Ideal threshold sensor driven by piecewise-linear log intensity.

    Each pixel keeps a reference level starting at the first frame. While the
    current level differs from it by at least ``threshold`` an event fires,
    the reference moves one threshold step toward the signal, and the event
    time is the linearly interpolated crossing instant rounded to 1 us.
    Output is sorted by time, then pixel index.
    """
    if len(frames) < 2:
        raise NonMonotonicFrames("need at least two frames")
    if not threshold > 0:
        raise ConfigError("threshold must be > 0")
    times = np.array([f.t for f in frames], dtype=np.int64)
    if np.any(np.diff(times) <= 0):
        raise NonMonotonicFrames("frame timestamps must strictly increase")
    height, width = frames[0].log_intensity.shape
    stack = np.stack([np.asarray(f.log_intensity, dtype=np.float64) for f in frames])
    t, pix, p, interval, crossing = kernels.threshold_events(stack, times, float(threshold))
    if jitter_us:
        rng = np.random.default_rng(seed)
        t = t + rng.integers(-jitter_us, jitter_us + 1, t.size)
        t = np.clip(t, times[0], times[-1])
    order = np.lexsort((crossing, interval, pix, t))
    pix = pix[order]
    return EventStream(width, height, pix % width, pix // width, t[order], p[order])


def ground_truth_at(frames: Sequence[SceneFrame], t_query: int) -> np.ndarray:
    """Depth of the latest frame at or before ``t_query`` (no interpolation)."""
    times = np.array([f.t for f in frames], dtype=np.int64)
    if len(times) == 0 or t_query < times[0] or t_query > times[-1]:
        raise OutOfSpan(f"t={t_query} outside frame span")
    i = int(np.searchsorted(times, t_query, side="right")) - 1
    return np.array(frames[i].depth)


def noisy_prediction(depth, rng: np.random.Generator, rel_noise=(0.01, 0.3)):
    """Depth prediction with heteroscedastic Gaussian noise.

    Each pixel draws its own noise scale (a fraction of its depth, uniform in
    ``rel_noise``); returns ``(prediction, noise_std)``. Predictions are kept
    positive.
    """
    depth = np.asarray(depth, dtype=np.float64)
    std = depth * rng.uniform(rel_noise[0], rel_noise[1], depth.shape)
    pred = depth + std * rng.standard_normal(depth.shape)
    return np.maximum(pred, 1e-3), std
