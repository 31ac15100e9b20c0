"""Domain types shared by the whole attack: videos, predictions, the
query-counting oracle wrapper, and attack configuration.

Pixel intensities live in [0,1] as float64 everywhere; 8-bit quantization
happens only when frames cross a file boundary.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

FRAME_EXTENSIONS = (".png", ".bmp", ".jpg", ".jpeg")


class ConfigError(ValueError):
    """Invalid configuration or invariant-violating input."""


@dataclass
class Video:
    """A clip of T frames, each (H, W, 3) with intensities in [0,1]."""

    frames: np.ndarray  # (T, H, W, 3) float64
    frame_rate: float = 25.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4 or f.shape[0] < 1 or f.shape[3] != 3:
            raise ConfigError(f"expected (T, H, W, 3) frames, got {f.shape}")
        self.frames = f

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    def copy(self):
        return Video(self.frames.copy(), self.frame_rate)


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float


@dataclass(frozen=True)
class AttackGoal:
    mode: str  # "targeted" | "untargeted"
    original_label: int
    target_label: int | None = None

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise ConfigError(f"unknown goal mode {self.mode!r}")
        if self.mode == "targeted":
            if self.target_label is None:
                raise ConfigError("targeted goal requires target_label")
            if self.target_label == self.original_label:
                raise ConfigError("target_label must differ from original_label")

    def is_success(self, pred: Prediction) -> bool:
        if self.mode == "targeted":
            return pred.label == self.target_label
        return pred.label != self.original_label


class ClassifierOracle:
    """Black-box label-and-score oracle with exact query accounting.

    Wraps an arbitrary ``Video -> Prediction`` callable. All attack code goes
    through :meth:`query`; the counter is protected by a lock so concurrent
    population evaluations stay exact.
    """

    def __init__(self, predict_fn):
        self._predict = predict_fn
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    def query(self, video: Video) -> Prediction:
        pred = self._predict(video)
        if not isinstance(pred, Prediction):
            label, score = pred
            pred = Prediction(label, float(score))
        if not 0.0 <= pred.score <= 1.0:
            raise ConfigError(f"oracle score {pred.score} outside [0,1]")
        with self._lock:
            self._count += 1
        return pred

    def query_batch(self, videos) -> list[Prediction]:
        return [self.query(v) for v in videos]


@dataclass
class AttackConfig:
    """All tunables of the attack; defaults follow the published loss weights
    where the source gives them and conservative choices elsewhere."""

    alpha_select: float = 0.5     # grad-vs-area mixing weight for region ranking
    mu: float = 0.4               # cumulative-area lower bound coefficient
    w_content: float = 100.0
    w_style: float = 1e6
    w_tv: float = 1e-4
    w_real: float = 5.0
    w_temp: float = 20.0
    nes_population: int = 48
    nes_sigma: float = 1e-3
    pgd_step: float = 1.0 / 255.0
    pgd_eps: float = 16.0 / 255.0
    style_iterations: int = 100
    query_budget: int = 10_000
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha_select <= 1.0:
            raise ConfigError("alpha_select must lie in [0,1]")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError("mu must lie in [0,1]")
        for name in ("w_content", "w_style", "w_tv", "w_real", "w_temp"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.nes_population < 2 or self.nes_population % 2:
            raise ConfigError("nes_population must be even and >= 2")
        if self.nes_sigma <= 0:
            raise ConfigError("nes_sigma must be positive")
        if not 0 < self.pgd_step <= self.pgd_eps:
            raise ConfigError("need 0 < pgd_step <= pgd_eps")
        if self.query_budget < 1:
            raise ConfigError("query_budget must be >= 1")
        if self.style_iterations < 0:
            raise ConfigError("style_iterations must be >= 0")

    def with_overrides(self, **kw) -> "AttackConfig":
        return replace(self, **kw)


def clamp_video(video: Video) -> Video:
    """Project every intensity to [0,1]; idempotent."""
    return Video(np.clip(video.frames, 0.0, 1.0), video.frame_rate)


def load_video(path, frame_rate: float = 25.0) -> Video:
    """Load a video from a directory of lexicographically ordered frame images."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such frame directory: {path}")
    names = sorted(n for n in os.listdir(path)
                   if n.lower().endswith(FRAME_EXTENSIONS))
    if not names:
        raise ConfigError(f"zero frames in {path}")
    frames = []
    for name in names:
        with Image.open(os.path.join(path, name)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        if frames and arr.shape != frames[0].shape:
            raise ConfigError(
                f"frame {name} has shape {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)
    return Video(np.stack(frames), frame_rate)


def export_frames(video: Video, out_dir, prefix: str = "") -> list[str]:
    """Write frames as 8-bit PNGs with zero-padded numeric names."""
    os.makedirs(out_dir, exist_ok=True)
    width = max(5, len(str(video.num_frames)))
    paths = []
    for t in range(video.num_frames):
        data = np.clip(np.round(video.frames[t] * 255.0), 0, 255).astype(np.uint8)
        p = os.path.join(out_dir, f"{prefix}{t:0{width}d}.png")
        Image.fromarray(data).save(p)
        paths.append(p)
    return paths
