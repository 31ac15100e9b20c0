"""Desk-scale test bed: deterministic synthetic video dataset, a least-squares
linear oracle over downsampled pixels, a matching white-box image model, and
a subprocess adapter for attaching real classifiers.

The synthetic classes are distinguished by shape (square, disk, cross, ring,
triangle) drawn in a bright color on a dim background, optionally translating
rigidly at one pixel per frame. A linear scorer separates them easily, which
gives the attack suite a differentiable ground truth to verify label flips
against.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from dataclasses import dataclass, asdict

import numpy as np

from .core import ClassifierOracle, ConfigError, Prediction, Video, export_frames, load_video
from .saliency import LinearFeatureModel

SHAPE_VOCABULARY = ("square", "disk", "cross", "ring", "triangle")
# dominant RGB channel of each class palette
CLASS_CHANNELS = (0, 1, 2, 0, 1)


@dataclass
class SyntheticDatasetSpec:
    num_classes: int = 3
    videos_per_class: int = 10
    height: int = 32
    width: int = 32
    num_frames: int = 8
    motion: str = "static"   # "static" | "translate"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(SHAPE_VOCABULARY):
            raise ConfigError(f"num_classes must be in 1..{len(SHAPE_VOCABULARY)}")
        if self.motion not in ("static", "translate"):
            raise ConfigError(f"unknown motion pattern {self.motion!r}")
        if self.videos_per_class < 1 or self.num_frames < 1:
            raise ConfigError("need at least one video and one frame")


def _draw_shape(frame, shape, cy, cx, radius, color):
    h, w = frame.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    dy, dx = ys - cy, xs - cx
    if shape == "square":
        mask = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    elif shape == "disk":
        mask = dy * dy + dx * dx <= radius * radius
    elif shape == "cross":
        arm = max(1, radius // 3)
        mask = ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | \
               ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))
    elif shape == "ring":
        d2 = dy * dy + dx * dx
        inner = max(1, radius - 2)
        mask = (d2 <= radius * radius) & (d2 >= inner * inner)
    elif shape == "triangle":
        mask = (dy >= -radius) & (dy <= radius) & \
               (np.abs(dx) <= (dy + radius) / 2.0)
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    frame[mask] = color
    return mask


def synthesize_video(spec: SyntheticDatasetSpec, class_label: int,
                     video_index: int) -> Video:
    """One deterministic clip; identical (spec, class, index) always yields
    identical pixels."""
    rng = np.random.default_rng([spec.seed, class_label, video_index])
    h, w, t = spec.height, spec.width, spec.num_frames
    shape = SHAPE_VOCABULARY[class_label]
    # classes carry both a shape and a color palette, so a style image from
    # another class transports class evidence into the stylized regions
    dominant = CLASS_CHANNELS[class_label]
    background = rng.uniform(0.05, 0.15, size=3)
    background[dominant] = rng.uniform(0.25, 0.4)
    color = rng.uniform(0.05, 0.3, size=3)
    color[dominant] = rng.uniform(0.7, 1.0)
    radius = int(rng.integers(min(h, w) // 6, min(h, w) // 4 + 1))
    if spec.motion == "translate":
        axis = int(rng.integers(0, 4))
        vel = [(0, 1), (0, -1), (1, 0), (-1, 0)][axis]
    else:
        vel = (0, 0)
    # keep the shape fully inside the frame over the whole trajectory
    lo_y = radius + max(0, -vel[0] * (t - 1))
    hi_y = h - 1 - radius - max(0, vel[0] * (t - 1))
    lo_x = radius + max(0, -vel[1] * (t - 1))
    hi_x = w - 1 - radius - max(0, vel[1] * (t - 1))
    cy = int(rng.integers(lo_y, hi_y + 1))
    cx = int(rng.integers(lo_x, hi_x + 1))
    frames = np.empty((t, h, w, 3))
    for i in range(t):
        frame = np.tile(background, (h, w, 1))
        _draw_shape(frame, shape, cy + vel[0] * i, cx + vel[1] * i, radius, color)
        frames[i] = frame
    return Video(frames)


def gen_synthetic_dataset(spec: SyntheticDatasetSpec, out_dir) -> dict:
    """Write frame directories plus a manifest; byte-identical per seed."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for c in range(spec.num_classes):
        for v in range(spec.videos_per_class):
            video = synthesize_video(spec, c, v)
            video_id = f"class{c}_vid{v:03d}"
            vdir = os.path.join(out_dir, "videos", video_id)
            export_frames(video, vdir)
            rows.append({"video_id": video_id, "class_label": c,
                         "path": os.path.join("videos", video_id)})
    manifest = {"spec": asdict(spec), "videos": rows}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(dataset_dir):
    """Manifest plus loaded videos and labels."""
    with open(os.path.join(dataset_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    videos, labels = [], []
    for row in manifest["videos"]:
        videos.append(load_video(os.path.join(dataset_dir, row["path"])))
        labels.append(int(row["class_label"]))
    return manifest, videos, labels


# ---------------------------------------------------------------------------
# toy oracle: linear scorer over downsampled pixels
# ---------------------------------------------------------------------------

def _pool_frame(frame, fh, fw):
    h, w = frame.shape[:2]
    if h % fh == 0 and w % fw == 0:
        return frame.reshape(fh, h // fh, fw, w // fw, 3).mean(axis=(1, 3))
    out = np.empty((fh, fw, 3))
    for i, rg in enumerate(np.array_split(np.arange(h), fh)):
        for j, cg in enumerate(np.array_split(np.arange(w), fw)):
            out[i, j] = frame[np.ix_(rg, cg)].mean(axis=(0, 1))
    return out


class LinearVideoClassifier:
    """Softmax of a linear map over the temporally averaged, spatially pooled
    clip. Differentiable in closed form, so tests can verify label flips
    directly."""

    def __init__(self, weights, pool_to=(8, 8), temperature: float = 1.0):
        self.weights = np.asarray(weights, dtype=np.float64)  # (classes, dim+1)
        self.pool_to = pool_to
        self.temperature = temperature

    @property
    def num_classes(self):
        return self.weights.shape[0]

    def features(self, video: Video):
        mean_frame = video.frames.mean(axis=0)
        pooled = _pool_frame(mean_frame, *self.pool_to)
        return np.concatenate([pooled.ravel(), [1.0]])

    def scores(self, video: Video):
        return self.weights @ self.features(video)

    def predict(self, video: Video) -> Prediction:
        z = self.scores(video) / self.temperature
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        label = int(np.argmax(p))
        return Prediction(label, float(p[label]))


def fit_linear_oracle(videos, labels, pool_to=(8, 8),
                      temperature: float = 1.0) -> LinearVideoClassifier:
    """Least-squares fit of one-hot targets over pooled-pixel features."""
    n_classes = int(max(labels)) + 1
    probe = LinearVideoClassifier(np.zeros((n_classes, 1)), pool_to, temperature)
    feats = np.stack([probe.features(v) for v in videos])
    onehot = np.eye(n_classes)[np.asarray(labels)]
    w, *_ = np.linalg.lstsq(feats, onehot, rcond=None)
    return LinearVideoClassifier(w.T, pool_to, temperature)


def classifier_accuracy(model: LinearVideoClassifier, videos, labels) -> float:
    hits = sum(model.predict(v).label == y for v, y in zip(videos, labels))
    return hits / len(videos)


def fit_whitebox_model(videos, labels, pool_to=(8, 8)) -> LinearFeatureModel:
    """Least-squares image model over first frames, for saliency heatmaps."""
    n_classes = int(max(labels)) + 1
    fh, fw = pool_to
    feats = np.stack([_pool_frame(v.frames[0], fh, fw).transpose(2, 0, 1).ravel()
                      for v in videos])
    onehot = np.eye(n_classes)[np.asarray(labels)]
    w, *_ = np.linalg.lstsq(feats, onehot, rcond=None)
    return LinearFeatureModel(w.T.reshape(n_classes, 3, fh, fw), pool_to)


def make_oracle(model) -> ClassifierOracle:
    return ClassifierOracle(model.predict)


# ---------------------------------------------------------------------------
# external oracle adapter
# ---------------------------------------------------------------------------

class ExternalProcessOracle:
    """Subprocess oracle protocol: the command receives a frame-directory path
    and prints ``label score`` on stdout.

    Bare command names are also resolved against the directory named by the
    ``RESTYLEADV_ADAPTER_PATH`` environment variable.
    """

    def __init__(self, command):
        if isinstance(command, str):
            command = [command]
        search = os.environ.get("RESTYLEADV_ADAPTER_PATH")
        exe = command[0]
        if search and not os.path.exists(exe) and os.sep not in exe:
            candidate = os.path.join(search, exe)
            if os.path.exists(candidate):
                command = [candidate] + list(command[1:])
        self.command = list(command)

    def predict(self, video: Video) -> Prediction:
        with tempfile.TemporaryDirectory() as tmp:
            export_frames(video, tmp)
            out = subprocess.run(self.command + [tmp], capture_output=True,
                                 text=True, check=True)
        try:
            label_str, score_str = out.stdout.split()[:2]
            return Prediction(int(label_str), float(score_str))
        except (ValueError, IndexError) as exc:
            raise ConfigError(
                f"external oracle output {out.stdout!r} not 'label score'") from exc
