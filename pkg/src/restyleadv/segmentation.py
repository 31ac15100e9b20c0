"""Region masks: first-frame segmentation, propagation through the clip, and
the mask algebra (validation, average-pool downsampling) the losses rely on.

Built-in segmenters (grid tiling, 8-connected components over quantized
colors) and trackers (static copy, integer-shift template match) make the
desk-scale pipeline deterministic; heavyweight external models plug in behind
the same interfaces.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import ConfigError, Video


@dataclass
class RegionSet:
    """Disjoint binary masks over one frame, keyed by stable region ids."""

    masks: list[np.ndarray]       # each (H, W) bool
    region_ids: list[int]

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        if len(self.masks) != len(self.region_ids):
            raise ConfigError("masks and region_ids length mismatch")

    @property
    def num_regions(self):
        return len(self.masks)

    def areas(self):
        return np.array([int(m.sum()) for m in self.masks])

    def mask_for(self, region_id):
        return self.masks[self.region_ids.index(region_id)]


@dataclass
class MaskSequence:
    """One RegionSet per frame, all sharing the same region ids.

    A region may vanish mid-clip (empty mask); it keeps its id and slot so the
    pairing with style regions stays stable, and per-frame losses skip it.
    """

    per_frame: list[RegionSet]
    region_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.per_frame:
            raise ConfigError("mask sequence needs at least one frame")
        if not self.region_ids:
            self.region_ids = list(self.per_frame[0].region_ids)
        for rs in self.per_frame:
            if rs.region_ids != self.region_ids:
                raise ConfigError("region ids differ across frames")

    @property
    def num_frames(self):
        return len(self.per_frame)


# ---------------------------------------------------------------------------
# segmenters
# ---------------------------------------------------------------------------

def grid_segment(frame, rows: int, cols: int) -> RegionSet:
    """Tile the frame into rows x cols rectangles (ceiling split on remainders)."""
    if rows < 1 or cols < 1:
        raise ConfigError("rows and cols must be positive")
    h, w = frame.shape[:2]
    if rows > h or cols > w:
        raise ConfigError("more cells than pixels along an axis")
    row_edges = np.cumsum([0] + [len(c) for c in np.array_split(np.arange(h), rows)])
    col_edges = np.cumsum([0] + [len(c) for c in np.array_split(np.arange(w), cols)])
    masks, ids = [], []
    rid = 0
    for i in range(rows):
        for j in range(cols):
            m = np.zeros((h, w), dtype=bool)
            m[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]] = True
            masks.append(m)
            ids.append(rid)
            rid += 1
    return RegionSet(masks, ids)


class GridSegmenter:
    def __init__(self, rows: int = 4, cols: int = 4):
        self.rows = rows
        self.cols = cols

    def segment(self, frame) -> RegionSet:
        return grid_segment(frame, self.rows, self.cols)


class ConnectedComponentsSegmenter:
    """8-connected components of equal quantized color (step 0.25 per channel).

    Gives semantically shaped regions on flat-colored synthetic frames.
    """

    def __init__(self, quant_step: float = 0.25, min_area: int = 1):
        self.quant_step = quant_step
        self.min_area = min_area

    def segment(self, frame) -> RegionSet:
        h, w = frame.shape[:2]
        q = np.floor(np.clip(frame, 0.0, 1.0 - 1e-9) / self.quant_step).astype(np.int64)
        color_code = q[..., 0] * 10_000 + q[..., 1] * 100 + q[..., 2]
        structure = np.ones((3, 3), dtype=bool)
        masks = []
        seen = np.zeros((h, w), dtype=bool)
        # raster order over first-pixel of each component keeps ids deterministic
        for code in _first_seen_order(color_code):
            labeled, n = ndimage.label(color_code == code, structure=structure)
            for lab in range(1, n + 1):
                m = labeled == lab
                if m.sum() >= self.min_area:
                    masks.append(m)
            seen |= color_code == code
        masks.sort(key=lambda m: int(np.argmax(m.ravel())))
        return RegionSet(masks, list(range(len(masks))))


def _first_seen_order(code_grid):
    flat = code_grid.ravel()
    _, first_pos = np.unique(flat, return_index=True)
    return flat[np.sort(first_pos)]


def resolve_overlaps(proposals: RegionSet) -> RegionSet:
    """Flatten possibly-overlapping proposals into disjoint masks.

    Contested pixels go to the larger-area proposal; ties break toward the
    lower region index. Proposals left empty are dropped.
    """
    if proposals.num_regions == 0:
        return proposals
    h, w = proposals.masks[0].shape
    claim = np.full((h, w), -1, dtype=np.int64)
    order = sorted(range(proposals.num_regions),
                   key=lambda i: (-int(proposals.masks[i].sum()), i))
    for i in order:
        free = proposals.masks[i] & (claim < 0)
        claim[free] = i
    masks, ids = [], []
    for i in range(proposals.num_regions):
        m = claim == i
        if m.any():
            masks.append(m)
            ids.append(proposals.region_ids[i])
    return RegionSet(masks, ids)


def segment_first_frame(frame, segmenter) -> RegionSet:
    """Segment one frame and guarantee disjoint, non-empty output masks."""
    raw = segmenter.segment(frame)
    regions = resolve_overlaps(raw)
    if regions.num_regions == 0:
        raise ConfigError("unsegmentable frame: segmenter returned zero regions")
    return regions


# ---------------------------------------------------------------------------
# trackers
# ---------------------------------------------------------------------------

class StaticTracker:
    """Copy the first-frame masks to every frame (static scenes)."""

    def track(self, video: Video, regions: RegionSet) -> MaskSequence:
        per_frame = [regions] + [
            RegionSet([m.copy() for m in regions.masks], list(regions.region_ids))
            for _ in range(video.num_frames - 1)
        ]
        return MaskSequence(per_frame)


class TranslationTracker:
    """Track rigid integer motion by exhaustive template match against frame 1.

    For each frame the global shift minimizing the sum of squared differences
    over the overlap is found by brute force within ``max_shift``; all masks
    shift by that amount (zero fill at the border).
    """

    def __init__(self, max_shift: int = 8):
        self.max_shift = max_shift

    def _best_shift(self, ref, frame):
        best = (0, 0)
        best_score = np.inf
        h, w = ref.shape[:2]
        for dy in range(-self.max_shift, self.max_shift + 1):
            for dx in range(-self.max_shift, self.max_shift + 1):
                ys = slice(max(0, dy), min(h, h + dy))
                xs = slice(max(0, dx), min(w, w + dx))
                yr = slice(max(0, -dy), min(h, h - dy))
                xr = slice(max(0, -dx), min(w, w - dx))
                diff = frame[ys, xs] - ref[yr, xr]
                area = diff.shape[0] * diff.shape[1]
                if area == 0:
                    continue
                score = float(np.sum(diff * diff)) / area
                key = (score, abs(dy) + abs(dx), dy, dx)
                if key < (best_score, abs(best[0]) + abs(best[1]), best[0], best[1]):
                    best_score = score
                    best = (dy, dx)
        return best

    def track(self, video: Video, regions: RegionSet) -> MaskSequence:
        ref = video.frames[0]
        per_frame = [regions]
        for t in range(1, video.num_frames):
            dy, dx = self._best_shift(ref, video.frames[t])
            masks = [shift_mask(m, dy, dx) for m in regions.masks]
            per_frame.append(RegionSet(masks, list(regions.region_ids)))
        return MaskSequence(per_frame)


def shift_mask(mask, dy: int, dx: int):
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    yr = slice(max(0, -dy), min(h, h - dy))
    xr = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = mask[yr, xr]
    return out


def track_regions(video: Video, regions: RegionSet, tracker) -> MaskSequence:
    """Propagate first-frame regions through the clip.

    Frame 1 of the output is the input RegionSet verbatim. Tracker output that
    violates disjointness is re-disjointed in region order with a warning.
    """
    seq = tracker.track(video, regions)
    if seq.num_frames != video.num_frames:
        raise ConfigError("tracker returned wrong number of frames")
    fixed = [regions]
    for t in range(1, seq.num_frames):
        rs = seq.per_frame[t]
        report = validate_region_set(rs, allow_empty=True)
        if report:
            warnings.warn(f"tracker output invalid at frame {t}; re-disjointing")
            claimed = np.zeros(rs.masks[0].shape, dtype=bool)
            masks = []
            for m in rs.masks:
                mm = m & ~claimed
                claimed |= mm
                masks.append(mm)
            rs = RegionSet(masks, list(rs.region_ids))
        fixed.append(rs)
    return MaskSequence(fixed, list(regions.region_ids))


# ---------------------------------------------------------------------------
# mask algebra
# ---------------------------------------------------------------------------

def validate_region_set(regions: RegionSet, frame_shape=None,
                        allow_empty: bool = False) -> list[str]:
    """Diagnostic check; returns a list of violations, empty iff valid."""
    violations = []
    if regions.num_regions == 0:
        return ["no regions"]
    shape = regions.masks[0].shape
    if frame_shape is not None and tuple(shape) != tuple(frame_shape[:2]):
        violations.append(f"mask shape {shape} != frame shape {tuple(frame_shape[:2])}")
    counts = np.zeros(shape, dtype=np.int64)
    for rid, m in zip(regions.region_ids, regions.masks):
        if m.shape != shape:
            violations.append(f"region {rid}: shape {m.shape} != {shape}")
            continue
        if not allow_empty and not m.any():
            violations.append(f"region {rid}: empty mask")
        counts += m
    for i, j in zip(*np.nonzero(counts > 1)):
        violations.append(f"disjointness violation at ({i}, {j})")
    return violations


def downsample_mask(mask, target_h: int, target_w: int):
    """Average-pool the mask to the target size, then threshold at >= 0.5.

    Ties round to 1, biasing toward including boundary pixels in the styled
    region.
    """
    if target_h < 1 or target_w < 1:
        raise ConfigError("target dimensions must be positive")
    h, w = mask.shape
    if target_h > h or target_w > w:
        raise ConfigError("target must not exceed source dimensions")
    m = mask.astype(np.float64)
    if h % target_h == 0 and w % target_w == 0:
        pooled = m.reshape(target_h, h // target_h,
                           target_w, w // target_w).mean(axis=(1, 3))
    else:
        row_groups = np.array_split(np.arange(h), target_h)
        col_groups = np.array_split(np.arange(w), target_w)
        pooled = np.empty((target_h, target_w))
        for i, rg in enumerate(row_groups):
            for j, cg in enumerate(col_groups):
                pooled[i, j] = m[np.ix_(rg, cg)].mean()
    return pooled >= 0.5


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_mask_sequence(seq: MaskSequence, out_dir):
    """Write masks as 8-bit 0/255 PNGs named <frame_index>_<region_id>.png."""
    os.makedirs(out_dir, exist_ok=True)
    for t, rs in enumerate(seq.per_frame):
        for rid, m in zip(rs.region_ids, rs.masks):
            img = (m.astype(np.uint8)) * 255
            Image.fromarray(img, mode="L").save(
                os.path.join(out_dir, f"{t:05d}_{rid}.png"))


def load_mask(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128
