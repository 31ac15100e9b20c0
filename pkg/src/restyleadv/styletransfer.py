"""Region-masked photorealistic video stylization.

Losses: per-region masked Gram style loss, deep-feature content loss, squared
total variation, matting-Laplacian realism penalty, and flow-warped temporal
consistency. Every loss comes with an analytic gradient with respect to the
stylized pixels; the stylization loop runs adaptive-moment descent with step
halving so the total loss never increases on an accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import kernels
from .core import ConfigError, Video
from .segmentation import MaskSequence, RegionSet, downsample_mask


class StylizationDivergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# feature extractors
# ---------------------------------------------------------------------------

class IdentityExtractor:
    """Raw pixels as a single 3-channel feature layer; exact for tests."""

    layers = ("pixels",)
    content_layer = "pixels"
    style_layers = ("pixels",)

    def extract(self, frame):
        feats = {"pixels": np.moveaxis(np.asarray(frame, dtype=np.float64), -1, 0)}
        return feats, None

    def vjp(self, frame, cache, cotangents):
        cot = cotangents.get("pixels")
        if cot is None:
            return np.zeros_like(np.asarray(frame, dtype=np.float64))
        return np.moveaxis(cot, 0, -1)


def _conv3x3(x, w):
    # x: (Cin, H, W), w: (Cout, Cin, 3, 3), same padding
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.einsum("oikl,ihwkl->ohw", w, windows)


def _conv3x3_input_vjp(g, w):
    # adjoint of _conv3x3 with respect to its input: correlate with the
    # spatially flipped kernel, channels transposed
    wf = w[:, :, ::-1, ::-1]
    gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(gp, (3, 3), axis=(1, 2))
    return np.einsum("oikl,ohwkl->ihw", wf, windows)


def _avgpool2(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _avgpool2_vjp(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0


class RandomConvExtractor:
    """Small fixed-seed 3-layer convolutional extractor.

    Layer spatial sizes are H, H/2 and H/4 (inputs must be divisible by 4), so
    region masks genuinely get downsampled per layer. All layers serve as
    style layers; the deepest is the content layer.
    """

    def __init__(self, seed: int = 0, channels=(6, 8, 8)):
        rng = np.random.default_rng(seed)
        c_in = 3
        self.weights = []
        for i, c_out in enumerate(channels):
            w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(9.0 * c_in)
            if i == 0:
                # identity taps on the first three channels keep raw color
                # statistics visible to the first-layer Gram matrices
                for c in range(min(3, c_out)):
                    w[c] *= 0.1
                    w[c, c, 1, 1] += 1.0
            self.weights.append(w)
            c_in = c_out
        self.layers = tuple(f"conv{i + 1}" for i in range(len(channels)))
        self.style_layers = self.layers
        self.content_layer = self.layers[-1]

    def extract(self, frame):
        h, w = frame.shape[:2]
        if h % 4 or w % 4:
            raise ConfigError("conv extractor needs H and W divisible by 4")
        x = np.moveaxis(np.asarray(frame, dtype=np.float64), -1, 0)
        acts = []
        feats = {}
        inp = x
        for i, wt in enumerate(self.weights):
            a = np.maximum(_conv3x3(inp, wt), 0.0)
            feats[self.layers[i]] = a
            acts.append(a)
            if i + 1 < len(self.weights):
                inp = _avgpool2(a)
        return feats, acts

    def vjp(self, frame, cache, cotangents):
        acts = cache
        g_next = None
        for i in reversed(range(len(self.weights))):
            cot = cotangents.get(self.layers[i])
            g = np.zeros_like(acts[i]) if cot is None else cot.copy()
            if g_next is not None:
                g += _avgpool2_vjp(g_next)
            g *= acts[i] > 0.0
            g_next = _conv3x3_input_vjp(g, self.weights[i])
        return np.moveaxis(g_next, 0, -1)


# ---------------------------------------------------------------------------
# gram matrices and masked features
# ---------------------------------------------------------------------------

def gram_matrix(features):
    """Unnormalized C x C matrix of channel inner products."""
    f = np.asarray(features, dtype=np.float64)
    flat = f.reshape(f.shape[0], -1)
    return flat @ flat.T


def masked_features(features, mask):
    """Zero features outside a binary mask at feature resolution."""
    f = np.asarray(features, dtype=np.float64)
    m = np.asarray(mask)
    if f.shape[1:] != m.shape:
        raise ConfigError(f"mask {m.shape} != feature spatial {f.shape[1:]}")
    return f * m


@dataclass
class StylePair:
    """Rank-paired masks: a content region (at frame resolution) styled after
    a region of the style image (at style-image resolution)."""

    content_mask: np.ndarray
    style_mask: np.ndarray


def style_gram_targets(style_image, pairs, extractor):
    """Per-pair {layer: Gram} targets of the masked style image."""
    feats, _ = extractor.extract(style_image)
    targets = []
    for pair in pairs:
        per_layer = {}
        for name in extractor.style_layers:
            m = downsample_mask(pair.style_mask, *feats[name].shape[1:])
            per_layer[name] = gram_matrix(masked_features(feats[name], m))
        targets.append(per_layer)
    return targets


# ---------------------------------------------------------------------------
# losses (value + analytic gradient w.r.t. the stylized frame)
# ---------------------------------------------------------------------------

def style_loss_and_grad(stylized_frame, style_image, pairs, extractor,
                        gram_targets=None, layer_masks=None):
    """Sum over layers and region pairs of squared masked-Gram distances,
    each scaled by 1 / C_l^2.

    ``gram_targets`` and ``layer_masks`` (per-pair dicts keyed by layer) may
    be precomputed by callers that evaluate the loss repeatedly.
    """
    if not pairs:
        raise ConfigError("style loss needs at least one region pair")
    if gram_targets is None:
        gram_targets = style_gram_targets(style_image, pairs, extractor)
    feats, cache = extractor.extract(stylized_frame)
    loss = 0.0
    cotangents = {name: np.zeros_like(feats[name]) for name in extractor.style_layers}
    for idx, (pair, targets) in enumerate(zip(pairs, gram_targets)):
        if not pair.content_mask.any():
            continue  # region vanished in this frame
        for name in extractor.style_layers:
            f = feats[name]
            c = f.shape[0]
            if layer_masks is not None:
                m = layer_masks[idx][name]
            else:
                m = downsample_mask(pair.content_mask, *f.shape[1:])
            a = f * m
            flat = a.reshape(c, -1)
            diff = flat @ flat.T - targets[name]
            loss += float(np.sum(diff * diff)) / (c * c)
            d_flat = (4.0 / (c * c)) * (diff @ flat)
            cotangents[name] += d_flat.reshape(f.shape) * m
    grad = extractor.vjp(stylized_frame, cache, cotangents)
    return loss, grad


def style_loss(stylized_frame, style_image, pairs, extractor):
    return style_loss_and_grad(stylized_frame, style_image, pairs, extractor)[0]


def content_loss_and_grad(stylized_frame, content_frame, extractor):
    """Squared feature distance at the content layer, per feature element."""
    feats_x, cache = extractor.extract(stylized_frame)
    feats_c, _ = extractor.extract(content_frame)
    name = extractor.content_layer
    diff = feats_x[name] - feats_c[name]
    n = diff.size
    loss = float(np.sum(diff * diff)) / n
    grad = extractor.vjp(stylized_frame, cache, {name: 2.0 * diff / n})
    return loss, grad


def content_loss(stylized_frame, content_frame, extractor):
    return content_loss_and_grad(stylized_frame, content_frame, extractor)[0]


def tv_loss_and_grad(frame):
    """Squared neighbor differences over all channels, per pixel."""
    h, w = frame.shape[:2]
    raw, grad = kernels.tv_loss_and_grad(frame)
    n = h * w
    return raw / n, grad / n


def tv_loss(frame):
    return tv_loss_and_grad(frame)[0]


# ---------------------------------------------------------------------------
# matting Laplacian realism penalty
# ---------------------------------------------------------------------------

@dataclass
class MattingLaplacian:
    """Sparse PSD local-affinity matrix of a reference frame, possibly built
    at a pooled working resolution."""

    matrix: scipy.sparse.csr_matrix
    height: int
    width: int
    row_groups: list | None = None   # pooling plan; None means full resolution
    col_groups: list | None = None

    @property
    def pooled(self):
        return self.row_groups is not None

    def downscale(self, channel):
        if not self.pooled:
            return channel
        out = np.empty((self.height, self.width))
        for i, rg in enumerate(self.row_groups):
            for j, cg in enumerate(self.col_groups):
                out[i, j] = channel[np.ix_(rg, cg)].mean()
        return out

    def upscale_adjoint(self, small):
        full_h = sum(len(g) for g in self.row_groups)
        full_w = sum(len(g) for g in self.col_groups)
        out = np.empty((full_h, full_w))
        for i, rg in enumerate(self.row_groups):
            for j, cg in enumerate(self.col_groups):
                out[np.ix_(rg, cg)] = small[i, j] / (len(rg) * len(cg))
        return out


def build_matting_laplacian(frame, window_radius: int = 1, epsilon: float = 1e-7,
                            max_side: int = 64) -> MattingLaplacian:
    """Closed-form matting Laplacian of a reference frame.

    Frames larger than ``max_side`` are average-pooled first: the dense
    quadratic form is intractable at full resolution and the penalty only
    needs to see coarse color structure.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    h, w = frame.shape[:2]
    row_groups = col_groups = None
    work = np.asarray(frame, dtype=np.float64)
    if max(h, w) > max_side:
        th = min(h, max_side)
        tw = min(w, max_side)
        row_groups = np.array_split(np.arange(h), th)
        col_groups = np.array_split(np.arange(w), tw)
        pooled = np.empty((th, tw, 3))
        for i, rg in enumerate(row_groups):
            for j, cg in enumerate(col_groups):
                pooled[i, j] = work[np.ix_(rg, cg)].mean(axis=(0, 1))
        work = pooled
        h, w = th, tw
    win = 2 * window_radius + 1
    if h < win or w < win:
        raise ConfigError("frame smaller than the Laplacian window")
    rows, cols, vals = kernels.matting_laplacian_entries(work, window_radius, epsilon)
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(h * w, h * w)).tocsr()
    return MattingLaplacian(mat, h, w, row_groups, col_groups)


def realistic_loss_and_grad(stylized_frame, laplacian: MattingLaplacian):
    """Sum over color channels of the Laplacian quadratic form."""
    loss = 0.0
    grad = np.zeros_like(np.asarray(stylized_frame, dtype=np.float64))
    for c in range(3):
        small = laplacian.downscale(stylized_frame[..., c])
        if small.shape != (laplacian.height, laplacian.width):
            raise ConfigError("stylized frame does not match the Laplacian grid")
        v = small.ravel()
        lv = laplacian.matrix @ v
        loss += float(v @ lv)
        g_small = (2.0 * lv).reshape(laplacian.height, laplacian.width)
        if laplacian.pooled:
            grad[..., c] = laplacian.upscale_adjoint(g_small)
        else:
            grad[..., c] = g_small
    return loss, grad


def realistic_loss(stylized_frame, laplacian):
    return realistic_loss_and_grad(stylized_frame, laplacian)[0]


# ---------------------------------------------------------------------------
# temporal consistency
# ---------------------------------------------------------------------------

class ZeroFlowProvider:
    """No motion, full visibility; exact for static synthetic scenes."""

    def flow(self, frame_prev, frame_cur):
        h, w = frame_cur.shape[:2]
        return np.zeros((h, w, 2)), np.ones((h, w))


def temporal_loss_and_grad(frame_t, frame_prev_stylized, flow, visibility):
    """Visibility-weighted squared distance to the warped previous stylized
    frame, per visible pixel. Gradient is with respect to ``frame_t``; the
    warped previous frame is treated as fixed."""
    vis_sum = float(np.sum(visibility))
    frame_t = np.asarray(frame_t, dtype=np.float64)
    if vis_sum <= 0.0:
        return 0.0, np.zeros_like(frame_t)
    warped = kernels.warp_backward(frame_prev_stylized, flow)
    diff = frame_t - warped
    wdiff = visibility[..., None] * diff
    loss = float(np.sum(wdiff * diff)) / vis_sum
    return loss, 2.0 * wdiff / vis_sum


def temporal_loss(frame_t, frame_prev_stylized, flow, visibility):
    return temporal_loss_and_grad(frame_t, frame_prev_stylized, flow, visibility)[0]


# ---------------------------------------------------------------------------
# stylization loop
# ---------------------------------------------------------------------------

@dataclass
class LossWeights:
    content: float = 100.0
    style: float = 1e6
    tv: float = 1e-4
    real: float = 5.0
    temp: float = 20.0

    @classmethod
    def from_config(cls, config):
        return cls(config.w_content, config.w_style, config.w_tv,
                   config.w_real, config.w_temp)


@dataclass
class StylizeResult:
    video: Video
    trace: list          # per accepted iteration: dict of loss terms
    initial_loss: float
    final_loss: float


def _video_pairs(content_masks: MaskSequence, style_masks):
    """Per-frame StylePair lists; style masks extend cyclically over ranks."""
    n_style = len(style_masks)
    per_frame = []
    for rs in content_masks.per_frame:
        per_frame.append([
            StylePair(rs.masks[p], style_masks[p % n_style])
            for p in range(rs.num_regions)
        ])
    return per_frame


def stylize_video(video: Video, style_image, content_masks: MaskSequence,
                  style_masks, weights: LossWeights, extractor,
                  flow_provider=None, iterations: int = 100,
                  step_size: float = 0.02, max_halvings: int = 30) -> StylizeResult:
    """Iteratively restyle the masked regions of a clip.

    Minimizes frame-averaged content/style/tv/realism terms plus the temporal
    term over consecutive stylized frames. Accepted steps never increase the
    total loss (step halving); a non-finite loss aborts with a diagnostic.
    """
    if iterations < 0:
        raise ConfigError("iterations must be >= 0")
    if content_masks.num_frames != video.num_frames:
        raise ConfigError("content masks must cover every frame")
    if flow_provider is None:
        flow_provider = ZeroFlowProvider()
    t_frames = video.num_frames
    frame_pairs = _video_pairs(content_masks, style_masks)
    gram_targets = style_gram_targets(
        style_image, frame_pairs[0], extractor) if frame_pairs[0] else []
    # per-frame targets share style masks; only the content mask differs
    per_frame_targets = []
    for pairs in frame_pairs:
        if len(pairs) == len(gram_targets):
            per_frame_targets.append(gram_targets)
        else:
            per_frame_targets.append(style_gram_targets(style_image, pairs, extractor))
    laplacians = [build_matting_laplacian(video.frames[t]) for t in range(t_frames)]
    flows = [flow_provider.flow(video.frames[t - 1], video.frames[t])
             for t in range(1, t_frames)]
    feat_shapes = {name: f.shape[1:] for name, f in
                   extractor.extract(video.frames[0])[0].items()}
    frame_layer_masks = [
        [{name: downsample_mask(p.content_mask, *feat_shapes[name])
          for name in extractor.style_layers} for p in pairs]
        for pairs in frame_pairs
    ]

    content_feats = [extractor.extract(video.frames[t])[0] for t in range(t_frames)]

    def per_frame_losses(frame, t):
        # one extractor forward and one fused backward per frame
        feats, cache = extractor.extract(frame)
        cotangents = {}
        name = extractor.content_layer
        diff = feats[name] - content_feats[t][name]
        lc = float(np.sum(diff * diff)) / diff.size
        cotangents[name] = weights.content * (2.0 * diff / diff.size)
        ls = 0.0
        for idx, pair in enumerate(frame_pairs[t]):
            if not pair.content_mask.any():
                continue
            for lname in extractor.style_layers:
                f = feats[lname]
                c = f.shape[0]
                m = frame_layer_masks[t][idx][lname]
                flat = (f * m).reshape(c, -1)
                gdiff = flat @ flat.T - per_frame_targets[t][idx][lname]
                ls += float(np.sum(gdiff * gdiff)) / (c * c)
                d_flat = (weights.style * 4.0 / (c * c)) * (gdiff @ flat)
                cot = d_flat.reshape(f.shape) * m
                if lname in cotangents:
                    cotangents[lname] = cotangents[lname] + cot
                else:
                    cotangents[lname] = cot
        grad = extractor.vjp(frame, cache, cotangents)
        ltv, gtv = tv_loss_and_grad(frame)
        lr, gr = realistic_loss_and_grad(frame, laplacians[t])
        grad += weights.tv * gtv + weights.real * gr
        return lc, ls, ltv, lr, grad

    def total_and_grad(frames, need_grad=True):
        terms = {"content": 0.0, "style": 0.0, "tv": 0.0, "real": 0.0, "temp": 0.0}
        grad = np.zeros_like(frames) if need_grad else None
        for t in range(t_frames):
            lc, ls, ltv, lr, gframe = per_frame_losses(frames[t], t)
            terms["content"] += lc / t_frames
            terms["style"] += ls / t_frames
            terms["tv"] += ltv / t_frames
            terms["real"] += lr / t_frames
            if need_grad:
                grad[t] += gframe / t_frames
        if t_frames > 1 and weights.temp > 0.0:
            for t in range(1, t_frames):
                flow, vis = flows[t - 1]
                lt, gt = temporal_loss_and_grad(frames[t], frames[t - 1], flow, vis)
                terms["temp"] += lt / (t_frames - 1)
                if need_grad:
                    grad[t] += weights.temp * gt / (t_frames - 1)
        total = (weights.content * terms["content"] + weights.style * terms["style"]
                 + weights.tv * terms["tv"] + weights.real * terms["real"]
                 + weights.temp * terms["temp"])
        return total, terms, grad

    x = video.frames.copy()
    initial, terms, grad = total_and_grad(x)
    if not np.isfinite(initial):
        raise StylizationDivergence(f"non-finite initial loss {initial}")
    trace = [dict(iteration=0, total=initial, **terms)]
    if iterations == 0:
        return StylizeResult(Video(x, video.frame_rate), trace, initial, initial)

    current = initial
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    beta1, beta2, ada_eps = 0.9, 0.999, 1e-8
    steps_taken = 0
    for it in range(1, iterations + 1):
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        steps_taken += 1
        m_hat = m / (1 - beta1 ** steps_taken)
        v_hat = v / (1 - beta2 ** steps_taken)
        direction = m_hat / (np.sqrt(v_hat) + ada_eps)

        def line_search(direction):
            step = step_size
            for _ in range(max_halvings):
                cand = np.clip(x - step * direction, 0.0, 1.0)
                total_new, terms_new, grad_new = total_and_grad(cand)
                if not np.isfinite(total_new):
                    raise StylizationDivergence(
                        f"non-finite loss at iteration {it}: {total_new}")
                if total_new <= current:
                    return cand, total_new, terms_new, grad_new
                step *= 0.5
            return None

        found = line_search(direction)
        if found is None:
            # stale momentum can point uphill; retry from the raw gradient
            m = np.zeros_like(x)
            v = np.zeros_like(x)
            steps_taken = 0
            scale = np.max(np.abs(grad))
            if scale > 0.0:
                found = line_search(grad / scale)
        if found is None:
            break  # effectively stationary
        x, current, terms_new, grad = found
        trace.append(dict(iteration=it, total=current, **terms_new))
    return StylizeResult(Video(x, video.frame_rate), trace, initial, current)
