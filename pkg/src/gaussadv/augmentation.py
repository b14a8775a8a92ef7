"""In-loop image augmentations simulating deployment conditions.

Four transforms compose right-to-left: depth-scaled sensor noise, then a
channel-wise photometric affine, then a depth-driven soft shadow, then a
semi-transparent rectangular occluder. Randomness is drawn from a
substream keyed by (seed, epoch, view index), so a fixed key replays the
exact same transform; with the draws frozen every transform is a plain
differentiable map of the input image, and each one passes an image-space
cotangent back through itself. Depth is read, never written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .renderer import RenderedView


@dataclass
class AugmentConfig:
    sigma0: float = 0.01
    noise_gain: float = 0.005  # noise std added per meter of depth
    contrast_range: tuple[float, float] = (0.9, 1.1)
    shift_range: tuple[float, float] = (-0.05, 0.05)
    shadow_alpha: float = 0.05  # sigmoid sharpness, per meter: soft penumbra
    shadow_strength: float = 0.85  # darkening factor deep inside the shadow
    shadow_quantile_range: tuple[float, float] = (0.3, 0.7)
    occl_p_size: float = 0.1
    occl_probability: float = 0.5
    occl_fill: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.sigma0 < 0:
            raise InvalidParameterError("sigma0 must be >= 0")
        if self.contrast_range[0] <= 0:
            raise InvalidParameterError("contrast range must be positive")
        if not 0.0 <= self.occl_p_size <= 1.0:
            raise InvalidParameterError("occl_p_size must be in [0, 1]")
        if not 0.0 <= self.shadow_strength <= 1.0:
            raise InvalidParameterError("shadow_strength must be in [0, 1]")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        """Settings under which every transform is a bit-exact passthrough."""
        return cls(
            sigma0=0.0,
            noise_gain=0.0,
            contrast_range=(1.0, 1.0),
            shift_range=(0.0, 0.0),
            shadow_strength=1.0,
            occl_probability=0.0,
            seed=seed,
        )


def make_epoch_stream(seed: int, epoch: int, view_index: int) -> np.random.SeedSequence:
    """Fresh substream for one (epoch, view) cell; construct one per use."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(epoch, view_index))


def _with_rgb(view: RenderedView, rgb: np.ndarray) -> RenderedView:
    return RenderedView(rgb=rgb, alpha=view.alpha, depth=view.depth,
                        all_culled=view.all_culled)


def _clip_vjp(pre: np.ndarray):
    mask = (pre >= 0.0) & (pre <= 1.0)
    return lambda g: g * mask


def _identity_vjp(g: np.ndarray) -> np.ndarray:
    return g


def t_noise(view: RenderedView, cfg: AugmentConfig, rng: np.random.Generator,
            with_vjp: bool = False):
    """Additive zero-mean Gaussian noise whose std grows with pixel depth."""
    if cfg.sigma0 == 0.0 and cfg.noise_gain == 0.0:
        return (view, _identity_vjp) if with_vjp else view
    sigma = cfg.sigma0 + cfg.noise_gain * view.depth
    eps = rng.standard_normal(view.rgb.shape)
    pre = view.rgb + sigma[:, :, None] * eps
    out = _with_rgb(view, np.clip(pre, 0.0, 1.0))
    return (out, _clip_vjp(pre)) if with_vjp else out


def t_photo(view: RenderedView, cfg: AugmentConfig, rng: np.random.Generator,
            with_vjp: bool = False):
    """Channel-wise affine contrast/brightness jitter."""
    if cfg.contrast_range == (1.0, 1.0) and cfg.shift_range == (0.0, 0.0):
        return (view, _identity_vjp) if with_vjp else view
    contrast = rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1], 3)
    shift = rng.uniform(cfg.shift_range[0], cfg.shift_range[1], 3)
    pre = view.rgb * contrast + shift
    out = _with_rgb(view, np.clip(pre, 0.0, 1.0))
    if not with_vjp:
        return out
    clip = _clip_vjp(pre)
    return out, lambda g: clip(g) * contrast


def shadow_mask(depth: np.ndarray, alpha: np.ndarray, cfg: AugmentConfig,
                quantile: float) -> np.ndarray:
    """Sigmoid of depth against a threshold taken from in-object depths."""
    covered = alpha > 0.5
    d_th = np.quantile(depth[covered], quantile) if covered.any() else depth.max()
    z = cfg.shadow_alpha * (depth - d_th)
    return 1.0 / (1.0 + np.exp(-z))


def t_shadow(view: RenderedView, cfg: AugmentConfig, rng: np.random.Generator,
             with_vjp: bool = False):
    """Multiply by a factor fading from 1 to shadow_strength with depth."""
    if cfg.shadow_strength == 1.0:
        return (view, _identity_vjp) if with_vjp else view
    q = rng.uniform(cfg.shadow_quantile_range[0], cfg.shadow_quantile_range[1])
    mask = shadow_mask(view.depth, view.alpha, cfg, q)
    factor = (1.0 - (1.0 - cfg.shadow_strength) * mask)[:, :, None]
    out = _with_rgb(view, view.rgb * factor)
    return (out, lambda g: g * factor) if with_vjp else out


def t_occl(view: RenderedView, cfg: AugmentConfig, rng: np.random.Generator,
           with_vjp: bool = False):
    """Blend a random rectangle toward the fill color with random opacity."""
    if cfg.occl_probability <= 0.0:
        return (view, _identity_vjp) if with_vjp else view
    h, w = view.rgb.shape[:2]
    side_max = int(cfg.occl_p_size * min(h, w))
    apply = rng.uniform() < cfg.occl_probability
    if not apply or side_max < 1:
        return (view, _identity_vjp) if with_vjp else view
    rect_w = int(rng.integers(1, side_max + 1))
    rect_h = int(rng.integers(1, side_max + 1))
    x0 = int(rng.integers(0, w - rect_w + 1))
    y0 = int(rng.integers(0, h - rect_h + 1))
    t = rng.uniform()
    factor = np.ones((h, w, 1))
    factor[y0 : y0 + rect_h, x0 : x0 + rect_w, 0] = 1.0 - t
    rgb = view.rgb * factor
    rgb[y0 : y0 + rect_h, x0 : x0 + rect_w] += cfg.occl_fill * t
    out = _with_rgb(view, rgb)
    return (out, lambda g: g * factor) if with_vjp else out


_TRANSFORMS = (t_noise, t_photo, t_shadow, t_occl)


def apply_all(view: RenderedView, cfg: AugmentConfig,
              stream: np.random.SeedSequence, with_vjp: bool = False):
    """Compose noise, photometric, shadow, occlusion, in that order.

    `stream` must be freshly built (see make_epoch_stream); each transform
    draws from its own spawned child, so the composite is replayable.
    """
    rngs = [np.random.default_rng(child) for child in stream.spawn(4)]
    vjps = []
    for transform, rng in zip(_TRANSFORMS, rngs):
        if with_vjp:
            view, vjp = transform(view, cfg, rng, with_vjp=True)
            vjps.append(vjp)
        else:
            view = transform(view, cfg, rng)
    if not with_vjp:
        return view

    def backward(g: np.ndarray) -> np.ndarray:
        for vjp in reversed(vjps):
            g = vjp(g)
        return g

    return view, backward
