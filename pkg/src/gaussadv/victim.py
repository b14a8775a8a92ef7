"""Victim models that map rendered images to a target-class confidence.

Two flavors: a fixed-weight, seeded, fully differentiable toy detector
used as the optimization target, and a black-box adapter that shells out
to an external scorer over a directory exchange protocol. The adapter
never participates in gradient paths.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    AdapterTimeoutError,
    DetectorFailureError,
    MalformedResponseError,
    NonFiniteConfidenceError,
    ShapeMismatchError,
)
from .gsio import save_png
from .renderer import RenderedView

LN2 = math.log(2.0)

DEFAULT_ADAPTER_TIMEOUT_MS = 30000
ADAPTER_TIMEOUT_ENV = "GAUSSADV_ADAPTER_TIMEOUT_MS"


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    label: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NonFiniteConfidenceError(f"confidence {self.value!r} is not finite")
        if not 0.0 <= self.value <= 1.0:
            raise MalformedResponseError(f"confidence {self.value} outside [0, 1]")


@dataclass(frozen=True)
class ToyDetectorSpec:
    """Seeded fixed-weight detector; never trained.

    bias is the calibrated affine offset; None means not yet calibrated
    (treated as 0). pool is the side length images are resampled to before
    the convolution bank.
    """

    seed: int = 35
    n_kernels: int = 8
    kernel_size: int = 5
    pool: int = 64
    bias: float | None = None


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _area_resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic matrix averaging input cells over output cells."""
    m = np.zeros((n_out, n_in))
    span = n_in / n_out
    for i in range(n_out):
        lo = i * span
        hi = (i + 1) * span
        j0 = int(math.floor(lo))
        j1 = min(int(math.ceil(hi)), n_in)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap / span
    return m


class ToyDetector:
    """Differentiable pipeline: area resample to pool x pool, a seeded
    convolution bank, shifted-softplus rectifier (zero at zero), global
    average pool, affine readout, logistic squash."""

    # Weight scaling: zero-sum kernels kill the DC response, so flat
    # backgrounds and photometric shifts barely move the pooled features;
    # the kernel norm keeps conv outputs in the curved region of the
    # rectifier and the readout gain sets how far image edits can push the
    # pre-activation.
    KERNEL_NORM = 12.0
    READOUT_GAIN = 1000.0

    def __init__(self, spec: ToyDetectorSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        ks = spec.kernel_size
        kernels = rng.normal(size=(spec.n_kernels, 3, ks, ks))
        kernels -= kernels.mean(axis=(2, 3), keepdims=True)
        norms = np.sqrt((kernels**2).sum(axis=(1, 2, 3), keepdims=True))
        self.kernels = kernels * (self.KERNEL_NORM / norms)
        readout = rng.normal(size=spec.n_kernels)
        readout -= readout.mean()  # cancel the common-mode energy response
        self.readout = readout * (self.READOUT_GAIN / math.sqrt(spec.n_kernels))
        self.bias = 0.0 if spec.bias is None else float(spec.bias)
        self._resize_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _resize_mats(self, h: int, w: int):
        key = (h, w)
        if key not in self._resize_cache:
            p = self.spec.pool
            self._resize_cache[key] = (_area_resize_matrix(p, h), _area_resize_matrix(p, w))
        return self._resize_cache[key]

    def _check(self, rgb: np.ndarray) -> np.ndarray:
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ShapeMismatchError(f"expected HxWx3 image, got {rgb.shape}")
        return rgb

    def _forward(self, rgb: np.ndarray):
        rgb = self._check(rgb)
        h, w = rgb.shape[:2]
        wr, wc = self._resize_mats(h, w)
        y = np.einsum("ph,hwc,qw->pqc", wr, rgb, wc, optimize=True)
        z = np.empty((self.spec.n_kernels, self.spec.pool, self.spec.pool))
        for k in range(self.spec.n_kernels):
            acc = np.zeros((self.spec.pool, self.spec.pool))
            for c in range(3):
                acc += ndimage.convolve(y[:, :, c], self.kernels[k, c], mode="constant")
            z[k] = acc
        s = np.logaddexp(0.0, z) - LN2  # softplus shifted to vanish at zero
        feats = s.mean(axis=(1, 2))
        pre = float(self.readout @ feats + self.bias)
        conf = float(_sigmoid(pre))
        return conf, pre, z, y

    def confidence(self, rgb: np.ndarray) -> float:
        return self._forward(rgb)[0]

    def confidence_and_grad(self, rgb: np.ndarray) -> tuple[float, np.ndarray]:
        """Confidence plus d(confidence)/d(rgb), shape (H, W, 3)."""
        rgb = self._check(rgb)
        conf, _, z, _ = self._forward(rgb)
        h, w = rgb.shape[:2]
        wr, wc = self._resize_mats(h, w)
        p2 = self.spec.pool * self.spec.pool
        dconf_dpre = conf * (1.0 - conf)
        dy = np.zeros((self.spec.pool, self.spec.pool, 3))
        for k in range(self.spec.n_kernels):
            dz = (dconf_dpre * self.readout[k] / p2) * _sigmoid(z[k])
            for c in range(3):
                dy[:, :, c] += ndimage.correlate(dz, self.kernels[k, c], mode="constant")
        grad = np.einsum("ph,pqc,qw->hwc", wr, dy, wc, optimize=True)
        return conf, grad

    def one_pixel_lipschitz(self, h: int, w: int) -> float:
        """Upper bound on |d confidence| per unit change of a single pixel
        channel, from the layer-wise operator norms."""
        wr, wc = self._resize_mats(h, w)
        col_r = wr.sum(axis=0).max()
        col_c = wc.sum(axis=0).max()
        kernel_l1 = np.abs(self.kernels).sum(axis=(1, 2, 3))
        per_feat = kernel_l1 / (self.spec.pool * self.spec.pool)
        return 0.25 * float(np.abs(self.readout) @ per_feat) * col_r * col_c

    def score_view(self, view: RenderedView) -> float:
        return self.confidence(view.rgb)


def toy_confidence(
    view: RenderedView | np.ndarray,
    spec: ToyDetectorSpec,
    with_grad: bool = False,
):
    """Score one rendered view; optionally also return d(conf)/d(rgb)."""
    rgb = view.rgb if isinstance(view, RenderedView) else view
    det = ToyDetector(spec)
    if with_grad:
        conf, grad = det.confidence_and_grad(rgb)
        return ConfidenceScore(conf), grad
    return ConfidenceScore(det.confidence(rgb))


def calibrate_toy_detector(
    spec: ToyDetectorSpec,
    reference_rgb: np.ndarray,
    target: float = 0.8,
) -> ToyDetectorSpec:
    """Fit the affine bias by bisection so the reference image scores at
    least `target`. Returns a spec with the fitted bias stored."""
    base = ToyDetector(replace(spec, bias=0.0))
    _, pre, _, _ = base._forward(reference_rgb)

    def conf_at(bias: float) -> float:
        return float(_sigmoid(pre + bias))

    lo, hi = -(10.0 + 3.0 * abs(pre)), 10.0 + 3.0 * abs(pre)
    if conf_at(lo) > target or conf_at(hi) < target:
        raise DetectorFailureError("calibration target out of reachable range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if conf_at(mid) < target:
            lo = mid
        else:
            hi = mid
    bias = hi  # high side of the bracket: confidence >= target
    while conf_at(bias) < target:
        bias = math.nextafter(bias, math.inf)
    return replace(spec, bias=bias)


# ---------------------------------------------------------------------------
# Black-box adapter. Request: a directory holding view_%04d.png and
# manifest.json {"count": N, "resolution": [W, H]}. The adapter executable
# is invoked with the directory as its single argument and must write
# scores.jsonl there: one {"index": i, "confidence": c, "label": ...} per
# image. No gradients ever flow through this path.
# ---------------------------------------------------------------------------

_ADAPTER_LOCK = threading.Lock()


@dataclass
class AdapterConfig:
    executable: str
    exchange_dir: str
    timeout_ms: int | None = None

    def resolved_timeout_ms(self) -> int:
        if self.timeout_ms is not None:
            return int(self.timeout_ms)
        env = os.environ.get(ADAPTER_TIMEOUT_ENV)
        return int(env) if env else DEFAULT_ADAPTER_TIMEOUT_MS


def _write_exchange(views, exchange: Path) -> tuple[int, tuple[int, int]]:
    exchange.mkdir(parents=True, exist_ok=True)
    resolution = None
    for i, item in enumerate(views):
        dest = exchange / f"view_{i:04d}.png"
        if isinstance(item, RenderedView):
            img = item.rgb
        elif isinstance(item, np.ndarray):
            img = item
        else:
            data = Path(item).read_bytes()
            dest.write_bytes(data)
            from PIL import Image

            with Image.open(dest) as im:
                resolution = im.size
            continue
        save_png(img, dest)
        resolution = (img.shape[1], img.shape[0])
    count = len(views)
    (exchange / "manifest.json").write_text(
        json.dumps({"count": count, "resolution": list(resolution or (0, 0))})
    )
    return count, resolution or (0, 0)


def external_score(views, adapter: AdapterConfig) -> list[ConfidenceScore]:
    """Score images out-of-process through the directory exchange protocol.

    `views` may contain file paths, HxWx3 arrays, or RenderedViews.
    """
    exchange = Path(adapter.exchange_dir)
    timeout_s = adapter.resolved_timeout_ms() / 1000.0
    with _ADAPTER_LOCK:
        count, _ = _write_exchange(views, exchange)
        scores_path = exchange / "scores.jsonl"
        if scores_path.exists():
            scores_path.unlink()
        try:
            proc = subprocess.run(
                [adapter.executable, str(exchange)],
                timeout=timeout_s,
                capture_output=True,
            )
        except subprocess.TimeoutExpired as e:
            raise AdapterTimeoutError(
                f"adapter exceeded {adapter.resolved_timeout_ms()} ms"
            ) from e
        except OSError as e:
            raise DetectorFailureError(f"could not launch adapter: {e}") from e
        if proc.returncode != 0:
            raise DetectorFailureError(
                f"adapter exited with {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}"
            )
        if not scores_path.exists():
            raise MalformedResponseError("adapter wrote no scores.jsonl")
        raw = scores_path.read_text()

    by_index: dict[int, ConfidenceScore] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedResponseError(f"line {lineno} is not JSON: {e}") from e
        if "index" not in rec or "confidence" not in rec:
            raise MalformedResponseError(f"line {lineno} lacks index/confidence")
        idx = int(rec["index"])
        value = float(rec["confidence"])
        if not math.isfinite(value):
            raise NonFiniteConfidenceError(f"non-finite confidence for index {idx}")
        by_index[idx] = ConfidenceScore(value=value, label=rec.get("label"))
    missing = [i for i in range(count) if i not in by_index]
    if missing:
        raise MalformedResponseError(f"response missing index {missing[0]}")
    return [by_index[i] for i in range(count)]


class AdapterScorer:
    """Batch scorer facade over external_score for evaluation sweeps."""

    def __init__(self, adapter: AdapterConfig):
        self.adapter = adapter

    def score_batch(self, views) -> list[float]:
        return [s.value for s in external_score(views, self.adapter)]
