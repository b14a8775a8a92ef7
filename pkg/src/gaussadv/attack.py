"""Physically-constrained adversarial optimization.

Plain gradient descent on a weighted sum of the detector-confidence loss
(expectation over the viewpoint set, computed on augmented renders) and a
deviation penalty against the pre-attack cloud. Loss weights rebalance
every epoch from the current loss magnitudes; a dimension mask restricts
which of the 14 parameter slots receive updates.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augmentation import AugmentConfig, apply_all, make_epoch_stream
from .cameras import ViewpointSet
from .cloud import PARAM_SLOTS, GaussianCloud, IndexMap, MIN_SCALE
from .errors import (
    InvalidParameterError,
    NonFiniteLossError,
    UnpairedGaussianError,
)
from .metrics import lcr, psnr, ssim
from .quaternions import quat_inverse, quat_normalize, quat_right_mul_matrix
from .renderer import RenderSettings, render, render_with_grad
from .victim import ToyDetector, ToyDetectorSpec

_GEOMETRY_SLOTS = frozenset(PARAM_SLOTS[:10])
_APPEARANCE_SLOTS = frozenset(PARAM_SLOTS[10:])
_QUAT_SLOTS = frozenset(("qw", "qx", "qy", "qz"))


@dataclass(frozen=True)
class DimensionMask:
    """Subset of the 14 per-Gaussian parameter slots that may be updated."""

    selected: frozenset[str]

    def __post_init__(self):
        unknown = self.selected - set(PARAM_SLOTS)
        if unknown:
            raise InvalidParameterError(f"unknown parameter slots: {sorted(unknown)}")
        if not self.selected:
            raise InvalidParameterError("dimension mask may not be empty")
        quat = self.selected & _QUAT_SLOTS
        if quat and quat != _QUAT_SLOTS:
            # Partial quaternion updates cannot be renormalized without
            # touching the frozen components.
            raise InvalidParameterError("quaternion slots must be selected together")

    @staticmethod
    def geometry() -> "DimensionMask":
        return DimensionMask(_GEOMETRY_SLOTS)

    @staticmethod
    def appearance() -> "DimensionMask":
        return DimensionMask(_APPEARANCE_SLOTS)

    @staticmethod
    def full() -> "DimensionMask":
        return DimensionMask(frozenset(PARAM_SLOTS))

    @staticmethod
    def parse(text: str) -> "DimensionMask":
        text = text.strip().lower()
        if text == "geometry":
            return DimensionMask.geometry()
        if text == "appearance":
            return DimensionMask.appearance()
        if text == "full":
            return DimensionMask.full()
        return DimensionMask(frozenset(t.strip() for t in text.split(",") if t.strip()))

    def vector(self) -> np.ndarray:
        return np.array([1.0 if s in self.selected else 0.0 for s in PARAM_SLOTS])

    def name(self) -> str:
        if self.selected == frozenset(PARAM_SLOTS):
            return "full"
        if self.selected == _GEOMETRY_SLOTS:
            return "geometry"
        if self.selected == _APPEARANCE_SLOTS:
            return "appearance"
        return ",".join(s for s in PARAM_SLOTS if s in self.selected)


GEOMETRY_MASK = DimensionMask.geometry()
APPEARANCE_MASK = DimensionMask.appearance()
FULL_MASK = DimensionMask.full()


@dataclass(frozen=True)
class WeightState:
    lambda_adv: float = 0.5
    lambda_shape: float = 0.5
    gamma_scale: float = 10.0
    epsilon: float = 1e-8
    lambda_min: float = 0.4


def dynamic_weights(mean_adv: float, mean_shape: float, state: WeightState) -> WeightState:
    """Rebalance the loss weights from the current loss magnitudes.

    The confidence loss is scaled down by gamma_scale and weighted by its
    reciprocal (strong attacks shift emphasis to geometry preservation);
    the deviation loss is weighted by its own magnitude. Weights are
    normalized onto the simplex and the shape weight is clamped from
    below, so lambda_adv + lambda_shape == 1 always holds.
    """
    scaled_adv = mean_adv / state.gamma_scale
    w_adv = 1.0 / (scaled_adv + state.epsilon)
    w_shape = mean_shape
    lam_adv = w_adv / (w_adv + w_shape + state.epsilon)
    lam_shape = 1.0 - lam_adv
    lam_shape = max(lam_shape, state.lambda_min)
    lam_adv = 1.0 - lam_shape
    return replace(state, lambda_adv=lam_adv, lambda_shape=lam_shape)


def total_loss(adv: float, shape: float, weights: WeightState) -> float:
    return weights.lambda_adv * adv + weights.lambda_shape * shape


def shape_loss(
    cloud: GaussianCloud,
    initial: GaussianCloud,
    index_map: IndexMap | None = None,
) -> float:
    """Mean squared deviation of position, scale, and relative rotation
    (distance of q ⊗ q0^-1 from the identity quaternion) from the
    pre-attack state."""
    q0, p0, s0 = _paired_initial(cloud, initial, index_map)
    pos_term = np.sum((cloud.positions - p0) ** 2, axis=1)
    scale_term = np.sum((cloud.scales - s0) ** 2, axis=1)
    rel = _relative_quats(cloud.rotations, q0)
    rel[:, 0] -= 1.0
    rot_term = np.sum(rel**2, axis=1)
    # unchanged rotations deviate by exactly zero, not by product round-off
    rot_term[np.all(cloud.rotations == q0, axis=1)] = 0.0
    return float(np.mean(pos_term + scale_term + rot_term))


def shape_loss_grad(
    cloud: GaussianCloud,
    initial: GaussianCloud,
    index_map: IndexMap | None = None,
) -> np.ndarray:
    """(N, 14) gradient of shape_loss w.r.t. the current parameters."""
    q0, p0, s0 = _paired_initial(cloud, initial, index_map)
    n = cloud.count
    grad = np.zeros((n, 14))
    grad[:, 0:3] = 2.0 * (cloud.positions - p0) / n
    grad[:, 7:10] = 2.0 * (cloud.scales - s0) / n
    q0_inv = quat_inverse(q0)
    mats = np.stack([quat_right_mul_matrix(q) for q in q0_inv])
    rel = np.einsum("nij,nj->ni", mats, cloud.rotations)
    rel[:, 0] -= 1.0
    grad[:, 3:7] = 2.0 * np.einsum("nji,nj->ni", mats, rel) / n
    return grad


def _paired_initial(cloud, initial, index_map):
    if index_map is None:
        index_map = IndexMap.identity(initial.count)
    if index_map.new_to_old.size != cloud.count:
        raise UnpairedGaussianError(
            f"index map covers {index_map.new_to_old.size} Gaussians, cloud has {cloud.count}"
        )
    if index_map.new_to_old.size and (
        index_map.new_to_old.max() >= initial.count or index_map.new_to_old.min() < 0
    ):
        raise UnpairedGaussianError("index map points outside the initial cloud")
    sel = index_map.new_to_old
    return initial.rotations[sel], initial.positions[sel], initial.scales[sel]


def _relative_quats(q: np.ndarray, q0: np.ndarray) -> np.ndarray:
    q0_inv = quat_inverse(q0)
    w1, x1, y1, z1 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    w2, x2, y2, z2 = q0_inv[:, 0], q0_inv[:, 1], q0_inv[:, 2], q0_inv[:, 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=1,
    )


def adv_loss(
    cloud: GaussianCloud,
    views: ViewpointSet,
    detector,
    augment: AugmentConfig | None = None,
    seed: int = 0,
    epoch: int = 0,
    settings: RenderSettings | None = None,
) -> tuple[float, list[float]]:
    """Mean detector confidence over augmented renders of all views."""
    if len(views) == 0:
        raise InvalidParameterError("viewpoint set is empty")
    settings = settings or RenderSettings()
    confs = []
    for vi, pose in enumerate(views):
        view = render(cloud, pose, settings)
        if augment is not None:
            view = apply_all(view, augment, make_epoch_stream(seed, epoch, vi))
        confs.append(float(_score(detector, view)))
    return float(np.mean(confs)), confs


def _score(detector, view) -> float:
    if hasattr(detector, "score_view"):
        return detector.score_view(view)
    return detector(view)


@dataclass
class AttackConfig:
    views: ViewpointSet
    epochs: int = 50
    learning_rate: float = 0.03
    mask: DimensionMask = field(default_factory=DimensionMask.full)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    detector_id: str = "toy"
    detector_spec: ToyDetectorSpec = field(default_factory=ToyDetectorSpec)
    seed: int = 0
    render_settings: RenderSettings = field(default_factory=RenderSettings)
    weight_state: WeightState = field(default_factory=WeightState)

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise InvalidParameterError("learning rate must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    adv_loss: float
    shape_loss: float
    lambda_adv: float
    lambda_shape: float
    mean_confidence: float
    wall_time_s: float


@dataclass
class AttackReport:
    records: list[EpochRecord]
    initial_confidences: list[float]
    final_confidences: list[float]
    final_lcr: float
    psnr_vs_initial: float
    ssim_vs_initial: float

    def to_dict(self, include_timing: bool = True) -> dict:
        recs = []
        for r in self.records:
            d = {
                "epoch": r.epoch,
                "adv_loss": r.adv_loss,
                "shape_loss": r.shape_loss,
                "lambda_adv": r.lambda_adv,
                "lambda_shape": r.lambda_shape,
                "mean_confidence": r.mean_confidence,
            }
            if include_timing:
                d["wall_time_s"] = r.wall_time_s
            recs.append(d)
        return {
            "records": recs,
            "initial_confidences": self.initial_confidences,
            "final_confidences": self.final_confidences,
            "final_lcr": self.final_lcr,
            "psnr_vs_initial": self.psnr_vs_initial,
            "ssim_vs_initial": self.ssim_vs_initial,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path) -> None:
        import csv

        fields = [
            "epoch", "adv_loss", "shape_loss", "lambda_adv", "lambda_shape",
            "mean_confidence", "wall_time_s",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.records:
                writer.writerow({f: getattr(r, f if f != "wall_time_s" else "wall_time_s") for f in fields})

    def content_digest(self) -> str:
        """sha256 over all semantic fields; wall-clock timings excluded."""
        blob = json.dumps(self.to_dict(include_timing=False), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def run_attack(
    cloud: GaussianCloud,
    config: AttackConfig,
    detector: ToyDetector | None = None,
) -> tuple[GaussianCloud, AttackReport]:
    """Optimize the cloud against the detector per the configuration.

    Per epoch: render every view, augment, score; rebalance the loss
    weights from the current means; pull the image-space cotangent back to
    parameters; take one masked gradient step; renormalize quaternions and
    clamp appearance/scale ranges on the updated slots. Slots outside the
    mask leave the run bit-identical to their initial values.
    """
    if len(config.views) == 0:
        raise InvalidParameterError("attack needs a non-empty viewpoint set")
    if detector is None:
        if config.detector_id != "toy":
            raise InvalidParameterError(
                f"no differentiable victim for detector id {config.detector_id!r}"
            )
        detector = ToyDetector(config.detector_spec)

    rs = config.render_settings
    views = config.views
    n_views = len(views)
    initial = cloud.copy()
    working = cloud.copy()
    mask_vec = config.mask.vector()
    update_quats = "qw" in config.mask.selected
    state = config.weight_state

    initial_confs = [
        float(detector.confidence(render(initial, pose, rs).rgb)) for pose in views
    ]

    records: list[EpochRecord] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        per_view = []
        confs = []
        for vi, pose in enumerate(views):
            view = render(working, pose, rs)
            aug_view, vjp = apply_all(
                view, config.augment,
                make_epoch_stream(config.seed, epoch, vi),
                with_vjp=True,
            )
            conf, g_img = detector.confidence_and_grad(aug_view.rgb)
            per_view.append((pose, view, vjp, g_img))
            confs.append(conf)
        l_adv = float(np.mean(confs))
        l_shape = shape_loss(working, initial)
        if not (math.isfinite(l_adv) and math.isfinite(l_shape)):
            raise NonFiniteLossError(epoch, f"adv={l_adv} shape={l_shape}")
        state = dynamic_weights(l_adv, l_shape, state)

        grad = np.zeros((working.count, 14))
        for pose, view, vjp, g_img in per_view:
            upstream = vjp(g_img) * (state.lambda_adv / n_views)
            grad += render_with_grad(working, pose, upstream, rs, forward_view=view).values
        grad += state.lambda_shape * shape_loss_grad(working, initial)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteLossError(epoch, "non-finite gradient")

        params = working.as_params()
        params -= config.learning_rate * (grad * mask_vec)
        working = GaussianCloud.from_params(params)
        if update_quats:
            working.rotations = quat_normalize(working.rotations)
        if "sx" in config.mask.selected:
            np.maximum(working.scales[:, 0], MIN_SCALE, out=working.scales[:, 0])
        if "sy" in config.mask.selected:
            np.maximum(working.scales[:, 1], MIN_SCALE, out=working.scales[:, 1])
        if "sz" in config.mask.selected:
            np.maximum(working.scales[:, 2], MIN_SCALE, out=working.scales[:, 2])
        for slot, col in (("cr", 0), ("cg", 1), ("cb", 2)):
            if slot in config.mask.selected:
                np.clip(working.colors[:, col], 0.0, 1.0, out=working.colors[:, col])
        if "a" in config.mask.selected:
            np.clip(working.opacities, 0.0, 1.0, out=working.opacities)

        records.append(
            EpochRecord(
                epoch=epoch,
                adv_loss=l_adv,
                shape_loss=l_shape,
                lambda_adv=state.lambda_adv,
                lambda_shape=state.lambda_shape,
                mean_confidence=l_adv,
                wall_time_s=time.perf_counter() - t0,
            )
        )

    final_views = [render(working, pose, rs) for pose in views]
    initial_views = [render(initial, pose, rs) for pose in views]
    final_confs = [float(detector.confidence(v.rgb)) for v in final_views]
    final_lcr = float(
        np.mean([lcr(i, f) for i, f in zip(initial_confs, final_confs)])
    )
    psnr_vals = [psnr(iv.rgb, fv.rgb) for iv, fv in zip(initial_views, final_views)]
    finite_psnr = [p for p in psnr_vals if math.isfinite(p)]
    report = AttackReport(
        records=records,
        initial_confidences=initial_confs,
        final_confidences=final_confs,
        final_lcr=final_lcr,
        psnr_vs_initial=float(np.mean(finite_psnr)) if finite_psnr else math.inf,
        ssim_vs_initial=float(
            np.mean([ssim(iv.rgb, fv.rgb) for iv, fv in zip(initial_views, final_views)])
        ),
    )
    return working, report
