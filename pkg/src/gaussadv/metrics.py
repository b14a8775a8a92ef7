"""Attack-effectiveness and realism metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .cameras import ViewpointSet
from .cloud import GaussianCloud
from .errors import DimensionMismatchError
from .renderer import RenderSettings, render

CONFIDENCE_FLOOR = 1e-6


def lcr(initial: float, final: float, floor: float = CONFIDENCE_FLOOR) -> float:
    """Natural-log ratio of initial to final confidence, floor-guarded."""
    return math.log(max(initial, floor) / max(final, floor))


def mean_brightness(image: np.ndarray) -> float:
    return float(np.asarray(image, dtype=np.float64).mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak SNR in dB for [0,1] images; identical inputs give inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    unit dynamic range, averaged over the valid region and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    win = _gaussian_window()
    c1 = k1 * k1
    c2 = k2 * k2
    vals = []
    for c in range(a.shape[2]):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x = fftconvolve(x, win, mode="valid")
        mu_y = fftconvolve(y, win, mode="valid")
        xx = fftconvolve(x * x, win, mode="valid") - mu_x * mu_x
        yy = fftconvolve(y * y, win, mode="valid") - mu_y * mu_y
        xy = fftconvolve(x * y, win, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class SweepResult:
    """Per-(azimuth, distance) confidences and log confidence reduction."""

    azimuths_deg: np.ndarray  # (A,)
    distances: np.ndarray  # (D,)
    conf_initial: np.ndarray  # (A, D)
    conf_final: np.ndarray  # (A, D)
    lcr_grid: np.ndarray  # (A, D)

    @property
    def mean_lcr(self) -> float:
        return float(self.lcr_grid.mean())

    def rows(self):
        for i, az in enumerate(self.azimuths_deg):
            for j, d in enumerate(self.distances):
                yield {
                    "azimuth_deg": float(az),
                    "distance_m": float(d),
                    "conf_initial": float(self.conf_initial[i, j]),
                    "conf_final": float(self.conf_final[i, j]),
                    "lcr": float(self.lcr_grid[i, j]),
                }

    def to_csv(self, path) -> None:
        fields = ["azimuth_deg", "distance_m", "conf_initial", "conf_final", "lcr"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)

    def to_json_dict(self) -> dict:
        return {
            "azimuths_deg": self.azimuths_deg.tolist(),
            "distances_m": self.distances.tolist(),
            "conf_initial": self.conf_initial.tolist(),
            "conf_final": self.conf_final.tolist(),
            "lcr": self.lcr_grid.tolist(),
            "mean_lcr": self.mean_lcr,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)


def _score_views(detector, views_rendered) -> list[float]:
    if hasattr(detector, "score_batch"):
        return [float(v) for v in detector.score_batch(views_rendered)]
    if hasattr(detector, "score_view"):
        return [float(detector.score_view(v)) for v in views_rendered]
    return [float(detector(v)) for v in views_rendered]


def sweep_eval(
    initial_cloud: GaussianCloud,
    final_cloud: GaussianCloud,
    views: ViewpointSet,
    detector,
    settings: RenderSettings | None = None,
    floor: float = CONFIDENCE_FLOOR,
) -> SweepResult:
    """Score un-augmented renders of both clouds over the viewpoint grid.

    `detector` is a per-view scorer (callable or .score_view) or batch
    scorer (.score_batch). View pairs are pose-matched by construction.
    """
    settings = settings or RenderSettings()
    rendered_initial = [render(initial_cloud, pose, settings) for pose in views]
    rendered_final = [render(final_cloud, pose, settings) for pose in views]
    conf_i = _score_views(detector, rendered_initial)
    conf_f = _score_views(detector, rendered_final)

    a_count, d_count = views.grid_shape()
    if a_count * d_count != len(views):
        a_count, d_count = len(views), 1
    grid_i = np.array(conf_i).reshape(a_count, d_count)
    grid_f = np.array(conf_f).reshape(a_count, d_count)
    grid_lcr = np.log(np.maximum(grid_i, floor) / np.maximum(grid_f, floor))
    azimuths = (
        views.azimuths_deg()
        if views.azimuth_count == a_count
        else np.arange(a_count, dtype=np.float64)
    )
    distances = (
        np.array(views.distances, dtype=np.float64)
        if len(views.distances) == d_count
        else np.zeros(d_count)
    )
    return SweepResult(
        azimuths_deg=azimuths,
        distances=distances,
        conf_initial=grid_i,
        conf_final=grid_f,
        lcr_grid=grid_lcr,
    )
