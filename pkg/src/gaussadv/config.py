"""Flat INI-style run configuration shared by the command-line tools.

Sections hold key = value pairs with no nesting. Every key maps one-to-one
onto a --section-key command-line flag; flags override file values. The
fully resolved table is snapshotted into each run manifest.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .attack import AttackConfig, DimensionMask, WeightState
from .augmentation import AugmentConfig
from .cameras import ViewpointSet, make_orbit_viewpoints
from .errors import ConfigError
from .renderer import RenderSettings
from .victim import ToyDetectorSpec


@dataclass(frozen=True)
class ConfigKey:
    section: str
    name: str
    default: str
    help: str
    parse: type = str

    @property
    def flag(self) -> str:
        return f"--{self.section}-{self.name.replace('_', '-')}"

    @property
    def dest(self) -> str:
        return f"{self.section}_{self.name}"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


SCHEMA: tuple[ConfigKey, ...] = (
    ConfigKey("views", "azimuths", "12", "evenly spaced azimuth count", int),
    ConfigKey("views", "distances", "3,5,10", "orbit radii in meters", _floats),
    ConfigKey("views", "elevation_deg", "10", "camera elevation above the orbit plane", float),
    ConfigKey("views", "resolution", "256", "square image side in pixels", int),
    ConfigKey("views", "fov_deg", "40", "horizontal field of view in degrees", float),
    ConfigKey("render", "background", "0.5", "background gray level in [0,1]", float),
    ConfigKey("render", "near", "0.05", "near-plane cull distance (m)", float),
    ConfigKey("render", "far", "12", "background depth constant (m)", float),
    ConfigKey("filter", "knn", "16", "neighbor count for density estimation", int),
    ConfigKey("filter", "prune_percentile", "0.105", "density percentile removed by pruning", float),
    ConfigKey("filter", "sigma_gain", "0.01", "denoising strength (world units * pixel)", float),
    ConfigKey("filter", "min_survivors", "16", "floor on post-prune cloud size", int),
    ConfigKey("augment", "sigma0", "0.01", "base image-noise std", float),
    ConfigKey("augment", "noise_gain", "0.005", "noise std added per meter of depth", float),
    ConfigKey("augment", "contrast_lo", "0.9", "channel contrast lower bound", float),
    ConfigKey("augment", "contrast_hi", "1.1", "channel contrast upper bound", float),
    ConfigKey("augment", "shift_lo", "-0.05", "channel shift lower bound", float),
    ConfigKey("augment", "shift_hi", "0.05", "channel shift upper bound", float),
    ConfigKey("augment", "shadow_alpha", "0.05", "shadow sigmoid sharpness per meter", float),
    ConfigKey("augment", "shadow_strength", "0.85", "darkening floor inside the shadow", float),
    ConfigKey("augment", "shadow_quantile_lo", "0.3", "low end of the shadow depth quantile", float),
    ConfigKey("augment", "shadow_quantile_hi", "0.7", "high end of the shadow depth quantile", float),
    ConfigKey("augment", "occl_p_size", "0.1", "max occluder side as an image fraction", float),
    ConfigKey("augment", "occl_probability", "0.5", "per-epoch occlusion probability", float),
    ConfigKey("augment", "occl_fill", "0.5", "occluder fill gray level", float),
    ConfigKey("attack", "epochs", "50", "gradient descent epochs", int),
    ConfigKey("attack", "learning_rate", "0.03", "gradient descent step size", float),
    ConfigKey("attack", "mask", "full", "parameter subset: full, geometry, appearance, or slot list", str),
    ConfigKey("attack", "lambda_min", "0.4", "floor on the shape-loss weight", float),
    ConfigKey("attack", "gamma_scale", "10.0", "adversarial loss scale divisor", float),
    ConfigKey("detector", "kind", "toy", "victim kind: toy (differentiable) or adapter", str),
    ConfigKey("detector", "seed", "35", "toy detector weight seed", int),
    ConfigKey("detector", "kernels", "8", "toy detector kernel count", int),
    ConfigKey("detector", "kernel_size", "5", "toy detector kernel side", int),
    ConfigKey("detector", "calibration_target", "0.8", "clean-reference confidence target", float),
    ConfigKey("detector", "adapter_exe", "", "external scorer executable (adapter kind)", str),
    ConfigKey("detector", "adapter_dir", "", "exchange directory (adapter kind)", str),
)


class RunConfig:
    """Resolved configuration: defaults < config file < explicit flags."""

    def __init__(self, values: dict[str, str]):
        self._raw = dict(values)

    @staticmethod
    def load(path: str | None, overrides: dict[str, str | None]) -> "RunConfig":
        values = {key.dest: key.default for key in SCHEMA}
        if path:
            parser = configparser.ConfigParser()
            try:
                with open(path) as fh:
                    parser.read_file(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            except configparser.Error as e:
                raise ConfigError(f"config parse error: {e}") from e
            known = {(k.section, k.name): k for k in SCHEMA}
            for section in parser.sections():
                for name, value in parser.items(section):
                    key = known.get((section, name))
                    if key is None:
                        raise ConfigError(f"unknown config key [{section}] {name}")
                    values[key.dest] = value
        for dest, value in overrides.items():
            if value is not None:
                values[dest] = str(value)
        config = RunConfig(values)
        for key in SCHEMA:  # fail fast on unparseable values
            config._get(key.dest)
        return config

    def _get(self, dest: str):
        key = next(k for k in SCHEMA if k.dest == dest)
        raw = self._raw[dest]
        try:
            return key.parse(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for [{key.section}] {key.name}: {raw!r}") from e

    def snapshot(self) -> dict[str, str]:
        """The fully resolved key = value table, for the manifest."""
        return dict(sorted(self._raw.items()))

    def viewpoints(self) -> ViewpointSet:
        return make_orbit_viewpoints(
            azimuths=self._get("views_azimuths"),
            distances=list(self._get("views_distances")),
            elevation_deg=self._get("views_elevation_deg"),
            resolution=self._get("views_resolution"),
            fov_deg=self._get("views_fov_deg"),
        )

    def render_settings(self) -> RenderSettings:
        import numpy as np

        return RenderSettings(
            background=np.full(3, self._get("render_background")),
            near=self._get("render_near"),
            far=self._get("render_far"),
        )

    def filter_config(self):
        from .filtering import FilterConfig

        return FilterConfig(
            k=self._get("filter_knn"),
            prune_percentile=self._get("filter_prune_percentile"),
            sigma_gain=self._get("filter_sigma_gain"),
            min_survivors=self._get("filter_min_survivors"),
        )

    def augment_config(self, seed: int) -> AugmentConfig:
        return AugmentConfig(
            sigma0=self._get("augment_sigma0"),
            noise_gain=self._get("augment_noise_gain"),
            contrast_range=(self._get("augment_contrast_lo"), self._get("augment_contrast_hi")),
            shift_range=(self._get("augment_shift_lo"), self._get("augment_shift_hi")),
            shadow_alpha=self._get("augment_shadow_alpha"),
            shadow_strength=self._get("augment_shadow_strength"),
            shadow_quantile_range=(
                self._get("augment_shadow_quantile_lo"),
                self._get("augment_shadow_quantile_hi"),
            ),
            occl_p_size=self._get("augment_occl_p_size"),
            occl_probability=self._get("augment_occl_probability"),
            occl_fill=self._get("augment_occl_fill"),
            seed=seed,
        )

    def detector_kind(self) -> str:
        return self._get("detector_kind")

    def detector_spec(self) -> ToyDetectorSpec:
        return ToyDetectorSpec(
            seed=self._get("detector_seed"),
            n_kernels=self._get("detector_kernels"),
            kernel_size=self._get("detector_kernel_size"),
        )

    def calibration_target(self) -> float:
        return self._get("detector_calibration_target")

    def adapter(self):
        from .victim import AdapterConfig

        exe = self._get("detector_adapter_exe")
        if not exe:
            raise ConfigError("[detector] adapter_exe is required for kind = adapter")
        exchange = self._get("detector_adapter_dir")
        if not exchange:
            raise ConfigError("[detector] adapter_dir is required for kind = adapter")
        return AdapterConfig(executable=exe, exchange_dir=exchange)

    def attack_config(self, seed: int) -> AttackConfig:
        return AttackConfig(
            views=self.viewpoints(),
            epochs=self._get("attack_epochs"),
            learning_rate=self._get("attack_learning_rate"),
            mask=DimensionMask.parse(self._get("attack_mask")),
            augment=self.augment_config(seed),
            detector_id=self.detector_kind(),
            detector_spec=self.detector_spec(),
            seed=seed,
            render_settings=self.render_settings(),
            weight_state=WeightState(
                lambda_min=self._get("attack_lambda_min"),
                gamma_scale=self._get("attack_gamma_scale"),
            ),
        )

    @staticmethod
    def write_example(path) -> None:
        lines = []
        section = None
        for key in SCHEMA:
            if key.section != section:
                section = key.section
                lines.append(f"\n[{section}]" if lines else f"[{section}]")
            lines.append(f"{key.name} = {key.default}")
        Path(path).write_text("\n".join(lines) + "\n")
