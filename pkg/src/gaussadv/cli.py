"""Command-line front end: gen, filter, attack, render, eval.

Every run resolves its configuration (defaults < --config file < flags),
executes one pipeline stage, and writes a manifest recording the resolved
configuration, master seed, input/output content hashes, and timings.
On failure, partial outputs are removed and the manifest carries the
error. Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric, 5 adapter.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, errors
from .attack import run_attack
from .augmentation import apply_all, make_epoch_stream
from .cloud import make_synthetic_cloud
from .config import SCHEMA, RunConfig
from .filtering import artifact_removal, filter_cloud, make_planted_cloud, topological_prune, structural_denoise
from .gsio import load_cloud, save_cloud, save_pfm, save_png
from .metrics import sweep_eval
from .renderer import render
from .victim import AdapterScorer, ToyDetector, calibrate_toy_detector

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_ADAPTER = 5

_ERROR_CODES = (
    ((errors.ConfigError, errors.InvalidParameterError, errors.UnknownShapeError), EXIT_CONFIG),
    ((errors.AdapterTimeoutError, errors.MalformedResponseError,
      errors.NonFiniteConfidenceError, errors.DetectorFailureError), EXIT_ADAPTER),
    ((errors.NonFiniteLossError, errors.DegenerateCovarianceError,
      errors.NonFiniteValueError, errors.TooFewGaussiansError), EXIT_NUMERIC),
    ((errors.IoFailureError, errors.MissingFieldError, errors.UnsupportedFormatError, OSError), EXIT_IO),
)


def _exit_code(exc: BaseException) -> int:
    for types, code in _ERROR_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_NUMERIC if isinstance(exc, errors.GaussAdvError) else 1


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunContext:
    """Tracks artifacts and writes the manifest at the end of a command."""

    def __init__(self, command: str, args, config: RunConfig):
        self.command = command
        self.args = args
        self.config = config
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.extra: dict = {}
        self.started = time.time()

    def track_input(self, path) -> Path:
        path = Path(path)
        self.inputs.append(path)
        return path

    def track_output(self, path) -> Path:
        path = Path(path)
        self.outputs.append(path)
        return path

    def out_path(self, name: str) -> Path:
        return self.track_output(self.out_dir / name)

    def cleanup_partial(self) -> None:
        for path in self.outputs:
            try:
                if path.exists():
                    path.unlink()
            except OSError:
                pass

    def write_manifest(self, error: BaseException | None = None) -> Path:
        doc = {
            "command": self.command,
            "argv": sys.argv[1:],
            "version": __version__,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "config": self.config.snapshot(),
            "inputs": {str(p): _sha256(p) for p in self.inputs if p.exists()},
            "outputs": {str(p): _sha256(p) for p in self.outputs if p.exists()},
            "wall_time_s": time.time() - self.started,
            "status": "error" if error else "ok",
        }
        if error:
            doc["error"] = f"{type(error).__name__}: {error}"
        doc.update(self.extra)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
        return path


def _toy_detector(ctx: RunContext, reference_rgb) -> ToyDetector:
    spec = calibrate_toy_detector(
        ctx.config.detector_spec(), reference_rgb, target=ctx.config.calibration_target()
    )
    ctx.extra["detector_bias"] = spec.bias
    return ToyDetector(spec)


def _reference_view(cloud, views, settings):
    """Calibration view: azimuth 0 at the middle configured distance."""
    idx = len(views.distances) // 2 if views.distances else 0
    return render(cloud, views[idx], settings)


def cmd_gen(ctx: RunContext) -> None:
    cloud = make_synthetic_cloud(ctx.args.shape, ctx.args.count, ctx.args.seed)
    out = ctx.track_output(ctx.args.output or ctx.out_dir / "asset.ply")
    save_cloud(cloud, out)
    ctx.extra["gaussians"] = cloud.count


def cmd_filter(ctx: RunContext) -> None:
    cloud = load_cloud(ctx.track_input(ctx.args.input))
    views = ctx.config.viewpoints()
    fc = ctx.config.filter_config()
    stages = ctx.args.stages.split("+") if ctx.args.stages else ["tp", "sd"]
    unknown = set(stages) - {"tp", "sd", "none"}
    if unknown:
        raise errors.ConfigError(f"unknown filter stages: {sorted(unknown)}")
    filtered, index_map, removed = filter_cloud(
        cloud, views, fc, prune="tp" in stages, denoise="sd" in stages
    )
    out = ctx.track_output(ctx.args.output or ctx.out_dir / "filtered.ply")
    save_cloud(filtered, out)

    report = {
        "input_count": cloud.count,
        "removed_count": removed,
        "removed_indices": index_map.removed_indices.tolist(),
        "stages": stages,
    }
    if ctx.args.plant_file:
        planted_doc = json.loads(Path(ctx.track_input(ctx.args.plant_file)).read_text())
        from .filtering import PlantedCloud

        planted = PlantedCloud(
            cloud=cloud,
            floater_indices=np.array(planted_doc["floaters"], dtype=np.int64),
            speck_indices=np.array(planted_doc["specks"], dtype=np.int64),
        )
        report["artifact_removal"] = artifact_removal(planted, filtered, index_map)
    if ctx.args.report:
        Path(ctx.track_output(ctx.args.report)).write_text(json.dumps(report, indent=2))
    ctx.extra["filter_report"] = report


def cmd_attack(ctx: RunContext) -> None:
    cloud = load_cloud(ctx.track_input(ctx.args.input))
    config = ctx.config.attack_config(ctx.args.seed)
    if config.detector_id != "toy":
        raise errors.ConfigError("attack requires the differentiable toy detector")
    reference = _reference_view(cloud, config.views, config.render_settings)
    detector = _toy_detector(ctx, reference.rgb)
    config.detector_spec = detector.spec
    adversarial, report = run_attack(cloud, config, detector)
    out = ctx.track_output(ctx.args.output or ctx.out_dir / "adversarial.ply")
    save_cloud(adversarial, out)
    report.to_json(ctx.out_path("attack_report.json"))
    report.to_csv(ctx.out_path("attack_report.csv"))
    ctx.extra["final_lcr"] = report.final_lcr
    ctx.extra["report_digest"] = report.content_digest()


def cmd_render(ctx: RunContext) -> None:
    cloud = load_cloud(ctx.track_input(ctx.args.input))
    views = ctx.config.viewpoints()
    settings = ctx.config.render_settings()
    aug = ctx.config.augment_config(ctx.args.seed) if ctx.args.augment else None
    tiles = []
    for vi, pose in enumerate(views):
        view = render(cloud, pose, settings)
        if aug is not None:
            view = apply_all(view, aug, make_epoch_stream(ctx.args.seed, 0, vi))
        save_png(view.rgb, ctx.out_path(f"view_{vi:04d}.png"))
        if ctx.args.alpha:
            save_png(view.alpha, ctx.out_path(f"alpha_{vi:04d}.png"))
        if ctx.args.depth:
            save_pfm(view.depth, ctx.out_path(f"depth_{vi:04d}.pfm"))
        tiles.append(view.rgb)
    # Contact-sheet grid: one row per azimuth, one column per distance.
    rows, cols = views.grid_shape()
    if rows * cols == len(tiles) and rows and cols:
        h, w, _ = tiles[0].shape
        grid = np.ones((rows * h, cols * w, 3))
        for i in range(rows):
            for j in range(cols):
                grid[i * h : (i + 1) * h, j * w : (j + 1) * w] = tiles[i * cols + j]
        save_png(grid, ctx.out_path("grid.png"))


def cmd_eval(ctx: RunContext) -> None:
    initial = load_cloud(ctx.track_input(ctx.args.initial))
    final = load_cloud(ctx.track_input(ctx.args.final))
    views = ctx.config.viewpoints()
    settings = ctx.config.render_settings()
    kind = ctx.config.detector_kind()
    if kind == "toy":
        detector = _toy_detector(ctx, _reference_view(initial, views, settings).rgb)
    elif kind == "adapter":
        detector = AdapterScorer(ctx.config.adapter())
    else:
        raise errors.ConfigError(f"unknown detector kind {kind!r}")
    result = sweep_eval(initial, final, views, detector, settings)
    result.to_csv(ctx.out_path("sweep.csv"))
    result.to_json(ctx.out_path("sweep.json"))
    ctx.extra["mean_lcr"] = result.mean_lcr


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaussadv",
        description="Adversarial 3D Gaussian splat pipeline: generate, filter, attack, render, evaluate.",
    )
    parser.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI-style run configuration file")
    common.add_argument("--seed", type=int, default=0, help="master seed recorded in the manifest")
    common.add_argument("--threads", type=int, default=0, help="worker threads (0 = library default)")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory")
    for key in SCHEMA:
        common.add_argument(key.flag, dest=key.dest, metavar="V",
                            help=f"[{key.section}] {key.name}: {key.help}")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic asset")
    p.add_argument("--shape", default="box-car", choices=["box-car", "sphere", "plane"])
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--output", help="asset path (.ply or .json); default OUT/asset.ply")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("filter", parents=[common], help="prune and denoise an asset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="filtered asset path; default OUT/filtered.ply")
    p.add_argument("--prune-percentile", dest="filter_prune_percentile", metavar="P",
                   help="alias for --filter-prune-percentile")
    p.add_argument("--knn", dest="filter_knn", metavar="K", help="alias for --filter-knn")
    p.add_argument("--sigma-gain", dest="filter_sigma_gain", metavar="G",
                   help="alias for --filter-sigma-gain")
    p.add_argument("--stages", default="tp+sd", help="tp, sd, tp+sd, or none")
    p.add_argument("--report", help="write a JSON filtering report here")
    p.add_argument("--plant-file", help="ground-truth planted artifact indices (JSON)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("attack", parents=[common], help="optimize an adversarial asset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="adversarial asset path; default OUT/adversarial.ply")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("render", parents=[common], help="render orbit views to PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--augment", action="store_true", help="apply the augmentation stack")
    p.add_argument("--alpha", action="store_true", help="also export coverage maps")
    p.add_argument("--depth", action="store_true", help="also export PFM depth maps")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="confidence sweep over the viewpoint grid")
    p.add_argument("--initial", required=True, help="clean asset")
    p.add_argument("--final", required=True, help="adversarial asset")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        try:
            import numba

            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass
    try:
        overrides = {k.dest: getattr(args, k.dest, None) for k in SCHEMA}
        config = RunConfig.load(args.config, overrides)
    except errors.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    ctx = RunContext(args.command, args, config)
    try:
        args.func(ctx)
    except Exception as e:  # map to exit codes, keep partials off disk
        ctx.cleanup_partial()
        ctx.write_manifest(error=e)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return _exit_code(e)
    manifest = ctx.write_manifest()
    print(f"{args.command}: ok ({manifest})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
