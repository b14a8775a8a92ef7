import hashlib
import json
import re
from pathlib import Path

import numpy as np
import pytest

from gaussadv.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    build_parser,
    main,
)
from gaussadv.config import SCHEMA, RunConfig
from gaussadv.filtering import make_planted_cloud
from gaussadv.gsio import save_cloud


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


SMALL_VIEWS = ["--views-azimuths", "2", "--views-distances", "4", "--views-resolution", "48"]


def test_gen_twice_identical_hashes(tmp_path):
    o1, o2 = tmp_path / "a", tmp_path / "b"
    args = ["gen", "--shape", "box-car", "--count", "200", "--seed", "7"]
    assert main(args + ["--out", str(o1)]) == EXIT_OK
    assert main(args + ["--out", str(o2)]) == EXIT_OK
    assert _sha(o1 / "asset.ply") == _sha(o2 / "asset.ply")


def test_manifest_lists_outputs_with_hashes(tmp_path):
    out = tmp_path / "run"
    assert main(["gen", "--count", "50", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    asset = str(out / "asset.ply")
    assert manifest["outputs"][asset] == _sha(asset)
    assert manifest["seed"] == 0
    assert "config" in manifest and "views_azimuths" in manifest["config"]


def test_filter_pipeline_and_report(tmp_path):
    gen_out = tmp_path / "gen"
    main(["gen", "--count", "400", "--seed", "3", "--out", str(gen_out)])
    filt_out = tmp_path / "filt"
    code = main(
        ["filter", "--input", str(gen_out / "asset.ply"), "--out", str(filt_out),
         "--report", str(filt_out / "report.json")] + SMALL_VIEWS
    )
    assert code == EXIT_OK
    report = json.loads((filt_out / "report.json").read_text())
    assert report["removed_count"] == int(np.floor(0.105 * 400))
    assert len(report["removed_indices"]) == report["removed_count"]


def test_filter_artifact_removal_with_plant_file(tmp_path):
    planted = make_planted_cloud(base_count=500, floaters=15, specks=20, seed=2)
    asset = tmp_path / "planted.ply"
    save_cloud(planted.cloud, asset)
    plant_file = tmp_path / "plant.json"
    plant_file.write_text(json.dumps({
        "floaters": planted.floater_indices.tolist(),
        "specks": planted.speck_indices.tolist(),
    }))
    out = tmp_path / "out"
    code = main(
        ["filter", "--input", str(asset), "--out", str(out),
         "--plant-file", str(plant_file), "--report", str(out / "r.json")] + SMALL_VIEWS
    )
    assert code == EXIT_OK
    report = json.loads((out / "r.json").read_text())
    assert 0.0 <= report["artifact_removal"] <= 1.0
    assert report["artifact_removal"] >= 0.8


def test_small_attack_and_eval_roundtrip(tmp_path):
    gen_out = tmp_path / "gen"
    main(["gen", "--count", "60", "--seed", "1", "--out", str(gen_out)])
    attack_out = tmp_path / "atk"
    code = main(
        ["attack", "--input", str(gen_out / "asset.ply"), "--out", str(attack_out),
         "--attack-epochs", "2", "--seed", "9"] + SMALL_VIEWS
    )
    assert code == EXIT_OK
    assert (attack_out / "adversarial.ply").exists()
    report = json.loads((attack_out / "attack_report.json").read_text())
    assert len(report["records"]) == 2
    eval_out = tmp_path / "eval"
    code = main(
        ["eval", "--initial", str(gen_out / "asset.ply"),
         "--final", str(attack_out / "adversarial.ply"), "--out", str(eval_out)] + SMALL_VIEWS
    )
    assert code == EXIT_OK
    sweep = json.loads((eval_out / "sweep.json").read_text())
    assert np.array(sweep["lcr"]).shape == (2, 1)


def test_render_outputs_grid_and_maps(tmp_path):
    gen_out = tmp_path / "gen"
    main(["gen", "--count", "80", "--out", str(gen_out)])
    render_out = tmp_path / "render"
    code = main(
        ["render", "--input", str(gen_out / "asset.ply"), "--out", str(render_out),
         "--depth", "--alpha", "--augment"] + SMALL_VIEWS
    )
    assert code == EXIT_OK
    assert (render_out / "view_0000.png").exists()
    assert (render_out / "alpha_0001.png").exists()
    assert (render_out / "depth_0000.pfm").exists()
    assert (render_out / "grid.png").exists()


def test_missing_input_gives_io_exit_code(tmp_path):
    code = main(["filter", "--input", str(tmp_path / "nope.ply"), "--out", str(tmp_path / "o")])
    assert code == EXIT_IO
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "error"


def test_bad_config_value_gives_config_exit_code(tmp_path):
    code = main(["gen", "--count", "10", "--out", str(tmp_path / "o"),
                 "--views-azimuths", "banana"])
    assert code == EXIT_CONFIG


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[views]\nwarp_factor = 9\n")
    code = main(["gen", "--count", "10", "--out", str(tmp_path / "o"), "--config", str(cfg)])
    assert code == EXIT_CONFIG


def test_config_file_overridden_by_flags(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[views]\nazimuths = 6\nresolution = 32\n")
    out = tmp_path / "r"
    main(["gen", "--count", "40", "--out", str(tmp_path / "g")])
    code = main(
        ["render", "--input", str(tmp_path / "g" / "asset.ply"), "--out", str(out),
         "--config", str(cfg), "--views-azimuths", "3", "--views-distances", "4"]
    )
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["views_azimuths"] == "3"  # flag wins
    assert manifest["config"]["views_resolution"] == "32"  # file wins over default
    assert len(list(out.glob("view_*.png"))) == 3


def test_help_documents_every_config_key():
    parser = build_parser()
    # every subparser inherits the common flags; check one of them
    sub = None
    for action in parser._actions:
        if hasattr(action, "choices") and action.choices and "gen" in action.choices:
            sub = action.choices["gen"]
    help_text = sub.format_help()
    for key in SCHEMA:
        assert key.flag in help_text, f"{key.flag} missing from --help"


def test_flags_and_config_keys_are_bijective():
    flags = {key.flag for key in SCHEMA}
    dests = {key.dest for key in SCHEMA}
    assert len(flags) == len(SCHEMA)
    assert len(dests) == len(SCHEMA)
    for key in SCHEMA:
        assert key.flag == f"--{key.section}-{key.name}".replace("_", "-")


def test_example_config_roundtrips(tmp_path):
    path = tmp_path / "example.ini"
    RunConfig.write_example(path)
    cfg = RunConfig.load(str(path), {k.dest: None for k in SCHEMA})
    assert cfg.snapshot() == RunConfig.load(None, {}).snapshot()


def test_partial_outputs_removed_on_failure(tmp_path, monkeypatch):
    gen_out = tmp_path / "g"
    main(["gen", "--count", "40", "--out", str(gen_out)])
    out = tmp_path / "fail"

    import gaussadv.cli as cli_mod

    real_sweep = cli_mod.sweep_eval

    def boom(*a, **k):
        raise cli_mod.errors.NonFiniteLossError(0, "synthetic failure")

    monkeypatch.setattr(cli_mod, "sweep_eval", boom)
    code = main(
        ["eval", "--initial", str(gen_out / "asset.ply"),
         "--final", str(gen_out / "asset.ply"), "--out", str(out)] + SMALL_VIEWS
    )
    assert code == 4
    assert not (out / "sweep.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "error"
    monkeypatch.setattr(cli_mod, "sweep_eval", real_sweep)
