import io
import logging
import os

import pandas as pd
import pytest
import trimesh

from src import pipeline
from src.errors import NonFiniteLossError
from src.geometry import TriangleMesh
from src.mesh_io import mesh_write
from src.parquet_loader import get_parquet_path, save_to_parquet
from src.run_pipeline import THREAD_VARS, build_parser, configure_logging, main, pin_threads

TINY_TOML = """
[dataset]
families = ["sphere"]
shapes_per_family = 1
splits = [1.0, 0.0, 0.0]

[fracture]
resolution = 20
retention_lo = 0.0
retention_hi = 1.0
"""


def test_parser_defaults():
    args = build_parser().parse_args(["train", "--seed", "3"])
    assert args.command == "train" and args.seed == 3
    assert args.resolution is None
    args = build_parser().parse_args(["ablate", "--configs", "Occ", "SDF"])
    assert args.configs == ["Occ", "SDF"]


def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        main(["polish"])
    assert info.value.code == 1


def test_config_errors_exit_with_one(tmp_path):
    assert main(["fracture", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 1
    assert main(["fracture", "--threads", "0", "--out", str(tmp_path)]) == 1
    assert main(["fracture", "--resolution", "1", "--out", str(tmp_path)]) == 1


def test_data_errors_exit_with_two(tmp_path):
    assert main(["sample", "--out", str(tmp_path)]) == 2
    assert main(["export", str(tmp_path / "absent.obj"), str(tmp_path / "out.ply")]) == 2


def test_numeric_errors_exit_with_three(tmp_path, monkeypatch):
    def _diverge(*args, **kwargs):
        raise NonFiniteLossError("Training loss is nan")

    monkeypatch.setattr(pipeline, "cmd_train", _diverge)
    assert main(["train", "--out", str(tmp_path)]) == 3


def test_unexpected_errors_exit_with_one(tmp_path, monkeypatch):
    def _crash(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "cmd_eval", _crash)
    assert main(["eval", "--out", str(tmp_path)]) == 1


def test_fracture_command(tmp_path, capsys):
    config = tmp_path / "tiny.toml"
    config.write_text(TINY_TOML)
    out = tmp_path / "out"
    assert main(["fracture", "--config", str(config), "--out", str(out), "--seed", "4"]) == 0
    printed = capsys.readouterr().out
    assert "=== fracture ===" in printed
    assert "manifest_sha256" in printed
    assert os.path.exists(out / "dataset" / "manifest.json")


def test_export_command(tmp_path, capsys):
    sphere = trimesh.creation.icosphere(subdivisions=1)
    source = tmp_path / "ball.obj"
    mesh_write(str(source), TriangleMesh(sphere.vertices, sphere.faces))
    assert main(["export", str(source), str(tmp_path / "ball.ply"), "--ascii"]) == 0
    assert (tmp_path / "ball.ply").read_bytes().startswith(b"ply\nformat ascii 1.0")
    assert "=== export ===" in capsys.readouterr().out


def test_pin_threads_overrides_inherited_values(monkeypatch):
    for var in THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv("MKL_NUM_THREADS", "8")
    pin_threads(2)
    assert all(os.environ[var] == "2" for var in THREAD_VARS)
    pin_threads(0)
    assert os.environ["OMP_NUM_THREADS"] == "1"


def test_log_records_read_like_stderr_warnings():
    stream = io.StringIO()
    configure_logging("INFO", stream=stream)
    logging.getLogger("src.pipeline").warning("Skipping %s", "mug_003")
    logging.getLogger("src.sampling").debug("hidden")
    logging.getLogger("src.training").info("Epoch 1")
    assert stream.getvalue().splitlines() == ["Warning: Skipping mug_003", "Info: Epoch 1"]


def test_report_command(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2
    records = pd.DataFrame({
        "shape_id": ["mug_000", "mug_001", "sphere_000"],
        "family": ["mug", "mug", "sphere"],
        "empty": [False, True, False],
    })
    save_to_parquet(records, get_parquet_path(str(tmp_path)))
    assert main(["report", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert "=== report ===" in printed
    assert '"empty_shapes": [\n    "mug_001"\n  ]' in printed
    summary = pipeline.cmd_report(str(tmp_path))
    assert summary["total_records"] == 3 and summary["non_empty"] == 2
    assert summary["ne_pct_by_family"] == {"mug": 50.0, "sphere": 100.0}
