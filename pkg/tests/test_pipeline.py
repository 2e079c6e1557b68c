import json
import os

import numpy as np
import pytest
import trimesh

from src.config import PipelineConfig
from src.errors import MissingArtifactError
from src.geometry import TriangleMesh
from src.mesh_io import mesh_read, mesh_write
from src.pipeline import (
    ArtifactPaths,
    cmd_ablate,
    cmd_export,
    cmd_fracture,
    cmd_infer,
    cmd_report,
    cmd_sample,
    load_manifest,
    load_tuple,
    plan_jobs,
    run_full_pipeline,
)


def tiny_document(**dataset):
    document = {
        "dataset": {"families": ["sphere", "box"], "shapes_per_family": 2,
                    "splits": [1.0, 0.0, 0.0], "seed": 1},
        "fracture": {"resolution": 24, "retention_lo": 0.0, "retention_hi": 1.0,
                     "primitive": {"kinds": ["half-space"]}},
        "sampling": {"n_total": 800},
        "network": {"code_dim_complete": 4, "code_dim_break": 4, "hidden": 16, "depth": 2,
                    "skip_layer": 0},
        "training": {"epochs": 3, "shapes_per_batch": 2, "points_per_shape": 128},
        "inference": {"steps": 2, "points": 128, "resolution": 16, "fallback_resolution": 16,
                      "split": "train"},
        "eval": {"n_samples": 500},
    }
    document["dataset"].update(dataset)
    return document


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    config = PipelineConfig.from_dict(tiny_document())
    return out, config, run_full_pipeline(config, out)


def test_full_pipeline_writes_every_artifact(run):
    out, _, summary = run
    assert summary["fracture"]["counts"]["accepted"] >= 1
    accepted = summary["fracture"]["counts"]["accepted"]
    assert summary["sample"]["written"] == accepted
    assert all(r["label_agreement"] >= 0.99 for r in summary["sample"]["shapes"] if r["status"] == "ok")
    assert summary["train"]["epochs"] == 3
    assert len(summary["infer"]["shapes"]) == accepted
    for rel in ("dataset/manifest.json", "dataset/summary.json", "samples/summary.json",
                "model/checkpoint.bin", "model/train_log.jsonl", "model/summary.json",
                "inference/summary.json", "eval/report.json", "eval/table.csv",
                "eval/records.parquet"):
        assert os.path.exists(os.path.join(out, rel)), rel
    report = json.loads(open(os.path.join(out, "eval", "report.json")).read())
    assert len(report["records"]) == accepted


def test_manifest_entries(run):
    out, _, _ = run
    manifest = load_manifest(ArtifactPaths(out))
    assert manifest["version"] == 1
    ids = [entry["shape_id"] for entry in manifest["shapes"]]
    assert ids == ["sphere_000_f0", "sphere_001_f0", "box_000_f0", "box_001_f0"]
    for entry in manifest["shapes"]:
        assert entry["split"] == "train"
        if entry["status"] == "accepted":
            for rel in entry["files"].values():
                assert os.path.exists(os.path.join(out, rel))


def test_stored_tuple_rebuilds(run):
    out, _, _ = run
    paths = ArtifactPaths(out)
    entry = next(e for e in load_manifest(paths)["shapes"] if e["status"] == "accepted")
    tuple_ = load_tuple(paths, entry)
    points = np.random.default_rng(0).uniform(-0.5, 0.5, size=(200, 3))
    c, f, r = tuple_.complete(points), tuple_.fractured(points), tuple_.restoration(points)
    np.testing.assert_allclose(f.occ + r.occ, c.occ)


def test_report_reads_back_eval_records(run, tmp_path):
    out, _, summary = run
    report = cmd_report(out)
    assert report["total_records"] == len(summary["eval"]["records"])
    assert set(report["families"]) <= {"sphere", "box"}
    assert len(report["empty_shapes"]) == report["total_records"] - report["non_empty"]
    with pytest.raises(MissingArtifactError, match="eval"):
        cmd_report(str(tmp_path))


def test_fracture_manifest_is_reproducible(tmp_path, run):
    _, config, summary = run
    again = cmd_fracture(config, str(tmp_path / "serial"), threads=1)
    threaded = cmd_fracture(config, str(tmp_path / "threaded"), threads=3)
    assert again["manifest_sha256"] == summary["fracture"]["manifest_sha256"]
    assert threaded["manifest_sha256"] == again["manifest_sha256"]


def test_missing_upstream_artifacts(tmp_path):
    config = PipelineConfig.from_dict(tiny_document())
    with pytest.raises(MissingArtifactError, match="fracture"):
        cmd_sample(config, str(tmp_path))
    with pytest.raises(MissingArtifactError, match="train"):
        cmd_infer(config, str(tmp_path))


def test_plan_jobs_multiplicity_and_rotation():
    config = PipelineConfig.from_dict(tiny_document(
        fractures_per_shape=2, class_multiplicity={"box": 2}, rotate_90=True,
        splits=[0.5, 0.0, 0.5],
    ))
    jobs = plan_jobs(config)
    boxes = [job for job in jobs if job.family == "box"]
    spheres = [job for job in jobs if job.family == "sphere"]
    assert len(spheres) == 4 and len(boxes) == 8
    assert [job.quarter_turns for job in boxes[:4]] == [0, 1, 2, 3]
    by_base = {}
    for job in jobs:
        by_base.setdefault(job.shape_id.rsplit("_f", 1)[0], set()).add(job.split)
    assert all(len(splits) == 1 for splits in by_base.values())
    assert sorted(s for splits in by_base.values() for s in splits) == ["test", "test", "train", "train"]


def test_open_mesh_is_recorded_and_skipped(tmp_path):
    meshes = tmp_path / "meshes" / "ball"
    meshes.mkdir(parents=True)
    sphere = trimesh.creation.icosphere(subdivisions=3, radius=0.4)
    mesh_write(str(meshes / "closed.obj"), TriangleMesh(sphere.vertices, sphere.faces))
    mesh_write(str(meshes / "open.obj"),
               TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]]))
    document = tiny_document(source="mesh_dir", mesh_dir=str(tmp_path / "meshes"), families=[])
    summary = cmd_fracture(PipelineConfig.from_dict(document), str(tmp_path / "out"))
    status = {entry["shape_id"]: entry["status"] for entry in summary["manifest"]["shapes"]}
    assert status["ball_open_f0"] == "failed"
    assert status["ball_closed_f0"] in ("accepted", "rejected")
    failed = next(e for e in summary["manifest"]["shapes"] if e["shape_id"] == "ball_open_f0")
    assert "OpenMeshError" in failed["error"]


def test_ablation_runs_share_the_dataset(run):
    out, config, _ = run
    table = cmd_ablate(config, out, names=["SDF"])
    assert table["config"].tolist() == ["SDF"]
    assert os.path.exists(os.path.join(out, "ablation", "SDF", "eval", "report.json"))
    assert os.path.exists(os.path.join(out, "ablation", "table.csv"))


def test_export_converts_formats(tmp_path):
    sphere = trimesh.creation.icosphere(subdivisions=1)
    source = str(tmp_path / "ball.obj")
    mesh_write(source, TriangleMesh(sphere.vertices, sphere.faces))
    destination = cmd_export(source, str(tmp_path / "ball.ply"), binary=False)
    mesh = mesh_read(destination)
    assert len(mesh.triangles) == len(sphere.faces)
    np.testing.assert_allclose(mesh.vertices, sphere.vertices, atol=1e-6)


def test_rerun_is_byte_identical(tmp_path, run):
    out, config, _ = run
    again = str(tmp_path / "again")
    run_full_pipeline(config, again)
    paths = ["model/checkpoint.bin", "eval/report.json", "eval/table.csv",
             "dataset/manifest.json", "inference/summary.json"]
    paths += [os.path.join("samples", name) for name in sorted(os.listdir(os.path.join(out, "samples")))]
    for rel in paths:
        with open(os.path.join(out, rel), "rb") as a, open(os.path.join(again, rel), "rb") as b:
            assert a.read() == b.read(), rel
