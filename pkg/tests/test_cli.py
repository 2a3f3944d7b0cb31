import json
import struct
import sys

import pytest
from click.testing import CliRunner

from app.cli import cli
from conftest import make_bumpy_sphere
from utils.errors import EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_TOPOLOGY
from utils.log import setup_logging
from utils.mesh_io import read_mesh, write_mesh

FAST = ["--coarse-iterations", "5", "--fine-iterations", "5", "--batch-size", "64", "--table-level", "2"]


@pytest.fixture(autouse=True, scope="module")
def _restore_logging():
    yield
    # CliRunner 关闭了它替换的 stderr
    setup_logging("INFO", stream=sys.stderr)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def bumpy_obj(workdir):
    path = workdir / "bumpy.obj"
    write_mesh(make_bumpy_sphere(2)[0], path)
    return path


@pytest.fixture(scope="module")
def encoded(workdir, bumpy_obj):
    path = workdir / "bumpy.hnsc"
    result = CliRunner().invoke(cli, ["encode", str(bumpy_obj), str(path), *FAST])
    assert result.exit_code == 0, result.output
    return path, result.output


def test_encode_50kb_preset_size(encoded):
    path, output = encoded
    assert path.stat().st_size == 56266
    assert "56266" in output
    assert "train_coarse" in output


def test_encode_progress_file(runner, workdir, bumpy_obj):
    progress = workdir / "progress.jsonl"
    result = runner.invoke(cli, [
        "encode", str(bumpy_obj), str(workdir / "progress.hnsc"), *FAST, "--progress-file", str(progress),
    ])
    assert result.exit_code == 0, result.output
    records = [json.loads(line) for line in progress.read_text(encoding="utf-8").splitlines()]
    assert {r["stage"] for r in records} == {"coarse", "fine"}
    assert all({"iteration", "loss", "lr"} <= set(r) for r in records)


def test_encode_torus_exits_with_topology_code(runner, workdir, torus):
    path = workdir / "torus.obj"
    write_mesh(torus, path)
    result = runner.invoke(cli, ["encode", str(path), str(workdir / "torus.hnsc"), *FAST])
    assert result.exit_code == EXIT_TOPOLOGY
    assert "genus" in result.output
    assert not (workdir / "torus.hnsc").exists()


def test_encode_missing_input(runner, workdir):
    result = runner.invoke(cli, ["encode", str(workdir / "missing.obj"), str(workdir / "x.hnsc"), *FAST])
    assert result.exit_code == EXIT_IO


def test_no_quantize_doubles_payload(runner, workdir, bumpy_obj):
    path = workdir / "fp32.hnsc"
    result = runner.invoke(cli, ["encode", str(bumpy_obj), str(path), *FAST, "--no-quantize"])
    assert result.exit_code == 0, result.output
    assert path.stat().st_size == 46 + 4 * (3051 + 25059)
    info = runner.invoke(cli, ["info", str(path)])
    assert "quantized: no" in info.output


def test_info(runner, encoded):
    path, _ = encoded
    result = runner.invoke(cli, ["info", str(path)])
    assert result.exit_code == 0, result.output
    assert "q_c: input_dim=3 H=20 W=12 L=0 params=3051" in result.output
    assert "q_f: input_dim=63 H=18 W=36 L=10 params=25059" in result.output
    assert "quantized: yes" in result.output
    assert "q_c=6102 q_f=50118 header=46 total=56266" in result.output


def test_decode_level_6_is_deterministic(runner, workdir, encoded):
    path, _ = encoded
    first, second = workdir / "a.ply", workdir / "b.ply"
    for target in (first, second):
        result = runner.invoke(cli, ["decode", str(path), str(target), "-k", "6"])
        assert result.exit_code == 0, result.output
        assert "顶点 40962" in result.output
    assert first.read_bytes() == second.read_bytes()
    mesh = read_mesh(first)
    assert (mesh.vertex_count, mesh.face_count) == (40962, 81920)


def test_decode_adaptive_and_coarse_only(runner, workdir, encoded):
    path, _ = encoded
    result = runner.invoke(cli, ["decode", str(path), str(workdir / "c.obj"), "-k", "3", "--coarse-only", "--adaptive"])
    assert result.exit_code == 0, result.output
    assert read_mesh(workdir / "c.obj").vertex_count >= 642


def test_decode_truncated_file(runner, workdir, encoded):
    path, _ = encoded
    broken = workdir / "truncated.hnsc"
    broken.write_bytes(path.read_bytes()[:-7])
    result = runner.invoke(cli, ["decode", str(broken), str(workdir / "t.obj")])
    assert result.exit_code == EXIT_FORMAT
    assert "truncation" in result.output


def test_decode_unsupported_version(runner, workdir, encoded):
    path, _ = encoded
    data = bytearray(path.read_bytes())
    struct.pack_into("<H", data, 4, 9)
    bumped = workdir / "v9.hnsc"
    bumped.write_bytes(bytes(data))
    result = runner.invoke(cli, ["info", str(bumped)])
    assert result.exit_code == EXIT_FORMAT
    assert "unsupported version" in result.output


def test_decode_missing_model(runner, workdir):
    result = runner.invoke(cli, ["decode", str(workdir / "nothing.hnsc"), str(workdir / "n.obj")])
    assert result.exit_code == EXIT_IO


def test_eval_identical_meshes(runner, workdir, bumpy_obj):
    record = workdir / "eval.jsonl"
    result = runner.invoke(cli, [
        "eval", str(bumpy_obj), str(bumpy_obj), "-n", "2000", "--json-out", str(record),
    ])
    assert result.exit_code == 0, result.output
    assert "d_pm x1e4 : 0.00" in result.output
    assert "d_n (deg) : 0.00" in result.output
    line = json.loads(record.read_text(encoding="utf-8").splitlines()[-1])
    assert line["n_samples"] == 2000
    assert line["direction"] == "symmetric"


def test_missing_config_file(runner, workdir, encoded):
    path, _ = encoded
    result = runner.invoke(cli, ["--config", str(workdir / "absent.yaml"), "info", str(path)])
    assert result.exit_code == EXIT_CONFIG


def test_yaml_config_sets_decode_level(runner, workdir, encoded):
    path, _ = encoded
    config = workdir / "decode.yaml"
    config.write_text("decode:\n  level: 2\n", encoding="utf-8")
    result = runner.invoke(cli, ["--config", str(config), "decode", str(path), str(workdir / "y.obj")])
    assert result.exit_code == 0, result.output
    assert "顶点 162" in result.output


def test_encode_with_imported_sphere(runner, workdir):
    mesh, sphere = make_bumpy_sphere(2)
    mesh_path, sphere_path = workdir / "imported.obj", workdir / "imported_sphere.ply"
    write_mesh(mesh, mesh_path)
    write_mesh(sphere, sphere_path)
    result = runner.invoke(cli, [
        "encode", str(mesh_path), str(workdir / "imported.hnsc"), *FAST, "--import-sphere", str(sphere_path),
    ])
    assert result.exit_code == 0, result.output
    assert (workdir / "imported.hnsc").stat().st_size == 56266
