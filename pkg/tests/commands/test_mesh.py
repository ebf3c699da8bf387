"""Tests for the mesh command."""

import json

from typer.testing import CliRunner

from enclosure_eit.cli import app
from enclosure_eit.core.mesh import read_mesh

runner = CliRunner()

SQUARE = [(-0.6, -0.6), (0.6, -0.6), (0.6, 0.6), (-0.6, 0.6)]


def _output(result) -> str:
    return " ".join(result.output.split())


def test_mesh_writes_files(diamond_config, tmp_path):
    result = runner.invoke(app, ["mesh", "--config", str(diamond_config())])
    assert result.exit_code == 0, result.output
    out = tmp_path / "out"
    mesh = read_mesh(out / "mesh.txt")
    assert len(mesh.inclusion_edges) == 1
    report = json.loads((out / "mesh_diagnostics.json").read_text(encoding="utf-8"))
    assert report["ok"] is True
    assert report["meta"]["command"] == "mesh"
    assert report["n_nodes"] == mesh.n_nodes
    assert "Mesh valid" in _output(result)


def test_mesh_file_carries_config_hash(diamond_config, tmp_path):
    runner.invoke(app, ["mesh", "--config", str(diamond_config())])
    text = (tmp_path / "out" / "mesh.txt").read_text(encoding="utf-8")
    assert "config: sha256:" in text


def test_out_flag_overrides_output_dir(diamond_config, tmp_path):
    result = runner.invoke(app, ["mesh", "--config", str(diamond_config()), "--out", str(tmp_path / "flag")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "flag" / "mesh.txt").exists()
    assert not (tmp_path / "out").exists()


def test_overlapping_inclusions_exit_with_config_code(write_config, tmp_path):
    shifted = {"vertices": [[0.1, 0.0], [0.3, 0.0], [0.3, 0.2], [0.1, 0.2]], "conductivity": 3.0}
    diamond = {"vertices": [[0.2, 0.0], [0.0, 0.2], [-0.2, 0.0], [0.0, -0.2]], "conductivity": 2.0}
    path = write_config({"h_target": 0.05, "inclusions": [diamond, shifted], "output_dir": str(tmp_path / "out")})
    result = runner.invoke(app, ["mesh", "--config", str(path)])
    assert result.exit_code == 2
    assert "disjointness violated" in _output(result)


def test_coarse_h_target_exits_with_config_code(diamond_config):
    result = runner.invoke(app, ["mesh", "--config", str(diamond_config(h_target=0.3))])
    assert result.exit_code == 2
    assert "shortest edge" in _output(result)


def test_condition_violation_is_reported(write_config, tmp_path):
    path = write_config(
        {
            "h_target": 0.1,
            "boundary_resolution": 128,
            "inclusions": [{"vertices": SQUARE, "conductivity": 2.0}],
            "output_dir": str(tmp_path / "out"),
        }
    )
    result = runner.invoke(app, ["mesh", "--config", str(path)])
    assert result.exit_code == 0, result.output
    assert "geometric condition" in _output(result)
    report = json.loads((tmp_path / "out" / "mesh_diagnostics.json").read_text(encoding="utf-8"))
    assert report["meta"]["warnings"]
    assert "WARNING: geometric condition" in (tmp_path / "out" / "mesh.txt").read_text(encoding="utf-8")
