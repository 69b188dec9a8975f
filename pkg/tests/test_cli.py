import json

import pytest

from harness.config import ExperimentConfig, write_config
from main import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from polydg.mesh import read_mesh


def _json_output(capsys):
    return json.loads(capsys.readouterr().out)


def test_mesh_commands(tmp_path, capsys):
    mesh_path = tmp_path / "mesh.json"
    assert main(["mesh", "gen", "--kind", "voronoi", "--n", "20", "--seed", "4", "--out", str(mesh_path)]) == EXIT_OK
    assert _json_output(capsys)["n_cells"] == 20
    assert read_mesh(str(mesh_path)).n_cells == 20

    parts = tmp_path / "parts.txt"
    coarse = tmp_path / "coarse.json"
    args = ["mesh", "agglomerate", "--mesh", str(mesh_path), "--parts", "4", "--out", str(parts), "--coarse-out", str(coarse)]
    assert main(args) == EXIT_OK
    assert _json_output(capsys)["n_parts"] == 4
    assert len(parts.read_text().split()) == 20
    assert read_mesh(str(coarse)).n_cells == 4

    args = ["mesh", "agglomerate", "--mesh", str(mesh_path), "--parts", "4", "--out", str(parts), "--method", "metis"]
    assert main(args) == EXIT_OK
    assert _json_output(capsys)["n_parts"] == 4

    assert main(["mesh", "info", "--mesh", str(mesh_path)]) == EXIT_OK
    info = _json_output(capsys)
    assert info["n_faces"] > info["n_boundary_faces"] > 0


def test_lshape_mesh(tmp_path, capsys):
    path = tmp_path / "lshape.json"
    assert main(["mesh", "gen", "--kind", "lshape_voronoi16", "--out", str(path)]) == EXIT_OK
    assert _json_output(capsys)["area"] == pytest.approx(0.75)


def test_solve(tmp_path, capsys):
    residuals = tmp_path / "res.csv"
    args = ["solve", "--cells", "36", "--coarse-parts", "4", "--p", "2", "--q", "1", "--residuals", str(residuals)]
    assert main(args) == EXIT_OK
    out = _json_output(capsys)
    assert out["converged"]
    assert out["n_dofs"] == 36 * 6
    assert out["l2_error"] < 0.05
    assert residuals.read_text().startswith("iter,relres")


def test_unpreconditioned_solve_and_export(tmp_path, capsys):
    matrix = tmp_path / "A.mtx"
    assert main(["solve", "--cells", "16", "--no-precondition", "--export", str(matrix)]) == EXIT_OK
    assert _json_output(capsys)["q"] is None
    assert matrix.exists()


def test_configuration_errors_exit_with_2(tmp_path):
    assert main(["solve", "--cells", "16", "--p", "1", "--q", "2"]) == EXIT_CONFIG
    assert main(["mesh", "info", "--mesh", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["mesh", "gen", "--kind", "quad", "--n", "0", "--out", str(tmp_path / "m.json")]) == EXIT_CONFIG

    config = tmp_path / "exp.ini"
    write_config(ExperimentConfig(experiment="4"), str(config))
    assert main(["experiment", "2", "--config", str(config)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as err:
        main(["experiment", "3"])
    assert err.value.code == 2


def test_solver_failure_exits_with_3():
    # without enough penalty the operator is indefinite
    assert main(["solve", "--cells", "16", "--no-precondition", "--c-sigma", "1e-6"]) == EXIT_SOLVER


def test_experiment_command(tmp_path):
    config = tmp_path / "exp.ini"
    write_config(
        ExperimentConfig(
            experiment="5", family="quad", coarse="agglomerated", fine_sizes=[16], coarse_sizes=[4],
            degrees=[1, 2, 3], estimate_tol=1e-12,
        ),
        str(config),
    )
    out = tmp_path / "out"
    assert main(["experiment", "5", "--config", str(config), "--out", str(out), "--no-plots", "--quiet", "--seed", "2"]) == EXIT_OK
    assert (out / "experiment_5.csv").exists()
    slopes = json.loads((out / "experiment_5_slopes.json").read_text())
    assert "example5-nested vs p" in slopes
    assert not (out / "plots").exists()
