"""Experiment families at their reference sizes, checking the scaling bands they are run for."""
import pytest

from harness.config import default_config
from harness.controller import ExperimentController

pytestmark = pytest.mark.slow


def _run(tmp_path, experiment, **kwargs):
    config = default_config(experiment).override(output=str(tmp_path), plots=False, **kwargs)
    return ExperimentController(config).run(quiet=True)


def test_aligned_jumps_do_not_degrade_the_preconditioner(tmp_path):
    table = _run(tmp_path, "1", degrees=[1])
    assert table.slopes["example1-aligned p=1 max/min"] < 1.15
    assert 0.9 <= table.slopes["example1-not-aligned p=1 vs rho_e"] <= 1.05


def test_nested_condition_number_scales_with_h_over_H(tmp_path):
    table = _run(tmp_path, "2", fine_sizes=[256, 1024, 4096], degrees=[1])
    K = {(r["Nh"], r["NH"]): r["K"] for r in table.rows}
    assert {(256, 64), (1024, 256), (4096, 1024), (4096, 16)} <= set(K)
    assert 1.4 <= table.slopes["example2 p=1 vs H/h (fixed h)"] <= 2.2
    assert table.slopes["example2 p=1 diagonal max/min"] < 1.6


def test_condition_number_grows_with_p(tmp_path):
    table = _run(tmp_path, "5", degrees=[1, 2, 3, 4, 5, 6])
    assert 0.6 <= table.slopes["example5-nested vs p (p<=6)"] <= 1.4
    assert 1.5 <= table.slopes["example5-nonnested vs p (p<=6)"] <= 2.5


def test_unpreconditioned_growth(tmp_path):
    table = _run(tmp_path, "unprec")
    assert table.slopes["unprec vs 1/h"] == pytest.approx(2.0, abs=0.3)
    assert table.slopes["unprec vs p"] == pytest.approx(4.0, abs=0.6)
