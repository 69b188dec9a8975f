import logging

import pytest

from harness.config import EXPERIMENTS, ExperimentConfig, default_config, read_config, write_config
from polydg.errors import ConfigError


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_default_configs_are_valid(experiment):
    config = default_config(experiment)
    assert config.experiment == experiment
    assert config.validate() is config


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        default_config("3")
    with pytest.raises(ConfigError):
        ExperimentConfig(experiment="3").validate()


@pytest.mark.parametrize("experiment", ["1", "5"])
def test_write_then_read(tmp_path, experiment):
    config = default_config(experiment).override(seed=17, agglomeration="metis", output=str(tmp_path / "out"))
    path = tmp_path / "exp.ini"
    write_config(config, str(path))
    assert read_config(str(path)) == config


def test_coarse_degrees(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(
        "[experiment]\nid = 5\n\n"
        "[discretization]\ndegrees = 2, 4\ncoarse_degrees = 1, 2\n"
    )
    config = read_config(str(path))
    assert config.degrees == [2, 4]
    assert config.q_for(4) == 2
    assert default_config("2").q_for(3) == 3


@pytest.mark.parametrize(
    "body, message",
    [
        ("[mesh]\nfamily = voronoi\n", "id is required"),
        ("[experiment]\nid = 2\nseed = zero\n", "seed"),
        ("[experiment]\nid = 2\n[discretization]\ndegrees = 1\ncoarse_degrees = 2\n", "coarse degree"),
        ("[experiment]\nid = 2\n[coefficient]\nlayout = stripes\n", "layout"),
        ("[experiment]\nid = 2\n[mesh]\npartition_file = /nonexistent/parts.txt\n", "does not exist"),
        ("[experiment]\nid = 2\n[solver]\ntol = -1\n", "positive"),
        ("[experiment]\nid = 2\n[mesh]\nagglomeration = spectral\n", "agglomeration method"),
        ("[experiment]\nid = 2\n[mesh]\nagglomeration = from_file\n", "partition_file"),
        ("not an ini file", "malformed"),
    ],
)
def test_invalid_files(tmp_path, body, message):
    path = tmp_path / "bad.ini"
    path.write_text(body)
    with pytest.raises(ConfigError, match=message):
        read_config(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        read_config(str(tmp_path / "missing.ini"))


def test_unknown_options_are_reported(tmp_path, caplog):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\nid = 4\ncolour = blue\n")
    with caplog.at_level(logging.WARNING, logger="harness.config"):
        config = read_config(str(path))
    assert config.experiment == "4"
    assert "colour" in caplog.text


def test_override_keeps_unset_values():
    config = default_config("2")
    changed = config.override(seed=3, output=None, threads=4)
    assert (changed.seed, changed.threads, changed.output) == (3, 4, config.output)
    assert config.seed == 0
    with pytest.raises(ConfigError):
        config.override(threads=0)
