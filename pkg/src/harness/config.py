"""
Config Module
=============

Experiment configuration, read from and written to a single INI file.

File layout
-----------

::

    [experiment]
    id = 2
    seed = 0

    [mesh]
    family = voronoi
    fine_sizes = 64, 256, 1024, 4096
    coarse_sizes = 16
    coarse = agglomerated
    refine_levels = 2
    lloyd_iters = 10
    partition_file =
    agglomeration = coordinate_bisection

    [discretization]
    degrees = 1, 3
    coarse_degrees = same
    c_sigma = 10.0

    [coefficient]
    layout = uniform
    rho_values = 1.0

    [solver]
    tol = 1e-08
    estimate_tol = 1e-14
    maxit =

    [output]
    dir = results
    plots = true

Command line flags (``--seed``, ``--out``, ``--threads``) override the file.

"""
import configparser
import logging
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional

from polydg.errors import ConfigError
from polydg.mesh import PARTITION_METHODS

logger = logging.getLogger(__name__)

EXPERIMENTS = ("1", "2", "4", "5", "unprec")
LAYOUTS = ("uniform", "coarse_checkerboard", "fine_checkerboard", "both")
COARSE_KINDS = ("voronoi16", "agglomerated", "voronoi", "quad")
FAMILIES = ("voronoi", "quad", "lshape")


@dataclass
class ExperimentConfig:
    """One experiment family run."""

    experiment: str
    seed: int = 0
    family: str = "voronoi"
    fine_sizes: List[int] = field(default_factory=lambda: [256])
    coarse_sizes: List[int] = field(default_factory=lambda: [16])
    coarse: str = "agglomerated"
    refine_levels: int = 2
    lloyd_iters: int = 10
    partition_file: Optional[str] = None
    agglomeration: str = "coordinate_bisection"
    degrees: List[int] = field(default_factory=lambda: [1])
    coarse_degrees: Optional[List[int]] = None
    C_sigma: float = 10.0
    layout: str = "uniform"
    rho_values: List[float] = field(default_factory=lambda: [1.0])
    tol: float = 1e-8
    estimate_tol: float = 1e-14
    maxit: Optional[int] = None
    output: str = "results"
    plots: bool = True
    threads: int = 1

    def q_for(self, p: int) -> int:
        """Coarse degree paired with fine degree ``p``."""
        if self.coarse_degrees is None:
            return p
        return self.coarse_degrees[self.degrees.index(p)]

    def validate(self) -> "ExperimentConfig":
        """
        Check the configuration.

        Raises:
            ConfigError: On an unknown option value, ``q > p`` or a missing partition file.
        """
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown mesh family {self.family!r}")
        if self.coarse not in COARSE_KINDS:
            raise ConfigError(f"unknown coarse mesh kind {self.coarse!r}")
        if self.agglomeration not in PARTITION_METHODS or self.agglomeration == "from_file":
            raise ConfigError(f"unknown agglomeration method {self.agglomeration!r}, use partition_file for files")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown coefficient layout {self.layout!r}")
        if not self.degrees or min(self.degrees) < 1:
            raise ConfigError("degrees must be a nonempty list of integers >= 1")
        if self.coarse_degrees is not None:
            if len(self.coarse_degrees) != len(self.degrees):
                raise ConfigError("coarse_degrees must match degrees in length")
            for p, q in zip(self.degrees, self.coarse_degrees):
                if not 0 <= q <= p:
                    raise ConfigError(f"coarse degree q={q} must satisfy 0 <= q <= p={p}")
        if min(self.fine_sizes, default=0) < 1 or min(self.coarse_sizes, default=1) < 1:
            raise ConfigError("mesh sizes must be positive")
        if min(self.rho_values, default=1.0) <= 0:
            raise ConfigError("rho values must be positive")
        if self.C_sigma <= 0 or self.tol <= 0 or self.estimate_tol <= 0:
            raise ConfigError("C_sigma and tolerances must be positive")
        if self.partition_file and not os.path.exists(self.partition_file):
            raise ConfigError(f"partition file {self.partition_file} does not exist")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def override(self, **kwargs) -> "ExperimentConfig":
        """Copy with the non-None keyword arguments replaced."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None}).validate()


# key in file -> (section, attribute)
_LAYOUT = {
    "experiment": [("id", "experiment"), ("seed", "seed")],
    "mesh": [
        ("family", "family"),
        ("fine_sizes", "fine_sizes"),
        ("coarse_sizes", "coarse_sizes"),
        ("coarse", "coarse"),
        ("refine_levels", "refine_levels"),
        ("lloyd_iters", "lloyd_iters"),
        ("partition_file", "partition_file"),
        ("agglomeration", "agglomeration"),
    ],
    "discretization": [("degrees", "degrees"), ("coarse_degrees", "coarse_degrees"), ("c_sigma", "C_sigma")],
    "coefficient": [("layout", "layout"), ("rho_values", "rho_values")],
    "solver": [("tol", "tol"), ("estimate_tol", "estimate_tol"), ("maxit", "maxit")],
    "output": [("dir", "output"), ("plots", "plots")],
}

_INT_LISTS = {"fine_sizes", "coarse_sizes", "degrees"}
_INTS = {"seed", "refine_levels", "lloyd_iters"}
_FLOATS = {"C_sigma", "tol", "estimate_tol"}


def _format(attr: str, value) -> str:
    if value is None:
        return "same" if attr == "coarse_degrees" else ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(attr: str, text: str, parser: configparser.ConfigParser, section: str, key: str):
    text = text.strip()
    try:
        if attr in _INT_LISTS:
            return [int(t) for t in text.split(",") if t.strip()]
        if attr == "rho_values":
            return [float(t) for t in text.split(",") if t.strip()]
        if attr == "coarse_degrees":
            return None if text in ("", "same") else [int(t) for t in text.split(",") if t.strip()]
        if attr in _INTS:
            return int(text)
        if attr in _FLOATS:
            return float(text)
        if attr == "maxit":
            return int(text) if text else None
        if attr == "partition_file":
            return text or None
        if attr == "plots":
            return parser.getboolean(section, key)
    except ValueError as err:
        raise ConfigError(f"[{section}] {key} = {text!r}: {err}") from err
    return text


def read_config(path: str) -> ExperimentConfig:
    """
    Read an experiment configuration.

    Args:
        path (str): INI file.

    Returns:
        ExperimentConfig: The validated configuration; missing keys keep their defaults.

    Raises:
        ConfigError: If the file is missing, malformed or inconsistent.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    if not parser.has_option("experiment", "id"):
        raise ConfigError(f"{path}: [experiment] id is required")
    values = {}
    for section, keys in _LAYOUT.items():
        for key, attr in keys:
            if parser.has_option(section, key):
                values[attr] = _parse(attr, parser.get(section, key), parser, section, key)
    known = {(s, k) for s, keys in _LAYOUT.items() for k, _ in keys}
    for section in parser.sections():
        for key in parser.options(section):
            if (section, key) not in known:
                logger.warning("%s: ignoring unknown option [%s] %s", path, section, key)
    return ExperimentConfig(**values).validate()


def write_config(config: ExperimentConfig, path: str):
    """Write ``config`` so that ``read_config`` returns an equal object."""
    parser = configparser.ConfigParser()
    for section, keys in _LAYOUT.items():
        parser[section] = {key: _format(attr, getattr(config, attr)) for key, attr in keys}
    with open(path, "w") as fh:
        parser.write(fh)


def default_config(experiment: str) -> ExperimentConfig:
    """Default setup of each experiment family."""
    presets = {
        "1": dict(
            family="lshape",
            coarse="voronoi16",
            fine_sizes=[],
            coarse_sizes=[16],
            refine_levels=2,
            lloyd_iters=30,
            degrees=[1, 2],
            layout="both",
            rho_values=[10.0, 1e2, 1e3, 1e4, 1e5, 1e6],
        ),
        "2": dict(family="voronoi", coarse="agglomerated", fine_sizes=[64, 256, 1024, 4096], coarse_sizes=[16], degrees=[1, 3]),
        "4": dict(family="voronoi", coarse="voronoi", fine_sizes=[64, 256, 1024, 4096], coarse_sizes=[16, 64, 256, 1024], degrees=[1, 3]),
        "5": dict(family="quad", coarse="agglomerated", fine_sizes=[256], coarse_sizes=[16], degrees=list(range(1, 10))),
        "unprec": dict(family="quad", coarse="quad", fine_sizes=[64, 256, 1024], coarse_sizes=[64], degrees=[1, 2, 3, 4, 5]),
    }
    if experiment not in presets:
        raise ConfigError(f"unknown experiment {experiment!r}, expected one of {EXPERIMENTS}")
    return ExperimentConfig(experiment=experiment, **presets[experiment]).validate()
