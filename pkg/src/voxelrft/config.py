"""Declarative experiment configuration files (TOML).

A simulation config names the experiments to run and the setting grid
they share. The random seed deliberately has no key here: it arrives
on the command line, so a config file describes an experiment family
and the seed picks the realization.

Example::

    experiments = ["fwer", "eec"]

    [mask]
    shape = [40, 40]

    [settings]
    n_subjects = [20]
    fwhm = [3.0, 4.0, 5.0]
    resolutions = [0, 1, "inf"]
    replicates = 2000
    alphas = [0.05]
    gaussianize = [false]

    [noise]
    distribution = "gaussian"
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .grid import Mask, solid_mask
from .io import read_mask
from .sim import ExperimentConfig, NoiseSpec

_EXPERIMENTS = ("fwer", "lkc", "eec", "fwhm")


@dataclass(frozen=True)
class SimulationPlan:
    """Parsed config: which experiments to run and their shared settings."""

    experiments: tuple[str, ...]
    config: ExperimentConfig
    thresholds: np.ndarray | None = None


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ValueError(f"unknown key {key!r} in {where}")


def _parse_experiments(doc: dict) -> tuple[str, ...]:
    experiments = doc.get("experiments")
    if not isinstance(experiments, list) or not experiments:
        raise ValueError("experiments must be a non-empty list of names")
    seen = []
    for name in experiments:
        if name not in _EXPERIMENTS:
            raise ValueError(
                f"unknown experiment {name!r}; choose from "
                f"{', '.join(_EXPERIMENTS)}"
            )
        if name in seen:
            raise ValueError(f"duplicate experiment {name!r}")
        seen.append(name)
    return tuple(seen)


def _parse_mask(table, base_dir: Path) -> Mask:
    if not isinstance(table, dict):
        raise ValueError("missing [mask] table")
    _check_keys(table, {"shape", "file", "spacing", "embed_slice"}, "[mask]")
    shape = table.get("shape")
    file = table.get("file")
    if (shape is None) == (file is None):
        raise ValueError("[mask] needs exactly one of 'shape' or 'file'")
    if file is not None:
        if "spacing" in table:
            raise ValueError("spacing comes from the mask file; drop the key")
        mask = read_mask(base_dir / file)
    else:
        spacing = table.get("spacing")
        mask = solid_mask(tuple(shape), spacing)
    if table.get("embed_slice", False):
        if mask.ndim != 2:
            raise ValueError("embed_slice applies to 2-axis masks only")
        mask = Mask(mask.inclusion[..., None], mask.spacing + (1.0,))
    return mask


def _parse_resolution(value) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ValueError(
        f"resolutions entries are 0, 1, or the string \"inf\", got {value!r}"
    )


def _parse_settings(table, mask: Mask, noise: NoiseSpec):
    if not isinstance(table, dict):
        raise ValueError("missing [settings] table")
    allowed = {
        "n_subjects", "fwhm", "resolutions", "replicates",
        "alphas", "gaussianize", "workers",
    }
    _check_keys(table, allowed, "[settings]")
    for key in ("n_subjects", "fwhm", "replicates"):
        if key not in table:
            raise ValueError(f"missing key {key!r} in [settings]")
    kwargs = dict(
        mask=mask,
        n_subjects=tuple(table["n_subjects"]),
        fwhm=tuple(table["fwhm"]),
        n_replicates=int(table["replicates"]),
        noise=noise,
    )
    if "resolutions" in table:
        kwargs["resolutions"] = tuple(
            _parse_resolution(v) for v in table["resolutions"]
        )
    if "alphas" in table:
        kwargs["alphas"] = tuple(table["alphas"])
    if "gaussianize" in table:
        kwargs["gaussianize"] = tuple(table["gaussianize"])
    if "workers" in table:
        kwargs["workers"] = int(table["workers"])
    return ExperimentConfig(**kwargs)


def _parse_noise(table, seed: int) -> NoiseSpec:
    if table is None:
        return NoiseSpec(seed=seed)
    if not isinstance(table, dict):
        raise ValueError("missing [noise] table")
    if "seed" in table:
        raise ValueError(
            "the seed comes from the command line, not the config; "
            "drop 'seed' from [noise]"
        )
    _check_keys(table, {"distribution", "df", "scale"}, "[noise]")
    return NoiseSpec(
        distribution=table.get("distribution", "gaussian"),
        df=table.get("df"),
        scale=table.get("scale"),
        seed=seed,
    )


def load_config(path, seed: int) -> SimulationPlan:
    """Parse and validate a simulation config file.

    Syntax errors keep the parser's line and column; semantic errors
    name the offending key and table.
    """
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"config parse error: {exc}") from None
    _check_keys(
        doc, {"experiments", "mask", "settings", "noise", "eec"}, "the top level"
    )
    experiments = _parse_experiments(doc)
    mask = _parse_mask(doc.get("mask"), path.parent)
    noise = _parse_noise(doc.get("noise"), seed)
    config = _parse_settings(doc.get("settings"), mask, noise)

    thresholds = None
    if "eec" in doc:
        if "eec" not in experiments:
            raise ValueError(
                "the [eec] table is only meaningful when the experiment "
                "list includes 'eec'"
            )
        _check_keys(doc["eec"], {"thresholds"}, "[eec]")
        if "thresholds" in doc["eec"]:
            thresholds = np.asarray(doc["eec"]["thresholds"], dtype=float)
    return SimulationPlan(experiments, config, thresholds)
