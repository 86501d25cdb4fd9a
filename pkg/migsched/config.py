"""Experiment specs: YAML ingestion, validation and override precedence.

Precedence, highest first: command-line flag, environment variable, spec
file, built-in default. Only the output directory and the parallelism degree
can come from the environment.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from migsched.engine import DEFAULT_SNAPSHOT_GRID, SimConfig
from migsched.errors import ConfigError
from migsched.schedulers import SchedulerKind

logger = logging.getLogger(__name__)

ENV_OUT_DIR = "MIGSIM_OUT_DIR"
ENV_PARALLELISM = "MIGSIM_PARALLELISM"

DEFAULT_OUT_DIR = "results"
OUTPUT_FORMATS = ("csv", "json")

_SPEC_KEYS = {
    "name",
    "cluster_size",
    "runs",
    "seed",
    "distributions",
    "schedulers",
    "cells",
    "snapshot_grid",
    "strict_first_choice",
    "arrivals_per_slot",
    "custom_distributions",
    "parallelism",
    "output",
}


@dataclass(frozen=True)
class Cell:
    distribution: str
    scheduler: str

    @property
    def key(self) -> str:
        return f"{self.distribution}/{self.scheduler}"


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    cells: Tuple[Cell, ...]
    cluster_size: int = 100
    runs: int = 500
    seed: int = 0
    snapshot_grid: Tuple[float, ...] = DEFAULT_SNAPSHOT_GRID
    strict_first_choice: bool = False
    arrivals_per_slot: int = 1
    custom_distributions: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    out_dir: str = DEFAULT_OUT_DIR
    formats: Tuple[str, ...] = OUTPUT_FORMATS
    parallelism: int = 1

    def __post_init__(self) -> None:
        if not self.cells:
            raise ConfigError(f"experiment {self.name!r} has no cells")
        if len(set(self.cells)) != len(self.cells):
            raise ConfigError(f"experiment {self.name!r} lists a cell twice")
        bad = sorted(set(self.formats) - set(OUTPUT_FORMATS))
        if bad or not self.formats:
            raise ConfigError(f"output formats must be a non-empty subset of {list(OUTPUT_FORMATS)}, got {list(self.formats)}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        for cell in self.cells:
            # validates every shared field against every cell
            self.sim_config(cell)

    def sim_config(self, cell: Cell) -> SimConfig:
        return SimConfig(
            cluster_size=self.cluster_size,
            distribution=cell.distribution,
            scheduler=cell.scheduler,
            runs=self.runs,
            seed=self.seed,
            snapshot_grid=self.snapshot_grid,
            strict_first_choice=self.strict_first_choice,
            arrivals_per_slot=self.arrivals_per_slot,
            custom_pmf=self.custom_distributions.get(cell.distribution),
        )

    @property
    def distributions(self) -> List[str]:
        return list(dict.fromkeys(c.distribution for c in self.cells))

    @property
    def schedulers(self) -> List[str]:
        return list(dict.fromkeys(c.scheduler for c in self.cells))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["cells"] = [asdict(c) for c in self.cells]
        d["snapshot_grid"] = list(self.snapshot_grid)
        d["formats"] = list(self.formats)
        d["custom_distributions"] = {k: dict(v) for k, v in self.custom_distributions.items()}
        return d


def _as_int(raw: Mapping[str, Any], key: str, default: int) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _as_bool(raw: Mapping[str, Any], key: str, default: bool) -> bool:
    value = raw.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    return value


def _as_names(value: Any, key: str) -> List[str]:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{key} must be a name or a list of names, got {value!r}")
    return value


def _scheduler_name(name: str) -> str:
    return SchedulerKind.from_name(name).value


def spec_from_dict(raw: Mapping[str, Any], source: str = "<spec>") -> ExperimentSpec:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{source}: top level must be a mapping")
    unknown = sorted(set(raw) - _SPEC_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")

    if "cells" in raw:
        if "distributions" in raw or "schedulers" in raw:
            raise ConfigError(f"{source}: give either cells or distributions/schedulers, not both")
        try:
            cells = tuple(Cell(str(c["distribution"]), _scheduler_name(str(c["scheduler"]))) for c in raw["cells"])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"{source}: each cell needs a distribution and a scheduler") from e
    else:
        distributions = _as_names(raw.get("distributions", ["uniform"]), "distributions")
        schedulers = [_scheduler_name(s) for s in _as_names(raw.get("schedulers", ["mfi"]), "schedulers")]
        cells = tuple(Cell(d, s) for d, s in product(distributions, schedulers))

    custom = raw.get("custom_distributions") or {}
    if not isinstance(custom, Mapping):
        raise ConfigError(f"{source}: custom_distributions must map names to pmfs")

    output = raw.get("output") or {}
    if not isinstance(output, Mapping):
        raise ConfigError(f"{source}: output must be a mapping with dir and formats")

    grid = raw.get("snapshot_grid", DEFAULT_SNAPSHOT_GRID)
    if not isinstance(grid, (list, tuple)):
        raise ConfigError(f"{source}: snapshot_grid must be a list of percentages")

    try:
        return ExperimentSpec(
            name=str(raw.get("name", os.path.splitext(os.path.basename(source))[0])),
            cells=cells,
            cluster_size=_as_int(raw, "cluster_size", 100),
            runs=_as_int(raw, "runs", 500),
            seed=_as_int(raw, "seed", 0),
            snapshot_grid=tuple(float(p) for p in grid),
            strict_first_choice=_as_bool(raw, "strict_first_choice", False),
            arrivals_per_slot=_as_int(raw, "arrivals_per_slot", 1),
            custom_distributions={str(k): {str(p): float(v) for p, v in pmf.items()} for k, pmf in custom.items()},
            out_dir=str(output.get("dir", DEFAULT_OUT_DIR)),
            formats=tuple(_as_names(output.get("formats", list(OUTPUT_FORMATS)), "output.formats")),
            parallelism=_as_int(raw, "parallelism", 1),
        )
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e
    except (TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"{source}: {e}") from e


def load_spec(path: str) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read spec {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return spec_from_dict(raw or {}, source=path)


def apply_overrides(
    spec: ExperimentSpec,
    seed: Optional[int] = None,
    runs: Optional[int] = None,
    cluster_size: Optional[int] = None,
    schedulers: Sequence[str] = (),
    distributions: Sequence[str] = (),
    strict_first_choice: Optional[bool] = None,
    out_dir: Optional[str] = None,
    formats: Sequence[str] = (),
    parallelism: Optional[int] = None,
) -> ExperimentSpec:
    """Layer environment variables, then explicit flags, over a loaded spec."""
    changes: Dict[str, Any] = {}

    env_out = os.getenv(ENV_OUT_DIR, "").strip()
    if env_out:
        changes["out_dir"] = env_out
    env_par = os.getenv(ENV_PARALLELISM, "").strip()
    if env_par:
        try:
            changes["parallelism"] = int(env_par)
        except ValueError:
            raise ConfigError(f"{ENV_PARALLELISM} must be an integer, got {env_par!r}") from None

    flags = {
        "seed": seed,
        "runs": runs,
        "cluster_size": cluster_size,
        "strict_first_choice": strict_first_choice,
        "out_dir": out_dir,
        "parallelism": parallelism,
    }
    changes.update({k: v for k, v in flags.items() if v is not None})
    if formats:
        changes["formats"] = tuple(formats)
    if schedulers or distributions:
        dists = list(distributions) or spec.distributions
        scheds = [_scheduler_name(s) for s in schedulers] or spec.schedulers
        changes["cells"] = tuple(Cell(d, s) for d, s in product(dists, scheds))

    for key, value in changes.items():
        logger.info("override %s=%r", key, value)
    return replace(spec, **changes) if changes else spec
