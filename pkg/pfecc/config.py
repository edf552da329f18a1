"""Run configuration: defaults, flat key=value config files and flags."""
import logging
import os
import re
from pathlib import Path

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ValidationError, field_validator

from .cases import CASE_IDS, forcing_from_spec, viscosity_from_spec
from .errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
MESH_GENERATOR = re.compile(r"^(quad|tri):\d+$|^distorted:\d+(:\d+)?$")
# config-file key -> RunConfig field
CONFIG_KEYS = {
    "mesh": "mesh",
    "case": "case",
    "mu": "mu",
    "forcing": "forcing",
    "lambda": "lambda_pen",
    "levels": "levels",
    "out": "out",
    "vtk": "vtk",
    "export_matrix": "export_matrix",
    "boundary_pressure": "boundary_pressure",
}


class RunConfig(BaseModel):
    mesh: str = "quad:8"
    case: str = "MS-1"
    mu: str | None = None
    forcing: str = "zero"
    lambda_pen: float = 1.0
    levels: int = 1
    out: Path = Path("out")
    vtk: bool = False
    export_matrix: bool = False
    boundary_pressure: bool = True

    @field_validator('mesh')
    @classmethod
    def mesh_spec(cls, v: str) -> str:
        v = v.strip()
        if not v:
            raise ValueError('mesh must be a file path or quad:N, tri:N, distorted:N[:seed]')
        kind = v.partition(":")[0]
        if kind in ("quad", "tri", "distorted"):
            if not MESH_GENERATOR.match(v):
                raise ValueError(f'malformed mesh generator {v!r}')
            if int(v.split(":")[1]) < 1:
                raise ValueError('mesh generators need at least one cell per side')
        return v

    @field_validator('case')
    @classmethod
    def known_case(cls, v: str) -> str:
        if v not in CASE_IDS:
            raise ValueError(f'case must be one of {", ".join(CASE_IDS)}')
        return v

    @field_validator('mu')
    @classmethod
    def viscosity_spec(cls, v: str | None) -> str | None:
        if v is not None:
            viscosity_from_spec(v)
        return v

    @field_validator('forcing')
    @classmethod
    def forcing_spec(cls, v: str) -> str:
        forcing_from_spec(v)
        return v

    @field_validator('lambda_pen')
    @classmethod
    def positive_penalty(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError('lambda must be positive')
        return v

    @field_validator('levels')
    @classmethod
    def positive_levels(cls, v: int) -> int:
        if v < 1:
            raise ValueError('levels must be at least 1')
        return v


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def read_config_file(path) -> dict:
    """Flat key=value file; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found", entity=str(path))
    values = {}
    for key, value in dotenv_values(path).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r} in {path}", entity=key)
        if value is None or value == "":
            continue
        values[CONFIG_KEYS[key]] = value
    return values


def load_config(config_file=None, **overrides) -> RunConfig:
    """Defaults, then the config file, then overrides that are not None."""
    values = read_config_file(config_file) if config_file else {}
    values.update({name: value for name, value in overrides.items() if value is not None})
    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e
    logger.debug(f"Run configuration: {config.model_dump()}")
    return config


def setup_logging(out_dir=None) -> None:
    """Stream handler plus pfecc.log inside out_dir; level from PFECC_LOG_LEVEL."""
    level = os.getenv("PFECC_LOG_LEVEL", "INFO").upper()
    handlers = [logging.StreamHandler()]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / 'pfecc.log'))
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
