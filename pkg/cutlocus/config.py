import os
from functools import lru_cache
import logging
from typing import Any, Dict, List, Optional

from configparser import ConfigParser, Error as ConfigParserError
from pydantic import BaseModel, BaseSettings, Field, ValidationError, validator

from cutlocus.geometry.schema import STAGE_REQUIREMENTS, ConfigError, Stage


HOME_PATH = os.path.dirname(os.path.abspath(__file__))


default_config_path = os.path.join(HOME_PATH, "etc", "defaults.ini")
user_config_path = os.path.join(os.path.expanduser("~"), ".config", "cutlocus.ini")
CONFIG_SEARCH_PATHS = [
    default_config_path,
    "/etc/cutlocus/cutlocus.ini",
    user_config_path,
]

if os.environ.get("CUTLOCUS_CONFIG_PATH"):
    CONFIG_SEARCH_PATHS.append(os.environ["CUTLOCUS_CONFIG_PATH"])

CONFIG = ConfigParser()
CONFIG.read(CONFIG_SEARCH_PATHS)

DEFAULT_TOLERANCES = {
    "rank_tol": 1e-6,
    "focal_grid_step": 0.01,
    "a2_tol": 1e-3,
    "zero_tol": 1e-6,
    "minimality_slack": 3.0,
    "dedup_factor": 5.0,
    "balanced_factor": 10.0,
    "consistency_factor": 5.0,
    "eikonal_factor": 10.0,
    "oracle_agreement": 5.0,
    "hausdorff_factor": 5.0,
    "compatibility_margin": 0.02,
    "unit_speed_tol": 1e-7,
    "dual_roundtrip_tol": 1e-6,
    "df_match_tol": 1e-4,
    "balanced_samples": 20,
    "balanced_directions": 2,
}

STAGE_ORDER = list(Stage)
EXPORT_FORMATS = ["csv", "json", "obj"]


def _as_number(name: str, value: str, cast=float):
    try:
        return cast(value)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {value!r}")


@lru_cache()
def get_settings():
    return Settings()


class Settings(BaseSettings):
    default_scenario: str = Field("", env="CUTLOCUS_SCENARIO")
    default_out_dir: str = Field("", env="CUTLOCUS_OUT_DIR")
    default_rays: str = Field("", env="CUTLOCUS_RAYS")
    default_grid_h: str = Field("", env="CUTLOCUS_GRID_H")
    default_seed: str = Field("", env="CUTLOCUS_SEED")

    @property
    def scenario(self) -> str:
        if self.default_scenario != "":
            return self.default_scenario
        elif CONFIG.has_option("cutlocus", "scenario"):
            return CONFIG["cutlocus"]["scenario"]
        return "euclidean_annulus"

    @property
    def out_dir(self) -> str:
        if self.default_out_dir != "":
            return self.default_out_dir
        elif CONFIG.has_option("cutlocus", "out_dir"):
            return CONFIG["cutlocus"]["out_dir"]
        return os.path.join(os.getcwd(), "cutlocus-out")

    @property
    def rays(self) -> int:
        if self.default_rays != "":
            return _as_number("rays", self.default_rays, int)
        elif CONFIG.has_option("cutlocus", "rays"):
            return _as_number("rays", CONFIG["cutlocus"]["rays"], int)
        return 128

    @property
    def grid_h(self) -> float:
        if self.default_grid_h != "":
            return _as_number("grid_h", self.default_grid_h)
        elif CONFIG.has_option("cutlocus", "grid_h"):
            return _as_number("grid_h", CONFIG["cutlocus"]["grid_h"])
        return 0.02

    @property
    def seed(self) -> int:
        if self.default_seed != "":
            return _as_number("seed", self.default_seed, int)
        elif CONFIG.has_option("cutlocus", "seed"):
            return _as_number("seed", CONFIG["cutlocus"]["seed"], int)
        return 0

    @property
    def tolerances(self) -> Dict[str, float]:
        """Built-in defaults, then the [tolerances] section, then CUTLOCUS_<NAME> from the environment."""
        tolerances = dict(DEFAULT_TOLERANCES)
        if CONFIG.has_section("tolerances"):
            for name, value in CONFIG.items("tolerances"):
                if name not in DEFAULT_TOLERANCES:
                    logging.warning(f"ignoring unknown tolerance {name} in the config files")
                    continue
                tolerances[name] = _as_number(name, value)
        for name in DEFAULT_TOLERANCES:
            env_name = f"CUTLOCUS_{name.upper()}"
            if env_name in os.environ:
                tolerances[name] = _as_number(env_name, os.environ[env_name])
        return tolerances

    class Config:
        env_prefix = "CUTLOCUS_"


def close_stages(names: List[str]) -> List[str]:
    """The requested stages plus everything they depend on, in pipeline order."""
    wanted = set()
    pending = list(names)
    while pending:
        name = pending.pop()
        if not Stage.has_value(name):
            raise ConfigError(f"unknown stage {name}; choose from {', '.join(Stage.values())}")
        stage = Stage(name)
        if stage in wanted:
            continue
        wanted.add(stage)
        pending.extend(req.value for req in STAGE_REQUIREMENTS[stage])
    return [stage.value for stage in STAGE_ORDER if stage in wanted]


class RunConfig(BaseModel):
    scenario: str = Field(default_factory=lambda: get_settings().scenario)
    scenario_params: Dict[str, float] = Field(default_factory=dict)
    inline: Optional[Dict[str, str]] = None
    rays: int = Field(default_factory=lambda: get_settings().rays)
    grid_h: float = Field(default_factory=lambda: get_settings().grid_h)
    stages: List[Stage] = Field(default_factory=lambda: list(STAGE_ORDER))
    out: str = Field(default_factory=lambda: get_settings().out_dir)
    seed: int = Field(default_factory=lambda: get_settings().seed)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    formats: List[str] = Field(default_factory=lambda: list(EXPORT_FORMATS))

    @validator("rays")
    def enough_rays(cls, v):
        if v < 8:
            raise ValueError(f"need at least 8 rays per boundary piece, got {v}")
        return v

    @validator("grid_h")
    def positive_grid(cls, v):
        if not v > 0:
            raise ValueError(f"grid spacing must be positive, got {v}")
        return v

    @validator("stages")
    def stage_dependencies(cls, v):
        stages = [stage for stage in STAGE_ORDER if stage in v]
        if not stages:
            raise ValueError("no stages to run")
        for stage in stages:
            for required in STAGE_REQUIREMENTS[stage]:
                if required not in stages:
                    raise ValueError(f"stage {stage.value} needs stage {required.value}")
        return stages

    @validator("tolerances", always=True)
    def known_positive_tolerances(cls, v):
        merged = get_settings().tolerances
        for name, value in v.items():
            if name not in DEFAULT_TOLERANCES:
                raise ValueError(f"unknown tolerance {name}")
            merged[name] = value
        for name, value in merged.items():
            if not value > 0:
                raise ValueError(f"tolerance {name} must be positive, got {value}")
        return merged

    @validator("formats")
    def known_formats(cls, v):
        unknown = [f for f in v if f not in EXPORT_FORMATS]
        if unknown:
            raise ValueError(f"unknown export formats {unknown}; choose from {EXPORT_FORMATS}")
        return v

    def tolerance(self, name: str) -> float:
        return self.tolerances[name]

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "scenario_params": dict(sorted(self.scenario_params.items())),
            "inline": dict(sorted(self.inline.items())) if self.inline else None,
            "rays": self.rays,
            "grid_h": self.grid_h,
            "stages": [stage.value for stage in self.stages],
            "seed": self.seed,
            "tolerances": dict(sorted(self.tolerances.items())),
            "formats": self.formats,
        }


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def read_run_file(path: str) -> Dict[str, Any]:
    """RunConfig fields from an INI run file with [run], [tolerances] and [scenario] sections."""
    if not os.path.exists(path):
        raise ConfigError(f"run file {path} not found")
    parser = ConfigParser()
    try:
        parser.read(path)
    except ConfigParserError as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    values: Dict[str, Any] = {}
    if parser.has_section("run"):
        run = parser["run"]
        for name in ("scenario", "rays", "grid_h", "seed", "out"):
            if name in run:
                values[name] = run[name]
        if "stages" in run:
            values["stages"] = _split_list(run["stages"])
        if "formats" in run:
            values["formats"] = _split_list(run["formats"])
    if parser.has_section("tolerances"):
        values["tolerances"] = {name: _as_number(name, value) for name, value in parser.items("tolerances")}
    if parser.has_section("scenario"):
        section = dict(parser.items("scenario"))
        if "norm" in section or "g11" in section:
            values["inline"] = section
            values["scenario"] = section.get("name", "inline")
        else:
            values["scenario_params"] = {name: _as_number(name, value) for name, value in section.items()}
    logging.debug(f"loaded run file {path}: {sorted(values)}")
    return values


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """Defaults, then the run file, then explicit overrides (None means not given)."""
    values = read_run_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {e}")
