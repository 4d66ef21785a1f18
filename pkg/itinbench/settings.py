"""Run configuration: validated sections loaded from a single JSON file."""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .config import config
from .errors import InvalidInputError

logger = logging.getLogger(__name__)

Budget = Literal["cheap", "moderate", "expensive"]
SolverName = Literal["greedy", "heldkarp", "astar"]

ATTRACTION_KEYWORDS = [
    "Museums",
    "Parks",
    "Local Flavor",
    "Zoos",
    "Tours",
    "Landmarks & Historical Buildings",
    "Souvenir Shops",
]


class IngestConfig(BaseModel):
    """Category rules for turning raw business records into a pool."""

    city: str = "Philadelphia"
    hotel_keyword: str = "Hotels"
    restaurant_keywords: list[str] = ["Restaurants", "Food"]
    attraction_keywords: list[str] = list(ATTRACTION_KEYWORDS)
    restaurant_limit: int = Field(default=config.RESTAURANT_LIMIT, ge=1)
    # A record matching several categories lands in the first one listed
    precedence: list[Literal["hotel", "restaurant", "attraction"]] = [
        "hotel", "restaurant", "attraction",
    ]


class FilterConfig(BaseModel):
    """Cutoffs that define "good" for preference predicates."""

    hotel_threshold: int = Field(default=config.GOOD_RATING, ge=1, le=5)
    restaurant_threshold: int = Field(default=config.GOOD_RATING, ge=1, le=5)
    attraction_threshold: int = Field(default=config.ORIENTATION_LEVEL, ge=0, le=3)
    budget_tiers: dict[Budget, list[int]] = {
        "cheap": [1],
        "moderate": [2],
        "expensive": [3, 4],
    }


class MetricConfig(BaseModel):
    macro_threshold: float = Field(default=config.MACRO_THRESHOLD, gt=0.0, le=1.0)
    daily_quota: int = Field(default=config.DAILY_QUOTA, ge=1)
    node_cap: int = Field(default=config.NODE_CAP, ge=1)
    day_route_cap: int = Field(default=config.DAY_ROUTE_CAP, ge=1)
    cluster_seed: int = 0
    filters: FilterConfig = FilterConfig()


class ClientConfig(BaseModel):
    """Chat endpoint settings. Credentials are read from the environment only."""

    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-2024-11-20"
    temperature: float = 1.0
    timeout: float = config.CHAT_TIMEOUT
    max_retries: int = Field(default=1, ge=0)
    extraction_mode: Literal["llm", "template"] = "llm"
    mock_transcript: Optional[Path] = None

    @property
    def api_key(self) -> str:
        return os.environ.get("ITINBENCH_API_KEY", "")

    @classmethod
    def from_env(cls, **overrides) -> "ClientConfig":
        """Apply ITINBENCH_BASE_URL / ITINBENCH_MODEL on top of the defaults."""
        data = {}
        if os.environ.get("ITINBENCH_BASE_URL"):
            data["base_url"] = os.environ["ITINBENCH_BASE_URL"]
        if os.environ.get("ITINBENCH_MODEL"):
            data["model"] = os.environ["ITINBENCH_MODEL"]
        data.update(overrides)
        return cls(**data)


class AgentLimits(BaseModel):
    step_limit: int = Field(default=config.STEP_LIMIT, ge=1)
    dead_loop_repeats: int = Field(default=config.DEAD_LOOP_REPEATS, ge=2)
    max_cycle_length: int = Field(default=config.MAX_CYCLE_LENGTH, ge=2)
    context_limit_bytes: int = Field(default=config.CONTEXT_LIMIT_BYTES, ge=1)


class RunConfig(BaseModel):
    """Everything one pipeline run needs; hashed into every artifact it writes."""

    businesses_path: Optional[Path] = None
    attributes_path: Optional[Path] = None
    pool_path: Optional[Path] = None
    queries_path: Optional[Path] = None
    seeds: str = "0-99"
    task: int = Field(default=3, ge=1, le=4)
    solver: SolverName = "greedy"
    output_dir: Path = config.OUTPUT_DIR
    seed: int = 0
    workers: int = Field(default=4, ge=1)
    ingest: IngestConfig = IngestConfig()
    metrics: MetricConfig = MetricConfig()
    client: ClientConfig = ClientConfig()
    agent: AgentLimits = AgentLimits()

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value: str) -> str:
        parse_seed_range(value)
        return value

    @model_validator(mode="after")
    def _seed_flows_into_clustering(self) -> "RunConfig":
        # One knob: the run seed drives every random stage
        self.metrics.cluster_seed = self.seed
        return self

    def seed_list(self) -> list[int]:
        return parse_seed_range(self.seeds)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def require(self, *fields: str) -> None:
        """Check that the named path fields are set and point at existing files."""
        for name in fields:
            path = getattr(self, name)
            if path is None:
                raise InvalidInputError(f"{name} is not configured")
            if not Path(path).exists():
                raise InvalidInputError(f"{name} does not exist: {path}")


def parse_seed_range(text: str) -> list[int]:
    """Parse "0-99" or "1,5,9" or "3" into a list of seeds."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                lo_i, hi_i = int(lo), int(hi)
                if hi_i < lo_i:
                    raise ValueError(f"empty range {part}")
                seeds.extend(range(lo_i, hi_i + 1))
            else:
                seeds.append(int(part))
    except ValueError as e:
        raise InvalidInputError(f"Invalid seed range {text!r}: {e}")
    if not seeds:
        raise InvalidInputError(f"Invalid seed range {text!r}: no seeds")
    return seeds


def load_run_config(path: Optional[Path] = None, **overrides) -> RunConfig:
    """Load a RunConfig from JSON, then apply non-None overrides."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                data = json.load(f)
            logger.info(f"Run config loaded from {path}")
        except FileNotFoundError:
            raise InvalidInputError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"Invalid JSON in config file {path}: {e}")
    else:
        logger.info("No config file given, using defaults")

    data.update({k: v for k, v in overrides.items() if v is not None})
    client = data.get("client", {})
    if isinstance(client, dict):
        data["client"] = ClientConfig.from_env(**client).model_dump()
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise InvalidInputError(f"Invalid run config: {e}")


def save_run_config(run_config: RunConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(run_config.model_dump(mode="json"), f, indent=2, sort_keys=True)
    logger.info(f"Run config saved to {path}")
