"""Preference-query sampling and rendering."""

import json
import logging
import random
import re
from pathlib import Path
from typing import Iterable, Literal, Optional

from pydantic import BaseModel, field_validator, model_validator

from .errors import InvalidInputError
from .prompts import QUERY_GENERATION_PROMPT

logger = logging.getLogger(__name__)

DAY_OPTIONS = [2, 3, 4]
BUDGETS = ["cheap", "moderate", "expensive"]
ORIENTATIONS = ["family", "history", "activity", "nature", "food", "shopping"]
RESTAURANT_ATTRIBUTES = ["flavor", "freshness", "service", "environment", "value"]
HOTEL_ATTRIBUTES = ["quality", "location", "service", "safety"]
CUISINES = [
    "US", "Mexican", "Irish", "French", "Italian", "Greek", "Indian",
    "Chinese", "Japanese", "Korean", "Vietnamese", "Thai", "Asian Fusion",
    "Middle Eastern",
]
PREF_COUNTS = [1, 2, 3]
PREF_COUNT_WEIGHTS = [0.6, 0.3, 0.1]

PreferenceKind = Literal["budget", "cuisine", "orientation", "restaurant", "hotel"]


class Preference(BaseModel):
    """One checkable preference: a kind plus its value (e.g. hotel/location)."""

    kind: PreferenceKind
    value: str

    def applies_to(self, category: str) -> bool:
        if self.kind == "budget":
            return True
        if self.kind in ("cuisine", "restaurant"):
            return category == "restaurant"
        if self.kind == "hotel":
            return category == "hotel"
        return category == "attraction"


class PreferenceQuery(BaseModel):
    id: Optional[str] = None
    seed: Optional[int] = None
    days: int
    budget: Literal["cheap", "moderate", "expensive"]
    orientation: str
    restaurant_prefs: list[str]
    cuisine: str
    hotel_prefs: list[str]
    text: Optional[str] = None

    @field_validator("days")
    @classmethod
    def _check_days(cls, value: int) -> int:
        if value not in DAY_OPTIONS:
            raise ValueError(f"days must be one of {DAY_OPTIONS}")
        return value

    @field_validator("orientation")
    @classmethod
    def _check_orientation(cls, value: str) -> str:
        if value not in ORIENTATIONS:
            raise ValueError(f"unknown orientation: {value}")
        return value

    @field_validator("cuisine")
    @classmethod
    def _check_cuisine(cls, value: str) -> str:
        if value not in CUISINES:
            raise ValueError(f"unknown cuisine: {value}")
        return value

    @model_validator(mode="after")
    def _check_prefs(self) -> "PreferenceQuery":
        for prefs, allowed, label in (
            (self.restaurant_prefs, RESTAURANT_ATTRIBUTES, "restaurant"),
            (self.hotel_prefs, HOTEL_ATTRIBUTES, "hotel"),
        ):
            if not 1 <= len(prefs) <= 3:
                raise ValueError(f"{label} preferences must number 1 to 3")
            if len(set(prefs)) != len(prefs):
                raise ValueError(f"duplicate {label} preference")
            unknown = [p for p in prefs if p not in allowed]
            if unknown:
                raise ValueError(f"unknown {label} preference(s): {unknown}")
        return self

    def preference_count(self) -> int:
        """Days, budget, orientation and cuisine count once each."""
        return 4 + len(self.restaurant_prefs) + len(self.hotel_prefs)

    def preferences(self) -> list[Preference]:
        prefs = [
            Preference(kind="budget", value=self.budget),
            Preference(kind="orientation", value=self.orientation),
            Preference(kind="cuisine", value=self.cuisine),
        ]
        prefs += [Preference(kind="restaurant", value=p) for p in self.restaurant_prefs]
        prefs += [Preference(kind="hotel", value=p) for p in self.hotel_prefs]
        return prefs

    def preferences_for(self, category: str) -> list[Preference]:
        return [p for p in self.preferences() if p.applies_to(category)]

    def same_preferences(self, other: "PreferenceQuery") -> bool:
        fields = {"id", "seed", "text"}
        return self.model_dump(exclude=fields) == other.model_dump(exclude=fields)


def query_id(seed: int) -> str:
    return f"q{seed:04d}"


def sample_query(seed: int) -> PreferenceQuery:
    """Draw one query; uniform single choices, weighted 1-3 multi choices."""
    rng = random.Random(seed)
    days = rng.choice(DAY_OPTIONS)
    budget = rng.choice(BUDGETS)
    orientation = rng.choice(ORIENTATIONS)
    n_restaurant = rng.choices(PREF_COUNTS, weights=PREF_COUNT_WEIGHTS)[0]
    restaurant_prefs = rng.sample(RESTAURANT_ATTRIBUTES, n_restaurant)
    cuisine = rng.choice(CUISINES)
    n_hotel = rng.choices(PREF_COUNTS, weights=PREF_COUNT_WEIGHTS)[0]
    hotel_prefs = rng.sample(HOTEL_ATTRIBUTES, n_hotel)

    query = PreferenceQuery(
        id=query_id(seed),
        seed=seed,
        days=days,
        budget=budget,
        orientation=orientation,
        restaurant_prefs=restaurant_prefs,
        cuisine=cuisine,
        hotel_prefs=hotel_prefs,
    )
    return query.model_copy(update={"text": render_query_text(query)})


def sample_queries(seeds: Iterable[int]) -> list[PreferenceQuery]:
    return [sample_query(seed) for seed in seeds]


def _good(attrs: list[str]) -> list[str]:
    return [f"good {a}" for a in attrs]


def _join(phrases: list[str]) -> str:
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def render_query_text(q: PreferenceQuery) -> str:
    restaurant = _join(_good(q.restaurant_prefs))
    hotel_first, *hotel_rest = _good(q.hotel_prefs)
    hotel = f"a {hotel_first} hotel"
    if hotel_rest:
        hotel += f" in a {_join(hotel_rest)}"
    return (
        f"I want to go for a {q.days}-day trip with a {q.budget} budget. "
        f"I want to visit some {q.orientation}-oriented attractions. "
        f"Please find some {restaurant} restaurants that provide {q.cuisine} cuisine, "
        f"I want to stay in {hotel}."
    )


_QUERY_PATTERN = re.compile(
    r"^I want to go for a (?P<days>\d+)-day trip with a (?P<budget>\w+) budget\. "
    r"I want to visit some (?P<orientation>\w+)-oriented attractions\. "
    r"Please find some (?P<restaurant>.+?) restaurants that provide (?P<cuisine>.+?) cuisine, "
    r"I want to stay in a (?P<hotel>.+?) hotel(?: in a (?P<hotel_rest>.+?))?\.$"
)


def _scan_keywords(segment: str, attributes: list[str]) -> list[str]:
    """Find "good <attr>" phrases in a segment, in order of appearance."""
    found = []
    for attr in attributes:
        for match in re.finditer(rf"\bgood {attr}\b", segment):
            found.append((match.start(), attr))
    return [attr for _, attr in sorted(found)]


def parse_query_text(text: str) -> PreferenceQuery:
    """Invert render_query_text by scanning for the option keywords."""
    match = _QUERY_PATTERN.match(text.strip())
    if not match:
        raise InvalidInputError(f"Query text does not follow the query template: {text!r}")
    hotel_segment = match.group("hotel") + " " + (match.group("hotel_rest") or "")
    try:
        return PreferenceQuery(
            days=int(match.group("days")),
            budget=match.group("budget"),
            orientation=match.group("orientation"),
            restaurant_prefs=_scan_keywords(match.group("restaurant"), RESTAURANT_ATTRIBUTES),
            cuisine=match.group("cuisine"),
            hotel_prefs=_scan_keywords(hotel_segment, HOTEL_ATTRIBUTES),
            text=text,
        )
    except ValueError as e:
        raise InvalidInputError(f"Query text names invalid preferences: {e}")


def query_generation_prompt(q: PreferenceQuery) -> str:
    """Paraphrase prompt for a query; rendering only, never executed by the pipeline."""
    lines = [
        f"- general: {q.days} days, {q.budget} budget,",
        f"- attraction: {q.orientation} oriented,",
        f"- restaurants: {q.cuisine}, {', '.join(_good(q.restaurant_prefs))},",
        f"- hotel: {', '.join(_good(q.hotel_prefs))}",
    ]
    return QUERY_GENERATION_PROMPT.format(input="\n\n".join(lines))


def save_queries(queries: list[PreferenceQuery], path: Path, config_hash: Optional[str] = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    # Each object carries the hash of the config that produced it
    payload = [{**q.model_dump(mode="json"), "config_hash": config_hash} for q in queries]
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {len(queries)} queries to {path}")


def load_queries(path: Path) -> list[PreferenceQuery]:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidInputError(f"Query file not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Invalid JSON in query file {path}: {e}")
    if not isinstance(data, list):
        raise InvalidInputError(f"Query file {path} must hold a JSON array")
    return [PreferenceQuery(**record) for record in data]
