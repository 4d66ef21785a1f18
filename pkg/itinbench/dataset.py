"""City POI ingestion, review-derived ratings and preference filtering."""

import json
import logging
import re
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from .errors import InvalidInputError, ItinBenchError
from .geo import GeoPoint
from .prompts import REVIEW_PROMPTS
from .querygen import (
    HOTEL_ATTRIBUTES,
    ORIENTATIONS,
    RESTAURANT_ATTRIBUTES,
    Preference,
    PreferenceQuery,
)
from .settings import FilterConfig, IngestConfig

logger = logging.getLogger(__name__)

Category = Literal["restaurant", "hotel", "attraction"]
CATEGORIES: tuple[Category, ...] = ("hotel", "restaurant", "attraction")

# Attribute name -> inclusive rating scale, per category
ATTRIBUTE_SCALES: dict[str, dict[str, tuple[int, int]]] = {
    "restaurant": {name: (1, 5) for name in RESTAURANT_ATTRIBUTES},
    "hotel": {name: (1, 5) for name in HOTEL_ATTRIBUTES},
    "attraction": {name: (0, 3) for name in ORIENTATIONS},
}

RATING_WORDS = {1: "bad", 2: "below average", 3: "average", 4: "good", 5: "excellent"}
LEVEL_WORDS = {0: "no", 1: "low", 2: "medium", 3: "strong"}

AttributeRatings = dict[str, int]


class DatasetError(ItinBenchError):
    """Base exception for dataset errors."""

    pass


class EmptyCategoryError(DatasetError):
    """A category has no surviving businesses after ingestion."""

    def __init__(self, category: str):
        super().__init__(f"No {category} records survived ingestion")
        self.category = category


class InfeasibleQueryError(DatasetError):
    """Preference filtering left a category empty."""

    def __init__(self, category: str, query_id: Optional[str] = None):
        super().__init__(f"No {category} satisfies the preferences of query {query_id}")
        self.category = category
        self.query_id = query_id


class ReviewParseError(DatasetError):
    """Extraction text is missing an attribute or carries an out-of-scale value."""

    def __init__(self, attribute: str, message: str):
        super().__init__(f"{attribute}: {message}")
        self.attribute = attribute


def validate_ratings(category: str, ratings: Mapping[str, int]) -> AttributeRatings:
    scales = ATTRIBUTE_SCALES[category]
    if set(ratings) != set(scales):
        raise ValueError(
            f"{category} ratings must have exactly {sorted(scales)}, got {sorted(ratings)}"
        )
    for name, value in ratings.items():
        lo, hi = scales[name]
        if not isinstance(value, int) or isinstance(value, bool) or not lo <= value <= hi:
            raise ValueError(f"{name} rating {value!r} outside {lo}-{hi}")
    return dict(ratings)


class Business(BaseModel):
    """One restaurant, hotel or attraction."""

    model_config = ConfigDict(frozen=True)

    id: str
    name: str
    address: str = ""
    location: GeoPoint
    stars: float = Field(ge=1.0, le=5.0)
    price: Optional[int] = Field(default=None, ge=1, le=4)
    category: Category
    cuisines: list[str] = []
    attributes: AttributeRatings
    review_count: int = 0
    good_for_meal: Optional[Any] = None

    @field_validator("stars")
    @classmethod
    def _half_steps(cls, value: float) -> float:
        if value * 2 != int(value * 2):
            raise ValueError(f"stars must be a multiple of 0.5: {value}")
        return value

    @model_validator(mode="after")
    def _check_category_fields(self) -> "Business":
        if self.category != "restaurant" and self.cuisines:
            raise ValueError("only restaurants carry cuisines")
        if len(self.cuisines) > 2:
            raise ValueError("at most two cuisines")
        validate_ratings(self.category, self.attributes)
        return self


class BusinessPool(BaseModel):
    """An immutable candidate pool for one city."""

    model_config = ConfigDict(frozen=True)

    city: str
    businesses: list[Business]

    _by_id: dict[str, Business] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _unique_ids(self) -> "BusinessPool":
        ids = [b.id for b in self.businesses]
        if len(ids) != len(set(ids)):
            raise ValueError("business ids must be unique within a pool")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._by_id = {b.id: b for b in self.businesses}

    def by_category(self, category: str) -> list[Business]:
        return [b for b in self.businesses if b.category == category]

    @property
    def hotels(self) -> list[Business]:
        return self.by_category("hotel")

    @property
    def restaurants(self) -> list[Business]:
        return self.by_category("restaurant")

    @property
    def attractions(self) -> list[Business]:
        return self.by_category("attraction")

    def get(self, business_id: str) -> Optional[Business]:
        return self._by_id.get(business_id)

    def counts(self) -> dict[str, int]:
        return {category: len(self.by_category(category)) for category in CATEGORIES}


# --- Ingestion -------------------------------------------------------------


def _categories_of(record: dict) -> list[str]:
    raw = record.get("categories") or []
    if isinstance(raw, str):
        return [c.strip() for c in raw.split(",") if c.strip()]
    return [str(c).strip() for c in raw]


def _classify(record: dict, rules: IngestConfig) -> Optional[str]:
    categories = _categories_of(record)
    matches = {
        "hotel": rules.hotel_keyword in categories,
        "restaurant": any(k in categories for k in rules.restaurant_keywords),
        "attraction": any(k in categories for k in rules.attraction_keywords),
    }
    for category in rules.precedence:
        if matches[category]:
            return category
    return None


def _is_unopened(record: dict) -> bool:
    is_open = record.get("is_open", 1)
    return is_open in (0, False, "0", "false", "False")


def _normalize_price(record: dict) -> Optional[int]:
    price = record.get("price")
    if price is None:
        # Yelp Open Dataset keeps the tier under attributes
        yelp_attrs = record.get("attributes")
        if isinstance(yelp_attrs, dict):
            price = yelp_attrs.get("RestaurantsPriceRange2")
    if price is None or price == "" or price == "None":
        return None
    if isinstance(price, str) and set(price) == {"$"}:
        return len(price)
    try:
        tier = int(price)
    except (TypeError, ValueError):
        return None
    return tier if 1 <= tier <= 4 else None


def _resolve_ratings(category: str, value: Any) -> AttributeRatings:
    if isinstance(value, str):
        return parse_review_ratings(value, category)
    if isinstance(value, dict):
        if "ratings" in value:
            return _resolve_ratings(category, value["ratings"])
        if "extraction" in value:
            return parse_review_ratings(value["extraction"], category)
        return validate_ratings(
            category, {k: v for k, v in value.items() if k in ATTRIBUTE_SCALES[category]}
        )
    raise ValueError(f"unsupported attribute value of type {type(value).__name__}")


def _cuisines_of(record: dict, attribute_value: Any) -> list[str]:
    cuisines = []
    for key in ("cuisine_1", "cuisine_2"):
        value = record.get(key)
        if value is None and isinstance(attribute_value, dict):
            value = attribute_value.get(key)
        if value:
            cuisines.append(str(value).strip())
    return cuisines


def _to_business(record: dict, category: str, attribute_value: Any) -> Business:
    return Business(
        id=str(record["business_id"]),
        name=str(record["name"]).strip(),
        address=str(record.get("address") or "").strip(),
        location=GeoPoint(lat=float(record["latitude"]), lon=float(record["longitude"])),
        stars=float(record["stars"]),
        price=_normalize_price(record),
        category=category,
        cuisines=_cuisines_of(record, attribute_value) if category == "restaurant" else [],
        attributes=_resolve_ratings(category, attribute_value),
        review_count=int(record.get("review_count") or 0),
        good_for_meal=record.get("good_for_meal"),
    )


def ingest_base(
    raw_records: Iterable[dict],
    category_rules: IngestConfig,
    attributes: Optional[Mapping[str, Any]] = None,
) -> BusinessPool:
    """Build a pool from raw business records plus review-derived ratings.

    Ratings are looked up by business id in ``attributes``; a record may also
    carry them inline under ``ratings``. Records that cannot be normalized are
    skipped with a warning.
    """
    attributes = attributes or {}
    survivors: dict[str, list[Business]] = {category: [] for category in CATEGORIES}
    seen: set[str] = set()

    for record in raw_records:
        business_id = record.get("business_id")
        category = _classify(record, category_rules)
        if category is None:
            continue
        if _is_unopened(record):
            logger.debug(f"Skipping unopened business {business_id}")
            continue
        if not record.get("name") or record.get("latitude") is None or record.get("longitude") is None:
            logger.warning(f"Skipping {business_id}: missing name or coordinates")
            continue
        if record.get("stars") is None:
            logger.warning(f"Skipping {business_id}: missing star rating")
            continue
        if business_id in seen:
            logger.warning(f"Skipping duplicate business id {business_id}")
            continue
        attribute_value = attributes.get(business_id, record.get("ratings"))
        if attribute_value is None:
            logger.warning(f"Skipping {business_id}: no review-derived ratings")
            continue
        try:
            business = _to_business(record, category, attribute_value)
        except (ValidationError, ValueError, TypeError, ReviewParseError) as e:
            logger.warning(f"Skipping {business_id}: {e}")
            continue
        seen.add(business_id)
        survivors[category].append(business)

    restaurants = sorted(survivors["restaurant"], key=lambda b: (-b.review_count, b.id))
    survivors["restaurant"] = restaurants[: category_rules.restaurant_limit]

    for category in CATEGORIES:
        if not survivors[category]:
            raise EmptyCategoryError(category)

    businesses = survivors["hotel"] + survivors["restaurant"] + survivors["attraction"]
    pool = BusinessPool(city=category_rules.city, businesses=businesses)
    logger.info(f"Ingested {pool.counts()} businesses for {pool.city}")
    return pool


def select_reviews(reviews: Iterable[dict]) -> list[dict]:
    """Keep reviews marked useful at least once, in input order."""
    return [r for r in reviews if float(r.get("useful", 0) or 0) >= 1]


def compile_reviews(reviews: Iterable[dict]) -> dict[str, str]:
    """Group useful review text per business, ready for the extraction prompt."""
    compiled: dict[str, list[str]] = {}
    for review in select_reviews(reviews):
        compiled.setdefault(str(review["business_id"]), []).append(str(review.get("text", "")).strip())
    return {business_id: "\n\n".join(texts) for business_id, texts in compiled.items()}


def review_extraction_prompt(category: str, reviews_text: str) -> str:
    if category not in REVIEW_PROMPTS:
        raise InvalidInputError(f"Unknown category: {category}")
    return REVIEW_PROMPTS[category].format(reviews=reviews_text)


_RATING_SENTENCE = re.compile(r"rating of (\d+) for (?:[A-Za-z]+ )*?([A-Za-z]+)\s*[.,;]", re.IGNORECASE)
_LEVEL_SENTENCE = re.compile(r"([A-Za-z]+) oriented level (\d+)", re.IGNORECASE)


def parse_review_ratings(extraction_text: str, category: str) -> AttributeRatings:
    """Read one rating per expected attribute from review-extraction output."""
    if category not in ATTRIBUTE_SCALES:
        raise InvalidInputError(f"Unknown category: {category}")
    scales = ATTRIBUTE_SCALES[category]

    if category == "attraction":
        pairs = [(m.group(1).lower(), m.group(2)) for m in _LEVEL_SENTENCE.finditer(extraction_text)]
    else:
        pairs = [(m.group(2).lower(), m.group(1)) for m in _RATING_SENTENCE.finditer(extraction_text)]

    ratings: AttributeRatings = {}
    for name, value in pairs:
        if name in scales and name not in ratings:
            ratings[name] = int(value)

    for name, (lo, hi) in scales.items():
        if name not in ratings:
            raise ReviewParseError(name, "no rating found")
        if not lo <= ratings[name] <= hi:
            raise ReviewParseError(name, f"value {ratings[name]} outside {lo}-{hi}")
    return ratings


# --- Preference predicates ---------------------------------------------------


def budget_ok(business: Business, budget: str, thresholds: FilterConfig) -> bool:
    # Unknown price never passes a budget filter
    return business.price is not None and business.price in thresholds.budget_tiers[budget]


def cuisine_ok(business: Business, cuisine: str) -> bool:
    wanted = cuisine.strip().casefold()
    return any(c.casefold() == wanted for c in business.cuisines)


def satisfies(business: Business, pref: Preference, thresholds: FilterConfig) -> bool:
    """The predicate table shared by filtering, tool search and scoring."""
    if not pref.applies_to(business.category):
        raise InvalidInputError(f"{pref.kind} preference does not apply to a {business.category}")
    if pref.kind == "budget":
        return budget_ok(business, pref.value, thresholds)
    if pref.kind == "cuisine":
        return cuisine_ok(business, pref.value)
    if pref.kind == "restaurant":
        return business.attributes.get(pref.value, 0) >= thresholds.restaurant_threshold
    if pref.kind == "hotel":
        return business.attributes.get(pref.value, 0) >= thresholds.hotel_threshold
    return business.attributes.get(pref.value, 0) >= thresholds.attraction_threshold


def search_category(
    pool: BusinessPool,
    category: str,
    prefs: list[Preference],
    thresholds: FilterConfig,
) -> list[Business]:
    """Businesses of one category meeting every given preference, pool order kept."""
    applicable = [p for p in prefs if p.applies_to(category)]
    return [
        b for b in pool.by_category(category)
        if all(satisfies(b, p, thresholds) for p in applicable)
    ]


def filter_pool(pool: BusinessPool, query: PreferenceQuery, thresholds: FilterConfig) -> BusinessPool:
    prefs = query.preferences()
    kept: list[Business] = []
    for category in CATEGORIES:
        matches = search_category(pool, category, prefs, thresholds)
        if not matches:
            raise InfeasibleQueryError(category, query.id)
        kept.extend(matches)
    # Preserve the input pool's ordering
    kept_ids = {b.id for b in kept}
    return BusinessPool(city=pool.city, businesses=[b for b in pool.businesses if b.id in kept_ids])


# --- Rendering and files -----------------------------------------------------


def describe_business(business: Business) -> str:
    """One line per business, ratings spelled out as phrases."""
    parts = [
        f"Name: {business.name}",
        f"Address: {business.address}",
        f"Latitude: {business.location.lat:.6f}",
        f"Longitude: {business.location.lon:.6f}",
        f"Stars: {business.stars:g}",
        f"Price: {'$' * business.price if business.price else 'unknown'}",
    ]
    if business.category == "restaurant" and business.cuisines:
        parts.append(f"Cuisine: {', '.join(business.cuisines)}")
    if business.category == "attraction":
        traits = [f"{LEVEL_WORDS[v]} {k} tendency" for k, v in business.attributes.items()]
    else:
        traits = [f"{RATING_WORDS[v]} {k}" for k, v in business.attributes.items()]
    parts.append(", ".join(traits))
    return "; ".join(parts)


def describe_pool(pool: BusinessPool) -> str:
    sections = []
    for category, title in (("hotel", "Hotels"), ("restaurant", "Restaurants"), ("attraction", "Attractions")):
        members = pool.by_category(category)
        if members:
            sections.append(f"{title}:\n" + "\n".join(describe_business(b) for b in members))
    return "\n\n".join(sections)


def load_jsonl(path: Path) -> list[dict]:
    records = []
    try:
        with open(path, "r") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    logger.warning(f"{path}:{line_no}: skipping malformed line ({e})")
    except FileNotFoundError:
        raise InvalidInputError(f"File not found: {path}")
    return records


def load_attribute_file(path: Path) -> dict[str, Any]:
    """Map business id to its ratings object or extraction text."""
    attributes = {}
    for record in load_jsonl(path):
        business_id = record.get("business_id")
        if business_id is None:
            continue
        attributes[str(business_id)] = {k: v for k, v in record.items() if k != "business_id"}
    return attributes


def save_pool(pool: BusinessPool, path: Path, config_hash: Optional[str] = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config_hash": config_hash, **pool.model_dump(mode="json")}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info(f"Pool saved to {path}")


def load_pool(path: Path) -> BusinessPool:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidInputError(f"Pool file not found: {path}")
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Invalid JSON in pool file {path}: {e}")
    data.pop("config_hash", None)
    try:
        return BusinessPool(**data)
    except ValidationError as e:
        raise InvalidInputError(f"Invalid pool file {path}: {e}")
