"""Itinerary model, plan documents and the out-of-pool / missing checks."""

import json
import logging
import re
import unicodedata
from pathlib import Path
from typing import Any, Iterator, Literal, Optional

from pydantic import BaseModel, ConfigDict, model_validator

from .dataset import BusinessPool
from .errors import InvalidInputError, ItinBenchError

logger = logging.getLogger(__name__)

PlanSource = Literal["greedy", "astar", "heldkarp", "llm-task1", "llm-task2", "llm-task3", "llm-task4"]
Flag = Literal["out_of_pool", "missing"]

MISSING_MARK = "-"
MEAL_SLOTS = ("breakfast", "lunch", "dinner")
SESSION_SLOTS = ("morning_attractions", "afternoon_attractions", "night_attractions")
# Document key order of one day
SLOT_ORDER = (
    "accommodation", "breakfast", "morning_attractions", "lunch",
    "afternoon_attractions", "dinner", "night_attractions",
)
SLOT_CATEGORY = {
    "accommodation": "hotel",
    "breakfast": "restaurant",
    "lunch": "restaurant",
    "dinner": "restaurant",
    "morning_attractions": "attraction",
    "afternoon_attractions": "attraction",
    "night_attractions": "attraction",
}


class PlanParseError(ItinBenchError):
    """A plan document or plan text does not follow the extraction layout."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class SlotEntry(BaseModel):
    """One recommended business. A name of None means the slot was left empty."""

    model_config = ConfigDict(frozen=True)

    name: Optional[str] = None
    address: Optional[str] = None
    resolved: Optional[str] = None
    flags: frozenset[Flag] = frozenset()

    @model_validator(mode="after")
    def _check_flags(self) -> "SlotEntry":
        if len(self.flags) > 1:
            raise ValueError("out_of_pool and missing are mutually exclusive")
        if "missing" in self.flags and self.resolved is not None:
            raise ValueError("a missing entry cannot be resolved")
        if self.resolved is not None and self.flags:
            raise ValueError("a resolved entry carries no flags")
        return self

    @property
    def is_missing(self) -> bool:
        return self.name is None

    @property
    def evaluable(self) -> bool:
        return self.resolved is not None and not self.flags

    @classmethod
    def missing(cls) -> "SlotEntry":
        return cls(flags=frozenset({"missing"}))


class DayPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    accommodation: SlotEntry
    breakfast: SlotEntry
    lunch: SlotEntry
    dinner: SlotEntry
    morning_attractions: list[SlotEntry] = []
    afternoon_attractions: list[SlotEntry] = []
    night_attractions: list[SlotEntry] = []

    @property
    def attractions(self) -> list[SlotEntry]:
        """Visit order: morning, afternoon, night."""
        return self.morning_attractions + self.afternoon_attractions + self.night_attractions

    def entries(self) -> Iterator[tuple[str, SlotEntry]]:
        for slot in SLOT_ORDER:
            value = getattr(self, slot)
            if isinstance(value, list):
                for entry in value:
                    yield slot, entry
            else:
                yield slot, value

    def meals(self) -> list[SlotEntry]:
        return [self.breakfast, self.lunch, self.dinner]


class Itinerary(BaseModel):
    model_config = ConfigDict(frozen=True)

    days: list[DayPlan]
    source: PlanSource
    query_ref: Optional[str] = None

    @model_validator(mode="after")
    def _check_days(self) -> "Itinerary":
        if not self.days:
            raise ValueError("an itinerary has at least one day")
        return self

    def entries(self) -> Iterator[tuple[int, str, SlotEntry]]:
        for index, day in enumerate(self.days):
            for slot, entry in day.entries():
                yield index, slot, entry

    def has_flag(self, flag: str) -> bool:
        return any(flag in entry.flags for _, _, entry in self.entries())

    def count_flag(self, flag: str) -> int:
        return sum(1 for _, _, entry in self.entries() if flag in entry.flags)

    def to_document(self, include_ids: bool = True) -> list[dict]:
        """The extraction-schema document, "-" for empty slots."""
        def render(entry: SlotEntry) -> dict:
            data: dict[str, Any] = {
                "name": entry.name if entry.name is not None else MISSING_MARK,
                "address": entry.address if entry.address is not None else MISSING_MARK,
            }
            if include_ids and entry.resolved is not None:
                data["id"] = entry.resolved
            return data

        document = []
        for day in self.days:
            record = {}
            for slot in SLOT_ORDER:
                value = getattr(day, slot)
                record[slot] = [render(e) for e in value] if isinstance(value, list) else render(value)
            document.append(record)
        return document


# --- Parsing -------------------------------------------------------------------


def _text_or_none(value: Any) -> Optional[str]:
    if value is None:
        return None
    text = str(value).strip()
    return None if text in ("", MISSING_MARK) else text


def _parse_entry(raw: Any, path: str) -> SlotEntry:
    if raw is None:
        return SlotEntry.missing()
    if isinstance(raw, str):
        raw = {"name": raw}
    if not isinstance(raw, dict):
        raise PlanParseError(path, f"expected an object with name and address, got {type(raw).__name__}")
    name = _text_or_none(raw.get("name"))
    if name is None:
        return SlotEntry.missing()
    return SlotEntry(
        name=name,
        address=_text_or_none(raw.get("address")),
        resolved=_text_or_none(raw.get("id")),
    )


def _parse_session(raw: Any, path: str) -> list[SlotEntry]:
    if raw is None:
        return []
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list):
        raise PlanParseError(path, f"expected an array, got {type(raw).__name__}")
    entries = [_parse_entry(item, f"{path}[{i}]") for i, item in enumerate(raw)]
    # A "-" placeholder inside a session stands for no attraction
    return [e for e in entries if not e.is_missing]


def _parse_day(raw: Any, path: str) -> DayPlan:
    if not isinstance(raw, dict):
        raise PlanParseError(path, f"expected a day object, got {type(raw).__name__}")
    fields: dict[str, Any] = {}
    for slot in SLOT_ORDER:
        value = raw.get(slot)
        slot_path = f"{path}.{slot}"
        if slot in SESSION_SLOTS:
            fields[slot] = _parse_session(value, slot_path)
        else:
            if isinstance(value, list):
                # Some extractions wrap single slots in an array
                value = value[0] if value else None
            fields[slot] = _parse_entry(value, slot_path)
    return DayPlan(**fields)


def parse_itinerary(doc: Any, source: str = "llm-task1", query_ref: Optional[str] = None) -> Itinerary:
    """Build an Itinerary from an extraction document.

    Accepts the top-level array of days, an object keyed by day (in key order),
    or a plan file object carrying ``days``.
    """
    if isinstance(doc, dict) and "days" in doc:
        source = doc.get("source", source)
        query_ref = doc.get("query_ref", query_ref)
        doc = doc["days"]
    if isinstance(doc, dict):
        items = list(doc.items())
    elif isinstance(doc, list):
        items = [(f"day[{i}]", day) for i, day in enumerate(doc)]
    else:
        raise PlanParseError("$", f"expected an array of days, got {type(doc).__name__}")
    if not items:
        raise PlanParseError("$", "plan has no days")
    days = [_parse_day(day, f"$.{key}") for key, day in items]
    try:
        return Itinerary(days=days, source=source, query_ref=query_ref)
    except ValueError as e:
        raise PlanParseError("$", str(e))


_PUNCTUATION = re.compile(r"[^\w\s]")
_SPACES = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Case-fold, strip punctuation, collapse whitespace."""
    text = unicodedata.normalize("NFKC", name).casefold()
    text = _PUNCTUATION.sub("", text)
    return _SPACES.sub(" ", text).strip()


def _name_index(pool: BusinessPool) -> dict[tuple[str, str], str]:
    index: dict[tuple[str, str], str] = {}
    for business in sorted(pool.businesses, key=lambda b: b.id):
        index.setdefault((business.category, normalize_name(business.name)), business.id)
    return index


def _resolve(entry: SlotEntry, category: str, pool: BusinessPool, index: dict) -> SlotEntry:
    if entry.is_missing:
        return SlotEntry.missing()
    key = normalize_name(entry.name)
    if entry.resolved is not None:
        # A supplied id only disambiguates; the name must still match the pool
        business = pool.get(entry.resolved)
        if business is not None and business.category == category and normalize_name(business.name) == key:
            return entry.model_copy(update={"flags": frozenset()})
    business_id = index.get((category, key))
    if business_id is None:
        return SlotEntry(name=entry.name, address=entry.address, flags=frozenset({"out_of_pool"}))
    return SlotEntry(name=entry.name, address=entry.address, resolved=business_id)


def check_failures(it: Itinerary, pool: BusinessPool) -> Itinerary:
    """Resolve every entry against the pool and flag the ones that fail."""
    index = _name_index(pool)
    days = []
    for day in it.days:
        fields: dict[str, Any] = {}
        for slot in SLOT_ORDER:
            value = getattr(day, slot)
            category = SLOT_CATEGORY[slot]
            if isinstance(value, list):
                fields[slot] = [_resolve(e, category, pool, index) for e in value]
            else:
                fields[slot] = _resolve(value, category, pool, index)
        days.append(DayPlan(**fields))
    checked = it.model_copy(update={"days": days})
    logger.debug(
        f"Checked plan {it.query_ref}: {checked.count_flag('out_of_pool')} out of pool, "
        f"{checked.count_flag('missing')} missing"
    )
    return checked


# --- Plan prose ----------------------------------------------------------------

_DAY_HEADER = re.compile(r"^\W*day\s*(\d+|x)\b", re.IGNORECASE)
_SLOT_HEADER = re.compile(
    r"^[-*\s]*(accommodation|hotel|breakfast|lunch|dinner|morning|afternoon|night|evening)"
    r"(?:\s+attractions?)?\s*:\s*$",
    re.IGNORECASE,
)
_NAME_LINE = re.compile(r"^[-*\s]*name\s*:\s*(.*?)\s*;?\s*$", re.IGNORECASE)
_ADDRESS_LINE = re.compile(r"^[-*\s]*address\s*:\s*(.*?)\s*;?\s*$", re.IGNORECASE)
_INLINE_ADDRESS = re.compile(r"^(.*?)\s*[;,]?\s*address\s*:\s*(.*?)\s*;?\s*$", re.IGNORECASE)
_HEADER_SLOTS = {
    "accommodation": "accommodation",
    "hotel": "accommodation",
    "breakfast": "breakfast",
    "lunch": "lunch",
    "dinner": "dinner",
    "morning": "morning_attractions",
    "afternoon": "afternoon_attractions",
    "night": "night_attractions",
    "evening": "night_attractions",
}


def _empty_day() -> dict[str, list[dict]]:
    return {slot: [] for slot in SLOT_ORDER}


def parse_plan_text(text: str) -> list[dict]:
    """Read the "Travel Plan" prose layout into an extraction document."""
    days: list[dict[str, list[dict]]] = []
    slot: Optional[str] = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if _DAY_HEADER.match(stripped) and stripped.rstrip().endswith(":"):
            days.append(_empty_day())
            slot = None
            continue
        header = _SLOT_HEADER.match(stripped)
        if header:
            if not days:
                raise PlanParseError(f"line {line_no}", "slot header before any day header")
            slot = _HEADER_SLOTS[header.group(1).lower()]
            continue
        name = _NAME_LINE.match(stripped)
        if name and days and slot is not None:
            value, address_text = name.group(1), MISSING_MARK
            inline = _INLINE_ADDRESS.match(value)
            if inline:
                value, address_text = inline.group(1), inline.group(2)
            days[-1][slot].append({"name": value, "address": address_text})
            continue
        address = _ADDRESS_LINE.match(stripped)
        if address and days and slot is not None and days[-1][slot]:
            days[-1][slot][-1]["address"] = address.group(1)

    if not days:
        raise PlanParseError("$", "no day headers found in plan text")

    document = []
    for day in days:
        record: dict[str, Any] = {}
        for key in SLOT_ORDER:
            if key in SESSION_SLOTS:
                record[key] = day[key]
            else:
                record[key] = day[key][0] if day[key] else {"name": MISSING_MARK, "address": MISSING_MARK}
        document.append(record)
    return document


# --- Plan files ------------------------------------------------------------------


def plan_filename(it: Itinerary) -> str:
    return f"{it.query_ref or 'plan'}.{it.source}.json"


def save_plan(it: Itinerary, path: Path, config_hash: Optional[str] = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "source": it.source,
        "query_ref": it.query_ref,
        "config_hash": config_hash,
        "days": it.to_document(),
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.debug(f"Plan saved to {path}")


def load_plan(path: Path) -> Itinerary:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidInputError(f"Plan file not found: {path}")
    except json.JSONDecodeError as e:
        raise PlanParseError(str(path), f"invalid JSON: {e}")
    return parse_itinerary(data)


def load_plans(directory: Path) -> list[Itinerary]:
    """All plan files of a directory, in file-name order."""
    if not directory.is_dir():
        raise InvalidInputError(f"Plan directory not found: {directory}")
    return [load_plan(path) for path in sorted(directory.glob("*.json"))]
