import random
from typing import Optional, Sequence

import pytest

from itinbench.dataset import ATTRIBUTE_SCALES, Business, BusinessPool
from itinbench.geo import GeoPoint
from itinbench.plan_model import DayPlan, Itinerary, SlotEntry
from itinbench.querygen import CUISINES, PreferenceQuery

CENTER = (39.9526, -75.1652)


def business(
    business_id: str,
    category: str,
    lat: float,
    lon: float,
    price: Optional[int] = 1,
    level: Optional[int] = None,
    ratings: Optional[dict] = None,
    cuisines: Sequence[str] = (),
    name: Optional[str] = None,
) -> Business:
    """A business whose ratings all sit at ``level`` unless given explicitly."""
    scales = ATTRIBUTE_SCALES[category]
    if ratings is None:
        if level is None:
            level = max(hi for _, hi in scales.values())
        ratings = {attr: level for attr in scales}
    return Business(
        id=business_id,
        name=name or business_id.replace("_", " ").title(),
        address=f"{business_id} Street",
        location=GeoPoint(lat=lat, lon=lon),
        stars=4.0,
        price=price,
        category=category,
        cuisines=list(cuisines),
        attributes=ratings,
    )


def entry(b: Business) -> SlotEntry:
    return SlotEntry(name=b.name, address=b.address, resolved=b.id)


def day_plan(
    hotel: Optional[Business],
    attractions: Sequence[Business],
    meals: Sequence[Optional[Business]] = (None, None, None),
) -> DayPlan:
    """One day; attractions fill morning (1), afternoon (2) and night (rest)."""
    slots = [entry(m) if m is not None else SlotEntry.missing() for m in meals]
    visits = [entry(a) for a in attractions]
    return DayPlan(
        accommodation=entry(hotel) if hotel is not None else SlotEntry.missing(),
        breakfast=slots[0],
        lunch=slots[1],
        dinner=slots[2],
        morning_attractions=visits[:1],
        afternoon_attractions=visits[1:3],
        night_attractions=visits[3:],
    )


def itinerary(days: Sequence[DayPlan], source: str = "llm-task2", query_ref: str = "q0000") -> Itinerary:
    return Itinerary(days=list(days), source=source, query_ref=query_ref)


def make_query(**overrides) -> PreferenceQuery:
    data = dict(
        id="q0000",
        days=2,
        budget="cheap",
        orientation="history",
        restaurant_prefs=["flavor"],
        cuisine="Italian",
        hotel_prefs=["quality"],
    )
    data.update(overrides)
    return PreferenceQuery(**data)


def _scatter(rng: random.Random, spread: float = 0.05) -> tuple[float, float]:
    return CENTER[0] + rng.uniform(-spread, spread), CENTER[1] + rng.uniform(-spread, spread)


def build_city_pool(seed: int = 7) -> BusinessPool:
    """Every budget, cuisine and orientation has enough good candidates for a 4-day query."""
    rng = random.Random(seed)
    businesses = []
    for price in (1, 2, 3, 4):
        for i in range(2):
            businesses.append(business(f"hotel_{price}_{i}", "hotel", *_scatter(rng), price=price))
        businesses.append(business(f"hotel_{price}_poor", "hotel", *_scatter(rng), price=price, level=2))
    for cuisine in CUISINES:
        slug = cuisine.lower().replace(" ", "_")
        for price in (1, 2, 3):
            for i in range(3):
                businesses.append(
                    business(f"rest_{slug}_{price}_{i}", "restaurant", *_scatter(rng), price=price, cuisines=[cuisine])
                )
        businesses.append(
            business(f"rest_{slug}_poor", "restaurant", *_scatter(rng), price=1, level=2, cuisines=[cuisine])
        )
    for price in (1, 2, 3):
        for i in range(18):
            businesses.append(business(f"attr_{price}_{i}", "attraction", *_scatter(rng), price=price))
        businesses.append(business(f"attr_{price}_dull", "attraction", *_scatter(rng), price=price, level=0))
    return BusinessPool(city="Philadelphia", businesses=businesses)


@pytest.fixture(scope="session")
def city_pool() -> BusinessPool:
    return build_city_pool()


@pytest.fixture
def tiny_pool() -> BusinessPool:
    """A hand-rated pool for preference scoring fixtures."""
    lat, lon = CENTER
    return BusinessPool(
        city="Philadelphia",
        businesses=[
            business("hotel_good", "hotel", lat, lon, price=1),
            business("hotel_pricey", "hotel", lat + 0.01, lon, price=3),
            business("rest_good", "restaurant", lat, lon + 0.01, price=1, cuisines=["Italian"]),
            business("rest_thai", "restaurant", lat, lon - 0.01, price=1, level=2, cuisines=["Thai"]),
            business("attr_history", "attraction", lat + 0.02, lon, price=1),
            business("attr_plain", "attraction", lat - 0.02, lon, price=1, level=0),
        ],
    )


def two_group_pool() -> tuple[BusinessPool, list[Business], list[Business], Business, Business]:
    """Two tight groups about 55 km apart, one hotel and four attractions in each."""
    groups = []
    hotels = []
    for label, (lat, lon) in (("a", (39.95, -75.60)), ("b", (39.95, -74.95))):
        hotels.append(business(f"hotel_{label}", "hotel", lat, lon))
        groups.append(
            [
                business(f"attr_{label}{i}", "attraction", lat + 0.003 * (i + 1), lon + 0.002 * (i % 2))
                for i in range(4)
            ]
        )
    pool = BusinessPool(city="Philadelphia", businesses=hotels + groups[0] + groups[1])
    return pool, groups[0], groups[1], hotels[0], hotels[1]


def four_group_pool() -> tuple[BusinessPool, list[list[Business]], list[Business]]:
    """Four tight groups at the corners of a large square, a hotel and four attractions each."""
    corners = [(39.70, -75.50), (39.70, -74.90), (40.20, -75.50), (40.20, -74.90)]
    groups, hotels = [], []
    for g, (lat, lon) in enumerate(corners, start=1):
        hotels.append(business(f"hotel_g{g}", "hotel", lat, lon))
        groups.append(
            [
                business(f"attr_g{g}_{i}", "attraction", lat + 0.002 * (i + 1), lon - 0.002 * (i % 2))
                for i in range(4)
            ]
        )
    pool = BusinessPool(city="Philadelphia", businesses=hotels + [a for grp in groups for a in grp])
    return pool, groups, hotels
