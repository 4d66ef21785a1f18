"""GeoJSON figures of a plan: day routes, POIs and cluster hulls."""

import logging
from pathlib import Path
from typing import Optional

import geojson
import numpy as np
from geojson import Feature, FeatureCollection, LineString, Point, Polygon
from scipy.spatial import ConvexHull, QhullError

from .clustering import kmeans_clusters
from .dataset import Business, BusinessPool
from .plan_model import SLOT_CATEGORY, Itinerary, check_failures

logger = logging.getLogger(__name__)

DAY_COLORS = ["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf"]


def _coords(b: Business) -> tuple[float, float]:
    # GeoJSON positions are (lon, lat)
    return (b.location.lon, b.location.lat)


def _day_stops(itinerary: Itinerary, pool: BusinessPool, day_index: int) -> list[Business]:
    day = itinerary.days[day_index]
    hotel = pool.get(day.accommodation.resolved) if day.accommodation.evaluable else None
    attractions = [pool.get(e.resolved) for e in day.attractions if e.evaluable]
    attractions = [a for a in attractions if a is not None]
    if hotel is None:
        return attractions
    return [hotel] + attractions + [hotel]


def _hull(members: list[Business]) -> Optional[list[tuple[float, float]]]:
    points = np.unique(np.array([_coords(b) for b in members]), axis=0)
    if len(points) < 3:
        return None
    try:
        hull = ConvexHull(points)
    except QhullError:
        # Collinear members span no area
        return None
    ring = [tuple(points[i]) for i in hull.vertices]
    return ring + [ring[0]]


def plan_geojson(
    itinerary: Itinerary, pool: BusinessPool, seed: int = 0, config_hash: Optional[str] = None
) -> FeatureCollection:
    """One LineString per day, one Point per resolved POI, one Polygon per cluster hull.

    The collection's own properties name the plan and, when given, the run config hash.
    """
    itinerary = check_failures(itinerary, pool)
    features = []

    for index in range(len(itinerary.days)):
        stops = _day_stops(itinerary, pool, index)
        if len(stops) < 2:
            logger.info(f"Day {index + 1} has too few resolved stops for a route line")
            continue
        features.append(
            Feature(
                geometry=LineString([_coords(b) for b in stops]),
                properties=dict(
                    kind="route",
                    day=index + 1,
                    color=DAY_COLORS[index % len(DAY_COLORS)],
                    stops=[b.name for b in stops],
                ),
            )
        )

    seen: dict[str, dict] = {}
    for day_index, slot, entry in itinerary.entries():
        if not entry.evaluable:
            continue
        business = pool.get(entry.resolved)
        if business is None:
            continue
        if business.id in seen:
            if day_index + 1 not in seen[business.id]["days"]:
                seen[business.id]["days"].append(day_index + 1)
            continue
        seen[business.id] = dict(
            kind="poi",
            id=business.id,
            name=business.name,
            category=SLOT_CATEGORY[slot],
            slot=slot,
            days=[day_index + 1],
        )
        features.append(Feature(geometry=Point(_coords(business)), properties=seen[business.id]))

    spatial = []
    for day in itinerary.days:
        for entry in [day.accommodation] + day.attractions:
            business = pool.get(entry.resolved) if entry.evaluable else None
            if business is not None:
                spatial.append(business)
    if spatial:
        assignment = kmeans_clusters(spatial, seed=seed)
        by_id = {b.id: b for b in spatial}
        for cluster in range(assignment.k):
            members = [by_id[i] for i in assignment.members(cluster)]
            ring = _hull(members)
            if ring is None:
                continue
            features.append(
                Feature(
                    geometry=Polygon([ring]),
                    properties=dict(kind="cluster", cluster=cluster, members=[b.name for b in members]),
                )
            )

    properties = {"query_ref": itinerary.query_ref, "source": itinerary.source}
    if config_hash is not None:
        properties["config_hash"] = config_hash
    return FeatureCollection(features=features, properties=properties)


def save_geojson(collection: FeatureCollection, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        geojson.dump(collection, f, sort_keys=True)
    logger.info(f"Figure written to {path}")
