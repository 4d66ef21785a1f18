"""Coordinates and great-circle distances."""

import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .config import config
from .errors import InvalidInputError


class GeoPoint(BaseModel):
    """A WGS84 coordinate. Longitude is wrapped into [-180, 180)."""

    model_config = ConfigDict(frozen=True)

    lat: float
    lon: float

    @field_validator("lat")
    @classmethod
    def _check_lat(cls, value: float) -> float:
        if not math.isfinite(value) or not -90.0 <= value <= 90.0:
            raise ValueError(f"latitude out of range: {value}")
        return float(value)

    @field_validator("lon")
    @classmethod
    def _wrap_lon(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError(f"longitude is not finite: {value}")
        if -180.0 <= value <= 180.0:
            return float(value)
        return (float(value) + 180.0) % 360.0 - 180.0


def make_point(lat: float, lon: float) -> GeoPoint:
    """Build a GeoPoint, raising InvalidInputError instead of a validation error."""
    try:
        return GeoPoint(lat=lat, lon=lon)
    except (ValueError, TypeError) as e:
        raise InvalidInputError(f"Invalid coordinate ({lat}, {lon}): {e}")


def haversine_coords(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres between raw degree coordinates."""
    for value in (lat1, lon1, lat2, lon2):
        if not math.isfinite(value):
            raise InvalidInputError(f"Non-finite coordinate: {value}")
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * config.EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_coords(a.lat, a.lon, b.lat, b.lon)


class DistanceMatrix:
    """Symmetric kilometre matrix over an ordered list of points."""

    def __init__(self, points: Sequence[GeoPoint], d: np.ndarray):
        self.points = list(points)
        self.d = d
        self.d.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, index: tuple[int, int]) -> float:
        return float(self.d[index])

    def to_list(self) -> list[list[float]]:
        return self.d.tolist()


def build_distance_matrix(points: Sequence[GeoPoint]) -> DistanceMatrix:
    """Pairwise haversine distances, order preserved."""
    if len(points) == 0:
        raise InvalidInputError("Cannot build a distance matrix over zero points")

    lat = np.radians(np.array([p.lat for p in points], dtype=float))
    lon = np.radians(np.array([p.lon for p in points], dtype=float))
    dphi = lat[None, :] - lat[:, None]
    dlmb = lon[None, :] - lon[:, None]
    h = np.sin(dphi / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlmb / 2.0) ** 2
    d = 2.0 * config.EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))

    # Mirror the upper triangle so symmetry and the zero diagonal are exact
    upper = np.triu(d, k=1)
    return DistanceMatrix(points, upper + upper.T)
