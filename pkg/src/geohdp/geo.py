"""Conversion between geographic coordinates and unit vectors on the 2-sphere.

The earth is treated as a perfect unit sphere; only directions matter.
"""
import math
from typing import NamedTuple

import numpy as np

from .errors import InvalidCoordinateError, InvalidVectorError

UNIT_TOL = 1e-6
# Below this equatorial radius the longitude is numerically meaningless.
POLE_RHO = 1e-12


class GeoPoint(NamedTuple):
    lat: float
    lon: float


def normalize_lon(lon):
    """Map a longitude in [-180, 180] into (-180, 180]."""
    return 180.0 if lon == -180.0 else float(lon)


def check_geopoint(lat, lon):
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidCoordinateError(f"non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise InvalidCoordinateError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise InvalidCoordinateError(f"longitude {lon} outside [-180, 180]")


def latlon_to_unit(p):
    """Return the Euclidean unit vector for a ``GeoPoint`` (or ``(lat, lon)`` pair)."""
    lat, lon = float(p[0]), float(p[1])
    check_geopoint(lat, lon)
    phi = math.radians(lat)
    lam = math.radians(normalize_lon(lon))
    cphi = math.cos(phi)
    return np.array([cphi * math.cos(lam), cphi * math.sin(lam), math.sin(phi)])


def latlon_array_to_unit(lat, lon):
    """Vectorised ``latlon_to_unit`` for arrays of degrees; returns shape (n, 3)."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidCoordinateError("non-finite coordinate")
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise InvalidCoordinateError("coordinate out of range")
    phi = np.radians(lat)
    lam = np.radians(lon)
    cphi = np.cos(phi)
    return np.stack([cphi * np.cos(lam), cphi * np.sin(lam), np.sin(phi)], axis=-1)


def unit_to_latlon(v):
    """Inverse of ``latlon_to_unit``. Longitude is reported as 0 at the poles."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidVectorError(f"expected a finite 3-vector, got {v!r}")
    norm = math.sqrt(float(v @ v))
    if abs(norm - 1.0) > UNIT_TOL:
        raise InvalidVectorError(f"vector norm {norm} is not 1")
    x, y, z = v
    rho = math.hypot(x, y)
    lat = math.degrees(math.atan2(z, rho))
    if rho <= POLE_RHO:
        return GeoPoint(lat, 0.0)
    lon = math.degrees(math.atan2(y, x))
    return GeoPoint(lat, normalize_lon(lon))
