"""JSONL customer files and tab-separated item catalogs.

One JSON object per line::

    {"customer_id": "c17", "lat": 40.7, "lon": -74.0, "videos": [3, 3, 12]}
"""
import hashlib
import json

import numpy as np

from .errors import DataError, InvalidCoordinateError
from .geo import check_geopoint, latlon_array_to_unit, normalize_lon, unit_to_latlon
from .state import Dataset

FIELDS = ("customer_id", "lat", "lon", "videos")


def _number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _parse_record(obj, where):
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        raise DataError(f"{where}: missing field(s) {', '.join(missing)}")
    cid = obj["customer_id"]
    if not isinstance(cid, str):
        raise DataError(f"{where}: customer_id must be a string")
    lat, lon = obj["lat"], obj["lon"]
    if not (_number(lat) and _number(lon)):
        raise DataError(f"{where}: lat and lon must be numbers")
    try:
        check_geopoint(float(lat), float(lon))
    except InvalidCoordinateError as e:
        raise DataError(f"{where}: {e}") from None
    videos = obj["videos"]
    if not isinstance(videos, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                               for v in videos):
        raise DataError(f"{where}: videos must be a list of integers")
    if any(v < 0 for v in videos):
        raise DataError(f"{where}: negative item index")
    return cid, float(lat), normalize_lon(float(lon)), videos


def read_jsonl(path, n_items=None):
    """Load a customer file. ``n_items`` defaults to the largest item index + 1."""
    ids, lats, lons, views = [], [], [], []
    seen = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON ({e.msg})") from None
            cid, lat, lon, videos = _parse_record(obj, where)
            if cid in seen:
                raise DataError(f"{where}: duplicate customer_id {cid!r} "
                                f"(first seen on line {seen[cid]})")
            seen[cid] = lineno
            ids.append(cid)
            lats.append(lat)
            lons.append(lon)
            views.append(videos)
    top = max((max(v) for v in views if v), default=-1)
    if n_items is None:
        n_items = max(top + 1, 1)
    elif top >= n_items:
        raise DataError(f"{path}: item index {top} is outside the catalog of size {n_items}")
    locs = latlon_array_to_unit(lats, lons) if ids else np.zeros((0, 3))
    return Dataset(locs, views, n_items, ids)


def dataset_records(data: Dataset):
    for d in range(data.n_customers):
        p = unit_to_latlon(data.locations[d] / np.linalg.norm(data.locations[d]))
        yield {"customer_id": data.customer_ids[d], "lat": p.lat, "lon": p.lon,
               "videos": data.views(d).tolist()}


def write_jsonl(path, data: Dataset):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in dataset_records(data):
            fh.write(json.dumps(rec) + "\n")


def read_catalog(path):
    """Item index -> title from ``index<TAB>title`` lines."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, title = line.partition("\t")
            try:
                idx = int(key)
            except ValueError:
                idx = -1
            if not sep or idx < 0:
                raise DataError(f"{path}:{lineno}: expected 'index<TAB>title'")
            out[idx] = title
    return out


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
