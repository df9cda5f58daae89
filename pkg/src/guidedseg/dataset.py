"""Manifests, GPS correspondence between dark and day frames, and file codecs.

Manifest: one JSON object per line with keys ``id``, ``role`` (day, twilight
or night), ``gps`` ([lat, lon] in degrees) and optional file paths
``image``, ``soft_map``, ``depth``, ``label``, ``invalid``, ``matches`` plus an
optional ``camera`` object {fx, fy, cx, cy}. Relative paths resolve against
the manifest's directory.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import (
    D_MAX,
    DEFAULT_CATALOG,
    CameraModel,
    ClassCatalog,
    DepthMap,
    GuidedSegError,
    HardLabelMap,
    InvalidInput,
    InvalidMask,
    SoftPredictionMap,
    validate_soft_map,
)

EARTH_RADIUS_M = 6_371_000.0
ROLES = ("day", "twilight", "night")
PATH_FIELDS = ("image", "soft_map", "depth", "label", "invalid", "matches")


class SchemaError(GuidedSegError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DuplicateId(GuidedSegError):
    pass


class EmptyReferenceSet(GuidedSegError):
    pass


class CodecError(GuidedSegError):
    pass


# manifests

@dataclass(frozen=True)
class ManifestRecord:
    id: str
    role: str
    lat: float
    lon: float
    image: Path | None = None
    soft_map: Path | None = None
    depth: Path | None = None
    label: Path | None = None
    invalid: Path | None = None
    matches: Path | None = None
    camera: CameraModel | None = None

    def require(self, field: str) -> Path:
        p = getattr(self, field)
        if p is None:
            raise InvalidInput(f"record {self.id!r} has no {field}")
        if not p.exists():
            raise FileNotFoundError(f"record {self.id!r}: {field} file {p} not found")
        return p


def _record_from_obj(obj, base: Path, line: int) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", line)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise SchemaError("'id' must be a nonempty string", line)
    role = obj.get("role")
    if role not in ROLES:
        raise SchemaError(f"'role' must be one of {ROLES}, got {role!r}", line)
    gps = obj.get("gps")
    if (not isinstance(gps, (list, tuple)) or len(gps) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in gps)):
        raise SchemaError("'gps' must be [lat, lon]", line)
    lat, lon = float(gps[0]), float(gps[1])
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise SchemaError(f"gps ({lat}, {lon}) out of range", line)
    paths = {}
    for f in PATH_FIELDS:
        v = obj.get(f)
        if v is None:
            continue
        if not isinstance(v, str) or not v:
            raise SchemaError(f"'{f}' must be a path string", line)
        paths[f] = (base / v) if not Path(v).is_absolute() else Path(v)
    cam = obj.get("camera")
    camera = None
    if cam is not None:
        try:
            camera = CameraModel(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]))
        except (TypeError, KeyError, ValueError, GuidedSegError) as e:
            raise SchemaError(f"bad camera: {e}", line) from None
    unknown = set(obj) - {"id", "role", "gps", "camera", *PATH_FIELDS}
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", line)
    return ManifestRecord(rid, role, lat, lon, camera=camera, **paths)


def parse_manifest(path: str | Path) -> list[ManifestRecord]:
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON: {e.msg}", lineno) from None
        rec = _record_from_obj(obj, base, lineno)
        if rec.id in seen:
            raise DuplicateId(f"line {lineno}: id {rec.id!r} already used")
        seen.add(rec.id)
        records.append(rec)
    return records


def record_to_obj(rec: ManifestRecord, base: Path | None = None) -> dict:
    obj = {"id": rec.id, "role": rec.role, "gps": [rec.lat, rec.lon]}
    for f in PATH_FIELDS:
        p = getattr(rec, f)
        if p is not None:
            obj[f] = str(p.relative_to(base)) if base is not None and p.is_relative_to(base) else str(p)
    if rec.camera is not None:
        c = rec.camera
        obj["camera"] = {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy}
    return obj


def write_manifest(path: str | Path, records: Sequence[ManifestRecord]) -> None:
    path = Path(path)
    lines = [json.dumps(record_to_obj(r, path.parent)) for r in records]
    path.write_text("".join(line + "\n" for line in lines))


# GPS correspondence

def haversine_m(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in meters on a sphere of radius 6371 km."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class Correspondence:
    dark_id: str
    day_id: str
    distance_m: float


def gps_nearest_correspondence(dark_records: Sequence[ManifestRecord],
                               day_records: Sequence[ManifestRecord]) -> list[Correspondence]:
    """Nearest day record for each dark record; ties go to the smallest day id."""
    if not day_records:
        raise EmptyReferenceSet("no day records to match against")
    if not dark_records:
        raise EmptyReferenceSet("no dark records to match")
    seen = set()
    for r in dark_records:
        if r.id in seen:
            raise DuplicateId(f"dark id {r.id!r} appears twice")
        seen.add(r.id)
    day = sorted(day_records, key=lambda r: r.id)
    day_lat = np.array([r.lat for r in day])
    day_lon = np.array([r.lon for r in day])
    out = []
    for r in dark_records:
        d = haversine_m(r.lat, r.lon, day_lat, day_lon)
        k = int(np.argmin(d))  # first minimum = smallest id after sorting
        out.append(Correspondence(r.id, day[k].id, float(d[k])))
    return out


def write_correspondences(path: str | Path, rows: Sequence[Correspondence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dark_id", "day_id", "distance_m"])
        for r in rows:
            w.writerow([r.dark_id, r.day_id, repr(r.distance_m)])


def read_correspondences(path: str | Path) -> list[Correspondence]:
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if rd.fieldnames != ["dark_id", "day_id", "distance_m"]:
            raise SchemaError(f"unexpected header {rd.fieldnames}", 1)
        return [Correspondence(r["dark_id"], r["day_id"], float(r["distance_m"])) for r in rd]


# binary codecs

_SPM_MAGIC = b"SPM1"
_DPT_MAGIC = b"DPT1"


def encode_spm(values: np.ndarray) -> bytes:
    v = np.asarray(values)
    if v.ndim != 3:
        raise CodecError("soft map must be (H, W, C)")
    h, w, c = v.shape
    return _SPM_MAGIC + struct.pack("<3I", h, w, c) + v.astype("<f4").tobytes()


def decode_spm(data: bytes) -> np.ndarray:
    """Raw (H, W, C) float32 buffer; see ``load_soft_map`` for validation."""
    if data[:4] != _SPM_MAGIC or len(data) < 16:
        raise CodecError("not an SPM1 file")
    h, w, c = struct.unpack("<3I", data[4:16])
    n = h * w * c
    if len(data) != 16 + 4 * n:
        raise CodecError(f"SPM1 payload is {len(data) - 16} bytes, header says {4 * n}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)


def encode_dpt(depth: np.ndarray) -> bytes:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise CodecError("depth must be (H, W)")
    h, w = d.shape
    return _DPT_MAGIC + struct.pack("<2I", h, w) + d.astype("<f4").tobytes()


def decode_dpt(data: bytes) -> np.ndarray:
    if data[:4] != _DPT_MAGIC or len(data) < 12:
        raise CodecError("not a DPT1 file")
    h, w = struct.unpack("<2I", data[4:12])
    if len(data) != 12 + 4 * h * w:
        raise CodecError(f"DPT1 payload is {len(data) - 12} bytes, header says {4 * h * w}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(np.float32)


def save_soft_map(path: str | Path, s: SoftPredictionMap | np.ndarray) -> None:
    Path(path).write_bytes(encode_spm(s.values if isinstance(s, SoftPredictionMap) else s))


def load_soft_map(path: str | Path, catalog: ClassCatalog = DEFAULT_CATALOG) -> SoftPredictionMap:
    return validate_soft_map(decode_spm(Path(path).read_bytes()), catalog)


def save_depth(path: str | Path, d: DepthMap | np.ndarray) -> None:
    Path(path).write_bytes(encode_dpt(d.depth if isinstance(d, DepthMap) else d))


def load_depth(path: str | Path, d_max: float = D_MAX) -> DepthMap:
    return DepthMap(decode_dpt(Path(path).read_bytes()).astype(np.float64), d_max)


def encode_png(labels: np.ndarray) -> bytes:
    a = np.asarray(labels)
    if a.ndim != 2:
        raise CodecError("label map must be 2-D")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise CodecError("labels must fit in 8 bits")
    buf = io.BytesIO()
    Image.fromarray(a.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode not in ("L", "P"):
            raise CodecError(f"expected a single-channel 8-bit PNG, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def save_labels(path: str | Path, labels: HardLabelMap | np.ndarray) -> None:
    Path(path).write_bytes(encode_png(labels.labels if isinstance(labels, HardLabelMap) else labels))


def load_labels(path: str | Path) -> HardLabelMap:
    return HardLabelMap(decode_png(Path(path).read_bytes()).astype(np.int64))


def save_mask(path: str | Path, mask: InvalidMask | np.ndarray) -> None:
    m = mask.mask if isinstance(mask, InvalidMask) else mask
    Path(path).write_bytes(encode_png(np.asarray(m, dtype=np.uint8)))


def load_mask(path: str | Path) -> InvalidMask:
    """Nonzero pixels are invalid."""
    return InvalidMask(decode_png(Path(path).read_bytes()) != 0)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_image(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
