"""Zone files and CSV slices.

Zone file layout: a one-line UTF-8 JSON header, ``\\n``, the 8 bytes
``b"BINF64\\n\\0"``, then the values as little-endian float64 in row-major
order. The header records the value count so that a short payload and a
header whose dimensions disagree with it raise different errors.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, HeaderConsistencyError, TruncatedPayloadError, VersionMismatchError, ZoneFileError
from .grid import GridSpec, ValueField, interpolate
from .zones import ZoneArtifact

FORMAT_VERSION = 1
MAGIC = b"BINF64\n\0"
# metadata keys that change between identical runs and stay out of content hashes
VOLATILE_KEYS = ("wall_time",)


def flatten(d: Mapping, prefix: str = "") -> dict:
    """Nested dicts/lists to a flat ``{"a.b.0": value}`` map."""
    out = {}
    items = d.items() if isinstance(d, Mapping) else enumerate(d)
    for k, v in items:
        key = f"{prefix}{k}"
        if isinstance(v, (Mapping, list, tuple)) and len(v) > 0:
            out.update(flatten(v, key + "."))
        elif isinstance(v, (Mapping, list, tuple)):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def unflatten(flat: Mapping) -> dict:
    root: dict = {}
    for key, v in flat.items():
        parts = key.split(".")
        node = root
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return _listify(root)


def _listify(node):
    if not isinstance(node, dict):
        return node
    node = {k: _listify(v) for k, v in node.items()}
    if node and all(k.isdigit() for k in node) and sorted(int(k) for k in node) == list(range(len(node))):
        return [node[str(i)] for i in range(len(node))]
    return node


def _header(artifact: ZoneArtifact) -> dict:
    spec = artifact.spec
    return {
        "version": FORMAT_VERSION,
        "dims": spec.to_dict(),
        "count": spec.size,
        "scenario": flatten(artifact.scenario),
        "metadata": dict(artifact.metadata),
    }


def encode_zone(artifact: ZoneArtifact) -> bytes:
    head = json.dumps(_header(artifact), sort_keys=True, separators=(",", ":"), allow_nan=False)
    payload = np.ascontiguousarray(artifact.value.values, dtype="<f8").tobytes()
    return head.encode("utf-8") + b"\n" + MAGIC + payload


def save_zone(artifact: ZoneArtifact, path: str | Path) -> None:
    """Write atomically: a temporary file in the target directory is renamed into place."""
    path = Path(path)
    data = encode_zone(artifact)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def decode_zone(data: bytes) -> ZoneArtifact:
    split = data.find(b"\n")
    if split < 0:
        raise ZoneFileError("no header terminator")
    try:
        head = json.loads(data[:split].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ZoneFileError(f"unreadable header: {exc}") from exc
    if not isinstance(head, dict):
        raise ZoneFileError("header is not a JSON object")
    if head.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported zone file version {head.get('version')!r} "
                                   f"(expected {FORMAT_VERSION})")
    if data[split + 1: split + 1 + len(MAGIC)] != MAGIC:
        raise ZoneFileError("missing payload marker")
    try:
        spec = GridSpec.from_dict(head["dims"])
        count = int(head["count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderConsistencyError(f"invalid dimension header: {exc}") from exc
    if spec.size != count:
        raise HeaderConsistencyError(f"dimensions give {spec.size} nodes but the header declares {count} values")
    payload = data[split + 1 + len(MAGIC):]
    if len(payload) < 8 * count:
        raise TruncatedPayloadError(f"payload holds {len(payload)} bytes, expected {8 * count}")
    if len(payload) > 8 * count:
        raise HeaderConsistencyError(f"payload holds {len(payload)} bytes, more than the declared {8 * count}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        field = ValueField(spec, values)
    except ConfigError as exc:
        raise HeaderConsistencyError(str(exc)) from exc
    return ZoneArtifact(field, unflatten(head.get("scenario", {})), dict(head.get("metadata", {})))


def load_zone(path: str | Path) -> ZoneArtifact:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ZoneFileError(f"cannot read {path}: {exc}") from exc
    return decode_zone(data)


def content_hash(artifact: ZoneArtifact) -> str:
    """SHA-256 over header and payload with volatile metadata removed."""
    head = _header(artifact)
    head["metadata"] = {k: v for k, v in head["metadata"].items() if k not in VOLATILE_KEYS}
    h = hashlib.sha256(json.dumps(head, sort_keys=True, separators=(",", ":")).encode())
    h.update(np.ascontiguousarray(artifact.value.values, dtype="<f8").tobytes())
    return h.hexdigest()


def export_slice(field: ValueField, fixed: Mapping[str, float], free: Sequence[str], path: str | Path) -> int:
    """Write the 2D slice over ``free`` at the ``fixed`` coordinates; returns the row count."""
    spec = field.spec
    free = tuple(free)
    if len(free) != 2 or free[0] == free[1]:
        raise ConfigError("exactly two distinct free dimensions are required", "free")
    for name in (*free, *fixed):
        spec.index(name)
    overlap = set(free) & set(fixed)
    if overlap:
        raise ConfigError(f"dimensions {sorted(overlap)} are both fixed and free", "fixed")
    missing = [n for n in spec.names if n not in free and n not in fixed]
    if missing:
        raise ConfigError(f"dimensions {missing} need a fixed value", "fixed")
    a, b = (spec.axes[spec.index(n)] for n in free)
    ga, gb = np.meshgrid(a.nodes, b.nodes, indexing="ij")
    pts = np.empty((ga.size, spec.ndim))
    for d, name in enumerate(spec.names):
        if name == free[0]:
            pts[:, d] = ga.ravel()
        elif name == free[1]:
            pts[:, d] = gb.ravel()
        else:
            pts[:, d] = float(fixed[name])
    values = np.atleast_1d(interpolate(field, pts))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([free[0], free[1], "value"])
        for (x, y), v in zip(pts[:, [spec.index(free[0]), spec.index(free[1])]], values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    return len(values)
