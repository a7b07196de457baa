"""Portable on-disk format for attribution maps and binary masks.

Layout: one UTF-8 JSON header line terminated by ``\n``, then a row-major
little-endian float32 payload of height×width values.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attribution import AttributionMap
from .errors import InvalidArgumentError, MissingArtifactError


def save_map(path: str | Path, amap: AttributionMap) -> None:
    values = np.asarray(amap.values, dtype="<f4")
    if values.ndim != 2:
        raise InvalidArgumentError(f"expected 2-D map, got shape {values.shape}")
    header = {
        "height": int(values.shape[0]),
        "width": int(values.shape[1]),
        "method": amap.method,
        "class": int(amap.target_class),
        "normalized": bool(amap.normalized),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(values.tobytes(order="C"))


def load_map(path: str | Path) -> AttributionMap:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"map file not found: {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    h, w = header["height"], header["width"]
    values = np.frombuffer(payload, dtype="<f4", count=h * w).reshape(h, w).copy()
    return AttributionMap(
        values=values,
        target_class=header["class"],
        method=header["method"],
        normalized=header["normalized"],
    )
