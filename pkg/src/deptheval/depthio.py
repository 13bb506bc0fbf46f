"""Depth and intrinsics file I/O.

Supported depth formats:
  - PFM: single-channel float32, little-endian (negative scale header).
  - 16-bit PNG with a JSON sidecar giving meters-per-unit; raw value 0
    is the invalid sentinel.

Intrinsics are JSON objects {fx, fy, cx, cy}.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .depthcore import CameraIntrinsics, DepthMap


def read_pfm(path) -> DepthMap:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        if header not in ("Pf", "PF"):
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        if header == "PF":
            raise ValueError(f"{path}: color PFM not supported for depth")
        dims = f.readline().decode("ascii")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"{path}: malformed PFM dimensions {dims!r}")
        width, height = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii").strip())
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(f.read(width * height * 4), dtype=endian + "f4")
    values = np.flipud(data.reshape(height, width)).astype(np.float64)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(values, valid)


def write_pfm(path, depth: DepthMap) -> None:
    values = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(values).tobytes())


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_png16(path, sidecar=None) -> DepthMap:
    sidecar = _sidecar_path(path) if sidecar is None else Path(sidecar)
    meta = json.loads(sidecar.read_text())
    raw = np.asarray(Image.open(path), dtype=np.uint16)
    valid = raw != int(meta.get("invalid_value", 0))
    values = raw.astype(np.float64) * float(meta["meters_per_unit"])
    values[~valid] = 0.0
    return DepthMap(values, valid)


def write_png16(path, depth: DepthMap, meters_per_unit: float | None = None, sidecar=None) -> None:
    if meters_per_unit is None:
        dmax = depth.values[depth.valid].max() if depth.valid.any() else 1.0
        meters_per_unit = dmax / 65535.0
    raw = np.round(depth.values / meters_per_unit)
    raw = np.clip(raw, 1, 65535)  # 0 is reserved for invalid
    raw = np.where(depth.valid, raw, 0).astype(np.uint16)
    Image.fromarray(raw).save(path)
    sidecar = _sidecar_path(path) if sidecar is None else Path(sidecar)
    sidecar.write_text(
        json.dumps({"meters_per_unit": meters_per_unit, "invalid_value": 0}, indent=2)
    )


def read_depth(path) -> DepthMap:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    if path.suffix.lower() == ".png":
        return read_png16(path)
    raise ValueError(f"unsupported depth format: {path.suffix}")


def write_depth(path, depth: DepthMap) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, depth)
    elif path.suffix.lower() == ".png":
        write_png16(path, depth)
    else:
        raise ValueError(f"unsupported depth format: {path.suffix}")


def read_intrinsics(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(json.loads(Path(path).read_text()))


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    Path(path).write_text(json.dumps(intr.to_dict(), indent=2))
