"""Asset and image I/O.

PLY files follow the de-facto splat vertex layout: float32 properties
x, y, z, nx, ny, nz, f_dc_0..2, opacity, scale_0..2, rot_0..3 in a
binary little-endian file. Scales are stored as natural logs, opacity as
a logit, and color as the zeroth-order spherical-harmonic coefficient;
loading inverts all three encodings. JSON stores raw (unencoded) fields.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .cloud import GaussianCloud
from .errors import (
    IoFailureError,
    MissingFieldError,
    NonFiniteValueError,
    UnsupportedFormatError,
)
from .quaternions import quat_normalize

SH_C0 = 0.28209479177

_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
_REQUIRED = [f for f in _FIELDS if not f.startswith("n")]

JSON_SCHEMA_VERSION = 1

# Keep logits finite: round-trip error stays below 1e-6 per field.
_OPACITY_EPS = 1e-7


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    return np.log(p / (1.0 - p))


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise UnsupportedFormatError("not a PLY file")
    fmt = None
    count = None
    properties = []
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise UnsupportedFormatError("truncated PLY header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise UnsupportedFormatError("list properties are not supported")
            properties.append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise UnsupportedFormatError(f"unsupported PLY format {fmt!r} (need binary_little_endian)")
    if count is None:
        raise UnsupportedFormatError("PLY has no vertex element")
    return count, properties


def load_ply(path) -> GaussianCloud:
    """Read a splat PLY into a cloud with linear scales and [0,1] opacity."""
    path = Path(path)
    try:
        fh = path.open("rb")
    except OSError as e:
        raise IoFailureError(str(e)) from e
    with fh:
        count, properties = _parse_ply_header(fh)
        names = [name for _, name in properties]
        unknown = [n for n in names if n not in _FIELDS]
        if unknown:
            warnings.warn(f"ignoring unknown PLY properties: {', '.join(unknown)}")
        missing = [f for f in _REQUIRED if f not in names]
        if missing:
            raise MissingFieldError(missing)
        if any(dtype != "float" for dtype, name in properties if name in _REQUIRED):
            raise UnsupportedFormatError("required properties must be float32")

        sizes = {"float": 4, "double": 8, "uchar": 1, "char": 1,
                 "short": 2, "ushort": 2, "int": 4, "uint": 4}
        try:
            stride = sum(sizes[d] for d, _ in properties)
        except KeyError as e:
            raise UnsupportedFormatError(f"unknown property type {e}") from e
        raw = fh.read(stride * count)
        if len(raw) != stride * count:
            raise UnsupportedFormatError("truncated PLY payload")

        dtype = np.dtype(
            [
                (name, "<f4" if d == "float" else "<f8" if d == "double" else f"V{sizes[d]}")
                for d, name in properties
            ]
        )
        rec = np.frombuffer(raw, dtype=dtype, count=count)

    def col(name):
        return rec[name].astype(np.float64)

    data = {name: col(name) for name in _REQUIRED}
    stacked = np.stack(list(data.values()), axis=1)
    bad = ~np.isfinite(stacked)
    if bad.any():
        idx = int(np.argwhere(bad.any(axis=1))[0, 0])
        field = _REQUIRED[int(np.argwhere(bad[idx])[0, 0])]
        raise NonFiniteValueError(idx, f"field {field}")

    positions = np.stack([data["x"], data["y"], data["z"]], axis=1)
    rotations = quat_normalize(
        np.stack([data[f"rot_{i}"] for i in range(4)], axis=1)
    )
    scales = np.exp(np.stack([data[f"scale_{i}"] for i in range(3)], axis=1))
    opacities = _sigmoid(data["opacity"])
    colors = np.clip(
        0.5 + SH_C0 * np.stack([data[f"f_dc_{i}"] for i in range(3)], axis=1),
        0.0,
        1.0,
    )
    return GaussianCloud(positions, rotations, scales, colors, opacities)


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write a cloud using the inverse encodings of load_ply."""
    path = Path(path)
    n = cloud.count
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
        + [f"property float {name}" for name in _FIELDS]
        + ["end_header", ""]
    )
    rec = np.zeros(n, dtype=np.dtype([(name, "<f4") for name in _FIELDS]))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    for i in range(4):
        rec[f"rot_{i}"] = cloud.rotations[:, i]
    for i in range(3):
        rec[f"scale_{i}"] = np.log(cloud.scales[:, i])
        rec[f"f_dc_{i}"] = (cloud.colors[:, i] - 0.5) / SH_C0
    rec["opacity"] = _logit(cloud.opacities)
    try:
        with path.open("wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())
    except OSError as e:
        raise IoFailureError(str(e)) from e


def save_json(cloud: GaussianCloud, path) -> None:
    doc = {
        "version": JSON_SCHEMA_VERSION,
        "gaussians": [
            {
                "p": cloud.positions[j].tolist(),
                "q": cloud.rotations[j].tolist(),
                "s": cloud.scales[j].tolist(),
                "c": cloud.colors[j].tolist(),
                "a": float(cloud.opacities[j]),
            }
            for j in range(cloud.count)
        ],
    }
    try:
        Path(path).write_text(json.dumps(doc))
    except OSError as e:
        raise IoFailureError(str(e)) from e


def load_json(path) -> GaussianCloud:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise IoFailureError(str(e)) from e
    except json.JSONDecodeError as e:
        raise UnsupportedFormatError(f"invalid JSON: {e}") from e
    if doc.get("version") != JSON_SCHEMA_VERSION:
        raise UnsupportedFormatError(f"unsupported schema version {doc.get('version')!r}")
    gs = doc.get("gaussians")
    if gs is None:
        raise MissingFieldError(["gaussians"])
    for key in ("p", "q", "s", "c", "a"):
        if any(key not in g for g in gs):
            raise MissingFieldError([key])
    arr = lambda key: np.array([g[key] for g in gs], dtype=np.float64)
    cloud = GaussianCloud(arr("p"), quat_normalize(arr("q")), arr("s"), arr("c"), arr("a"))
    flat = cloud.as_params()
    if not np.all(np.isfinite(flat)):
        raise NonFiniteValueError(int(np.argwhere(~np.isfinite(flat))[0, 0]))
    return cloud


def load_cloud(path) -> GaussianCloud:
    """Dispatch on file extension (.ply or .json)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply(path)
    if suffix == ".json":
        return load_json(path)
    raise UnsupportedFormatError(f"unknown asset extension {suffix!r}")


def save_cloud(cloud: GaussianCloud, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        save_ply(cloud, path)
    elif suffix == ".json":
        save_json(cloud, path)
    else:
        raise UnsupportedFormatError(f"unknown asset extension {suffix!r}")


def save_png(image: np.ndarray, path) -> None:
    """Write an HxW (grayscale) or HxWx3 float image in [0,1] as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    quantized = (arr * 255.0 + 0.5).astype(np.uint8)
    mode = "L" if quantized.ndim == 2 else "RGB"
    try:
        Image.fromarray(quantized, mode=mode).save(str(path))
    except OSError as e:
        raise IoFailureError(str(e)) from e


def load_png(path) -> np.ndarray:
    """Read a PNG back into float RGB in [0,1]."""
    try:
        with Image.open(str(path)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise IoFailureError(str(e)) from e


def save_pfm(image: np.ndarray, path) -> None:
    """Write a single-channel float map as a little-endian PFM."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 2:
        raise UnsupportedFormatError("PFM export expects a 2-D map")
    h, w = arr.shape
    try:
        with Path(path).open("wb") as fh:
            fh.write(b"Pf\n")
            fh.write(f"{w} {h}\n".encode("ascii"))
            fh.write(b"-1.0\n")  # negative scale marks little-endian
            fh.write(arr[::-1].tobytes())  # PFM rows run bottom-to-top
    except OSError as e:
        raise IoFailureError(str(e)) from e


def load_pfm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoFailureError(str(e)) from e
    parts = raw.split(b"\n", 3)
    if parts[0] != b"Pf":
        raise UnsupportedFormatError("not a grayscale PFM")
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dt, count=w * h).reshape(h, w)
    return data[::-1].astype(np.float64)
