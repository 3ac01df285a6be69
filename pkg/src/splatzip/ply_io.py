"""Binary 3DGS PLY scenes and the JSON-lines camera list."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Camera, SourceGaussianSet, matrix_to_quaternion, normalize_quaternion_array, quaternion_to_matrix

PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
REQUIRED_PROPERTIES = [p for p in PLY_PROPERTIES if p not in ("nx", "ny", "nz")]

_PLY_TYPES = {
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "ushort": "u2", "uint16": "u2", "short": "i2", "int16": "i2",
    "uint": "u4", "uint32": "u4", "int": "i4", "int32": "i4",
}

CAMERA_FILE_VERSION = 1


class PlySchemaError(ValueError):
    pass


class CameraFileError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit_f32(o: np.ndarray) -> np.ndarray:
    """float32 logits whose float64 sigmoid reproduces ``o`` exactly when possible."""
    o = np.asarray(o, dtype=np.float64)
    with np.errstate(divide="ignore"):
        y = (np.log(o) - np.log1p(-o)).astype(np.float32)
    y = np.nan_to_num(y, posinf=np.finfo(np.float32).max, neginf=-np.finfo(np.float32).max)
    bad = sigmoid(y) != o
    for _ in range(4):
        if not bad.any():
            break
        for direction in (np.inf, -np.inf):
            cand = np.nextafter(y[bad], np.float32(direction))
            hit = sigmoid(cand) == o[bad]
            idx = np.flatnonzero(bad)[hit]
            y[idx] = cand[hit]
            bad[idx] = False
        step = np.where(sigmoid(y[bad]) < o[bad], np.float32(np.inf), np.float32(-np.inf))
        y[bad] = np.nextafter(y[bad], step)
        bad = sigmoid(y) != o
    return y


def _parse_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise PlySchemaError("not a PLY file")
    fmt = None
    count = None
    props = []
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise PlySchemaError("unterminated PLY header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif int(tok[2]) > 0:
                raise PlySchemaError(f"unsupported element '{tok[1]}'")
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise PlySchemaError("list properties are not supported on vertices")
            if tok[1] not in _PLY_TYPES:
                raise PlySchemaError(f"unknown property type '{tok[1]}'")
            props.append((tok[2], "<" + _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise PlySchemaError(f"unsupported PLY format '{fmt}', need binary_little_endian")
    if count is None:
        raise PlySchemaError("no vertex element")
    return count, props


def load_ply(path) -> SourceGaussianSet:
    with open(path, "rb") as f:
        count, props = _parse_header(f)
        names = [p[0] for p in props]
        for req in REQUIRED_PROPERTIES:
            if req not in names:
                raise PlySchemaError(f"missing property '{req}'")
        dtype = np.dtype(props)
        raw = f.read(dtype.itemsize * count)
    if len(raw) < dtype.itemsize * count:
        raise OSError(f"truncated PLY payload: expected {dtype.itemsize * count} bytes, got {len(raw)}")
    v = np.frombuffer(raw, dtype=dtype, count=count)

    def cols(names):
        return np.stack([v[n].astype(np.float64) for n in names], axis=1) if count else np.zeros((0, len(names)))

    return SourceGaussianSet(
        positions=cols(["x", "y", "z"]),
        log_scales=cols([f"scale_{i}" for i in range(3)]),
        rotations=cols([f"rot_{i}" for i in range(4)]),
        opacities=sigmoid(v["opacity"].astype(np.float64)),
        sh_dc=cols([f"f_dc_{i}" for i in range(3)]),
        sh_rest=cols([f"f_rest_{i}" for i in range(45)]),
    )


def write_ply(gset: SourceGaussianSet, path) -> None:
    n = gset.count
    rec = np.zeros(n, dtype=[(p, "<f4") for p in PLY_PROPERTIES])
    for i, name in enumerate("xyz"):
        rec[name] = gset.positions[:, i]
    for i in range(3):
        rec[f"f_dc_{i}"] = gset.sh_dc[:, i]
        rec[f"scale_{i}"] = gset.log_scales[:, i]
    for i in range(45):
        rec[f"f_rest_{i}"] = gset.sh_rest[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = gset.rotations[:, i]
    rec["opacity"] = _logit_f32(gset.opacities)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


@dataclass(frozen=True)
class CameraListFile:
    cameras: list

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("camera list must contain at least one camera")
        for cam in self.cameras:
            if not cam.image_path:
                raise ValueError("every camera needs a non-empty image path")

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]


_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "rotation", "translation", "width", "height", "image")


def camera_to_record(cam: Camera) -> dict:
    return {
        "fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx), "cy": float(cam.cy),
        "rotation": matrix_to_quaternion(cam.rotation).tolist(),
        "translation": cam.translation.tolist(),
        "width": cam.width, "height": cam.height,
        "image": cam.image_path,
    }


def save_cameras(cameras, path) -> None:
    """Write a camera list: a version line followed by one JSON record per camera."""
    lines = [json.dumps({"version": CAMERA_FILE_VERSION, "count": len(cameras)})]
    lines += [json.dumps(camera_to_record(c)) for c in cameras]
    Path(path).write_text("\n".join(lines) + "\n")


def _camera_from_record(rec, lineno: int) -> Camera:
    if not isinstance(rec, dict):
        raise CameraFileError("camera record must be a JSON object", lineno)
    missing = [k for k in _CAMERA_KEYS if k not in rec]
    if missing:
        raise CameraFileError(f"missing keys {missing}", lineno)
    try:
        q = np.asarray(rec["rotation"], dtype=np.float64)
        if q.shape != (4,):
            raise CameraFileError("rotation must be a 4-element quaternion [w, x, y, z]", lineno)
        R = quaternion_to_matrix(normalize_quaternion_array(q))
        t = np.asarray(rec["translation"], dtype=np.float64)
        if t.shape != (3,):
            raise CameraFileError("translation must have 3 elements", lineno)
        image = str(rec["image"])
        if not image:
            raise CameraFileError("image path is empty", lineno)
        return Camera(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
                      R, t, int(rec["width"]), int(rec["height"]), image)
    except CameraFileError:
        raise
    except (TypeError, ValueError) as e:
        raise CameraFileError(str(e), lineno) from e


def load_cameras(path) -> CameraListFile:
    base = Path(path).parent
    cameras = []
    header_seen = False
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CameraFileError(f"invalid JSON: {e.msg}", lineno) from e
            if not header_seen:
                if not isinstance(rec, dict) or rec.get("version") != CAMERA_FILE_VERSION:
                    raise CameraFileError(f"expected header with \"version\": {CAMERA_FILE_VERSION}", lineno)
                header_seen = True
                continue
            cam = _camera_from_record(rec, lineno)
            if not os.path.isabs(cam.image_path):
                cam = replace(cam, image_path=str(base / cam.image_path))
            cameras.append(cam)
    if not header_seen:
        raise CameraFileError("empty camera file", 1)
    if not cameras:
        raise CameraFileError("no camera records", lineno)
    return CameraListFile(cameras)
