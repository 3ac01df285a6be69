"""Gaussian scene containers, cameras and the shared geometry helpers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:
    from .field import FieldWeights

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
SH_REST_DIM = 45


class InvalidInputError(ValueError):
    pass


def _as_rows(a, width: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        a = a.reshape(0, width)
    if a.ndim != 2 or a.shape[1] != width:
        raise InvalidInputError(f"{name} must have shape (N, {width}), got {a.shape}")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C")
    a.setflags(write=False)
    return a


def normalize_quaternion_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    bad = np.flatnonzero(norms.reshape(-1) == 0)
    if bad.size:
        raise InvalidInputError(f"zero-norm quaternion at index {bad.tolist()[:10]}")
    return q / norms[..., None]


def canonical_quaternion_sign(q: np.ndarray) -> np.ndarray:
    """Flip each quaternion so its first non-zero component is positive."""
    q = np.array(q, dtype=np.float64)
    nz = q != 0
    first = np.argmax(nz, axis=1)
    lead = q[np.arange(len(q)), first]
    q[lead < 0] *= -1.0
    return q


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order."""
    q = normalize_quaternion_array(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def build_covariance(log_scale, rotation) -> np.ndarray:
    """World-space covariance ``R diag(s)^2 R^T``.

    Accepts a single (3,), (4,) pair or batches (N, 3), (N, 4).
    """
    log_scale = np.asarray(log_scale, dtype=np.float64)
    R = quaternion_to_matrix(rotation)
    s2 = np.exp(2.0 * log_scale)
    M = R * s2[..., None, :]
    cov = M @ np.swapaxes(R, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values up to degree 3 for (..., 3) unit directions, shape (..., 16)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = np.empty(dirs.shape[:-1] + (16,))
    out[..., 0] = SH_C0
    out[..., 1] = -SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = -SH_C1 * x
    out[..., 4] = SH_C2[0] * xy
    out[..., 5] = SH_C2[1] * yz
    out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = SH_C2[3] * xz
    out[..., 8] = SH_C2[4] * (xx - yy)
    out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
    out[..., 10] = SH_C3[1] * xy * z
    out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    out[..., 14] = SH_C3[5] * z * (xx - yy)
    out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def eval_sh(h_dc, h_rest, view_dir) -> np.ndarray:
    """RGB from degree-3 SH, reference 3DGS layout.

    ``h_rest`` is channel-major: 15 coefficients for R, then G, then B.
    Works on single Gaussians or on batches with matching leading dims.
    The result is not clamped.
    """
    h_dc = np.asarray(h_dc, dtype=np.float64)
    h_rest = np.asarray(h_rest, dtype=np.float64)
    basis = sh_basis(view_dir)
    rest = h_rest.reshape(h_rest.shape[:-1] + (3, 15))
    color = SH_C0 * h_dc + np.einsum("...ck,...k->...c", rest, basis[..., 1:])
    return color + 0.5


@dataclass(frozen=True)
class SourceGaussianSet:
    """A plain 3DGS scene with explicit opacity and SH coefficients."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray

    def __post_init__(self):
        pos = _as_rows(self.positions, 3, "positions")
        n = len(pos)
        arrays = {
            "positions": pos,
            "log_scales": _as_rows(self.log_scales, 3, "log_scales"),
            "rotations": _as_rows(self.rotations, 4, "rotations"),
            "opacities": np.asarray(self.opacities, dtype=np.float64).reshape(-1),
            "sh_dc": _as_rows(self.sh_dc, 3, "sh_dc"),
            "sh_rest": _as_rows(self.sh_rest, SH_REST_DIM, "sh_rest"),
        }
        for name, a in arrays.items():
            if len(a) != n:
                raise InvalidInputError(f"{name} has {len(a)} rows, expected {n}")
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} contains non-finite values")
        op = arrays["opacities"]
        if np.any((op < 0) | (op > 1)):
            raise InvalidInputError("opacities must lie in [0, 1]")
        for name, a in arrays.items():
            object.__setattr__(self, name, _frozen(a))

    @property
    def count(self) -> int:
        return len(self.positions)

    def subset(self, idx) -> "SourceGaussianSet":
        return SourceGaussianSet(
            self.positions[idx], self.log_scales[idx], self.rotations[idx],
            self.opacities[idx], self.sh_dc[idx], self.sh_rest[idx],
        )

    @classmethod
    def empty(cls) -> "SourceGaussianSet":
        z = np.zeros
        return cls(z((0, 3)), z((0, 3)), z((0, 4)), z(0), z((0, 3)), z((0, SH_REST_DIM)))


def normalize_quaternions(gset):
    """Return a copy of ``gset`` with every rotation scaled to unit norm."""
    return replace(gset, rotations=normalize_quaternion_array(gset.rotations))


@dataclass(frozen=True)
class OmgGaussianSet:
    """Compact scene: geometry plus per-Gaussian appearance features.

    Opacity and SH coefficients are not stored; they come from decoding
    ``static_features``/``view_features`` through ``field``.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    static_features: np.ndarray
    view_features: np.ndarray
    field: Optional["FieldWeights"] = None

    def __post_init__(self):
        pos = _as_rows(self.positions, 3, "positions")
        n = len(pos)
        arrays = {
            "positions": pos,
            "log_scales": _as_rows(self.log_scales, 3, "log_scales"),
            "rotations": _as_rows(self.rotations, 4, "rotations"),
            "static_features": _as_rows(self.static_features, 3, "static_features"),
            "view_features": _as_rows(self.view_features, 3, "view_features"),
        }
        for name, a in arrays.items():
            if len(a) != n:
                raise InvalidInputError(f"{name} has {len(a)} rows, expected {n}")
            object.__setattr__(self, name, _frozen(a))

    @property
    def count(self) -> int:
        return len(self.positions)

    def subset(self, idx) -> "OmgGaussianSet":
        return OmgGaussianSet(
            self.positions[idx], self.log_scales[idx], self.rotations[idx],
            self.static_features[idx], self.view_features[idx], self.field,
        )


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world-to-camera, 3x3
    translation: np.ndarray
    width: int
    height: int
    image_path: str = field(default="", compare=False)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise InvalidInputError("camera rotation is not a proper orthonormal matrix")
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidInputError("camera width and height must be >= 1")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, width=64, height=64,
                fov_deg=60.0, image_path="") -> "Camera":
        """Pinhole camera at ``eye`` looking at ``target`` (camera +z forward, +y down)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, R, -R @ eye, width, height, image_path)
