"""Dense 3D scalar/vector grids and the operations that live on them.

Grids are indexed ``data[i, j, k]`` for voxel (x, y, z) and are immutable
after construction.  Vertex/point coordinates use the normalized frame that
maps voxel index i to ``2*i/(dims-1) - 1``, so every grid spans [-1, 1]^3
regardless of resolution.

Distance transforms use the voxel-center convention: the value at a voxel is
the exact (squared) Euclidean distance to the nearest voxel center of the
opposite class.
"""

from __future__ import annotations

import struct

import numpy as np

from . import _kernels
from .errors import FormatError, MaskError

_BIG = 1e30


def _validate_grid(data: np.ndarray, spacing) -> tuple[np.ndarray, tuple[float, float, float]]:
    if not np.isfinite(data).all():
        raise ValueError("grid data contains NaN/Inf")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError("spacing components must be strictly positive")
    data.setflags(write=False)
    return data, spacing


class ScalarVolume:
    """Dense scalar grid: intensity, mask, SDF or parameter field."""

    __slots__ = ("data", "dims", "spacing")

    def __init__(self, data, spacing=(1.0, 1.0, 1.0)):
        data = np.array(data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"scalar volume must be 3D, got shape {data.shape}")
        self.data, self.spacing = _validate_grid(data, spacing)
        self.dims = data.shape

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)):
        return cls(np.zeros(tuple(dims)), spacing)

    def frame(self) -> "NormalizedFrame":
        return NormalizedFrame(self.dims)


class VectorVolume:
    """Dense grid of 3-vectors: velocity or displacement fields."""

    __slots__ = ("data", "dims", "spacing")

    def __init__(self, data, spacing=(1.0, 1.0, 1.0)):
        data = np.array(data, dtype=np.float64)
        if data.ndim != 4 or data.shape[3] != 3 or min(data.shape[:3]) < 1:
            raise ValueError(f"vector volume must be (X, Y, Z, 3), got shape {data.shape}")
        self.data, self.spacing = _validate_grid(data, spacing)
        self.dims = data.shape[:3]

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)):
        return cls(np.zeros(tuple(dims) + (3,)), spacing)

    def frame(self) -> "NormalizedFrame":
        return NormalizedFrame(self.dims)


class NormalizedFrame:
    """Bijection between voxel indices and normalized [-1, 1] coordinates."""

    __slots__ = ("dims",)

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)
        if any(d < 2 for d in self.dims):
            raise ValueError("normalized frame needs at least 2 voxels per axis")

    def voxel_to_norm(self, pts):
        d = np.asarray(self.dims, dtype=np.float64)
        return 2.0 * np.asarray(pts, dtype=np.float64) / (d - 1.0) - 1.0

    def norm_to_voxel(self, pts):
        d = np.asarray(self.dims, dtype=np.float64)
        return (np.asarray(pts, dtype=np.float64) + 1.0) * 0.5 * (d - 1.0)

    def norm_scale(self, spacing=(1.0, 1.0, 1.0)):
        """Per-axis factor taking normalized displacements to physical units."""
        d = np.asarray(self.dims, dtype=np.float64)
        return (d - 1.0) * 0.5 * np.asarray(spacing, dtype=np.float64)


# ---------------------------------------------------------------------------
# distance transforms
# ---------------------------------------------------------------------------

def _foreground(mask: ScalarVolume) -> np.ndarray:
    return mask.data > 0.5


def _edt_to_set(member: np.ndarray, spacing) -> np.ndarray:
    """Exact squared distance from every voxel to the nearest True voxel."""
    f = np.where(member, 0.0, _BIG)
    for axis in range(3):
        moved = np.moveaxis(f, axis, 2)
        shape = moved.shape
        res = _kernels.edt_pass(np.ascontiguousarray(moved.reshape(-1, shape[2])),
                                float(spacing[axis]))
        f = np.moveaxis(res.reshape(shape), 2, axis)
    return f


def edt_squared(mask: ScalarVolume) -> ScalarVolume:
    """Exact squared Euclidean distance to the nearest opposite-class voxel.

    Separable lower-envelope transform, one pass per axis; exact (integer
    in voxel units before spacing is applied).
    """
    fg = _foreground(mask)
    if fg.all() or not fg.any():
        raise MaskError("degenerate mask (no boundary)")
    d2_fg = _edt_to_set(fg, mask.spacing)
    d2_bg = _edt_to_set(~fg, mask.spacing)
    return ScalarVolume(np.where(fg, d2_bg, d2_fg), mask.spacing)


def signed_distance(mask: ScalarVolume) -> ScalarVolume:
    """SDF of a binary mask: negative inside the foreground, positive outside."""
    d = np.sqrt(edt_squared(mask).data)
    return ScalarVolume(np.where(_foreground(mask), -d, d), mask.spacing)


def normalize_intensity(volume: ScalarVolume) -> ScalarVolume:
    """Affine rescale to [0, 1]; the minimum maps to 0 and the maximum to 1."""
    lo = volume.data.min()
    hi = volume.data.max()
    if hi == lo:
        raise ValueError("zero dynamic range")
    return ScalarVolume((volume.data - lo) / (hi - lo), volume.spacing)


# ---------------------------------------------------------------------------
# differentiable trilinear sampling
# ---------------------------------------------------------------------------

def _as_channels(field) -> tuple[np.ndarray, bool]:
    if isinstance(field, VectorVolume):
        return field.data, True
    if isinstance(field, ScalarVolume):
        return field.data[..., None], False
    raise TypeError("field must be a ScalarVolume or VectorVolume")


def trilinear_sample(field, points: np.ndarray, jacobian: bool = False):
    """Sample a grid at normalized points (clamped to the boundary).

    Returns values of shape (N,) for scalar fields and (N, 3) for vector
    fields.  With ``jacobian=True``, also returns d(value)/d(point) of shape
    (N, 3) / (N, 3, 3); clamped coordinates contribute zero derivative.
    """
    grid, is_vec = _as_channels(field)
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(points).all():
        raise ValueError("sample points must be finite")
    vals = _kernels.trilinear_forward(grid, points)
    out = vals if is_vec else vals[:, 0]
    if not jacobian:
        return out
    jac = _kernels.trilinear_jacobian(grid, points)
    return out, (jac if is_vec else jac[:, 0, :])


def trilinear_scatter_adjoint(field, points: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Adjoint of sampling w.r.t. the grid values (deterministic scatter).

    ``cotangent`` has the shape of the sampled values; the result has the
    shape of ``field.data``.
    """
    grid, is_vec = _as_channels(field)
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cot = np.ascontiguousarray(cotangent, dtype=np.float64).reshape(points.shape[0], -1)
    g = _kernels.trilinear_adjoint(grid.shape[:3], grid.shape[3], points, cot)
    return g if is_vec else g[..., 0]


# ---------------------------------------------------------------------------
# MVOL file format
# ---------------------------------------------------------------------------

_MAGIC = b"MVOL"
DTYPE_SCALAR_F32 = 0
DTYPE_VECTOR_F32 = 1
DTYPE_MASK_U8 = 2


def save_mvol(path, volume, as_mask: bool = False) -> None:
    """Write an MVOL file (little-endian, x-fastest raw data)."""
    if isinstance(volume, VectorVolume):
        dtype = DTYPE_VECTOR_F32
        raw = np.transpose(volume.data, (2, 1, 0, 3)).astype("<f4").tobytes()
    elif as_mask:
        dtype = DTYPE_MASK_U8
        raw = (np.transpose(volume.data, (2, 1, 0)) > 0.5).astype(np.uint8).tobytes()
    else:
        dtype = DTYPE_SCALAR_F32
        raw = np.transpose(volume.data, (2, 1, 0)).astype("<f4").tobytes()
    header = _MAGIC + struct.pack("<IIIIfffI", 1, *volume.dims, *volume.spacing, dtype)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw)


def load_mvol(path):
    """Read an MVOL file; returns a ScalarVolume or VectorVolume."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic")
    if len(blob) < 36:
        raise FormatError(f"{path}: truncated header")
    version, dx, dy, dz, sx, sy, sz, dtype = struct.unpack("<IIIIfffI", blob[4:36])
    if version != 1:
        raise FormatError(f"{path}: unsupported MVOL version {version}")
    dims = (dx, dy, dz)
    n = dx * dy * dz
    payload = blob[36:]
    if dtype == DTYPE_SCALAR_F32 or dtype == DTYPE_VECTOR_F32:
        ncomp = 3 if dtype == DTYPE_VECTOR_F32 else 1
        if len(payload) != 4 * n * ncomp:
            raise FormatError(f"{path}: payload size mismatch")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if dtype == DTYPE_VECTOR_F32:
            data = arr.reshape(dz, dy, dx, 3).transpose(2, 1, 0, 3)
            return VectorVolume(data, (sx, sy, sz))
        data = arr.reshape(dz, dy, dx).transpose(2, 1, 0)
        return ScalarVolume(data, (sx, sy, sz))
    if dtype == DTYPE_MASK_U8:
        if len(payload) != n:
            raise FormatError(f"{path}: payload size mismatch")
        arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
        data = (arr > 0.5).astype(np.float64).reshape(dz, dy, dx).transpose(2, 1, 0)
        return ScalarVolume(data, (sx, sy, sz))
    raise FormatError(f"{path}: unknown dtype code {dtype}")
