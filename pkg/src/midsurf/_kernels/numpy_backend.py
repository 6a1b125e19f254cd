"""Vectorized numpy implementations of the hot kernels.

Mirrors the API of the compiled core (`midsurf._kernels._core`) so either
backend can be selected at import time.  All routines are deterministic:
reductions run in a fixed order and nearest-neighbor ties are broken by the
lowest target index.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

_MAX_GRID_CELLS = 4_000_000
_RING_CACHE: dict[int, np.ndarray] = {}


def set_num_threads(n: int) -> None:
    """No-op; the numpy backend always runs single-threaded numpy ops."""


# ---------------------------------------------------------------------------
# nearest neighbors (uniform spatial hash grid)
# ---------------------------------------------------------------------------

def _ring_offsets(r: int) -> np.ndarray:
    """Integer cell offsets at exact Chebyshev distance r, fixed order."""
    if r in _RING_CACHE:
        return _RING_CACHE[r]
    if r == 0:
        out = np.zeros((1, 3), dtype=np.int64)
    else:
        rng = np.arange(-r, r + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        out = grid[np.abs(grid).max(axis=1) == r]
    _RING_CACHE[r] = out
    return out


class _HashGrid:
    """Uniform grid over the target points; cells are cubes of side h."""

    def __init__(self, target: np.ndarray):
        self.target = target
        m = target.shape[0]
        lo = target.min(axis=0)
        hi = target.max(axis=0)
        ext = hi - lo
        max_ext = float(ext.max())
        if max_ext == 0.0:
            # all targets coincide; a single cell suffices
            self.h = 1.0
        else:
            # aim for a handful of points per occupied cell
            g = int(round((2.0 * m) ** (1.0 / 3.0) * 1.5))
            g = max(1, min(g, 192))
            self.h = max_ext / g
        self.origin = lo
        dims = np.maximum(1, np.ceil(ext / self.h + 1e-9).astype(np.int64) + 1)
        while int(np.prod(dims)) > _MAX_GRID_CELLS:
            self.h *= 2.0
            dims = np.maximum(1, np.ceil(ext / self.h + 1e-9).astype(np.int64) + 1)
        self.dims = dims
        cells = self.cell_of(target)
        lin = self.linearize(cells)
        self.order = np.argsort(lin, kind="stable")
        ncells = int(np.prod(dims))
        self.counts = np.bincount(lin, minlength=ncells)
        self.starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.h).astype(np.int64)

    def linearize(self, cells: np.ndarray) -> np.ndarray:
        d = self.dims
        return (cells[:, 0] * d[1] + cells[:, 1]) * d[2] + cells[:, 2]


def build_grid(target: np.ndarray) -> _HashGrid:
    target = np.ascontiguousarray(target, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != 3 or target.shape[0] == 0:
        raise ValueError("target must be a nonempty (M, 3) array")
    return _HashGrid(target)


def grid_query(grid: _HashGrid, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest target for each query point.

    Returns (indices, squared distances); ties resolve to the lowest target
    index.  Rings of cells are examined outward until no unexamined cell can
    hold a closer point.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    n = query.shape[0]
    target = grid.target
    h = grid.h
    qcell = grid.cell_of(query)

    best_d2 = np.full(n, np.inf)
    best_idx = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    unresolved = np.arange(n)

    r = 0
    while unresolved.size:
        if r > 8192:
            raise RuntimeError("nearest-neighbor ring expansion failed to terminate")
        off = _ring_offsets(r)
        cells = qcell[unresolved][:, None, :] + off[None, :, :]
        valid = ((cells >= 0) & (cells < grid.dims[None, None, :])).all(axis=2)
        rows_all = np.broadcast_to(
            np.arange(unresolved.size)[:, None], valid.shape)
        rows = rows_all[valid]
        lin = grid.linearize(cells[valid])
        ct = grid.counts[lin]
        nz = ct > 0
        rows, lin, ct = rows[nz], lin[nz], grid.counts[lin[nz]]
        row_tot = np.bincount(rows, weights=ct, minlength=unresolved.size).astype(np.int64)
        if ct.size:
            st = grid.starts[lin]
            tot = int(ct.sum())
            rep = np.repeat(st, ct)
            within = np.arange(tot) - np.repeat(np.concatenate(([0], np.cumsum(ct)[:-1])), ct)
            cand = grid.order[rep + within]
            seg_rows = np.repeat(rows, ct)
            diff = query[unresolved][seg_rows] - target[cand]
            d2 = np.einsum("ij,ij->i", diff, diff)

            nonempty = row_tot > 0
            rowptr = np.concatenate(([0], np.cumsum(row_tot)))
            red = rowptr[:-1][nonempty]
            dmin = np.minimum.reduceat(d2, red)
            dmin_full = np.repeat(dmin, row_tot[nonempty])
            tie = np.where(d2 == dmin_full, cand, np.iinfo(np.int64).max)
            imin = np.minimum.reduceat(tie, red)

            u = unresolved[nonempty]
            better = (dmin < best_d2[u]) | ((dmin == best_d2[u]) & (imin < best_idx[u]))
            best_d2[u[better]] = dmin[better]
            best_idx[u[better]] = imin[better]

        done = best_d2[unresolved] <= (r * h) ** 2
        unresolved = unresolved[~done]
        r += 1
    return best_idx, best_d2


def nearest_neighbors(query: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return grid_query(build_grid(target), query)


# ---------------------------------------------------------------------------
# trilinear sampling in normalized [-1, 1]^3 coordinates
# ---------------------------------------------------------------------------

def _locate(dims: tuple[int, int, int], points: np.ndarray):
    """Clamped voxel coordinates, base corner, fractional offsets.

    Returns (i0 (N,3), frac (N,3), interior (N,3) bool); `interior` is False
    along axes where the point was clamped (derivative is zero there).
    """
    d = np.asarray(dims, dtype=np.float64)
    t = (points + 1.0) * 0.5 * (d - 1.0)
    interior = (t > 0.0) & (t < d - 1.0)
    t = np.clip(t, 0.0, d - 1.0)
    i0 = np.minimum(t.astype(np.int64), np.maximum(d.astype(np.int64) - 2, 0))
    frac = t - i0
    # single-voxel axes degenerate to constant interpolation
    single = np.asarray(dims) == 1
    if single.any():
        i0[:, single] = 0
        frac[:, single] = 0.0
        interior[:, single] = False
    return i0, frac, interior


_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
     [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.int64)


def _corner_indices(dims, i0):
    X, Y, Z = dims
    idx = i0[:, None, :] + _CORNERS[None, :, :]
    idx = np.minimum(idx, np.array([X - 1, Y - 1, Z - 1]))
    return (idx[..., 0] * Y + idx[..., 1]) * Z + idx[..., 2]


def _corner_weights(frac):
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    return np.stack([gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz,
                     gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz], axis=1)


def trilinear_forward(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sample (X, Y, Z, C) grid at N normalized points -> (N, C)."""
    X, Y, Z, C = grid.shape
    flat = grid.reshape(-1, C)
    i0, frac, _ = _locate((X, Y, Z), points)
    lin = _corner_indices((X, Y, Z), i0)
    w = _corner_weights(frac)
    return np.einsum("nk,nkc->nc", w, flat[lin])


def trilinear_jacobian(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """d(sample)/d(point) for each point -> (N, C, 3), normalized units."""
    X, Y, Z, C = grid.shape
    flat = grid.reshape(-1, C)
    i0, frac, interior = _locate((X, Y, Z), points)
    lin = _corner_indices((X, Y, Z), i0)
    vals = flat[lin]  # (N, 8, C)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    # weight derivatives w.r.t. voxel coordinate along each axis
    dwx = np.stack([-gy * gz, gy * gz, -fy * gz, fy * gz,
                    -gy * fz, gy * fz, -fy * fz, fy * fz], axis=1)
    dwy = np.stack([-gx * gz, -fx * gz, gx * gz, fx * gz,
                    -gx * fz, -fx * fz, gx * fz, fx * fz], axis=1)
    dwz = np.stack([-gx * gy, -fx * gy, -gx * fy, -fx * fy,
                    gx * gy, fx * gy, gx * fy, fx * fy], axis=1)
    dims = np.array([X, Y, Z], dtype=np.float64)
    scale = (dims - 1.0) * 0.5 * interior  # voxel -> normalized, 0 if clamped
    jac = np.empty((points.shape[0], C, 3))
    for a, dw in enumerate((dwx, dwy, dwz)):
        jac[:, :, a] = np.einsum("nk,nkc->nc", dw, vals) * scale[:, a:a + 1]
    return jac


def trilinear_adjoint(dims: tuple[int, int, int], channels: int,
                      points: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Scatter-adjoint of trilinear sampling w.r.t. the grid values.

    Accumulation is a per-channel bincount, i.e. a fixed-order reduction.
    """
    X, Y, Z = dims
    i0, frac, _ = _locate((X, Y, Z), points)
    lin = _corner_indices((X, Y, Z), i0).ravel()
    w = _corner_weights(frac)
    cot = cotangent.reshape(points.shape[0], channels)
    out = np.empty((X * Y * Z, channels))
    for c in range(channels):
        out[:, c] = np.bincount(lin, weights=(w * cot[:, c:c + 1]).ravel(),
                                minlength=X * Y * Z)
    return out.reshape(X, Y, Z, channels)


# ---------------------------------------------------------------------------
# squared Euclidean distance transform, one separable pass
# ---------------------------------------------------------------------------

def edt_pass(f: np.ndarray, w: float) -> np.ndarray:
    """Lower envelope of parabolas along the last axis.

    out[m, i] = min_j f[m, j] + (w * (i - j))**2, computed exactly.  The
    numpy route evaluates the full envelope by broadcasting, chunked over
    scanlines to bound memory.
    """
    f = np.asarray(f, dtype=np.float64)
    m, n = f.shape
    i = np.arange(n, dtype=np.float64)
    pen = (w * (i[:, None] - i[None, :])) ** 2  # (n_out, n_src)
    out = np.empty_like(f)
    chunk = max(1, int(4_000_000 / (n * n)))
    for s in range(0, m, chunk):
        e = min(m, s + chunk)
        out[s:e] = (f[s:e, None, :] + pen[None, :, :]).min(axis=2)
    return out
