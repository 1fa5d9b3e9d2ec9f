"""Tensor-product Q1 elements on the reference cube [0, 1]^d.

Local node order: segment ``0, 1``; quad ``(0,0) (1,0) (1,1) (0,1)``;
hex = quad at ``xi3 = 0`` followed by quad at ``xi3 = 1``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

_QUAD = [(0, 0), (1, 0), (1, 1), (0, 1)]
REF_NODES = {
    1: np.array([[0.0], [1.0]]),
    2: np.array(_QUAD, dtype=float),
    3: np.array([(i, j, k) for k in (0, 1) for (i, j) in _QUAD], dtype=float),
}


def gauss_1d(n: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tensor_gauss(dim: int, n: int):
    x, w = gauss_1d(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def shape(dim: int, pts):
    """Values ``N[q, a]`` and reference gradients ``dN[q, a, d]`` of Q1 at ``pts``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ref = REF_NODES[dim]
    # 1-D factors: xi if the node sits at 1 else 1 - xi
    fac = np.where(ref[None, :, :] == 1.0, pts[:, None, :], 1.0 - pts[:, None, :])
    dfac = np.where(ref[None, :, :] == 1.0, 1.0, -1.0) * np.ones_like(fac)
    N = np.prod(fac, axis=-1)
    dN = np.empty(fac.shape)
    for d in range(dim):
        parts = fac.copy()
        parts[..., d] = dfac[..., d]
        dN[..., d] = np.prod(parts, axis=-1)
    return N, dN


def iso_geometry(coords, pts, wts):
    """Isoparametric data for cells with node coordinates ``coords[c, a, d]``.

    Returns ``(dxw[c, q], grad[c, q, a, d], xq[c, q, d])``: weighted Jacobian
    determinants, physical shape gradients and quadrature points.
    """
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[-1]
    N, dN = shape(dim, pts)
    J = np.einsum("cai,qaj->cqij", coords, dN)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted cell in mesh")
    Jinv = np.linalg.inv(J)
    grad = np.einsum("qaj,cqji->cqai", dN, Jinv)
    xq = np.einsum("qa,cad->cqd", N, coords)
    return det * np.asarray(wts)[None, :], grad, xq


def locate_1d(grid, x):
    """Cell index and local coordinate in ``[0, 1]`` of ``x`` on a sorted grid."""
    grid = np.asarray(grid)
    idx = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    h = grid[idx + 1] - grid[idx]
    return idx, (np.asarray(x) - grid[idx]) / h
