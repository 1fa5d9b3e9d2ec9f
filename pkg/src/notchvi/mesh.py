"""Structured Q1 meshes of the notched beam and of the limit domains.

Every mesh here is a (possibly perforated) tensor grid.  Cross-sections are
built on the normalized square ``[-1/2, 1/2]^2`` and mapped onto S; the
neck boundary always sits at normalized radius ``r/2``, so neck and body
cells share faces node-for-node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import fem
from .errors import EmptyNotch, MisalignedNotch, UnsupportedRegime
from .geometry import (
    BeamGeometry,
    CaseTag,
    CrossSection,
    Regime,
    SubdomainTag,
    map_y,
    map_z,
)

DIRICHLET = -1

# local faces of the reference hex (see fem.REF_NODES[3])
_HEX_FACES = np.array(
    [[0, 3, 7, 4], [1, 2, 6, 5], [0, 1, 5, 4], [3, 2, 6, 7], [0, 1, 2, 3], [4, 5, 6, 7]]
)


@dataclass
class Mesh:
    """Nodes, Q1 cells and tags.

    ``dof_map[n]`` is the free-dof index of node ``n`` or ``DIRICHLET``.
    ``grid`` holds the tensor structure (axial coordinates, normalized cross
    coordinates, section, cross scale and the ``node_index`` lattice) when the
    mesh came from one of the builders below.
    """

    nodes: np.ndarray
    cells: np.ndarray
    cell_tag: np.ndarray
    dof_map: np.ndarray
    boundary_faces: dict = field(default_factory=dict)
    grid: dict | None = None

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_dofs(self):
        return int(np.count_nonzero(self.dof_map >= 0))

    @property
    def dirichlet_nodes(self):
        return np.flatnonzero(self.dof_map < 0)

    def geometry(self, order=2):
        """Isoparametric quadrature data, see :func:`fem.iso_geometry`."""
        pts, wts = fem.tensor_gauss(self.dim, order)
        return fem.iso_geometry(self.nodes[self.cells], pts, wts)

    def volume(self, order=2):
        dxw, _, _ = self.geometry(order)
        return float(dxw.sum())


@dataclass
class DiscreteField:
    """Nodal Q1 field; ``values`` holds free dofs, Dirichlet nodes are separate."""

    mesh: Mesh
    values: np.ndarray
    dirichlet_values: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_dofs,):
            raise ValueError("field length does not match the number of free dofs")
        nd = self.mesh.dirichlet_nodes.size
        if self.dirichlet_values is None:
            self.dirichlet_values = np.zeros(nd)
        self.dirichlet_values = np.asarray(self.dirichlet_values, dtype=float)

    @classmethod
    def from_nodal(cls, mesh: Mesh, nodal):
        nodal = np.asarray(nodal, dtype=float)
        free = mesh.dof_map >= 0
        vals = np.empty(mesh.n_dofs)
        vals[mesh.dof_map[free]] = nodal[free]
        return cls(mesh, vals, nodal[~free].copy())

    def nodal(self):
        out = np.empty(self.mesh.n_nodes)
        free = self.mesh.dof_map >= 0
        out[free] = self.values[self.mesh.dof_map[free]]
        out[~free] = self.dirichlet_values
        return out

    def l2_norm_sq(self, order=2):
        dxw, _, _ = self.mesh.geometry(order)
        N, _ = fem.shape(self.mesh.dim, fem.tensor_gauss(self.mesh.dim, order)[0])
        uq = self.nodal()[self.mesh.cells] @ N.T
        return float(np.sum(dxw * uq**2))


# ---------------------------------------------------------------- cross sections


def section_map(section: CrossSection, ab):
    """Normalized cross coordinates ``ab[..., 2]`` in ``[-1/2, 1/2]^2`` -> S.

    The disk uses the concentric-square map, so the normalized square of
    half-width ``s`` lands on the circle of radius ``2 s R``.
    """
    ab = np.asarray(ab, dtype=float)
    if section.kind == "square":
        return 2.0 * section.half_width * ab
    rho = 2.0 * np.max(np.abs(ab), axis=-1)
    nrm = np.linalg.norm(ab, axis=-1)
    safe = np.where(nrm > 0, nrm, 1.0)
    return section.radius * (rho / safe)[..., None] * ab


def section_map_inv(section: CrossSection, yc):
    yc = np.asarray(yc, dtype=float)
    if section.kind == "square":
        return yc / (2.0 * section.half_width)
    nrm = np.linalg.norm(yc, axis=-1)
    rho = nrm / section.radius
    big = np.max(np.abs(yc), axis=-1)
    safe = np.where(big > 0, big, 1.0)
    return (0.5 * rho * nrm / safe)[..., None] * yc / np.where(nrm > 0, nrm, 1.0)[..., None]


def _cross_grid(r, n_cross, cross_grid, n_notch_cross):
    if cross_grid == "uniform":
        m_real = r * n_cross
        m = int(round(m_real))
        if abs(m_real - m) > 1e-9:
            raise MisalignedNotch(
                f"r_eps*n_cross = {m_real:.12g} is not an integer; the neck cannot align "
                "with a uniform cross grid (use cross_grid='fitted')"
            )
        if m == 0:
            raise EmptyNotch("r_eps*n_cross rounds to 0: the neck has no cross-section cells")
        if (n_cross - m) % 2:
            raise MisalignedNotch(
                f"n_cross - r_eps*n_cross = {n_cross - m} is odd; the neck is not centred on "
                "grid lines"
            )
        return np.linspace(-0.5, 0.5, n_cross + 1)
    if cross_grid == "fitted":
        m_in = n_notch_cross or max(1, int(round(r * n_cross)))
        inner = np.linspace(-0.5 * r, 0.5 * r, m_in + 1)
        if r >= 1.0:
            return inner
        n_side = max(1, int(round((n_cross - m_in) / 2)))
        outer = np.linspace(0.5 * r, 0.5, n_side + 1)[1:]
        return np.concatenate([-outer[::-1], inner, outer])
    raise ValueError(f"unknown cross_grid {cross_grid!r}")


def _axial_grid(t, n_axial, notch_refine, grade_to_notch):
    if n_axial < 2 or n_axial % 2:
        raise ValueError("n_axial must be a positive even integer")
    if notch_refine < 1:
        raise ValueError("notch_refine must be >= 1")
    n_side = n_axial // 2
    h_out = (1.0 - t) / n_side
    if t == 0:
        side = np.linspace(0.0, 1.0, n_side + 1)
        return np.concatenate([-side[::-1], side[1:]])
    n_notch = notch_refine * max(1, math.ceil(2 * t / h_out - 1e-9))
    h_n = 2 * t / n_notch
    if grade_to_notch and h_n < h_out and n_side > 1:
        length = 1.0 - t

        def excess(q):
            return h_n * (q**n_side - 1) / (q - 1) - length

        q = brentq(excess, 1.0 + 1e-12, 10.0)
        steps = h_n * q ** np.arange(n_side)
        side = t + np.concatenate([[0.0], np.cumsum(steps)])
        side[-1] = 1.0
    else:
        side = np.linspace(t, 1.0, n_side + 1)
    notch = np.linspace(-t, t, n_notch + 1)
    return np.concatenate([-side[::-1], notch[1:-1], side])


def _hex_cells(node_index, mask):
    """Hex connectivity for the active cells ``mask[i, j, k]`` of a node lattice."""
    ii, jj, kk = np.nonzero(mask)
    ref = fem.REF_NODES[3].astype(int)
    cells = node_index[ii[:, None] + ref[:, 0], jj[:, None] + ref[:, 1], kk[:, None] + ref[:, 2]]
    return cells, ii


def _lattice(mask, shape):
    used = np.zeros(shape, dtype=bool)
    ref = fem.REF_NODES[3].astype(int)
    n1, n2, n3 = mask.shape
    for di, dj, dk in ref:
        used[di : di + n1, dj : dj + n2, dk : dk + n3] |= mask
    node_index = np.full(shape, -1, dtype=np.int64)
    node_index[used] = np.arange(np.count_nonzero(used))
    return node_index, used


def boundary_faces_of(cells):
    """Faces that belong to exactly one hex, plus the max face multiplicity."""
    faces = cells[:, _HEX_FACES].reshape(-1, 4)
    key = np.sort(faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return faces[first[counts == 1]], int(counts.max())


def _tag_faces(nodes, faces, lo=-1.0, hi=1.0, names=("GammaMinus", "GammaPlus")):
    x1 = nodes[faces, 0]
    minus = np.all(np.isclose(x1, lo, atol=1e-12), axis=1)
    plus = np.all(np.isclose(x1, hi, atol=1e-12), axis=1)
    return {
        names[0]: faces[minus],
        names[1]: faces[plus],
        "Lateral": faces[~(minus | plus)],
    }


def build_beam_mesh(
    geom: BeamGeometry,
    n_axial: int,
    n_cross: int,
    notch_refine: int = 1,
    *,
    cross_grid: str = "uniform",
    n_notch_cross: int | None = None,
    grade_to_notch: bool = False,
) -> Mesh:
    """Hex mesh of Omega_eps whose grid planes contain ``x1 = +-t``.

    ``n_axial`` cells (half per side) cover the body; the neck gets
    ``notch_refine`` times the cell count a uniform body spacing would give.
    ``cross_grid='uniform'`` needs ``r*n_cross`` to be an integer of the same
    parity as ``n_cross``; ``'fitted'`` places grid lines at the neck
    boundary for any r.  ``grade_to_notch`` grows body cells geometrically
    away from the neck, starting at the neck cell size.
    """
    r, t = geom.r_eps, geom.t_eps
    X = _axial_grid(t, n_axial, notch_refine, grade_to_notch)
    A = _cross_grid(r, n_cross, cross_grid, n_notch_cross)
    n1, n2 = X.size - 1, A.size - 1

    tol = 1e-12
    notch_ax = (X[:-1] >= -t - tol) & (X[1:] <= t + tol) if t > 0 else np.zeros(n1, bool)
    inner = (A[:-1] >= -0.5 * r - tol) & (A[1:] <= 0.5 * r + tol)
    mask = ~notch_ax[:, None, None] | (inner[:, None] & inner[None, :])[None, :, :]

    node_index, used = _lattice(mask, (n1 + 1, n2 + 1, n2 + 1))
    ii, jj, kk = np.nonzero(used)
    ab = np.column_stack([A[jj], A[kk]])
    nodes = np.column_stack([X[ii], geom.eps * section_map(geom.section, ab)])

    cells, cell_i = _hex_cells(node_index, mask)
    mid = 0.5 * (X[cell_i] + X[cell_i + 1])
    tag = np.where(mid < 0, int(SubdomainTag.OMEGA_MINUS), int(SubdomainTag.OMEGA_PLUS))
    tag = np.where(notch_ax[cell_i], int(SubdomainTag.OMEGA_ZERO), tag)

    dirichlet = (ii == 0) | (ii == n1)
    dof_map = np.full(nodes.shape[0], DIRICHLET, dtype=np.int64)
    dof_map[~dirichlet] = np.arange(np.count_nonzero(~dirichlet))

    faces, _ = boundary_faces_of(cells)
    grid = {
        "axial": X,
        "cross": A,
        "section": geom.section,
        "cross_scale": geom.eps,
        "node_index": node_index,
        "cell_mask": mask,
    }
    return Mesh(nodes, cells, tag.astype(np.int64), dof_map, _tag_faces(nodes, faces), grid)


def _segment_mesh(left, right):
    n_l = left.size
    nodes = np.concatenate([left, right])[:, None]
    cl = np.column_stack([np.arange(n_l - 1), np.arange(1, n_l)])
    cr = n_l + np.column_stack([np.arange(right.size - 1), np.arange(1, right.size)])
    cells = np.vstack([cl, cr])
    tag = np.concatenate([np.full(n_l - 1, -1), np.full(right.size - 1, 1)])
    dof_map = np.full(nodes.shape[0], DIRICHLET, dtype=np.int64)
    dof_map[1:-1] = np.arange(nodes.shape[0] - 2)
    faces = {
        "GammaMinus": np.array([[0]]),
        "GammaPlus": np.array([[nodes.shape[0] - 1]]),
        "Junction": np.array([[n_l - 1], [n_l]]),
    }
    grid = {"axial_left": left, "axial_right": right, "n_left": n_l}
    return Mesh(nodes, cells, tag, dof_map, faces, grid)


def build_segments_mesh(h_1d: float) -> Mesh:
    """Mesh of (-1, 0) U (0, 1) with two distinct nodes at 0 (0- and 0+)."""
    n = max(1, int(round(1.0 / h_1d)))
    return _segment_mesh(np.linspace(-1.0, 0.0, n + 1), np.linspace(0.0, 1.0, n + 1))


def build_section_mesh(section: CrossSection, n_cross: int) -> Mesh:
    A = np.linspace(-0.5, 0.5, n_cross + 1)
    jj, kk = np.meshgrid(np.arange(n_cross + 1), np.arange(n_cross + 1), indexing="ij")
    node_index = (jj * (n_cross + 1) + kk).astype(np.int64)
    nodes = section_map(section, np.column_stack([A[jj.ravel()], A[kk.ravel()]]))
    cj, ck = np.meshgrid(np.arange(n_cross), np.arange(n_cross), indexing="ij")
    cj, ck = cj.ravel(), ck.ravel()
    ref = fem.REF_NODES[2].astype(int)
    cells = node_index[cj[:, None] + ref[:, 0], ck[:, None] + ref[:, 1]]
    dof_map = np.arange(nodes.shape[0], dtype=np.int64)
    grid = {"cross": A, "section": section, "cross_scale": 1.0, "node_index": node_index}
    return Mesh(nodes, cells, np.ones(cells.shape[0], np.int64), dof_map, {}, grid)


def build_block_mesh(mu: float, section: CrossSection, n_cross: int, n_axial: int) -> Mesh:
    """Hex mesh of ``[-mu, mu] x S`` with junction faces tagged at ``z1 = +-mu``."""
    X = np.linspace(-mu, mu, n_axial + 1)
    A = np.linspace(-0.5, 0.5, n_cross + 1)
    mask = np.ones((n_axial, n_cross, n_cross), dtype=bool)
    node_index, used = _lattice(mask, (n_axial + 1, n_cross + 1, n_cross + 1))
    ii, jj, kk = np.nonzero(used)
    nodes = np.column_stack([X[ii], section_map(section, np.column_stack([A[jj], A[kk]]))])
    cells, _ = _hex_cells(node_index, mask)
    dof_map = np.arange(nodes.shape[0], dtype=np.int64)
    faces, _ = boundary_faces_of(cells)
    grid = {
        "axial": X,
        "cross": A,
        "section": section,
        "cross_scale": 1.0,
        "node_index": node_index,
        "cell_mask": mask,
    }
    btags = _tag_faces(nodes, faces, -mu, mu, ("JunctionMinus", "JunctionPlus"))
    return Mesh(nodes, cells, np.zeros(cells.shape[0], np.int64), dof_map, btags, grid)


def build_limit_meshes(
    regime: Regime,
    h_1d: float,
    n_cross: int,
    n_notch_axial: int,
    section: CrossSection | None = None,
):
    """``(segments mesh, section mesh, block mesh or None)`` for the limit problems."""
    section = section or CrossSection()
    if regime.case_tag is CaseTag.OTHER:
        raise UnsupportedRegime(
            f"no limit problem for mu={regime.mu}, nu={regime.nu} (case {regime.case_tag.value})"
        )
    m1 = build_segments_mesh(h_1d)
    ms = build_section_mesh(section, n_cross)
    mz = build_block_mesh(regime.mu, section, n_cross, n_notch_axial) if regime.is_case_a else None
    return m1, ms, mz


# ---------------------------------------------------------------- frames


def push_field(U: DiscreteField, frame: str, geom: BeamGeometry, regime: Regime | None = None):
    """Transport a beam-mesh field to the y- or z-frame.

    The image mesh has the mapped node coordinates and the same connectivity,
    so nodal values are unchanged.
    """
    mesh = U.mesh
    if frame == "y":
        nodes = map_y(mesh.nodes, geom)
    elif frame == "z":
        if regime is None:
            raise UnsupportedRegime("the z-frame needs a regime with finite mu")
        nodes = map_z(mesh.nodes, geom, regime)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    image = Mesh(nodes, mesh.cells, mesh.cell_tag, mesh.dof_map, mesh.boundary_faces, None)
    return DiscreteField(image, U.values.copy(), U.dirichlet_values.copy())


# ---------------------------------------------------------------- evaluation


def interpolate_block(mesh: Mesh, nodal, pts):
    """Trilinear interpolation of a nodal field on a full tensor hex mesh.

    Points are located in normalized cross coordinates; for the disk this is
    exact at nodes and consistent with the mapped grid in between.
    """
    g = mesh.grid
    pts = np.asarray(pts, dtype=float)
    i, s = fem.locate_1d(g["axial"], pts[:, 0])
    ab = section_map_inv(g["section"], pts[:, 1:] / g["cross_scale"])
    j, a = fem.locate_1d(g["cross"], ab[:, 0])
    k, b = fem.locate_1d(g["cross"], ab[:, 1])
    ni = g["node_index"]
    nodal = np.asarray(nodal)
    out = np.zeros(pts.shape[0])
    for di, wi in ((0, 1 - s), (1, s)):
        for dj, wj in ((0, 1 - a), (1, a)):
            for dk, wk in ((0, 1 - b), (1, b)):
                out += wi * wj * wk * nodal[ni[i + di, j + dj, k + dk]]
    return out


def write_mesh(mesh: Mesh, path):
    """Plain-text dump: ``n x y z`` per node, ``c i0 .. i7 tag`` per cell."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {mesh.n_nodes} cells {mesh.n_cells} dim {mesh.dim}\n")
        for p in mesh.nodes:
            fh.write("n " + " ".join(f"{v:.17g}" for v in p) + "\n")
        for c, tg in zip(mesh.cells, mesh.cell_tag):
            fh.write("c " + " ".join(str(int(v)) for v in c) + f" {int(tg)}\n")
