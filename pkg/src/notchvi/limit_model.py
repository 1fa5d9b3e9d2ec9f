"""Discrete limit problems: the 1-D/junction-block problem (case A) and the 1-D problem (case B).

Both limit domains are handled as slabs ``(axial P1 elements) x (section Q1
cells)``.  Per slab we carry an axial unknown (u or u_hat) and a corrector
(w or w_hat) stored as one section field per axial node.  Only the
transverse gradient of the corrector enters, so its value at section node 0
is pinned during the solve and the per-node mean is removed afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .coefficients import CoefficientSet, FeasibleSetSpec
from .errors import UnsupportedRegime
from .full_model import SolverOptions, SparsePattern
from .geometry import Regime
from .mesh import DiscreteField, Mesh
from .vi_core import SolveStats, VIProblem, solve_quasilinear

_PIN = 0


class Slab:
    """Quadrature and local gradients on ``elems x section cells``.

    ``pos`` are axial node positions, ``elems`` pairs of node indices.
    ``branch`` picks the coefficient branch and ``axial_scale`` divides the
    axial coordinate to get the branch coordinate.
    """

    def __init__(self, pos, elems, ms: Mesh, branch, axial_scale, cset, order=2):
        self.pos = np.asarray(pos, dtype=float)
        self.elems = np.asarray(elems)
        self.ms, self.branch, self.cset = ms, branch, cset
        self.axial_scale = axial_scale
        x1g, w1 = fem.gauss_1d(order)
        a, b = self.pos[self.elems[:, 0]], self.pos[self.elems[:, 1]]
        h = b - a
        self.phi = np.column_stack([1.0 - x1g, x1g])  # (q1, 2)
        self.dphi = np.column_stack([-1.0 / h, 1.0 / h])  # (E, 2)
        self.ya = a[:, None] + h[:, None] * x1g  # (E, q1)
        wa = h[:, None] * w1
        pts2, _ = fem.tensor_gauss(2, order)
        self.Ns, _ = fem.shape(2, pts2)
        dxs, gs, xs = ms.geometry(order)  # (C, q2), (C, q2, 4, 2), (C, q2, 2)
        self.dxs, self.gs, self.xs = dxs, gs, xs
        E, q1 = self.ya.shape
        C, q2 = dxs.shape
        self.shape = (E, C, q1, q2)
        self.w = wa[:, None, :, None] * dxs[None, :, None, :]
        s = np.empty(self.shape + (3,))
        s[..., 0] = (self.ya / axial_scale)[:, None, :, None]
        s[..., 1:] = xs[None, :, None, :, :]
        self.s = s
        Af, Bf, _ = cset.branch(branch)
        flat = s.reshape(-1, 3)
        self.A = Af(flat).reshape(self.shape + (3, 3))
        self.B = Bf(flat).reshape(self.shape + (3, 3))
        # local gradients: 2 axial dofs, then 2 x 4 corrector dofs (axial-node major)
        G = np.zeros(self.shape + (10, 3))
        G[..., 0, 0] = self.dphi[:, 0, None, None, None]
        G[..., 1, 0] = self.dphi[:, 1, None, None, None]
        for i in range(2):
            G[..., 2 + 4 * i : 6 + 4 * i, 1:] = (
                self.phi[None, None, :, None, i, None, None] * gs[None, :, None, :, :, :]
            )
        self.G = G

    def local_dofs(self, axial_dof, corr_dof):
        E, C = self.shape[:2]
        cells = self.ms.cells
        out = np.empty((E, C, 10), dtype=np.int64)
        out[..., 0] = axial_dof[self.elems[:, 0]][:, None]
        out[..., 1] = axial_dof[self.elems[:, 1]][:, None]
        out[..., 2:6] = corr_dof[self.elems[:, 0]][:, cells]
        out[..., 6:10] = corr_dof[self.elems[:, 1]][:, cells]
        return out.reshape(E * C, 10)

    def eta(self, axial_nodal):
        """Axial unknown at quadrature points, shape (E, q1)."""
        return np.einsum("qa,ea->eq", self.phi, axial_nodal[self.elems])

    def flux_matrices(self, axial_nodal):
        eta = np.broadcast_to(self.eta(axial_nodal)[:, None, :, None], self.shape)
        _, _, Pf = self.cset.branch(self.branch)
        P = Pf(self.s.reshape(-1, 3), eta.ravel()).reshape(self.shape + (3, 3))
        return self.A @ P @ self.B

    def element_matrices(self, axial_nodal):
        K = self.flux_matrices(axial_nodal)
        KG = np.einsum("ecpqij,ecpqbj->ecpqbi", K, self.G)
        Ke = np.einsum("ecpq,ecpqai,ecpqbi->ecab", self.w, self.G, KG)
        return Ke.reshape(-1, 10, 10)

    def load(self, f):
        """``int f(y1) phi_a`` per (element, cell), scattered like the axial dofs."""
        fq = f(self.ya)  # (E, q1)
        wf = np.einsum("ecpq,ep,pa->eca", self.w, fq, self.phi)
        E, C = self.shape[:2]
        out = np.zeros((E, C, 10))
        out[..., :2] = wf
        return out.reshape(E * C, 10)

    def gradient(self, axial_nodal, corr_nodal):
        """``grad'(axial, corrector)`` at quadrature points, shape (E, C, q1, q2, 3)."""
        cells = self.ms.cells
        coef = np.concatenate(
            [
                np.broadcast_to(axial_nodal[self.elems][:, None, :], self.shape[:2] + (2,)),
                corr_nodal[self.elems[:, 0]][:, cells],
                corr_nodal[self.elems[:, 1]][:, cells],
            ],
            axis=-1,
        )
        return np.einsum("ecpqai,eca->ecpqi", self.G, coef)

    def flux(self, axial_nodal, corr_nodal):
        K = self.flux_matrices(axial_nodal)
        return np.einsum("ecpqij,ecpqj->ecpqi", K, self.gradient(axial_nodal, corr_nodal))

    def section_mean_flux(self, axial_nodal, corr_nodal, y):
        """Cross-section mean of the flux at axial positions ``y`` (one element each)."""
        y = np.asarray(y, dtype=float)
        e = np.empty(y.size, dtype=np.int64)
        lo, hi = self.pos[self.elems[:, 0]], self.pos[self.elems[:, 1]]
        for n, v in enumerate(y):
            cand = np.flatnonzero((lo <= v + 1e-14) & (v <= hi + 1e-14))
            if cand.size == 0:
                raise ValueError(f"axial position {v} outside the slab")
            e[n] = cand[0]
        xi = (y - lo[e]) / (hi[e] - lo[e])
        phi = np.column_stack([1 - xi, xi])
        C, q2 = self.dxs.shape
        ax = np.sum(phi * axial_nodal[self.elems[e]], axis=1)
        dax = np.sum(self.dphi[e] * axial_nodal[self.elems[e]], axis=1)
        Wc = (
            phi[:, 0, None] * corr_nodal[self.elems[e, 0]]
            + phi[:, 1, None] * corr_nodal[self.elems[e, 1]]
        )
        gw = np.einsum("cqkd,nck->ncqd", self.gs, Wc[:, self.ms.cells])
        grad = np.empty((y.size, C, q2, 3))
        grad[..., 0] = dax[:, None, None]
        grad[..., 1:] = gw
        s = np.empty((y.size, C, q2, 3))
        s[..., 0] = (y / self.axial_scale)[:, None, None]
        s[..., 1:] = self.xs[None]
        Af, Bf, Pf = self.cset.branch(self.branch)
        flat = s.reshape(-1, 3)
        eta = np.broadcast_to(ax[:, None, None], (y.size, C, q2)).ravel()
        K = (Af(flat) @ Pf(flat, eta) @ Bf(flat)).reshape(y.size, C, q2, 3, 3)
        sig = np.einsum("ncqij,ncqj->ncqi", K, grad)
        area = self.dxs.sum()
        return np.einsum("cq,ncqi->ni", self.dxs, sig) / area


@dataclass
class LimitSolution:
    u: DiscreteField
    w: np.ndarray
    u_hat: DiscreteField | None
    w_hat: np.ndarray | None
    sigma1: np.ndarray
    sigma0: np.ndarray | None
    regime: Regime
    stats: SolveStats
    slabs: dict = field(repr=False, default_factory=dict)
    z_axial: np.ndarray | None = None
    u_hat_axial: np.ndarray | None = None

    @property
    def meshes(self):
        return self.u.mesh, self.slabs["Y1"].ms, (self.u_hat.mesh if self.u_hat else None)

    def junction_values(self):
        """``(u(0-), u(0+))``."""
        nl = self.u.mesh.grid["n_left"]
        un = self.u.nodal()
        return float(un[nl - 1]), float(un[nl])

    def u_at(self, x1, gap=0.0):
        """Limit u at axial positions; ``|x1| <= gap`` takes the one-sided value at 0."""
        x1 = np.asarray(x1, dtype=float)
        g = self.u.mesh.grid
        un = self.u.nodal()
        nl = g["n_left"]
        left = np.interp(x1, g["axial_left"], un[:nl])
        right = np.interp(x1, g["axial_right"], un[nl:])
        out = np.where(x1 < 0, left, right)
        um, up = self.junction_values()
        out = np.where((np.abs(x1) <= gap) & (x1 < 0), um, out)
        return np.where((np.abs(x1) <= gap) & (x1 >= 0), up, out)

    def u_hat_at(self, z1):
        """u_hat on Z0, extended by u(0-) for z1 < -mu and u(0+) for z1 > mu."""
        if self.u_hat_axial is None:
            raise UnsupportedRegime("u_hat exists only for finite mu")
        return np.interp(np.asarray(z1, dtype=float), self.z_axial, self.u_hat_axial)

    def sigma1_mean(self, y1):
        """Cross-section mean of sigma1 at axial positions in (-1, 0) U (0, 1)."""
        return self.slabs["Y1"].section_mean_flux(self.u.nodal(), self.w, y1)


def _pinned_dofs(n_axial, n_section, start):
    dof = np.full((n_axial, n_section), -1, dtype=np.int64)
    free = np.ones(n_section, dtype=bool)
    free[_PIN] = False
    count = n_axial * (n_section - 1)
    dof[:, free] = start + np.arange(count).reshape(n_axial, n_section - 1)
    return dof, start + count


def _solve(regime, cset, feas, meshes, options, with_block):
    m1, ms, mz = meshes
    opts = options or SolverOptions()
    nS = ms.n_nodes
    n1 = m1.n_nodes
    u_dof = m1.dof_map.astype(np.int64)
    n = m1.n_dofs
    w_dof, n = _pinned_dofs(n1, nS, n)
    y1 = Slab(m1.nodes[:, 0], m1.cells, ms, 1, 1.0, cset)
    slabs = {"Y1": y1}
    local = [y1.local_dofs(u_dof, w_dof)]
    lb_parts = [(u_dof, feas.lower_bounds(m1.nodes[:, 0]))]
    nl = m1.grid["n_left"]
    if with_block:
        mu = regime.mu
        Z = mz.grid["axial"]
        nz = Z.size
        uh_dof = np.empty(nz, dtype=np.int64)
        uh_dof[0], uh_dof[-1] = u_dof[nl - 1], u_dof[nl]
        uh_dof[1:-1] = n + np.arange(nz - 2)
        n += nz - 2
        wh_dof, n = _pinned_dofs(nz, nS, n)
        z0 = Slab(Z, np.column_stack([np.arange(nz - 1), np.arange(1, nz)]), ms, 0, mu, cset)
        slabs["Z0"] = z0
        local.append(z0.local_dofs(uh_dof, wh_dof))
        lb_parts.append((uh_dof[1:-1], feas.lower_bounds(np.zeros(nz - 2))))
    local = np.vstack(local)
    pattern = SparsePattern(local, n)

    lb = np.full(n, -np.inf)
    for dofs, vals in lb_parts:
        ok = dofs >= 0
        lb[dofs[ok]] = np.asarray(vals)[ok]

    rhs = np.zeros(n)
    if cset.source_f is not None:
        fe = y1.load(cset.source_f)
        ok = local[: fe.shape[0]] >= 0
        rhs = np.bincount(local[: fe.shape[0]][ok], weights=fe[ok], minlength=n)

    def axial_nodal(vals, dof):
        out = np.zeros(dof.size)
        ok = dof >= 0
        out[ok] = vals[dof[ok]]
        return out

    def corr_nodal(vals, dof):
        out = np.zeros(dof.shape)
        ok = dof >= 0
        out[ok] = vals[dof[ok]]
        return out

    def assembler(vals):
        parts = [y1.element_matrices(axial_nodal(vals, u_dof))]
        if with_block:
            parts.append(z0.element_matrices(axial_nodal(vals, uh_dof)))
        return VIProblem(pattern.matrix(np.concatenate(parts)), rhs, lb)

    init = np.maximum(np.zeros(n), lb)
    vals, stats = solve_quasilinear(
        assembler, init, opts.damping, opts.tol_outer, opts.max_outer, opts.inner(),
        state_dependent=cset.state_dependent,
    )

    u_nod = axial_nodal(vals, u_dof)
    w = _mean_free(corr_nodal(vals, w_dof), ms)
    u = DiscreteField.from_nodal(m1, u_nod)
    sigma1 = y1.flux(u_nod, w)
    if not with_block:
        return LimitSolution(u, w, None, None, sigma1, None, regime, stats, slabs)
    uh = axial_nodal(vals, uh_dof)
    wh = _mean_free(corr_nodal(vals, wh_dof), ms)
    sigma0 = z0.flux(uh, wh)
    ni = mz.grid["node_index"]
    nodal = np.empty(mz.n_nodes)
    nodal[ni] = np.broadcast_to(uh[:, None, None], ni.shape)
    uh_field = DiscreteField.from_nodal(mz, nodal)
    return LimitSolution(u, w, uh_field, wh, sigma1, sigma0, regime, stats, slabs, Z, uh)


def _mean_free(W, ms):
    """Subtract the area-weighted section mean from each row of ``W``."""
    dxs, _, _ = ms.geometry(2)
    pts, _ = fem.tensor_gauss(2, 2)
    N, _ = fem.shape(2, pts)
    # mass weights of each section node
    wts = np.bincount(
        ms.cells.ravel(), weights=np.einsum("cq,qa->ca", dxs, N).ravel(), minlength=ms.n_nodes
    )
    mean = W @ wts / wts.sum()
    return W - mean[:, None]


def solve_limit_caseA(regime: Regime, cset: CoefficientSet, feas: FeasibleSetSpec, meshes,
                      options: SolverOptions | None = None) -> LimitSolution:
    """Coupled 1-D / junction-block VI; u_hat traces are tied to u(0-) and u(0+)."""
    if not regime.is_case_a:
        raise UnsupportedRegime(
            f"case A needs 0 < mu < inf and nu = 0, got mu={regime.mu}, nu={regime.nu}"
        )
    if meshes[2] is None:
        raise ValueError("case A needs a block mesh for Z0")
    return _solve(regime, cset, feas, meshes, options, True)


def solve_limit_caseB(regime: Regime, cset: CoefficientSet, feas: FeasibleSetSpec, meshes,
                      options: SolverOptions | None = None) -> LimitSolution:
    """1-D VI on (-1, 0) U (0, 1) with free (natural) ends at 0- and 0+."""
    if not regime.is_case_b:
        raise UnsupportedRegime(
            f"case B needs mu = inf and 0 < nu < inf, got mu={regime.mu}, nu={regime.nu}"
        )
    return _solve(regime, cset, feas, meshes, options, False)


def solve_limit(regime, cset, feas, meshes, options=None):
    if regime.is_case_a:
        return solve_limit_caseA(regime, cset, feas, meshes, options)
    if regime.is_case_b:
        return solve_limit_caseB(regime, cset, feas, meshes, options)
    raise UnsupportedRegime(
        f"no limit problem for mu={regime.mu}, nu={regime.nu} ({regime.case_tag.value})"
    )


def flux_fields(sol: LimitSolution, cset: CoefficientSet | None = None):
    """Recompute ``(sigma1, sigma0)`` from the stored unknowns."""
    y1 = sol.slabs["Y1"]
    if cset is not None and cset is not y1.cset:
        y1 = Slab(y1.pos, y1.elems, y1.ms, 1, 1.0, cset)
    s1 = y1.flux(sol.u.nodal(), sol.w)
    s0 = None
    if sol.u_hat is not None:
        z0 = sol.slabs["Z0"]
        if cset is not None and cset is not z0.cset:
            z0 = Slab(z0.pos, z0.elems, z0.ms, 0, sol.regime.mu, cset)
        s0 = z0.flux(sol.u_hat_axial, sol.w_hat)
    return s1, s0


def write_limit(sol: LimitSolution, path):
    """Per-component text blocks ``u``, ``w``, ``u_hat``, ``w_hat``."""
    m1 = sol.u.mesh
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# regime mu {sol.regime.mu} nu {sol.regime.nu} case {sol.regime.case_tag.value}\n")
        fh.write(f"# component u mesh segments nodes {m1.n_nodes}\n")
        for x, v in zip(m1.nodes[:, 0], sol.u.nodal()):
            fh.write(f"{x:.17g} {v:.17g}\n")
        fh.write(f"# component w mesh segments x section shape {sol.w.shape[0]} {sol.w.shape[1]}\n")
        for i, row in enumerate(sol.w):
            fh.write(f"{i} " + " ".join(f"{v:.17g}" for v in row) + "\n")
        if sol.u_hat is None:
            return
        fh.write(f"# component u_hat mesh block_axial nodes {sol.z_axial.size}\n")
        for z, v in zip(sol.z_axial, sol.u_hat_axial):
            fh.write(f"{z:.17g} {v:.17g}\n")
        fh.write(
            f"# component w_hat mesh block_axial x section shape "
            f"{sol.w_hat.shape[0]} {sol.w_hat.shape[1]}\n"
        )
        for i, row in enumerate(sol.w_hat):
            fh.write(f"{i} " + " ".join(f"{v:.17g}" for v in row) + "\n")
