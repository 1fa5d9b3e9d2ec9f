"""Assembly and solution of the quasilinear VI on the notched-beam mesh."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .coefficients import CoefficientSet, FeasibleSetSpec
from .errors import NotConverged
from .geometry import BeamGeometry
from .mesh import DiscreteField, Mesh
from .vi_core import SolveStats, VIProblem, solve_quasilinear


@dataclass
class SolverOptions:
    omega: float = 1.5
    tol: float = 1e-10
    max_iter: int = 200_000
    warm_start: str = "direct"
    damping: float = 1.0
    tol_outer: float = 1e-9
    max_outer: int = 100

    def inner(self):
        return {
            "omega_relax": self.omega,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "warm_start": self.warm_start,
        }


class SparsePattern:
    """Fixed CSR pattern for element matrices scattered to free dofs."""

    def __init__(self, local_dofs, n_dofs):
        ld = np.asarray(local_dofs)
        nloc = ld.shape[1]
        rows = np.repeat(ld, nloc, axis=1).ravel()
        cols = np.tile(ld, (1, nloc)).ravel()
        self.keep = (rows >= 0) & (cols >= 0)
        key = rows[self.keep] * n_dofs + cols[self.keep]
        uniq, self.inverse = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, n_dofs)
        self.n = n_dofs
        self.n_entries = uniq.size
        # uniq is row-major sorted, so (indices, indptr) form a canonical CSR
        self.indices = c.astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n_dofs))]).astype(
            np.int32
        )

    def matrix(self, element_matrices):
        data = np.bincount(
            self.inverse, weights=np.asarray(element_matrices).ravel()[self.keep],
            minlength=self.n_entries,
        )
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def element_stiffness(dxw, grad, K):
    """``Ke[c, a, b] = sum_q w [K grad_b, grad_a]`` (flux uses the trial gradient)."""
    KG = np.einsum("cqij,cqbj->cqbi", K, grad)
    return np.einsum("cq,cqai,cqbi->cab", dxw, grad, KG)


class BeamDiscretization:
    """Quadrature data, coefficient fields and sparsity pattern of a beam mesh."""

    def __init__(self, mesh: Mesh, geom: BeamGeometry, cset: CoefficientSet, order: int = 2):
        self.mesh, self.geom, self.cset = mesh, geom, cset
        pts, wts = fem.tensor_gauss(3, order)
        self.N, _ = fem.shape(3, pts)
        self.dxw, self.grad, self.xq = mesh.geometry(order)
        C, Q = self.dxw.shape
        self.neck = mesh.cell_tag == 0
        s = self.xq.copy()
        if geom.t_eps > 0:
            s[self.neck, :, 0] /= geom.t_eps
        s[self.neck, :, 1:] /= geom.neck_radius_scale
        s[~self.neck, :, 1:] /= geom.eps
        self.s = s
        self.A = np.empty((C, Q, 3, 3))
        self.B = np.empty((C, Q, 3, 3))
        for b, sel in ((0, self.neck), (1, ~self.neck)):
            if np.any(sel):
                Af, Bf, _ = cset.branch(b)
                flat = s[sel].reshape(-1, 3)
                self.A[sel] = Af(flat).reshape(-1, Q, 3, 3)
                self.B[sel] = Bf(flat).reshape(-1, Q, 3, 3)
        self.local_dofs = mesh.dof_map[mesh.cells]
        self.pattern = SparsePattern(self.local_dofs, mesh.n_dofs)
        self.volume = float(self.dxw.sum())
        self.rhs = self._load()

    def _load(self):
        f = self.cset.source_f
        out = np.zeros(self.mesh.n_dofs)
        if f is None:
            return out
        body = ~self.neck
        fq = np.zeros(self.dxw.shape)
        fq[body] = f(self.xq[body, :, 0])
        fe = np.einsum("cq,cq,qa->ca", self.dxw, fq, self.N)
        free = self.local_dofs >= 0
        return np.bincount(self.local_dofs[free], weights=fe[free], minlength=self.mesh.n_dofs)

    def at_qp(self, nodal):
        return np.asarray(nodal)[self.mesh.cells] @ self.N.T

    def grad_at_qp(self, nodal):
        return np.einsum("cqad,ca->cqd", self.grad, np.asarray(nodal)[self.mesh.cells])

    def flux_matrices(self, eta_q):
        C, Q = eta_q.shape
        K = np.empty((C, Q, 3, 3))
        for b, sel in ((0, self.neck), (1, ~self.neck)):
            if np.any(sel):
                _, _, Pf = self.cset.branch(b)
                P = Pf(self.s[sel].reshape(-1, 3), eta_q[sel].ravel()).reshape(-1, Q, 3, 3)
                K[sel] = self.A[sel] @ P @ self.B[sel]
        return K

    def lower_bounds(self, feas: FeasibleSetSpec):
        free = self.mesh.dof_map >= 0
        lb = np.empty(self.mesh.n_dofs)
        lb[self.mesh.dof_map[free]] = feas.lower_bounds(self.mesh.nodes[free, 0])
        return lb

    def assemble(self, eta_nodal, feas: FeasibleSetSpec, lb=None) -> VIProblem:
        K = self.flux_matrices(self.at_qp(eta_nodal))
        M = self.pattern.matrix(element_stiffness(self.dxw, self.grad, K))
        return VIProblem(M, self.rhs.copy(), self.lower_bounds(feas) if lb is None else lb)


def assemble(mesh, geom, cset, eta_field: DiscreteField, feas, disc=None) -> VIProblem:
    """Frozen-state VI: ``M_ij = int [A Phi(eta) B grad phi_j, grad phi_i]``, body-only load."""
    disc = disc or BeamDiscretization(mesh, geom, cset)
    return disc.assemble(eta_field.nodal(), feas)


@dataclass
class FullSolution:
    U: DiscreteField
    geom: BeamGeometry
    stats: SolveStats
    sigma: np.ndarray
    disc: BeamDiscretization = field(repr=False)
    feas: FeasibleSetSpec = None

    def nodal(self):
        return self.U.nodal()

    def recompute_flux(self):
        u = self.nodal()
        K = self.disc.flux_matrices(self.disc.at_qp(u))
        return np.einsum("cqij,cqj->cqi", K, self.disc.grad_at_qp(u))


def solve_full(mesh, geom, cset, feas, options: SolverOptions | None = None, disc=None):
    """Picard + PSOR solve of the 3-D problem; raises NotConverged with a partial solution."""
    opts = options or SolverOptions()
    disc = disc or BeamDiscretization(mesh, geom, cset)
    free = mesh.dof_map >= 0
    lb = disc.lower_bounds(feas)

    def nodal_of(vals):
        out = np.zeros(mesh.n_nodes)
        out[free] = vals[mesh.dof_map[free]]
        return out

    def assembler(vals):
        return disc.assemble(nodal_of(vals), feas, lb)

    def package(vals, stats):
        U = DiscreteField(mesh, vals)
        u = U.nodal()
        K = disc.flux_matrices(disc.at_qp(u))
        sigma = np.einsum("cqij,cqj->cqi", K, disc.grad_at_qp(u))
        return FullSolution(U, geom, stats, sigma, disc, feas)

    init = np.maximum(np.zeros(mesh.n_dofs), lb)
    try:
        vals, stats = solve_quasilinear(
            assembler,
            init,
            opts.damping,
            opts.tol_outer,
            opts.max_outer,
            opts.inner(),
            state_dependent=cset.state_dependent,
        )
    except NotConverged as exc:
        if exc.solution is not None and np.shape(exc.solution) == (mesh.n_dofs,):
            exc.solution = package(exc.solution, exc.stats)
        raise
    return package(vals, stats)


def scaled_energy(sol: FullSolution) -> float:
    """``(1/|Omega|) int |grad U|^2`` with |Omega| the mesh volume."""
    g = sol.disc.grad_at_qp(sol.nodal())
    return float(np.sum(sol.disc.dxw * np.sum(g * g, axis=-1)) / sol.disc.volume)


def write_solution(sol: FullSolution, path):
    g = sol.geom
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# eps {g.eps:.17g} r_eps {g.r_eps:.17g} t_eps {g.t_eps:.17g} "
            f"section {g.section.kind} dofs {sol.U.values.size}\n"
        )
        for i, v in enumerate(sol.U.values):
            fh.write(f"{i} {v:.17g}\n")


def write_flux(sol: FullSolution, path):
    xq = sol.disc.xq.reshape(-1, 3)
    sg = sol.sigma.reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x1 x2 x3 sigma1 sigma2 sigma3 (quadrature points)\n")
        for p, s in zip(xq, sg):
            fh.write(" ".join(f"{v:.17g}" for v in (*p, *s)) + "\n")
