"""Linear complementarity solvers and the Picard loop for state-dependent problems.

A :class:`VIProblem` asks for ``U >= lb`` with residual ``r = M U - b`` satisfying
``r_i >= 0`` where ``U_i = lb_i`` and ``r_i = 0`` elsewhere.  Residuals are
measured in Jacobi-scaled units ``r_i / M_ii``; row scaling leaves the
solution set unchanged and makes tolerances independent of mesh size.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    NonPositiveDiagonal,
    NotConverged,
    NotPositiveDefinite,
    NoValidActiveSet,
    TooLarge,
)

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_DIM = 16


@dataclass
class VIProblem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    lower_bound: np.ndarray

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix, dtype=float)
        self.matrix.sort_indices()
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower_bound = np.asarray(self.lower_bound, dtype=float)
        n = self.rhs.size
        if self.matrix.shape != (n, n) or self.lower_bound.shape != (n,):
            raise ValueError("VIProblem: matrix, rhs and lower_bound sizes disagree")
        d = self.matrix.diagonal()
        if np.any(d <= 0):
            raise NonPositiveDiagonal(
                f"diagonal entry {d.min():.3e} <= 0 at dof {int(np.argmin(d))}"
            )

    @property
    def dim(self):
        return self.rhs.size

    @property
    def diagonal(self):
        return self.matrix.diagonal()

    def is_symmetric(self, rtol=1e-12):
        diff = self.matrix - self.matrix.T
        scale = max(abs(self.matrix).max(), 1e-300)
        return diff.nnz == 0 or abs(diff).max() <= rtol * scale

    def scaled_residual(self, U):
        return (self.matrix @ U - self.rhs) / self.diagonal


@dataclass
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool
    method: str = ""
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class Complementarity:
    min_margin: float
    product_sum: float
    natural_residual: float

    def ok(self, tol, dim):
        return self.min_margin >= -tol and self.product_sum <= tol * dim


def complementarity(p: VIProblem, U) -> Complementarity:
    """Per-dof ``min(U - lb, r)``, the sum of ``(U - lb) r`` and the natural residual.

    Unconstrained dofs contribute ``-|r|`` to the margin.
    """
    U = np.asarray(U, dtype=float)
    r = p.scaled_residual(U)
    lb = p.lower_bound
    bounded = np.isfinite(lb)
    gap = np.where(bounded, U - lb, np.inf)
    margin = np.where(bounded, np.minimum(gap, r), -np.abs(r))
    prod = float(np.sum(gap[bounded] * r[bounded])) if np.any(bounded) else 0.0
    natural = np.abs(U - np.maximum(lb, U - r))
    return Complementarity(
        float(margin.min()) if margin.size else 0.0,
        prod,
        float(natural.max()) if natural.size else 0.0,
    )


def _accept(p, U, tol):
    c = complementarity(p, U)
    return c.natural_residual <= tol and c.ok(tol, p.dim), c


@numba.njit(cache=True, nogil=True)
def _psor_sweeps(indptr, indices, data, diag, rhs, lb, x, omega, n_sweeps):
    n = rhs.size
    dmax = 0.0
    for _ in range(n_sweeps):
        dmax = 0.0
        for i in range(n):
            s = rhs[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            xi = (1.0 - omega) * x[i] + omega * s / diag[i]
            if xi < lb[i]:
                xi = lb[i]
            d = abs(xi - x[i])
            if d > dmax:
                dmax = d
            x[i] = xi
    return dmax


def _power_max_eig(S, iters=20, seed=0):
    v = np.random.default_rng(seed).normal(size=S.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = S @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = float(v @ w / (v @ v))
        v = w / nrm
    return lam


def check_positive_definite(p: VIProblem, iters=30):
    """Cheap check that the symmetric part has a positive spectrum (shifted power steps)."""
    S = 0.5 * (p.matrix + p.matrix.T)
    lmax = max(_power_max_eig(S, iters), 0.0) * 1.01 + 1e-300
    shifted = sp.identity(p.dim) * lmax - S
    lmin = lmax - _power_max_eig(shifted, iters)
    if lmin <= 0:
        raise NotPositiveDefinite(f"symmetric part has eigenvalue estimate {lmin:.3e} <= 0")
    return lmin


def solve_linear_vi(
    p: VIProblem,
    omega_relax: float = 1.5,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    x0=None,
    warm_start: str = "direct",
    verify: bool = False,
    check_every: int = 10,
):
    """Solve the linear complementarity problem ``p``.

    Symmetric matrices use projected SOR; nonsymmetric ones fall back to the
    projected forward-backward iteration with step ``1/L``.  If every dof is
    unconstrained, a sparse direct solve is returned.  ``warm_start='direct'``
    starts from the projection of the unconstrained solution when ``x0`` is
    not given.  Returns ``(U, SolveStats)``; raises :class:`NotConverged`
    carrying the last iterate.
    """
    if not 0 < omega_relax < 2:
        raise ValueError("omega_relax must lie in (0, 2)")
    if verify:
        check_positive_definite(p)
    lb = p.lower_bound
    M = p.matrix

    if not np.any(np.isfinite(lb)):
        U = spla.spsolve(M.tocsc(), p.rhs) if p.dim else np.zeros(0)
        U = np.atleast_1d(np.asarray(U, dtype=float))
        ok, c = _accept(p, U, tol)
        return U, SolveStats(1, c.natural_residual, ok, "direct")

    if x0 is not None:
        x = np.maximum(np.asarray(x0, dtype=float).copy(), lb)
    elif warm_start == "direct":
        x = np.maximum(np.atleast_1d(spla.spsolve(M.tocsc(), p.rhs)), lb)
    else:
        x = np.maximum(np.zeros(p.dim), lb)

    ok, c = _accept(p, x, tol)
    if ok:
        return x, SolveStats(0, c.natural_residual, True, "psor")

    if p.is_symmetric():
        diag = p.diagonal
        it = 0
        while it < max_iter:
            n = min(check_every, max_iter - it)
            _psor_sweeps(M.indptr, M.indices, M.data, diag, p.rhs, lb, x, omega_relax, n)
            it += n
            ok, c = _accept(p, x, tol)
            if ok:
                return x, SolveStats(it, c.natural_residual, True, "psor")
        method = "psor"
    else:
        S = 0.5 * (M + M.T)
        L = 1.01 * _power_max_eig(S, 20)
        step = 1.0 / L
        it = 0
        while it < max_iter:
            x = np.maximum(lb, x - step * (M @ x - p.rhs))
            it += 1
            if it % check_every == 0:
                ok, c = _accept(p, x, tol)
                if ok:
                    return x, SolveStats(it, c.natural_residual, True, "projected-fb")
        method = "projected-fb"
    _, c = _accept(p, x, tol)
    stats = SolveStats(it, c.natural_residual, False, method)
    raise NotConverged(
        f"{method} did not reach tol={tol:g} in {max_iter} iterations "
        f"(natural residual {c.natural_residual:.3e})",
        x,
        stats,
    )


def brute_force_vi(p: VIProblem, sign_tol: float = 1e-10):
    """Enumerate active sets (lexicographic order) and return the first valid one.

    A set is valid when the pinned system gives ``U >= lb`` on free dofs and
    ``r >= -sign_tol`` on active dofs.  Dofs with ``lb = -inf`` are never active.
    """
    n = p.dim
    if n > BRUTE_FORCE_MAX_DIM:
        raise TooLarge(f"brute_force_vi supports dim <= {BRUTE_FORCE_MAX_DIM}, got {n}")
    M = p.matrix.toarray()
    b, lb = p.rhs, p.lower_bound
    can = np.isfinite(lb)
    masks = np.array(list(itertools.product([False, True], repeat=n)), dtype=bool).reshape(-1, n)
    masks = masks[~np.any(masks & ~can, axis=1)]
    # pinned systems: active rows replaced by identity rows
    K = np.broadcast_to(M, (masks.shape[0], n, n)).copy()
    rhs = np.broadcast_to(b, masks.shape).copy()
    rows = np.nonzero(masks)
    K[rows[0], rows[1], :] = 0.0
    K[rows[0], rows[1], rows[1]] = 1.0
    rhs[masks] = np.broadcast_to(lb, masks.shape)[masks]
    sol = np.linalg.solve(K, rhs[..., None])[..., 0]
    r = sol @ M.T - b
    lbf = np.where(can, lb, -np.inf)
    free_ok = np.all(masks | (sol >= lbf - sign_tol), axis=1)
    act_ok = np.all(~masks | (r >= -sign_tol), axis=1)
    valid = np.flatnonzero(free_ok & act_ok)
    if valid.size == 0:
        raise NoValidActiveSet("no active set satisfies the sign conditions (matrix not SPD?)")
    U = sol[valid[0]]
    U[masks[valid[0]]] = lb[masks[valid[0]]]
    return U


def solve_quasilinear(
    assembler,
    init,
    damping: float = 1.0,
    tol_outer: float = 1e-9,
    max_outer: int = 100,
    inner: dict | None = None,
    state_dependent: bool = True,
):
    """Picard iteration ``U <- (1-d) U + d * solve(assembler(U))``.

    Stops when the sup-norm increment is at most ``tol_outer``.  With
    ``state_dependent=False`` the assembler is known to ignore its argument
    and a single solve is returned.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    inner = dict(inner or {})
    U = np.asarray(init, dtype=float).copy()
    history = []
    last = None
    for k in range(1, max_outer + 1):
        p = assembler(U)
        try:
            V, last = solve_linear_vi(p, **inner)
        except NotConverged as exc:
            exc.stats.history = history
            raise
        U_new = (1.0 - damping) * U + damping * V if damping < 1 else V
        delta = float(np.max(np.abs(U_new - U))) if U.size else 0.0
        history.append(delta)
        U = U_new
        log.debug("picard %d: increment %.3e", k, delta)
        if delta <= tol_outer or not state_dependent:
            return U, SolveStats(k, delta, True, f"picard/{last.method}", history)
    stats = SolveStats(max_outer, history[-1], False, f"picard/{last.method}", history)
    raise NotConverged(
        f"Picard iteration did not reach tol_outer={tol_outer:g} in {max_outer} steps "
        f"(last increment {history[-1]:.3e})",
        U,
        stats,
    )
