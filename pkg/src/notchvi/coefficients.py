"""Structured coefficients ``A Phi(eta) B``, feasible sets and assumption checks.

Every field is evaluated branch-wise: branch 1 (body) at ``(x1, x'/eps)``,
branch 0 (neck) at ``(x1/t, x'/(eps r))``.  Fields are vectorized callables
``f(s[N, 3]) -> [N, 3, 3]``; state-dependent ones take ``(s, eta[N])``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import OutsideDomain
from .geometry import BeamGeometry, CrossSection

BUILTIN_FAMILIES = ("identity", "saturating", "anisotropic")


def constant_matrix(M):
    M = np.array(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError("coefficient matrices must be 3x3")

    def f(s):
        return np.broadcast_to(M, (np.shape(s)[0], 3, 3))

    return f


def state_scaled(g, M):
    """``Phi(s, eta) = g(eta) M`` for a scalar function ``g``."""
    M = np.array(M, dtype=float)

    def f(s, eta):
        return np.asarray(g(np.asarray(eta, dtype=float)), dtype=float)[..., None, None] * M

    return f


def saturation(eta):
    e2 = eta * eta
    return 1.0 + e2 / (1.0 + e2)


@dataclass(frozen=True)
class CoefficientSet:
    A1: Callable
    A0: Callable
    B1: Callable
    B0: Callable
    Phi1: Callable
    Phi0: Callable
    source_f: Callable | None = None
    family_tag: str = "custom"
    state_dependent: bool = True
    entry_bound: float = np.inf
    params: dict = field(default_factory=dict)

    def branch(self, which: int):
        """``(A, B, Phi)`` callables of branch 1 (body) or 0 (neck)."""
        if which == 1:
            return self.A1, self.B1, self.Phi1
        return self.A0, self.B0, self.Phi0

    def eval_branch(self, which, s, eta):
        A, B, Phi = self.branch(which)
        s = np.atleast_2d(s)
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (s.shape[0],))
        return A(s), B(s), Phi(s, eta)

    def flux_matrix(self, which, s, eta):
        """``A Phi(eta) B`` at branch coordinates ``s``."""
        A, B, P = self.eval_branch(which, s, eta)
        return A @ P @ B


def identity_family(source=None) -> CoefficientSet:
    eye = constant_matrix(np.eye(3))
    phi = state_scaled(lambda e: np.ones_like(e), np.eye(3))
    return CoefficientSet(eye, eye, eye, eye, phi, phi, source, "identity", False, 1.0)


def saturating_family(source=None) -> CoefficientSet:
    eye = constant_matrix(np.eye(3))
    phi = state_scaled(saturation, np.eye(3))
    return CoefficientSet(eye, eye, eye, eye, phi, phi, source, "saturating", True, 2.0)


def anisotropic_family(a=2.0, a0=0.5, source=None) -> CoefficientSet:
    if a <= 0 or a0 <= 0:
        raise ValueError("anisotropic family needs positive a and a0")
    eye = constant_matrix(np.eye(3))
    A1 = constant_matrix(np.diag([1.0, a, a]))
    A0 = constant_matrix(np.diag([a0, 1.0, 1.0]))
    phi = state_scaled(saturation, np.eye(3))
    bound = 2.0 * max(1.0, a, a0)
    return CoefficientSet(
        A1, A0, eye, eye, phi, phi, source, "anisotropic", True, bound, {"a": a, "a0": a0}
    )


def _parse_scalar(expr: str, symbol: str):
    import sympy

    sym = sympy.Symbol(symbol, real=True)
    try:
        parsed = sympy.sympify(expr, locals={symbol: sym})
    except (sympy.SympifyError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc}") from exc
    extra = parsed.free_symbols - {sym}
    if extra:
        raise ValueError(f"expression {expr!r} may only use {symbol!r}, found {sorted(map(str, extra))}")
    fun = sympy.lambdify(sym, parsed, "numpy")

    def g(v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(np.asarray(fun(v), dtype=float), v.shape)

    return g, parsed, sym


def parse_source(expr: str):
    """Source ``f1(x1)`` from text, e.g. ``"4*(1 - Abs(x1))"``."""
    g, _, _ = _parse_scalar(expr, "x1")
    return g


def custom_family(spec: dict, source=None) -> CoefficientSet:
    """Family built from constant matrices and rational scalars in ``eta``.

    ``spec`` keys: ``A1 A0 B1 B0`` (3x3 lists, default identity) and
    ``Phi1``/``Phi0`` as ``{"scalar": "<expr in eta>", "matrix": 3x3}``.
    """
    mats = {}
    for key in ("A1", "A0", "B1", "B0"):
        mats[key] = np.array(spec.get(key, np.eye(3)), dtype=float)
    phis = {}
    dependent = False
    bound = max(np.abs(m).max() for m in mats.values())
    for key in ("Phi1", "Phi0"):
        entry = spec.get(key, {})
        g, parsed, sym = _parse_scalar(str(entry.get("scalar", "1")), "eta")
        if not parsed.is_rational_function(sym):
            raise ValueError(f"{key} scalar must be polynomial or rational in eta")
        dependent |= sym in parsed.free_symbols
        phis[key] = state_scaled(g, np.array(entry.get("matrix", np.eye(3)), dtype=float))
    return CoefficientSet(
        constant_matrix(mats["A1"]),
        constant_matrix(mats["A0"]),
        constant_matrix(mats["B1"]),
        constant_matrix(mats["B0"]),
        phis["Phi1"],
        phis["Phi0"],
        source,
        "custom",
        dependent,
        bound,
        {"spec": spec},
    )


def make_family(name: str, source=None, **params) -> CoefficientSet:
    if name == "identity":
        return identity_family(source)
    if name == "saturating":
        return saturating_family(source)
    if name == "anisotropic":
        return anisotropic_family(params.get("a", 2.0), params.get("a0", 0.5), source)
    if name == "custom":
        return custom_family(params.get("spec", params), source)
    raise ValueError(f"unknown coefficient family {name!r}")


def branch_coordinates(x, geom: BeamGeometry):
    """``(branch[N], s[N, 3])`` routing beam points to body (1) or neck (0) arguments."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    neck = np.abs(x[:, 0]) <= geom.t_eps
    s = x.copy()
    s[neck, 0] = x[neck, 0] / geom.t_eps if geom.t_eps > 0 else 0.0
    s[neck, 1:] = x[neck, 1:] / geom.neck_radius_scale
    s[~neck, 1:] = x[~neck, 1:] / geom.eps
    return np.where(neck, 0, 1), s


def eval_coeff(cset: CoefficientSet, x, geom: BeamGeometry, eta):
    """``(A, B, Phi)`` at beam points ``x`` for state ``eta``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if not np.all(geom.contains(pts)):
        raise OutsideDomain("eval_coeff: point outside the notched beam")
    branch, s = branch_coordinates(pts, geom)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (pts.shape[0],))
    out = [np.empty((pts.shape[0], 3, 3)) for _ in range(3)]
    for b in (0, 1):
        sel = branch == b
        if np.any(sel):
            for o, v in zip(out, cset.eval_branch(b, s[sel], eta[sel])):
                o[sel] = v
    if single:
        return tuple(o[0] for o in out)
    return tuple(out)


# ---------------------------------------------------------------- feasible sets


@dataclass(frozen=True)
class FeasibleSetSpec:
    """``unconstrained``, ``nonnegative`` or ``lower_obstacle`` (``obstacle(x1) <= 0``)."""

    kind: str = "unconstrained"
    obstacle: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("unconstrained", "nonnegative", "lower_obstacle"):
            raise ValueError(f"unknown feasible set kind {self.kind!r}")
        if self.kind == "lower_obstacle" and self.obstacle is None:
            raise ValueError("lower_obstacle needs an obstacle function")

    def lower_bounds(self, x1):
        """Per-node lower bounds at axial positions ``x1``."""
        x1 = np.asarray(x1, dtype=float)
        if self.kind == "unconstrained":
            return np.full(x1.shape, -np.inf)
        if self.kind == "nonnegative":
            return np.zeros(x1.shape)
        psi = np.broadcast_to(np.asarray(self.obstacle(x1), dtype=float), x1.shape).copy()
        if np.any(psi > 1e-14):
            raise ValueError("obstacle must be <= 0 so that 0 stays feasible")
        return psi


# ---------------------------------------------------------------- assumption checks


@dataclass(frozen=True)
class AssumptionConstants:
    C1: float = 1.0
    C2: float = 0.0
    q1: float = 1.5
    k1_bound: float = 0.0
    C_growth: float = 2.0
    alpha_bound: float = 0.0
    eta_range: tuple = (-10.0, 10.0)

    def __post_init__(self):
        lo, hi = self.eta_range
        if not lo <= hi:
            raise ValueError("eta_range must be a nonempty interval")
        if self.C2 > 0 and not 1 < self.q1 < 2:
            raise ValueError("q1 must lie in (1, 2) when C2 > 0")


@dataclass
class ValidationReport:
    margins: dict
    worst: dict
    passed: dict
    samples: int

    @property
    def ok(self):
        return all(self.passed.values())

    def lines(self):
        out = []
        for name in ("coercivity", "growth", "monotonicity"):
            w = self.worst[name]
            out.append(
                f"{name:13s} worst margin {self.margins[name]: .6e}  "
                f"{'PASS' if self.passed[name] else 'FAIL'}  "
                f"(branch {w['branch']}, eta={w['eta']:.6g}, |xi|={w['xi_norm']:.6g})"
            )
        return out


def validate_assumptions(
    cset: CoefficientSet,
    consts: AssumptionConstants,
    samples: int = 10_000,
    seed: int = 0,
    section: CrossSection | None = None,
    threshold: float = -1e-10,
) -> ValidationReport:
    """Worst sampled margins of coercivity, growth and monotonicity.

    Besides ``samples`` random tuples, the probes ``xi = 0`` at
    ``eta in {lo, 0, hi}`` are always included on both branches.
    """
    section = section or CrossSection()
    rng = np.random.default_rng(seed)
    lo, hi = consts.eta_range
    n = int(samples)

    def ball(m):
        v = rng.normal(size=(m, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * 10.0 * rng.uniform(0, 1, (m, 1)) ** (1 / 3)

    s = np.column_stack([rng.uniform(-1, 1, n), section.sample(n, rng)])
    branch = rng.integers(0, 2, n)
    eta = rng.uniform(lo, hi, n)
    xi, tau = ball(n), ball(n)

    probe_eta = np.array([lo, 0.0, hi] * 2)
    s = np.vstack([s, np.zeros((6, 3))])
    branch = np.concatenate([branch, [1, 1, 1, 0, 0, 0]])
    eta = np.concatenate([eta, probe_eta])
    xi = np.vstack([xi, np.zeros((6, 3))])
    tau = np.vstack([tau, ball(6)])

    m = {k: np.empty(eta.size) for k in ("coercivity", "growth", "monotonicity")}
    for b in (0, 1):
        sel = branch == b
        A, B, P = cset.eval_branch(b, s[sel], eta[sel])
        K = A @ P @ B
        x, d = xi[sel], xi[sel] - tau[sel]
        e = np.abs(eta[sel])
        m["coercivity"][sel] = (
            np.einsum("nij,nj,ni->n", K, x, x)
            - consts.C1 * np.sum(x * x, axis=1)
            - consts.C2 * e**consts.q1
            + consts.k1_bound
        )
        m["growth"][sel] = (
            consts.C_growth * np.linalg.norm(x, axis=1)
            + consts.C_growth * e
            + consts.alpha_bound
            - np.linalg.norm(np.einsum("nij,nj->ni", A @ P, x), axis=1)
        )
        m["monotonicity"][sel] = np.einsum("nij,nj,ni->n", K, d, d)

    margins, worst, passed = {}, {}, {}
    for k, v in m.items():
        i = int(np.argmin(v))
        margins[k] = float(v[i])
        worst[k] = {
            "branch": int(branch[i]),
            "eta": float(eta[i]),
            "xi_norm": float(np.linalg.norm(xi[i])),
        }
        passed[k] = bool(v[i] >= threshold)
    return ValidationReport(margins, worst, passed, int(eta.size))
