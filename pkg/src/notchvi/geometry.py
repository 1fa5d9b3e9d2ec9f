"""Notched-beam geometry, eps-families, regime classification and the two rescalings.

The beam is ``Omega_eps = (-1, 1) x (eps S)`` with the middle piece
``[-t, t] x (eps r S)`` replaced by a thin neck.  Points are arrays whose last
axis has length 3, ``(x1, x2, x3)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonMonotone, OutsideDomain, UnsupportedRegime

_CLOSURE_TOL = 1e-12


@dataclass(frozen=True)
class CrossSection:
    """Cross-section S of the beam, centred at the origin.

    ``kind`` is ``"square"`` (the box ``(-h, h)^2``) or ``"disk"`` (radius ``radius``).
    """

    kind: str = "square"
    half_width: float = 0.5
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in ("square", "disk"):
            raise ValueError(f"unknown cross-section kind {self.kind!r}")
        size = self.half_width if self.kind == "square" else self.radius
        if not size > 0:
            raise ValueError("cross-section size must be positive")

    @property
    def area(self) -> float:
        if self.kind == "square":
            return (2.0 * self.half_width) ** 2
        return math.pi * self.radius**2

    @property
    def extent(self) -> float:
        """Half-width of the bounding box."""
        return self.half_width if self.kind == "square" else self.radius

    def contains(self, yc, atol=_CLOSURE_TOL):
        """Closure membership test for points ``yc[..., 2]``."""
        yc = np.asarray(yc, dtype=float)
        if self.kind == "square":
            return np.all(np.abs(yc) <= self.half_width + atol, axis=-1)
        return np.hypot(yc[..., 0], yc[..., 1]) <= self.radius + atol

    def sample(self, n, rng):
        """Uniform random points of S."""
        if self.kind == "square":
            return rng.uniform(-self.half_width, self.half_width, size=(n, 2))
        rho = self.radius * np.sqrt(rng.uniform(0.0, 1.0, n))
        th = rng.uniform(0.0, 2 * np.pi, n)
        return np.column_stack([rho * np.cos(th), rho * np.sin(th)])


class SubdomainTag(enum.IntEnum):
    OMEGA_MINUS = -1
    OMEGA_ZERO = 0
    OMEGA_PLUS = 1


class CaseTag(str, enum.Enum):
    CASE_A = "CaseA_mu_finite_nu_zero"
    CASE_B = "CaseB_mu_infinite_nu_finite"
    OTHER = "Other"


@dataclass(frozen=True)
class BeamGeometry:
    eps: float
    r_eps: float
    t_eps: float
    section: CrossSection = field(default_factory=CrossSection)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.r_eps <= 1:
            raise ValueError("r_eps must lie in (0, 1]")
        if not 0 <= self.t_eps < 1:
            raise ValueError("t_eps must lie in [0, 1)")

    @property
    def neck_radius_scale(self) -> float:
        """``eps * r_eps``: factor mapping S onto the neck cross-section."""
        return self.eps * self.r_eps

    @property
    def thinness(self) -> float:
        """``eps r / t``; tends to zero for a thin neck."""
        return math.inf if self.t_eps == 0 else self.eps * self.r_eps / self.t_eps

    def subdomain(self, x):
        """SubdomainTag values (as ints) for points ``x``; no membership check."""
        x1 = np.asarray(x, dtype=float)[..., 0]
        tag = np.where(x1 < 0, int(SubdomainTag.OMEGA_MINUS), int(SubdomainTag.OMEGA_PLUS))
        return np.where(np.abs(x1) <= self.t_eps, int(SubdomainTag.OMEGA_ZERO), tag)

    def contains(self, x, atol=_CLOSURE_TOL):
        """Membership in the closure of Omega_eps."""
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        xc = x[..., 1:]
        in_len = np.abs(x1) <= 1 + atol
        neck = (np.abs(x1) <= self.t_eps + atol) & self.section.contains(
            xc / self.neck_radius_scale, atol
        )
        body = (np.abs(x1) >= self.t_eps - atol) & self.section.contains(xc / self.eps, atol)
        return in_len & (neck | body)

    def _check_inside(self, x):
        inside = self.contains(x)
        if not np.all(inside):
            bad = np.asarray(x)[~inside] if np.ndim(inside) else np.asarray(x)
            raise OutsideDomain(f"point(s) outside the notched beam, e.g. {np.atleast_2d(bad)[0]}")


def measure_omega(geom: BeamGeometry) -> float:
    """Exact volume of Omega_eps."""
    a = geom.section.area
    e2 = geom.eps**2
    return 2 * (1 - geom.t_eps) * e2 * a + 2 * geom.t_eps * e2 * geom.r_eps**2 * a


@dataclass(frozen=True)
class Regime:
    mu: float
    nu: float
    case_tag: CaseTag = None

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise ValueError("mu and nu must be nonnegative")
        object.__setattr__(self, "case_tag", _case_for(self.mu, self.nu))

    @property
    def is_case_a(self):
        return self.case_tag is CaseTag.CASE_A

    @property
    def is_case_b(self):
        return self.case_tag is CaseTag.CASE_B


def _case_for(mu, nu):
    if 0 < mu < math.inf and nu == 0:
        return CaseTag.CASE_A
    if mu == math.inf and 0 < nu < math.inf:
        return CaseTag.CASE_B
    return CaseTag.OTHER


@dataclass(frozen=True)
class EpsFamily:
    """Parametric rules ``r(eps)`` and ``t(eps, r)`` plus the sweep list.

    ``r_expr``/``t_expr`` keep the source expressions when the family was
    parsed from text, so reports can echo them.
    """

    r_rule: Callable[[float], float]
    t_rule: Callable[[float, float], float]
    eps_list: tuple
    r_expr: str | None = None
    t_expr: str | None = None

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if any(e <= 0 for e in eps):
            raise ValueError("eps_list entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")

    @classmethod
    def from_expressions(cls, r_expr: str, t_expr: str, eps_list: Sequence[float]):
        """Build a family from text such as ``"eps**(2/3)"`` and ``"r**2"``.

        ``r_expr`` may use ``eps``; ``t_expr`` may use ``eps`` and ``r``.
        """
        import sympy

        e, r = sympy.symbols("eps r", positive=True)
        try:
            r_sym = sympy.sympify(r_expr, locals={"eps": e})
            t_sym = sympy.sympify(t_expr, locals={"eps": e, "r": r})
        except (sympy.SympifyError, TypeError) as exc:
            raise ValueError(f"cannot parse eps-family rule: {exc}") from exc
        if r_sym.free_symbols - {e}:
            raise ValueError(f"r rule {r_expr!r} may only use 'eps'")
        if t_sym.free_symbols - {e, r}:
            raise ValueError(f"t rule {t_expr!r} may only use 'eps' and 'r'")
        r_fun = sympy.lambdify(e, r_sym, "math")
        t_fun = sympy.lambdify((e, r), t_sym, "math")
        return cls(
            r_rule=lambda eps: float(r_fun(eps)),
            t_rule=lambda eps, r_val: float(t_fun(eps, r_val)),
            eps_list=tuple(eps_list),
            r_expr=str(r_expr),
            t_expr=str(t_expr),
        )

    def params(self, eps: float):
        r = self.r_rule(eps)
        return r, self.t_rule(eps, r)

    def geometry(self, eps: float, section: CrossSection | None = None) -> BeamGeometry:
        r, t = self.params(eps)
        return BeamGeometry(eps, r, t, section or CrossSection())


def _limit_of(values, eps, tol, exp_tol):
    v = np.asarray(values, dtype=float)
    # local power-law exponent from the two smallest eps
    p = math.log(v[-1] / v[-2]) / math.log(eps[-1] / eps[-2])
    if p > exp_tol:
        est = 0.0
    elif p < -exp_tol:
        est = math.inf
    else:
        est = float(v[-1])
    if est < tol:
        est = 0.0
    elif est > 1.0 / tol:
        est = math.inf
    return est


def _check_settles(name, values, tol):
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    scale = np.maximum(1.0, np.abs(v[:-1]))
    big = np.abs(d) > tol * scale
    signs = np.sign(d[big])
    if signs.size and np.any(signs != signs[0]):
        raise NonMonotone(f"{name} oscillates along eps_list: {v.tolist()}")


def classify_regime(family: EpsFamily, tol: float = 1e-3, exp_tol: float = 0.1) -> Regime:
    """Estimate ``mu = lim t/r^2`` and ``nu = lim eps/r`` along ``family.eps_list``.

    The limit is read off the smallest eps.  A clear power-law trend between the
    two smallest entries (local exponent beyond ``exp_tol``) promotes the limit
    to 0 or +inf; values below ``tol`` / above ``1/tol`` are promoted as well.
    """
    eps = np.asarray(family.eps_list)
    if eps.size < 3:
        raise ValueError("classify_regime needs at least 3 eps values")
    rt = np.array([family.params(e) for e in eps])
    r, t = rt[:, 0], rt[:, 1]
    if np.any(r <= 0) or np.any(t <= 0):
        raise ValueError("r(eps) and t(eps) must be positive")
    mu_seq = t / r**2
    nu_seq = eps / r
    _check_settles("t/r^2", mu_seq, tol)
    _check_settles("eps/r", nu_seq, tol)
    return Regime(_limit_of(mu_seq, eps, tol, exp_tol), _limit_of(nu_seq, eps, tol, exp_tol))


def map_y(x, geom: BeamGeometry):
    """``(x1, x'/eps)``: stretches the beam to a fixed cross-section."""
    x = np.asarray(x, dtype=float)
    geom._check_inside(x)
    y = x.copy()
    y[..., 1:] /= geom.eps
    return y


def map_y_inv(y, geom: BeamGeometry):
    y = np.asarray(y, dtype=float)
    x = y.copy()
    x[..., 1:] *= geom.eps
    return x


def _z_slopes(geom: BeamGeometry, mu: float):
    """(outer axial slope, offset at +-t, inner axial slope) of the z-map."""
    e, r, t = geom.eps, geom.r_eps, geom.t_eps
    if mu == 0:
        return 1.0 / (e * r), t / r**2, 1.0 / r**2
    return mu * r / (e * t), mu, mu / t


def _require_finite_mu(regime: Regime):
    if not math.isfinite(regime.mu):
        raise UnsupportedRegime("the z-frame is undefined for mu = +inf (Case B)")


def map_z(x, geom: BeamGeometry, regime: Regime):
    """Near-neck rescaling: the neck becomes ``[-c, c] x S`` with ``c = mu`` (mu > 0).

    Piecewise affine in x1 with kinks at ``x1 = +-t``; ``z' = x'/(eps r)``.
    """
    _require_finite_mu(regime)
    x = np.asarray(x, dtype=float)
    geom._check_inside(x)
    outer, offset, inner = _z_slopes(geom, regime.mu)
    t = geom.t_eps
    x1 = x[..., 0]
    z1 = np.where(
        x1 < -t,
        outer * (x1 + t) - offset,
        np.where(x1 > t, outer * (x1 - t) + offset, inner * x1),
    )
    z = np.empty_like(x)
    z[..., 0] = z1
    z[..., 1:] = x[..., 1:] / geom.neck_radius_scale
    return z


def map_z_inv(z, geom: BeamGeometry, regime: Regime):
    _require_finite_mu(regime)
    z = np.asarray(z, dtype=float)
    outer, offset, inner = _z_slopes(geom, regime.mu)
    t = geom.t_eps
    z1 = z[..., 0]
    x1 = np.where(
        z1 < -offset,
        (z1 + offset) / outer - t,
        np.where(z1 > offset, (z1 - offset) / outer + t, z1 / inner),
    )
    x = np.empty_like(z)
    x[..., 0] = x1
    x[..., 1:] = z[..., 1:] * geom.neck_radius_scale
    return x


def z_jacobian(geom: BeamGeometry, regime: Regime, x1):
    """``det dz/dx`` at axial positions ``x1`` (piecewise constant)."""
    _require_finite_mu(regime)
    outer, _, inner = _z_slopes(geom, regime.mu)
    x1 = np.asarray(x1, dtype=float)
    axial = np.where(np.abs(x1) <= geom.t_eps, inner, outer)
    return axial / geom.neck_radius_scale**2
