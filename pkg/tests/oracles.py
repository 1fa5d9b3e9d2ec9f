"""Independent reference solutions used by the tests."""
import numpy as np
import sympy as sp

X = sp.Symbol("x", real=True)


def series_oracle(f_expr, mu=None):
    """Closed-form limit solution for the identity family, unconstrained.

    ``-u'' = f`` on (-1, 0) and (0, 1) with ``u(-1) = u(1) = 0``.  With a
    finite ``mu`` the two segments are joined through a resistor of length
    ``2 mu`` (linear u_hat, common flux); ``mu=None`` gives zero-flux ends at 0.
    Returns ``(u(x) callable on arrays, info dict)``.
    """
    f = sp.sympify(f_expr, locals={"x1": X})
    f = f.subs(sp.Symbol("x1"), X)
    a1, b1, a2, b2 = sp.symbols("a1 b1 a2 b2")
    F = sp.integrate(sp.integrate(f, (X, 0, X)), (X, 0, X))
    uL = -F + a1 * X + b1
    uR = -F + a2 * X + b2
    dL, dR = sp.diff(uL, X).subs(X, 0), sp.diff(uR, X).subs(X, 0)
    eqs = [uL.subs(X, -1), uR.subs(X, 1)]
    if mu is None:
        eqs += [dL, dR]
    else:
        slope = (uR.subs(X, 0) - uL.subs(X, 0)) / (2 * sp.nsimplify(mu))
        eqs += [dL - slope, dR - slope]
    sol = sp.solve(eqs, [a1, b1, a2, b2], dict=True)[0]
    uL, uR = sp.simplify(uL.subs(sol)), sp.simplify(uR.subs(sol))
    fl = sp.lambdify(X, uL, "numpy")
    fr = sp.lambdify(X, uR, "numpy")

    def u(x, side=None):
        x = np.asarray(x, dtype=float)
        left = np.broadcast_to(fl(x), x.shape)
        right = np.broadcast_to(fr(x), x.shape)
        if side == "left":
            return left
        if side == "right":
            return right
        return np.where(x < 0, left, right)

    info = {"u0m": float(uL.subs(X, 0)), "u0p": float(uR.subs(X, 0)), "uL": uL, "uR": uR}
    if mu is not None:
        info["flux"] = float(-sp.diff(uL, X).subs(X, 0))
    return u, info


def nodes_and_midpoints_error(limit_sol, u_exact):
    """Max error of the P1 limit field over nodes and element midpoints."""
    m = limit_sol.u.mesh
    un = limit_sol.u.nodal()
    x = m.nodes[:, 0]
    nl = m.grid["n_left"]
    side = np.where(np.arange(x.size) < nl, "left", "right")
    err = max(
        np.max(np.abs(un[side == s] - u_exact(x[side == s], s))) for s in ("left", "right")
    )
    for c, s in zip(m.cells, np.where(m.cell_tag < 0, "left", "right")):
        xm = x[c].mean()
        err = max(err, abs(un[c].mean() - float(u_exact(np.array([xm]), s)[0])))
    return err


def fd_series_conduction(area, source, n=4000):
    """Finite differences for ``-(A u')' = A f`` on (-1, 1), ``u(+-1) = 0``.

    ``area(x)`` and ``source(x)`` are vectorized; returns ``(x, u)``.
    """
    x = np.linspace(-1.0, 1.0, n + 1)
    h = x[1] - x[0]
    xm = 0.5 * (x[1:] + x[:-1])
    Am = area(xm)
    main = (Am[:-1] + Am[1:]) / h**2
    off = -Am[1:-1] / h**2
    # load: cell-averaged A f at nodes
    load = 0.5 * (Am[:-1] * source(xm[:-1]) + Am[1:] * source(xm[1:]))
    M = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    u = np.zeros(n + 1)
    u[1:-1] = np.linalg.solve(M, load)
    return x, u
