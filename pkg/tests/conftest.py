import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from notchvi import vi_core  # noqa: E402

# criterion number -> (passed: bool | None, text)
ACCEPTANCE = {}
CHECKED = {"solves": 0, "worst_margin": 0.0, "worst_product": 0.0}


def record(n, passed, text):
    ACCEPTANCE[n] = (passed, text)


def independent_complementarity(p, U, tol):
    """min(U - lb, r) and sum (U - lb) r in Jacobi-scaled units, computed from scratch."""
    M = p.matrix
    r = (M @ U - p.rhs) / M.diagonal()
    lb = p.lower_bound
    fin = np.isfinite(lb)
    gap = U[fin] - lb[fin]
    margin = min(
        np.min(np.minimum(gap, r[fin])) if gap.size else np.inf,
        np.min(-np.abs(r[~fin])) if np.any(~fin) else np.inf,
    )
    prod = float(np.sum(gap * r[fin]))
    return float(margin) if np.isfinite(margin) else 0.0, prod


@pytest.fixture(autouse=True)
def _post_solve_complementarity(monkeypatch):
    """Every accepted LCP solve in the session is checked for complementarity."""
    original = vi_core.solve_linear_vi

    def checked(p, *args, **kwargs):
        U, stats = original(p, *args, **kwargs)
        tol = kwargs.get("tol", args[1] if len(args) > 1 else 1e-10)
        if stats.converged:
            margin, prod = independent_complementarity(p, U, tol)
            CHECKED["solves"] += 1
            CHECKED["worst_margin"] = min(CHECKED["worst_margin"], margin)
            CHECKED["worst_product"] = max(CHECKED["worst_product"], prod / max(p.dim, 1))
            assert margin >= -tol, f"complementarity margin {margin:.3e} < -tol"
            assert prod <= tol * p.dim, f"complementarity product {prod:.3e} > tol*dim"
        return U, stats

    monkeypatch.setattr(vi_core, "solve_linear_vi", checked)
    yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, text = ACCEPTANCE[n]
        tag = {True: "PASS", False: "FAIL", None: "N/A "}[passed]
        tr.write_line(f"criterion {n}: {tag}  {text}")
