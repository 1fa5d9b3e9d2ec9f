import math

import numpy as np
import pytest

from notchvi.coefficients import (
    FeasibleSetSpec,
    anisotropic_family,
    identity_family,
    parse_source,
    saturating_family,
)
from notchvi.errors import UnsupportedRegime
from notchvi.geometry import Regime
from notchvi.limit_model import (
    flux_fields,
    solve_limit,
    solve_limit_caseA,
    solve_limit_caseB,
    write_limit,
)
from notchvi.mesh import build_limit_meshes
from oracles import nodes_and_midpoints_error, series_oracle

CASE_A = Regime(1.0, 0.0)
CASE_B = Regime(math.inf, 1.0)


def meshes(reg, h=1 / 16, n_cross=2, n_block=8):
    return build_limit_meshes(reg, h, n_cross, n_block)


@pytest.mark.parametrize("reg", [CASE_A, CASE_B])
def test_homogeneous_is_zero(reg):
    sol = solve_limit(reg, saturating_family(), FeasibleSetSpec(), meshes(reg))
    assert np.all(sol.u.values == 0)
    assert np.all(sol.w == 0)


def test_isotropic_correctors_vanish():
    sol = solve_limit(CASE_A, identity_family(parse_source("1 + x1")), FeasibleSetSpec(), meshes(CASE_A))
    assert np.max(np.abs(sol.w)) <= 1e-12
    assert np.max(np.abs(sol.w_hat)) <= 1e-12


def test_junction_traces_match():
    sol = solve_limit(CASE_A, saturating_family(parse_source("4*(1-Abs(x1))")), FeasibleSetSpec(),
                      meshes(CASE_A))
    um, up = sol.junction_values()
    assert sol.u_hat_axial[0] == um and sol.u_hat_axial[-1] == up
    np.testing.assert_array_equal(sol.u_hat_at([-5.0, 5.0]), [um, up])
    # u_hat is constant across the section
    mz = sol.u_hat.mesh
    ni = mz.grid["node_index"]
    vals = sol.u_hat.nodal()[ni]
    assert np.all(vals == vals[:, :1, :1])


def test_asymmetric_source_against_closed_form():
    src = "2*(2 + x1)*(1 - Abs(x1))"
    exact, info = series_oracle(src, 1.0)
    sol = solve_limit(CASE_A, identity_family(parse_source(src)), FeasibleSetSpec(), meshes(CASE_A, 1 / 32))
    assert nodes_and_midpoints_error(sol, exact) < 5e-3
    um, up = sol.junction_values()
    assert um == pytest.approx(info["u0m"], abs=5e-3)
    assert up == pytest.approx(info["u0p"], abs=5e-3)
    assert um != pytest.approx(up)
    # the block carries the common flux with a linear profile
    np.testing.assert_allclose(np.diff(sol.u_hat_axial, 2), 0, atol=1e-10)


def test_caseB_obstacle_against_closed_form():
    f = "-sin(pi*x1)"
    exact, _ = series_oracle(f)
    sol = solve_limit(CASE_B, identity_family(parse_source(f)), FeasibleSetSpec("nonnegative"),
                      meshes(CASE_B, 1 / 32))
    assert sol.u.values.min() >= 0
    x = sol.u.mesh.nodes[:, 0]
    un = sol.u.nodal()
    nl = sol.u.mesh.grid["n_left"]
    # load pushes the right half into the constraint; the left half is the free solution
    assert np.all(un[nl:] == 0)
    assert np.max(np.abs(un[:nl] - exact(x[:nl], "left"))) < 2e-3


def test_second_order_nodes_and_midpoints():
    exact, _ = series_oracle("1 + x1", 1.0)
    e = [
        nodes_and_midpoints_error(
            solve_limit(CASE_A, identity_family(parse_source("1 + x1")), FeasibleSetSpec(), meshes(CASE_A, h)),
            exact,
        )
        for h in (1 / 8, 1 / 16)
    ]
    assert 3.5 <= e[0] / e[1] <= 4.5


def test_flux_fields_idempotent():
    cset = anisotropic_family(source=parse_source("1"))
    sol = solve_limit(CASE_A, cset, FeasibleSetSpec("nonnegative"), meshes(CASE_A))
    s1, s0 = flux_fields(sol)
    assert np.max(np.abs(s1 - sol.sigma1)) <= 1e-12
    assert np.max(np.abs(s0 - sol.sigma0)) <= 1e-12
    s1b, _ = flux_fields(sol, cset)
    np.testing.assert_array_equal(s1, s1b)


def test_regime_guards():
    with pytest.raises(UnsupportedRegime):
        solve_limit_caseA(CASE_B, identity_family(), FeasibleSetSpec(), meshes(CASE_B))
    with pytest.raises(UnsupportedRegime):
        solve_limit_caseB(CASE_A, identity_family(), FeasibleSetSpec(), meshes(CASE_A))
    with pytest.raises(UnsupportedRegime):
        solve_limit(Regime(1.0, 1.0), identity_family(), FeasibleSetSpec(), meshes(CASE_A))
    sol = solve_limit(CASE_B, identity_family(), FeasibleSetSpec(), meshes(CASE_B))
    with pytest.raises(UnsupportedRegime):
        sol.u_hat_at(0.0)


def test_write_limit(tmp_path):
    sol = solve_limit(CASE_A, identity_family(parse_source("1")), FeasibleSetSpec(), meshes(CASE_A, 1 / 4))
    p = tmp_path / "lim.txt"
    write_limit(sol, p)
    text = p.read_text()
    for comp in ("u", "w", "u_hat", "w_hat"):
        assert f"# component {comp} " in text
    assert text.startswith("# regime mu 1.0 nu 0.0")
