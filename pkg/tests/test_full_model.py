import numpy as np
import pytest

from notchvi import fem
from notchvi.coefficients import (
    FeasibleSetSpec,
    anisotropic_family,
    eval_coeff,
    identity_family,
    parse_source,
    saturating_family,
)
from notchvi.errors import NotConverged
from notchvi.full_model import (
    BeamDiscretization,
    SolverOptions,
    assemble,
    scaled_energy,
    solve_full,
    write_flux,
    write_solution,
)
from notchvi.geometry import BeamGeometry, map_y
from notchvi.mesh import DiscreteField, build_beam_mesh, push_field
from oracles import fd_series_conduction

GEOM = BeamGeometry(0.25, 0.5, 0.125)


@pytest.fixture(scope="module")
def mesh():
    return build_beam_mesh(GEOM, 8, 4)


def test_single_free_dof_homogeneous():
    g = BeamGeometry(0.5, 1.0, 0.0)
    m = build_beam_mesh(g, 2, 1, cross_grid="fitted", n_notch_cross=1)
    free = m.n_dofs
    p = assemble(m, g, identity_family(), DiscreteField(m, np.zeros(free)), FeasibleSetSpec())
    assert p.matrix.diagonal().min() > 0
    assert np.all(p.rhs == 0)
    U, _ = __import__("notchvi").vi_core.solve_linear_vi(p)
    assert np.all(U == 0)


def test_rhs_is_volume_weight(mesh):
    # f = 1: rhs_i = int_{body} phi_i; the weights over all nodes sum to the body volume
    p = assemble(mesh, GEOM, identity_family(parse_source("1")), DiscreteField(mesh, np.zeros(mesh.n_dofs)),
                 FeasibleSetSpec())
    d = BeamDiscretization(mesh, GEOM, identity_family(parse_source("1")))
    body_free = d.dxw[~d.neck].sum()
    # remove the part of the body volume carried by Dirichlet nodes
    N = d.N
    dir_w = sum(
        float(np.sum(d.dxw[c] @ N[:, a]))
        for c in np.flatnonzero(~d.neck)
        for a in range(8)
        if mesh.dof_map[mesh.cells[c, a]] < 0
    )
    assert p.rhs.sum() == pytest.approx(body_free - dir_w, rel=1e-12)


def test_two_cell_hand_quadrature():
    g = BeamGeometry(1.0, 1.0, 0.0)
    m = build_beam_mesh(g, 2, 1, cross_grid="fitted", n_notch_cross=1)
    p = assemble(m, g, identity_family(parse_source("1")), DiscreteField(m, np.zeros(m.n_dofs)), FeasibleSetSpec())
    # the 4 free nodes sit on x1 = 0, each owns 1/4 of the section in both cells: 2 * (1/2) * (1/4)
    np.testing.assert_allclose(p.rhs, np.full(4, 0.25))


def test_identity_matrix_symmetric(mesh):
    p = assemble(mesh, GEOM, identity_family(), DiscreteField(mesh, np.zeros(mesh.n_dofs)), FeasibleSetSpec())
    assert abs(p.matrix - p.matrix.T).max() <= 1e-12


def test_assembly_is_bit_reproducible(mesh):
    cset = saturating_family(parse_source("1"))
    eta = DiscreteField(mesh, np.linspace(0, 1, mesh.n_dofs))
    a = assemble(mesh, GEOM, cset, eta, FeasibleSetSpec()).matrix
    b = assemble(mesh, GEOM, cset, eta, FeasibleSetSpec()).matrix
    assert (a != b).nnz == 0


def test_homogeneous_zero(mesh):
    for feas in (FeasibleSetSpec(), FeasibleSetSpec("nonnegative")):
        sol = solve_full(mesh, GEOM, saturating_family(), feas)
        assert np.all(sol.U.values == 0)
        assert sol.stats.iterations == 1
        assert scaled_energy(sol) == 0


def test_load_into_constraint(mesh):
    sol = solve_full(mesh, GEOM, identity_family(parse_source("-1")), FeasibleSetSpec("nonnegative"))
    assert np.all(sol.U.values == 0)


def test_obstacle_respected(mesh):
    feas = FeasibleSetSpec("lower_obstacle", lambda x: -0.05 * np.ones_like(x))
    sol = solve_full(mesh, GEOM, identity_family(parse_source("-4")), feas)
    assert sol.U.values.min() >= -0.05 - 1e-14
    assert np.isclose(sol.U.values.min(), -0.05)


def section_mean(sol):
    u = sol.nodal()
    x1 = sol.U.mesh.nodes[:, 0]
    xs = np.unique(np.round(x1, 13))
    return xs, np.array([u[np.isclose(x1, v, atol=1e-12)].mean() for v in xs])


@pytest.mark.parametrize("src", ["1", "1 + x1"])
def test_series_conduction_oracle(src):
    g = BeamGeometry(0.25, 0.5, 0.125)
    m = build_beam_mesh(g, 32, 4, 4)
    sol = solve_full(m, g, identity_family(parse_source(src)), FeasibleSetSpec())
    xs, um = section_mean(sol)
    assert um[1:-1].min() > 0
    f = parse_source(src)
    area = lambda x: np.where(np.abs(x) <= g.t_eps, (g.eps * g.r_eps) ** 2, g.eps**2)
    src_body = lambda x: np.where(np.abs(x) <= g.t_eps, 0.0, f(x))
    xo, uo = fd_series_conduction(area, src_body)
    ref = np.interp(xs, xo, uo)
    assert np.max(np.abs(um - ref)) <= 0.10 * np.max(np.abs(ref))
    if src == "1":
        # maximum sits at the notch side
        assert abs(abs(xs[np.argmax(um)]) - g.t_eps) < 0.2


def test_flux_consistent_with_eval_coeff(mesh):
    cset = anisotropic_family(source=parse_source("1 + x1"))
    sol = solve_full(mesh, GEOM, cset, FeasibleSetSpec("nonnegative"))
    d = sol.disc
    c = [0, d.neck.nonzero()[0][0]]
    u = sol.nodal()
    for ci in c:
        for q in range(d.dxw.shape[1]):
            x = d.xq[ci, q]
            eta = u[mesh.cells[ci]] @ d.N[q]
            A, B, P = eval_coeff(cset, x, GEOM, eta)
            grad = d.grad[ci, q].T @ u[mesh.cells[ci]]
            np.testing.assert_allclose(A @ P @ B @ grad, sol.sigma[ci, q], atol=1e-12)
    assert np.max(np.abs(sol.recompute_flux() - sol.sigma)) <= 1e-12


def test_vi_residual_in_feasible_directions(mesh):
    cset = saturating_family(parse_source("4*(1-Abs(x1)) - 1"))
    feas = FeasibleSetSpec("nonnegative")
    sol = solve_full(mesh, GEOM, cset, feas)
    p = assemble(mesh, GEOM, cset, sol.U, feas)
    r = p.matrix @ sol.U.values - p.rhs
    # V = U + e_i is always feasible for the cone: a(U; e_i) - F(e_i) >= -tol
    assert r.min() >= -1e-8 * p.matrix.diagonal().max()


def test_scaled_energy_unit_gradient():
    g = BeamGeometry(0.25, 1.0, 0.0)
    m = build_beam_mesh(g, 8, 2, cross_grid="fitted", n_notch_cross=2)
    U = DiscreteField.from_nodal(m, m.nodes[:, 0])
    sol = type("S", (), {})()
    sol.disc = BeamDiscretization(m, g, identity_family())
    sol.nodal = U.nodal
    assert scaled_energy(sol) == pytest.approx(1.0, rel=1e-12)


def test_scaled_energy_against_dense_quadrature(mesh):
    sol = solve_full(mesh, GEOM, saturating_family(parse_source("1")), FeasibleSetSpec())
    dense = BeamDiscretization(mesh, GEOM, saturating_family(), order=8)
    g = dense.grad_at_qp(sol.nodal())
    ref = np.sum(dense.dxw * np.sum(g * g, -1)) / dense.volume
    assert abs(scaled_energy(sol) - ref) <= 1e-6 * ref


def test_energy_identity_in_y_frame(mesh):
    rng = np.random.default_rng(2)
    U = DiscreteField.from_nodal(mesh, rng.normal(size=mesh.n_nodes))
    uy = push_field(U, "y", GEOM)
    dx, gx, _ = mesh.geometry()
    dy, gy, _ = uy.mesh.geometry()
    ux = np.einsum("cqad,ca->cqd", gx, U.nodal()[mesh.cells])
    uyg = np.einsum("cqad,ca->cqd", gy, uy.nodal()[mesh.cells])
    # grad^eps = (d/dy1, eps^-1 d/dy')
    uyg[..., 1:] /= GEOM.eps
    lhs = np.sum(dx * np.sum(ux**2, -1))
    rhs = GEOM.eps**2 * np.sum(dy * np.sum(uyg**2, -1))
    assert lhs == pytest.approx(rhs, rel=1e-10)
    np.testing.assert_allclose(uy.mesh.nodes, map_y(mesh.nodes, GEOM))


def test_nonconvergence_attaches_partial_solution(mesh):
    with pytest.raises(NotConverged) as info:
        solve_full(mesh, GEOM, saturating_family(parse_source("40")), FeasibleSetSpec(),
                   SolverOptions(max_outer=1, tol_outer=1e-14))
    assert info.value.solution.U.values.shape == (mesh.n_dofs,)


def test_dumps(tmp_path, mesh):
    sol = solve_full(mesh, GEOM, identity_family(parse_source("1")), FeasibleSetSpec())
    write_solution(sol, tmp_path / "u.txt")
    write_flux(sol, tmp_path / "s.txt")
    lines = (tmp_path / "u.txt").read_text().splitlines()
    assert lines[0].startswith("# eps 0.25 r_eps 0.5 t_eps 0.125")
    assert len(lines) == mesh.n_dofs + 1
    assert len((tmp_path / "s.txt").read_text().splitlines()) == sol.sigma.shape[0] * sol.sigma.shape[1] + 1


def test_quadrature_helpers_consistent():
    pts, wts = fem.tensor_gauss(3, 2)
    assert wts.sum() == pytest.approx(1.0)
