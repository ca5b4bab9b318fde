import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from cisdc.errors import InvalidArgumentError, SolveError
from cisdc.integrators import integrate
from cisdc.linalg import bisection
from cisdc.problems import (
    LinearScalarProblem,
    ReactionDiffusionGrid,
    ReactionDiffusionProblem,
    StiffnessTriple,
    advection_operator,
    check_contract,
    fill_ghosts,
    fit_slope,
    initial_condition,
    l1_error,
    laplacian_matrix,
    laplacian_operator,
    reaction_derivative,
    reaction_term,
    read_field,
    reference_solution,
    solve_diffusion_implicit,
    solve_reaction_implicit,
    write_field,
)
from cisdc.quadrature import build_tables


def interior(grid, width=2):
    return slice(width, grid.n_x - width)


def grid_for(values_at, n_x=40, **kw):
    """Grid whose Dirichlet data match ``values_at`` at the faces."""
    g = ReactionDiffusionGrid(n_x=n_x, **kw)
    return ReactionDiffusionGrid(
        n_x=n_x, phi_left=values_at(0.0), phi_right=values_at(g.length), **kw
    )


# -- grid and initial data ----------------------------------------------------


def test_grid_geometry():
    g = ReactionDiffusionGrid(n_x=200)
    assert g.dx == pytest.approx(0.1)
    assert g.dx * g.n_x == pytest.approx(20.0)
    assert_allclose(g.x[[0, -1]], [0.05, 19.95])


@pytest.mark.parametrize("n_x", [0, 4, 7, 10.5])
def test_grid_rejects_small_or_fractional(n_x):
    with pytest.raises(InvalidArgumentError):
        ReactionDiffusionGrid(n_x=n_x)


def test_initial_condition_values():
    g = ReactionDiffusionGrid(n_x=20, length=21.0)
    assert_allclose(initial_condition(g), 0.5 * (1 + np.tanh(20 - 2 * g.x)))
    # dx = 20/9 puts cell 4 at x = 10
    g10 = ReactionDiffusionGrid(n_x=10, length=200.0 / 9)
    assert initial_condition(g10)[4] == pytest.approx(0.5, abs=1e-15)
    # dx = 1 puts cell 10 at x = 10.5
    g105 = ReactionDiffusionGrid(n_x=20, length=20.0)
    assert initial_condition(g105)[10] == pytest.approx(0.1192029, abs=1e-7)
    assert initial_condition(ReactionDiffusionGrid(n_x=200))[0] == pytest.approx(1.0, abs=1e-15)


# -- spatial operators ----------------------------------------------------------


@pytest.mark.parametrize("op", [advection_operator, laplacian_operator])
def test_operators_annihilate_constants_including_boundary(op):
    g = ReactionDiffusionGrid(n_x=30, phi_left=0.7, phi_right=0.7)
    assert_allclose(op(np.full(30, 0.7), g), 0.0, atol=1e-12)


def test_advection_exact_on_linear_and_quartic():
    g = grid_for(lambda x: x)
    assert_allclose(advection_operator(g.x, g), 1.0, atol=1e-12)
    g4 = grid_for(lambda x: (x / 20) ** 4, a=1.0)
    # the centred stencil is exact through degree 4 on the interior
    exact = 4 * g4.x**3 / 20**4
    assert_allclose(advection_operator((g4.x / 20) ** 4, g4)[interior(g4)], exact[interior(g4)], atol=1e-13)


def test_ghost_fill_exact_for_cubics():
    f = lambda x: 1 + 0.1 * x - 0.02 * x**2 + 0.001 * x**3  # noqa: E731
    g = grid_for(f, n_x=16)
    p = fill_ghosts(f(g.x), g)
    xs = np.concatenate(([-1.5, -0.5], np.arange(16) + 0.5, [16.5, 17.5])) * g.dx
    assert_allclose(p, f(xs), atol=1e-12)


def test_laplacian_exact_on_quadratic():
    g = grid_for(lambda x: x**2, d=1.0)
    assert_allclose(laplacian_operator(g.x**2, g), 2.0, atol=1e-11)


def test_laplacian_matrix_matches_operator(rng):
    g = ReactionDiffusionGrid(n_x=24, d=1.0)
    L, b = laplacian_matrix(g)
    phi = rng.uniform(size=24)
    assert_allclose(L.matvec(phi) + b, laplacian_operator(phi, g), atol=1e-10)


def test_assembled_laplacian_symmetric_in_interior():
    g = ReactionDiffusionGrid(n_x=40, d=1.0)
    A = laplacian_matrix(g)[0].to_dense()
    inner = A[4:-4, 4:-4]
    assert_allclose(inner, inner.T, atol=0)


# -- reaction -------------------------------------------------------------------


def test_reaction_values():
    assert_array_equal(reaction_term(np.array([0.0, 0.5, 1.0]), 4.0), 0.0)
    assert reaction_term(0.25, 4.0) == pytest.approx(3 / 16)
    assert reaction_derivative(0.5, 4.0) == pytest.approx(-1.0)


def test_reaction_derivative_matches_finite_difference(rng):
    phi = rng.uniform(-1, 2, size=20)
    h = 1e-6
    fd = (reaction_term(phi + h, 3.0) - reaction_term(phi - h, 3.0)) / (2 * h)
    assert_allclose(reaction_derivative(phi, 3.0), fd, atol=1e-8)


# -- implicit solves ------------------------------------------------------------


def test_diffusion_solve_identity_for_zero_coef(rng):
    g = ReactionDiffusionGrid(n_x=20)
    rhs = rng.normal(size=20)
    assert_array_equal(solve_diffusion_implicit(0.0, rhs, g), rhs)


def test_diffusion_solve_residual_and_dense_oracle(rng):
    g = ReactionDiffusionGrid(n_x=50)
    rhs = rng.uniform(size=50)
    coef = 0.05
    phi = solve_diffusion_implicit(coef, rhs, g)
    res = phi - coef * laplacian_operator(phi, g) - rhs
    assert np.max(np.abs(res)) <= 1e-11 * np.max(np.abs(rhs))
    L, b = laplacian_matrix(g)
    dense = np.eye(50) - coef * g.d * L.to_dense()
    assert_allclose(phi, np.linalg.solve(dense, rhs + coef * g.d * b), atol=1e-12)


def test_reaction_solve_cases(rng):
    g = ReactionDiffusionGrid(n_x=10)
    rhs = rng.uniform(size=10)
    assert_array_equal(solve_reaction_implicit(0.0, rhs, g), rhs)
    assert_array_equal(solve_reaction_implicit(0.3, np.zeros(10), g), 0.0)


def test_reaction_solve_vs_bisection_oracle(rng):
    g = ReactionDiffusionGrid(n_x=12, r=4.0)
    coef = 0.1
    rhs = rng.uniform(-0.1, 1.1, size=12)
    phi = solve_reaction_implicit(coef, rhs, g)
    for i in range(12):
        f = lambda x, i=i: x - coef * reaction_term(x, 4.0) - rhs[i]  # noqa: E731
        # f is monotone on this bracket, so the root is unique there
        assert phi[i] == pytest.approx(bisection(f, -0.4, 1.4), abs=1e-12)


def test_reaction_solve_failure_names_cell():
    g = ReactionDiffusionGrid(n_x=8, r=4.0)
    rhs = np.zeros(8)
    rhs[5] = 1e200
    with pytest.raises(SolveError) as info:
        with np.errstate(all="ignore"):
            solve_reaction_implicit(0.5, rhs, g)
    assert info.value.index == 5


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-4, 0.2), st.integers(0, 2**32 - 1))
def test_pde_contract_residuals_property(coef, seed):
    pb = ReactionDiffusionProblem(ReactionDiffusionGrid(n_x=32))
    phi = np.random.default_rng(seed).uniform(0, 1, size=32)
    assert check_contract(pb, phi, coef) <= 1e-11


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-50, 5), st.floats(-50, 0), st.floats(-50, 0), st.floats(1e-3, 1.0), st.floats(-5, 5)
)
def test_linear_contract_residuals_property(a, d, r, coef, phi):
    pb = LinearScalarProblem(StiffnessTriple(a, d, r))
    assert check_contract(pb, np.array([phi]), coef) <= 1e-12


def test_linear_problem_rejects_nonfinite():
    with pytest.raises(InvalidArgumentError):
        StiffnessTriple(1.0, float("nan"), 0.0)


# -- conservation ---------------------------------------------------------------


def test_advection_is_conservative(rng):
    pb = ReactionDiffusionProblem(ReactionDiffusionGrid(n_x=64, d=0.0, r=0.0))
    phi = rng.uniform(size=64)
    assert pb.grid.dx * np.sum(pb.eval_A(phi)) == pytest.approx(pb.boundary_flux(phi), abs=1e-12)


def test_mass_changes_only_through_boundary_flux():
    grid = ReactionDiffusionGrid(n_x=100, d=0.0, r=0.0)
    pb = ReactionDiffusionProblem(grid)
    M, dt = 4, 0.02
    weights = build_tables(M).Q[-1]
    phi = pb.initial_value()
    mass0 = grid.dx * phi.sum()
    flux = 0.0
    for _ in range(10):
        res = integrate("misdcq", pb, dt, 1, M, n_sweeps=30, stop_tol=1e-15, phi0=phi)
        flux += dt * sum(w * pb.boundary_flux(p) for w, p in zip(weights, res.state.phi))
        phi = res.phi
    assert grid.dx * phi.sum() - mass0 == pytest.approx(flux, abs=1e-8)


# -- norms, files, studies ------------------------------------------------------


def test_l1_error_examples():
    a = np.arange(5.0)
    assert l1_error(a, a) == 0.0
    assert l1_error(a + 1, a) == 1.0
    b = a.copy()
    b[2] += 5
    assert l1_error(b, a) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        l1_error(a, a[:-1])


def test_field_file_roundtrip(tmp_path, rng):
    phi = rng.normal(size=13)
    path = tmp_path / "f.sdc"
    write_field(path, phi, 0.25)
    raw = path.read_bytes()
    assert raw[:4] == b"SDC1" and int.from_bytes(raw[4:8], "little") == 13
    back, dx = read_field(path)
    assert_array_equal(back, phi)
    assert dx == 0.25
    path.write_bytes(raw[:-8])
    with pytest.raises(InvalidArgumentError):
        read_field(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(InvalidArgumentError):
        read_field(path)


def test_fit_slope():
    dts = np.array([0.1, 0.05, 0.025])
    assert fit_slope(dts, 3.0 * dts**2) == pytest.approx(2.0)
    assert fit_slope([0.1], [1e-3]) is None


def test_reference_solution_is_cached(tmp_path):
    grid = ReactionDiffusionGrid(n_x=16)
    ref = reference_solution(grid, 0.1, dt=0.05, M=2, sweeps=3, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    again = reference_solution(grid, 0.1, dt=0.05, M=2, sweeps=3, cache_dir=tmp_path)
    assert_array_equal(ref, again)
