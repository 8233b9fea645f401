import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisorecon.geometry import ConeBeamGeometry, Volume, VolumeGrid, circular_angles
from trisorecon.mbir import (
    LIPSCHITZ_FLOOR,
    NeighborWeights,
    NumericalError,
    PriorParams,
    SolverParams,
    data_cost,
    estimate_lipschitz,
    ogm_reconstruct,
    prior_cost,
    prior_gradient,
    rho,
    rho_prime,
    t_sequence,
    total_cost,
    total_gradient,
)
from trisorecon.phantom import ShellSpec, TrisoPhantomSpec, rasterize_phantom
from trisorecon.projector import forward_project_array

PRIOR = PriorParams(sigma_f=1.0, c=1.0, p=1.2)


def one_voxel():
    """One unit voxel crossed by one ray of length exactly 1."""
    grid = VolumeGrid(1, 1, 1, 1.0)
    geom = ConeBeamGeometry(10.0, 20.0, 1, 1, 0.1, [0.0])
    return grid, geom


def small_system(n=8, views=6, det=8):
    grid = VolumeGrid(n, n, n, 1.0 / n)
    geom = ConeBeamGeometry(10.0, 40.0, det, det, 5.6 / det, circular_angles(views))
    return grid, geom


# ---------------------------------------------------------------- rho


def test_rho_examples():
    assert rho(0.0, PRIOR) == 0.0
    for p in (1.0, 1.5, 2.0):
        prm = PriorParams(0.7, 0.3, p)
        assert rho(0.7, prm) == pytest.approx(1 / (0.3 + 1))
        assert rho(-0.7, prm) == pytest.approx(1 / (0.3 + 1))
    assert rho(2.0, PRIOR) == pytest.approx(4 / (1 + 2 ** 0.8), rel=1e-15)


def test_rho_prime_examples():
    assert rho_prime(0.0, PRIOR) == 0.0
    h = 1e-6
    fd = (rho(0.37 + h, PRIOR) - rho(0.37 - h, PRIOR)) / (2 * h)
    assert abs(rho_prime(0.37, PRIOR) - fd) / abs(fd) < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 5), st.floats(0.001, 10), st.floats(1, 2))
def test_rho_symmetries(d, sigma, c, p):
    prm = PriorParams(sigma, c, p)
    assert rho(d, prm) == rho(-d, prm)
    assert rho_prime(-d, prm) == -rho_prime(d, prm)
    assert np.sign(rho_prime(d, prm)) == np.sign(d)


@pytest.mark.parametrize("p", [1.0, 1.2, 1.6, 2.0])
@pytest.mark.parametrize("c", [1e-3, 0.05, 1.0, 10.0])
def test_rho_curvature_bound(p, c):
    prm = PriorParams(0.3, c, p)
    d = np.linspace(-5, 5, 200001)
    second = np.gradient(rho_prime(d, prm), d)
    assert second.min() > -1e-6 * prm.max_curvature
    assert second.max() <= prm.max_curvature * (1 + 1e-6)
    # rho is nondecreasing in |d|
    assert np.all(np.diff(rho(d[d >= 0], prm)) >= 0)


# ---------------------------------------------------------------- neighbourhood


@pytest.mark.parametrize("size", [6, 18, 26])
def test_neighbor_weights(size):
    nw = NeighborWeights.for_neighborhood(size)
    full = nw.full()
    assert len(full) == size
    assert sum(w for _, w in full) == pytest.approx(1.0)
    dist = {o: np.sqrt(sum(x * x for x in o)) for o, _ in full}
    for o, w in full:
        assert w * dist[o] == pytest.approx(full[0][1] * dist[full[0][0]])
        assert (tuple(-x for x in o), w) in full


# ---------------------------------------------------------------- prior


def test_prior_constant_volume():
    f = np.full((4, 5, 6), 3.2)
    assert prior_cost(f, PRIOR) == 0.0
    assert np.all(prior_gradient(f, PRIOR) == 0.0)


def test_prior_two_voxels():
    nw = NeighborWeights.for_neighborhood(26)
    w = nw.weights[nw.offsets.index((0, 0, 1))]
    f = np.array([1.5, -0.25]).reshape(1, 1, 2)
    assert prior_cost(f, PRIOR, nw) == pytest.approx(w * rho(1.75, PRIOR), rel=1e-15)


def _brute_prior(f, params):
    nz, ny, nx = f.shape
    nw = NeighborWeights.for_neighborhood(params.neighborhood)
    weights = dict(nw.full())
    seen = set()
    total = 0.0
    for k, j, i in itertools.product(range(nz), range(ny), range(nx)):
        for (dk, dj, di), w in weights.items():
            kk, jj, ii = k + dk, j + dj, i + di
            if not (0 <= kk < nz and 0 <= jj < ny and 0 <= ii < nx):
                continue
            pair = frozenset([(k, j, i), (kk, jj, ii)])
            if pair in seen:
                continue
            seen.add(pair)
            u = abs(f[k, j, i] - f[kk, jj, ii]) / params.sigma_f
            total += w * u * u / (params.c + u ** (2 - params.p))
    return total


@pytest.mark.parametrize("hood", [6, 26])
def test_prior_brute_force(hood):
    prm = PriorParams(0.4, 0.2, 1.3, hood)
    f = np.random.default_rng(0).random((5, 5, 5))
    assert prior_cost(f, prm) == pytest.approx(_brute_prior(f, prm), rel=1e-12)


def test_prior_gradient_finite_differences():
    prm = PriorParams(0.5, 0.1, 1.2)
    f = np.random.default_rng(1).random((4, 4, 4))
    grad = prior_gradient(f, prm)
    h = 1e-5 * prm.sigma_f
    for idx in itertools.product(range(4), repeat=3):
        e = np.zeros_like(f)
        e[idx] = h
        fd = (prior_cost(f + e, prm) - prior_cost(f - e, prm)) / (2 * h)
        assert abs(grad[idx] - fd) <= 1e-4 * abs(fd) + 1e-10


def test_prior_translation_invariance():
    f = np.random.default_rng(2).random((5, 4, 6))
    assert prior_cost(f + 3.0, PRIOR) == pytest.approx(prior_cost(f, PRIOR), rel=1e-12)
    assert abs(prior_gradient(f, PRIOR).sum()) < 1e-12


# ---------------------------------------------------------------- data term


def test_data_cost_examples():
    grid, geom = one_voxel()
    f = np.ones(grid.shape)
    assert data_cost(f, np.full(geom.shape, 1.0), np.ones(geom.shape), geom, grid) == pytest.approx(0.0, abs=1e-24)
    assert data_cost(f, np.full(geom.shape, 3.0), np.full(geom.shape, 2.0), geom, grid) == pytest.approx(4.0)


def test_data_cost_brute_force():
    grid, geom = small_system(6, 3, 5)
    rng = np.random.default_rng(3)
    f = rng.random(grid.shape)
    g = rng.random(geom.shape)
    W = rng.random(geom.shape)
    Af = forward_project_array(f, geom, grid)
    expected = 0.0
    for idx in np.ndindex(*geom.shape):
        expected += 0.5 * W[idx] * (g[idx] - Af[idx]) ** 2
    assert data_cost(f, g, W, geom, grid) == pytest.approx(expected, rel=1e-12)


def test_data_cost_ignores_zero_weight_placeholders():
    grid, geom = small_system(6, 3, 5)
    rng = np.random.default_rng(4)
    f, g, W = rng.random(grid.shape), rng.random(geom.shape), rng.random(geom.shape)
    W[0, 0, :] = 0
    g2 = g.copy()
    g2[0, 0, :] = np.nan
    assert data_cost(f, g2, W, geom, grid) == data_cost(f, g, W, geom, grid)
    g2[1, 1, 1] = np.nan
    with pytest.raises(ValueError):
        data_cost(f, g2, W, geom, grid)


# ---------------------------------------------------------------- total cost and gradient


def test_total_gradient_zero_at_trivial_minimum():
    grid, geom = small_system()
    grad = total_gradient(Volume.zeros(grid), np.zeros(geom.shape), np.ones(geom.shape), geom, PRIOR)
    assert np.all(grad == 0)


def test_total_cost_composes():
    grid, geom = small_system()
    rng = np.random.default_rng(5)
    f, g, W = rng.random(grid.shape), rng.random(geom.shape), rng.random(geom.shape)
    expected = data_cost(f, g, W, geom, grid) + prior_cost(f, PRIOR)
    assert total_cost(f, g, W, geom, PRIOR, grid) == pytest.approx(expected, rel=1e-14)


def test_total_gradient_directional_derivative():
    grid, geom = small_system()
    prm = PriorParams(0.3, 0.05, 1.2)
    rng = np.random.default_rng(6)
    f = rng.random(grid.shape)
    g = rng.random(geom.shape)
    W = rng.random(geom.shape) * 100
    d = rng.standard_normal(grid.shape)
    eps = 1e-6
    fd = (total_cost(f + eps * d, g, W, geom, prm, grid) - total_cost(f - eps * d, g, W, geom, prm, grid)) / (2 * eps)
    analytic = np.vdot(total_gradient(f, g, W, geom, prm, grid), d)
    assert abs(fd - analytic) / abs(analytic) < 1e-4


def test_zero_weights_leave_prior_gradient():
    grid, geom = small_system()
    rng = np.random.default_rng(7)
    f = rng.random(grid.shape)
    grad = total_gradient(f, rng.random(geom.shape), np.zeros(geom.shape), geom, PRIOR, grid)
    np.testing.assert_array_equal(grad, prior_gradient(f, PRIOR))


# ---------------------------------------------------------------- Lipschitz


def test_lipschitz_single_ray():
    grid, geom = one_voxel()
    w = 7.5
    assert estimate_lipschitz(np.full(geom.shape, w), geom, grid) == pytest.approx(w * 1.0 ** 2, rel=1e-12)


def test_lipschitz_zero_weights():
    grid, geom = one_voxel()
    assert estimate_lipschitz(np.zeros(geom.shape), geom, grid) == LIPSCHITZ_FLOOR
    assert estimate_lipschitz(np.zeros(geom.shape), geom, grid, PRIOR) == pytest.approx(
        2 * PRIOR.max_curvature)


def test_lipschitz_against_dense_eigenvalue():
    grid = VolumeGrid(8, 8, 8, 1.0 / 8)
    geom = ConeBeamGeometry(10.0, 40.0, 6, 6, 5.6 / 6, circular_angles(4))
    W = np.random.default_rng(8).random(geom.shape) * 50
    A = np.empty((np.prod(geom.shape), grid.size))
    for j in range(grid.size):
        e = np.zeros(grid.size)
        e[j] = 1.0
        A[:, j] = forward_project_array(e.reshape(grid.shape), geom, grid).reshape(-1)
    exact = np.linalg.eigvalsh(A.T @ (W.reshape(-1)[:, None] * A)).max()
    est = estimate_lipschitz(W, geom, grid)
    assert abs(est - exact) / exact < 0.05
    assert est >= exact * (1 - 1e-9)


# ---------------------------------------------------------------- OGM


def test_t_sequence():
    t = t_sequence(10)
    assert t[0] == 1.0
    assert t[1] == (1 + np.sqrt(5)) / 2
    for a, b in zip(t, t[1:]):
        assert b == (1 + np.sqrt(1 + 4 * a * a)) / 2
        assert b > a


def test_ogm_one_voxel_closed_form():
    grid, geom = one_voxel()
    vol, trace = ogm_reconstruct(np.full(geom.shape, 5.0), np.ones(geom.shape), geom, grid,
                                 None, SolverParams(50, None, "zero", 1))
    assert abs(vol.values.item() - 5.0) < 1e-6
    assert trace[-1].total_cost < trace[0].total_cost


@pytest.mark.parametrize("scale", [1.0, 1.5, 2.0])
def test_ogm_one_voxel_overestimated_lipschitz(scale):
    grid, geom = one_voxel()
    vol, _ = ogm_reconstruct(np.full(geom.shape, 5.0), np.ones(geom.shape), geom, grid,
                             None, SolverParams(50, scale, "zero", 10))
    assert abs(vol.values.item() - 5.0) < 1e-6


def test_ogm_trace_layout():
    grid, geom = one_voxel()
    _, trace = ogm_reconstruct(np.full(geom.shape, 5.0), np.ones(geom.shape), geom, grid,
                               None, SolverParams(25, None, "zero", 10))
    assert [r.iteration for r in trace] == [0, 10, 20, 25]


def _phantom_problem():
    grid = VolumeGrid(8, 8, 8, 1.0 / 8)
    geom = ConeBeamGeometry(10.0, 40.0, 10, 10, 5.6 / 10, circular_angles(12))
    spec = TrisoPhantomSpec((0, 0, 0), (ShellSpec(0.15, 2.0), ShellSpec(0.4, 0.5)))
    truth = rasterize_phantom(spec, grid).values
    rng = np.random.default_rng(9)
    counts = rng.poisson(1e4 * np.exp(-forward_project_array(truth, geom, grid))).astype(float)
    g = np.log(1e4 / np.maximum(counts, 0.5))
    return grid, geom, g, counts


def test_ogm_converges_on_phantom_problem():
    grid, geom, g, W = _phantom_problem()
    prm = PriorParams(0.1, 0.1, 1.2)
    g0 = np.linalg.norm(total_gradient(np.zeros(grid.shape), g, W, geom, prm, grid))
    vol, trace = ogm_reconstruct(g, W, geom, grid, prm, SolverParams(500, None, "zero", 50))
    g1 = np.linalg.norm(total_gradient(vol, g, W, geom, prm))
    assert g1 < 1e-3 * g0
    assert trace[-1].total_cost < trace[0].total_cost


def test_ogm_zero_weight_pixels_have_no_influence():
    grid, geom, g, W = _phantom_problem()
    W = np.where(W >= 50, W, 0.0)
    W[0, :3, :] = 0.0
    prm = PriorParams(0.1, 0.1, 1.2)
    solver = SolverParams(30, None, "zero", 10)
    a, _ = ogm_reconstruct(g, W, geom, grid, prm, solver)
    g2 = g.copy()
    g2[W == 0] += np.random.default_rng(10).normal(scale=100.0, size=int((W == 0).sum()))
    b, _ = ogm_reconstruct(g2, W, geom, grid, prm, solver)
    np.testing.assert_array_equal(a.values, b.values)


def test_ogm_non_finite_raises():
    grid, geom, g, W = _phantom_problem()
    with pytest.raises(NumericalError) as info:
        ogm_reconstruct(g, W, geom, grid, None, SolverParams(50, 1e-300, "zero", 1))
    assert info.value.state is not None


def test_param_validation():
    with pytest.raises(ValueError):
        PriorParams(0.1, 0.1, 2.5)
    with pytest.raises(ValueError):
        PriorParams(0.0, 0.1, 1.2)
    with pytest.raises(ValueError):
        PriorParams(0.1, 0.0, 1.2)
    with pytest.raises(ValueError):
        PriorParams(0.1, 0.1, 1.2, neighborhood=8)
    with pytest.raises(ValueError):
        SolverParams(lipschitz=-1.0)
    assert SolverParams.from_dict({"lipschitz": "auto"}).lipschitz is None
