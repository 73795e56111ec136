import numpy as np
import pytest

from hjlab.dynamics import OrbitSegment, PhasePoint
from hjlab.green_bundles import bundle_limits
from hjlab.manifolds import (
    AdmissibleGraph,
    ConeConditionError,
    LocalChart,
    build_chart,
    check_cone_conditions,
    compare_gradient_graph,
    graph_phase_points,
    graph_transform,
    unstable_manifold,
)
from hjlab.minimizer import track_minimizer
from hjlab.potentials import default_basis, gaussian_density, sample_kicks, wrap_half


def linear_chart(site=0):
    # identity frame at the origin: local coordinates are (dx, dv)
    return LocalChart(site, np.zeros(1), np.zeros(1), np.eye(2), np.eye(2))


class _DiagonalMapBasis:
    """Fake basis whose kick step realizes (u, s) -> (2u, s/2) in phase space."""

    dim = 1
    size = 1

    def kick_gradient(self, xi, x):
        raise NotImplementedError

    def kick_hessian(self, xi, x):
        raise NotImplementedError


def diagonal_transform(graph, factor_u=2.0, factor_s=0.5):
    """Apply the linear model by hand through graph_transform's machinery."""
    us = graph.us * factor_u
    phis = graph.phis * factor_s
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(us, phis)
    us_new = np.linspace(-graph.rho, graph.rho, graph.us.shape[0])
    return AdmissibleGraph(graph.side, graph.rho, us_new, spline(us_new) - spline(0.0))


def test_linear_model_contracts_by_quarter():
    gamma = 0.8
    rho = 1.0
    us = np.linspace(-rho, rho, 41)
    graph = AdmissibleGraph("unstable", rho, us, gamma * us)
    out = diagonal_transform(graph)
    # phi'(u) = gamma * (u / 2) / 2: slope quarters per step
    assert out.lipschitz() == pytest.approx(gamma / 4.0, rel=1e-10)
    again = diagonal_transform(out)
    assert again.lipschitz() == pytest.approx(gamma / 16.0, rel=1e-8)


def test_zero_graph_is_fixed_by_linear_model():
    graph = AdmissibleGraph.flat(0.5, 21)
    out = diagonal_transform(graph)
    assert out.sup_norm() == 0.0


def test_cone_condition_arithmetic():
    assert check_cone_conditions(lam=0.7, sigma=0.01)
    assert not check_cone_conditions(lam=0.7, sigma=0.5)
    assert not check_cone_conditions(lam=0.0, sigma=0.0)


@pytest.fixture(scope="module")
def hyperbolic_setup():
    basis = default_basis(1)
    kicks = sample_kicks(gaussian_density(basis.size, 0.1), 103, (-500, 500))
    track = track_minimizer(basis, kicks, [0.0], 512, -70, 40, keep_fields=True)
    orbit = OrbitSegment(track.t_start, track.xs, track.vs, basis, kicks)
    limits = bundle_limits(orbit, burn_in=30)
    return basis, kicks, track, limits


def test_chart_round_trip(hyperbolic_setup):
    basis, kicks, track, limits = hyperbolic_setup
    u_mat, s_mat = limits.at(0)
    chart = build_chart(0, track.x(0), track.v(0), u_mat, s_mat)
    p0 = PhasePoint(track.x(0), track.v(0))
    u, s = chart.to_local(p0)
    assert abs(u[0]) < 1e-12 and abs(s[0]) < 1e-12
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = PhasePoint(track.x(0) + rng.normal() * 0.05, track.v(0) + rng.normal() * 0.05)
        u, s = chart.to_local(p)
        q = chart.from_local(u, s)
        assert np.abs(wrap_half(q.x - p.x)).max() < 1e-9
        assert np.abs(q.v - p.v).max() < 1e-9


def test_stable_cone_sandwich(hyperbolic_setup):
    # position displacement of stable-cone points against the gap norms
    _, _, track, limits = hyperbolic_setup
    u_mat, s_mat = limits.at(0)
    chart = build_chart(0, track.x(0), track.v(0), u_mat, s_mat)
    gap = u_mat - s_mat
    k_norm = np.linalg.norm(gap, 2)
    a_norm = np.linalg.eigvalsh(gap).min()
    rng = np.random.default_rng(7)
    for _ in range(50):
        s_val = rng.normal() * 0.02
        gamma = rng.random() * 0.9
        u_val = gamma * s_val
        p = chart.from_local([u_val], [s_val])
        dist = abs(wrap_half(p.x - chart.x)[0])
        assert dist <= 2.0 * a_norm ** -0.5 * abs(s_val) + 1e-12
        assert dist >= (1.0 - gamma) * k_norm ** -0.5 * abs(s_val) - 1e-12


def test_unstable_manifold_construction(hyperbolic_setup):
    basis, kicks, track, limits = hyperbolic_setup
    graph, report = unstable_manifold(track, limits, basis, kicks, depth=18,
                                      rho0=0.08, grid_n=512)
    # expansion ledger positive at every site
    for rec in report["records"]:
        assert rec["min_expansion_ratio"] >= rec["expansion_floor"] - 1e-9
    # tangent to the unstable bundle at the origin in conjugated coordinates
    assert abs(report["slope_at_zero"]) < 0.05
    assert report["final_lipschitz"] <= 1.0
    # anchor residual absorbed at the origin stays at grid scale
    assert report["max_offset"] < 20.0 / 512

    deeper, _ = unstable_manifold(track, limits, basis, kicks, depth=23,
                                  rho0=report["rho"], grid_n=512)
    assert graph.sup_distance(deeper) < 1e-6


def test_manifold_matches_gradient_graph(hyperbolic_setup):
    basis, kicks, track, limits = hyperbolic_setup
    graph, report = unstable_manifold(track, limits, basis, kicks, depth=18,
                                      rho0=0.08, grid_n=512)
    u_mat, s_mat = limits.at(0)
    chart = build_chart(0, track.x(0), track.v(0), u_mat, s_mat)
    comp = compare_gradient_graph(track.backward_fields[0], [0.0], graph, chart,
                                  radius=0.03)
    h = 1.0 / 512
    assert comp["n_compared"] > 10
    assert comp["sup_distance"] <= 10.0 * h

    # negative control: the forward solution's gradient graph is far from
    # the unstable manifold over the same neighbourhood
    neg = compare_gradient_graph(track.forward_fields[0], [0.0], graph, chart,
                                 radius=0.03)
    assert neg["sup_distance"] > 100.0 * h


def test_graph_transform_cone_failure_raises(hyperbolic_setup):
    basis, kicks, track, limits = hyperbolic_setup
    chart0 = build_chart(0, track.x(0), track.v(0), *limits.at(0))
    chart1 = build_chart(1, track.x(1), track.v(1), *limits.at(1))
    graph = AdmissibleGraph.flat(0.05, 11)
    with pytest.raises(ConeConditionError):
        graph_transform(graph, chart0, chart1, basis, kicks.xi(0),
                        rho_next=0.05, lam=0.0, sigma=0.5)


def test_graph_phase_points_monotone(hyperbolic_setup):
    basis, kicks, track, limits = hyperbolic_setup
    graph, _ = unstable_manifold(track, limits, basis, kicks, depth=12,
                                 rho0=0.05, grid_n=512)
    chart = build_chart(0, track.x(0), track.v(0), *limits.at(0))
    ys, ws = graph_phase_points(graph, chart)
    assert np.all(np.diff(ys) > 0)


def test_dimension_guard():
    with pytest.raises(NotImplementedError):
        AdmissibleGraph("unstable", 0.1, np.zeros((3, 3)), np.zeros((3, 3)))
