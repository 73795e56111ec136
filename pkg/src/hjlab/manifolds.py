"""Local unstable manifolds by the graph transform in bundle-adapted frames.

Charts at each orbit site come from the Green-bundle conjugator; the
dynamics between charts is the honest nonlinear map.  Box sizes are found
by halving until the measured cone conditions hold (the proof-side
constants are far too pessimistic to compute); the transform then
contracts admissible graphs onto the local unstable manifold.

The graph machinery is one-dimensional: stencils are symmetric grids with
cubic interpolation.  Higher dimensions would need a polar stencil and a
scattered interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import PhasePoint, jacobian, step
from .green_bundles import BundleLimits
from .lax_oleinik import GridField
from .lyapunov import conjugate_step, conjugator
from .potentials import wrap01, wrap_half


class ConeConditionError(RuntimeError):
    """Measured nonlinearity too large for the expansion margin at this box size."""

    def __init__(self, site, lam, sigma, rho):
        super().__init__(
            f"cone condition fails at site {site}: lambda={lam:.3f}, "
            f"sigma={sigma:.3e}, rho={rho:.3e}"
        )
        self.site = site


@dataclass(eq=False)
class LocalChart:
    """Affine bundle-adapted coordinates around one orbit site."""

    site: int
    x: np.ndarray
    v: np.ndarray
    q: np.ndarray
    q_inv: np.ndarray

    def to_local(self, p: PhasePoint):
        dx = wrap_half(p.x - self.x)
        w = self.q_inv @ np.concatenate([dx, p.v - self.v])
        d = self.x.shape[0]
        return w[:d], w[d:]

    def from_local(self, u, s) -> PhasePoint:
        w = self.q @ np.concatenate([np.atleast_1d(u), np.atleast_1d(s)])
        d = self.x.shape[0]
        return PhasePoint(wrap01(self.x + w[:d]), self.v + w[d:])


def build_chart(site: int, x, v, u_mat, s_mat) -> LocalChart:
    q, q_inv = conjugator(u_mat, s_mat)
    return LocalChart(site, np.atleast_1d(np.asarray(x, dtype=float)),
                      np.atleast_1d(np.asarray(v, dtype=float)), q, q_inv)


@dataclass(eq=False)
class AdmissibleGraph:
    """Lipschitz graph s = phi(u) over the unstable coordinate, phi(0) = 0."""

    side: str
    rho: float
    us: np.ndarray
    phis: np.ndarray

    def __post_init__(self):
        if self.us.ndim != 1:
            raise NotImplementedError("graph stencils are one-dimensional")
        self._spline = CubicSpline(self.us, self.phis)

    @classmethod
    def flat(cls, rho: float, stencil_n: int = 21, side: str = "unstable"):
        us = np.linspace(-rho, rho, stencil_n)
        return cls(side, rho, us, np.zeros(stencil_n))

    def value(self, u):
        return self._spline(u)

    def lipschitz(self) -> float:
        return float(np.abs(np.diff(self.phis) / np.diff(self.us)).max())

    def sup_norm(self) -> float:
        return float(np.abs(self.phis).max())

    def slope_at_zero(self) -> float:
        return float(self._spline(0.0, 1))

    def sup_distance(self, other: "AdmissibleGraph") -> float:
        rho = min(self.rho, other.rho)
        us = np.linspace(-rho, rho, 101)
        return float(np.abs(self.value(us) - other.value(us)).max())


def measured_oscillation(chart_j: LocalChart, chart_j1: LocalChart, basis, xi,
                         rho: float, samples: int = 3) -> float:
    """sup over the box of the local-map Jacobian minus its value at the origin."""
    base = None
    worst = 0.0
    grid = np.linspace(-rho, rho, samples)
    for u in grid:
        for s in grid:
            p = chart_j.from_local([u], [s])
            full = chart_j1.q_inv @ jacobian(p, basis, xi).matrix() @ chart_j.q
            if base is None:
                p0 = chart_j.from_local([0.0], [0.0])
                base = chart_j1.q_inv @ jacobian(p0, basis, xi).matrix() @ chart_j.q
            worst = max(worst, np.linalg.norm(full - base, 2))
    return worst


def check_cone_conditions(lam: float, sigma: float) -> bool:
    """Expansion-side cone condition: the oscillation must not eat the
    margin between full and half expansion.  The contraction side is not
    gated here; the transform verifies graph-ness, expansion ratios and
    Lipschitz constants of the images directly."""
    return np.exp(lam) - 2.0 * sigma > np.exp(lam / 2.0)


def graph_transform(graph: AdmissibleGraph, chart_j: LocalChart, chart_j1: LocalChart,
                    basis, xi, rho_next: float, lam: float, sigma: float,
                    stencil_n: int | None = None):
    """Push an admissible graph one step and re-sample it in the next chart.

    Raises ConeConditionError when the measured oscillation eats the
    expansion margin; the caller shrinks the box then.  Returns the new
    graph plus a record with the expansion ratios and the vertical offset
    absorbed at the origin (the orbit-anchor residual in local units).
    """
    if not check_cone_conditions(lam, sigma):
        raise ConeConditionError(chart_j.site, lam, sigma, graph.rho)
    if stencil_n is None:
        stencil_n = graph.us.shape[0]

    u_out = np.empty(graph.us.shape[0])
    s_out = np.empty(graph.us.shape[0])
    for i, u in enumerate(graph.us):
        p = chart_j.from_local([u], [float(graph.value(u))])
        q = step(p, basis, xi)
        uu, ss = chart_j1.to_local(q)
        u_out[i] = uu[0]
        s_out[i] = ss[0]

    order = np.argsort(u_out)
    u_sorted = u_out[order]
    s_sorted = s_out[order]
    if np.any(np.diff(u_sorted) <= 0.0):
        raise ConeConditionError(chart_j.site, lam, sigma, graph.rho)
    if u_sorted[0] > -rho_next or u_sorted[-1] < rho_next:
        raise ConeConditionError(chart_j.site, lam, sigma, graph.rho)

    nonzero = np.abs(graph.us) > 1e-12
    ratios = np.abs(u_out[nonzero]) / np.abs(graph.us[nonzero])
    spline = CubicSpline(u_sorted, s_sorted)
    us_new = np.linspace(-rho_next, rho_next, stencil_n)
    phis_new = spline(us_new)
    offset = float(spline(0.0))
    phis_new = phis_new - offset

    record = {
        "site": chart_j.site,
        "min_expansion_ratio": float(ratios.min()),
        "expansion_floor": float(np.exp(lam / 2.0)),
        "offset": offset,
        "lipschitz": float(np.abs(np.diff(phis_new) / np.diff(us_new)).max()),
    }
    return AdmissibleGraph(graph.side, rho_next, us_new, phis_new), record


def unstable_manifold(track, limits: BundleLimits, basis, kicks, depth: int,
                      rho0: float, stencil_n: int = 21, min_rho_cells: float = 10.0,
                      grid_n: int | None = None):
    """Contract a flat graph from depth steps in the past onto the unstable manifold.

    Box sizes are per site: each is halved from rho0 until the measured
    cone condition holds there, then chained forward so the next box never
    exceeds the guaranteed expansion of the current one.  A site whose box
    must shrink below min_rho_cells grid cells reports failure.  Returns
    the graph at site 0 and a run report.
    """
    if track.xs.shape[1] != 1:
        raise NotImplementedError("unstable manifolds implemented for dimension 1")
    sites = range(-depth, 1)
    charts = {}
    for j in sites:
        u_mat, s_mat = limits.at(j)
        charts[j] = build_chart(j, track.x(j), track.v(j), u_mat, s_mat)

    lams = {}
    for j in range(-depth, 0):
        stepc = conjugate_step(_jac(track, basis, kicks, j), limits.at(j),
                               limits.at(j + 1), j)
        lams[j] = stepc.expansion()

    h_floor = max((min_rho_cells / grid_n) if grid_n else 0.0, 1e-6)
    caps = {}
    sigmas = {}
    for j in range(-depth, 0):
        rho = rho0
        while True:
            sig = measured_oscillation(charts[j], charts[j + 1], basis, kicks.xi(j), rho)
            if check_cone_conditions(lams[j], sig):
                break
            rho *= 0.5
            if rho < h_floor:
                raise ConeConditionError(j, lams[j], sig, rho)
        caps[j] = rho
        sigmas[j] = sig

    rho_seq = {-depth: caps[-depth]}
    for j in range(-depth, 0):
        grown = rho_seq[j] * float(np.exp(lams[j] / 2.0))
        rho_seq[j + 1] = min(caps[j + 1] if j + 1 in caps else rho0, grown, rho0)

    graph = AdmissibleGraph.flat(rho_seq[-depth], stencil_n)
    records = []
    for j in range(-depth, 0):
        graph, rec = graph_transform(graph, charts[j], charts[j + 1], basis,
                                     kicks.xi(j), rho_seq[j + 1], lams[j], sigmas[j])
        records.append(rec)

    report = {
        "rho": rho_seq[0],
        "rho_sequence": {k: float(v) for k, v in rho_seq.items()},
        "depth": depth,
        "records": records,
        "max_offset": max(abs(r["offset"]) for r in records),
        "final_lipschitz": graph.lipschitz(),
        "slope_at_zero": graph.slope_at_zero(),
    }
    return graph, report


def _jac(track, basis, kicks, j):
    return jacobian(PhasePoint(track.x(j), track.v(j)), basis, kicks.xi(j))


def graph_phase_points(graph: AdmissibleGraph, chart: LocalChart):
    """The graph as phase-space samples (position offsets from the site, velocity)."""
    ys = np.empty(graph.us.shape[0])
    ws = np.empty(graph.us.shape[0])
    for i, u in enumerate(graph.us):
        p = chart.from_local([u], [graph.phis[i]])
        ys[i] = chart.x[0] + wrap_half(p.x - chart.x)[0]
        ws[i] = p.v[0]
    order = np.argsort(ys)
    return ys[order], ws[order]


def compare_gradient_graph(field_backward: GridField, b, graph: AdmissibleGraph,
                           chart: LocalChart, radius: float,
                           screen_factor: float = 10.0) -> dict:
    """Sup vertical distance between the gradient graph and the manifold.

    Grid points within the radius that pass the differentiability screen
    are lifted to the phase space via the interpolated gradient and
    compared to the manifold's velocity over the same position.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    ys, ws = graph_phase_points(graph, chart)
    curve = CubicSpline(ys, ws)
    n = field_backward.n
    h = field_backward.h
    x0 = chart.x[0]
    grad = field_backward.gradient_grid()[0]

    distances = []
    screened = 0
    total = 0
    for i in range(n):
        x = i * h
        dx = wrap_half(np.array([x - x0]))[0]
        if abs(dx) > radius:
            continue
        total += 1
        if field_backward.one_sided_gap([x]) > screen_factor * h:
            screened += 1
            continue
        pos = x0 + dx
        if pos < ys[0] or pos > ys[-1]:
            continue
        v = grad[i] + b[0]
        distances.append(abs(v - float(curve(pos))))

    return {
        "sup_distance": max(distances) if distances else np.inf,
        "n_points": total,
        "n_compared": len(distances),
        "screened_fraction": screened / total if total else 1.0,
        "distances": distances,
    }
