"""Green bundles along disconjugate orbits via the symplectic Riccati recursion.

Both invariant families are represented by symmetric matrices (slopes of
Lagrangian graphs over the horizontal).  Pushing the vertical forward k
steps gives the depth-k unstable family; pulling it back gives the stable
one.  Along a minimizer the ladders interlace monotonically and converge;
their gap's smallest eigenvalue (co-norm) certifies hyperbolicity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BlockJacobian, OrbitSegment


class ConjugatePointError(RuntimeError):
    """A pushed vertical returned to the vertical: the orbit is not minimizing."""

    def __init__(self, site, cond):
        super().__init__(f"conjugate point near site {site}: condition number {cond:.3e}")
        self.site = site
        self.cond = cond


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _mobius(num: np.ndarray, den: np.ndarray, site=None,
            cond_limit: float = 1e12) -> np.ndarray:
    cond = np.linalg.cond(den)
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConjugatePointError(site, cond)
    return _symmetrize(np.linalg.solve(den.T, num.T).T)


def advance_unstable(u: np.ndarray, jac: BlockJacobian, site=None) -> np.ndarray:
    """One forward push of a graph slope: (C + D u)(A + B u)^{-1}."""
    return _mobius(jac.c + jac.d @ u, jac.a + jac.b @ u, site)


def advance_stable(s: np.ndarray, jac: BlockJacobian, site=None) -> np.ndarray:
    """One backward pull of a graph slope, using the inverse Jacobian blocks."""
    inv = jac.inverse_blocks()
    return _mobius(inv.c + inv.d @ s, inv.a + inv.b @ s, site)


def unstable_seed(jac_prev: BlockJacobian) -> np.ndarray:
    """Depth-1 unstable slope at the arrival site: D B^{-1} of the step before."""
    return _symmetrize(np.linalg.solve(jac_prev.b.T, jac_prev.d.T).T)


def stable_seed(jac_here: BlockJacobian) -> np.ndarray:
    """Depth-1 stable slope: -B^{-1} A of the step leaving the site."""
    return _symmetrize(-np.linalg.solve(jac_here.b, jac_here.a))


def transversality(u: np.ndarray, s: np.ndarray) -> float:
    """Smallest eigenvalue of the gap u - s (the co-norm for a PSD gap)."""
    return float(np.linalg.eigvalsh(_symmetrize(u - s)).min())


@dataclass
class GreenBundleState:
    site: int
    k: int
    u: np.ndarray
    s: np.ndarray

    @property
    def conorm(self) -> float:
        return transversality(self.u, self.s)


def green_bundles(orbit: OrbitSegment, k_max: int, site: int) -> list:
    """Finite-depth ladders U_k, S_k at a site, for k = 1 .. k_max.

    Needs the orbit to cover [site - k_max, site + k_max].  A conjugate
    point aborts with the offending site in the error.
    """
    if site - k_max < orbit.j_start or site + k_max > orbit.j_end:
        raise ValueError("orbit window too short for the requested depth")
    states = []
    for k in range(1, k_max + 1):
        u = unstable_seed(orbit.jacobian_at(site - k))
        for j in range(site - k + 1, site):
            u = advance_unstable(u, orbit.jacobian_at(j), site=j)
        s = stable_seed(orbit.jacobian_at(site + k - 1))
        for j in range(site + k - 2, site - 1, -1):
            s = advance_stable(s, orbit.jacobian_at(j), site=j)
        states.append(GreenBundleState(site, k, u, s))
    return states


def monotonicity_ledger(states: list) -> dict:
    """Smallest eigenvalues of the interlacing differences along a ladder."""
    u_steps = []
    s_steps = []
    gaps = []
    for a, b in zip(states[:-1], states[1:]):
        u_steps.append(float(np.linalg.eigvalsh(a.u - b.u).min()))
        s_steps.append(float(np.linalg.eigvalsh(b.s - a.s).min()))
    for st in states:
        gaps.append(float(np.linalg.eigvalsh(st.u - st.s).min()))
    return {"u_decrease_min_eig": u_steps, "s_increase_min_eig": s_steps,
            "gap_min_eig": gaps}


def ladder_converged(states: list, tol: float) -> bool:
    if len(states) < 2:
        return False
    a, b = states[-2], states[-1]
    return float(np.abs(b.u - a.u).max() + np.abs(b.s - a.s).max()) < tol


@dataclass
class BundleLimits:
    """Converged bundles along a window of orbit sites."""

    j_start: int
    u: np.ndarray  # (n_sites, d, d)
    s: np.ndarray
    burn_in: int

    @property
    def j_end(self) -> int:
        return self.j_start + self.u.shape[0] - 1

    def index(self, j: int) -> int:
        if not self.j_start <= j <= self.j_end:
            raise ValueError(f"site {j} outside bundle window")
        return j - self.j_start

    def at(self, j: int):
        i = self.index(j)
        return self.u[i], self.s[i]

    def conorm(self, j: int) -> float:
        u, s = self.at(j)
        return transversality(u, s)


def bundle_limits(orbit: OrbitSegment, burn_in: int) -> BundleLimits:
    """Converged bundles at every interior site by two attracting sweeps.

    The forward Riccati pass converges to the unstable family, the backward
    pull to the stable one; the first/last burn_in sites are discarded.
    """
    if 2 * burn_in >= len(orbit) - 1:
        raise ValueError("orbit too short for the requested burn-in")
    d = orbit.xs.shape[1]
    n = len(orbit)

    u_all = np.empty((n, d, d))
    u = unstable_seed(orbit.jacobian_at(orbit.j_start))
    u_all[0] = u
    for j in range(orbit.j_start, orbit.j_end):
        u = advance_unstable(u, orbit.jacobian_at(j), site=j)
        u_all[j - orbit.j_start + 1] = u

    s_all = np.empty((n, d, d))
    s = stable_seed(orbit.jacobian_at(orbit.j_end - 1))
    s_all[-1] = s
    for j in range(orbit.j_end - 1, orbit.j_start - 1, -1):
        s = advance_stable(s, orbit.jacobian_at(j), site=j)
        s_all[j - orbit.j_start] = s

    lo = burn_in
    hi = n - burn_in
    return BundleLimits(orbit.j_start + burn_in, u_all[lo:hi], s_all[lo:hi], burn_in)


def invariance_defect(limits: BundleLimits, orbit: OrbitSegment, j: int) -> float:
    """Advancing the converged bundles at site j should land on site j+1."""
    u_j, s_j = limits.at(j)
    u_next, s_next = limits.at(j + 1)
    jac = orbit.jacobian_at(j)
    du = np.abs(advance_unstable(u_j, jac) - u_next).max()
    ds = np.abs(advance_unstable(s_j, jac) - s_next).max()
    return float(max(du, ds))
