"""Kicked twist maps on T^d x R^d: steps, inverses, flows and block Jacobians.

The one-step map is (x, v) -> (x + v - grad F(x) mod Z^d, v - grad F(x)).
Its derivative in (dx, dv) blocks is A = I - hess F, B = I, C = -hess F,
D = I, which satisfies the symplectic block identities exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potentials import PotentialBasis, TorusPoint, as_coords, wrap01, wrap_half


@dataclass(eq=False)
class PhasePoint:
    """Torus position (reduced) plus an unreduced velocity."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(wrap01(self.x))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape:
            raise ValueError("position and velocity dimensions differ")

    @property
    def dim(self) -> int:
        return self.x.shape[0]


@dataclass(eq=False)
class BlockJacobian:
    """2d x 2d symplectic matrix in (A, B; C, D) block form."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.a, self.b], [self.c, self.d]])

    def inverse_blocks(self) -> "BlockJacobian":
        """Closed-form symplectic inverse (D^T, -B^T; -C^T, A^T)."""
        return BlockJacobian(self.d.T, -self.b.T, -self.c.T, self.a.T)

    def symplectic_defect(self) -> float:
        """Max norm violation of the three block identities."""
        eye = np.eye(self.dim)
        d1 = self.a.T @ self.c - self.c.T @ self.a
        d2 = self.b.T @ self.d - self.d.T @ self.b
        d3 = self.a.T @ self.d - self.c.T @ self.b - eye
        return max(np.abs(d1).max(), np.abs(d2).max(), np.abs(d3).max())


def step(p: PhasePoint, basis: PotentialBasis, xi) -> PhasePoint:
    """One kicked step forward."""
    g = basis.kick_gradient(xi, p.x)
    v_next = p.v - g
    return PhasePoint(wrap01(p.x + v_next), v_next)


def step_inverse(p: PhasePoint, basis: PotentialBasis, xi) -> PhasePoint:
    """Closed-form inverse: x_prev = x - v mod Z^d, v_prev = v + grad F(x_prev)."""
    x_prev = wrap01(p.x - p.v)
    v_prev = p.v + basis.kick_gradient(xi, x_prev)
    return PhasePoint(x_prev, v_prev)


def jacobian(p, basis: PotentialBasis, xi) -> BlockJacobian:
    """Derivative of the kicked step at the point's position."""
    x = p.x if isinstance(p, PhasePoint) else as_coords(p)
    h = basis.kick_hessian(xi, x)
    eye = np.eye(basis.dim)
    return BlockJacobian(eye - h, eye.copy(), -h, eye.copy())


class OrbitSegment:
    """Phase points over a contiguous index range, with lazily cached Jacobians."""

    def __init__(self, j_start: int, xs, vs, basis=None, kicks=None):
        self.j_start = int(j_start)
        self.xs = np.atleast_2d(np.asarray(xs, dtype=float))
        self.vs = np.atleast_2d(np.asarray(vs, dtype=float))
        if self.xs.shape != self.vs.shape:
            raise ValueError("xs and vs must have matching shapes")
        self.basis = basis
        self.kicks = kicks
        self._jac_cache: dict[int, BlockJacobian] = {}

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def j_end(self) -> int:
        return self.j_start + len(self) - 1

    @property
    def times(self):
        return range(self.j_start, self.j_end + 1)

    def _idx(self, j: int) -> int:
        if not self.j_start <= j <= self.j_end:
            raise ValueError(f"time {j} outside orbit range [{self.j_start}, {self.j_end}]")
        return j - self.j_start

    def point(self, j: int) -> PhasePoint:
        i = self._idx(j)
        return PhasePoint(self.xs[i].copy(), self.vs[i].copy())

    def jacobian_at(self, j: int) -> BlockJacobian:
        """Derivative of the step from time j to j+1 (cached)."""
        if j not in self._jac_cache:
            if self.basis is None or self.kicks is None:
                raise ValueError("orbit carries no basis/kicks for Jacobians")
            i = self._idx(j)
            self._jac_cache[j] = jacobian(self.xs[i], self.basis, self.kicks.xi(j))
        return self._jac_cache[j]

    def step_defect(self) -> float:
        """Sup over consecutive pairs of the one-step consistency residual."""
        worst = 0.0
        for j in range(self.j_start, self.j_end):
            i = j - self.j_start
            q = step(PhasePoint(self.xs[i], self.vs[i]), self.basis, self.kicks.xi(j))
            dx = np.abs(wrap_half(q.x - self.xs[i + 1])).max()
            dv = np.abs(q.v - self.vs[i + 1]).max()
            worst = max(worst, dx, dv)
        return worst


def flow(p: PhasePoint, basis: PotentialBasis, kicks, m: int, n: int) -> OrbitSegment:
    """Iterate the maps from time m (where p sits) to time n; n < m runs backward."""
    if n == m:
        return OrbitSegment(m, p.x[None, :], p.v[None, :], basis, kicks)
    pts = [p]
    if n > m:
        for j in range(m, n):
            pts.append(step(pts[-1], basis, kicks.xi(j)))
        j0 = m
    else:
        for j in range(m, n, -1):
            pts.append(step_inverse(pts[-1], basis, kicks.xi(j - 1)))
        pts.reverse()
        j0 = n
    xs = np.stack([q.x for q in pts])
    vs = np.stack([q.v for q in pts])
    return OrbitSegment(j0, xs, vs, basis, kicks)


def orbit_action(orbit: OrbitSegment, b) -> float:
    """Discrete action of the orbit's configuration using velocities as lifts."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    total = 0.0
    for j in range(orbit.j_start, orbit.j_end):
        i = j - orbit.j_start
        disp = orbit.vs[i + 1]
        fval, _, _ = orbit.basis.eval(orbit.kicks.xi(j), orbit.xs[i])
        total += 0.5 * float(disp @ disp) - float(b @ disp) - fval
    return total
