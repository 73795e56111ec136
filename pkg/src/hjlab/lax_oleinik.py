"""Backward and forward Lax-Oleinik operators on uniform torus grids.

One step is an exact infimal (or supremal) convolution over all grid
nodes.  The quadratic kinetic cost with integer lifts separates per axis,
so a d-dimensional step reduces to d one-dimensional min-convolutions
with a precomputed (N x N) kernel; this is the exact O(N^{2d}) pass
organized as O(d N^{d+1}) work.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .potentials import KickSequence, PotentialBasis


@dataclass(eq=False)
class GridField:
    """Scalar function sampled at the uniform grid nodes i/N of T^d."""

    values: np.ndarray
    time: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.shape[0]
        if any(s != n for s in self.values.shape):
            raise ValueError("grid must have equal resolution per axis")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def normalized(self) -> "GridField":
        """Gauge-fix the additive constant so the minimum is zero."""
        return GridField(self.values - self.values.min(), self.time)

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def interp(self, x) -> float:
        """Periodic multilinear interpolation at one point."""
        x = np.atleast_1d(np.asarray(x, dtype=float)) % 1.0
        pos = x * self.n
        base = np.floor(pos).astype(int)
        frac = pos - base
        out = 0.0
        for corner in range(1 << self.dim):
            w = 1.0
            idx = []
            for k in range(self.dim):
                if corner >> k & 1:
                    w *= frac[k]
                    idx.append((base[k] + 1) % self.n)
                else:
                    w *= 1.0 - frac[k]
                    idx.append(base[k] % self.n)
            out += w * self.values[tuple(idx)]
        return float(out)

    def gradient_grid(self) -> np.ndarray:
        """Central-difference gradient at every node, shape (d, N, ..., N)."""
        comps = []
        for ax in range(self.dim):
            comps.append((np.roll(self.values, -1, axis=ax)
                          - np.roll(self.values, 1, axis=ax)) / (2.0 * self.h))
        return np.stack(comps)

    def gradient_at(self, x) -> np.ndarray:
        grads = self.gradient_grid()
        return np.array([GridField(g).interp(x) for g in grads])

    def one_sided_gap(self, x) -> float:
        """Max disagreement of forward/backward differences near x (kink screen)."""
        x = np.atleast_1d(np.asarray(x, dtype=float)) % 1.0
        base = np.floor(x * self.n).astype(int) % self.n
        worst = 0.0
        for ax in range(self.dim):
            for node_off in (0, 1):
                idx = list(base)
                idx[ax] = (base[ax] + node_off) % self.n
                up = list(idx)
                up[ax] = (idx[ax] + 1) % self.n
                dn = list(idx)
                dn[ax] = (idx[ax] - 1) % self.n
                fwd = (self.values[tuple(up)] - self.values[tuple(idx)]) / self.h
                bwd = (self.values[tuple(idx)] - self.values[tuple(dn)]) / self.h
                worst = max(worst, abs(fwd - bwd))
        return worst

    def second_difference_max(self) -> float:
        """Largest axis-aligned second central difference over the grid."""
        worst = -np.inf
        for ax in range(self.dim):
            d2 = (np.roll(self.values, -1, axis=ax) - 2.0 * self.values
                  + np.roll(self.values, 1, axis=ax)) / self.h ** 2
            worst = max(worst, float(d2.max()))
        return worst

    def save(self, prefix) -> None:
        """Flat binary values plus a JSON header."""
        prefix = Path(prefix)
        header = {"dim": self.dim, "n": self.n, "time": self.time, "dtype": "float64",
                  "order": "C"}
        prefix.with_suffix(".json").write_text(json.dumps(header, sort_keys=True))
        prefix.with_suffix(".bin").write_bytes(self.values.astype(np.float64).tobytes())

    @classmethod
    def load(cls, prefix) -> "GridField":
        prefix = Path(prefix)
        header = json.loads(prefix.with_suffix(".json").read_text())
        raw = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype=np.float64)
        values = raw.reshape((header["n"],) * header["dim"]).copy()
        return cls(values, header.get("time"))

    def to_csv(self, path) -> None:
        path = Path(path)
        coords = self.axis_coords()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k}" for k in range(self.dim)] + ["value"])
            it = np.ndindex(self.values.shape)
            for idx in it:
                writer.writerow([repr(coords[i]) for i in idx] + [repr(self.values[idx])])


def quotient_distance(f: GridField, g: GridField) -> float:
    """Sup-norm distance modulo additive constants."""
    if f.values.shape != g.values.shape:
        raise ValueError("grid resolutions differ")
    diff = f.values - g.values
    return 0.5 * float(diff.max() - diff.min())


@lru_cache(maxsize=64)
def step_cost_matrix(n: int, b_k: float, lift_radius: int) -> np.ndarray:
    """kc[a, c] = min over lifts of 1/2 dx^2 - b dx for dx = c/n - a/n + t."""
    ts = np.arange(-lift_radius, lift_radius + 1, dtype=float)
    coords = np.arange(n, dtype=float) / n
    disp = coords[None, :] - coords[:, None]
    cand = disp[:, :, None] + ts[None, None, :]
    return np.min(0.5 * cand ** 2 - b_k * cand, axis=2)


def _axis_costs(n: int, b, dim: int, lift_radius: int):
    b = np.broadcast_to(np.asarray(b, dtype=float), (dim,))
    return [step_cost_matrix(n, float(bk), lift_radius) for bk in b]


def _min_convolve(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    out = np.min(moved[..., :, None] + kernel, axis=-2)
    return np.moveaxis(out, -1, axis)


def _max_convolve(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    # kernel indexed [target, source]: out[i] = max_a values[a] - kernel[i, a]
    moved = np.moveaxis(values, axis, -1)
    out = np.max(moved[..., None, :] - kernel, axis=-1)
    return np.moveaxis(out, -1, axis)


def backward_step_values(values: np.ndarray, f_grid: np.ndarray, costs) -> np.ndarray:
    """out(x) = min_y [values(y) - F(y) + kinetic(y, x)] over all grid y."""
    out = values - f_grid
    for ax, kc in enumerate(costs):
        out = _min_convolve(out, kc, ax)
    return out


def forward_step_values(values: np.ndarray, f_grid: np.ndarray, costs) -> np.ndarray:
    """out(x) = F(x) + max_y [values(y) - kinetic(x, y)] over all grid y."""
    out = values
    for ax, kc in enumerate(costs):
        out = _max_convolve(out, kc, ax)
    return out + f_grid


def apply_backward(phi: GridField, b, basis: PotentialBasis, xi,
                   lift_radius: int = 2) -> GridField:
    """One backward Lax-Oleinik step of the field by the kick xi."""
    costs = _axis_costs(phi.n, b, phi.dim, lift_radius)
    f_grid = basis.kick_grid(xi, phi.n)
    t = None if phi.time is None else phi.time + 1
    return GridField(backward_step_values(phi.values, f_grid, costs), t)


def apply_forward(phi: GridField, b, basis: PotentialBasis, xi,
                  lift_radius: int = 2) -> GridField:
    """One forward (supremal) Lax-Oleinik step of the field by the kick xi."""
    costs = _axis_costs(phi.n, b, phi.dim, lift_radius)
    f_grid = basis.kick_grid(xi, phi.n)
    t = None if phi.time is None else phi.time - 1
    return GridField(forward_step_values(phi.values, f_grid, costs), t)


@dataclass
class ConvergenceReport:
    depths: list
    distances: list
    converged: bool
    depth: int
    tol: float

    def rate(self) -> float:
        """Observed geometric decay ratio between the last two distances."""
        if len(self.distances) < 2 or self.distances[-2] == 0.0:
            return 0.0
        return self.distances[-1] / self.distances[-2]

    def as_dict(self) -> dict:
        return {
            "depths": list(self.depths),
            "distances": [float(v) for v in self.distances],
            "converged": self.converged,
            "depth": self.depth,
            "tol": self.tol,
            "rate": self.rate(),
        }


@dataclass
class SolveResult:
    fields: dict  # time -> GridField, gauge-fixed to min zero
    report: ConvergenceReport

    def at(self, t: int) -> GridField:
        return self.fields[t]


def _run_backward(basis, kicks, b, n, t_end, depth, keep, lift_radius):
    costs = _axis_costs(n, b, basis.dim, lift_radius)
    vals = np.zeros((n,) * basis.dim)
    kept = {}
    for j in range(t_end - depth, t_end):
        vals = backward_step_values(vals, basis.kick_grid(kicks.xi(j), n), costs)
        t = j + 1
        if t > t_end - keep:
            kept[t] = GridField(vals - vals.min(), t)
    if depth == 0:
        kept[t_end] = GridField(vals, t_end)
    return kept


def _run_forward(basis, kicks, b, n, t_start, depth, keep, lift_radius):
    costs = _axis_costs(n, b, basis.dim, lift_radius)
    vals = np.zeros((n,) * basis.dim)
    kept = {}
    for j in range(t_start + depth - 1, t_start - 1, -1):
        vals = forward_step_values(vals, basis.kick_grid(kicks.xi(j), n), costs)
        if j < t_start + keep:
            kept[j] = GridField(vals - vals.min(), j)
    if depth == 0:
        kept[t_start] = GridField(vals, t_start)
    return kept


def _doubling_solve(runner, t_anchor, depth0, max_depth, tol, keep):
    depth = depth0
    prev = runner(depth, keep)
    depths = [depth]
    distances = []
    converged = False
    while depth < max_depth:
        depth = min(2 * depth, max_depth)
        cur = runner(depth, keep)
        dist = quotient_distance(cur[t_anchor], prev[t_anchor])
        depths.append(depth)
        distances.append(dist)
        prev = cur
        if dist < tol:
            converged = True
            break
    return prev, ConvergenceReport(depths, distances, converged, depth, tol)


def solve_backward(basis: PotentialBasis, kicks: KickSequence, b, n: int, t_end: int,
                   depth0: int = 8, max_depth: int = 256, tol: float = 1e-6,
                   keep: int = 1, lift_radius: int = 2) -> SolveResult:
    """Iterate the backward operator from zero data at doubling depths.

    Stops when consecutive depths agree at t_end in quotient distance, or at
    max_depth with the final distance recorded (reported, not fatal).  The
    kept fields are the trailing `keep` time slices of the deepest run, each
    gauge-fixed to minimum zero.
    """

    def runner(depth, keep_):
        return _run_backward(basis, kicks, b, n, t_end, depth, keep_, lift_radius)

    fields, report = _doubling_solve(runner, t_end, depth0, max_depth, tol, keep)
    return SolveResult(fields, report)


def solve_forward(basis: PotentialBasis, kicks: KickSequence, b, n: int, t_start: int,
                  depth0: int = 8, max_depth: int = 256, tol: float = 1e-6,
                  keep: int = 1, lift_radius: int = 2) -> SolveResult:
    """Mirror image of solve_backward, iterating into the future from t_start."""

    def runner(depth, keep_):
        return _run_forward(basis, kicks, b, n, t_start, depth, keep_, lift_radius)

    fields, report = _doubling_solve(runner, t_start, depth0, max_depth, tol, keep)
    return SolveResult(fields, report)
