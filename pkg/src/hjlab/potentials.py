"""Fourier potential bases on the torus and seeded kick sampling.

Potentials are finite real Fourier series, so values, gradients and
Hessians are exact for the stored coefficients and the smoothness needed
by the downstream derivative checks is automatic.  Kick vectors are drawn
from independent per-index streams keyed by (seed, index), which makes a
realization reproducible and insensitive to the order or range in which
indices are requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap01(x):
    """Reduce coordinates to the fundamental domain [0, 1)^d."""
    return np.asarray(x, dtype=float) % 1.0


def wrap_half(x):
    """Wrap displacements to the nearest representative in [-1/2, 1/2)^d."""
    return (np.asarray(x, dtype=float) + 0.5) % 1.0 - 0.5


@dataclass(frozen=True, eq=False)
class TorusPoint:
    """A point on T^d with coordinates stored in [0, 1)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(wrap01(self.coords))
        if c.ndim != 1:
            raise ValueError("TorusPoint takes a single coordinate vector")
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __repr__(self):
        return f"TorusPoint({self.coords.tolist()})"


def as_coords(x) -> np.ndarray:
    """Accept a TorusPoint or array-like and return reduced coordinates."""
    if isinstance(x, TorusPoint):
        return x.coords
    return np.atleast_1d(wrap01(x))


class FourierSeries:
    """Finite real Fourier series sum_k a_k cos(2 pi k.x) + b_k sin(2 pi k.x)."""

    def __init__(self, freqs, cos_coef, sin_coef=None):
        self.freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
        k = self.freqs.shape[0]
        self.cos_coef = np.zeros(k) if cos_coef is None else np.asarray(cos_coef, dtype=float)
        self.sin_coef = np.zeros(k) if sin_coef is None else np.asarray(sin_coef, dtype=float)
        if self.cos_coef.shape != (k,) or self.sin_coef.shape != (k,):
            raise ValueError("coefficient arrays must match the number of frequencies")

    @property
    def dim(self) -> int:
        return self.freqs.shape[1]

    def _phases(self, pts):
        return TWO_PI * pts @ self.freqs.T

    def value(self, pts):
        """Evaluate at points of shape (d,) or (n, d)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ph = self._phases(pts)
        out = np.cos(ph) @ self.cos_coef + np.sin(ph) @ self.sin_coef
        return out[0] if out.shape == (1,) else out

    def gradient(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ph = self._phases(pts)
        coef = -np.sin(ph) * self.cos_coef + np.cos(ph) * self.sin_coef
        out = TWO_PI * coef @ self.freqs
        return out[0] if out.shape[0] == 1 and pts.shape[0] == 1 else out

    def hessian(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ph = self._phases(pts)
        coef = -np.cos(ph) * self.cos_coef - np.sin(ph) * self.sin_coef
        out = (TWO_PI ** 2) * np.einsum("nk,ki,kj->nij", coef, self.freqs, self.freqs)
        return out[0] if pts.shape[0] == 1 else out

    def c2_bound(self) -> float:
        """Upper bound for sup|F| + sup|grad F| + sup|hess F| from coefficients."""
        amp = np.hypot(self.cos_coef, self.sin_coef)
        knorm = np.linalg.norm(self.freqs, axis=1)
        w = TWO_PI * knorm
        return float(np.sum(amp * (1.0 + w + w ** 2)))


def _cosine(dim, axis):
    e = np.zeros((1, dim))
    e[0, axis] = 1.0
    return FourierSeries(e, [1.0], [0.0])


def _sine(dim, axis):
    e = np.zeros((1, dim))
    e[0, axis] = 1.0
    return FourierSeries(e, [0.0], [1.0])


class PotentialBasis:
    """An ordered family (F_1, ..., F_M) of Fourier potentials on T^d.

    The kicked potential at time j is the linear combination
    sum_i xi_j[i] * F_i; the configs declare (and this code does not check)
    that (F_1, ..., F_M) embeds the torus.
    """

    def __init__(self, functions):
        self.functions = tuple(functions)
        if not self.functions:
            raise ValueError("basis must contain at least one function")
        dims = {f.dim for f in self.functions}
        if len(dims) != 1:
            raise ValueError("basis functions must share a dimension")
        self.dim = dims.pop()
        self._bounds = np.array([f.c2_bound() for f in self.functions])
        self._grid_cache: dict[int, np.ndarray] = {}

    @property
    def size(self) -> int:
        return len(self.functions)

    def _check_xi(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.size,):
            raise ValueError(
                f"kick vector has length {xi.shape}, basis expects ({self.size},)"
            )
        return xi

    def eval(self, xi, x):
        """Value, gradient and Hessian of sum_i xi[i] F_i at a torus point."""
        xi = self._check_xi(xi)
        pts = as_coords(x)
        val = 0.0
        grad = np.zeros(self.dim)
        hess = np.zeros((self.dim, self.dim))
        for c, f in zip(xi, self.functions):
            if c == 0.0:
                continue
            val += c * f.value(pts)
            grad += c * f.gradient(pts)
            hess += c * f.hessian(pts)
        return val, grad, hess

    def kick_gradient(self, xi, pts):
        """Gradient at one point or a batch of points (rows)."""
        xi = self._check_xi(xi)
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        batch = np.atleast_2d(pts)
        out = np.zeros_like(batch)
        for c, f in zip(xi, self.functions):
            if c != 0.0:
                out += c * np.atleast_2d(f.gradient(batch))
        return out[0] if single else out

    def kick_hessian(self, xi, x):
        xi = self._check_xi(xi)
        pts = as_coords(x)
        out = np.zeros((self.dim, self.dim))
        for c, f in zip(xi, self.functions):
            if c != 0.0:
                out += c * f.hessian(pts)
        return out

    def c2_norm(self, xi) -> float:
        """Certified C^2 bound for the kick, componentwise monotone in |xi|."""
        xi = self._check_xi(xi)
        return float(np.abs(xi) @ self._bounds)

    def grid_points(self, n) -> np.ndarray:
        """Uniform grid nodes i/n as an (n^d, d) array in C order."""
        axes = [np.arange(n) / n] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def value_grids(self, n) -> np.ndarray:
        """Values of every basis function on the uniform n^d grid, shape (M, n, ..., n)."""
        if n not in self._grid_cache:
            pts = self.grid_points(n)
            shape = (self.size,) + (n,) * self.dim
            vals = np.stack([np.atleast_1d(f.value(pts)) for f in self.functions])
            self._grid_cache[n] = vals.reshape(shape)
        return self._grid_cache[n]

    def kick_grid(self, xi, n) -> np.ndarray:
        """Values of the kicked potential on the uniform grid."""
        xi = self._check_xi(xi)
        return np.tensordot(xi, self.value_grids(n), axes=1)


def default_basis(dim: int) -> PotentialBasis:
    """cos/sin of each coordinate: an embedding basis with 2*d functions."""
    if dim not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    funcs = []
    for axis in range(dim):
        funcs.append(_cosine(dim, axis))
        funcs.append(_sine(dim, axis))
    return PotentialBasis(funcs)


def constants_basis(dim: int, m: int = 2) -> PotentialBasis:
    """Constant potentials only; deliberately violates the embedding hypothesis."""
    zero = np.zeros((1, dim))
    return PotentialBasis([FourierSeries(zero, [1.0], [0.0]) for _ in range(m)])


def eval_kick(basis: PotentialBasis, xi, x):
    """Value, gradient and Hessian of the kicked potential sum_i xi[i] F_i."""
    return basis.eval(xi, x)


def c2_norm(basis: PotentialBasis, xi) -> float:
    return basis.c2_norm(xi)


@dataclass(frozen=True)
class DensitySpec:
    """Law of the kick vectors: a nondegenerate Gaussian or a bounded product law.

    kind "gaussian" uses (mean, cov) with cov symmetric positive definite;
    kind "uniform" uses independent components uniform on [lo_i, hi_i].
    """

    kind: str
    mean: np.ndarray = None
    cov: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    _chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "gaussian":
            mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if cov.shape != (mean.size, mean.size):
                raise ValueError("covariance shape does not match the mean")
            if not np.allclose(cov, cov.T):
                raise ValueError("covariance must be symmetric")
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ValueError("covariance must be positive definite") from exc
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "_chol", chol)
        elif self.kind == "uniform":
            lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
            hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
            if lo.shape != hi.shape:
                raise ValueError("lo and hi must have the same length")
            if np.any(hi <= lo):
                raise ValueError("uniform bounds need hi > lo componentwise")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        else:
            raise ValueError(f"unknown density kind {self.kind!r}")

    @property
    def size(self) -> int:
        return self.mean.size if self.kind == "gaussian" else self.lo.size

    def mean_abs_bound(self) -> float:
        """Upper bound for E|xi| (componentwise sum)."""
        if self.kind == "gaussian":
            sig = np.sqrt(np.diag(self.cov))
            return float(np.sum(np.abs(self.mean) + sig * np.sqrt(2.0 / np.pi)))
        return float(np.sum(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def draw(self, seed: int, index: int, channel: int = 0) -> np.ndarray:
        """One vector from the stream keyed by (seed, channel, index)."""
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(channel, _zigzag(index)))
        )
        if self.kind == "gaussian":
            return self.mean + self._chol @ rng.standard_normal(self.size)
        return self.lo + rng.random(self.size) * (self.hi - self.lo)


def gaussian_density(m: int, sigma: float = 0.1) -> DensitySpec:
    return DensitySpec(kind="gaussian", mean=np.zeros(m), cov=(sigma ** 2) * np.eye(m))


def _zigzag(j: int) -> int:
    """Bijection Z -> N so negative indices key valid spawn entries."""
    return 2 * j if j >= 0 else -2 * j - 1


class KickSequence:
    """A seeded realization xi_j over an integer window [j_min, j_max].

    Entries are generated lazily from per-index streams, so enlarging the
    window or shifting never changes existing values, and two sequences
    with the same (spec, seed) agree wherever their windows overlap.
    """

    def __init__(self, spec: DensitySpec, seed: int, window, offset: int = 0):
        j_min, j_max = int(window[0]), int(window[1])
        if j_max < j_min:
            raise ValueError("kick window is empty")
        self.spec = spec
        self.seed = int(seed)
        self.window = (j_min, j_max)
        self.offset = int(offset)
        self._cache: dict[int, np.ndarray] = {}

    @property
    def size(self) -> int:
        return self.spec.size

    def xi(self, j: int) -> np.ndarray:
        if not self.window[0] <= j <= self.window[1]:
            raise ValueError(
                f"kick index {j} outside window [{self.window[0]}, {self.window[1]}]"
            )
        base = j + self.offset
        if base not in self._cache:
            self._cache[base] = self.spec.draw(self.seed, base)
        return self._cache[base]

    def shift(self, m: int) -> "KickSequence":
        """Time shift: shifted.xi(j) equals self.xi(j + m)."""
        shifted = KickSequence(
            self.spec,
            self.seed,
            (self.window[0] - m, self.window[1] - m),
            offset=self.offset + m,
        )
        shifted._cache = self._cache  # same underlying realization
        return shifted

    def indices(self):
        return range(self.window[0], self.window[1] + 1)


def sample_kicks(spec: DensitySpec, seed: int, window) -> KickSequence:
    """Materialize the i.i.d. kick realization for the given window."""
    return KickSequence(spec, seed, window)


def shift(kicks: KickSequence, m: int) -> KickSequence:
    return kicks.shift(m)
