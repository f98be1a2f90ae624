"""Trace-class Q-Wiener sampling, Ito integrals and seeded Monte Carlo.

Sampling is counter-based: the pair (seed, sample_index) keys a Philox
generator, so any path is a pure function of its indices and results are
bit-identical across runs, execution orders and worker counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, NumericalError, ParameterError


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Covariance spectrum nu_m >= 0 of the Q-Wiener process."""

    q_eigenvalues: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_eigenvalues, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ParameterError("q_eigenvalues must be a nonempty 1-d array")
        if np.any(q < 0.0) or not np.all(np.isfinite(q)):
            raise ParameterError("q_eigenvalues must be finite and >= 0")
        q.setflags(write=False)
        object.__setattr__(self, "q_eigenvalues", q)

    @property
    def trace(self) -> float:
        return float(np.sum(self.q_eigenvalues))

    @property
    def n_modes(self) -> int:
        return self.q_eigenvalues.size


def power_law_spectrum(n_modes: int, decay: float = 2.0, trace: float = 1.0) -> NoiseSpec:
    """nu_m proportional to m^-decay, normalized to the requested trace."""
    if decay <= 1.0:
        raise ParameterError(f"spectral decay must exceed 1 for a finite trace, got {decay}")
    raw = np.arange(1, n_modes + 1, dtype=float) ** -decay
    return NoiseSpec(raw * (trace / np.sum(raw)))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """One sampled path: increments[k, m] = sqrt(nu_m) (w_m(t_{k+1}) - w_m(t_k))."""

    t_grid: np.ndarray      # (K+1,) strictly increasing, t_0 = 0
    increments: np.ndarray  # (K, n_modes)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[1]

    def total(self) -> np.ndarray:
        """W(T) coefficients: telescoping sum of the increments."""
        return np.sum(self.increments, axis=0)


def check_grid(t_grid: np.ndarray) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ParameterError("time grid needs at least two points")
    if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
        raise ParameterError("time grid must start at 0 and be strictly increasing")
    return t


def _generator(seed: int, sample_index: int) -> np.random.Generator:
    key = np.array([seed, sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_wiener(t_grid: np.ndarray, noise: NoiseSpec, seed: int,
                  sample_index: int) -> WienerPath:
    """Draw one Q-Wiener path on the grid; pure in (seed, sample_index)."""
    t = check_grid(t_grid)
    dt = np.diff(t)
    xi = _generator(seed, sample_index).standard_normal((dt.size, noise.n_modes))
    scale = np.sqrt(np.outer(dt, noise.q_eigenvalues))
    return WienerPath(t_grid=t, increments=scale * xi)


def ito_integral(integrand: np.ndarray, path: WienerPath) -> np.ndarray:
    """Left-point (Ito) rectangle sum: sum_k Phi(t_k) . dW_k.

    ``integrand`` holds the diagonal Hilbert-Schmidt multiplier per step,
    shape (K, n_modes), or a constant (n_modes,) row.  Adaptedness is the
    caller's obligation: row k may depend on information up to t_k only.
    """
    phi = np.asarray(integrand, dtype=float)
    if phi.ndim == 1:
        phi = np.broadcast_to(phi, path.increments.shape)
    if phi.shape != path.increments.shape:
        raise GridMismatchError(
            f"integrand shape {phi.shape} does not match increments {path.increments.shape}")
    return np.sum(phi * path.increments, axis=0)


def hs_norm_sq(multiplier: np.ndarray, noise: NoiseSpec) -> float | np.ndarray:
    """Squared L^0_2 norm of a diagonal multiplier: sum_m phi_m^2 nu_m."""
    phi = np.asarray(multiplier, dtype=float)
    return np.sum(phi ** 2 * noise.q_eigenvalues, axis=-1)


def mc_expect(fn, n_samples: int, seed: int, workers: int = 1):
    """Sample mean and standard error of fn(seed, i) over i = 0..n-1.

    The sample set depends only on (seed, n_samples); the accumulation is a
    fixed-shape pairwise sum, so the result is independent of scheduling
    and of ``workers``.
    """
    if n_samples < 2:
        raise ParameterError(f"need n_samples >= 2, got {n_samples}")
    first = np.asarray(fn(seed, 0), dtype=float)
    values = np.empty((n_samples,) + first.shape)
    values[0] = first

    def run(i: int):
        values[i] = fn(seed, i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(1, n_samples)))
    else:
        for i in range(1, n_samples):
            run(i)
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.all(np.isfinite(values.reshape(n_samples, -1)), axis=1))[0][0])
        raise NumericalError(f"non-finite Monte Carlo sample at index {bad}", sample_index=bad)
    mean = np.mean(values, axis=0)
    stderr = np.std(values, axis=0, ddof=1) / math.sqrt(n_samples)
    if mean.shape == ():
        return float(mean), float(stderr)
    return mean, stderr


def bdg_constant(p: float) -> float:
    """kappa(p) = (p(p-1)/2)^(p/2) * (p/(p-1))^(p(p/2-1)) for p >= 2."""
    if p < 2.0:
        raise ParameterError(f"moment order p must be >= 2, got {p}")
    if p == 2.0:
        return 1.0
    return (0.5 * p * (p - 1.0)) ** (0.5 * p) * (p / (p - 1.0)) ** (p * (0.5 * p - 1.0))


@dataclass
class BdgReport:
    """One row of the moment-bound check for a deterministic integrand."""

    label: str
    p: float
    kappa: float
    lhs_mean: float      # E || int Phi dW ||^p
    lhs_stderr: float
    rhs: float           # kappa(p) (int ||Phi||^2_{L02} dt)^(p/2), exact
    ratio: float         # lhs / rhs, defined as 0 when both sides vanish
    ratio_stderr: float

    @property
    def holds(self) -> bool:
        return self.ratio <= 1.0 + 3.0 * self.ratio_stderr


def bdg_check(p: float, integrands: dict[str, np.ndarray], t_grid: np.ndarray,
              noise: NoiseSpec, n_samples: int, seed: int,
              workers: int = 1) -> list[BdgReport]:
    """Empirical Burkholder-Davis-Gundy check over a family of deterministic
    diagonal integrands.

    All family members share the same sampled paths, so rows are directly
    comparable.
    """
    kappa = bdg_constant(p)
    t = check_grid(t_grid)
    dt = np.diff(t)
    labels = list(integrands)
    shaped = {}
    for label in labels:
        phi = np.asarray(integrands[label], dtype=float)
        if phi.ndim == 1:
            phi = np.broadcast_to(phi, (dt.size, noise.n_modes))
        if phi.shape != (dt.size, noise.n_modes):
            raise GridMismatchError(f"integrand {label!r} has shape {phi.shape}, "
                                    f"expected {(dt.size, noise.n_modes)}")
        shaped[label] = phi

    def one_sample(s: int, i: int) -> np.ndarray:
        path = sample_wiener(t, noise, s, i)
        return np.array([
            np.linalg.norm(ito_integral(shaped[label], path)) ** p for label in labels])

    means, stderrs = mc_expect(one_sample, n_samples, seed, workers=workers)
    reports = []
    for j, label in enumerate(labels):
        quad_var = float(np.sum(hs_norm_sq(shaped[label], noise) * dt))
        rhs = kappa * quad_var ** (0.5 * p)
        if rhs == 0.0:
            ratio = 0.0 if means[j] == 0.0 else math.inf
            rstderr = 0.0
        else:
            ratio = float(means[j]) / rhs
            rstderr = float(stderrs[j]) / rhs
        reports.append(BdgReport(label=label, p=p, kappa=kappa,
                                 lhs_mean=float(means[j]), lhs_stderr=float(stderrs[j]),
                                 rhs=rhs, ratio=ratio, ratio_stderr=rstderr))
    return reports
