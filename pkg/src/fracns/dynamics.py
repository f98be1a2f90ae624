"""Mild-solution fixed-point map on a time grid and its Picard solver.

The state satisfies the Volterra form

    z(t) = M_eta(t) z0
         + int_0^t (t-r)^(eta-1) M_{eta,eta}(t-r) [G(z(r)) + Cv(r)] dr
         + int_0^t (t-r)^(eta-1) M_{eta,eta}(t-r) hbar(r, z(r)) dW(r).

Discretization: uniform grid, the weakly singular weight (t-r)^(eta-1)
integrated exactly against piecewise-constant integrands (product
rectangle rule), Mittag-Leffler kernels evaluated at the left node, and
the stochastic term keeping the left-point kernel value times the
Brownian increment.  On a uniform grid all kernel factors depend only on
the step gap, so the update is a discrete convolution over steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    BlowUpError,
    GridMismatchError,
    ParameterError,
    PicardNonConvergenceError,
    ValidationRefusedError,
)
from .spectral import BasisSpec, SpectralField, build_basis, eval_modes_torus
from .specfun import ml_neg_array
from .stochastic import NoiseSpec, WienerPath

BLOWUP_NORM = 1e12
DEFAULT_MAX_ITER = 50
TOL_DETERMINISTIC = 1e-10
TOL_STOCHASTIC = 1e-8


@dataclass(frozen=True)
class ModelParams:
    """All scalar parameters of one problem instance."""

    eta: float
    alpha: float
    beta: float
    p: float
    nu: float
    T: float
    N: int
    K: int
    basis_kind: str = "dirichlet_sine_1d"

    def __post_init__(self):
        # eta = 1 is admitted as the classical-limit benchmark regime.
        if not (0.0 < self.eta <= 1.0):
            raise ParameterError(f"Caputo order eta must lie in (0, 1], got {self.eta}")
        if not (1.0 < self.alpha <= 2.0):
            raise ParameterError(f"alpha must lie in (1, 2], got {self.alpha}")
        if not (0.0 <= self.beta < self.alpha):
            raise ParameterError(f"beta must lie in [0, alpha), got {self.beta}")
        if self.p < 2.0:
            raise ParameterError(f"moment order p must be >= 2, got {self.p}")
        if self.nu <= 0.0:
            raise ParameterError(f"viscosity must be positive, got {self.nu}")
        if self.T <= 0.0:
            raise ParameterError(f"horizon T must be positive, got {self.T}")
        if self.K < 1 or self.N < 1:
            raise ParameterError("need K >= 1 time steps and N >= 1 modes")

    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)

    def build_basis(self) -> BasisSpec:
        return build_basis(self.basis_kind, self.N, self.nu, self.alpha)


@dataclass
class ConditionCheck:
    name: str
    description: str
    value: float
    passed: bool


@dataclass
class ValidityReport:
    checks: list[ConditionCheck]

    @property
    def all_ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def validate_params(mp: ModelParams) -> ValidityReport:
    """Evaluate the exponent conditions behind the contraction estimates.

    c1: eta*p != 1                      c2: p(1 - eta/alpha) - 1 > 0
    c3: p*eta*(1 - (beta+1)/alpha) - 1 > 0
    c4: 2*p*eta - p - 2 > 0             c5: 2*p*eta*(alpha-beta) - (p+2)*alpha > 0
    """
    eta, alpha, beta, p = mp.eta, mp.alpha, mp.beta, mp.p
    c1v = eta * p
    c2v = p * (1.0 - eta / alpha) - 1.0
    c3v = p * eta * (1.0 - (beta + 1.0) / alpha) - 1.0
    c4v = 2.0 * p * eta - p - 2.0
    c5v = 2.0 * p * eta * (alpha - beta) - (p + 2.0) * alpha
    checks = [
        ConditionCheck("c1", "eta*p != 1", c1v, abs(c1v - 1.0) > 1e-12),
        ConditionCheck("c2", "p(1 - eta/alpha) - 1 > 0", c2v, c2v > 0.0),
        ConditionCheck("c3", "p*eta*(1 - (beta+1)/alpha) - 1 > 0", c3v, c3v > 0.0),
        ConditionCheck("c4", "2*p*eta - p - 2 > 0", c4v, c4v > 0.0),
        ConditionCheck("c5", "2*p*eta*(alpha-beta) - (p+2)*alpha > 0", c5v, c5v > 0.0),
    ]
    return ValidityReport(checks)


def require_valid(mp: ModelParams, override: bool = False) -> ValidityReport:
    report = validate_params(mp)
    if not report.all_ok and not override:
        raise ValidationRefusedError(
            f"exponent conditions violated: {', '.join(report.failed)} "
            "(pass override to run anyway)", report.failed)
    return report


# ---------------------------------------------------------------------------
# Nonlinearity and noise coefficient
# ---------------------------------------------------------------------------

NONLINEARITY_KINDS = ("zero", "burgers_1d", "navier_stokes_2d")
NOISE_COEFF_KINDS = ("additive", "saturating_diagonal")


@dataclass(frozen=True)
class NonlinearitySpec:
    """Bilinear advection term with optional saturation radius R."""

    kind: str = "zero"
    R: float = math.inf

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ParameterError(f"unknown nonlinearity kind {self.kind!r}")
        if not self.R > 0.0:
            raise ParameterError(f"saturation radius must be positive, got {self.R}")

    @property
    def is_bounded(self) -> bool:
        return self.kind == "zero" or math.isfinite(self.R)


@dataclass(frozen=True)
class NoiseCoeffSpec:
    """Diagonal noise coefficient hbar: additive or tanh-saturating."""

    kind: str = "additive"
    sigma: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_COEFF_KINDS:
            raise ParameterError(f"unknown noise coefficient kind {self.kind!r}")

    def sigma_vector(self, n_modes: int) -> np.ndarray:
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 0:
            sig = np.full(n_modes, float(sig))
        if sig.shape != (n_modes,):
            raise ParameterError(f"sigma must be scalar or length-{n_modes}, got {sig.shape}")
        return sig


def noise_coeff(spec: NoiseCoeffSpec, t: float, coeffs: np.ndarray) -> np.ndarray:
    """Per-mode Hilbert-Schmidt multiplier of hbar(t, z)."""
    sig = spec.sigma_vector(np.shape(coeffs)[-1])
    if spec.kind == "additive":
        return np.broadcast_to(sig, np.shape(coeffs)).copy()
    return sig * np.tanh(coeffs)


class _Burgers1D:
    """Pseudospectral -z dz/dx on the Dirichlet sine basis.

    Collocation on the odd periodic extension (period 2) with 2N interior
    modes; products of modes <= N stay below the padded Nyquist range, so
    the 2/3-rule dealiasing constraint holds with margin and the projected
    product is exact.
    """

    def __init__(self, basis: BasisSpec):
        self.N = basis.N
        self.P = 2 * basis.N
        self.L = 2 * self.P
        m = np.arange(self.P + 1)
        self.deriv_mult = 1j * math.pi * m

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(rows)
        spec = np.zeros((rows.shape[0], self.P + 1), dtype=complex)
        spec[:, 1:self.N + 1] = -0.5j * self.L * math.sqrt(2.0) * rows
        vals = np.fft.irfft(spec, n=self.L, axis=1)
        dvals = np.fft.irfft(spec * self.deriv_mult, n=self.L, axis=1)
        prod_hat = np.fft.rfft(vals * dvals, axis=1)
        sine_coeff = np.real(2j * prod_hat[:, 1:self.N + 1] / (self.L * math.sqrt(2.0)))
        return -sine_coeff


class _NavierStokes2D:
    """Pseudospectral Leray-projected advection -P(u . grad)u on the torus."""

    def __init__(self, basis: BasisSpec):
        self.basis = basis
        kmax = int(np.max(np.abs(basis.wavevectors)))
        M = 4
        while M < 4 * kmax + 2:
            M *= 2
        self.M = M
        self.kk = np.fft.fftfreq(M, d=1.0 / M).astype(int)
        self.norm = 1.0 / (math.pi * math.sqrt(2.0))
        kn = np.hypot(basis.wavevectors[:, 0], basis.wavevectors[:, 1])
        self.pol = np.stack([-basis.wavevectors[:, 1] / kn,
                             basis.wavevectors[:, 0] / kn], axis=1)

    def _pack(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        M = self.M
        f1 = np.zeros((M, M), dtype=complex)
        f2 = np.zeros((M, M), dtype=complex)
        for j in range(self.basis.N):
            k1, k2 = self.basis.wavevectors[j]
            amp = coeffs[j] * self.norm * M * M
            d1, d2 = self.pol[j]
            half = 0.5 * amp if self.basis.trig[j] == 0 else -0.5j * amp
            f1[k1, k2] += half * d1
            f2[k1, k2] += half * d2
            f1[-k1, -k2] += np.conj(half) * d1
            f2[-k1, -k2] += np.conj(half) * d2
        return f1, f2

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(rows)
        out = np.empty_like(rows)
        M = self.M
        ik1 = 1j * self.kk[:, None]
        ik2 = 1j * self.kk[None, :]
        for r in range(rows.shape[0]):
            f1, f2 = self._pack(rows[r])
            u1 = np.fft.ifft2(f1).real
            u2 = np.fft.ifft2(f2).real
            w1 = u1 * np.fft.ifft2(ik1 * f1).real + u2 * np.fft.ifft2(ik2 * f1).real
            w2 = u1 * np.fft.ifft2(ik1 * f2).real + u2 * np.fft.ifft2(ik2 * f2).real
            w1h = np.fft.fft2(w1)
            w2h = np.fft.fft2(w2)
            # Leray projection: remove the gradient part mode by mode.
            K1 = self.kk[:, None].astype(float)
            K2 = self.kk[None, :].astype(float)
            k_sq = K1 ** 2 + K2 ** 2
            k_sq[0, 0] = 1.0
            div = (K1 * w1h + K2 * w2h) / k_sq
            w1h -= K1 * div
            w2h -= K2 * div
            for j in range(self.basis.N):
                k1, k2 = self.basis.wavevectors[j]
                d1, d2 = self.pol[j]
                a = (w1h[k1, k2] * d1 + w2h[k1, k2] * d2) / (M * M)
                if self.basis.trig[j] == 0:
                    out[r, j] = 2.0 * a.real / self.norm
                else:
                    out[r, j] = -2.0 * a.imag / self.norm
        return -out


def _advection_operator(spec: NonlinearitySpec, basis: BasisSpec):
    if spec.kind == "zero":
        return None
    if spec.kind == "burgers_1d":
        if basis.kind != "dirichlet_sine_1d":
            raise ParameterError("burgers_1d requires the dirichlet_sine_1d basis")
        return _Burgers1D(basis)
    if basis.kind != "divfree_torus_2d":
        raise ParameterError("navier_stokes_2d requires the divfree_torus_2d basis")
    return _NavierStokes2D(basis)


def nonlinearity_G(spec: NonlinearitySpec, f: SpectralField) -> SpectralField:
    """Galerkin projection of the advection term, with saturation.

    With finite R the bilinear map is multiplied by min(1, R/||z||)^2, so
    its H^{-1} size is capped by C1 R^2 for every state.
    """
    op = _advection_operator(spec, f.basis)
    if op is None:
        return SpectralField(np.zeros_like(f.coeffs), f.basis)
    raw = op(f.coeffs[None, :])[0]
    return SpectralField(raw * _saturation_factor(spec.R, f.norm()) , f.basis)


def _saturation_factor(R: float, norm) -> float | np.ndarray:
    if not math.isfinite(R):
        return 1.0 if np.ndim(norm) == 0 else np.ones_like(norm)
    return np.minimum(1.0, R / np.maximum(norm, 1e-300)) ** 2


# ---------------------------------------------------------------------------
# Kernel tables and the fixed-point map
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelTables:
    """Gap-indexed kernel factors on a uniform grid.

    E1[j, m] = E_{eta,1}(-mu_m (j dt)^eta)        j = 0..K
    EE[j, m] = E_{eta,eta}(-mu_m (j dt)^eta)
    w[j]     = exact integral of (t-r)^(eta-1) over one subinterval at gap j
    sk[j]    = (j dt)^(eta-1), the left-point stochastic kernel weight
    """

    eta: float
    dt: float
    E1: np.ndarray
    EE: np.ndarray
    w: np.ndarray
    sk: np.ndarray


def build_kernel_tables(eta: float, mu: np.ndarray, T: float, K: int) -> KernelTables:
    dt = T / K
    j = np.arange(K + 1, dtype=float)
    t_pow = (j * dt) ** eta
    y = t_pow[:, None] * np.asarray(mu, dtype=float)[None, :]
    E1 = ml_neg_array(eta, 1.0, y)
    EE = ml_neg_array(eta, eta, y)
    w = np.zeros(K + 1)
    w[1:] = dt ** eta * (j[1:] ** eta - (j[1:] - 1.0) ** eta) / eta
    sk = np.zeros(K + 1)
    sk[1:] = (j[1:] * dt) ** (eta - 1.0)
    for arr in (E1, EE, w, sk):
        arr.setflags(write=False)
    return KernelTables(eta=eta, dt=dt, E1=E1, EE=EE, w=w, sk=sk)


@dataclass
class MildProblem:
    """Assembled operators of one problem instance."""

    mp: ModelParams
    basis: BasisSpec
    tables: KernelTables
    nonlinearity: NonlinearitySpec
    noise_coeff_spec: NoiseCoeffSpec
    noise: NoiseSpec
    _advection: object = field(default=None, repr=False)

    def G_rows(self, rows: np.ndarray) -> np.ndarray:
        """Saturated advection term for a batch of coefficient rows."""
        if self._advection is None:
            return np.zeros_like(rows)
        raw = self._advection(rows)
        norms = np.linalg.norm(rows, axis=1)
        return raw * _saturation_factor(self.nonlinearity.R, norms)[:, None]

    def hbar_rows(self, t: np.ndarray, rows: np.ndarray) -> np.ndarray:
        sig = self.noise_coeff_spec.sigma_vector(self.basis.N)
        if self.noise_coeff_spec.kind == "additive":
            return np.broadcast_to(sig, rows.shape).copy()
        return sig[None, :] * np.tanh(rows)


def assemble(mp: ModelParams, nonlinearity: NonlinearitySpec,
             noise_coeff_spec: NoiseCoeffSpec, noise: NoiseSpec) -> MildProblem:
    basis = mp.build_basis()
    if noise.n_modes != basis.N:
        raise GridMismatchError(
            f"noise spectrum has {noise.n_modes} modes, basis has {basis.N}")
    tables = build_kernel_tables(mp.eta, basis.frac_eigenvalues, mp.T, mp.K)
    problem = MildProblem(mp=mp, basis=basis, tables=tables,
                          nonlinearity=nonlinearity,
                          noise_coeff_spec=noise_coeff_spec, noise=noise)
    problem._advection = _advection_operator(nonlinearity, basis)
    return problem


def _gap_convolve(kernel: np.ndarray, rows: np.ndarray, K: int) -> np.ndarray:
    """out[i] = sum_{j=1..i} kernel[j] * rows[i-j] for i = 0..K.

    kernel has K+1 gap rows with kernel[0] = 0; rows has K step rows.
    """
    full = fftconvolve(kernel, rows, axes=0)
    return full[:K + 1]


def evaluate_F_lambda(z_path: np.ndarray, W: WienerPath | None,
                      forcing: np.ndarray | None,
                      problem: MildProblem) -> np.ndarray:
    """One application of the mild map to a whole path.

    z_path: (K+1, N) current iterate; forcing: (K, N) values of Cv at the
    left nodes, or None; W: sampled noise path, or None for deterministic
    runs.  Returns the new (K+1, N) path.
    """
    mp = problem.mp
    K, N = mp.K, problem.basis.N
    if z_path.shape != (K + 1, N):
        raise GridMismatchError(f"path shape {z_path.shape}, expected {(K + 1, N)}")
    t = mp.t_grid()
    tab = problem.tables

    g = problem.G_rows(z_path[:K])
    if forcing is not None:
        if forcing.shape != (K, N):
            raise GridMismatchError(f"forcing shape {forcing.shape}, expected {(K, N)}")
        g = g + forcing
    det_kernel = tab.w[:, None] * tab.EE
    new = tab.E1 * z_path[0][None, :] + _gap_convolve(det_kernel, g, K)

    if W is not None:
        if W.increments.shape != (K, N):
            raise GridMismatchError(
                f"noise increments {W.increments.shape}, expected {(K, N)}")
        h = problem.hbar_rows(t[:K], z_path[:K]) * W.increments
        sto_kernel = tab.sk[:, None] * tab.EE
        new = new + _gap_convolve(sto_kernel, h, K)
    return new


@dataclass
class SolveResult:
    path: np.ndarray                 # (K+1, N)
    picard_iterations: int
    final_residual: float
    residual_history: list[float]
    diagnostics: dict

    def field_at(self, i: int, basis: BasisSpec) -> SpectralField:
        return SpectralField(self.path[i].copy(), basis)


def picard_solve(problem: MildProblem, z0: np.ndarray,
                 W: WienerPath | None = None,
                 control=None,
                 tol: float | None = None,
                 max_iter: int = DEFAULT_MAX_ITER,
                 override_validation: bool = False) -> SolveResult:
    """Iterate the mild map from z^(0)(t) = M_eta(t) z0 to its fixed point.

    ``control`` is either None, a fixed (K, N) array of Cv values, or a
    callable (z_path, W) -> (K, N) adapted forcing (the feedback closure).
    """
    mp = problem.mp
    require_valid(mp, override=override_validation)
    if tol is None:
        tol = TOL_STOCHASTIC if W is not None else TOL_DETERMINISTIC
    if tol <= 0.0:
        raise ParameterError("tolerance must be positive")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (problem.basis.N,):
        raise ParameterError(f"initial state must have shape ({problem.basis.N},)")

    path = problem.tables.E1 * z0[None, :]
    history: list[float] = []
    for iteration in range(1, max_iter + 1):
        if callable(control):
            forcing = control(path, W)
        else:
            forcing = control
        new = evaluate_F_lambda(path, W, forcing, problem)
        if not np.all(np.isfinite(new)):
            raise BlowUpError("non-finite state in Picard iteration",
                              iteration=iteration, residual_history=history)
        max_norm = float(np.max(np.linalg.norm(new, axis=1)))
        if max_norm > BLOWUP_NORM:
            raise BlowUpError(f"state norm {max_norm:.3e} crossed the blow-up guard",
                              iteration=iteration, residual_history=history)
        residual = float(np.max(np.linalg.norm(new - path, axis=1)))
        history.append(residual)
        path = new
        if residual < tol:
            return SolveResult(path=path, picard_iterations=iteration,
                               final_residual=residual, residual_history=history,
                               diagnostics={"tol": tol, "max_norm": max_norm})
    raise PicardNonConvergenceError(
        f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations",
        history, tol=tol)


# ---------------------------------------------------------------------------
# Independent classical reference (eta = 1)
# ---------------------------------------------------------------------------

def exponential_euler_reference(problem: MildProblem, z0: np.ndarray,
                                forcing: np.ndarray | None = None) -> np.ndarray:
    """Classical exponential-Euler integrator for the eta = 1 limit.

    z_{i+1} = e^(-mu dt) z_i + (1 - e^(-mu dt))/mu * (G(z_i) + f_i).
    A step-by-step recursion, independent of the Volterra convolution path.
    """
    mp = problem.mp
    mu = problem.basis.frac_eigenvalues
    dt = mp.T / mp.K
    decay = np.exp(-mu * dt)
    # -expm1(-mu dt)/mu, stable for mu -> 0
    weight = -np.expm1(-mu * dt) / np.where(mu > 0, mu, 1.0)
    weight = np.where(mu > 0, weight, dt)
    path = np.empty((mp.K + 1, problem.basis.N))
    path[0] = z0
    for i in range(mp.K):
        g = problem.G_rows(path[i][None, :])[0]
        if forcing is not None:
            g = g + forcing[i]
        path[i + 1] = decay * path[i] + weight * g
    return path


def richardson_order(problem_factory, z0: np.ndarray, K: int) -> tuple[float, float, float]:
    """Measured self-convergence order from solves at K, 2K and 4K steps.

    problem_factory(K) must build the same problem on a K-step grid.
    Returns (order, err_coarse, err_fine) where errors are sup-norm path
    differences restricted to the coarse grid.
    """
    paths = {}
    for k in (K, 2 * K, 4 * K):
        prob = problem_factory(k)
        paths[k] = picard_solve(prob, z0).path
    e1 = float(np.max(np.linalg.norm(paths[K] - paths[2 * K][::2], axis=1)))
    e2 = float(np.max(np.linalg.norm(paths[2 * K] - paths[4 * K][::2], axis=1)))
    order = math.log2(e1 / e2) if e2 > 0 else math.inf
    return order, e1, e2
