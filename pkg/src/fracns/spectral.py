"""States in the eigenbasis of the dissipative operator, and the
Mittag-Leffler operator families acting on them.

Two analytic bases are provided: Dirichlet sines on (0, 1), where the
Helmholtz projection is the identity, and real divergence-free
trigonometric vector fields on the 2-torus (0, 2*pi)^2, where the
projection holds by construction.  Every operator in play is diagonal
here, so fractional powers, fractional Sobolev norms and the operator
families M_eta(t), M_{eta,eta}(t) are all coefficient-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .specfun import ml_neg_array

KINDS = ("dirichlet_sine_1d", "divfree_torus_2d")


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Immutable eigenbasis description; shareable across workers."""

    kind: str
    N: int
    nu: float
    alpha: float
    eigenvalues: np.ndarray        # lambda_m of -Delta, strictly positive
    frac_eigenvalues: np.ndarray   # mu_m = nu * lambda_m^(alpha/2)
    wavevectors: np.ndarray | None = None   # (N, 2) integer k, torus only
    trig: np.ndarray | None = None          # (N,) 0 = cos, 1 = sin, torus only


@dataclass
class SpectralField:
    """Coefficient vector of a state in its basis."""

    coeffs: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.N,):
            raise ParameterError(
                f"coefficient vector must have shape ({self.basis.N},), got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ParameterError("coefficient vector must be finite")

    def norm(self) -> float:
        """L2 norm; equals the Euclidean coefficient norm (orthonormal basis)."""
        return float(np.linalg.norm(self.coeffs))


def torus_mode_table(n_modes: int) -> tuple[np.ndarray, np.ndarray]:
    """First n_modes divergence-free torus modes: wavevectors and cos/sin flags.

    Wavevectors are enumerated over the canonical half-lattice
    (k1 > 0) or (k1 == 0, k2 > 0), ordered by (|k|^2, k1, k2); each
    wavevector carries a cosine and a sine mode.
    """
    kmax = 1
    while (2 * kmax + 1) ** 2 - 1 < 2 * n_modes:
        kmax += 1
    half = [(k1, k2) for k1 in range(0, kmax + 1)
            for k2 in range(-kmax, kmax + 1)
            if (k1 > 0) or (k1 == 0 and k2 > 0)]
    half.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    wavevectors = []
    trig = []
    for k in half:
        for flag in (0, 1):
            wavevectors.append(k)
            trig.append(flag)
            if len(wavevectors) == n_modes:
                return np.array(wavevectors, dtype=int), np.array(trig, dtype=int)
    raise ParameterError(f"could not enumerate {n_modes} torus modes")


def build_basis(kind: str, N: int, nu: float, alpha: float) -> BasisSpec:
    """Populate the eigenvalue tables for one of the analytic bases."""
    if kind not in KINDS:
        raise ParameterError(f"unknown basis kind {kind!r}; expected one of {KINDS}")
    if N < 1:
        raise ParameterError(f"mode count must be >= 1, got {N}")
    if nu <= 0.0:
        raise ParameterError(f"viscosity must be positive, got {nu}")
    if not (1.0 < alpha <= 2.0):
        raise ParameterError(f"fractional exponent alpha must lie in (1, 2], got {alpha}")

    if kind == "dirichlet_sine_1d":
        m = np.arange(1, N + 1, dtype=float)
        lam = (m * math.pi) ** 2
        wavevectors = trig = None
    else:
        wavevectors, trig = torus_mode_table(N)
        lam = (wavevectors[:, 0] ** 2 + wavevectors[:, 1] ** 2).astype(float)
    mu = nu * lam ** (alpha / 2.0)
    for arr in (lam, mu):
        arr.setflags(write=False)
    return BasisSpec(kind=kind, N=N, nu=nu, alpha=alpha,
                     eigenvalues=lam, frac_eigenvalues=mu,
                     wavevectors=wavevectors, trig=trig)


def eval_modes_1d(basis: BasisSpec, x: np.ndarray) -> np.ndarray:
    """Values e_m(x) = sqrt(2) sin(m pi x), shape (N, len(x))."""
    m = np.arange(1, basis.N + 1, dtype=float)[:, None]
    return math.sqrt(2.0) * np.sin(m * math.pi * np.asarray(x)[None, :])


def eval_modes_torus(basis: BasisSpec, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Velocity fields of all torus modes on a grid, shape (N, 2, *grid).

    Each mode is (k_perp/|k|) * trig(k . x) / (pi sqrt(2)), unit L2 norm
    on (0, 2 pi)^2.
    """
    X1, X2 = np.meshgrid(np.asarray(x1), np.asarray(x2), indexing="ij")
    out = np.empty((basis.N, 2) + X1.shape)
    norm = 1.0 / (math.pi * math.sqrt(2.0))
    for j in range(basis.N):
        k1, k2 = basis.wavevectors[j]
        phase = k1 * X1 + k2 * X2
        wave = np.cos(phase) if basis.trig[j] == 0 else np.sin(phase)
        kn = math.hypot(k1, k2)
        out[j, 0] = (-k2 / kn) * wave * norm
        out[j, 1] = (k1 / kn) * wave * norm
    return out


def apply_fractional_power(f: SpectralField, gamma: float) -> SpectralField:
    """Operator power of -Delta: coefficient m scaled by lambda_m^gamma."""
    if gamma == 0.0:
        return SpectralField(f.coeffs.copy(), f.basis)
    return SpectralField(f.coeffs * f.basis.eigenvalues ** gamma, f.basis)


def sobolev_norm(f: SpectralField, beta: float) -> float:
    """Fractional Sobolev norm (sum_m lambda_m^beta u_m^2)^(1/2).

    beta = 0 is the L2 norm; the contract range is beta in [-1, alpha].
    """
    return float(np.sqrt(np.sum(f.basis.eigenvalues ** beta * f.coeffs ** 2)))


def ml_multipliers(basis: BasisSpec, eta: float, t: float, kind: str) -> np.ndarray:
    """Diagonal multipliers of M_eta(t) ("first") or M_{eta,eta}(t) ("second")."""
    if t < 0.0:
        raise ParameterError(f"operator time must be >= 0, got {t}")
    if not (0.0 < eta <= 1.0):
        raise ParameterError(f"order eta must lie in (0, 1], got {eta}")
    b = 1.0 if kind == "first" else eta
    y = basis.frac_eigenvalues * t ** eta
    return ml_neg_array(eta, b, y)


def apply_M_eta(t: float, f: SpectralField, eta: float) -> SpectralField:
    """u_m -> E_{eta,1}(-mu_m t^eta) u_m; the identity at t = 0."""
    return SpectralField(f.coeffs * ml_multipliers(f.basis, eta, t, "first"), f.basis)


def apply_M_eta_eta(t: float, f: SpectralField, eta: float) -> SpectralField:
    """u_m -> E_{eta,eta}(-mu_m t^eta) u_m; scalar 1/Gamma(eta) at t = 0."""
    return SpectralField(f.coeffs * ml_multipliers(f.basis, eta, t, "second"), f.basis)


@dataclass
class BoundProbe:
    """Fit of the operator-norm decay law over a time grid, per family."""

    family: str                  # "first" (M_eta) or "second" (M_{eta,eta})
    eta: float
    beta: float
    theoretical_slope: float     # -eta*beta/alpha
    fitted_slope: float
    max_scaled: float            # sup_t R(t) * t^(eta*beta/alpha)
    contraction_max: float       # sup over modes and times of the beta=0 multiplier
    increment_modulus: float     # Lemma-2.6-style Hoelder quotient over the grid


def bound_probe(basis: BasisSpec, eta: float, beta: float,
                t_grid: np.ndarray) -> list[BoundProbe]:
    """Probe the smoothing bounds of both operator families.

    R(t) = sup over unit modes of the H^beta norm of the operator image;
    the fitted log-log slope is compared against -eta*beta/alpha by the
    caller.  Requires at least 3 positive probe values.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 3:
        raise NumericalError("bound_probe needs a 1-d grid with >= 3 points",
                             n_points=int(np.size(t_grid)))
    if np.any(t_grid <= 0.0) or np.any(np.diff(t_grid) <= 0.0):
        raise ParameterError("t_grid must be strictly increasing and positive")
    lam_pow = basis.eigenvalues ** (beta / 2.0)
    exponent = eta * beta / basis.alpha
    results = []
    for family in ("first", "second"):
        mult = np.array([ml_multipliers(basis, eta, float(t), family) for t in t_grid])
        R = np.max(lam_pow[None, :] * np.abs(mult), axis=1)
        valid = R > 0.0
        if np.count_nonzero(valid) < 3:
            raise NumericalError("degenerate bound_probe fit: fewer than 3 valid points",
                                 family=family, n_valid=int(np.count_nonzero(valid)))
        slope = float(np.polyfit(np.log(t_grid[valid]), np.log(R[valid]), 1)[0])
        max_scaled = float(np.max(R * t_grid ** exponent))
        contraction_max = float(np.max(np.abs(mult)))
        dmult = np.abs(np.diff(mult, axis=0)) * lam_pow[None, :]
        dt_pow = np.diff(t_grid) ** exponent if exponent > 0 else np.ones(len(t_grid) - 1)
        increment = float(np.max(dmult / dt_pow[:, None]))
        results.append(BoundProbe(
            family=family, eta=eta, beta=beta,
            theoretical_slope=-exponent, fitted_slope=slope,
            max_scaled=max_scaled, contraction_max=contraction_max,
            increment_modulus=increment))
    return results
