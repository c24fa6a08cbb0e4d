"""Shared model ingredients: torus geometry, communication weight, power-law stress.

Everything here is a pure function of its inputs and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SimulationError",
    "InputError",
    "ConfigError",
    "IntegrationFailure",
    "StepFailure",
    "BlowupHorizonError",
    "TorusDomain",
    "CommunicationWeight",
    "StressLaw",
    "StressAssumptionReport",
    "min_image_displacement",
    "psi_eval",
    "stress_eval",
    "stress_assumption_check",
]


class SimulationError(Exception):
    """Base class for everything this package raises on purpose."""


class InputError(SimulationError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(SimulationError, ValueError):
    """Bad or inconsistent run configuration (maps to exit status 1)."""


class IntegrationFailure(SimulationError, RuntimeError):
    """Particle state went non-finite during a step."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class StepFailure(SimulationError, RuntimeError):
    """Fluid state went non-finite during a step; carries a diagnostics snapshot."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class BlowupHorizonError(SimulationError, RuntimeError):
    """A Gronwall-type bound blows up before the requested horizon."""

    def __init__(self, message: str, blowup_time: float):
        super().__init__(message)
        self.blowup_time = blowup_time


@dataclass(frozen=True)
class TorusDomain:
    """Periodic box [0, side)^dimension with a uniform grid of `resolution` points per axis."""

    dimension: int = 2
    side: float = 1.0
    resolution: int = 64

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {self.dimension}")
        if not (self.side > 0.0 and math.isfinite(self.side)):
            raise ConfigError(f"side length must be positive, got {self.side}")
        n = self.resolution
        if n < 4 or (n & (n - 1)) != 0:
            raise ConfigError(f"resolution must be a power of two >= 4, got {n}")

    @property
    def measure(self) -> float:
        return self.side**self.dimension

    @property
    def diameter(self) -> float:
        """Largest attainable min-image distance, side*sqrt(d)/2."""
        return self.side * math.sqrt(self.dimension) / 2.0

    @property
    def spacing(self) -> float:
        return self.side / self.resolution

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map positions into [0, side)."""
        return np.mod(x, self.side)


def min_image_displacement(x: np.ndarray, y: np.ndarray, domain: TorusDomain) -> np.ndarray:
    """Wrapped displacement y - x with every component in (-side/2, side/2].

    The norm of the result is the periodic distance.  A component sitting
    exactly on the half-box boundary is reported as +side/2.
    """
    L = domain.side
    d = np.mod(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), L)
    return np.where(d > 0.5 * L, d - L, d)


@dataclass(frozen=True)
class CommunicationWeight:
    """Alignment kernel psi(r) = (1 + (r/scale)^2)^(-exponent).

    Non-negative, non-increasing, smooth, with psi(0) = 1.  `c1_norm` bounds
    both sup(psi) and sup|psi'| and is the constant used by the force-bound
    monitors.
    """

    exponent: float = 0.25
    scale: float = 1.0

    def __post_init__(self):
        if not (self.exponent >= 0.0 and math.isfinite(self.exponent)):
            raise ConfigError(f"weight exponent must be >= 0, got {self.exponent}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ConfigError(f"weight scale must be positive, got {self.scale}")

    @property
    def sup_derivative(self) -> float:
        """sup_r |psi'(r)|, attained at r = scale/sqrt(2*exponent + 1)."""
        g = self.exponent
        if g == 0.0:
            return 0.0
        t = 1.0 / math.sqrt(2.0 * g + 1.0)
        return (2.0 * g / self.scale) * t * (1.0 + t * t) ** (-g - 1.0)

    @property
    def c1_norm(self) -> float:
        """Upper bound for the C^1 norm: sup(psi) + sup|psi'|."""
        return 1.0 + self.sup_derivative

    def __call__(self, r):
        return psi_eval(self, r)


def psi_eval(weight: CommunicationWeight, r):
    """Evaluate the communication weight at distance(s) r >= 0."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0):
        raise InputError("distance passed to psi_eval must be non-negative")
    t = r_arr / weight.scale
    out = (1.0 + t * t) ** (-weight.exponent)
    if np.isscalar(r) or r_arr.ndim == 0:
        return float(out)
    return out


@dataclass
class StressLaw:
    """Power-law stress tau(xi) = coefficient * (1 + |xi|)^(exponent-2) * xi.

    |xi| is the Frobenius norm of the symmetric matrix xi.  The constants
    c1..c5 are the empirically measured coercivity/growth/monotonicity
    constants; they stay None until `measure_constants` (or
    `stress_assumption_check`) fills them in.
    """

    exponent: float = 11.0 / 5.0
    coefficient: float = 1.0
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    c4: float | None = None
    c5: float | None = None

    def __post_init__(self):
        if not (self.exponent > 1.0 and math.isfinite(self.exponent)):
            raise ConfigError(f"stress exponent must be > 1, got {self.exponent}")
        if not (self.coefficient > 0.0 and math.isfinite(self.coefficient)):
            raise ConfigError(f"stress coefficient must be positive, got {self.coefficient}")

    @property
    def in_strong_regime(self) -> bool:
        """Whether the exponent meets the p >= 11/5 threshold the theory asks for."""
        return self.exponent >= 11.0 / 5.0 - 1e-12

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        """Apply the law to one matrix or a batch shaped (..., d, d). No symmetry check."""
        xi = np.asarray(xi, dtype=float)
        norm = np.sqrt(np.einsum("...ij,...ij->...", xi, xi))
        coef = self.coefficient * (1.0 + norm) ** (self.exponent - 2.0)
        return coef[..., None, None] * xi

    def measure_constants(self, sample_count: int = 4096, radius: float = 10.0, seed: int = 0):
        """Run the assumption checker and store the measured c1..c5 on this law."""
        report = stress_assumption_check(self, sample_count, radius, seed)
        self.c1, self.c2, self.c3 = report.c1, report.c2, report.c3
        self.c4, self.c5 = report.c4, report.c5
        return report


def stress_eval(law, xi: np.ndarray) -> np.ndarray:
    """Evaluate the stress law on a single symmetric matrix.

    Raises InputError when xi is not symmetric (relative tolerance 1e-12).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
        raise InputError(f"stress argument must be a square matrix, got shape {xi.shape}")
    scale = 1.0 + np.abs(xi).max()
    if np.abs(xi - xi.T).max() > 1e-12 * scale:
        raise InputError("stress argument must be symmetric")
    return law(xi)


@dataclass
class StressAssumptionReport:
    """Empirical constants for the coercivity/growth/monotonicity/derivative bounds.

    c1: min of tau(xi):xi / (|xi|^p + |xi|^2)           (coercivity, must be > 0)
    c2: max of |tau(xi)| / (1 + |xi|)^(p-1)             (growth)
    c3: min of (tau(xi)-tau(eta)):(xi-eta) / (|xi-eta|^2 + |xi-eta|^p)
    c4: min of D_tau(eta)[xi,xi] / ((1+|eta|)^(p-2) |xi|^2)   (derivative coercivity)
    c5: max of |d tau_ij / d eta_kl| / (1+|eta|)^(p-2)        (derivative growth)

    Derivatives are measured by central finite differences.  A violation is a
    non-positive lower-bound ratio or a non-finite value, reported with its
    witness sample, never raised.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    sample_count: int
    radius: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _random_symmetric(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    a = rng.standard_normal((count, dim, dim))
    s = 0.5 * (a + np.swapaxes(a, -1, -2))
    norm = np.sqrt(np.einsum("kij,kij->k", s, s))
    target = rng.uniform(0.0, radius, count)
    return s * (target / np.maximum(norm, 1e-300))[:, None, None]


def stress_assumption_check(
    law,
    sample_count: int = 10_000,
    radius: float = 10.0,
    seed: int = 0,
    dim: int = 2,
) -> StressAssumptionReport:
    """Probe the structural inequalities of a stress law on random symmetric pairs.

    `law` needs an `exponent` attribute and must map a batch (..., d, d) of
    symmetric matrices to stresses of the same shape.
    """
    if sample_count < 1:
        raise InputError("sample_count must be >= 1")
    if not radius > 0.0:
        raise InputError("radius must be positive")
    p = law.exponent
    rng = np.random.default_rng(seed)
    xi = _random_symmetric(rng, sample_count, dim, radius)
    eta = _random_symmetric(rng, sample_count, dim, radius)

    def fro(m):
        return np.sqrt(np.einsum("kij,kij->k", m, m))

    violations: list = []

    def check_lower(name, ratios, witness_a, witness_b=None):
        bad = ~np.isfinite(ratios) | (ratios <= 0.0)
        if np.any(bad):
            k = int(np.argmax(bad))
            violations.append(
                {
                    "inequality": name,
                    "ratio": float(ratios[k]),
                    "witness_xi": witness_a[k].copy(),
                    "witness_eta": None if witness_b is None else witness_b[k].copy(),
                }
            )

    tau_xi = law(xi)
    nx = fro(xi)
    live = nx > 1e-12
    coer = np.einsum("kij,kij->k", tau_xi, xi)[live] / (nx[live] ** p + nx[live] ** 2)
    check_lower("coercivity", coer, xi[live])
    c1 = float(coer.min()) if coer.size else math.inf

    growth = fro(tau_xi) / (1.0 + nx) ** (p - 1.0)
    c2 = float(growth.max())
    if not np.all(np.isfinite(growth)):
        k = int(np.argmax(~np.isfinite(growth)))
        violations.append({"inequality": "growth", "ratio": float(growth[k]), "witness_xi": xi[k].copy(), "witness_eta": None})

    diff = xi - eta
    nd = fro(diff)
    living = nd > 1e-12
    mono = np.einsum("kij,kij->k", tau_xi - law(eta), diff)[living] / (nd[living] ** 2 + nd[living] ** p)
    check_lower("monotonicity", mono, xi[living], eta[living])
    c3 = float(mono.min()) if mono.size else math.inf

    # quadratic form of the derivative at eta in direction xi, central differences
    ne = fro(eta)
    h = (1e-6 * (1.0 + ne) / np.maximum(nx, 1e-12))[:, None, None]
    dquad = np.einsum("kij,kij->k", law(eta + h * xi) - law(eta - h * xi), xi) / (2.0 * h[:, 0, 0])
    qual = nx > 1e-12
    quad = dquad[qual] / ((1.0 + ne[qual]) ** (p - 2.0) * nx[qual] ** 2)
    check_lower("derivative coercivity", quad, xi[qual], eta[qual])
    c4 = float(quad.min()) if quad.size else math.inf

    # entrywise Jacobian bound along the symmetrized basis directions
    c5 = 0.0
    hj = 1e-6 * (1.0 + ne)[:, None, None]
    for k_idx in range(dim):
        for l_idx in range(k_idx, dim):
            basis = np.zeros((dim, dim))
            basis[k_idx, l_idx] = 1.0
            basis[l_idx, k_idx] = 1.0
            jac = (law(eta + hj * basis) - law(eta - hj * basis)) / (2.0 * hj)
            if k_idx != l_idx:
                jac = jac / 2.0  # perturbing eta_kl and eta_lk together
            ratios = np.abs(jac).max(axis=(1, 2)) / (1.0 + ne) ** (p - 2.0)
            if not np.all(np.isfinite(ratios)):
                m = int(np.argmax(~np.isfinite(ratios)))
                violations.append({"inequality": "derivative growth", "ratio": float(ratios[m]), "witness_xi": basis.copy(), "witness_eta": eta[m].copy()})
            c5 = max(c5, float(ratios.max()))

    return StressAssumptionReport(
        c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, sample_count=sample_count, radius=radius, violations=violations
    )
