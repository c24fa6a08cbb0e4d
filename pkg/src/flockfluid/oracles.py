"""Independent analytic and brute-force references for checking the solvers.

Each oracle has a closed form derived by hand and documented where it is
implemented; nothing here shares code with the solver paths it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BlowupHorizonError, InputError

__all__ = [
    "GronwallProblem",
    "GronwallResult",
    "DiscreteDensity",
    "gronwall_check",
    "moment_bound_check",
    "MomentBoundResult",
    "unit_ball_density",
    "two_particle_reference",
    "newtonian_mode_decay",
]


@dataclass
class GronwallProblem:
    """Nonlinear Gronwall setup: f <= c + integral(a f + b f^q), q > 1.

    a and b may be scalars or callables of time; both must stay >= 0 on the
    horizon.
    """

    c: float
    a: object = 0.0
    b: object = 0.0
    q: float = 2.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.c < 0.0:
            raise InputError("initial constant c must be >= 0")
        if self.q <= 1.0:
            raise InputError("exponent q must exceed 1")
        if self.horizon <= 0.0:
            raise InputError("horizon must be positive")

    def a_at(self, t: float) -> float:
        return float(self.a(t)) if callable(self.a) else float(self.a)

    def b_at(self, t: float) -> float:
        return float(self.b(t)) if callable(self.b) else float(self.b)


@dataclass
class GronwallResult:
    times: np.ndarray
    ode_values: np.ndarray
    bound_values: np.ndarray
    richardson_gap: float
    ok: bool


def _rk4_saturated(prob: GronwallProblem, times: np.ndarray) -> np.ndarray:
    """Integrate the saturated ODE f' = a f + b f^q from f(0) = c."""

    def rhs(t, f):
        return prob.a_at(t) * f + prob.b_at(t) * f**prob.q

    out = np.empty_like(times)
    f = prob.c
    out[0] = f
    for k in range(times.size - 1):
        t = times[k]
        h = times[k + 1] - t
        k1 = rhs(t, f)
        k2 = rhs(t + 0.5 * h, f + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, f + 0.5 * h * k2)
        k4 = rhs(t + h, f + h * k3)
        f = f + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = f
    return out


def _cumulative_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Richardson-extrapolated cumulative integral on a uniform grid.

    `values` are samples at spacing dt/2 (even count of intervals); returns
    the integral at the coarse points (spacing dt) with O(dt^4) error:
    T(h/2) + (T(h/2) - T(h)) / 3, the composite Simpson rule.
    """
    half = dt / 2.0
    fine = np.concatenate([[0.0], np.cumsum(0.5 * half * (values[1:] + values[:-1]))])
    coarse_vals = values[::2]
    coarse = np.concatenate([[0.0], np.cumsum(0.5 * dt * (coarse_vals[1:] + coarse_vals[:-1]))])
    fine_at_coarse = fine[::2]
    return fine_at_coarse + (fine_at_coarse - coarse) / 3.0


def gronwall_check(prob: GronwallProblem, dt: float = 1e-3) -> GronwallResult:
    """Compare the saturated ODE against the closed-form Bernoulli bound.

    With z = f^(1-q) the saturated ODE linearizes to z' = (1-q)(a z + b), so

        f(t) = c e^{A(t)} [1 - c^{q-1} (q-1) int_0^t b e^{(q-1) A(s)} ds]^{-1/(q-1)},

    A = int a.  The bracket must stay positive; its first zero crossing is the
    blow-up time and is reported as an error when it lands inside the horizon.
    The ODE is integrated by RK4 at dt and dt/2 and the pair must agree to
    1e-6 before the comparison counts.
    """
    if dt <= 0.0 or dt > prob.horizon:
        raise InputError("dt must be positive and no larger than the horizon")
    steps = max(2, int(round(prob.horizon / dt)))
    times = np.linspace(0.0, prob.horizon, steps + 1)
    dt_eff = times[1] - times[0]
    fine_times = np.linspace(0.0, prob.horizon, 2 * steps + 1)
    quarter_times = np.linspace(0.0, prob.horizon, 4 * steps + 1)

    a_quarter = np.array([prob.a_at(t) for t in quarter_times])
    b_fine = np.array([prob.b_at(t) for t in fine_times])
    if np.any(a_quarter < 0.0) or np.any(b_fine < 0.0):
        raise InputError("coefficient functions must be non-negative on the horizon")
    a_int_fine = _cumulative_integral(a_quarter, dt_eff / 2.0)  # A at the dt/2 grid
    a_int = a_int_fine[::2]
    inner = _cumulative_integral(b_fine * np.exp((prob.q - 1.0) * a_int_fine), dt_eff)

    bracket = 1.0 - prob.c ** (prob.q - 1.0) * (prob.q - 1.0) * inner
    if np.any(bracket <= 0.0):
        k = int(np.argmax(bracket <= 0.0))
        t_lo = times[max(k - 1, 0)]
        raise BlowupHorizonError(
            f"Gronwall bound blows up near t = {t_lo:.6g}, before the horizon {prob.horizon}",
            blowup_time=float(t_lo),
        )
    bound = prob.c * np.exp(a_int) * bracket ** (-1.0 / (prob.q - 1.0))

    ode = _rk4_saturated(prob, times)
    ode_half = _rk4_saturated(prob, fine_times)[::2]
    scale = 1.0 + np.abs(ode).max()
    gap = float(np.abs(ode - ode_half).max() / scale)
    ok = bool(gap <= 1e-6 and np.all(ode <= bound * (1.0 + 1e-8)))
    return GronwallResult(times=times, ode_values=ode, bound_values=bound, richardson_gap=gap, ok=ok)


@dataclass
class DiscreteDensity:
    """Non-negative velocity-space density sampled on a centered cube grid."""

    values: np.ndarray
    spacing: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0.0) or not np.all(np.isfinite(self.values)):
            raise InputError("density values must be finite and non-negative")
        if self.spacing <= 0.0:
            raise InputError("grid spacing must be positive")

    @property
    def dimension(self) -> int:
        return self.values.ndim

    def speed_grid(self) -> np.ndarray:
        dim = self.dimension
        n = self.values.shape[0]
        axis = (np.arange(n) - (n - 1) / 2.0) * self.spacing
        sq = np.zeros((n,) * dim)
        for ax in range(dim):
            shape = tuple(n if a == ax else 1 for a in range(dim))
            sq = sq + axis.reshape(shape) ** 2
        return np.sqrt(sq)

    def moment(self, alpha: float) -> float:
        speed = self.speed_grid()
        return float(np.sum(self.values * speed**alpha) * self.spacing**self.dimension)


@dataclass
class MomentBoundResult:
    lhs: float
    rhs: float
    ok: bool


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def unit_ball_density(dim: int, half_width: float = 1.5, points: int = 48) -> DiscreteDensity:
    """Indicator of the unit ball, sampled on a centered cube of given half width."""
    spacing = 2.0 * half_width / points
    axis = (np.arange(points) - (points - 1) / 2.0) * spacing
    sq = np.zeros((points,) * dim)
    for ax in range(dim):
        shape = tuple(points if a == ax else 1 for a in range(dim))
        sq = sq + axis.reshape(shape) ** 2
    return DiscreteDensity((sq <= 1.0).astype(float), spacing)


def moment_bound_check(g: DiscreteDensity, alpha: float, beta: float) -> MomentBoundResult:
    """Moment interpolation bound m_alpha <= (V_d sup(g) + 1) m_beta^((alpha+d)/(beta+d)).

    V_d is the unit-ball volume of the density's dimension (4 pi / 3 in 3D).
    Requires 0 <= alpha < beta.
    """
    if alpha < 0.0 or alpha >= beta:
        raise InputError("need 0 <= alpha < beta")
    dim = g.dimension
    lhs = g.moment(alpha)
    m_beta = g.moment(beta)
    rhs = (unit_ball_volume(dim) * float(g.values.max()) + 1.0) * m_beta ** ((alpha + dim) / (beta + dim))
    return MomentBoundResult(lhs=lhs, rhs=rhs, ok=bool(lhs <= rhs * (1.0 + 1e-8)))


def two_particle_reference(psi0: float, v0: np.ndarray, t: float) -> np.ndarray:
    """Relative velocity of two equal-weight particles under a constant weight.

    With weights 1/2 and psi identically psi0, each particle feels
    0.5 psi0 (v_other - v_self), so the difference r = v1 - v2 obeys
    r' = -psi0 r: r(t) = 2 v0 exp(-psi0 t) for the start v1 = v0 = -v2.
    """
    if psi0 < 0.0:
        raise InputError("psi0 must be non-negative")
    return 2.0 * np.asarray(v0, dtype=float) * math.exp(-psi0 * t)


def newtonian_mode_decay(nu: float, mode, amplitude: float, t: float, side: float = 1.0) -> float:
    """Heat-kernel amplitude decay of one Fourier mode: A exp(-nu |2 pi k / L|^2 t)."""
    if nu < 0.0:
        raise InputError("viscosity must be non-negative")
    k = np.asarray(mode, dtype=float)
    ksq = float(np.sum((2.0 * math.pi * k / side) ** 2))
    return amplitude * math.exp(-nu * ksq * t)
