"""Per-step verification ledger for the analytic structure of the coupled system.

Every run records, at each sample: total energy and the dissipation integrals
that must bound its decay, total momentum (fluid + particles), the alignment
Lyapunov functional E = 2*E_p + 2*E_f + E_d with its exponential decay bound
E(0) exp(-gamma t), and the cross terms needed to check the three
differential inequalities

    dE_p/dt <= -2 psi_diam E_p + 2 sum_i w_i (v_i - v_c).(u_i - v_i)
    dE_f/dt <= -2 c1 kappa varpi E_f + 2 sum_i w_i (u_c - u_i).(u_i - v_i)
    dE_d/dt <= -4 (u_c - v_c) . sum_i w_i (u_i - v_i)

by central differences.  Violations are recorded, never raised; a run always
produces its full diagnostic picture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InputError, StressLaw, TorusDomain
from .fluid import NormEntry, NormMonitor, SpectralGrid, VelocityField, get_grid, norm_report, velocity_gradient
from .kinetic import ParticleEnsemble, moments, vector_first_moment

__all__ = [
    "EnergyRecord",
    "LyapunovRecord",
    "DecayRateInputs",
    "DecayRate",
    "DiagnosticsLedger",
    "energy_ledger_step",
    "momentum_total",
    "lyapunov_eval",
    "lyapunov_cross_terms",
    "decay_rate_bound",
    "lyapunov_inequality_residuals",
    "certify_korn_constant",
    "certify_poincare_constant",
]


@dataclass
class EnergyRecord:
    """Energy balance sample: E_tot plus cumulative dissipation must not exceed E_tot(0).

    The viscous integral accumulates the raw |grad u|_p^p rate; the claimed
    dissipation in the residual weighs it by c1 * kappa, a strict lower bound
    of the true stress dissipation, so the residual stays non-positive up to
    discretization error.
    """

    t: float
    kinetic_m2: float
    fluid_energy: float
    total: float
    visc_rate: float
    drag_rate: float
    visc_integral: float
    drag_integral: float
    initial_total: float
    residual: float
    violation: bool


def energy_ledger_step(
    ensemble: ParticleEnsemble,
    u: VelocityField,
    law: StressLaw,
    dt: float,
    prev: EnergyRecord | None,
    kappa: float = 0.5,
    u_at_particles: np.ndarray | None = None,
    gradu_lp_pow: float | None = None,
    drag_rate: float | None = None,
    tolerance_factor: float = 1e-6,
) -> EnergyRecord:
    """Append one energy sample; dt is the time since `prev` (ignored when prev is None).

    Dissipation integrals accumulate by the trapezoid rule.  `u_at_particles`,
    `gradu_lp_pow` and `drag_rate` can be supplied to reuse caller work (or,
    for the drag rate, to account for a velocity cutoff).
    """
    if law.c1 is None:
        raise InputError("stress law has no measured c1; run measure_constants first")
    m2 = moments(ensemble, 2.0)
    fluid_energy = u.energy()
    total = m2 + fluid_energy
    if gradu_lp_pow is None:
        gradu_lp_pow = norm_report(u, law.exponent).gradu_lp_pow
    if drag_rate is None:
        if u_at_particles is None:
            from .fluid import interpolate_velocity

            u_at_particles = interpolate_velocity(u, ensemble)
        rel = u_at_particles - ensemble.velocities
        drag_rate = float(np.sum(ensemble.weights * np.sum(rel * rel, axis=1)))
    if prev is None:
        visc_integral = 0.0
        drag_integral = 0.0
        initial_total = total
    else:
        visc_integral = prev.visc_integral + 0.5 * dt * (prev.visc_rate + gradu_lp_pow)
        drag_integral = prev.drag_integral + 0.5 * dt * (prev.drag_rate + drag_rate)
        initial_total = prev.initial_total
    residual = total + law.c1 * kappa * visc_integral + drag_integral - initial_total
    return EnergyRecord(
        t=u.time,
        kinetic_m2=m2,
        fluid_energy=fluid_energy,
        total=total,
        visc_rate=gradu_lp_pow,
        drag_rate=drag_rate,
        visc_integral=visc_integral,
        drag_integral=drag_integral,
        initial_total=initial_total,
        residual=residual,
        violation=bool(residual > tolerance_factor * max(initial_total, 0.0)),
    )


def momentum_total(ensemble: ParticleEnsemble, u: VelocityField) -> np.ndarray:
    """Conserved total momentum: integral of u plus the particle first moment."""
    return u.integral() + vector_first_moment(ensemble)


@dataclass
class LyapunovRecord:
    """Deviation energies of particles and fluid from their mean velocities.

    e_total = 2 e_p + 2 e_f + e_d holds exactly by construction; `bound` is
    e_total(0) exp(-gamma t) with the running measured rate (filled by the
    ledger, NaN when evaluated standalone).
    """

    t: float
    u_c: np.ndarray
    v_c: np.ndarray
    e_p: float
    e_f: float
    e_d: float
    e_total: float
    bound: float = math.nan


def lyapunov_eval(ensemble: ParticleEnsemble, u: VelocityField) -> LyapunovRecord:
    """Evaluate the deviation energies at one state.

    The fluid center u_c is the box integral of u divided by the measure, so
    for a unit box it is exactly the integral.
    """
    u_c = u.mean()
    w = ensemble.weights
    v_c = (w @ ensemble.velocities) / np.sum(w)
    dv = ensemble.velocities - v_c
    e_p = float(np.sum(w * np.sum(dv * dv, axis=1)))
    du = u.data - u_c.reshape((-1,) + (1,) * u.grid.dim)
    e_f = u.grid.quadrature(np.sum(du * du, axis=0))
    e_d = float(np.sum((u_c - v_c) ** 2))
    return LyapunovRecord(
        t=u.time,
        u_c=u_c,
        v_c=v_c,
        e_p=e_p,
        e_f=e_f,
        e_d=e_d,
        e_total=2.0 * e_p + 2.0 * e_f + e_d,
    )


def lyapunov_cross_terms(
    ensemble: ParticleEnsemble,
    u_at_particles: np.ndarray,
    u_c: np.ndarray,
    v_c: np.ndarray,
) -> tuple[float, float, float]:
    """Particle-sum cross terms appearing in the three decay inequalities."""
    w = ensemble.weights
    rel = u_at_particles - ensemble.velocities
    x_p = float(np.sum(w * np.sum((ensemble.velocities - v_c) * rel, axis=1)))
    x_f = float(np.sum(w * np.sum((u_c - u_at_particles) * rel, axis=1)))
    x_d = float((u_c - v_c) @ (w @ rel))
    return x_p, x_f, x_d


@dataclass(frozen=True)
class DecayRateInputs:
    """Ingredients of the decay rate: all must be positive."""

    kappa: float
    varpi: float
    c1: float
    psi_diameter: float
    sup_m0: float

    def __post_init__(self):
        for name in ("kappa", "varpi", "c1", "psi_diameter", "sup_m0"):
            val = getattr(self, name)
            if not (val > 0.0 and math.isfinite(val)):
                raise InputError(f"decay-rate input {name} must be positive, got {val}")


@dataclass(frozen=True)
class DecayRate:
    eta: float
    gamma: float

    def bound(self, e0: float, t) -> np.ndarray:
        return e0 * np.exp(-self.gamma * np.asarray(t, dtype=float))


def decay_rate_bound(inputs: DecayRateInputs) -> DecayRate:
    """Exponential rate gamma = min(2 psi + 2 eta/(1+eta), c1 kappa varpi, 4 eta/(1+eta)).

    eta = c1 kappa varpi / (2 sup |m0|): increasing the measured density sup
    can only decrease gamma.
    """
    ckv = inputs.c1 * inputs.kappa * inputs.varpi
    eta = ckv / (2.0 * inputs.sup_m0)
    frac = eta / (1.0 + eta)
    gamma = min(2.0 * inputs.psi_diameter + 2.0 * frac, ckv, 4.0 * frac)
    return DecayRate(eta=eta, gamma=gamma)


def lyapunov_inequality_residuals(
    times: np.ndarray,
    e_p: np.ndarray,
    e_f: np.ndarray,
    e_d: np.ndarray,
    x_p: np.ndarray,
    x_f: np.ndarray,
    x_d: np.ndarray,
    psi_diameter: float,
    c1: float,
    kappa: float,
    varpi: float,
) -> dict:
    """Central-difference residuals of the three decay inequalities.

    Residual = d/dt(component) - right-hand side at interior samples; positive
    values are violations.  Requires a uniformly sampled trajectory.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise InputError("need at least three samples for central differences")
    h = np.diff(times)
    if not np.allclose(h, h[0], rtol=1e-9, atol=1e-15):
        raise InputError("residual check requires uniform sampling in time")
    dt = float(h[0])

    def ddt(series):
        return (series[2:] - series[:-2]) / (2.0 * dt)

    mid = slice(1, -1)
    r_p = ddt(np.asarray(e_p)) - (-2.0 * psi_diameter * np.asarray(e_p)[mid] + 2.0 * np.asarray(x_p)[mid])
    r_f = ddt(np.asarray(e_f)) - (-2.0 * c1 * kappa * varpi * np.asarray(e_f)[mid] + 2.0 * np.asarray(x_f)[mid])
    r_d = ddt(np.asarray(e_d)) - (-4.0 * np.asarray(x_d)[mid])
    return {"times": times[mid], "particle": r_p, "fluid": r_f, "centers": r_d}


def _mode_fields(grid: SpectralGrid, max_mode: int):
    """All single-mode solenoidal fields with |k|_inf <= max_mode, both phases."""
    dim = grid.dim
    coords = grid.coordinates()
    ranges = [range(0, max_mode + 1)] + [range(-max_mode, max_mode + 1)] * (dim - 1)
    seen = set()
    for k_tuple in np.ndindex(*[len(r) for r in ranges]):
        k = np.array([list(ranges[i])[k_tuple[i]] for i in range(dim)], dtype=float)
        if not np.any(k):
            continue
        key = tuple(k)
        if key in seen or tuple(-k) in seen:
            continue
        seen.add(key)
        if dim == 2:
            pols = [np.array([-k[1], k[0]]) / np.linalg.norm(k)]
        else:
            base = np.array([1.0, 0.0, 0.0]) if abs(k[0]) <= max(abs(k[1]), abs(k[2])) else np.array([0.0, 1.0, 0.0])
            e1 = np.cross(k, base)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(k, e1)
            e2 /= np.linalg.norm(e2)
            pols = [e1, e2]
        phase = sum((2.0 * math.pi / grid.side) * k[ax] * coords[ax] for ax in range(dim))
        for e in pols:
            for wave in (np.sin(phase), np.cos(phase)):
                data = np.stack([e[c] * wave for c in range(dim)])
                if np.abs(data).max() < 1e-12:
                    continue
                yield VelocityField(grid, data)


def certify_korn_constant(domain: TorusDomain, max_mode: int = 3) -> float:
    """Minimize |Du|_2^2 / |grad u|_2^2 over single-mode solenoidal fields.

    For divergence-free fields on the torus this ratio is exactly 1/2 for
    every mode; the certification recomputes it with the production gradient
    and quadrature code instead of assuming it.
    """
    grid = get_grid(domain)
    best = math.inf
    for f in _mode_fields(grid, max_mode):
        grad = velocity_gradient(f)
        du = 0.5 * (grad + np.swapaxes(grad, 0, 1))
        num = grid.quadrature(np.sum(du * du, axis=(0, 1)))
        den = grid.quadrature(np.sum(grad * grad, axis=(0, 1)))
        if den > 1e-14:
            best = min(best, num / den)
    return best


def certify_poincare_constant(domain: TorusDomain, max_mode: int = 3) -> float:
    """Minimize |grad u|_2^2 / |u - mean|_2^2 over single-mode fields: (2 pi / L)^2."""
    grid = get_grid(domain)
    best = math.inf
    for f in _mode_fields(grid, max_mode):
        grad = velocity_gradient(f)
        num = grid.quadrature(np.sum(grad * grad, axis=(0, 1)))
        mean = f.mean().reshape((-1,) + (1,) * grid.dim)
        dev = f.data - mean
        den = grid.quadrature(np.sum(dev * dev, axis=0))
        if den > 1e-14:
            best = min(best, num / den)
    return best


class DiagnosticsLedger:
    """Append-only per-sample record of every monitored quantity.

    The series table has one row per sample with the fixed column order
    documented in `series_header`; floats are written with repr-exact
    precision so identical runs produce byte-identical files.
    """

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.times: list[float] = []
        self.energy: list[EnergyRecord] = []
        self.lyapunov: list[LyapunovRecord] = []
        self.cross: list[tuple[float, float, float]] = []
        self.norms: list[NormEntry] = []
        self.momentum: list[np.ndarray] = []
        self.fluid_momentum: list[np.ndarray] = []
        self.v1: list[np.ndarray] = []
        self.m0: list[float] = []
        self.sup_m0: list[float] = []
        self.gamma: list[float] = []
        self.bound: list[float] = []

    def append(
        self,
        energy: EnergyRecord,
        lyap: LyapunovRecord,
        cross: tuple[float, float, float],
        norms: NormEntry,
        momentum: np.ndarray,
        fluid_momentum: np.ndarray,
        v1: np.ndarray,
        m0: float,
        sup_m0: float,
        gamma: float,
        bound: float,
    ) -> None:
        lyap.bound = bound
        self.times.append(energy.t)
        self.energy.append(energy)
        self.lyapunov.append(lyap)
        self.cross.append(cross)
        self.norms.append(norms)
        self.momentum.append(np.asarray(momentum, dtype=float))
        self.fluid_momentum.append(np.asarray(fluid_momentum, dtype=float))
        self.v1.append(np.asarray(v1, dtype=float))
        self.m0.append(m0)
        self.sup_m0.append(sup_m0)
        self.gamma.append(gamma)
        self.bound.append(bound)

    # series table ----------------------------------------------------------

    def series_header(self) -> list[str]:
        axes = "xyz"[: self.dimension]
        cols = ["t", "M0", "M2"]
        cols += [f"V1_{a}" for a in axes]
        cols += [f"fluid_momentum_{a}" for a in axes]
        cols += ["E_tot", "diss_visc", "diss_drag", "energy_residual"]
        cols += ["E_p", "E_f", "E_d", "E", "E_bound", "gamma"]
        cols += list(NormMonitor.COLUMNS)
        return cols

    def series_rows(self):
        for i in range(len(self.times)):
            en = self.energy[i]
            ly = self.lyapunov[i]
            row = [en.t, self.m0[i], en.kinetic_m2]
            row += list(self.v1[i])
            row += list(self.fluid_momentum[i])
            row += [en.total, en.visc_integral, en.drag_integral, en.residual]
            row += [ly.e_p, ly.e_f, ly.e_d, ly.e_total, self.bound[i], self.gamma[i]]
            row += list(self.norms[i].as_tuple())
            yield row

    def write_series(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(self.series_header()) + "\n")
            for row in self.series_rows():
                fh.write(",".join(format(x, ".17g") for x in row) + "\n")

    # array accessors for the outcome checks ---------------------------------

    def e_series(self) -> np.ndarray:
        return np.array([r.e_total for r in self.lyapunov])

    def residual_inputs(self) -> dict:
        return {
            "times": np.array(self.times),
            "e_p": np.array([r.e_p for r in self.lyapunov]),
            "e_f": np.array([r.e_f for r in self.lyapunov]),
            "e_d": np.array([r.e_d for r in self.lyapunov]),
            "x_p": np.array([c[0] for c in self.cross]),
            "x_f": np.array([c[1] for c in self.cross]),
            "x_d": np.array([c[2] for c in self.cross]),
        }
