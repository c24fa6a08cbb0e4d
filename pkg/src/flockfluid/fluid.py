"""Pseudo-spectral incompressible power-law solver on the periodic torus.

The velocity lives on a collocated n^d grid; incompressibility is enforced by
spectral projection, so the divergence and momentum bookkeeping invariants are
testable at tight tolerances.  Pointwise nonlinearities (stress, convection)
are dealiased with the 2/3 rule; the pressure is never materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .core import InputError, StepFailure, StressLaw, TorusDomain

__all__ = [
    "SpectralGrid",
    "get_grid",
    "VelocityField",
    "GridForce",
    "NormEntry",
    "NormMonitor",
    "leray_project",
    "divergence_max",
    "spectral_gaussian_filter",
    "velocity_gradient",
    "stress_divergence",
    "convective_term",
    "fluid_step",
    "interpolate_velocity",
    "deposit_drag",
    "norm_report",
    "random_solenoidal_field",
]


class SpectralGrid:
    """Wavenumber bookkeeping for one domain: transforms, masks, projector."""

    def __init__(self, domain: TorusDomain):
        self.domain = domain
        self.dim = domain.dimension
        self.n = domain.resolution
        self.side = domain.side
        n, dim = self.n, self.dim
        k1 = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
        shapes = [tuple(n if a == ax else 1 for a in range(dim)) for ax in range(dim)]
        self.k_int = [k1.reshape(s) for s in shapes]
        two_pi = 2.0 * math.pi / self.side
        # odd-derivative multipliers zero the unpaired Nyquist plane
        k1d = k1.copy()
        k1d[n // 2] = 0.0
        self.k_deriv = [two_pi * k1d.reshape(s) for s in shapes]
        self.k2 = sum((two_pi * k) ** 2 for k in self.k_int)
        self.k2_safe = np.where(self.k2 == 0.0, 1.0, self.k2)
        kc = n // 3
        mask = np.ones((n,) * dim, dtype=bool)
        for ax in range(dim):
            mask &= np.abs(self.k_int[ax]) <= kc
        self.dealias = mask
        self.cell_volume = (self.side / n) ** dim
        self.mode_count = n**dim
        self.spatial_axes = tuple(range(1, dim + 1))

    def fft(self, data: np.ndarray) -> np.ndarray:
        return sfft.fftn(data, axes=self.spatial_axes)

    def ifft(self, hat: np.ndarray) -> np.ndarray:
        return sfft.ifftn(hat, axes=self.spatial_axes).real

    def fft1(self, data: np.ndarray) -> np.ndarray:
        return sfft.fftn(data)

    def ifft1(self, hat: np.ndarray) -> np.ndarray:
        return sfft.ifftn(hat).real

    def project(self, hat: np.ndarray) -> np.ndarray:
        """Leray projection: remove the k-parallel part of every k != 0 mode."""
        two_pi = 2.0 * math.pi / self.side
        kdotu = sum((two_pi * self.k_int[ax]) * hat[ax] for ax in range(self.dim))
        kdotu = kdotu / self.k2_safe
        out = hat.copy()
        for ax in range(self.dim):
            out[ax] -= (two_pi * self.k_int[ax]) * kdotu
        return out

    def quadrature(self, values: np.ndarray) -> float:
        """Grid quadrature of a scalar field."""
        return float(np.sum(values) * self.cell_volume)

    def coordinates(self) -> list[np.ndarray]:
        """Collocation coordinates, one broadcastable array per axis."""
        x1 = np.arange(self.n) * (self.side / self.n)
        shapes = [tuple(self.n if a == ax else 1 for a in range(self.dim)) for ax in range(self.dim)]
        return [x1.reshape(s) for s in shapes]


@lru_cache(maxsize=None)
def get_grid(domain: TorusDomain) -> SpectralGrid:
    return SpectralGrid(domain)


class VelocityField:
    """Real d-component grid field with a cached spectrum and a time stamp."""

    def __init__(self, grid: SpectralGrid, data: np.ndarray, time: float = 0.0, hat: np.ndarray | None = None):
        data = np.asarray(data, dtype=float)
        expected = (grid.dim,) + (grid.n,) * grid.dim
        if data.shape != expected:
            raise InputError(f"field data must have shape {expected}, got {data.shape}")
        self.grid = grid
        self.data = data
        self.time = float(time)
        self._hat = hat

    @property
    def spectrum(self) -> np.ndarray:
        if self._hat is None:
            self._hat = self.grid.fft(self.data)
        return self._hat

    @classmethod
    def zero(cls, grid: SpectralGrid, time: float = 0.0) -> "VelocityField":
        return cls(grid, np.zeros((grid.dim,) + (grid.n,) * grid.dim), time)

    @classmethod
    def from_spectral(cls, grid: SpectralGrid, hat: np.ndarray, time: float = 0.0) -> "VelocityField":
        return cls(grid, grid.ifft(hat), time, hat=hat)

    @classmethod
    def single_mode(
        cls,
        grid: SpectralGrid,
        mode,
        amplitude: float = 1.0,
        polarization=None,
        time: float = 0.0,
    ) -> "VelocityField":
        """Divergence-free field amplitude * e * sin(2 pi k.x / L) with e
        perpendicular to the integer mode k (auto-chosen when not given)."""
        k = np.asarray(mode, dtype=float)
        if k.shape != (grid.dim,) or not np.any(k):
            raise InputError("mode must be a nonzero integer vector of the grid dimension")
        if polarization is None:
            if grid.dim == 2:
                e = np.array([-k[1], k[0]])
            else:
                trial = np.array([1.0, 0.0, 0.0]) if abs(k[0]) <= min(abs(k[1]), abs(k[2])) + 1e-12 else np.array([0.0, 0.0, 1.0])
                e = np.cross(k, trial)
            e = e / np.linalg.norm(e)
        else:
            e = np.asarray(polarization, dtype=float)
            e = e / np.linalg.norm(e)
            if abs(float(e @ k)) > 1e-12:
                raise InputError("polarization must be perpendicular to the mode")
        coords = grid.coordinates()
        phase = sum((2.0 * math.pi / grid.side) * k[ax] * coords[ax] for ax in range(grid.dim))
        wave = np.sin(phase)
        data = np.stack([amplitude * e[c] * wave for c in range(grid.dim)])
        return cls(grid, data, time)

    def mean(self) -> np.ndarray:
        """Mean velocity, equal to the box integral divided by the measure."""
        return self.data.reshape(self.grid.dim, -1).mean(axis=1)

    def integral(self) -> np.ndarray:
        return self.mean() * self.grid.domain.measure

    def energy(self) -> float:
        """Squared L2 norm by grid quadrature."""
        return self.grid.quadrature(np.sum(self.data**2, axis=0))


@dataclass
class GridForce:
    """Grid reaction force; its integral equals minus the total particle drag."""

    grid: SpectralGrid
    data: np.ndarray

    def integral(self) -> np.ndarray:
        return self.data.reshape(self.grid.dim, -1).sum(axis=1) * self.grid.cell_volume

    def mean(self) -> np.ndarray:
        return self.integral() / self.grid.domain.measure


def leray_project(field: VelocityField) -> VelocityField:
    """Project onto divergence-free fields; the mean mode is untouched."""
    return VelocityField.from_spectral(field.grid, field.grid.project(field.spectrum), field.time)


def divergence_max(field: VelocityField) -> float:
    """Max-norm of the spectral divergence in physical space."""
    g = field.grid
    hat = field.spectrum
    div_hat = sum(1j * g.k_deriv[ax] * hat[ax] for ax in range(g.dim))
    return float(np.abs(g.ifft1(div_hat)).max())


def spectral_gaussian_filter(field: VelocityField, eps: float) -> VelocityField:
    """Damp each mode by exp(-(2 pi |k| eps / L)^2 / 2); eps = 0 is the identity."""
    if eps == 0.0:
        return field
    g = field.grid
    factor = np.exp(-0.5 * eps * eps * g.k2)
    return VelocityField.from_spectral(g, field.spectrum * factor, field.time)


def _masked_gradients(grid: SpectralGrid, hat_m: np.ndarray):
    """Dealiased velocity and its gradient in physical space.

    Returns (u_tilde, grad) with grad[i][j] = d u_i / d x_j.
    """
    dim = grid.dim
    u_t = grid.ifft(hat_m)
    grad = np.empty((dim, dim) + (grid.n,) * dim)
    for i in range(dim):
        for j in range(dim):
            grad[i, j] = grid.ifft1(1j * grid.k_deriv[j] * hat_m[i])
    return u_t, grad


def _stress_divergence_hat(grid: SpectralGrid, grad: np.ndarray, law: StressLaw) -> np.ndarray:
    """Spectral divergence of tau(Du), dealiased, from precomputed gradients."""
    dim = grid.dim
    du = 0.5 * (grad + np.swapaxes(grad, 0, 1))
    du_points = np.moveaxis(du, (0, 1), (-2, -1))
    tau_points = law(du_points)
    out = np.zeros((dim,) + (grid.n,) * dim, dtype=complex)
    for i in range(dim):
        for j in range(i, dim):
            tau_hat = grid.fft1(tau_points[..., i, j]) * grid.dealias
            out[i] += 1j * grid.k_deriv[j] * tau_hat
            if i != j:
                out[j] += 1j * grid.k_deriv[i] * tau_hat
    return out


def _convective_hat(grid: SpectralGrid, u_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Skew-symmetric convection 0.5[(u.grad)u + div(u x u)], dealiased, spectral."""
    dim = grid.dim
    out = np.zeros((dim,) + (grid.n,) * dim, dtype=complex)
    for i in range(dim):
        adv = sum(u_t[j] * grad[i, j] for j in range(dim))
        out[i] = grid.fft1(adv) * grid.dealias
    for i in range(dim):
        for j in range(i, dim):
            prod_hat = grid.fft1(u_t[i] * u_t[j]) * grid.dealias
            out[i] += 1j * grid.k_deriv[j] * prod_hat
            if i != j:
                out[j] += 1j * grid.k_deriv[i] * prod_hat
    return 0.5 * out


def velocity_gradient(field: VelocityField) -> np.ndarray:
    """Full-spectrum gradient, grad[i, j] = d u_i / d x_j on the grid."""
    g = field.grid
    hat = field.spectrum
    grad = np.empty((g.dim, g.dim) + (g.n,) * g.dim)
    for i in range(g.dim):
        for j in range(g.dim):
            grad[i, j] = g.ifft1(1j * g.k_deriv[j] * hat[i])
    return grad


def stress_divergence(field: VelocityField, law: StressLaw) -> np.ndarray:
    """div(tau(Du)) on the grid (2/3-rule dealiased)."""
    g = field.grid
    hat_m = field.spectrum * g.dealias
    _, grad = _masked_gradients(g, hat_m)
    return g.ifft(_stress_divergence_hat(g, grad, law))


def convective_term(field: VelocityField) -> np.ndarray:
    """Skew-form (u.grad)u on the grid; its quadrature against u vanishes."""
    g = field.grid
    hat_m = field.spectrum * g.dealias
    u_t, grad = _masked_gradients(g, hat_m)
    return g.ifft(_convective_hat(g, u_t, grad))


def fluid_step(field: VelocityField, force: GridForce | None, dt: float, law: StressLaw) -> VelocityField:
    """One IMEX Euler step of du/dt = -(u.grad)u + div tau(Du) + G, projected.

    The linearization of the classical law at Du = 0 is the Newtonian stress
    coefficient * Du, whose divergence is nu0 * Laplacian(u) with
    nu0 = coefficient / 2 for solenoidal u; that part is implicit, the
    remainder of the stress, the convection, and G are explicit.  With
    exponent 2 the explicit stress remainder vanishes identically.  Only G
    touches the mean mode, so the mean advances by dt * mean(G) exactly.
    """
    if dt <= 0.0:
        raise InputError("dt must be positive")
    g = field.grid
    hat = field.spectrum
    hat_m = hat * g.dealias
    u_t, grad = _masked_gradients(g, hat_m)
    rhs = _stress_divergence_hat(g, grad, law) - _convective_hat(g, u_t, grad)
    nu0 = law.coefficient / 2.0
    rhs += nu0 * g.k2 * hat_m
    if force is not None:
        rhs += g.fft(force.data)
    new_hat = (hat + dt * rhs) / (1.0 + nu0 * g.k2 * dt)
    new_hat = g.project(new_hat)
    if not np.all(np.isfinite(new_hat.view(float))):
        raise StepFailure(
            "fluid state went non-finite",
            snapshot={
                "time": field.time,
                "dt": dt,
                "max_speed": float(np.abs(field.data).max()),
                "force_max": None if force is None else float(np.abs(force.data).max()),
            },
        )
    return VelocityField.from_spectral(g, new_hat, field.time + dt)


def interpolate_velocity(field: VelocityField, ensemble, order: int = 2) -> np.ndarray:
    """Velocity at particle positions; the kernel is a partition of unity."""
    if order not in (1, 2):
        raise InputError("interpolation kernel order must be 1 (linear) or 2 (quadratic)")
    from . import kernels

    return kernels.interpolate_grid(field.data, ensemble.positions, field.grid.side, order)


def deposit_drag(ensemble, u_at_particles: np.ndarray, grid: SpectralGrid, order: int = 2, cutoff=None) -> GridForce:
    """Drag reaction on the grid, adjoint to interpolation.

    The discrete integral of the result equals -sum_i w_i drag_i, and for any
    grid field phi, <deposit(g), phi> = -sum_i w_i g_i . phi(x_i) with phi
    interpolated by the same kernel.
    """
    if order not in (1, 2):
        raise InputError("deposition kernel order must be 1 (linear) or 2 (quadratic)")
    from . import kernels
    from .kinetic import drag_force_all

    drag = drag_force_all(ensemble, u_at_particles, cutoff)
    coef = -ensemble.weights / grid.cell_volume
    data = kernels.deposit_grid(ensemble.positions, drag, coef, grid.side, grid.n, order)
    return GridForce(grid, data)


@dataclass
class NormEntry:
    """One sample of the solution-space norms tracked along a run."""

    time: float
    u_l2: float
    gradu_lp: float
    u_w12: float
    grad2_l2: float
    gradu_l3p: float
    gradu_lp_pow: float  # integrand of the viscous dissipation integral

    def as_tuple(self):
        return (self.u_l2, self.gradu_lp, self.u_w12, self.grad2_l2, self.gradu_l3p)


class NormMonitor:
    """Running record of NormEntry samples with max tracking."""

    COLUMNS = ("u_l2", "gradu_lp", "u_w12", "grad2_l2", "gradu_l3p")

    def __init__(self):
        self.entries: list[NormEntry] = []

    def append(self, entry: NormEntry) -> None:
        self.entries.append(entry)

    def maxima(self) -> dict:
        if not self.entries:
            return {c: 0.0 for c in self.COLUMNS}
        return {c: max(getattr(e, c) for e in self.entries) for c in self.COLUMNS}


def norm_report(field: VelocityField, p: float) -> NormEntry:
    """Solution-space norms by spectral derivatives and grid quadrature."""
    g = field.grid
    hat = field.spectrum
    dim = g.dim
    grad_sq = np.zeros((g.n,) * dim)
    for i in range(dim):
        for j in range(dim):
            grad_sq += g.ifft1(1j * g.k_deriv[j] * hat[i]) ** 2
    grad_mag = np.sqrt(grad_sq)
    u_l2_sq = g.quadrature(np.sum(field.data**2, axis=0))
    gradu_l2_sq = g.quadrature(grad_sq)
    gradu_lp_pow = g.quadrature(grad_mag**p)
    gradu_l3p = g.quadrature(grad_mag ** (3.0 * p)) ** (1.0 / (3.0 * p))
    # Parseval for the full second-gradient norm: sum |k|^4 |u_hat|^2
    spec_weight = g.domain.measure / g.mode_count**2
    grad2_sq = spec_weight * float(np.sum(g.k2**2 * np.abs(hat) ** 2))
    return NormEntry(
        time=field.time,
        u_l2=math.sqrt(u_l2_sq),
        gradu_lp=gradu_lp_pow ** (1.0 / p),
        u_w12=math.sqrt(u_l2_sq + gradu_l2_sq),
        grad2_l2=math.sqrt(grad2_sq),
        gradu_l3p=gradu_l3p,
        gradu_lp_pow=gradu_lp_pow,
    )


def random_solenoidal_field(grid: SpectralGrid, seed: int = 0, amplitude: float = 1.0, max_mode: int | None = None) -> VelocityField:
    """Random band-limited divergence-free mean-free field (testing aid)."""
    rng = np.random.default_rng(seed)
    shape = (grid.dim,) + (grid.n,) * grid.dim
    data = rng.standard_normal(shape)
    hat = grid.fft(data) * grid.dealias
    if max_mode is not None:
        band = np.ones((grid.n,) * grid.dim, dtype=bool)
        for ax in range(grid.dim):
            band &= np.abs(grid.k_int[ax]) <= max_mode
        hat *= band
    hat[(slice(None),) + (0,) * grid.dim] = 0.0
    hat = grid.project(hat)
    out = VelocityField.from_spectral(grid, hat)
    scale = math.sqrt(out.energy())
    if scale > 0:
        out = VelocityField(grid, out.data * (amplitude / scale), out.time)
    return out
