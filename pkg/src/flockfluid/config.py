"""Run configuration: INI parsing with strict keys, presets, initial states.

The file format is sectioned key = value text; every key has a default and
unknown sections or keys are hard errors so typos cannot silently change a
run.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import CommunicationWeight, ConfigError, StressLaw, TorusDomain
from .fluid import SpectralGrid, VelocityField, get_grid
from .kinetic import ParticleEnsemble

__all__ = [
    "SimConfig",
    "parse_config",
    "parse_config_text",
    "config_to_ini",
    "preset",
    "PRESET_NAMES",
    "build_initial_state",
    "load_particles",
    "save_particles",
]


@dataclass
class SimConfig:
    domain: TorusDomain = field(default_factory=TorusDomain)
    weight: CommunicationWeight = field(default_factory=CommunicationWeight)
    law: StressLaw = field(default_factory=StressLaw)
    n_particles: int = 2048
    mollifier_eps: float = 0.0
    cutoff_eps: float = 0.0
    kernel_order: int = 2
    integrator: str = "rk2"
    position_init: str = "uniform"
    velocity_init: str = "two_cluster"
    cluster_velocity: tuple = (0.4, 0.2)
    velocity_jitter: float = 0.02
    gaussian_sigma: float = 0.3
    particles_file: str = ""
    fluid_init: str = "single_mode"
    fluid_amplitude: float = 0.25
    fluid_mode: tuple = (1, 0)
    dt: float = 1e-3
    t_end: float = 5.0
    seed: int = 12345
    sample_every: int = 1
    out_dir: str = "out"
    series_name: str = "series.csv"
    snapshot_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.dt:
            raise ConfigError("t_end must be at least one time step")
        if self.n_particles < 1:
            raise ConfigError("particle count must be >= 1")
        if self.kernel_order not in (1, 2):
            raise ConfigError(f"kernel_order must be 1 or 2, got {self.kernel_order}")
        if self.integrator not in ("rk2", "rk4"):
            raise ConfigError(f"integrator must be rk2 or rk4, got {self.integrator}")
        if self.position_init not in ("uniform", "file"):
            raise ConfigError(f"unknown position_init {self.position_init!r}")
        if self.velocity_init not in ("two_cluster", "gaussian", "zero", "file"):
            raise ConfigError(f"unknown velocity_init {self.velocity_init!r}")
        if self.fluid_init not in ("rest", "single_mode"):
            raise ConfigError(f"unknown fluid init {self.fluid_init!r}")
        if self.mollifier_eps < 0.0 or self.cutoff_eps < 0.0:
            raise ConfigError("regularization parameters must be >= 0")
        if self.sample_every < 1 or self.snapshot_every < 0:
            raise ConfigError("sampling intervals must be positive (snapshots: 0 disables)")
        if len(self.cluster_velocity) != self.domain.dimension:
            raise ConfigError("cluster_velocity must match the domain dimension")
        if len(self.fluid_mode) != self.domain.dimension:
            raise ConfigError("fluid_mode must match the domain dimension")

    def with_overrides(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


# INI schema: section -> key -> (parser, getter, formatter)


def _vec(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector value {text!r}") from exc


def _ivec(text: str) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer vector {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer {text!r}") from exc


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


_SCHEMA = {
    "domain": {
        "dimension": (_parse_int, lambda c: c.domain.dimension, str),
        "side": (_parse_float, lambda c: c.domain.side, lambda v: format(v, ".17g")),
        "resolution": (_parse_int, lambda c: c.domain.resolution, str),
    },
    "weight": {
        "exponent": (_parse_float, lambda c: c.weight.exponent, lambda v: format(v, ".17g")),
        "scale": (_parse_float, lambda c: c.weight.scale, lambda v: format(v, ".17g")),
    },
    "stress": {
        "exponent": (_parse_float, lambda c: c.law.exponent, lambda v: format(v, ".17g")),
        "coefficient": (_parse_float, lambda c: c.law.coefficient, lambda v: format(v, ".17g")),
    },
    "kinetic": {
        "particles": (_parse_int, lambda c: c.n_particles, str),
        "mollifier_width": (_parse_float, lambda c: c.mollifier_eps, lambda v: format(v, ".17g")),
        "cutoff": (_parse_float, lambda c: c.cutoff_eps, lambda v: format(v, ".17g")),
        "kernel_order": (_parse_int, lambda c: c.kernel_order, str),
        "integrator": (str.strip, lambda c: c.integrator, str),
        "position_init": (str.strip, lambda c: c.position_init, str),
        "velocity_init": (str.strip, lambda c: c.velocity_init, str),
        "cluster_velocity": (_vec, lambda c: c.cluster_velocity, lambda v: " ".join(format(x, ".17g") for x in v)),
        "velocity_jitter": (_parse_float, lambda c: c.velocity_jitter, lambda v: format(v, ".17g")),
        "gaussian_sigma": (_parse_float, lambda c: c.gaussian_sigma, lambda v: format(v, ".17g")),
        "particles_file": (str.strip, lambda c: c.particles_file, str),
    },
    "fluid": {
        "init": (str.strip, lambda c: c.fluid_init, str),
        "amplitude": (_parse_float, lambda c: c.fluid_amplitude, lambda v: format(v, ".17g")),
        "mode": (_ivec, lambda c: c.fluid_mode, lambda v: " ".join(str(int(x)) for x in v)),
    },
    "run": {
        "dt": (_parse_float, lambda c: c.dt, lambda v: format(v, ".17g")),
        "t_end": (_parse_float, lambda c: c.t_end, lambda v: format(v, ".17g")),
        "seed": (_parse_int, lambda c: c.seed, str),
        "sample_every": (_parse_int, lambda c: c.sample_every, str),
    },
    "output": {
        "directory": (str.strip, lambda c: c.out_dir, str),
        "series": (str.strip, lambda c: c.series_name, str),
        "snapshot_every": (_parse_int, lambda c: c.snapshot_every, str),
    },
}


def parse_config_text(text: str) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _SCHEMA[section][key][0](raw)

    def get(section, key, default):
        return values.get(section, {}).get(key, default)

    base = SimConfig()
    domain = TorusDomain(
        dimension=get("domain", "dimension", base.domain.dimension),
        side=get("domain", "side", base.domain.side),
        resolution=get("domain", "resolution", base.domain.resolution),
    )
    weight = CommunicationWeight(
        exponent=get("weight", "exponent", base.weight.exponent),
        scale=get("weight", "scale", base.weight.scale),
    )
    law = StressLaw(
        exponent=get("stress", "exponent", base.law.exponent),
        coefficient=get("stress", "coefficient", base.law.coefficient),
    )
    dim = domain.dimension
    default_cluster = base.cluster_velocity if dim == 2 else (0.4, 0.2, 0.0)
    default_mode = base.fluid_mode if dim == 2 else (1, 0, 0)
    return SimConfig(
        domain=domain,
        weight=weight,
        law=law,
        n_particles=get("kinetic", "particles", base.n_particles),
        mollifier_eps=get("kinetic", "mollifier_width", base.mollifier_eps),
        cutoff_eps=get("kinetic", "cutoff", base.cutoff_eps),
        kernel_order=get("kinetic", "kernel_order", base.kernel_order),
        integrator=get("kinetic", "integrator", base.integrator),
        position_init=get("kinetic", "position_init", base.position_init),
        velocity_init=get("kinetic", "velocity_init", base.velocity_init),
        cluster_velocity=get("kinetic", "cluster_velocity", default_cluster),
        velocity_jitter=get("kinetic", "velocity_jitter", base.velocity_jitter),
        gaussian_sigma=get("kinetic", "gaussian_sigma", base.gaussian_sigma),
        particles_file=get("kinetic", "particles_file", base.particles_file),
        fluid_init=get("fluid", "init", base.fluid_init),
        fluid_amplitude=get("fluid", "amplitude", base.fluid_amplitude),
        fluid_mode=get("fluid", "mode", default_mode),
        dt=get("run", "dt", base.dt),
        t_end=get("run", "t_end", base.t_end),
        seed=get("run", "seed", base.seed),
        sample_every=get("run", "sample_every", base.sample_every),
        out_dir=get("output", "directory", base.out_dir),
        series_name=get("output", "series", base.series_name),
        snapshot_every=get("output", "snapshot_every", base.snapshot_every),
    )


def parse_config(path) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def config_to_ini(config: SimConfig) -> str:
    """Render the fully resolved configuration; parsing it back reproduces the run."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (_, getter, formatter) in keys.items():
            out.write(f"{key} = {formatter(getter(config))}\n")
        out.write("\n")
    return out.getvalue()


_PRESETS = {
    "default": dict(),
    "rest": dict(
        domain=TorusDomain(2, 1.0, 32),
        n_particles=64,
        velocity_init="zero",
        fluid_init="rest",
        fluid_mode=(1, 0),
        t_end=0.2,
        dt=1e-3,
    ),
    "quick": dict(
        domain=TorusDomain(2, 1.0, 32),
        n_particles=128,
        fluid_amplitude=0.2,
        t_end=0.5,
        dt=2e-3,
    ),
    "longrun-p35": dict(
        domain=TorusDomain(2, 1.0, 32),
        law=StressLaw(exponent=3.5, coefficient=1.0),
        n_particles=512,
        cluster_velocity=(0.3, 0.15),
        fluid_amplitude=0.1,
        dt=2e-3,
        t_end=20.0,
        seed=777,
    ),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> SimConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return SimConfig(**_PRESETS[name])


# initial data ---------------------------------------------------------------


def build_initial_state(config: SimConfig) -> tuple[ParticleEnsemble, VelocityField]:
    """Draw the initial ensemble and fluid field under the configured seed."""
    rng = np.random.default_rng(config.seed)
    domain = config.domain
    dim = domain.dimension
    n = config.n_particles

    if config.position_init == "file" or config.velocity_init == "file":
        if not config.particles_file:
            raise ConfigError("particle file initialization requires particles_file")
        ensemble = load_particles(config.particles_file, domain)
    else:
        positions = rng.uniform(0.0, domain.side, (n, dim))
        if config.velocity_init == "two_cluster":
            base = np.asarray(config.cluster_velocity, dtype=float)
            signs = np.ones((n, 1))
            signs[n // 2 :] = -1.0
            velocities = signs * base + config.velocity_jitter * rng.standard_normal((n, dim))
        elif config.velocity_init == "gaussian":
            velocities = config.gaussian_sigma * rng.standard_normal((n, dim))
        else:
            velocities = np.zeros((n, dim))
        weights = np.full(n, 1.0 / n)
        ensemble = ParticleEnsemble.create(positions, velocities, weights, domain)

    if config.cutoff_eps > 0.0:
        speed_cap = 1.0 / (2.0 * config.cutoff_eps)
        max_speed = float(np.linalg.norm(ensemble.velocities, axis=1).max())
        if max_speed >= speed_cap:
            raise ConfigError(
                f"initial particle speeds (max {max_speed:.4g}) must stay below "
                f"1/(2*cutoff) = {speed_cap:.4g}"
            )

    grid = get_grid(domain)
    if config.fluid_init == "rest":
        field0 = VelocityField.zero(grid)
    else:
        field0 = VelocityField.single_mode(grid, config.fluid_mode, config.fluid_amplitude)
    return ensemble, field0


def save_particles(path, ensemble: ParticleEnsemble) -> None:
    """Text format: one particle per line, weight then position then velocity."""
    dim = ensemble.dimension
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# flockfluid particles, dimension {dim}\n")
        fh.write("# weight  position[{0}]  velocity[{0}]\n".format(dim))
        for i in range(ensemble.count):
            nums = [ensemble.weights[i], *ensemble.positions[i], *ensemble.velocities[i]]
            fh.write(" ".join(format(x, ".17g") for x in nums) + "\n")


def load_particles(path, domain: TorusDomain) -> ParticleEnsemble:
    """Read the text format written by save_particles; weights are renormalized to unit mass."""
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                try:
                    rows.append([float(tok) for tok in body.split()])
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: cannot parse particle line") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read particle file {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"particle file {path} holds no particles")
    width = len(rows[0])
    dim = domain.dimension
    if width != 1 + 2 * dim or any(len(r) != width for r in rows):
        raise ConfigError(
            f"particle lines must hold 1 + 2*{dim} numbers (weight, position, velocity)"
        )
    data = np.array(rows)
    weights = data[:, 0]
    if np.any(weights <= 0.0):
        raise ConfigError("particle weights must be positive")
    weights = weights / weights.sum()
    return ParticleEnsemble.create(data[:, 1 : 1 + dim], data[:, 1 + dim :], weights, domain)
