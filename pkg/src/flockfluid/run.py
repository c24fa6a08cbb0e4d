"""The coupled time loop, its output files, and the end-of-run report.

Step layout (first-order splitting, fluid frozen during the particle stage):
interpolate the (optionally mollified) velocity to the particles, evaluate
alignment + drag, advance the particles one midpoint step, deposit the drag
reaction evaluated at the final particle stage, advance the fluid, append the
diagnostics ledger.  Depositing exactly the stage drag the particle update
used makes the discrete total momentum drift pure round-off.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import time as _time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from . import kernels
from .config import SimConfig, build_initial_state, config_to_ini, save_particles
from .core import ConfigError, IntegrationFailure, SimulationError, StepFailure, psi_eval
from .diagnostics import (
    DecayRateInputs,
    DiagnosticsLedger,
    certify_korn_constant,
    certify_poincare_constant,
    decay_rate_bound,
    energy_ledger_step,
    lyapunov_cross_terms,
    lyapunov_eval,
    momentum_total,
    lyapunov_inequality_residuals,
)
from .fluid import GridForce, VelocityField, deposit_drag, fluid_step, get_grid, norm_report
from .kinetic import (
    CutoffSpec,
    MollifierSpec,
    ParticleEnsemble,
    advance_particles,
    cutoff_eval,
    local_moments,
    mollify_field,
    vector_first_moment,
)

__all__ = [
    "RunResult",
    "run_simulation",
    "emit_report",
    "check_guards",
    "write_field_snapshot",
    "read_field_snapshot",
]

MOMENTUM_TOL = 1e-8
ENERGY_TOL = 1e-6
STEP_SLACK = 1e-8
DECAY_MARGIN = 1.05
RESIDUAL_TOL = 1e-3


@dataclass
class RunResult:
    config: SimConfig
    ledger: DiagnosticsLedger
    outcomes: dict
    measured: dict
    manifest: dict
    out_dir: Path | None
    series_path: Path | None
    exit_code: int
    runtime_seconds: float
    error: str | None = None


def check_guards(config: SimConfig, ensemble: ParticleEnsemble, field0: VelocityField) -> None:
    """Refuse configurations that violate the documented stability guards."""
    c6 = config.weight.c1_norm
    guard_align = 0.1 / max(1.0, c6 + 1.0)
    if config.dt > guard_align:
        raise ConfigError(
            f"alignment-rate guard violated: dt = {config.dt:.4g} exceeds 0.1/max(1, c6+1) = {guard_align:.4g}"
        )
    u_scale = max(
        float(np.linalg.norm(field0.data, axis=0).max()),
        float(np.linalg.norm(ensemble.velocities, axis=1).max()),
        1e-9,
    )
    guard_cfl = 0.25 * config.domain.spacing / u_scale
    if config.dt > guard_cfl:
        raise ConfigError(
            f"advective CFL guard violated: dt = {config.dt:.4g} exceeds 0.25*h/U = {guard_cfl:.4g}"
        )


def _outcome(passed: bool, value: float, tolerance: float, detail: str = "") -> dict:
    return {"pass": bool(passed), "value": float(value), "tolerance": float(tolerance), "detail": detail}


def run_simulation(config: SimConfig, out_dir=None) -> RunResult:
    """Run the coupled loop, append diagnostics each sample, emit all files.

    Diagnostic violations never abort the run; they mark it failed in the
    outcomes and the exit code.  A non-finite state aborts with partial
    outputs and a failure manifest.
    """
    started = _time.perf_counter()
    started_at = _dt.datetime.now(_dt.timezone.utc).isoformat()
    domain = config.domain
    grid = get_grid(domain)
    report = config.law.measure_constants(sample_count=4096, radius=10.0, seed=0)
    kappa = certify_korn_constant(domain, max_mode=2)
    varpi = certify_poincare_constant(domain, max_mode=2)
    c6 = config.weight.c1_norm
    psi_diam = psi_eval(config.weight, domain.diameter)
    psi_sqrt2 = psi_eval(config.weight, math.sqrt(2.0))

    ensemble, field = build_initial_state(config)
    check_guards(config, ensemble, field)

    cutoff = CutoffSpec(config.cutoff_eps) if config.cutoff_eps > 0.0 else None
    mollifier = MollifierSpec(config.mollifier_eps)
    order = config.kernel_order
    w = ensemble.weights
    scale, gamma_w = config.weight.scale, config.weight.exponent
    side = domain.side

    ledger = DiagnosticsLedger(domain.dimension)
    sup_m0 = 0.0
    energy_rec = None
    e0_lyap = None

    def sample(ens: ParticleEnsemble, u: VelocityField, dt_since_prev: float):
        nonlocal sup_m0, energy_rec, e0_lyap
        u_eff = mollify_field(u, mollifier)
        u_at = kernels.interpolate_grid(u_eff.data, ens.positions, side, order)
        rel = u_at - ens.velocities
        if cutoff is not None:
            # the dissipated power carries the cutoff factor
            drag_rate = float(np.sum(w * cutoff_eval(cutoff, ens.velocities) * np.sum(rel * rel, axis=1)))
        else:
            drag_rate = float(np.sum(w * np.sum(rel * rel, axis=1)))
        norms = norm_report(u, config.law.exponent)
        energy_rec = energy_ledger_step(
            ens,
            u,
            config.law,
            dt_since_prev,
            energy_rec,
            kappa=kappa,
            u_at_particles=u_at,
            gradu_lp_pow=norms.gradu_lp_pow,
            drag_rate=drag_rate,
            tolerance_factor=ENERGY_TOL,
        )
        lyap = lyapunov_eval(ens, u)
        cross = lyapunov_cross_terms(ens, u_at, lyap.u_c, lyap.v_c)
        m0_grid = local_moments(ens, 0.0, domain)
        sup_m0 = max(sup_m0, float(m0_grid.max()))
        rate = decay_rate_bound(
            DecayRateInputs(kappa=kappa, varpi=varpi, c1=config.law.c1, psi_diameter=psi_diam, sup_m0=sup_m0)
        )
        if e0_lyap is None:
            e0_lyap = lyap.e_total
        bound = e0_lyap * math.exp(-rate.gamma * u.time)
        ledger.append(
            energy=energy_rec,
            lyap=lyap,
            cross=cross,
            norms=norms,
            momentum=momentum_total(ens, u),
            fluid_momentum=u.integral(),
            v1=vector_first_moment(ens),
            m0=float(np.sum(w)),
            sup_m0=sup_m0,
            gamma=rate.gamma,
            bound=bound,
        )

    out_path = Path(out_dir if out_dir is not None else config.out_dir)
    snap_dir = out_path / "snapshots"
    error_msg = None
    aborted = False

    sample(ensemble, field, 0.0)
    n_steps = int(round(config.t_end / config.dt))
    dt = config.dt

    stage = {}

    def make_evaluator(u_eff: VelocityField):
        def evaluator(x, v):
            a, b = kernels.cs_weighted_sums(x, v, w, side, scale, gamma_w)
            u_at = kernels.interpolate_grid(u_eff.data, x, side, order)
            drag = u_at - v
            if cutoff is not None:
                drag = drag * cutoff_eval(cutoff, v)[:, None]
            stage["x"] = x
            stage["drag"] = drag
            return a - b[:, None] * v + drag

        return evaluator

    out_path.mkdir(parents=True, exist_ok=True)
    steps_done = 0
    last_sampled = 0
    coef = -w / grid.cell_volume
    try:
        for step in range(n_steps):
            u_eff = mollify_field(field, mollifier)
            evaluator = make_evaluator(u_eff)
            ensemble = advance_particles(
                ensemble, evaluator, dt, domain, method=config.integrator, step_index=step
            )
            g_data = kernels.deposit_grid(stage["x"], stage["drag"], coef, side, grid.n, order)
            force = GridForce(grid, g_data)
            field = fluid_step(field, force, dt, config.law)
            steps_done = step + 1
            if steps_done % config.sample_every == 0 or steps_done == n_steps:
                sample(ensemble, field, dt * (steps_done - last_sampled))
                last_sampled = steps_done
            if config.snapshot_every and steps_done % config.snapshot_every == 0:
                snap_dir.mkdir(parents=True, exist_ok=True)
                write_field_snapshot(snap_dir / f"field_{steps_done:07d}.txt", field, config)
                save_particles(snap_dir / f"particles_{steps_done:07d}.txt", ensemble)
    except (IntegrationFailure, StepFailure) as exc:
        aborted = True
        error_msg = f"{type(exc).__name__}: {exc}"

    outcomes = _evaluate_outcomes(ledger, kappa, varpi, config.law.c1, psi_diam)
    measured = {
        "c1": config.law.c1,
        "c2": config.law.c2,
        "c3": config.law.c3,
        "c4": config.law.c4,
        "c5": config.law.c5,
        "c6": c6,
        "kappa": kappa,
        "varpi": varpi,
        "psi_diameter": psi_diam,
        "psi_sqrt2": psi_sqrt2,
        "sup_m0": sup_m0,
        "gamma_final": ledger.gamma[-1] if ledger.gamma else math.nan,
        "gamma_with_psi_sqrt2": (
            decay_rate_bound(
                DecayRateInputs(kappa=kappa, varpi=varpi, c1=config.law.c1, psi_diameter=psi_sqrt2, sup_m0=sup_m0)
            ).gamma
            if sup_m0 > 0.0
            else math.nan
        ),
        "stress_assumption_violations": len(report.violations),
        "in_strong_regime": config.law.in_strong_regime,
    }

    if aborted:
        exit_code = 3
    elif not all(o["pass"] for o in outcomes.values()):
        exit_code = 2
    else:
        exit_code = 0

    runtime = _time.perf_counter() - started
    finished_at = _dt.datetime.now(_dt.timezone.utc).isoformat()

    series_path = out_path / config.series_name
    ledger.write_series(series_path)
    (out_path / "resolved_config.ini").write_text(config_to_ini(config), encoding="ascii")
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "started_at": started_at,
        "finished_at": finished_at,
        "runtime_seconds": runtime,
        "steps_completed": steps_done,
        "steps_requested": n_steps,
        "aborted": aborted,
        "error": error_msg,
        "exit_code": exit_code,
        "outcomes": outcomes,
        "measured": measured,
        "config_ini": config_to_ini(config),
        "outputs": [str(series_path), str(out_path / "resolved_config.ini")],
        "notes": [] if config.law.in_strong_regime else [
            f"stress exponent {config.law.exponent} is outside the strong-solution regime (needs >= 2.2)"
        ],
    }
    (out_path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="ascii")

    return RunResult(
        config=config,
        ledger=ledger,
        outcomes=outcomes,
        measured=measured,
        manifest=manifest,
        out_dir=out_path,
        series_path=series_path,
        exit_code=exit_code,
        runtime_seconds=runtime,
        error=error_msg,
    )


def _evaluate_outcomes(ledger: DiagnosticsLedger, kappa, varpi, c1, psi_diam) -> dict:
    out = {}
    if not ledger.times:
        return {"completed": _outcome(False, 0.0, 0.0, "no samples")}
    momenta = np.stack(ledger.momentum)
    drift = np.linalg.norm(momenta - momenta[0], axis=1).max()
    p0 = np.linalg.norm(momenta[0])
    out["momentum_conservation"] = _outcome(
        drift <= MOMENTUM_TOL * (1.0 + p0), drift, MOMENTUM_TOL * (1.0 + p0), "max |P(t)-P(0)|"
    )

    e_tot = np.array([r.total for r in ledger.energy])
    e0 = ledger.energy[0].initial_total
    residuals = np.array([r.residual for r in ledger.energy])
    res_ok = residuals.max() <= ENERGY_TOL * e0 if e0 > 0 else residuals.max() <= 1e-30
    steps_ok = True
    if e_tot.size > 1:
        steps_ok = bool(np.diff(e_tot).max() <= STEP_SLACK * max(e0, 0.0) + 1e-300)
    out["energy_inequality"] = _outcome(
        bool(res_ok and steps_ok),
        residuals.max(),
        ENERGY_TOL * e0,
        "max energy residual; per-step slack also enforced",
    )

    e_series = ledger.e_series()
    e0_lyap = e_series[0]
    mono_ok = True
    if e_series.size > 1:
        mono_ok = bool(np.diff(e_series).max() <= STEP_SLACK * e0_lyap + 1e-300)
    gamma_final = ledger.gamma[-1]
    times = np.array(ledger.times)
    bound_final = DECAY_MARGIN * e0_lyap * np.exp(-gamma_final * times)
    decay_ok = bool(np.all(e_series <= bound_final)) if e0_lyap > 0 else bool(np.all(e_series <= 1e-30))
    margin = float((e_series / np.maximum(bound_final, 1e-300)).max()) if e0_lyap > 0 else 0.0
    out["lyapunov_monotone"] = _outcome(
        mono_ok,
        float(np.diff(e_series).max()) if e_series.size > 1 else 0.0,
        STEP_SLACK * e0_lyap,
        "max per-step increase of E",
    )
    out["lyapunov_decay_bound"] = _outcome(decay_ok, margin, 1.0, "max E / (1.05 E(0) exp(-gamma t))")

    if len(ledger.times) >= 3:
        res = lyapunov_inequality_residuals(
            psi_diameter=psi_diam, c1=c1, kappa=kappa, varpi=varpi, **ledger.residual_inputs()
        )
        worst = max(res["particle"].max(), res["fluid"].max(), res["centers"].max())
        tol = RESIDUAL_TOL * (1.0 + e0_lyap)
        out["decay_inequality_residuals"] = _outcome(worst <= tol, worst, tol, "max residual over the three inequalities")
    else:
        out["decay_inequality_residuals"] = _outcome(True, 0.0, 0.0, "run too short to check")
    return out


def emit_report(result: RunResult) -> tuple[str, dict]:
    """Human-readable summary plus the same content as a JSON-able record."""
    ledger = result.ledger
    lines = []
    record = {
        "outcomes": result.outcomes,
        "measured": result.measured,
        "exit_code": result.exit_code,
        "runtime_seconds": result.runtime_seconds,
        "aborted": result.error is not None,
        "error": result.error,
    }
    lines.append(f"run of {len(ledger.times)} samples, runtime {result.runtime_seconds:.2f} s")
    if result.error:
        lines.append(f"ABORTED: {result.error}")
    meas = result.measured
    lines.append(
        "measured constants: c1=%.6g c6=%.6g kappa=%.12g varpi=%.12g sup|m0|=%.6g"
        % (meas["c1"], meas["c6"], meas["kappa"], meas["varpi"], meas["sup_m0"])
    )
    lines.append(
        "decay rate gamma=%.6g (psi at torus diameter; envelope with psi(sqrt 2): %.6g)"
        % (meas["gamma_final"], meas["gamma_with_psi_sqrt2"])
    )
    if not meas["in_strong_regime"]:
        lines.append("note: stress exponent outside the strong-solution regime (p < 11/5); results are exploratory")

    e_series = ledger.e_series()
    times = np.array(ledger.times)
    slope = math.nan
    if e_series.size > 4 and e_series[0] > 0:
        keep = e_series > e_series[0] * 1e-10
        if keep.sum() > 4:
            slope = float(np.polyfit(times[keep], np.log(e_series[keep]), 1)[0])
    gamma = meas["gamma_final"]
    slope_tol = -gamma + max(0.05 * gamma, 0.02)
    slope_ok = (not math.isfinite(slope)) or slope <= slope_tol
    record["fitted_log_slope"] = slope
    record["fitted_slope_pass"] = bool(slope_ok)
    lines.append(
        f"fitted log-E slope: {slope:.6g} vs -gamma = {-gamma:.6g} -> {'PASS' if slope_ok else 'FAIL'}"
    )

    for name, oc in result.outcomes.items():
        status = "PASS" if oc["pass"] else "FAIL"
        lines.append(f"{status}: {name} (value {oc['value']:.3e}, tolerance {oc['tolerance']:.3e})")

    maxima = {}
    if ledger.norms:
        from .fluid import NormMonitor

        monitor = NormMonitor()
        for entry in ledger.norms:
            monitor.append(entry)
        maxima = monitor.maxima()
        lines.append(
            "norm maxima: " + "  ".join(f"{k}={v:.6g}" for k, v in maxima.items())
        )
    record["norm_maxima"] = maxima
    text = "\n".join(lines)
    if result.out_dir is not None:
        (result.out_dir / "report.json").write_text(json.dumps(record, indent=2) + "\n", encoding="ascii")
    return text, record


# field snapshots -------------------------------------------------------------


def write_field_snapshot(path, field: VelocityField, config: SimConfig | None = None) -> None:
    """Self-describing text snapshot: header lines, blank line, then row-major
    component values, one per line, full double precision."""
    g = field.grid
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("flockfluid-field 1\n")
        fh.write(f"dimension {g.dim}\n")
        fh.write(f"resolution {g.n}\n")
        fh.write(f"side {format(g.side, '.17g')}\n")
        fh.write(f"time {format(field.time, '.17g')}\n")
        if config is not None:
            fh.write(f"stress_exponent {format(config.law.exponent, '.17g')}\n")
            fh.write(f"stress_coefficient {format(config.law.coefficient, '.17g')}\n")
        fh.write(f"components {g.dim}\n")
        fh.write("\n")
        for value in field.data.ravel(order="C"):
            fh.write(format(value, ".17g") + "\n")


def read_field_snapshot(path) -> VelocityField:
    from .core import TorusDomain

    header: dict[str, str] = {}
    values: list[float] = []
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline().strip()
        if not first.startswith("flockfluid-field"):
            raise ConfigError(f"{path} is not a field snapshot")
        for line in fh:
            line = line.strip()
            if not line:
                break
            key, val = line.split(None, 1)
            header[key] = val
        for line in fh:
            line = line.strip()
            if line:
                values.append(float(line))
    dim = int(header["dimension"])
    n = int(header["resolution"])
    domain = TorusDomain(dim, float(header["side"]), n)
    data = np.array(values).reshape((dim,) + (n,) * dim)
    return VelocityField(get_grid(domain), data, time=float(header["time"]))
