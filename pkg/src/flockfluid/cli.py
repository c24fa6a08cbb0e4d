"""Command line entry points: run, verify, oracle, decay-report.

Exit status: 0 success, 1 usage or configuration error, 2 a verification
check or run diagnostic failed, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import PRESET_NAMES, parse_config, preset
from .core import (
    ConfigError,
    SimulationError,
    StressLaw,
    TorusDomain,
    stress_assumption_check,
)
from .diagnostics import certify_korn_constant, certify_poincare_constant
from .oracles import (
    DiscreteDensity,
    GronwallProblem,
    gronwall_check,
    moment_bound_check,
    newtonian_mode_decay,
    two_particle_reference,
    unit_ball_density,
)
from .run import emit_report, run_simulation

USAGE_ERROR, DIAGNOSTIC_ERROR, NUMERIC_ERROR = 1, 2, 3


def _add_common(sub):
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the RNG seed")


def _load_config(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = preset(args.preset or "default")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "snapshot_every", None) is not None:
        overrides["snapshot_every"] = args.snapshot_every
    return cfg.with_overrides(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_simulation(cfg)
    text, _ = emit_report(result)
    print(text)
    return result.exit_code


def _check_table(checks) -> int:
    width = max(len(name) for name, _, _ in checks)
    failed = False
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name.ljust(width)}  {detail}")
        failed = failed or not ok
    return DIAGNOSTIC_ERROR if failed else 0


def cmd_verify(args) -> int:
    from .fluid import (
        convective_term,
        deposit_drag,
        get_grid,
        interpolate_velocity,
        leray_project,
        divergence_max,
        random_solenoidal_field,
    )
    from .kinetic import ParticleEnsemble

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    checks = []

    for p in (11.0 / 5.0, 3.0, 4.0):
        law = StressLaw(exponent=p)
        report = stress_assumption_check(law, sample_count=10_000, radius=10.0, seed=int(rng.integers(2**31)))
        checks.append(
            (
                f"stress assumptions p={p:g}",
                report.ok and report.c1 > 0,
                f"c1={report.c1:.4g} c2={report.c2:.4g} c3={report.c3:.4g} violations={len(report.violations)}",
            )
        )

    domain = TorusDomain(2, 1.0, 64)
    grid = get_grid(domain)
    u = random_solenoidal_field(grid, seed=3)
    twice = leray_project(leray_project(u))
    idem = float(np.abs(twice.data - leray_project(u).data).max())
    checks.append(("projection idempotent", idem <= 1e-13, f"max change {idem:.2e}"))
    div = divergence_max(leray_project(u))
    checks.append(("projected field solenoidal", div <= 1e-10, f"max divergence {div:.2e}"))

    conv = convective_term(u)
    pairing = abs(grid.quadrature(np.sum(conv * u.data, axis=0)))
    checks.append(("convection energy neutral", pairing <= 1e-12 * (1.0 + u.energy()), f"<conv,u> = {pairing:.2e}"))

    n_part = 512
    ens = ParticleEnsemble.create(
        rng.uniform(0, 1, (n_part, 2)), rng.normal(0, 0.3, (n_part, 2)), np.full(n_part, 1.0 / n_part), domain
    )
    u_at = interpolate_velocity(u, ens)
    force = deposit_drag(ens, u_at, grid)
    total = force.integral() + ens.weights @ (u_at - ens.velocities)
    checks.append(("deposition adjoint to interpolation", float(np.abs(total).max()) <= 1e-13, f"integral mismatch {np.abs(total).max():.2e}"))

    kappa = certify_korn_constant(domain)
    varpi = certify_poincare_constant(domain)
    checks.append(("Korn constant = 1/2", abs(kappa - 0.5) <= 1e-10, f"kappa = {kappa!r}"))
    checks.append(("Poincare constant = 4 pi^2", abs(varpi - 4 * math.pi**2) <= 1e-10, f"varpi = {varpi!r}"))

    ball = unit_ball_density(3, half_width=1.5, points=48)
    res = moment_bound_check(ball, 0.0, 2.0)
    checks.append(("moment bound, unit ball", res.ok, f"lhs={res.lhs:.6g} rhs={res.rhs:.6g}"))
    bad = 0
    for _ in range(200):
        n = int(rng.integers(8, 24))
        g = DiscreteDensity(rng.uniform(0, 1, (n, n, n)) * rng.uniform(0.1, 5.0), float(rng.uniform(0.05, 0.3)))
        alpha = float(rng.uniform(0.0, 1.5))
        beta = alpha + float(rng.uniform(0.2, 2.0))
        if not moment_bound_check(g, alpha, beta).ok:
            bad += 1
    checks.append(("moment bound, random densities", bad == 0, f"{bad} violations in 200 draws"))

    riccati = gronwall_check(GronwallProblem(c=0.5, a=0.0, b=1.0, q=2.0, horizon=1.0), dt=1e-3)
    gap = abs(riccati.ode_values[-1] - riccati.bound_values[-1])
    checks.append(("Gronwall Riccati case", riccati.ok and gap <= 1e-8, f"|ode-bound|(1) = {gap:.2e}"))
    gron_bad = 0
    for _ in range(100):
        a0 = float(rng.uniform(0.0, 1.0))
        b0 = float(rng.uniform(0.0, 1.0))
        q = float(rng.uniform(1.2, 3.0))
        denom = (q - 1.0) * b0 * math.exp((q - 1.0) * a0) + 1e-9
        c = 0.5 * denom ** (-1.0 / (q - 1.0))
        if not gronwall_check(GronwallProblem(c=c, a=a0, b=b0, q=q, horizon=1.0), dt=1e-3).ok:
            gron_bad += 1
    checks.append(("Gronwall random problems", gron_bad == 0, f"{gron_bad} violations in 100 draws"))

    return _check_table(checks)


def cmd_oracle(args) -> int:
    from .core import CommunicationWeight
    from .fluid import VelocityField, fluid_step, get_grid
    from .kinetic import ParticleEnsemble, advance_particles, cs_force_all

    checks = []
    domain = TorusDomain(2, 1.0, 32)
    weight = CommunicationWeight(exponent=0.0)  # constant psi = 1
    v0 = np.array([0.3, -0.2])
    ens = ParticleEnsemble.create(
        np.array([[0.25, 0.5], [0.75, 0.5]]), np.array([v0, -v0]), np.array([0.5, 0.5]), domain
    )

    def evaluator(x, v):
        temp = ParticleEnsemble(x, v, ens.weights)
        return cs_force_all(temp, weight, domain).total

    dt = 1e-3
    state = ens
    for k in range(1000):
        state = advance_particles(state, evaluator, dt, domain, method="rk4", step_index=k)
    rel = state.velocities[0] - state.velocities[1]
    expected = two_particle_reference(1.0, v0, 1.0)
    err = float(np.linalg.norm(rel - expected) / np.linalg.norm(expected))
    checks.append(("two-particle alignment vs closed form", err <= 1e-6, f"relative error {err:.2e}"))

    nu = 0.01
    grid = get_grid(TorusDomain(2, 1.0, 64))
    law = StressLaw(exponent=2.0, coefficient=2.0 * nu)
    field = VelocityField.single_mode(grid, (1, 0), amplitude=1.0)
    e0 = math.sqrt(field.energy())
    dt_f = 1e-4
    for _ in range(1000):
        field = fluid_step(field, None, dt_f, law)
    ratio = math.sqrt(field.energy()) / e0
    expected_ratio = newtonian_mode_decay(nu, (1, 0), 1.0, 0.1)
    err_f = abs(ratio - expected_ratio) / expected_ratio
    checks.append(("Newtonian single-mode decay", err_f <= 1e-4, f"relative error {err_f:.2e}"))

    state = ens

    def drag_only(x, v):
        return -v

    for k in range(1000):
        state = advance_particles(state, drag_only, dt, domain, method="rk4", step_index=k)
    decay = np.linalg.norm(state.velocities[0]) / np.linalg.norm(v0)
    err_d = abs(decay - math.exp(-1.0)) / math.exp(-1.0)
    checks.append(("drag relaxation toward rest", err_d <= 1e-9, f"relative error {err_d:.2e}"))

    return _check_table(checks)


def cmd_decay_report(args) -> int:
    path = Path(args.series)
    if not path.exists():
        raise ConfigError(f"series file {path} does not exist")
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [list(map(float, line.split(","))) for line in fh if line.strip()]
    if not rows:
        raise ConfigError("series file holds no samples")
    data = {name: np.array([r[i] for r in rows]) for i, name in enumerate(header)}
    t, e = data["t"], data["E"]
    gamma = float(data["gamma"][-1])
    e0 = float(e[0])
    bound = 1.05 * e0 * np.exp(-gamma * t)
    decay_ok = bool(np.all(e <= bound)) if e0 > 0 else bool(np.all(e <= 1e-30))
    mono_ok = bool(np.diff(e).max() <= 1e-8 * e0 + 1e-300) if e.size > 1 else True
    slope = math.nan
    if e0 > 0:
        keep = e > e0 * 1e-10
        if keep.sum() > 4:
            slope = float(np.polyfit(t[keep], np.log(e[keep]), 1)[0])
    record = {
        "gamma": gamma,
        "E0": e0,
        "decay_bound_pass": decay_ok,
        "monotone_pass": mono_ok,
        "fitted_log_slope": slope,
    }
    print(f"{'PASS' if decay_ok else 'FAIL'}  E(t) <= 1.05 E(0) exp(-gamma t)  gamma={gamma:.6g}")
    print(f"{'PASS' if mono_ok else 'FAIL'}  E non-increasing")
    print(f"fitted log-E slope {slope:.6g} vs -gamma {-gamma:.6g}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "decay_report.json").write_text(json.dumps(record, indent=2) + "\n")
    return 0 if (decay_ok and mono_ok) else DIAGNOSTIC_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flockfluid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the coupled simulation")
    run_p.add_argument("--config", default=None, help="INI configuration file")
    run_p.add_argument("--preset", default=None, choices=PRESET_NAMES, help="named preset")
    run_p.add_argument("--snapshot-every", type=int, default=None, help="write snapshots every N steps")
    _add_common(run_p)
    run_p.set_defaults(func=cmd_run)

    ver_p = sub.add_parser("verify", help="property suites: stress, projector, adjointness, bounds")
    _add_common(ver_p)
    ver_p.set_defaults(func=cmd_verify)

    orc_p = sub.add_parser("oracle", help="solver-versus-analytic comparisons")
    _add_common(orc_p)
    orc_p.set_defaults(func=cmd_oracle)

    dec_p = sub.add_parser("decay-report", help="post-process a series file")
    dec_p.add_argument("series", help="path to a series file written by run")
    dec_p.add_argument("--out", default=None)
    dec_p.set_defaults(func=cmd_decay_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except SimulationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
