"""Command line entry point.

Subcommands: factor, check, simulate, verify, ergodic.  Exit code 0 when
every verdict passes, 2 when any check fails (including a factorization
failure, which is a finding about the field, not a crash), 1 on usage or
config errors.  All file outputs are written atomically; report JSON/CSV
is byte-reproducible for a fixed resolved config regardless of FPK_THREADS.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time

import numpy as np

from . import configio, figures
from .chol import NotPositiveDefinite, cholesky_field, regularity_probe
from .coeffs import build_field, FieldError
from .dsl import ExprError
from .fpcheck import (
    ergodic_check,
    fp_residual,
    martingale_residual,
    uniqueness_compare,
)
from .grids import GridSpec
from .lyapunov import (
    check_H2,
    check_conservative_sprin,
    check_dim2,
    check_invariant_sprin,
    check_lyapunov,
    g_log_outer,
    g_quad,
)
from .measure import TestFunction, default_bank
from .sde import SimConfig, simulate_paths

USAGE_ERROR, CHECK_FAILED = 1, 2

CONDITION_NAMES = ("h2", "cons", "inv1", "inv2", "lyap", "dim2")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fpk", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", required=True, help="field config JSON")
        p.add_argument("--out", default="fpk_out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering next to the reports")

    p = sub.add_parser("factor", help="factor A(x) at a point")
    common(p)
    p.add_argument("--point", required=True, help='point, e.g. "1,0"')
    p.add_argument("--probe", default=None,
                   help="JSON with {center, radius[, h, n_points, seed]} for a regularity probe")

    p = sub.add_parser("check", help="check growth conditions on sampled grids")
    common(p)
    p.add_argument("--conditions", default="h2",
                   help=f"comma list from {{{','.join(CONDITION_NAMES)}}}")
    p.add_argument("--M", type=float, default=1.0, dest="m_const")
    p.add_argument("--N0", type=int, default=1, dest="n0")
    p.add_argument("--rmax", type=float, default=1000.0)

    p = sub.add_parser("simulate", help="run an ensemble, dump particles")
    common(p)
    p.add_argument("--sim", required=True, help="sim config JSON")
    p.add_argument("--particles", default=None,
                   help="particles CSV path (default <out>/particles.csv)")

    p = sub.add_parser("verify", help="residual checks on simulated marginals")
    common(p)
    p.add_argument("--sim", required=True)
    p.add_argument("--tests", default="fp,martingale,uniqueness")

    p = sub.add_parser("ergodic", help="long-run law and stationarity checks")
    common(p)
    p.add_argument("--sim", required=True)
    p.add_argument("--balls", default="0,0:1",
                   help='semicolon list of "cx,cy,..:radius"')
    return parser


def _parse_point(text: str, d: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise configio.ConfigError(f"bad point {text!r}") from None
    if len(values) != d:
        raise configio.ConfigError(f"point has {len(values)} coordinates, field has {d}")
    return np.array(values)


def _parse_balls(text: str, d: int) -> list[tuple]:
    balls = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise configio.ConfigError(f"bad ball spec {part!r} (want cx,..:radius)")
        center_text, radius_text = part.rsplit(":", 1)
        center = _parse_point(center_text, d)
        radius = float(radius_text)
        if radius <= 0:
            raise configio.ConfigError(f"ball radius must be positive in {part!r}")
        balls.append((center, radius))
    if not balls:
        raise configio.ConfigError("no balls given")
    return balls


def _out_path(out_dir: str, name: str) -> str:
    import os

    return os.path.join(out_dir, name)


def _snap_times(cfg: SimConfig, fractions) -> list[float]:
    times = np.asarray(cfg.snapshot_times)
    out = []
    for frac in fractions:
        t = cfg.t_horizon * frac
        out.append(float(times[np.argmin(np.abs(times - t))]))
    return sorted(set(out))


def cmd_factor(args) -> int:
    field_cfg = configio.resolve_field_config(configio.load_json(args.config))
    field = build_field(field_cfg)
    point = _parse_point(args.point, field.d)
    sigma_field = cholesky_field(field)
    try:
        factor = sigma_field(point)
    except NotPositiveDefinite as err:
        print(configio.dumps_json({
            "error": "not_positive_definite",
            "column": err.column,
            "pivot": err.pivot,
            "point": point.tolist(),
        }), end="")
        return CHECK_FAILED
    payload = {
        "point": point.tolist(),
        "sigma": factor.mat.tolist(),
        "reconstruction_error": factor.reconstruction_error(field.A(point)),
    }
    if args.probe:
        probe_cfg = configio.load_json(args.probe)
        probe = regularity_probe(
            sigma_field,
            probe_cfg.get("center", point.tolist()),
            probe_cfg["radius"],
            h=probe_cfg.get("h"),
            n_points=int(probe_cfg.get("n_points", 64)),
            seed=int(probe_cfg.get("seed", 0)),
        )
        payload["probe"] = probe.to_dict()
    print(configio.dumps_json(payload), end="")
    return 0


def cmd_check(args) -> int:
    field_cfg = configio.resolve_field_config(configio.load_json(args.config))
    field = build_field(field_cfg)
    names = [n.strip() for n in args.conditions.split(",") if n.strip()]
    for name in names:
        if name not in CONDITION_NAMES:
            raise configio.ConfigError(f"unknown condition {name!r}")
    grid = GridSpec(n0=args.n0, r_max=args.rmax, seed=args.seed or 0)
    t0 = time.perf_counter()
    reports = []
    for name in names:
        if name == "h2":
            reports.append(check_H2(field, grid))
        elif name == "cons":
            reports.append(check_conservative_sprin(field, args.m_const, grid))
        elif name == "inv1":
            reports.append(check_invariant_sprin(field, 1, args.m_const, grid))
        elif name == "inv2":
            reports.append(check_invariant_sprin(field, 2, args.m_const, grid))
        elif name == "lyap":
            reports.append(check_lyapunov(
                field, g_log_outer(args.n0), "conservative", args.m_const, grid))
            reports.append(check_lyapunov(
                field, g_quad(), "invariant", args.m_const, grid))
        elif name == "dim2":
            reports.append(check_dim2(field, "conservative", args.m_const, grid))
            reports.append(check_dim2(field, "invariant", args.m_const, grid))
    outputs = []
    json_path = _out_path(args.out, "conditions.json")
    configio.write_json(json_path, [r.to_dict() for r in reports])
    outputs.append(json_path)
    csv_path = _out_path(args.out, "margins.csv")
    rows = []
    for rep in reports:
        for r, m in zip(rep.sample_radii, rep.sample_margins):
            rows.append((rep.condition, r, m))
    configio.write_csv(csv_path, ["condition", "radius", "margin"], rows)
    outputs.append(csv_path)
    if not args.no_figures:
        fig_path = _out_path(args.out, "conditions.png")
        figures.condition_figure(reports, fig_path)
        outputs.append(fig_path)
    verdicts = {rep.condition: rep.passed for rep in reports}
    configio.write_json(
        _out_path(args.out, "manifest.json"),
        configio.manifest(
            "check",
            {"field": field_cfg, "conditions": names, "M": args.m_const,
             "N0": args.n0, "rmax": args.rmax, "grid_seed": grid.seed},
            verdicts, outputs, args.seed, time.perf_counter() - t0,
        ),
    )
    for rep in reports:
        flag = " [divergent]" if rep.divergent else ""
        print(f"{rep.condition}: {'PASS' if rep.passed else 'FAIL'}{flag} "
              f"(min margin {rep.margin_min:.3g}, feasible "
              f"{rep.feasible_kind} constant {rep.feasible_constant:.6g})")
    return 0 if all(verdicts.values()) else CHECK_FAILED


def _load_sim(args, field) -> tuple[dict, SimConfig]:
    resolved = configio.resolve_sim_config(
        configio.load_json(args.sim), field.d, seed_override=args.seed
    )
    return resolved, configio.sim_config_from_resolved(resolved)


def cmd_simulate(args) -> int:
    field_cfg = configio.resolve_field_config(configio.load_json(args.config))
    field = build_field(field_cfg)
    resolved, cfg = _load_sim(args, field)
    t0 = time.perf_counter()
    ens = simulate_paths(field, cholesky_field(field), cfg)
    # --out may either name the particles CSV directly or an output directory
    if args.particles:
        csv_path = args.particles
    elif args.out.endswith(".csv"):
        csv_path = args.out
    else:
        csv_path = _out_path(args.out, "particles.csv")
    header = ["snapshot_t", "path_id", "alive"] + [f"x{i+1}" for i in range(field.d)]

    def rows():
        for k, t in enumerate(ens.times):
            for p in range(cfg.n_paths):
                yield (t, p, bool(ens.alive[k, p]), *ens.positions[k, p])

    configio.write_csv(csv_path, header, rows())
    outputs = [csv_path]
    if not args.no_figures:
        fig_path = csv_path.rsplit(".", 1)[0] + ".png"
        figures.particles_figure(ens, fig_path)
        outputs.append(fig_path)
    all_dead = not bool(ens.alive[-1].any())
    configio.write_json(
        csv_path.rsplit(".", 1)[0] + "_manifest.json",
        configio.manifest(
            "simulate", {"field": field_cfg, "sim": resolved},
            {"all_paths_dead": all_dead,
             "final_alive_fraction": float(ens.alive[-1].mean())},
            outputs, resolved["seed"], time.perf_counter() - t0,
        ),
    )
    print(f"wrote {csv_path} ({len(ens.times)} snapshots x {cfg.n_paths} paths, "
          f"final alive fraction {ens.alive[-1].mean():.4f})")
    return 0


def cmd_verify(args) -> int:
    field_cfg = configio.resolve_field_config(configio.load_json(args.config))
    field = build_field(field_cfg)
    resolved, cfg = _load_sim(args, field)
    tests = [t.strip() for t in args.tests.split(",") if t.strip()]
    for t in tests:
        if t not in ("fp", "martingale", "uniqueness"):
            raise configio.ConfigError(f"unknown test {t!r}")
    bank = default_bank(field.d, resolved["bank_scale"])
    t0 = time.perf_counter()
    reports = []
    comparisons = []
    extras = {}
    if "fp" in tests or "martingale" in tests:
        ens = simulate_paths(field, cholesky_field(field), cfg)
        if "fp" in tests:
            for t in _snap_times(cfg, (0.5, 1.0)):
                for phi in bank:
                    reports.append(fp_residual(field, ens, phi, t))
            extras["continuity_max_increment"] = _continuity_increment(ens, bank)
        if "martingale" in tests:
            pair = _snap_times(cfg, (0.25, 1.0))
            if len(pair) < 2:
                raise configio.ConfigError(
                    "snapshot grid too coarse for the martingale test"
                )
            s, t = pair[0], pair[-1]
            weights = _weight_bank(ens, s, resolved["bank_scale"])
            for phi in bank:
                for name, h in weights:
                    rep = martingale_residual(field, ens, phi, s, t, h)
                    reports.append(dataclasses.replace(
                        rep, label=f"{rep.label} | h={name}"))
    if "uniqueness" in tests:
        cfg_b = SimConfig(
            x0=cfg.x0, t_horizon=cfg.t_horizon,
            dt=resolved["compare"]["dt"], n_paths=cfg.n_paths,
            seed=resolved["compare"]["seed"],
            snapshot_times=cfg.snapshot_times, r_explode=cfg.r_explode,
        )
        comparisons = uniqueness_compare(
            field, cfg, cfg_b, bank, _snap_times(cfg, (0.25, 0.5, 1.0))
        )
    outputs = []
    json_path = _out_path(args.out, "residuals.json")
    configio.write_json(json_path, {
        "residuals": [r.to_dict() for r in reports],
        "uniqueness": [c.to_dict() for c in comparisons],
        "extras": extras,
    })
    outputs.append(json_path)
    csv_path = _out_path(args.out, "residuals.csv")
    configio.write_csv(
        csv_path,
        ["test", "label", "s", "t", "estimate", "stderr", "allowance", "passed"],
        [(r.test, r.label, "" if r.s is None else r.s, r.t,
          r.estimate, r.stderr, r.allowance, r.passed) for r in reports],
    )
    outputs.append(csv_path)
    if not args.no_figures and reports:
        fig_path = _out_path(args.out, "residuals.png")
        figures.residual_figure(reports, fig_path)
        outputs.append(fig_path)
    ok = all(r.passed for r in reports) and all(c.passed for c in comparisons)
    verdicts = {
        "residuals_passed": all(r.passed for r in reports),
        "uniqueness_passed": all(c.passed for c in comparisons),
    }
    configio.write_json(
        _out_path(args.out, "manifest.json"),
        configio.manifest(
            "verify", {"field": field_cfg, "sim": resolved, "tests": tests},
            verdicts, outputs, resolved["seed"], time.perf_counter() - t0,
        ),
    )
    n_fail = sum(not r.passed for r in reports) + sum(not c.passed for c in comparisons)
    print(f"verify: {len(reports)} residuals, {len(comparisons)} marginal "
          f"comparisons, {n_fail} failing")
    return 0 if ok else CHECK_FAILED


def _continuity_increment(ens, bank) -> float:
    """Largest jump of any bank integral between adjacent snapshot nodes
    (finite snapshots cannot certify continuity in time; this bounds it)."""
    from .measure import integrate

    worst = 0.0
    for phi in bank:
        prev = None
        for k in range(len(ens.times)):
            est, _ = integrate(ens.measure(k), phi)
            if prev is not None:
                worst = max(worst, abs(est - prev))
            prev = est
    return worst


def _weight_bank(ens, s: float, scale: float):
    """Bounded weights of X_s: the constant 1 and bumps at the componentwise
    quartile points of the time-s ensemble."""
    k = ens.node_index(s)
    alive = ens.alive[k]
    pos = ens.positions[k][alive]
    weights = [("one", lambda points: np.ones(points.shape[0]))]
    for q in (0.25, 0.5, 0.75):
        center = tuple(np.quantile(pos, q, axis=0))
        weights.append(
            (f"q{int(q * 100)}", TestFunction(center=center, radius=scale))
        )
    return weights


def cmd_ergodic(args) -> int:
    field_cfg = configio.resolve_field_config(configio.load_json(args.config))
    field = build_field(field_cfg)
    resolved, cfg = _load_sim(args, field)
    balls = _parse_balls(args.balls, field.d)
    bank = default_bank(field.d, resolved["bank_scale"])
    t0 = time.perf_counter()
    report = ergodic_check(field, cfg, bank, balls)
    outputs = []
    json_path = _out_path(args.out, "ergodic.json")
    configio.write_json(json_path, report.to_dict())
    outputs.append(json_path)
    csv_path = _out_path(args.out, "ergodic_timeseries.csv")
    header = ["t"] + [
        f"mass_r{b['radius']:g}_{i}" for i, b in enumerate(report.balls)
    ]
    rows = [
        (t, *[b["mass_series"][k] for b in report.balls])
        for k, t in enumerate(report.times)
    ]
    configio.write_csv(csv_path, header, rows)
    outputs.append(csv_path)
    if not args.no_figures:
        fig_path = _out_path(args.out, "ergodic.png")
        figures.ergodic_figure(report, fig_path)
        outputs.append(fig_path)
    converged = all(b["converged"] for b in report.balls)
    verdicts = {
        "stationarity_passed": report.stationarity_passed,
        "balls_converged": converged,
        "invariance_warning": report.invariance_warning,
    }
    configio.write_json(
        _out_path(args.out, "manifest.json"),
        configio.manifest(
            "ergodic", {"field": field_cfg, "sim": resolved, "balls": args.balls},
            verdicts, outputs, resolved["seed"], time.perf_counter() - t0,
        ),
    )
    status = "PASS" if (report.stationarity_passed and converged) else "FAIL"
    warn = " (invariance precondition not established)" if report.invariance_warning else ""
    print(f"ergodic: {status}{warn}")
    return 0 if report.stationarity_passed and converged else CHECK_FAILED


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else USAGE_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    handlers = {
        "factor": cmd_factor,
        "check": cmd_check,
        "simulate": cmd_simulate,
        "verify": cmd_verify,
        "ergodic": cmd_ergodic,
    }
    try:
        return handlers[args.command](args)
    except (configio.ConfigError, FieldError, ExprError, ValueError) as err:
        print(f"fpk: error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
