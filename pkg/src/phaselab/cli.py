"""Command-line shell: simulate, equilibrium, analyze, lemmas, sweep.

Every run directory is self-describing: a canonical copy of the config, the
diagnostics CSV, snapshot files, a summary, and a manifest listing emitted
files with the pass/fail outcome of the assertion suite.  Assertion failures
are exit-status failures, not warnings.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import grid as g
from . import stationary as st
from .config import _SCHEMA, ExperimentConfig, parse_config
from .dynamics import Trajectory, run
from .errors import (
    DegenerateWindowError,
    InsufficientSnapshotsError,
    PhaselabError,
    StepFloorError,
    WindowOutOfRangeError,
)

ENV_OUTPUT_ROOT = "PHASELAB_OUTPUT_ROOT"
SCHEMA_TAG = "phaselab-run-1"


def _resolve_outdir(cfg_dir: str) -> Path:
    root = os.environ.get(ENV_OUTPUT_ROOT)
    p = Path(cfg_dir)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _manifest(outdir: Path, digest: str, files, assertions: dict, started: float) -> dict:
    manifest = {
        "schema": SCHEMA_TAG,
        "code_version": __version__,
        "config_digest": digest,
        "started_at": datetime.datetime.fromtimestamp(started).isoformat(),
        "finished_at": datetime.datetime.now().isoformat(),
        "files": sorted(str(f) for f in files),
        "assertions": assertions,
        "pass": all(assertions.values()) if assertions else True,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _prepare_outdir(cfg: ExperimentConfig, exist_ok: bool = True) -> Path:
    outdir = _resolve_outdir(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=exist_ok)
    cfg.write(outdir / "config.ini")
    return outdir


def _write_trajectory(outdir: Path, traj: Trajectory) -> list:
    files = [outdir / "config.ini"]
    csv_path = outdir / "diagnostics.csv"
    traj.to_csv(csv_path)
    files.append(csv_path)
    # snapshots are named by the accepted-step sample they belong to
    steps = np.searchsorted(traj.times, [t for t, _ in traj.snapshots])
    times_path = outdir / "snapshot_times.csv"
    with open(times_path, "w") as fh:
        fh.write("step,t\n")
        for step, (t, f) in zip(steps, traj.snapshots):
            p = outdir / f"snap_{int(step):06d}.dat"
            g.save_field(p, f)
            files.append(p)
            fh.write(f"{int(step)},{float(t)!r}\n")
    files.append(times_path)
    return files


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    outdir = _prepare_outdir(cfg)
    started = time.time()
    grid = cfg.build_grid()
    model = cfg.build_model()
    stepper = cfg.build_stepper()
    phi0 = cfg.build_initial_field(grid)
    prov = {"config_digest": cfg.digest(), "initial": cfg.initial_summary()}
    failed = None
    try:
        traj = run(model, phi0, cfg.t_max, stepper, provenance=prov)
    except StepFloorError as exc:
        traj = exc.trajectory
        failed = str(exc)
    files = _write_trajectory(outdir, traj)
    checks = traj.verify(tol_e=stepper.tol_e)
    assertions = {
        "complete": traj.complete,
        "mass_conserved": checks["mass_conserved"],
        "mass_per_step": checks["mass_per_step"],
        "energy_inequality": checks["energy_inequality"],
        "strict_bounds": checks["strict_bounds"],
        "finite": checks["finite"],
    }
    summary = {
        "schema": SCHEMA_TAG,
        "config_digest": cfg.digest(),
        "t_end": float(traj.times[-1]),
        "final_dissipation_norm": float(traj.dissipation_norm_series()[-1]),
        "final_energy": float(traj.energy[-1]),
        "mass_drift": float(np.max(np.abs(traj.mass - traj.mass[0]))),
        "accepted": traj.provenance.get("accepted"),
        "rejected": traj.provenance.get("rejected"),
        "wall_time_s": traj.provenance.get("wall_time_s"),
        "stop_reason": traj.provenance.get("stop_reason"),
        "error": failed,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    files.append(outdir / "summary.json")
    manifest = _manifest(outdir, cfg.digest(), files, assertions, started)
    print(f"simulate: {outdir}  pass={manifest['pass']}")
    return 0 if manifest["pass"] else 1


def cmd_equilibrium(args) -> int:
    cfg = parse_config(args.config)
    outdir = _prepare_outdir(cfg)
    started = time.time()
    grid = cfg.build_grid()
    model = cfg.build_model()
    pars = cfg.analysis_params()
    k = cfg.values["initial"]["mean"]
    kinds = tuple(pars["eq_seeds"].split())
    files = [outdir / "config.ini"]
    assertions = {}
    results = []
    converged = 0
    for seed_id, guess in st.equilibrium_seeds(grid, k, kinds=kinds,
                                               potential=model.potential):
        key = f"eq_{seed_id}"
        try:
            eq = st.solve_equilibrium(model, k, guess, tol=pars["eq_tol"],
                                      seed_id=seed_id)
        except PhaselabError as exc:
            # stationary states are guess-dependent; a seed landing outside
            # every basin is recorded, not fatal, as long as some seed works
            results.append({"seed_id": seed_id, "error": str(exc)})
            continue
        converged += 1
        snap = outdir / f"{key}.dat"
        g.save_field(snap, eq.phi_inf)
        sidecar = outdir / f"{key}.json"
        sidecar.write_text(json.dumps(eq.sidecar(), indent=2, sort_keys=True))
        files += [snap, sidecar]
        assertions[key] = (eq.residual_l2 <= pars["eq_tol"] and eq.delta > 0)
        results.append(eq.sidecar())
    assertions["any_converged"] = converged > 0
    (outdir / "equilibria.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    files.append(outdir / "equilibria.json")
    manifest = _manifest(outdir, cfg.digest(), files, assertions, started)
    print(f"equilibrium: {outdir}  pass={manifest['pass']}")
    return 0 if manifest["pass"] else 1


def load_run(run_dir) -> Trajectory:
    """Rebuild a Trajectory (with model) from a simulate output directory."""
    run_dir = Path(run_dir)
    cfg = parse_config(run_dir / "config.ini")
    data = np.genfromtxt(run_dir / "diagnostics.csv", delimiter=",", names=True)
    data = np.atleast_1d(data)
    model = cfg.build_model()
    snaps = []
    times_file = run_dir / "snapshot_times.csv"
    if times_file.exists():
        rows = np.genfromtxt(times_file, delimiter=",", names=True)
        rows = np.atleast_1d(rows)
        for step, t in zip(rows["step"].astype(int), rows["t"]):
            f = g.load_field(run_dir / f"snap_{step:06d}.dat")
            snaps.append((float(t), f))
    grid = snaps[0][1].grid if snaps else cfg.build_grid()
    return Trajectory(
        grid=grid,
        times=data["t"],
        mass=data["mass"],
        energy=data["energy"],
        dissipation=data["dissipation"],
        grad_mu_l2=data["grad_mu_l2"],
        mu_fluct_l2=data["mu_fluct_l2"],
        phi_min=data["phi_min"],
        phi_max=data["phi_max"],
        sep_margin=data["sep_margin"],
        dt=data["dt"],
        newton_iters=data["newton_iters"].astype(int),
        snapshots=snaps,
        provenance={
            "dissipation_norm": model.dissipation_norm,
            "m_star": model.mobility.m_star,
            "config_digest": cfg.digest(),
        },
        model=model,
        complete=True,
    )


def _analysis_report(traj: Trajectory, pars: dict) -> tuple[dict, dict]:
    report: dict = {}
    assertions: dict = {}

    good_entries = []
    gts_for_fit = None
    for M in pars["m_levels"]:
        gts = an.classify_good_times(traj, M, pars["good_t"], strict=False)
        good_entries.append({
            "M": M, "T": pars["good_t"], "bad_measure": gts.bad_measure,
            "bound": gts.bound, "ok": gts.ok,
            "implied_bound": gts.implied_bound, "chain_ok": gts.chain_ok,
        })
        # the manifest asserts what the discrete energy inequality implies;
        # the literal paper-shadow bound stays in the report (it is vacuous
        # for data whose energy starts negative)
        assertions[f"good_times_M{M:g}"] = gts.chain_ok
        gts_for_fit = gts if gts.chain_ok else gts_for_fit
    report["good_times"] = good_entries

    level_entries = []
    delta_star = None
    t_star = None
    for delta in pars["delta_levels"]:
        try:
            rep = an.level_set_series(traj, delta, pars["window_frac"])
        except InsufficientSnapshotsError:
            continue
        delta_star, t_star = rep.delta_star, rep.T_star
        level_entries.append({
            "delta": delta,
            "final_measure": float(rep.measures[-1]) if rep.measures.size else None,
        })
    report["separation"] = {"delta_star": delta_star, "T_star": t_star,
                            "levels": level_entries}

    degiorgi = None
    dg_delta = pars["degiorgi_delta"] or (0.95 * delta_star if delta_star else None)
    if dg_delta:
        t0, t1 = float(traj.times[0]), float(traj.times[-1])
        start = t_star if t_star is not None else t0 + 0.5 * (t1 - t0)
        tau = pars["degiorgi_tau"] or max((t1 - start) / 3.5, 1e-9)
        try:
            it = an.degiorgi_from_trajectory(traj, dg_delta, tau, t1,
                                             n_max=pars["degiorgi_nmax"])
            degiorgi = {"delta": dg_delta, "tau": tau, "T": t1,
                        "y": [float(y) for y in it.y], "certified": it.certified}
        except (WindowOutOfRangeError, InsufficientSnapshotsError) as exc:
            degiorgi = {"delta": dg_delta, "error": str(exc)}
    report["degiorgi"] = degiorgi

    loja = None
    if gts_for_fit is not None:
        try:
            fit = an.lojasiewicz_fit(traj, gts_for_fit)
            loja = {"theta": fit.theta, "C": fit.C, "fit_r2": fit.r2,
                    "E_inf": fit.e_inf}
        except DegenerateWindowError as exc:
            loja = {"error": str(exc)}
    report["lojasiewicz"] = loja

    omega = None
    try:
        est = an.omega_limit_estimate(traj, gts_for_fit, pars["omega_reps"],
                                      pars["omega_tol"])
        omega = {
            "dispersion": est.dispersion,
            "singleton": est.singleton,
            "nearest_eq": None if est.nearest_eq is None else
            {"residual": est.nearest_eq.residual_l2,
             "delta": est.nearest_delta,
             "distance": est.nearest_distance},
        }
    except InsufficientSnapshotsError as exc:
        omega = {"error": str(exc)}
    report["omega"] = omega
    return report, assertions


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.exists():
        run_dir = _resolve_outdir(args.run_dir)
    cfg = parse_config(run_dir / "config.ini")
    pars = cfg.analysis_params()
    if args.M:
        pars["m_levels"] = tuple(float(x) for x in args.M)
    if args.delta:
        pars["delta_levels"] = tuple(float(x) for x in args.delta)
    started = time.time()
    traj = load_run(run_dir)
    report, assertions = _analysis_report(traj, pars)
    report_path = run_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    files = [report_path]
    for delta in pars["delta_levels"]:
        try:
            rep = an.level_set_series(traj, delta, pars["window_frac"])
        except InsufficientSnapshotsError:
            continue
        p = run_dir / f"level_set_delta{delta:g}.csv"
        with open(p, "w") as fh:
            fh.write("t,measure\n")
            for t, m in zip(rep.times, rep.measures):
                fh.write(f"{float(t)!r},{float(m)!r}\n")
        files.append(p)
    if report.get("degiorgi") and "y" in (report["degiorgi"] or {}):
        p = run_dir / "degiorgi_y.csv"
        with open(p, "w") as fh:
            fh.write("n,y\n")
            for n, y in enumerate(report["degiorgi"]["y"]):
                fh.write(f"{n},{float(y)!r}\n")
        files.append(p)
    manifest = _manifest(run_dir, cfg.digest(), files, assertions, started)
    print(f"analyze: {run_dir}  pass={manifest['pass']}")
    return 0 if manifest["pass"] else 1


def cmd_lemmas(args) -> int:
    if args.lemma == "degiorgi":
        theta = an.degiorgi_threshold(args.C, args.b, args.eps)
        out = {"threshold": theta, "C": args.C, "b": args.b, "eps": args.eps}
        if args.y0 is not None:
            out["y0"] = args.y0
            out["condition_met"] = bool(args.y0 <= theta)
            if out["condition_met"]:
                bounds = an.degiorgi_predict(args.y0, args.C, args.b, args.eps,
                                             np.arange(args.n + 1))
                out["bounds"] = [float(b) for b in bounds]
        print(json.dumps(out, indent=2, sort_keys=True))
        return 0
    if args.lemma == "integrability":
        data = np.genfromtxt(args.trace, delimiter=",", names=True)
        names = data.dtype.names
        t, Z = data[names[0]], data[names[1]]
        rep = an.integrability_check(t, Z, args.alpha, args.zeta)
        out = {
            "alpha_tilde": rep.alpha_tilde, "zeta": rep.zeta, "Y": rep.Y,
            "hypothesis_holds": rep.hypothesis_holds,
            "violation_time": rep.violation_time,
            "integral": rep.integral, "checked": rep.checked,
        }
        print(json.dumps(out, indent=2, sort_keys=True))
        return 0 if rep.hypothesis_holds else 1
    raise SystemExit(f"unknown lemma {args.lemma!r}")


def _sweep_worker(payload) -> tuple[str, bool]:
    text, outdir = payload
    cfg = ExperimentConfig.from_string(text)
    cfg.values["output"]["dir"] = outdir
    outpath = _prepare_outdir(cfg, exist_ok=False)
    grid = cfg.build_grid()
    model = cfg.build_model()
    stepper = cfg.build_stepper()
    phi0 = cfg.build_initial_field(grid)
    started = time.time()
    try:
        traj = run(model, phi0, cfg.t_max, stepper,
                   provenance={"config_digest": cfg.digest()})
        ok = traj.verify(tol_e=stepper.tol_e)["ok"]
    except StepFloorError as exc:
        traj = exc.trajectory
        ok = False
    files = _write_trajectory(outpath, traj)
    _manifest(outpath, cfg.digest(), files, {"run": ok}, started)
    return outdir, ok


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    key, _, values = args.axis.partition("=")
    section, _, name = key.partition(".")
    if not values or name == "":
        raise SystemExit("axis must look like section.key=v1,v2,...")
    if section not in cfg.values or name not in cfg.values[section]:
        raise SystemExit(f"unknown sweep key {key!r}")
    base = _resolve_outdir(cfg.output_dir)
    payloads = []
    for val in values.split(","):
        variant = ExperimentConfig.from_string(cfg.canonical())
        conv, _ = _SCHEMA[section][name]
        variant.values[section][name] = conv(val)
        variant.validate()
        outdir = base / f"{section}.{name}={val}"
        if outdir.exists():
            raise SystemExit(f"sweep output collision: {outdir}")
        payloads.append((variant.canonical(), str(outdir)))
    results = []
    if len(payloads) == 1:
        results.append(_sweep_worker(payloads[0]))
    else:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(4, len(payloads))) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    agg = {outdir: ok for outdir, ok in results}
    (base / "sweep_manifest.json").write_text(json.dumps(agg, indent=2, sort_keys=True))
    print(json.dumps(agg, indent=2, sort_keys=True))
    return 0 if all(agg.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phaselab",
                                description="phase-field gradient-flow laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate a configured model")
    s.add_argument("config")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("equilibrium", help="solve stationary states over the seed library")
    s.add_argument("config")
    s.set_defaults(fn=cmd_equilibrium)

    s = sub.add_parser("analyze", help="run the analysis battery on a run directory")
    s.add_argument("run_dir")
    s.add_argument("--M", nargs="*", default=None, help="good-time levels")
    s.add_argument("--delta", nargs="*", default=None, help="level-set depths")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("lemmas", help="standalone lemma utilities")
    lem = s.add_subparsers(dest="lemma", required=True)
    dg = lem.add_parser("degiorgi")
    dg.add_argument("--C", type=float, required=True)
    dg.add_argument("--b", type=float, required=True)
    dg.add_argument("--eps", type=float, required=True)
    dg.add_argument("--y0", type=float, default=None)
    dg.add_argument("--n", type=int, default=10)
    ig = lem.add_parser("integrability")
    ig.add_argument("trace", help="CSV with time and value columns")
    ig.add_argument("--alpha", type=float, required=True)
    ig.add_argument("--zeta", type=float, required=True)
    s.set_defaults(fn=cmd_lemmas)

    s = sub.add_parser("sweep", help="fan a config out along one parameter axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="section.key=v1,v2,...")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PhaselabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
