"""Command-line front end.

Commands: ``check-tv``, ``check-wass``, ``simulate``, ``subordinate`` and
``report``.  Every command writes ``<command>.json`` and ``<command>.txt`` (plus
CSV plot data) into the output directory and exits with 0 iff all requested
checks pass, 1 if one fails and 2 on configuration or artifact errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
import warnings

import numpy as np

from . import config as cfgmod
from .distance import coupling_cost, decay_csv, decay_fit
from .geometry import (certify_flatness, check_subgeo_classical, lambda_constant, radial_profile)
from .lyapunov import build_geometric, build_subgeometric, hitting_bound, verify_drift_inequality
from .models import build_model
from .rates import (ModulusPair, RateRangeError, f_from_name, psi_big_inv,
                    rate_from_name, tv_rate_at, wasserstein_bound)
from .report import AnalysisReport, Check, render_text
from .simulate import (BACKEND, JumpSdeSpec, SubordinatorSpec, euler_maruyama, jump_sde,
                       synchronous_pair)
from .subordinate import SubordinatedRate, curve_csv, subordinate_rate

TV_CHECKS = ("tv_condition", "classical_subgeo", "lyapunov_verify", "hitting_bound")
ARTIFACT_FOR = {
    "tv_condition": "check-tv",
    "classical_subgeo": "check-tv",
    "lyapunov_verify": "check-tv",
    "hitting_bound": "check-tv",
    "wasserstein_contraction": "check-wass",
    "subordinate": "subordinate",
}


def _err(stage, exc):
    out = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("radius", "largest", "worst", "abscissa"):
        if getattr(exc, attr, None) is not None:
            out["quantity"] = {attr: getattr(exc, attr)}
    return out


def _write_csv(out_dir, name, text, report):
    if "csv" not in report.config["output"]["formats"]:
        return
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    report.artifacts.append(name)


def _model(cfg):
    m = cfg["model"]
    return build_model(m["family"], m["params"], m["jump"])


# -- check-tv ----------------------------------------------------------------------------

def _lyapunov_points(table, dim, n):
    """``n`` points with ``|x - x0|`` spread over ``[r1, 10 r1]``."""
    x0 = table.profile.center
    top = min(10.0 * table.r1, table.r_max)
    if dim == 1:
        half = n // 2
        radii = np.concatenate([np.linspace(table.r1, top, half), np.linspace(table.r1, top, n - half)])
        dirs = np.where(np.arange(n) < half, 1.0, -1.0)[:, None]
    else:
        from .geometry import sphere_directions
        radii = np.linspace(table.r1, top, n)
        dirs = sphere_directions(dim, n, 7)[:n]
    return x0[None, :] + radii[:, None] * dirs


def cmd_check_tv(cfg, out_dir, tol_scale=1.0):
    rep = AnalysisReport("check-tv", cfg, backend=BACKEND)
    num = cfg["numeric"]
    wanted = [a for a in cfg["analysis"] if a in TV_CHECKS] or ["tv_condition", "lyapunov_verify"]
    tol = float(num["tolerance"]) * tol_scale
    try:
        model = _model(cfg)
    except Exception as exc:  # noqa: BLE001 - surfaced in the report
        rep.checks.append(Check("model", False, "model construction failed", error=_err("model", exc)))
        return rep
    x0 = np.atleast_1d(np.asarray(num["x0"], dtype=float))
    if x0.size == 1 and model.dim > 1:
        x0 = np.full(model.dim, float(x0[0]))
    r0 = float(num["r0"])
    geometric = bool(num["geometric"])
    rate_name = "identity" if geometric else num["rate"]
    verdict = None
    need_lambda = "tv_condition" in wanted or "lyapunov_verify" in wanted
    if need_lambda:
        try:
            prof = radial_profile(model, x0, r0, sphere_samples=int(num["sphere_samples"]), r_max=num["r_max"])
            verdict = lambda_constant(prof, rate_name)
        except Exception as exc:  # noqa: BLE001
            rep.checks.append(Check("tv_condition", False, "integral test could not be evaluated",
                                    error=_err("radial_profile/lambda", exc)))
    if verdict is not None and "tv_condition" in wanted:
        vals = {"Lambda": verdict.value, "log_Lambda": verdict.log_value, "status": verdict.status,
                "rate": rate_name, "branch": "geometric" if geometric else "subgeometric",
                "r_max": verdict.r_max, "tail_bound": verdict.tail_bound, "x0": x0.tolist(), "r0": r0,
                "grid_points": int(verdict.profile.grid.size),
                "sphere_samples": int(verdict.profile.sphere_samples)}
        if verdict.finite:
            rate = rate_from_name(rate_name)
            times = [float(t) for t in num["rate_times"]]
            curve = []
            for t in times:
                try:
                    curve.append(tv_rate_at(rate, t))
                except (RateRangeError, OverflowError):
                    curve.append(math.inf)
            vals["rate_times"] = times
            vals["rate_curve"] = curve
            if rate.label.startswith("power("):
                a = float(rate.label[6:-1])
                vals["rate_exponent"] = a / (1 - a)
            lines = "t,rate\n" + "".join(f"{t!r},{v!r}\n" for t, v in zip(times, curve))
            _write_csv(out_dir, "rate_curve.csv", lines, rep)
            text = (f"integral condition holds: Lambda = {verdict.value!r}"
                    + (" (geometric branch)" if geometric else ""))
        else:
            text = f"integral condition not established: Lambda {verdict.status}; no rate"
        rep.checks.append(Check("tv_condition", verdict.finite, text, vals))
    if "classical_subgeo" in wanted:
        c = num["classical"]
        try:
            sv = check_subgeo_classical(model, float(c["alpha"]), float(c["gamma"]), float(c["Gamma"]), r0,
                                        x0, r_max=c["r_max"], step=float(c["step"]))
            expect = c["expect"]
            state = "holds" if sv.feasible else "fails"
            ok = (state == expect) if expect else sv.feasible
            peaks = sorted({round(float(np.abs(np.atleast_1d(p)).max()), 3) for p in sv.violation_peaks})
            rep.checks.append(Check("classical_subgeo", ok, f"classical sub-geometric condition {state}"
                                    + (f" (expected {expect})" if expect else ""),
                                    {"worst_margin": sv.worst_margin, "worst_point": sv.worst_point,
                                     "n_points": sv.n_points, "violation_radii": peaks[:50],
                                     "params": sv.params}))
        except Exception as exc:  # noqa: BLE001
            rep.checks.append(Check("classical_subgeo", False, "check failed", error=_err("classical", exc)))
    if "lyapunov_verify" in wanted:
        if verdict is None or not verdict.finite:
            rep.checks.append(Check("lyapunov_verify", False, "no Lyapunov function: Lambda is not finite",
                                    error={"stage": "lyapunov", "quantity": {
                                        "Lambda_status": None if verdict is None else verdict.status}}))
        else:
            ly = num["lyapunov"]
            try:
                build = build_geometric if geometric else build_subgeometric
                table = build(None, verdict, r1=ly["r1"])
                pts = _lyapunov_points(table, model.dim, int(ly["n_points"]))
                dr = verify_drift_inequality(table, model, pts, tol=tol)
                vals = {"kind": table.kind, "r1": table.r1, "Lambda": table.lambda_used,
                        "max_violation": dr.max_violation, "tail_budget": dr.tail_budget,
                        "tolerance": tol, "n_points": dr.n_points, "worst_point": dr.worst_point}
                if dr.jump_term_max is not None:
                    vals["jump_term_max"] = dr.jump_term_max
                    vals["jump_excess_max"] = dr.jump_excess_max
                if table.kind == "subgeometric":
                    rr = table.r[1:]
                    margin = float(np.min(table._log_J.left(rr) - table.log_vbar(rr)))
                    vals["en_log_margin"] = margin
                _write_csv(out_dir, "lyapunov_table.csv",
                           "r,vbar,vbar_d1,vbar_d2\n" + "".join(
                               f"{a!r},{b!r},{c!r},{d!r}\n" for a, b, c, d in
                               zip(table.r.tolist(), table.vbar.tolist(), table.vbar_d1.tolist(),
                                   table.vbar_d2.tolist())), rep)
                rep.checks.append(Check("lyapunov_verify", dr.passed,
                                        f"drift inequality {'holds' if dr.passed else 'violated'} at "
                                        f"{dr.n_points} points", vals))
            except Exception as exc:  # noqa: BLE001
                rep.checks.append(Check("lyapunov_verify", False, "Lyapunov stage refused",
                                        error=_err("lyapunov", exc)))
    if "hitting_bound" in wanted:
        h = num["hitting"]
        for xv in h["x"]:
            xp = np.atleast_1d(np.asarray(xv, dtype=float))
            try:
                hb = hitting_bound(model, x0, r0, xp, eps=h["eps"])
                rep.checks.append(Check(f"hitting_bound[{xp.tolist()}]", hb.bound < 1.0,
                                        f"P(never enter B_r0) <= {hb.bound!r} ({hb.status})",
                                        {"bound": hb.bound, "status": hb.status, "eps": hb.eps,
                                         "log_vbar_x": hb.log_vbar_x, "log_vbar_inf": hb.log_vbar_inf}))
            except Exception as exc:  # noqa: BLE001
                rep.checks.append(Check(f"hitting_bound[{xp.tolist()}]", False, "refused",
                                        error=_err("hitting_bound", exc)))
    return rep


# -- check-wass --------------------------------------------------------------------------

def cmd_check_wass(cfg, out_dir, tol_scale=1.0):
    rep = AnalysisReport("check-wass", cfg, backend=BACKEND)
    num = cfg["numeric"]
    w = num["wasserstein"]
    sim = num["simulation"]
    try:
        model = _model(cfg)
        probe = ModulusPair.from_names(w["f"], w["psi"], gamma=float(w["gamma"]), Gamma=1.0)
        cert = certify_flatness(model, probe, radius=float(w["scan_radius"]), n=int(w["scan_points"]))
    except Exception as exc:  # noqa: BLE001
        rep.checks.append(Check("wasserstein_contraction", False, "setup failed", error=_err("setup", exc)))
        return rep
    Gamma = cert.Gamma if w["Gamma"] is None else float(w["Gamma"])
    cert_vals = {"certified_Gamma": cert.Gamma, "Gamma_used": Gamma, "zero_branch_max": cert.worst_zero_branch,
                 "n_pairs": cert.n_pairs, "worst_pair": cert.worst_pair}
    if not (cert.holds and Gamma <= cert.Gamma and Gamma > 0):
        rep.checks.append(Check("flatness_condition", False, "flatness condition not certified on the grid",
                                cert_vals))
        return rep
    rep.checks.append(Check("flatness_condition", True, f"flatness condition certified with Gamma = {Gamma!r}",
                            cert_vals))
    mod = ModulusPair.from_names(w["f"], w["psi"], gamma=float(w["gamma"]), Gamma=Gamma)
    f = f_from_name(w["f"])[0]
    p = float(w["p"])
    dt = float(sim["dt"])
    slack = float(w["slack_dt"]) * dt * tol_scale
    for i, pair in enumerate(w["pairs"]):
        x, y = np.atleast_1d(np.asarray(pair[0], dtype=float)), np.atleast_1d(np.asarray(pair[1], dtype=float))
        name = f"coupling[{i}]"
        try:
            ens = synchronous_pair(model, x, y, float(sim["T"]), dt, int(sim["n_paths"]),
                                   int(num["seed"]) + i, record_every=int(sim["record_every"]),
                                   workers=int(sim["workers"]))
        except Exception as exc:  # noqa: BLE001
            rep.checks.append(Check(name, False, "simulation refused", error=_err("synchronous_pair", exc)))
            continue
        t = ens.times
        mult, kappa, bound = wasserstein_bound(mod, x, y, t, w["kappa"])
        dist = ens.distances()[ens.valid]
        fd = np.asarray(f(dist), dtype=float)
        cost = coupling_cost(ens, mod, p, t_index=None)
        cost_excess = float(np.max(cost - bound))
        vals = {"x": x.tolist(), "y": y.tolist(), "multiplier": mult, "kappa": kappa,
                "cost_excess_max": cost_excess, "slack": slack, "n_flagged": ens.n_flagged,
                "coupled_fraction": float(np.mean(np.isfinite(ens.coupling_times)))}
        ok = cost_excess <= slack
        if mult == 1:
            pathwise = float(np.max(fd - bound[None, :])) if fd.size else -math.inf
            vals["pathwise_excess_max"] = pathwise
            ok = ok and pathwise <= slack
        # monotone distance along each path (zero branch of the condition)
        inc = np.diff(fd, axis=1)
        vals["max_path_increase"] = float(np.max(inc)) if inc.size else 0.0
        sel = (t >= float(w["fit_from"])) & (cost > 0)
        if np.count_nonzero(sel) >= 5:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = decay_fit(t[sel], cost[sel], w["fit"], mod=mod, kappa=kappa if w["fit"] == "psi_inverse" else None)
            vals["fit"] = {"model": fit.model, **fit.params, "residual": fit.residual}
        _write_csv(out_dir, f"decay_{i}.csv", decay_csv(t, cost, bound), rep)
        rep.checks.append(Check(name, bool(ok),
                                f"coupling cost {'within' if ok else 'exceeds'} the predicted bound", vals))
    return rep


# -- simulate ------------------------------------------------------------------------------

def cmd_simulate(cfg, out_dir, tol_scale=1.0):
    rep = AnalysisReport("simulate", cfg, backend=BACKEND)
    num = cfg["numeric"]
    sim = num["simulation"]
    try:
        model = _model(cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if model.has_jumps:
                ens = jump_sde(JumpSdeSpec.from_model(model), sim["starts"], float(sim["T"]), float(sim["dt"]),
                               int(sim["n_paths"]), int(num["seed"]), record_every=int(sim["record_every"]))
            else:
                ens = euler_maruyama(model, sim["starts"], float(sim["T"]), float(sim["dt"]),
                                     int(sim["n_paths"]), int(num["seed"]),
                                     record_every=int(sim["record_every"]), workers=int(sim["workers"]))
        rep.warnings.extend(str(c.message) for c in caught)
    except Exception as exc:  # noqa: BLE001
        rep.checks.append(Check("simulate", False, "simulation failed", error=_err("simulate", exc)))
        return rep
    os.makedirs(out_dir, exist_ok=True)
    ens.save_npz(os.path.join(out_dir, "ensemble.npz"))
    rep.artifacts.append("ensemble.npz")
    _write_csv(out_dir, "ensemble_summary.csv", ens.summary_csv(), rep)
    xT = ens.marginal(-1)
    rep.backend = ens.backend
    rep.checks.append(Check("simulate", True, f"{ens.n_paths} paths simulated ({ens.n_flagged} flagged)",
                            {"n_paths": ens.n_paths, "n_times": int(ens.times.size), "dt": ens.dt,
                             "n_flagged": ens.n_flagged, "scheme": ens.scheme,
                             "final_mean": xT.mean(axis=0).tolist(), "final_var": xT.var(axis=0).tolist()}))
    return rep


# -- subordinate --------------------------------------------------------------------------

def _base_rate(name, num):
    if name.startswith("exp(") and name.endswith(")"):
        lam = float(name[4:-1])
        return lambda s: np.exp(-lam * np.asarray(s, dtype=float))
    if name.startswith("power(") and name.endswith(")"):
        q = float(name[6:-1])
        return lambda s: (1.0 + np.asarray(s, dtype=float)) ** (-q)
    if name == "tv_bound":
        rate = rate_from_name(num["rate"])
        return np.vectorize(lambda s: 1.0 / tv_rate_at(rate, float(s)))
    if name == "gronwall":
        w = num["wasserstein"]
        mod = ModulusPair.from_names(w["f"], w["psi"], gamma=float(w["gamma"]), Gamma=float(w["Gamma"] or 1.0))
        k = float(w["kappa"] or w["gamma"])
        return np.vectorize(lambda s: psi_big_inv(mod, k, mod.contraction_const * float(s)))
    raise ValueError(f"unknown base rate {name!r}")


def cmd_subordinate(cfg, out_dir, tol_scale=1.0):
    rep = AnalysisReport("subordinate", cfg, backend=BACKEND)
    num = cfg["numeric"]
    s = num["subordinate"]
    try:
        fam = s["family"]
        if fam == "compound_poisson":
            spec = SubordinatorSpec.exponential_jumps(float(s["lam"]), float(s["jump_mean"]), float(s["b"]))
        else:
            spec = SubordinatorSpec(fam, a=float(s["a"]), b=float(s["b"]))
        r = _base_rate(s["base_rate"], num)
    except Exception as exc:  # noqa: BLE001
        rep.checks.append(Check("subordinate", False, "setup failed", error=_err("setup", exc)))
        return rep
    times = [float(t) for t in s["times"]]
    curves = {}
    heavy = []
    for p in s["p"]:
        sr = SubordinatedRate(r, spec, p=float(p), method=s["method"], n=int(s["n"]), seed=int(num["seed"]),
                              batches=int(s["batches"]), label=s["base_rate"])
        est = [subordinate_rate(sr, t) for t in times]
        curves[float(p)] = est
        heavy += [f"p={p}, t={t}" for t, e in zip(times, est) if e.heavy_tail]
        _write_csv(out_dir, f"subordinated_p{float(p):g}.csv",
                   curve_csv(times, [e.value for e in est], [e.se for e in est]), rep)
    if heavy:
        rep.warnings.append("top-decile mass above 90% (variance may be unreliable): " + "; ".join(heavy))
    ps = sorted(curves)
    monotone = all(curves[b][i].value >= curves[a][i].value * (1 - 1e-12)
                   for a, b in zip(ps[:-1], ps[1:]) for i in range(len(times)))
    vals = {"times": times, "family": fam, "bernstein_at_1": float(spec.bernstein(1.0))}
    for p in ps:
        vals[f"p={p:g}"] = {"value": [e.value for e in curves[p]], "se": [e.se for e in curves[p]]}
    finite = all(math.isfinite(e.value) for v in curves.values() for e in v)
    rep.checks.append(Check("subordinate", finite and monotone,
                            "subordinated rates computed" + ("" if monotone else "; p-monotonicity violated"),
                            vals))
    return rep


# -- report --------------------------------------------------------------------------------

def cmd_report(cfg, out_dir, tol_scale=1.0):
    """Consolidate earlier command outputs; returns ``(report_dict, exit_code)``."""
    needed = []
    for a in cfg["analysis"]:
        cmd = ARTIFACT_FOR[a]
        if cmd not in needed:
            needed.append(cmd)
    missing = [c for c in needed if not os.path.exists(os.path.join(out_dir, f"{c}.json"))]
    if missing:
        return {"missing": [f"{c}.json" for c in missing]}, 2
    checks, warns, sources = [], [], []
    for c in needed:
        with open(os.path.join(out_dir, f"{c}.json")) as fh:
            d = json.load(fh)
        sources.append({"command": c, "config_hash": d["provenance"]["config_hash"],
                        "seed": d["provenance"]["seed"]})
        for ch in d["checks"]:
            ch = dict(ch)
            ch["name"] = f"{c}:{ch['name']}"
            checks.append(ch)
        warns += d["warnings"]
    from . import __version__
    rep = {
        "command": "report",
        "passed": all(ch["passed"] for ch in checks),
        "checks": checks,
        "warnings": warns,
        "artifacts": [f"{c}.json" for c in needed],
        "provenance": {"config_hash": cfgmod.config_hash(cfg), "seed": cfg["numeric"]["seed"],
                       "version": __version__, "backend": BACKEND,
                       "schema_version": cfg["schema_version"], "sources": json.dumps(sources)},
        "config": cfg,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(render_text(rep))
    # CSV plot data: one row per check
    if "csv" in cfg["output"]["formats"]:
        with open(os.path.join(out_dir, "report_checks.csv"), "w") as fh:
            fh.write("check,passed,verdict\n")
            for ch in checks:
                fh.write(f"{ch['name']},{int(ch['passed'])},\"{ch['verdict']}\"\n")
    return rep, 0 if rep["passed"] else 1


COMMANDS = {
    "check-tv": cmd_check_tv,
    "check-wass": cmd_check_wass,
    "simulate": cmd_simulate,
    "subordinate": cmd_subordinate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="subgeo", description="Sub-geometric ergodicity checks for SDEs")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("check-tv", "check-wass", "simulate", "subordinate", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="YAML run configuration")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, metavar="N", help="seed (overrides numeric.seed)")
        sp.add_argument("--tolerance-scale", type=float, default=1.0, metavar="F",
                        help="multiply every pass/fail tolerance by F")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({})
    except (OSError, cfgmod.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["numeric"]["seed"] = int(args.seed)
    if not args.tolerance_scale > 0:
        print("config error: --tolerance-scale must be positive", file=sys.stderr)
        return 2
    out_dir = args.out or cfg["output"]["dir"]
    if args.command == "report":
        rep, code = cmd_report(cfg, out_dir, args.tolerance_scale)
        if code == 2:
            print("missing artifacts:\n  " + "\n  ".join(rep["missing"]), file=sys.stderr)
        else:
            print(render_text(rep), end="")
        return code
    try:
        rep = COMMANDS[args.command](cfg, out_dir, args.tolerance_scale)
    except Exception:  # noqa: BLE001 - last-resort guard, details on stderr
        traceback.print_exc()
        return 2
    rep.write(out_dir)
    print(rep.to_text(), end="")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
