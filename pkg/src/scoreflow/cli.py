"""Command line entry point: ``scoreflow run|validate <config.json>``.

A config is one JSON object. Keys missing from it are filled from the
experiment's defaults, and the resolved config is written to
``manifest.json`` next to the outputs.

Exit codes: 0 all checks passed, 1 some check failed, 2 invalid config,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import fpgrid
from . import losses as ls
from .heatflow import log_density, log_density_jet
from .measures import (EmpiricalMeasure, fig1_measure, lemniscate_dataset, load_measure,
                       measure_from_dict, support_geometry, two_dirac_measure)
from .reverse import (IntegrationError, initial_states, make_schedule, run_ensemble,
                      write_trajectories_csv, SPACINGS)
from .score import empirical_field, li_yau_margin, make_candidate

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_SCHEDULE = {"T": 1.0, "spacing": "geometric"}

DEFAULTS: dict[str, dict] = {
    "fig1-score-profile": {
        "measure": {"preset": "fig1"},
        "schedule": dict(_SCHEDULE, t_min=0.01, n_steps=2),
        "epsilon": 0.0,
        "params": {"times": [1.0, 0.1, 0.01], "x_range": [-8.0, 8.0], "n_x": 1601,
                   "n_probes": 10000, "probe_seed": 0, "peak": -5.0, "peak_tol": 0.05},
    },
    "fig3-separatrix": {
        "measure": {"preset": "two-dirac"},
        "schedule": dict(_SCHEDULE, t_min=1e-8, n_steps=200),
        "epsilon": 0.0,
        "init": {"points": [[0.0, 2.0], [0.5, 2.0], [-0.5, 2.0]]},
        "params": {"targets": [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]], "tolerances": [1e-3, 1e-2, 1e-2]},
    },
    "fig2-lemniscate": {
        "measure": {"preset": "lemniscate", "n": 2000, "half_width": 1.0, "seed": 0},
        "schedule": dict(_SCHEDULE, t_min=1e-3, n_steps=150),
        "epsilon": 0.2,
        "init": {"gaussian": {"mean": [0.0, 0.0], "sigma": math.sqrt(2.0)}},
        "n_trajectories": 10000,
        "params": {"delta": 0.1, "sweep": [0.1, 0.01, 0.001], "threshold": 0.95},
    },
    "fp-energy": {
        "measure": {"preset": "fig1"},
        "schedule": dict(_SCHEDULE, t_min=0.01, n_steps=20),
        "params": {"epsilons": [0.0, 0.5], "p": [2, 4], "n_cells": 512, "slack": 0.05,
                   "vT_variance": 2.0, "scheme": "muscl"},
    },
    "kl-contraction": {
        "measure": {"preset": "fig1"},
        "schedule": dict(_SCHEDULE, t_min=0.01, n_steps=20),
        "epsilon": 0.5,
        "params": {"n_cells": 512, "vT_variance": 2.0, "monotone_tol": 1e-3,
                   "identity_tol": 0.02, "constant_tol": 0.02, "scheme": "muscl"},
    },
    "losses": {
        "measure": {"preset": "two-dirac"},
        "schedule": dict(_SCHEDULE, t_min=1e-3, n_steps=1),
        "params": {"n_pairs": 100000, "scales": [0.8, 0.9, 1.0, 1.1]},
    },
    "rates": {
        "measure": {"preset": "fig1"},
        "schedule": dict(_SCHEDULE, t_min=1e-6, n_steps=240),
        "epsilon": 0.0,
        "n_trajectories": 100,
        "params": {"margin": 3.0, "n_core_probes": 10000, "n_ou_probes": 1000},
    },
}

STOCHASTIC = {"fig2-lemniscate", "losses", "rates"}
# experiments whose epsilon drives an SDE (elsewhere it enters a PDE)
SDE_EXPERIMENTS = {"fig2-lemniscate", "fig3-separatrix"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in ("measure", "init"):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(config: dict) -> dict:
    """Fill defaults for the config's experiment."""
    exp = config.get("experiment")
    if exp not in DEFAULTS:
        raise ConfigError(f"unknown experiment {exp!r}; expected one of {sorted(DEFAULTS)}")
    return _merge(DEFAULTS[exp], config)


def build_measure(spec: dict, base_dir: Path | None = None) -> EmpiricalMeasure:
    if "preset" in spec:
        name = spec["preset"]
        if name == "fig1":
            return fig1_measure()
        if name == "two-dirac":
            return two_dirac_measure()
        if name == "lemniscate":
            return lemniscate_dataset(int(spec.get("n", 2000)), float(spec.get("half_width", 1.0)),
                                      spec.get("seed", 0))
        raise ConfigError(f"unknown measure preset {name!r}")
    if "file" in spec:
        path = Path(spec["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_measure(path)
    return measure_from_dict(spec)


def validate(config: dict, base_dir: Path | None = None) -> tuple[list[str], dict | None]:
    """Findings for ``config`` (empty when valid) and the resolved config."""
    findings: list[str] = []
    try:
        cfg = resolve(config)
    except ConfigError as exc:
        return [str(exc)], None
    try:
        mu = build_measure(cfg["measure"], base_dir)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        findings.append(f"measure: {exc}")
        mu = None
    sched = cfg.get("schedule", {})
    T, t_min = sched.get("T"), sched.get("t_min")
    if not isinstance(T, (int, float)) or not T > 0:
        findings.append("schedule.T must be a positive number")
    if not isinstance(t_min, (int, float)) or not t_min > 0:
        findings.append("schedule.t_min must be a positive number")
    elif isinstance(T, (int, float)) and t_min >= T:
        findings.append("schedule.t_min must be smaller than schedule.T")
    if not isinstance(sched.get("n_steps"), int) or sched["n_steps"] < 1:
        findings.append("schedule.n_steps must be a positive integer")
    if sched.get("spacing") not in SPACINGS:
        findings.append(f"schedule.spacing must be one of {list(SPACINGS)}")
    eps = cfg.get("epsilon", 0.0)
    if not isinstance(eps, (int, float)) or eps < 0:
        findings.append("epsilon must be a nonnegative number")
        eps = 0.0
    stochastic = cfg["experiment"] in STOCHASTIC or (eps > 0 and cfg["experiment"] in SDE_EXPERIMENTS)
    if stochastic and not isinstance(cfg.get("seed"), int):
        findings.append("seed required")
    n = cfg.get("n_trajectories")
    if n is not None and (not isinstance(n, int) or n < 1):
        findings.append("n_trajectories must be a positive integer")
    init = cfg.get("init")
    if init is not None and mu is not None and not findings:
        try:
            pts = init.get("points") if isinstance(init, dict) else init
            n_eff = n or (len(pts) if pts is not None else 1)
            initial_states(init, n_eff, mu.dim, cfg.get("seed", 0))
        except (ValueError, KeyError, TypeError) as exc:
            findings.append(f"init: {exc}")
    if mu is not None and cfg["experiment"] in ("fp-energy", "kl-contraction") and mu.dim != 1:
        findings.append("grid experiments need a one-dimensional measure")
    return findings, cfg


# ---------------------------------------------------------------------------
# outputs


@dataclass
class Outputs:
    directory: Path
    claims: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def path(self, name: str) -> Path:
        p = self.directory / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def claim(self, name: str, passed: bool, measured, bound, criterion: int | None = None,
              note: str | None = None) -> None:
        rec = {"check": name, "criterion": criterion, "measured": _jsonable(measured),
               "bound": _jsonable(bound), "passed": bool(passed)}
        if note:
            rec["note"] = note
        self.claims.append(rec)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# experiments


def _schedule(cfg):
    s = cfg["schedule"]
    return make_schedule(float(s["T"]), float(s["t_min"]), int(s["n_steps"]), s["spacing"])


def _probe_times(rng, n, lo=1e-6, hi=1.0):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def exp_fig1(cfg, mu, out: Outputs) -> None:
    p = cfg["params"]
    sf = empirical_field(mu)
    rng = np.random.default_rng(cfg.get("seed", p["probe_seed"]))
    xs = np.linspace(*p["x_range"], p["n_x"])
    if mu.dim == 1:
        with open(out.path("densities/profile.csv"), "w") as fh:
            fh.write("x,t,s,log_u\n")
            for t in p["times"]:
                s = sf.eval(xs, t)[:, 0]
                lu = log_density(mu, xs, t)
                for row in zip(xs, s, lu):
                    fh.write(",".join(repr(float(v)) for v in (row[0], t, row[1], row[2])) + "\n")
        t_last = min(p["times"])
        peak = xs[int(np.argmax(log_density(mu, xs, t_last)))]
        out.claim("log-density peak at smallest time", abs(peak - p["peak"]) <= p["peak_tol"],
                  float(peak), {"target": p["peak"], "tol": p["peak_tol"]})

    n = p["n_probes"]
    radius = float(np.max(np.linalg.norm(mu.points, axis=1)))
    box = radius + 3.0
    x = rng.uniform(-box, box, size=(n, mu.dim))
    t = _probe_times(rng, n)
    margin = li_yau_margin(sf, x, t)
    worst = float(np.min(margin * t / mu.dim))
    out.claim("Li-Yau margin", worst >= -1e-9, worst, -1e-9, 1,
              "min of (div s + d/(2t)) * t / d over probes")

    m = min(n, 1000)
    tc = np.exp(rng.uniform(np.log(1e-3), 0.0, m))
    xc = x[:m]
    g = sf.eval(xc, tc)
    fd = _fd_gradient(mu, xc, tc)
    rel = float(np.max(np.linalg.norm(fd - g, axis=1) / (np.linalg.norm(g, axis=1) + 1.0)))
    out.claim("score equals gradient of log-density", rel <= 1e-6, rel, 1e-6, 2)

    worst_hess = -np.inf
    for xi, ti in zip(x[:m], t[:m]):
        ev = np.linalg.eigvalsh(log_density_jet(mu, xi, ti).hessian)
        lo, hi = -1.0 / (2 * ti), -1.0 / (2 * ti) + radius**2 / (4 * ti * ti)
        worst_hess = max(worst_hess, float(np.max(np.maximum(lo - ev, ev - hi)) * ti * ti))
    out.claim("Hessian eigenvalue bounds", worst_hess <= 1e-9, worst_hess, 1e-9, 3,
              "largest excursion outside the band, times t^2")


def _fd_gradient(mu, x, t):
    """Five-point central differences of log u, step scaled to sqrt(t)."""
    n, d = x.shape
    h = 1e-3 * np.sqrt(t)
    g = np.empty((n, d))
    for a in range(d):
        e = np.zeros(d)
        e[a] = 1.0
        f = [log_density(mu, x + k * h[:, None] * e, t) for k in (-2, -1, 1, 2)]
        g[:, a] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return g


def exp_fig3(cfg, mu, out: Outputs) -> None:
    p = cfg["params"]
    sched = _schedule(cfg)
    sf = empirical_field(mu)
    pts = cfg["init"]["points"] if isinstance(cfg["init"], dict) else cfg["init"]
    ens = run_ensemble(sf, pts, sched, float(cfg["epsilon"]), len(pts), cfg.get("seed", 0),
                       method="ode" if cfg["epsilon"] == 0 else "sde")
    write_trajectories_csv(ens, out.path("trajectories.csv"))
    geom = support_geometry(mu)
    dg.write_diagnostics_csv([dg.trajectory_diagnostics(tr, mu, geom) for tr in ens],
                             out.path("diagnostics.csv"))
    for x0, term, target, tol in zip(pts, ens.terminal_states, p["targets"], p["tolerances"]):
        err = float(np.linalg.norm(term - np.asarray(target)))
        out.claim(f"terminal of x_T={list(x0)} near {list(target)}", err <= tol, err, tol, 9)
    worst = max(dg.hull_rate_check(tr, geom).worst_violation - dg.hull_rate_check(tr, geom).slack
                for tr in ens)
    out.claim("hull distance bound", worst <= 0, worst, 0.0, 6, "worst excess over bound plus slack")


def exp_fig2(cfg, mu, out: Outputs) -> None:
    p = cfg["params"]
    sched = _schedule(cfg)
    ens = run_ensemble(empirical_field(mu), cfg["init"], sched, float(cfg["epsilon"]),
                       int(cfg["n_trajectories"]), int(cfg["seed"]))
    masses = {}
    with open(out.path("trajectories.csv"), "w") as fh:
        fh.write("traj_id,t," + ",".join(f"x{a + 1}" for a in range(mu.dim)) + "\n")
        for t in p["sweep"]:
            states = ens.states_at(t)
            masses[t] = dg.neighborhood_mass(ens, mu, p["delta"], t)
            for i, x in enumerate(states):
                fh.write(f"{i},{t!r}," + ",".join(repr(float(v)) for v in x) + "\n")
    ordered = [masses[t] for t in sorted(p["sweep"], reverse=True)]
    mono = all(b >= a for a, b in zip(ordered, ordered[1:]))
    out.claim("neighborhood mass nondecreasing as t_min shrinks", mono, masses, "nondecreasing", 10,
              "point-wise fraction within delta of the data stands in for the 95% region")
    final = masses[min(p["sweep"])]
    out.claim("neighborhood mass at smallest t_min", final >= p["threshold"], final, p["threshold"], 10)


def _grid_setup(cfg, mu):
    p = cfg["params"]
    sched = _schedule(cfg)
    grid = fpgrid.Grid.for_measure(mu, sched.T, int(p["n_cells"]))
    vT = fpgrid.discretize_gaussian(grid, 0.0, float(p["vT_variance"]), sched.T)
    return p, sched, grid, vT


def exp_fp_energy(cfg, mu, out: Outputs) -> None:
    p, sched, grid, vT = _grid_setup(cfg, mu)
    sf = empirical_field(mu)
    d = mu.dim
    for eps in p["epsilons"]:
        sol = fpgrid.solve_backward_fp(sf, vT, sched, float(eps), p["scheme"])
        fpgrid.write_snapshots(sol, out.directory / "densities" / f"eps_{eps}", mu)
        out.files.append(f"densities/eps_{eps}")
        for q in p["p"]:
            base = fpgrid.lp_norm(vT, q)
            ratio = max(fpgrid.lp_norm(v, q) / ((sched.T / v.time) ** (d * (1 + eps) * (q - 1) / (2 * q)) * base)
                        for v in sol)
            out.claim(f"energy bound eps={eps} p={q}", ratio <= 1 + p["slack"], ratio, 1 + p["slack"], 4,
                      "max over nodes of norm / bound")
    # sharpness: v_T = u(T), eps = 0 reproduces u, whose L2 norm grows like t^(-1/4)
    sol = fpgrid.solve_backward_fp(sf, fpgrid.heat_density(grid, mu, sched.T), sched, 0.0, p["scheme"])
    k0 = int(np.argmin(np.abs(sched.nodes - 10 * sched.t_min)))
    n0 = fpgrid.lp_norm(sol[k0], 2)
    worst = min(fpgrid.lp_norm(sol[k], 2) / n0 / (0.5 * (sched.nodes[k0] / sched.nodes[k]) ** 0.25)
                for k in range(k0 + 1, len(sol)))
    out.claim("energy growth sharpness over the last decade", worst >= 1.0, worst, 1.0, 4,
              "min over nodes of growth / (0.5 (t0/t)^(1/4))")


def exp_kl(cfg, mu, out: Outputs) -> None:
    p, sched, grid, vT = _grid_setup(cfg, mu)
    sf = empirical_field(mu)
    eps = float(cfg["epsilon"])
    rep = fpgrid.kl_identity_residual(sf, vT, sched, eps, scheme=p["scheme"])
    fpgrid.write_snapshots(rep.solution, out.directory / "densities" / f"eps_{eps}", mu)
    out.files.append(f"densities/eps_{eps}")
    out.claim("KL nonincreasing backward", rep.monotone_violation <= p["monotone_tol"],
              rep.monotone_violation, p["monotone_tol"], 5)
    worst = float(rep.relative.max())
    out.claim("KL dissipation identity residual", worst <= p["identity_tol"], worst, p["identity_tol"], 5,
              "per-interval residual over total KL change")
    flat = fpgrid.kl_identity_residual(sf, vT, sched, 0.0, scheme=p["scheme"])
    drift = float(np.max(np.abs(flat.kl - flat.kl[0])) / flat.kl[0])
    out.claim("KL constant without noise", drift <= p["constant_tol"], drift, p["constant_tol"], 5)
    with open(out.path("diagnostics.csv"), "w") as fh:
        fh.write("t,kl,fisher,kl_eps0\n")
        for row in zip(rep.times, rep.kl, rep.fisher, flat.kl):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def exp_losses(cfg, mu, out: Outputs) -> None:
    p = cfg["params"]
    T, t_floor = float(cfg["schedule"]["T"]), float(cfg["schedule"]["t_min"])
    pairs = ls.sample_pairs(mu, T, int(p["n_pairs"]), int(cfg["seed"]), t_floor)
    sf = empirical_field(mu)
    sm = ls.score_matching_loss(sf, mu, T, pairs)
    dd = ls.ddpm_loss(sf, mu, T, pairs)
    pen = ls.penalized_loss(sf, mu, T, 0.0, pairs)
    out.claim("score matching equals DDPM bitwise", sm.value == dd.value, [sm.value, dd.value], "equal", 11)
    out.claim("penalized with lambda 0 equals score matching", pen.value == sm.value,
              [pen.value, sm.value], "equal", 11)
    report, shifts, values = [sm.to_dict(), dd.to_dict(), pen.to_dict()], [], {}
    for c in p["scales"]:
        cand = make_candidate(sf, scale=c)
        a = ls.integrand("score-matching", cand, mu, pairs)
        b = ls.integrand("hyvarinen", cand, mu, pairs)
        shifts.append(ls.difference_estimate(a, b, pairs))
        values[c] = ls.estimate(a, pairs, "score-matching").value
        report.append(dict(ls.hyvarinen_loss(cand, mu, T, pairs).to_dict(), scale=c))
    worst = max(abs(a[0] - b[0]) / math.hypot(a[1], b[1]) for i, a in enumerate(shifts) for b in shifts[i + 1:])
    out.claim("score matching minus Hyvarinen is candidate independent", worst <= 3.0, worst, 3.0, 11,
              "largest gap in pooled standard errors")
    best = min(values, key=values.get)
    out.claim("score matching minimized by the exact score", best == 1.0, values, "argmin at 1.0", 11)
    _dump(report, out.path("losses.json"))


def exp_rates(cfg, mu, out: Outputs) -> None:
    p = cfg["params"]
    sched = _schedule(cfg)
    sf = empirical_field(mu)
    geom = support_geometry(mu)
    init = cfg.get("init")
    if init is None:
        lo = mu.points.min(0) - p["margin"]
        hi = mu.points.max(0) + p["margin"]
        init = {"uniform": {"low": lo.tolist(), "high": hi.tolist()}}
    n = int(cfg["n_trajectories"])
    x0 = initial_states(init, n, mu.dim, int(cfg["seed"]))
    generic = ~np.asarray(dg.on_bisector(mu, x0)).reshape(-1)
    ens = run_ensemble(sf, x0[generic], sched, 0.0, int(generic.sum()), int(cfg["seed"]), method="ode")
    write_trajectories_csv(ens, out.path("trajectories.csv"))
    records = [dg.trajectory_diagnostics(tr, mu, geom) for tr in ens]
    dg.write_diagnostics_csv(records, out.path("diagnostics.csv"))

    worst = max(dg.hull_rate_check(tr, geom).worst_violation - dg.hull_rate_check(tr, geom).slack for tr in ens)
    out.claim("hull distance bound", worst <= 0, worst, 0.0, 6, "worst excess over bound plus slack")
    alphas = np.array([r.alpha for r in records])
    ok_alpha = bool(np.all((alphas >= 0.4) & (alphas <= 0.6)))
    out.claim("fitted rate exponent", ok_alpha, [float(alphas.min()), float(alphas.max())], [0.4, 0.6], 7)
    limit_ok = all(r.support_distance[-1] <= 10 * r.C * math.sqrt(sched.t_min) for r in records)
    out.claim("limit point is a data atom", limit_ok, int(sum(1 for r in records
              if r.support_distance[-1] <= 10 * r.C * math.sqrt(sched.t_min))), len(records), 7)
    out.claim("bisector initializations excluded", True, int((~generic).sum()), None, None)

    # mean-shift bound on core probes, core invariance along the trajectories
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg["seed"]), spawn_key=(2,)))
    worst1 = -np.inf
    if mu.size > 1:
        need = int(p["n_core_probes"])
        lo = mu.points.min(0) - p["margin"]
        hi = mu.points.max(0) + p["margin"]
        count = 0
        while count < need:
            x = rng.uniform(lo, hi, size=(need, mu.dim))
            t = np.exp(rng.uniform(np.log(1e-3), 0.0, need))
            for i in range(mu.size):
                vc = dg.voronoi_core(mu, i)
                inside = np.asarray(dg.membership(vc, mu, x)).reshape(-1)
                if not inside.any():
                    continue
                gap, bound = dg.mean_shift_gap(mu, vc, x[inside], t[inside])
                worst1 = max(worst1, float(np.max(gap - bound)))
                count += int(inside.sum())
        out.claim("mean-shift bound in the cores", worst1 <= 1e-12, worst1, 1e-12, 8)
    reports = [dg.claim2_invariance_check(tr, mu) for tr in ens]
    exits = sum(len(r.exits_after_entry) for r in reports)
    out.claim("core invariance after certified entry", exits == 0, exits, 0, 8,
              "recorded exits after the first node inside the core with the threshold met")
    gammas = [dg.voronoi_core(mu, i).gamma for i in range(mu.size)] if mu.size > 1 else [1.0]
    err = max(abs(q - c) for q, c in (dg.gamma_integral(g) for g in gammas))
    out.claim("Gamma integral constant", err <= 1e-8, err, 1e-8, 8)

    m = int(p["n_ou_probes"])
    xo = rng.normal(size=(m, mu.dim)) * 3
    tau = rng.uniform(0, 3, size=m)
    xh, th = dg.ou_to_heat(xo, tau[:, None])
    xb, tb = dg.heat_to_ou(xh, th)
    rt = float(max(np.max(np.abs(xb - xo)), np.max(np.abs(tb - tau[:, None]))))
    _, spot_tau = dg.heat_to_ou(1.0, 1.0)
    out.claim("OU to heat round trip", rt <= 1e-12, rt, 1e-12, 12)
    out.claim("t = 1 maps to tau = log(3)/2", abs(spot_tau - math.log(3) / 2) <= 1e-15, spot_tau,
              math.log(3) / 2, 12)


EXPERIMENTS = {
    "fig1-score-profile": exp_fig1,
    "fig3-separatrix": exp_fig3,
    "fig2-lemniscate": exp_fig2,
    "fp-energy": exp_fp_energy,
    "kl-contraction": exp_kl,
    "losses": exp_losses,
    "rates": exp_rates,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(config: dict, out_dir=None, base_dir: Path | None = None) -> int:
    """Run one experiment; returns the exit code."""
    findings, cfg = validate(config, base_dir)
    if findings:
        for f in findings:
            print(f"invalid config: {f}", file=sys.stderr)
        return EXIT_CONFIG
    directory = Path(out_dir or cfg.get("output", "out"))
    if base_dir is not None and not directory.is_absolute() and out_dir is None:
        directory = base_dir / directory
    directory.mkdir(parents=True, exist_ok=True)
    out = Outputs(directory)
    mu = build_measure(cfg["measure"], base_dir)
    try:
        with np.errstate(over="ignore", under="ignore"):
            EXPERIMENTS[cfg["experiment"]](cfg, mu, out)
    except (IntegrationError, fpgrid.FPSolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    passed = all(c["passed"] for c in out.claims)
    _dump({"experiment": cfg["experiment"], "passed": passed, "checks": out.claims},
          out.path("claims.json"))
    files = {}
    for name in sorted(set(out.files)):
        target = directory / name
        if target.is_dir():
            for f in sorted(target.rglob("*")):
                if f.is_file():
                    files[str(f.relative_to(directory))] = _sha256(f)
        elif target.is_file():
            files[name] = _sha256(target)
    _dump({"version": __version__, "config": cfg, "files": files}, directory / "manifest.json")
    status = "passed" if passed else "FAILED"
    print(f"{cfg['experiment']}: {sum(c['passed'] for c in out.claims)}/{len(out.claims)} checks {status}")
    return EXIT_OK if passed else EXIT_FAILED


def _read_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scoreflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help="output directory (overrides the config)")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        config = _read_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = Path(args.config).resolve().parent
    if args.command == "validate":
        findings, cfg = validate(config, base)
        print(json.dumps({"findings": findings, "resolved": _jsonable(cfg)}, indent=2, sort_keys=True))
        return EXIT_OK if not findings else EXIT_CONFIG
    return run(config, args.output, base)


if __name__ == "__main__":
    sys.exit(main())
