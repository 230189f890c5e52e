"""Scenario runners behind the command line.

Each runner takes an :class:`ExperimentConfig`, returns a JSON-ready report
with a top-level ``passed`` verdict, and (given an output directory) writes
the CSV artifacts the verdict can be recomputed from. Reports contain no
timings or timestamps, so identical configs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diagnostics import conservation_report, dissipation_check, kinetic_energy, omega_invariance
from ..dynamics import (FirstOrderSim, NonConvergenceError, SecondOrderSim, StepControl, StiffEncounterError,
                        find_equilibrium, run)
from ..ensemble import AtomicMeasure, Representation, moments, natural_velocities, to_second_order
from ..kernel import KernelParams, phi
from ..metrics import aw2, w2
from .config import ExperimentConfig, alpha_key, cell_rng, sample_block, sample_ensemble

__all__ = [
    "RateFit",
    "scenario_equivalence",
    "scenario_dissipation",
    "scenario_convergence_rate",
    "scenario_stability",
    "scenario_mean_field",
    "scenario_simulate",
    "write_report",
    "DISTANCE_FLOOR",
]

DISTANCE_FLOOR = 1e-10


# -- output helpers --------------------------------------------------------------------

def clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_report(report: dict, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(json.dumps(clean(report), indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path, header, rows):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def _control(cfg: ExperimentConfig, **kw) -> StepControl:
    return StepControl(rtol=cfg.rtol, atol=cfg.atol, **kw)


def _map(fn, jobs, args_list):
    if jobs > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args_list)))
    return [fn(*a) for a in args_list]


def _cell_key(d, alpha, n):
    return f"d={d},alpha={alpha:g},N={n}"


# -- dissipation -----------------------------------------------------------------------

def _dissipation_cell(cfg: ExperimentConfig, d: int, alpha: float, n: int):
    p = KernelParams(alpha)
    m0 = sample_ensemble(cfg.init, n, d, cell_rng(cfg.seed, d, n, alpha_key(alpha)), p)
    sim = FirstOrderSim(m0, p, _control(cfg))
    try:
        traj = run(sim, cfg.T, cfg.sample_dt)
    except StiffEncounterError as exc:
        return {"passed": False, "error": str(exc), "time": exc.time}, None
    res = dissipation_check(traj)
    summary = res.summary()
    summary.update(accepted_steps=traj.accepted_steps, rejected_steps=traj.rejected_steps,
                   merges=len(traj.events), relative_slack=res.slack / max(res.ledger.E_k[0], 1e-300))
    return summary, res.ledger.to_csv()


def scenario_dissipation(cfg: ExperimentConfig, out=None, plot_data=False) -> dict:
    cells = [(cfg, d, a, n) for d in cfg.d for a in cfg.alpha for n in cfg.N]
    results = _map(_dissipation_cell, cfg.jobs, cells)
    report = {"scenario": "dissipation", "config": cfg.to_dict(), "cells": {}}
    for (_, d, a, n), (summary, ledger_csv) in zip(cells, results):
        key = _cell_key(d, a, n)
        report["cells"][key] = summary
        if out is not None and ledger_csv is not None:
            stem = f"ledger_d{d}_a{alpha_key(a)}_N{n}"
            Path(out, f"{stem}.csv").write_text(ledger_csv)
    report["passed"] = all(c["passed"] for c in report["cells"].values())
    if out is not None and plot_data:
        rows = [(k, c.get("relative_slack", math.nan), c.get("slack", math.nan), c.get("quad_tol", math.nan))
                for k, c in sorted(report["cells"].items())]
        _write_csv(Path(out, "plot_dissipation_slack.csv"), ["cell", "relative_slack", "slack", "quad_tol"], rows)
    return report


# -- equivalence -----------------------------------------------------------------------

def sticking_pair(alpha: float, d: int) -> AtomicMeasure:
    """Two atoms at unit distance whose velocities give both the natural velocity 0.

    The gap closes at ``t* = (1 - alpha) / alpha``.
    """
    x = np.zeros((2, d))
    x[1, 0] = 1.0
    v = np.zeros((2, d))
    v[0, 0] = 0.5 / (1.0 - alpha)
    v[1, 0] = -v[0, 0]
    return AtomicMeasure.uniform(x, v, Representation.SECOND_ORDER)


def phase_discrepancy(a: AtomicMeasure, b: AtomicMeasure) -> float:
    """Largest per-atom phase-space distance between two ensembles with matching atom order."""
    dx = a.x - b.x
    dy = a.y - b.y
    return float(np.max(np.sqrt(np.einsum("ij,ij->i", dx, dx) + np.einsum("ij,ij->i", dy, dy))))


def _equivalence_case(cfg: ExperimentConfig, f0: AtomicMeasure, alpha: float):
    p = KernelParams(alpha)
    m0 = natural_velocities(f0, p)
    first = run(FirstOrderSim(m0, p, _control(cfg)), cfg.T, cfg.sample_dt)
    t_merge = first.first_merge_time()
    valid = [k for k, (t, s) in enumerate(zip(first.times, first.snapshots)) if t < t_merge and s.n == f0.n]
    valid = valid[: next((i for i, k in enumerate(valid) if k != i), len(valid))]
    times = [first.times[k] for k in valid]
    transformed = [to_second_order(first.snapshots[k], p) for k in valid]
    ladder = []
    series = {}
    for eps in cfg.epsilons:
        pe = KernelParams(alpha, eps)
        sim = SecondOrderSim(f0, pe, _control(cfg))
        disc = []
        for t, target in zip(times, transformed):
            if t > sim.time:
                sim.advance_to(t)
            disc.append(phase_discrepancy(sim.state, target))
        series[eps] = disc
        ladder.append(max(disc) if disc else 0.0)
    decreasing = all(b < a for a, b in zip(ladder, ladder[1:])) or max(ladder, default=0.0) == 0.0
    within = ladder[-1] <= cfg.discrepancy_tol if ladder else True
    case = {
        "N": f0.n,
        "d": f0.dim,
        "alpha": alpha,
        "epsilons": list(cfg.epsilons),
        "discrepancy": ladder,
        "mollifier_scale": [eps ** (1.0 - alpha) for eps in cfg.epsilons],
        "first_merge_time": t_merge,
        "window_samples": len(times),
        "window_end": times[-1] if times else 0.0,
        "shortened_window": len(times) < 10,
        "monotone": decreasing,
        "within_tolerance": within,
        "passed": decreasing and within,
    }
    return case, times, series


def scenario_equivalence(cfg: ExperimentConfig, out=None, plot_data=False) -> dict:
    report = {"scenario": "equivalence", "config": cfg.to_dict(), "cases": {}}
    for alpha in cfg.alpha:
        for d in cfg.d:
            for n in cfg.N:
                if n == 2 and cfg.closed_form:
                    f0 = sticking_pair(alpha, d)
                else:
                    f0 = sample_ensemble(cfg.init, n, d, cell_rng(cfg.seed, d, n, alpha_key(alpha)),
                                         KernelParams(alpha), "second_order")
                case, times, series = _equivalence_case(cfg, f0, alpha)
                key = _cell_key(d, alpha, n)
                report["cases"][key] = case
                if out is not None:
                    stem = f"equivalence_d{d}_a{alpha_key(alpha)}_N{n}"
                    header = ["t"] + [f"e_eps={e:g}" for e in cfg.epsilons]
                    rows = [[t] + [series[e][k] for e in cfg.epsilons] for k, t in enumerate(times)]
                    _write_csv(Path(out, f"{stem}.csv"), header, rows)
                    if plot_data:
                        _write_csv(Path(out, f"plot_{stem}_ladder.csv"), ["epsilon", "log10_discrepancy"],
                                   [(e, math.log10(v) if v > 0 else -math.inf)
                                    for e, v in zip(cfg.epsilons, case["discrepancy"])])
    report["passed"] = all(c["passed"] for c in report["cases"].values())
    return report


# -- convergence rate ------------------------------------------------------------------

@dataclass
class RateFit:
    """Distances to equilibrium with the fitted and theoretical exponents.

    ``fitted_C`` is the smallest prefactor for which the theoretical
    envelope covers every sample in the fit window; ``fitted_rate`` is the
    least-squares slope of ``-log d`` on the same window. Samples below
    :data:`DISTANCE_FLOOR` are left out of both.
    """

    times: list
    distances: list
    fitted_C: float
    fitted_rate: float
    theoretical_rate: float
    window_end: float
    first_order_rate: float = math.nan
    tolerance_factor: float = 1.05
    worst_ratio: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.tolerance_factor

    def to_dict(self) -> dict:
        return {
            "times": self.times,
            "distances": self.distances,
            "fitted_C": self.fitted_C,
            "fitted_rate": self.fitted_rate,
            "theoretical_rate": self.theoretical_rate,
            "first_order_rate": self.first_order_rate,
            "window_end": self.window_end,
            "tolerance_factor": self.tolerance_factor,
            "worst_ratio": self.worst_ratio,
            "passed": self.passed,
            **self.extra,
        }


def fit_rate(times, distances, theoretical_rate, window_end, tolerance_factor=1.05) -> RateFit:
    t = np.asarray(times, dtype=float)
    dist = np.asarray(distances, dtype=float)
    usable = dist > DISTANCE_FLOOR
    win = usable & (t <= window_end + 1e-12)
    if not np.any(usable):
        return RateFit(list(times), list(distances), 0.0, math.nan, theoretical_rate, window_end,
                       tolerance_factor=tolerance_factor)
    c_fit = float(np.max(dist[win] * np.exp(theoretical_rate * t[win]))) if np.any(win) else 0.0
    if np.count_nonzero(win) >= 2:
        slope = np.polyfit(t[win], np.log(dist[win]), 1)[0]
        fitted = float(-slope)
    else:
        fitted = math.nan
    envelope = c_fit * np.exp(-theoretical_rate * t[usable])
    with np.errstate(divide="ignore"):
        worst = float(np.max(dist[usable] / envelope)) if c_fit > 0 else math.inf
    return RateFit(list(times), list(distances), c_fit, fitted, theoretical_rate, window_end,
                   tolerance_factor=tolerance_factor, worst_ratio=worst)


def closed_form_rate_pair() -> AtomicMeasure:
    """Natural velocities -1 and 1 at -2 and 2; the gap relaxes to 1 (for alpha = 1/2)."""
    return AtomicMeasure.uniform(np.array([[-2.0], [2.0]]), np.array([[-1.0], [1.0]]), Representation.FIRST_ORDER)


def support_constant(geo, alpha) -> float:
    return max(geo.diam_x, geo.diam_omega ** (1.0 / (1.0 - alpha)))


def _rate_case(cfg: ExperimentConfig, m0: AtomicMeasure, alpha: float):
    p = KernelParams(alpha)
    eq = find_equilibrium(m0, p, tol=1e-12)
    f_inf = to_second_order(eq.measure, p)
    geo = moments(m0)
    d1 = support_constant(geo, alpha)
    rate = 4.0 * (1.0 - alpha) * float(phi(d1, p))
    traj = run(FirstOrderSim(m0, p, _control(cfg, track_dissipation=False)), cfg.T, cfg.sample_dt)
    dists = [w2(to_second_order(s, p), f_inf, coords="full").distance for s in traj.snapshots]
    fit = fit_rate(traj.times, dists, rate, cfg.fit_window * cfg.T, cfg.tolerance_factor)
    # first-order exponent, reported only
    fit.first_order_rate = 2.0 * float(phi(d1, p))
    fo = [w2(s, eq.measure, coords="full").distance for s in traj.snapshots]
    fo_fit = fit_rate(traj.times, fo, fit.first_order_rate, cfg.fit_window * cfg.T, cfg.tolerance_factor)
    fit.extra = {
        "N": m0.n,
        "d": m0.dim,
        "alpha": alpha,
        "D_x": geo.diam_x,
        "D_omega": geo.diam_omega,
        "D_1": d1,
        "equilibrium_residual": eq.residual,
        "equilibrium_positions": eq.measure.x.tolist() if m0.n <= 8 else None,
        "first_order_worst_ratio": fo_fit.worst_ratio,
        "first_order_fitted_rate": fo_fit.fitted_rate,
    }
    return fit


def _rate_ensembles(cfg: ExperimentConfig):
    out = []
    if cfg.closed_form:
        out.append(("closed_form", closed_form_rate_pair(), 0.5))
    alpha = cfg.alpha[0]
    p = KernelParams(alpha)
    for k in range(cfg.ensembles if cfg.N else 0):
        n, d = cfg.N[0], cfg.d[0]
        f0 = sample_ensemble(cfg.init, n, d, cell_rng(cfg.seed, d, n, alpha_key(alpha), k), p, "second_order")
        # zero mean velocity, hence zero mean natural velocity
        f0 = f0.replace(y=f0.y - f0.w @ f0.y)
        out.append((f"random_{k}", natural_velocities(f0, p), alpha))
    return out


def scenario_convergence_rate(cfg: ExperimentConfig, out=None, plot_data=False) -> dict:
    report = {"scenario": "convergence_rate", "config": cfg.to_dict(), "cases": {}}
    for name, m0, alpha in _rate_ensembles(cfg):
        try:
            fit = _rate_case(cfg, m0, alpha)
        except NonConvergenceError as exc:
            report["cases"][name] = {"passed": False, "error": str(exc), "residual": exc.residual}
            continue
        report["cases"][name] = fit.to_dict()
        if out is not None:
            env = [fit.fitted_C * math.exp(-fit.theoretical_rate * t) for t in fit.times]
            _write_csv(Path(out, f"rate_{name}.csv"), ["t", "W2", "envelope"], zip(fit.times, fit.distances, env))
            if plot_data:
                _write_csv(Path(out, f"plot_rate_{name}.csv"), ["t", "log_W2", "log_envelope"],
                           [(t, math.log(v) if v > 0 else -math.inf, math.log(e) if e > 0 else -math.inf)
                            for t, v, e in zip(fit.times, fit.distances, env)])
    report["passed"] = bool(report["cases"]) and all(c["passed"] for c in report["cases"].values())
    return report


# -- stability -------------------------------------------------------------------------

def perturbed_pair(f0: AtomicMeasure, rng: np.random.Generator, size: float):
    """Copy of ``f0`` with one atom moved by ``size``, recentred so both x-means agree."""
    j = int(rng.integers(f0.n))
    direction = rng.standard_normal(f0.dim)
    direction /= np.linalg.norm(direction)
    x = np.array(f0.x)
    x[j] += size * direction
    x -= f0.w[j] * size * direction
    return f0.replace(x=x), j


def contractivity_bound(d2: float, alpha: float) -> float:
    return 1.0 + 1.0 / (2.0 * float(phi(d2, KernelParams(alpha))))


def _stability_case(cfg: ExperimentConfig, f0: AtomicMeasure, g0: AtomicMeasure, alpha: float):
    p = KernelParams(alpha)
    m0, n0 = natural_velocities(f0, p), natural_velocities(g0, p)
    ga, gb = moments(m0), moments(n0)
    d2 = max(ga.diam_x, gb.diam_x, ga.diam_omega ** (1 / (1 - alpha)), gb.diam_omega ** (1 / (1 - alpha)))
    bound = contractivity_bound(d2, alpha)
    ctl = _control(cfg, track_dissipation=False)
    ta = run(FirstOrderSim(m0, p, ctl), cfg.T, cfg.sample_dt)
    tb = run(FirstOrderSim(n0, p, ctl), cfg.T, cfg.sample_dt)
    dists = [aw2(a, b).distance for a, b in zip(ta.snapshots, tb.snapshots)]
    d0 = dists[0]
    ratios = [v / d0 if d0 > 0 else 0.0 for v in dists]
    sup = max(ratios)
    return {
        "alpha": alpha,
        "N": f0.n,
        "d": f0.dim,
        "D_2": d2,
        "bound": bound,
        "dist0": d0,
        "sup_ratio": sup,
        "passed": sup <= bound * cfg.tolerance_factor,
    }, ta.times, dists


def scenario_stability(cfg: ExperimentConfig, out=None, plot_data=False) -> dict:
    report = {"scenario": "stability", "config": cfg.to_dict(), "cases": {}}
    alpha, n, d = cfg.alpha[0], cfg.N[0], cfg.d[0]
    p = KernelParams(alpha)
    for k in range(cfg.ensembles):
        rng = cell_rng(cfg.seed, d, n, alpha_key(alpha), k)
        f0 = sample_ensemble(cfg.init, n, d, rng, p, "second_order")
        g0, moved = perturbed_pair(f0, rng, cfg.perturbation)
        case, times, dists = _stability_case(cfg, f0, g0, alpha)
        case["moved_atom"] = moved
        report["cases"][f"pair_{k}"] = case
        if out is not None:
            _write_csv(Path(out, f"stability_pair_{k}.csv"), ["t", "AW2", "ratio"],
                       [(t, v, v / dists[0] if dists[0] > 0 else 0.0) for t, v in zip(times, dists)])
    report["passed"] = all(c["passed"] for c in report["cases"].values())
    if out is not None and plot_data:
        _write_csv(Path(out, "plot_stability.csv"), ["pair", "sup_ratio", "bound"],
                   [(k, c["sup_ratio"], c["bound"]) for k, c in sorted(report["cases"].items())])
    return report


# -- mean field ------------------------------------------------------------------------

def nested_ladder(cfg: ExperimentConfig, seed: int, d: int, alpha: float) -> list:
    """First-order ensembles of the ladder sizes; each one is a prefix of the next."""
    p = KernelParams(alpha)
    top = max(cfg.N)
    rng = cell_rng(seed, d, top, alpha_key(alpha))
    x = sample_block(rng, top, d, cfg.init.kind, cfg.init.x_range, cfg.init.x_std)
    y = sample_block(rng, top, d, cfg.init.kind, cfg.init.y_range, cfg.init.y_std)
    out = []
    for n in sorted(cfg.N):
        if cfg.init.y_kind == "omega":
            out.append(AtomicMeasure.uniform(x[:n], y[:n], Representation.FIRST_ORDER))
        else:
            out.append(natural_velocities(AtomicMeasure.uniform(x[:n], y[:n], Representation.SECOND_ORDER), p))
    return out


def scenario_mean_field(cfg: ExperimentConfig, out=None, plot_data=False) -> dict:
    report = {"scenario": "mean_field", "config": cfg.to_dict(), "seeds": {}}
    alpha, d = cfg.alpha[0], cfg.d[0]
    p = KernelParams(alpha)
    sizes = sorted(cfg.N)
    rows = []
    for k in range(cfg.ensembles):
        seed = cfg.seed + k
        ladder = nested_ladder(cfg, seed, d, alpha)
        ctl = _control(cfg, track_dissipation=False)
        trajs = [run(FirstOrderSim(m, p, ctl), cfg.T, cfg.sample_dt) for m in ladder]
        sups = []
        for a, b in zip(trajs, trajs[1:]):
            dist = [w2(sa, sb, coords="full").distance for sa, sb in zip(a.snapshots, b.snapshots)]
            sups.append(max(dist))
        decreasing = all(v2 < v1 for v1, v2 in zip(sups, sups[1:]))
        report["seeds"][str(seed)] = {"pairs": [[n1, n2] for n1, n2 in zip(sizes, sizes[1:])],
                                      "sup_distance": sups, "passed": decreasing}
        rows.extend((seed, n1, n2, v) for (n1, n2), v in zip(zip(sizes, sizes[1:]), sups))
    report["passed"] = all(s["passed"] for s in report["seeds"].values())
    if out is not None:
        _write_csv(Path(out, "mean_field_ladder.csv"), ["seed", "N", "N_next", "sup_W2"], rows)
        if plot_data:
            _write_csv(Path(out, "plot_mean_field.csv"), ["seed", "log2_N", "log10_sup_W2"],
                       [(s, math.log2(n1), math.log10(v) if v > 0 else -math.inf) for s, n1, _, v in rows])
    return report


# -- plain simulation ------------------------------------------------------------------

def scenario_simulate(cfg: ExperimentConfig, out=None, plot_data=False, initial: AtomicMeasure | None = None) -> dict:
    alpha = cfg.alpha[0]
    eps = cfg.epsilons[-1] if cfg.representation == "second_order" else 0.0
    p = KernelParams(alpha, eps)
    if initial is None:
        d, n = cfg.d[0], cfg.N[0]
        initial = sample_ensemble(cfg.init, n, d, cell_rng(cfg.seed, d, n, alpha_key(alpha)), p,
                                  cfg.representation)
    elif cfg.representation == "first_order" and not initial.is_first_order:
        initial = natural_velocities(initial, p)
    elif cfg.representation == "second_order" and initial.is_first_order:
        initial = to_second_order(initial, p)
    sim = FirstOrderSim(initial, p, _control(cfg)) if cfg.representation == "first_order" \
        else SecondOrderSim(initial, p, _control(cfg))
    report = {"scenario": "simulate", "config": cfg.to_dict()}
    try:
        traj = run(sim, cfg.T, cfg.sample_dt)
    except StiffEncounterError as exc:
        report.update(passed=False, error=str(exc))
        return report
    cons = conservation_report(traj)
    report.update(
        samples=len(traj.times),
        accepted_steps=traj.accepted_steps,
        rejected_steps=traj.rejected_steps,
        merges=[e.to_json() for e in traj.events],
        final_atoms=traj.snapshots[-1].n,
        conservation=cons.to_dict(),
        passed=True,
    )
    if traj.first_order:
        report["omega_invariant"] = omega_invariance(traj)
        report["kinetic_energy"] = [kinetic_energy(s, p) for s in (traj.snapshots[0], traj.snapshots[-1])]
    if out is not None:
        traj.to_jsonl(Path(out, "trajectory.jsonl"))
        if plot_data and traj.first_order:
            _write_csv(Path(out, "plot_kinetic_energy.csv"), ["t", "E_k"],
                       [(t, kinetic_energy(s, p)) for t, s in zip(traj.times, traj.snapshots)])
    return report

