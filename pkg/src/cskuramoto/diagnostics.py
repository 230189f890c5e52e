"""Energy, enstrophy and conservation ledgers along trajectories.

For a first-order ensemble with field values ``u_i``::

    E_k = 1/2 sum_i w_i |u_i|^2
    D_k = 1/2 sum_{i != j} w_i w_j |u_i - u_j|^2 phi(|x_i - x_j|)

and along any run ``E_k(T) - E_k(0) + int_0^T D_k dt <= 0``. The total
energy ``-sum_i w_i x_i.omega_i + 1/2 sum_{i,j} w_i w_j W(x_i - x_j)`` is the
functional whose gradient flow the first-order system is; it decreases at
rate ``2 E_k``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _pairwise
from .dynamics import Trajectory
from .ensemble import AtomicMeasure, disintegrate, omega_key, to_second_order
from .kernel import KernelParams

__all__ = [
    "kinetic_energy",
    "enstrophy",
    "interaction_energy",
    "total_energy",
    "field_values",
    "EnergyLedger",
    "energy_ledger",
    "dissipation_check",
    "DissipationResult",
    "conservation_report",
    "ConservationReport",
]


def field_values(m: AtomicMeasure, p: KernelParams) -> np.ndarray:
    if not m.is_first_order:
        raise ValueError("energy diagnostics take first-order measures")
    return m.y - _pairwise.grad_conv(m.x, m.x, m.w, p.alpha, p.epsilon)


def kinetic_energy(m: AtomicMeasure, p: KernelParams, u=None) -> float:
    u = field_values(m, p) if u is None else u
    return 0.5 * math.fsum(m.w * np.einsum("ij,ij->i", u, u))


def enstrophy(m: AtomicMeasure, p: KernelParams, u=None) -> float:
    """Enstrophy; ``inf`` when two atoms with different field values coincide."""
    u = field_values(m, p) if u is None else u
    return _pairwise.enstrophy_sum(m.x, u, m.w, p.alpha, p.epsilon)


def interaction_energy(m: AtomicMeasure, p: KernelParams) -> float:
    """``sum_{i,j} w_i w_j W(x_i - x_j)`` (diagonal included, ``W(0)`` is harmless)."""
    return _pairwise.interaction_sum(m.x, m.w, p.alpha, p.epsilon)


def total_energy(m: AtomicMeasure, p: KernelParams) -> float:
    if not m.is_first_order:
        raise ValueError("total energy is defined on first-order measures")
    drift = math.fsum(m.w * np.einsum("ij,ij->i", m.x, m.y))
    return -drift + 0.5 * interaction_energy(m, p)


@dataclass
class EnergyLedger:
    times: np.ndarray
    E_k: np.ndarray
    D_k: np.ndarray
    dissipation_integral: np.ndarray  # accumulated by the integrator
    trapezoid_integral: np.ndarray  # trapezoid rule on the samples
    total_energy: np.ndarray
    second_moments_x: np.ndarray
    second_moments_y: np.ndarray
    mean_y: np.ndarray
    collision_samples: list = field(default_factory=list)
    spikes: list = field(default_factory=list)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["t", "E_k", "D_k", "diss_integral", "total_energy", "m2x", "m2y"])
        for row in zip(self.times, self.E_k, self.D_k, self.dissipation_integral, self.total_energy,
                       self.second_moments_x, self.second_moments_y):
            out.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _trapezoid_skip(times, values):
    """Cumulative trapezoid rule; intervals touching a non-finite sample are dropped."""
    out = np.zeros(len(times))
    for k in range(1, len(times)):
        a, b = values[k - 1], values[k]
        step = 0.5 * (a + b) * (times[k] - times[k - 1]) if math.isfinite(a) and math.isfinite(b) else 0.0
        out[k] = out[k - 1] + step
    return out


def energy_ledger(traj: Trajectory) -> EnergyLedger:
    if not traj.first_order:
        raise ValueError("energy ledger needs a first-order trajectory")
    p = traj.params
    times = np.asarray(traj.times, dtype=float)
    ek, dk, te, m2x, m2y, my = [], [], [], [], [], []
    for m in traj.snapshots:
        u = field_values(m, p)
        ek.append(kinetic_energy(m, p, u))
        dk.append(enstrophy(m, p, u))
        te.append(total_energy(m, p))
        m2x.append(math.fsum(m.w * np.einsum("ij,ij->i", m.x, m.x)))
        m2y.append(math.fsum(m.w * np.einsum("ij,ij->i", m.y, m.y)))
        my.append(m.w @ m.y)
    dk = np.asarray(dk)
    collisions = [float(t) for t, v in zip(times, dk) if not math.isfinite(v)]
    finite = dk[np.isfinite(dk)]
    spikes = []
    if finite.size:
        med = float(np.median(finite))
        spikes = [float(t) for t, v in zip(times, dk) if math.isfinite(v) and med > 0 and v > 10 * med]
    if traj.dissipation and len(traj.dissipation) == len(times):
        acc = np.asarray(traj.dissipation, dtype=float) - traj.dissipation[0]
    else:
        acc = _trapezoid_skip(times, dk)
    return EnergyLedger(times, np.asarray(ek), dk, acc, _trapezoid_skip(times, dk), np.asarray(te),
                        np.asarray(m2x), np.asarray(m2y), np.asarray(my), collisions, spikes)


@dataclass
class DissipationResult:
    ledger: EnergyLedger
    slack: float  # E_k(T) - E_k(0) + int D_k, integrator quadrature
    slack_trapezoid: float
    richardson_error: float  # trapezoid at full vs half sampling
    quad_tol: float
    energy_increase: float  # largest sample-to-sample increase of the total energy

    @property
    def passed(self) -> bool:
        return self.slack <= self.quad_tol

    def summary(self) -> dict:
        return {
            "slack": self.slack,
            "slack_trapezoid": self.slack_trapezoid,
            "richardson_error": self.richardson_error,
            "quad_tol": self.quad_tol,
            "E_k0": float(self.ledger.E_k[0]),
            "E_kT": float(self.ledger.E_k[-1]),
            "dissipation_integral": float(self.ledger.dissipation_integral[-1]),
            "max_total_energy_increase": self.energy_increase,
            "collision_samples": self.ledger.collision_samples,
            "enstrophy_spikes": self.ledger.spikes,
            "passed": self.passed,
        }

    def write(self, outdir, stem="ledger"):
        outdir = Path(outdir)
        self.ledger.to_csv(outdir / f"{stem}.csv")
        (outdir / f"{stem}_summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def dissipation_check(traj: Trajectory, quad_tol: float | None = None) -> DissipationResult:
    """Evaluate ``E_k(T) - E_k(0) + int D_k dt`` along a first-order trajectory.

    ``quad_tol`` defaults to ``1e-3 E_k(0)``. The integral is the one the
    integrator accumulated alongside the positions; the trapezoid value on the
    samples and its half-sampling Richardson estimate are reported too.
    """
    ledger = energy_ledger(traj)
    e0, eT = float(ledger.E_k[0]), float(ledger.E_k[-1])
    quad_tol = 1e-3 * e0 if quad_tol is None else quad_tol
    slack = eT - e0 + float(ledger.dissipation_integral[-1])
    trap = float(ledger.trapezoid_integral[-1])
    half = _trapezoid_skip(ledger.times[::2], ledger.D_k[::2])[-1] if len(ledger.times) > 2 else trap
    te = ledger.total_energy
    rise = float(np.max(np.diff(te))) if te.size > 1 else 0.0
    return DissipationResult(ledger, slack, eT - e0 + trap, abs(trap - half) / 3.0, quad_tol, max(rise, 0.0))


@dataclass
class ConservationReport:
    omega_marginal: float
    center_of_mass: float
    mean_velocity: float
    kinetic_increase: float

    def to_dict(self):
        return dict(omega_marginal=self.omega_marginal, center_of_mass=self.center_of_mass,
                    mean_velocity=self.mean_velocity, kinetic_increase=self.kinetic_increase)


def _nu(m: AtomicMeasure) -> dict:
    return {f.key(): f.nu_weight for f in disintegrate(m).fibers}


def conservation_report(traj: Trajectory) -> ConservationReport:
    """Largest deviations from the conservation and monotonicity laws along a run.

    For first-order runs velocities are obtained through the change of
    variables; the omega-marginal entry is 0 for second-order runs.
    """
    p = traj.params
    snaps = traj.snapshots
    t0 = traj.times[0]
    first = snaps[0].is_first_order
    if first:
        nu0 = _nu(snaps[0])
        om = 0.0
        for m in snaps[1:]:
            nu = _nu(m)
            if nu.keys() != nu0.keys():
                om = math.inf
                break
            om = max(om, max(abs(nu[k] - nu0[k]) for k in nu0))
        drift = snaps[0].w @ snaps[0].y
        second = [to_second_order(m, p) for m in snaps]
    else:
        om = 0.0
        drift = snaps[0].w @ snaps[0].y
        second = snaps
    mean0 = snaps[0].w @ snaps[0].x
    com = max(float(np.max(np.abs(m.w @ m.x - mean0 - (t - t0) * drift))) for t, m in zip(traj.times, snaps))
    v0 = second[0].w @ second[0].y
    mv = max(float(np.max(np.abs(s.w @ s.y - v0))) for s in second)
    kin = [math.fsum(s.w * np.einsum("ij,ij->i", s.y, s.y)) for s in second]
    rise = max([0.0] + [b - a for a, b in zip(kin, kin[1:])])
    return ConservationReport(om, com, mv, rise)


def omega_invariance(traj: Trajectory) -> bool:
    """Every current atom carries exactly the omega of its original members."""
    base = traj.snapshots[0]
    for m, clusters in zip(traj.snapshots, traj.clusters):
        for k, members in enumerate(clusters):
            for i in members:
                if omega_key(m.y[k]) != omega_key(base.y[i]):
                    return False
    return True
