"""Particle integrators for the first-order (natural velocity) and second-order systems.

First-order system, for atoms with positions ``x_i``, fixed natural velocities
``omega_i`` and weights ``w_i``::

    dx_i/dt = u_i = omega_i - sum_j w_j grad W(x_i - x_j)

Atoms sharing the same ``omega`` (bitwise) can meet in finite time; once
their distance drops below ``merge_tol_x`` they are fused into one cluster
and stay fused. Atoms with different ``omega`` are integrated straight
through close encounters.

Second-order system (mollified kernel only)::

    dx_i/dt = v_i,   dv_i/dt = sum_j w_j D^2 W_eps(x_i - x_j) (v_j - v_i)

Both use a Dormand-Prince 5(4) pair with PI step-size control.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _pairwise
from .ensemble import AtomicMeasure, Representation, diameter, omega_key
from .kernel import KernelParams, hess_W

__all__ = [
    "StepControl",
    "StiffEncounterError",
    "NonConvergenceError",
    "MergeEvent",
    "Trajectory",
    "FirstOrderSim",
    "SecondOrderSim",
    "EquilibriumResult",
    "step_first_order",
    "step_second_order",
    "detect_and_merge",
    "run",
    "find_equilibrium",
    "sticking_time",
]


class StiffEncounterError(RuntimeError):
    """The step size fell below ``h_min`` without meeting the error tolerance."""

    def __init__(self, message, time, h, pair):
        super().__init__(message)
        self.time = time
        self.h = h
        self.pair = pair


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class StepControl:
    rtol: float = 1e-9
    atol: float = 1e-12
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = math.inf
    safety: float = 0.9
    # fraction of the current gap an equal-omega closing pair may cover per step
    encounter_safety: float = 0.2
    merge_tol_x: float | None = None
    track_dissipation: bool = True


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri_step(f, y, h, k1):
    ks = [k1]
    for s in range(1, 7):
        yi = y.copy()
        for a, k in zip(_A[s], ks):
            if a != 0.0:
                yi += (h * a) * k
        ks.append(f(yi))
    y_new = y.copy()
    err = np.zeros_like(y)
    for b, e, k in zip(_B, _E, ks):
        if b != 0.0:
            y_new += (h * b) * k
        if e != 0.0:
            err += (h * e) * k
    return y_new, err, ks[-1]


@dataclass(frozen=True)
class MergeEvent:
    time: float  # estimated contact time
    step_time: float  # time of the accepted step that triggered the merge
    clusters: tuple  # original-index sets fused into one atom
    position: tuple

    def to_json(self):
        return {"time": self.time, "step_time": self.step_time,
                "clusters": [list(c) for c in self.clusters], "position": list(self.position)}


class _AdaptiveSim:
    """Shared Dormand-Prince driver; subclasses provide the state layout."""

    def __init__(self, params: KernelParams, control: StepControl | None, time: float):
        self.params = params
        self.control = control or StepControl()
        self.time = float(time)
        self.h = self.control.h_init
        self.accepted = 0
        self.rejected = 0
        self._k1 = None
        self._err_prev = 1e-4

    # hooks
    def _pack(self):
        raise NotImplementedError

    def _unpack(self, y):
        raise NotImplementedError

    def _rhs(self, y):
        raise NotImplementedError

    def _step_cap(self, k1):
        return math.inf

    def _after_accept(self, k7):
        pass

    def _closest_pair(self):
        return None

    def _error_norm(self, y, y_new, err):
        c = self.control
        scale = c.atol + c.rtol * np.maximum(np.abs(y), np.abs(y_new))
        return float(np.max(np.abs(err) / scale)) if err.size else 0.0

    def advance_to(self, t_target: float):
        c = self.control
        while self.time < t_target:
            y = self._pack()
            if self._k1 is None:
                self._k1 = self._rhs(y)
            remaining = t_target - self.time
            cap = min(c.h_max, self._step_cap(self._k1))
            h = min(self.h, cap)
            clipped = h >= remaining
            if clipped:
                h = remaining
            while True:
                y_new, err, k7 = _dopri_step(self._rhs, y, h, self._k1)
                en = self._error_norm(y, y_new, err)
                if en <= 1.0 and np.all(np.isfinite(y_new)):
                    break
                self.rejected += 1
                fac = 0.5 if not math.isfinite(en) else min(0.5, max(0.1, c.safety * en ** -0.2))
                h *= fac
                clipped = False
                if h < c.h_min:
                    raise StiffEncounterError(
                        f"step size {h:.3e} below h_min at t={self.time:.6g}",
                        self.time, h, self._closest_pair())
            self.accepted += 1
            en = max(en, 1e-10)
            fac = c.safety * en ** (-0.7 / 5) * self._err_prev ** (0.4 / 5)
            fac = min(5.0, max(0.2, fac))
            self._err_prev = en
            proposal = h * fac
            self.h = max(self.h, proposal) if clipped else proposal
            self.h = max(self.h, c.h_min)
            self.time = t_target if clipped else self.time + h
            self._unpack(y_new)
            self._k1 = k7
            self._after_accept(k7)
        return self


# -- first order ----------------------------------------------------------------------

class FirstOrderSim(_AdaptiveSim):
    """Mutable first-order particle simulation with sticky clusters.

    ``clusters[k]`` lists the original atom indices fused into current atom
    ``k``. ``dissipation`` accumulates ``int D_k dt`` alongside the positions
    (integrated by the same Runge-Kutta pair) when
    ``control.track_dissipation`` is set.
    """

    def __init__(self, m0: AtomicMeasure, params: KernelParams, control: StepControl | None = None,
                 time: float = 0.0):
        if not m0.is_first_order:
            raise ValueError("FirstOrderSim needs a first-order measure")
        super().__init__(params, control, time)
        self.x = np.array(m0.x, dtype=float)
        self.omega = np.array(m0.y, dtype=float)
        self.w = np.array(m0.w, dtype=float)
        self.clusters = [(i,) for i in range(m0.n)]
        self.events: list[MergeEvent] = []
        self.dissipation = 0.0
        tol = self.control.merge_tol_x
        self.merge_tol_x = 1e-9 * (1.0 + diameter(m0.x)) if tol is None else float(tol)
        self._rebuild_pairs()

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def state(self) -> AtomicMeasure:
        return AtomicMeasure(self.x, self.omega, self.w, Representation.FIRST_ORDER)

    def field(self, x=None) -> np.ndarray:
        x = self.x if x is None else x
        return self.omega - _pairwise.grad_conv(x, x, self.w, self.params.alpha, self.params.epsilon)

    def _rebuild_pairs(self):
        groups: dict = {}
        for i, row in enumerate(self.omega):
            groups.setdefault(omega_key(row), []).append(i)
        pi, pj = [], []
        for members in groups.values():
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    pi.append(members[a])
                    pj.append(members[b])
        self._pi = np.asarray(pi, dtype=np.intp)
        self._pj = np.asarray(pj, dtype=np.intp)

    def _pack(self):
        y = self.x.reshape(-1)
        if self.control.track_dissipation:
            y = np.append(y, self.dissipation)
        return y

    def _unpack(self, y):
        nd = self.n * self.dim
        self.x = y[:nd].reshape(self.n, self.dim).copy()
        if self.control.track_dissipation:
            self.dissipation = float(y[nd])

    def _rhs(self, y):
        nd = self.n * self.dim
        x = y[:nd].reshape(self.n, self.dim)
        if not self.control.track_dissipation:
            return self.field(x).reshape(-1)
        u, dk = _pairwise.flow(x, self.omega, self.w, self.params.alpha, self.params.epsilon)
        return np.append(u.reshape(-1), dk)

    def _error_norm(self, y, y_new, err):
        # the dissipation accumulator is checked against the energy scale, not its own size
        c = self.control
        nd = self.n * self.dim
        scale = c.atol + c.rtol * np.maximum(np.abs(y[:nd]), np.abs(y_new[:nd]))
        en = float(np.max(np.abs(err[:nd]) / scale))
        if self.control.track_dissipation:
            qscale = c.atol + c.rtol * max(abs(y_new[nd]), self._energy_scale)
            en = max(en, abs(err[nd]) / qscale)
        return en

    @property
    def _energy_scale(self):
        if not hasattr(self, "_e_scale"):
            u = self.field()
            self._e_scale = max(0.5 * float(self.w @ np.einsum("ij,ij->i", u, u)), 1e-300)
        return self._e_scale

    def _pair_geometry(self, x, u):
        dx = x[self._pi] - x[self._pj]
        r = np.sqrt(np.einsum("ij,ij->i", dx, dx))
        du = u[self._pi] - u[self._pj]
        with np.errstate(divide="ignore", invalid="ignore"):
            closing = np.where(r > 0, -np.einsum("ij,ij->i", du, dx) / r, 0.0)
        return r, closing

    def _step_cap(self, k1):
        if self._pi.size == 0:
            return math.inf
        u = k1[: self.n * self.dim].reshape(self.n, self.dim)
        r, closing = self._pair_geometry(self.x, u)
        mask = closing > 0
        if not np.any(mask):
            return math.inf
        return self.control.encounter_safety * float(np.min(r[mask] / closing[mask]))

    def _closest_pair(self):
        if self.n < 2:
            return None
        diff = self.x[:, None, :] - self.x[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.fill_diagonal(r, np.inf)
        i, j = np.unravel_index(np.argmin(r), r.shape)
        return (self.clusters[i], self.clusters[j])

    def _after_accept(self, k7):
        u = k7[: self.n * self.dim].reshape(self.n, self.dim)
        _merge_close_pairs(self, u)


def _merge_close_pairs(sim: FirstOrderSim, u) -> bool:
    if sim._pi.size == 0:
        return False
    r, closing = sim._pair_geometry(sim.x, u)
    hit = r <= sim.merge_tol_x
    if not np.any(hit):
        return False
    parent = list(range(sim.n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    contact: dict = {}
    alpha = sim.params.alpha
    for k in np.flatnonzero(hit):
        i, j = int(sim._pi[k]), int(sim._pj[k])
        # near contact r**alpha decreases linearly, so r / (alpha * closing) is the time left
        dt_left = r[k] / (alpha * closing[k]) if closing[k] > 0 else 0.0
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
        contact[(i, j)] = (r[k], sim.time + dt_left)
    comps: dict = {}
    for a in range(sim.n):
        comps.setdefault(find(a), []).append(a)
    new_x, new_w, new_omega, new_clusters = [], [], [], []
    for root in sorted(comps):
        members = comps[root]
        if len(members) == 1:
            a = members[0]
            new_x.append(sim.x[a])
            new_w.append(sim.w[a])
            new_omega.append(sim.omega[a])
            new_clusters.append(sim.clusters[a])
            continue
        ws = sim.w[members]
        wt = math.fsum(ws)
        pos = (ws @ sim.x[members]) / wt
        new_x.append(pos)
        new_w.append(wt)
        new_omega.append(sim.omega[members[0]])
        merged = tuple(sorted(i for a in members for i in sim.clusters[a]))
        new_clusters.append(merged)
        times = [t for (i, j), (_, t) in contact.items() if i in members]
        sim.events.append(MergeEvent(time=min(times), step_time=sim.time,
                                     clusters=tuple(sim.clusters[a] for a in members),
                                     position=tuple(float(v) for v in pos)))
    sim.x = np.array(new_x)
    sim.w = np.array(new_w)
    sim.omega = np.array(new_omega)
    sim.clusters = new_clusters
    sim._rebuild_pairs()
    sim._k1 = None  # state dimension changed: no FSAL reuse
    return True


def detect_and_merge(sim: FirstOrderSim) -> FirstOrderSim:
    """Fuse equal-omega atoms closer than ``sim.merge_tol_x`` (mass-weighted mean position)."""
    _merge_close_pairs(sim, sim.field())
    return sim


def step_first_order(sim: FirstOrderSim, dt_target: float) -> FirstOrderSim:
    """Advance by ``dt_target`` with adaptive steps, merging after every accepted step."""
    if not dt_target > 0:
        raise ValueError("dt_target must be positive")
    return sim.advance_to(sim.time + dt_target)


# -- second order ---------------------------------------------------------------------

class SecondOrderSim(_AdaptiveSim):
    """Mollified second-order alignment system; no merging."""

    def __init__(self, f0: AtomicMeasure, params: KernelParams, control: StepControl | None = None,
                 time: float = 0.0):
        if f0.is_first_order:
            raise ValueError("SecondOrderSim needs a second-order measure")
        if not params.epsilon > 0:
            raise ValueError("direct second-order integration requires epsilon > 0")
        super().__init__(params, control, time)
        self.x = np.array(f0.x, dtype=float)
        self.v = np.array(f0.y, dtype=float)
        self.w = np.array(f0.w, dtype=float)
        self.events: list = []

    @property
    def state(self) -> AtomicMeasure:
        return AtomicMeasure(self.x, self.v, self.w, Representation.SECOND_ORDER)

    def _pack(self):
        return np.concatenate([self.x.reshape(-1), self.v.reshape(-1)])

    def _unpack(self, y):
        nd = self.x.size
        self.x = y[:nd].reshape(self.x.shape).copy()
        self.v = y[nd:].reshape(self.v.shape).copy()

    def _rhs(self, y):
        nd = self.x.size
        x = y[:nd].reshape(self.x.shape)
        v = y[nd:].reshape(self.v.shape)
        acc = _pairwise.alignment_force(x, v, self.w, self.params.alpha, self.params.epsilon)
        return np.concatenate([v.reshape(-1), acc.reshape(-1)])


def step_second_order(sim: SecondOrderSim, dt_target: float) -> SecondOrderSim:
    if not dt_target > 0:
        raise ValueError("dt_target must be positive")
    return sim.advance_to(sim.time + dt_target)


# -- runs -----------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: list
    snapshots: list
    events: list
    params: KernelParams
    dissipation: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    accepted_steps: int = 0
    rejected_steps: int = 0

    @property
    def first_order(self) -> bool:
        return bool(self.snapshots) and self.snapshots[0].is_first_order

    def first_merge_time(self) -> float:
        return min((e.time for e in self.events), default=math.inf)

    def events_between(self, t0, t1) -> list:
        return [e for e in self.events if t0 < e.step_time <= t1]

    def to_records(self) -> list:
        """One JSON-ready record per sample, with the merges since the previous sample."""
        out = []
        prev = -math.inf
        for t, m in zip(self.times, self.snapshots):
            atoms = [{"w": float(w), "x": xr.tolist(), "y": yr.tolist()} for w, xr, yr in zip(m.w, m.x, m.y)]
            events = [e.to_json() for e in self.events_between(prev, t)]
            out.append({"t": float(t), "atoms": atoms, "events_since_last": events})
            prev = t
        return out

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec) + "\n")


def _sample_times(t0, t_end, dt):
    n = int(math.floor((t_end - t0) / dt + 1e-9))
    times = [t0 + k * dt for k in range(n + 1)]
    if t_end - times[-1] > 1e-12 * max(1.0, abs(t_end)):
        times.append(t_end)
    return times


def run(sim, t_end: float, sample_dt: float) -> Trajectory:
    """Integrate to ``t_end`` and record a snapshot every ``sample_dt``.

    Steps are shortened to land exactly on sample times, so snapshots are
    integrator states rather than interpolants.
    """
    if not sample_dt > 0:
        raise ValueError("sample_dt must be positive")
    if t_end < sim.time:
        raise ValueError("t_end is before the current simulation time")
    first = isinstance(sim, FirstOrderSim)
    traj = Trajectory([], [], [], sim.params)
    for t in _sample_times(sim.time, t_end, sample_dt):
        if t > sim.time:
            sim.advance_to(t)
        traj.times.append(sim.time)
        traj.snapshots.append(sim.state)
        if first:
            traj.dissipation.append(sim.dissipation)
            traj.clusters.append(list(sim.clusters))
    traj.events = list(sim.events)
    traj.accepted_steps = sim.accepted
    traj.rejected_steps = sim.rejected
    return traj


def sticking_time(alpha: float, r0: float, total_weight: float = 1.0) -> float:
    """Contact time of an isolated equal-omega pair at distance ``r0``.

    The gap obeys ``dr/dt = -total_weight * r**(1 - alpha) / (1 - alpha)``,
    so ``r**alpha`` decreases linearly.
    """
    return (1.0 - alpha) * r0 ** alpha / (alpha * total_weight)


# -- equilibrium ----------------------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumResult:
    measure: AtomicMeasure  # in the frame moving with the mean natural velocity
    frame_velocity: np.ndarray
    residual: float
    time: float
    x_mean_error: float
    clusters: tuple


def _newton_polish(x, omega, w, params, tol, max_iter=50):
    n, d = x.shape
    for _ in range(max_iter):
        u = omega - _pairwise.grad_conv(x, x, w, params.alpha, params.epsilon)
        if np.max(np.abs(u)) < tol:
            break
        diff = x[:, None, :] - x[None, :, :]
        off = ~np.eye(n, dtype=bool)
        h = np.zeros((n, n, d, d))
        h[off] = hess_W(diff[off], params)
        # du_i/dx_k = -sum_j w_j H_ij (delta_ik - delta_jk)
        jac = np.einsum("j,ijab->ijab", w, h)
        diag = -jac.sum(axis=1)
        jac = jac.copy()
        jac[np.arange(n), np.arange(n)] = diag
        jmat = jac.transpose(0, 2, 1, 3).reshape(n * d, n * d)
        # translations are a null direction; pin the weighted mean
        pin = np.kron(w[None, :], np.eye(d))
        lhs = np.vstack([jmat, pin])
        rhs = np.concatenate([-u.reshape(-1), np.zeros(d)])
        step, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        x = x + step.reshape(n, d)
    u = omega - _pairwise.grad_conv(x, x, w, params.alpha, params.epsilon)
    return x, float(np.max(np.abs(u)))


def find_equilibrium(m0: AtomicMeasure, params: KernelParams, horizon: float = 1e3, tol: float = 1e-10,
                     control: StepControl | None = None, chunk: float = 1.0,
                     polish: bool = True) -> EquilibriumResult:
    """Relax a first-order ensemble to its equilibrium.

    The computation runs in the frame moving with the weighted mean natural
    velocity (where an equilibrium exists); that velocity is returned as
    ``frame_velocity``. Integration stops once ``max |u| < tol`` or, with
    ``polish``, once it is small enough for Newton's method to finish the job.
    """
    if not m0.is_first_order:
        raise ValueError("find_equilibrium needs a first-order measure")
    frame = m0.w @ m0.y
    shifted = m0.replace(y=m0.y - frame)
    control = control or StepControl(rtol=1e-10, atol=1e-13, track_dissipation=False)
    control = replace(control, track_dissipation=False)
    sim = FirstOrderSim(shifted, params, control)
    mean0 = m0.w @ m0.x
    handoff = max(tol, 1e-6) if polish else tol
    residual = float(np.max(np.abs(sim.field())))
    while residual >= handoff:
        if sim.time >= horizon:
            raise NonConvergenceError(f"no equilibrium within horizon {horizon}", residual)
        sim.advance_to(min(horizon, sim.time + chunk))
        residual = float(np.max(np.abs(sim.field())))
    x = sim.x
    distinct = len({omega_key(r) for r in sim.omega}) == sim.n
    if polish and residual >= tol and distinct:
        x, residual = _newton_polish(sim.x, sim.omega, sim.w, params, tol)
    if residual >= tol:
        raise NonConvergenceError(f"residual {residual:.3e} above tolerance {tol:.1e}", residual)
    err = float(np.max(np.abs(sim.w @ x - mean0)))
    if err > 1e-8:
        raise NonConvergenceError(f"x-mean drifted by {err:.3e}", residual)
    measure = AtomicMeasure(x, sim.omega, sim.w, Representation.FIRST_ORDER)
    return EquilibriumResult(measure, frame, residual, sim.time, err, tuple(sim.clusters))
