"""Quadratic Wasserstein distances between atomic measures.

``w2`` is the classical distance (on positions only or on the full phase
space), ``w2_fibered`` only moves mass inside a fixed omega-fiber, and
``aw2`` is the adapted (nested) distance which couples the omega-marginals
and pays the per-fiber cost plus the omega displacement. For measures
sharing their omega-marginal, ``w2 <= aw2 <= w2_fibered``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ensemble import AtomicMeasure, disintegrate
from . import solvers

__all__ = [
    "TransportPlan",
    "IncompatibleMarginalsError",
    "solve",
    "w2",
    "w2_fibered",
    "aw2",
    "adapted_distance",
    "sq_cost_matrix",
]

METHODS = ("auto", "sorted", "assignment", "simplex", "brute")


class IncompatibleMarginalsError(ValueError):
    """Fibered transport needs both measures to share their omega-marginal."""


@dataclass(frozen=True, eq=False)
class TransportPlan:
    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray
    contrib: np.ndarray  # mass * cost of each pair
    method: str = "auto"

    @property
    def cost(self) -> float:
        return math.fsum(self.contrib)

    @property
    def distance(self) -> float:
        return math.sqrt(max(self.cost, 0.0))

    def marginals(self, m: int, n: int):
        rows = np.zeros(m)
        cols = np.zeros(n)
        np.add.at(rows, self.src, self.mass)
        np.add.at(cols, self.dst, self.mass)
        return rows, cols

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["src", "dst", "mass", "cost_contrib"])
        for s, d, ms, c in zip(self.src, self.dst, self.mass, self.contrib):
            out.writerow([int(s), int(d), repr(float(ms)), repr(float(c))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def sq_cost_matrix(pa, pb) -> np.ndarray:
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    diff = pa[:, None, :] - pb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def solve(a, b, cost, method="auto", points_1d=None) -> TransportPlan:
    """Exact optimal coupling for a given cost matrix.

    ``points_1d`` (a pair of 1D supports) enables the sorted path, valid for
    the squared distance on the line.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        if points_1d is not None:
            method = "sorted"
        elif solvers.is_uniform(a) and solvers.is_uniform(b) and (
                a.size == b.size or a.size * b.size // math.gcd(a.size, b.size) <= solvers.MAX_REPLICATED):
            method = "assignment"
        else:
            method = "simplex"
    if method == "sorted":
        if points_1d is None:
            raise ValueError("sorted path needs 1D supports")
        src, dst, mass = solvers.sorted_1d(points_1d[0], a, points_1d[1], b)
    elif method == "assignment":
        src, dst, mass = solvers.assignment(cost, a, b)
    elif method == "brute":
        if not (solvers.is_uniform(a) and solvers.is_uniform(b)):
            raise ValueError("brute force path needs uniform weights")
        src, dst, mass = solvers.brute_force(cost)
    else:
        src, dst, mass = solvers.network_simplex(a, b, cost)
    return TransportPlan(src, dst, mass, mass * cost[src, dst], method)


def _check_pair(a: AtomicMeasure, b: AtomicMeasure):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def w2(a: AtomicMeasure, b: AtomicMeasure, coords: str = "full", method: str = "auto") -> TransportPlan:
    """Classical quadratic Wasserstein coupling.

    ``coords`` is ``"x"`` (position marginals) or ``"full"`` (phase space).
    """
    _check_pair(a, b)
    if coords == "x":
        pa, pb = a.x, b.x
    elif coords == "full":
        if a.representation != b.representation:
            raise ValueError("full-phase distance needs matching representations")
        pa, pb = a.phase(), b.phase()
    else:
        raise ValueError(f"coords must be 'x' or 'full', not {coords!r}")
    cost = sq_cost_matrix(pa, pb)
    pts = (pa[:, 0], pb[:, 0]) if pa.shape[1] == 1 else None
    if method == "sorted" and pts is None:
        raise ValueError("sorted path is only available for 1D supports")
    return solve(a.w, b.w, cost, method=method, points_1d=pts if method in ("auto", "sorted") else None)


def _x_only_w2(xa, wa, xb, wb, method="auto"):
    cost = sq_cost_matrix(xa, xb)
    pts = (xa[:, 0], xb[:, 0]) if xa.shape[1] == 1 else None
    return solve(wa, wb, cost, method=method, points_1d=pts if method in ("auto", "sorted") else None)


def w2_fibered(a: AtomicMeasure, b: AtomicMeasure, tol: float = 1e-12, method: str = "auto") -> TransportPlan:
    """Fibered distance: per-omega-fiber transport of the conditional position laws.

    The returned plan indexes atoms of ``a`` and ``b``; pair costs are the
    squared position displacements (omega never moves).
    """
    _check_pair(a, b)
    if not (a.is_first_order and b.is_first_order):
        raise ValueError("fibered distance is defined for first-order measures")
    da, db = disintegrate(a), disintegrate(b)
    fb = {f.key(): f for f in db.fibers}
    if len(fb) != len(da.fibers):
        raise IncompatibleMarginalsError("measures have different numbers of omega-fibers")
    src, dst, mass, contrib = [], [], [], []
    for f in da.fibers:
        g = fb.get(f.key())
        if g is None or abs(f.nu_weight - g.nu_weight) > tol:
            raise IncompatibleMarginalsError(f"omega-marginals differ at omega={f.omega.tolist()}")
        plan = _x_only_w2(f.x, f.weights, g.x, g.weights, method)
        src.append(f.members[plan.src])
        dst.append(g.members[plan.dst])
        mass.append(f.nu_weight * plan.mass)
        contrib.append(f.nu_weight * plan.contrib)
    return TransportPlan(np.concatenate(src), np.concatenate(dst), np.concatenate(mass),
                         np.concatenate(contrib), "fibered")


def aw2(a: AtomicMeasure, b: AtomicMeasure, method: str = "auto") -> TransportPlan:
    """Adapted distance; the plan couples fibers (indices into the disintegrations)."""
    _check_pair(a, b)
    if not (a.is_first_order and b.is_first_order):
        raise ValueError("adapted distance is defined for first-order measures")
    da, db = disintegrate(a), disintegrate(b)
    ka, kb = len(da.fibers), len(db.fibers)
    cost = sq_cost_matrix(da.omegas, db.omegas)
    inner = np.empty((ka, kb))
    singles_a = all(f.x.shape[0] == 1 for f in da.fibers)
    singles_b = all(g.x.shape[0] == 1 for g in db.fibers)
    if singles_a and singles_b:
        inner = sq_cost_matrix(np.vstack([f.x for f in da.fibers]), np.vstack([g.x for g in db.fibers]))
    else:
        for k, f in enumerate(da.fibers):
            for l, g in enumerate(db.fibers):
                inner[k, l] = _x_only_w2(f.x, f.weights, g.x, g.weights).cost
    return solve(da.nu_weights, db.nu_weights, cost + inner, method=method)


def adapted_distance(sigma_a: AtomicMeasure, sigma_b: AtomicMeasure, params) -> float:
    """Adapted distance after mapping second-order measures to natural velocities."""
    from ..ensemble import natural_velocities

    ma = sigma_a if sigma_a.is_first_order else natural_velocities(sigma_a, params)
    mb = sigma_b if sigma_b.is_first_order else natural_velocities(sigma_b, params)
    return aw2(ma, mb).distance
