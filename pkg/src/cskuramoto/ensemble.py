"""Weighted atomic measures in phase space and the first/second order change of variables.

An :class:`AtomicMeasure` stores positions ``x`` and a second coordinate ``y``
which is a velocity ``v`` (second-order representation) or a natural
velocity ``omega`` (first-order representation). The two representations are
related by

    omega = v + (grad W * rho)(x),      v = omega - (grad W * rho)(x),

with ``rho`` the position marginal. Positions and weights never change under
either map.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import _pairwise
from .kernel import KernelParams

__all__ = [
    "Representation",
    "RepresentationError",
    "AtomicMeasure",
    "Fiber",
    "Disintegration",
    "SupportGeometry",
    "natural_velocities",
    "to_second_order",
    "velocity_field",
    "convolve_grad",
    "disintegrate",
    "moments",
    "diameter",
    "save_csv",
    "load_csv",
    "save_jsonl",
    "load_jsonl",
]

WEIGHT_TOL = 1e-12
LOAD_WEIGHT_TOL = 1e-9


class Representation(str, Enum):
    SECOND_ORDER = "second_order"
    FIRST_ORDER = "first_order"


class RepresentationError(ValueError):
    """An operation received a measure in the wrong representation."""


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Immutable weighted sum of Dirac masses at ``(x_i, y_i)``."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    representation: Representation

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if x.shape[0] == 0:
            raise ValueError("an atomic measure needs at least one atom")
        if x.shape != y.shape or w.shape[0] != x.shape[0]:
            raise ValueError(f"inconsistent shapes x={x.shape} y={y.shape} w={w.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("atom coordinates must be finite")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "representation", Representation(self.representation))

    @classmethod
    def uniform(cls, x, y, representation) -> "AtomicMeasure":
        n = np.asarray(x).shape[0]
        return cls(x, y, np.full(n, 1.0 / n), representation)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def is_first_order(self) -> bool:
        return self.representation is Representation.FIRST_ORDER

    def phase(self) -> np.ndarray:
        """``(N, 2d)`` array of phase-space coordinates."""
        return np.hstack([self.x, self.y])

    def replace(self, **changes) -> "AtomicMeasure":
        kw = dict(x=self.x, y=self.y, w=self.w, representation=self.representation)
        kw.update(changes)
        return AtomicMeasure(**kw)

    def same_atoms(self, other: "AtomicMeasure", tol: float = 0.0) -> bool:
        if self.representation != other.representation or self.x.shape != other.x.shape:
            return False
        return bool(
            np.all(np.abs(self.x - other.x) <= tol)
            and np.all(np.abs(self.y - other.y) <= tol)
            and np.all(np.abs(self.w - other.w) <= tol)
        )


def convolve_grad(xq, m: AtomicMeasure, p: KernelParams) -> np.ndarray:
    """``(grad W * rho)(xq)`` for the position marginal ``rho`` of ``m``."""
    xq = np.asarray(xq, dtype=float)
    if xq.ndim == 1:
        xq = xq.reshape(-1, m.dim)
    return _pairwise.grad_conv(xq, m.x, m.w, p.alpha, p.epsilon)


def natural_velocities(m: AtomicMeasure, p: KernelParams) -> AtomicMeasure:
    """Second-order measure -> first-order measure (``omega = v + grad W * rho``)."""
    if m.is_first_order:
        raise RepresentationError("measure is already in first-order representation")
    omega = m.y + convolve_grad(m.x, m, p)
    return AtomicMeasure(m.x, omega, m.w, Representation.FIRST_ORDER)


def to_second_order(m: AtomicMeasure, p: KernelParams) -> AtomicMeasure:
    """First-order measure -> second-order measure (``v = omega - grad W * rho``)."""
    if not m.is_first_order:
        raise RepresentationError("measure is already in second-order representation")
    v = m.y - convolve_grad(m.x, m, p)
    return AtomicMeasure(m.x, v, m.w, Representation.SECOND_ORDER)


def velocity_field(m: AtomicMeasure, xq, omega_q, p: KernelParams) -> np.ndarray:
    """Evaluate ``u[rho](x, omega) = omega - (grad W * rho)(x)`` at query points."""
    xq = np.asarray(xq, dtype=float).reshape(-1, m.dim)
    omega_q = np.asarray(omega_q, dtype=float).reshape(-1, m.dim)
    return omega_q - convolve_grad(xq, m, p)


# -- disintegration -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Fiber:
    omega: np.ndarray
    nu_weight: float
    x: np.ndarray
    weights: np.ndarray
    members: np.ndarray  # indices into the source measure

    def key(self) -> bytes:
        return omega_key(self.omega)


@dataclass(frozen=True, eq=False)
class Disintegration:
    fibers: tuple
    dim: int
    n_atoms: int

    @property
    def nu_weights(self) -> np.ndarray:
        return np.array([f.nu_weight for f in self.fibers])

    @property
    def omegas(self) -> np.ndarray:
        return np.array([f.omega for f in self.fibers]).reshape(-1, self.dim)

    def reassemble(self) -> AtomicMeasure:
        x = np.empty((self.n_atoms, self.dim))
        y = np.empty((self.n_atoms, self.dim))
        w = np.empty(self.n_atoms)
        for f in self.fibers:
            x[f.members] = f.x
            y[f.members] = f.omega
            w[f.members] = f.nu_weight * f.weights
        return AtomicMeasure(x, y, w, Representation.FIRST_ORDER)


def omega_key(omega) -> bytes:
    # +0.0 folds -0.0 into 0.0 so that bitwise keys match numerically equal values
    return (np.asarray(omega, dtype=float) + 0.0).tobytes()


def _group_atoms(y: np.ndarray, tol: float) -> list:
    groups: dict = {}
    if tol == 0.0:
        for i, row in enumerate(y):
            groups.setdefault(omega_key(row), []).append(i)
        return list(groups.values())
    reps: list = []
    members: list = []
    for i, row in enumerate(y):
        for g, rep in enumerate(reps):
            if np.linalg.norm(row - rep) <= tol:
                members[g].append(i)
                break
        else:
            reps.append(row)
            members.append([i])
    return members


def disintegrate(m: AtomicMeasure, omega_tol: float = 0.0) -> Disintegration:
    """Split a first-order measure into conditional position measures per omega value.

    Fibers are ordered by first appearance of their omega among the atoms.
    With ``omega_tol > 0`` atoms join the first earlier fiber whose
    representative omega lies within the tolerance.
    """
    if omega_tol < 0:
        raise ValueError("omega_tol must be nonnegative")
    fibers = []
    for idx in _group_atoms(m.y, omega_tol):
        idx = np.asarray(idx, dtype=np.intp)
        wsub = m.w[idx]
        nu = math.fsum(wsub)
        fibers.append(Fiber(omega=m.y[idx[0]].copy(), nu_weight=nu, x=m.x[idx].copy(),
                            weights=wsub / nu, members=idx))
    return Disintegration(tuple(fibers), m.dim, m.n)


# -- moments --------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportGeometry:
    diam_x: float
    diam_omega: float
    mean_x: np.ndarray
    mean_y: np.ndarray
    second_moment_x: float
    second_moment_y: float


def diameter(points) -> float:
    """Largest pairwise Euclidean distance (0 for a single point)."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        return 0.0
    if points.shape[1] == 1:
        return float(points.max() - points.min())
    best = 0.0
    for i in range(points.shape[0] - 1):
        diff = points[i + 1:] - points[i]
        best = max(best, float(np.max(np.einsum("ij,ij->i", diff, diff))))
    return math.sqrt(best)


def moments(m: AtomicMeasure) -> SupportGeometry:
    return SupportGeometry(
        diam_x=diameter(m.x),
        diam_omega=diameter(m.y),
        mean_x=m.w @ m.x,
        mean_y=m.w @ m.y,
        second_moment_x=math.fsum(m.w * np.einsum("ij,ij->i", m.x, m.x)),
        second_moment_y=math.fsum(m.w * np.einsum("ij,ij->i", m.y, m.y)),
    )


# -- serialization --------------------------------------------------------------------

def _normalized_weights(w):
    w = np.asarray(w, dtype=float)
    total = math.fsum(w)
    if abs(total - 1.0) > LOAD_WEIGHT_TOL:
        raise ValueError(f"weights sum to {total!r}; expected 1 within {LOAD_WEIGHT_TOL}")
    return w / total


def save_csv(m: AtomicMeasure, path) -> None:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["dim", "representation"])
    out.writerow([m.dim, m.representation.value])
    for wi, xi, yi in zip(m.w, m.x, m.y):
        out.writerow([repr(float(wi)), *map(repr, map(float, xi)), *map(repr, map(float, yi))])
    Path(path).write_text(buf.getvalue())


def load_csv(path) -> AtomicMeasure:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    if len(rows) < 3 or [c.strip() for c in rows[0]] != ["dim", "representation"]:
        raise ValueError(f"{path}: expected header 'dim,representation'")
    dim = int(rows[1][0])
    rep = Representation(rows[1][1].strip())
    data = np.array([[float(c) for c in r] for r in rows[2:] if r], dtype=float)
    if data.shape[1] != 1 + 2 * dim:
        raise ValueError(f"{path}: rows must have {1 + 2 * dim} columns")
    return AtomicMeasure(data[:, 1:1 + dim], data[:, 1 + dim:], _normalized_weights(data[:, 0]), rep)


def measure_to_records(m: AtomicMeasure) -> list:
    return [{"w": float(wi), "x": [float(v) for v in xi], "y": [float(v) for v in yi]}
            for wi, xi, yi in zip(m.w, m.x, m.y)]


def save_jsonl(m: AtomicMeasure, path) -> None:
    lines = [json.dumps({"dim": m.dim, "representation": m.representation.value})]
    lines += [json.dumps(r) for r in measure_to_records(m)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_jsonl(path) -> AtomicMeasure:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    head = json.loads(lines[0])
    dim, rep = int(head["dim"]), Representation(head["representation"])
    recs = [json.loads(ln) for ln in lines[1:]]
    x = np.array([r["x"] for r in recs], dtype=float).reshape(-1, dim)
    y = np.array([r["y"] for r in recs], dtype=float).reshape(-1, dim)
    w = _normalized_weights([r["w"] for r in recs])
    return AtomicMeasure(x, y, w, rep)


def load_measure(path) -> AtomicMeasure:
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return load_jsonl(path)
    return load_csv(path)
