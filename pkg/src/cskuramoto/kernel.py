"""Power-law interaction kernel and its mollified family.

The communication weight is ``phi(r) = r**-alpha`` with ``0 < alpha < 1`` and the
potential ``W`` satisfies ``D^2 W`` built from ``phi``:

    W(x)     = |x|**(2 - alpha) / ((2 - alpha) (1 - alpha))
    grad W   = phi(|x|) x / (1 - alpha)
    D^2 W    = phi(|x|) / (1 - alpha) * (I - alpha xhat xhat^T)

With ``epsilon > 0`` every formula switches to the smooth variant built on
``(|x| + epsilon)**-alpha``. All functions here are pure and vectorised over
leading axes: a point is the last axis of ``x``; scalars are treated as 1D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import LowLevelCallable, integrate

from ._accel import HAVE_NUMBA

__all__ = [
    "KernelParams",
    "SingularEvaluationError",
    "phi",
    "potential_W",
    "grad_W",
    "hess_W",
    "segment_weight_integral",
    "convexity_gap_first_order",
    "hessian_norm_bound_check",
    "hessian_norm_slack",
    "mollifier_gradient_bound",
]


class SingularEvaluationError(ValueError):
    """Raised when an unmollified kernel quantity is evaluated at the origin."""


@dataclass(frozen=True)
class KernelParams:
    alpha: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (self.epsilon >= 0.0) or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be a finite nonnegative number, got {self.epsilon!r}")

    @property
    def mollified(self) -> bool:
        return self.epsilon > 0.0

    def unmollified(self) -> "KernelParams":
        return KernelParams(self.alpha, 0.0)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x[None], True
    return x, False


def phi(r, p: KernelParams):
    """Communication weight ``r**-alpha`` (or ``(r + eps)**-alpha``)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("phi is defined for r >= 0 only")
    if p.epsilon == 0.0 and np.any(r == 0):
        raise SingularEvaluationError("phi(0) is infinite for the unmollified kernel")
    out = (r + p.epsilon) ** (-p.alpha)
    return float(out) if out.ndim == 0 else out


def potential_W(x, p: KernelParams):
    x, _ = _as_points(x)
    a, eps = p.alpha, p.epsilon
    r = np.linalg.norm(x, axis=-1)
    if eps == 0.0:
        out = r ** (2.0 - a) / ((2.0 - a) * (1.0 - a))
    else:
        out = (r + eps) ** (1.0 - a) * (r - eps / (1.0 - a)) / ((2.0 - a) * (1.0 - a))
    return float(out) if out.ndim == 0 else out


def grad_W(x, p: KernelParams):
    """Gradient of ``W``; total, with ``grad_W(0) = 0`` by continuity."""
    x, scalar = _as_points(x)
    a, eps = p.alpha, p.epsilon
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if eps == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r > 0, r ** (-a), 0.0)
    else:
        coef = (r + eps) ** (-a)
    out = coef * x / (1.0 - a)
    return float(out[0]) if scalar else out


def hess_W(x, p: KernelParams):
    """Hessian of ``W``, shape ``x.shape + (d,)``.

    Raises :class:`SingularEvaluationError` at ``x = 0`` for the unmollified
    kernel; pairwise callers must drop the diagonal themselves.
    """
    x, scalar = _as_points(x)
    a, eps = p.alpha, p.epsilon
    d = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    if eps == 0.0 and np.any(r == 0):
        raise SingularEvaluationError("D^2 W is singular at the origin")
    eye = np.eye(d)
    scale = (r + eps) ** (-a) / (1.0 - a)
    with np.errstate(divide="ignore", invalid="ignore"):
        # x x^T / (|x| (|x| + eps)); the limit at x = 0 (eps > 0) is 0
        denom = r * (r + eps)
        outer = np.einsum("...i,...j->...ij", x, x)
        proj = np.where((denom > 0)[..., None, None], outer / denom[..., None, None], 0.0)
    out = scale[..., None, None] * (eye - a * proj)
    return float(out[0, 0]) if scalar else out


# -- first-order convexity certificate ------------------------------------------------

def _arc_integrand_py(u, log_h, alpha, eps):
    c = 0.5 * (math.exp(u + log_h) + math.exp(log_h - u))  # h cosh(u) without overflow
    return c * (c + eps) ** (-alpha)


def _build_lowlevel_integrand():
    # quad calls this through a C pointer: xx = (u, log_h, alpha, eps)
    import numba
    from numba import types

    sig = types.double(types.intc, types.CPointer(types.double))

    @numba.cfunc(sig, cache=True)
    def integrand(n, xx):
        u, log_h, alpha, eps = xx[0], xx[1], xx[2], xx[3]
        c = 0.5 * (math.exp(u + log_h) + math.exp(log_h - u))
        return c * (c + eps) ** (-alpha)

    return LowLevelCallable(integrand.ctypes)


_LOWLEVEL = None


def _integrand():
    global _LOWLEVEL
    if not HAVE_NUMBA:
        return None
    if _LOWLEVEL is None:
        _LOWLEVEL = _build_lowlevel_integrand()
    return _LOWLEVEL


def _line_integral(h, lo, hi, alpha, eps, tol):
    """``int_lo^hi ((h^2 + t^2)^(1/2) + eps)^(-alpha) dt`` for ``0 <= lo <= hi``.

    With ``t = h sinh(u)`` the integrand is smooth even when the line passes
    within ``h << hi`` of the origin; ``h = 0`` has a closed form.
    """
    if hi == lo:
        return 0.0
    if h == 0.0:
        return ((hi + eps) ** (1.0 - alpha) - (lo + eps) ** (1.0 - alpha)) / (1.0 - alpha)
    fast = _integrand()
    args = (math.log(h), alpha, eps)
    val, _ = integrate.quad(fast if fast is not None else _arc_integrand_py, math.asinh(lo / h),
                            math.asinh(hi / h), args=args, epsabs=0.0, epsrel=tol, limit=200)
    return val


def segment_weight_integral(x, y, p: KernelParams, tol: float = 1e-12) -> float:
    """``int_0^1 phi(|(1 - t) x + t y|) dt``.

    The segment is measured by arc length from the foot of the perpendicular
    from the origin, at distance ``h``; each side of the foot is then a smooth
    quadrature after the substitution in :func:`_line_integral`. In 1D,
    ``h = 0`` and the result is exact.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    q = y - x
    length = float(np.linalg.norm(q))
    if length == 0.0:
        return float((float(np.linalg.norm(x)) + p.epsilon) ** (-p.alpha))
    qhat = q / length
    s0 = float(x @ qhat)  # arc coordinate of x; y sits at s0 + length
    s1 = s0 + length
    h = 0.0 if x.size == 1 else float(np.linalg.norm(x - s0 * qhat))
    a, e = p.alpha, p.epsilon
    if s0 >= 0.0 or s1 <= 0.0:
        lo, hi = sorted((abs(s0), abs(s1)))
        total = _line_integral(h, lo, hi, a, e, tol)
    else:
        total = _line_integral(h, 0.0, -s0, a, e, tol) + _line_integral(h, 0.0, s1, a, e, tol)
    return total / length


def convexity_gap_first_order(x, y, p: KernelParams, tol: float = 1e-12) -> float:
    """``(grad W(x) - grad W(y)).(x - y) - Lambda_1 |x - y|^2``; nonnegative up to ``tol``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.array_equal(x, y):
        raise ValueError("convexity gap needs x != y")
    diff = x - y
    lhs = float((grad_W(x, p) - grad_W(y, p)) @ diff)
    return lhs - segment_weight_integral(x, y, p, tol) * float(diff @ diff)


def hessian_norm_slack(x, p: KernelParams) -> np.ndarray:
    """``(1 + alpha) / (1 - alpha) * phi(|x|) - ||D^2 W(x)||_2`` for a batch of points ``(n, d)``."""
    if p.epsilon != 0.0:
        raise ValueError("the Hessian norm bound is stated for the unmollified kernel")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    h = hess_W(x, p).reshape(x.shape[0], x.shape[1], x.shape[1])
    norm = np.max(np.abs(np.linalg.eigvalsh(h)), axis=-1)
    return (1.0 + p.alpha) / (1.0 - p.alpha) * phi(np.linalg.norm(x, axis=-1), p) - norm


def hessian_norm_bound_check(x, p: KernelParams) -> bool:
    """Whether ``||D^2 W(x)||_2 <= (1 + alpha) / (1 - alpha) * phi(|x|)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return bool(hessian_norm_slack(x[None, :], p)[0] >= 0.0)


def mollifier_gradient_bound(epsilon: float, alpha: float) -> float:
    """Uniform bound ``2 eps**(1 - alpha)`` on ``|grad W_eps * rho - grad W * rho|``."""
    return 2.0 * epsilon ** (1.0 - alpha)
