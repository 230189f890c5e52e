"""O(N^2) pairwise sums over atoms.

Every kernel has a numba implementation (sequential loops, index-ordered
accumulation, so bit-reproducible) and a numpy broadcasting fallback. The
module-level names dispatch on :data:`cskuramoto._accel.USE_NUMBA`.

Conventions shared by all kernels: ``x`` is ``(N, d)``, ``w`` is ``(N,)``, and
a pair at zero distance contributes nothing to gradient sums (``grad W(0) = 0``).
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit


# -- numba ----------------------------------------------------------------------------

@njit(inline="always")
def _neg_pow(b, alpha):
    # b**-alpha; the quarter exponents go through sqrt, several times cheaper than pow
    if alpha == 0.5:
        return 1.0 / math.sqrt(b)
    if alpha == 0.25:
        return 1.0 / math.sqrt(math.sqrt(b))
    if alpha == 0.75:
        q = math.sqrt(b)
        return 1.0 / (q * math.sqrt(q))
    return b ** (-alpha)


@njit
def _grad_conv_nb(xq, xs, ws, alpha, eps):
    nq, d = xq.shape
    ns = xs.shape[0]
    out = np.zeros((nq, d))
    c = 1.0 / (1.0 - alpha)
    diff = np.empty(d)
    for i in range(nq):
        for j in range(ns):
            s = 0.0
            for k in range(d):
                diff[k] = xq[i, k] - xs[j, k]
                s += diff[k] * diff[k]
            if s == 0.0:
                continue
            r = math.sqrt(s)
            f = ws[j] * c * _neg_pow(r + eps, alpha)
            for k in range(d):
                out[i, k] += f * diff[k]
    return out


@njit
def _enstrophy_nb(x, u, w, alpha, eps):
    n, d = x.shape
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            du = 0.0
            for k in range(d):
                dx = x[i, k] - x[j, k]
                s += dx * dx
                dv = u[i, k] - u[j, k]
                du += dv * dv
            if du == 0.0:
                continue
            if s == 0.0 and eps == 0.0:
                return math.inf
            total += w[i] * w[j] * du * (math.sqrt(s) + eps) ** (-alpha)
    # ordered pairs carry the 1/2: 1/2 * sum_{i != j} = sum_{i < j}
    return total


@njit
def _flow_nb(x, omega, w, alpha, eps):
    # field u = omega - grad W * rho and its enstrophy, one phi per unordered pair
    n, d = x.shape
    u = omega.copy()
    ph = np.zeros((n, n))
    c = 1.0 / (1.0 - alpha)
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                dx = x[i, k] - x[j, k]
                s += dx * dx
            if s == 0.0:
                ph[i, j] = math.inf if eps == 0.0 else eps ** (-alpha)
                continue
            f = _neg_pow(math.sqrt(s) + eps, alpha)
            ph[i, j] = f
            f *= c
            for k in range(d):
                dx = f * (x[i, k] - x[j, k])
                u[i, k] -= w[j] * dx
                u[j, k] += w[i] * dx
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            du = 0.0
            for k in range(d):
                dv = u[i, k] - u[j, k]
                du += dv * dv
            if du == 0.0:
                continue
            if ph[i, j] == math.inf:
                return u, math.inf
            total += w[i] * w[j] * du * ph[i, j]
    return u, total


@njit
def _alignment_nb(x, v, w, alpha, eps):
    n, d = x.shape
    out = np.zeros((n, d))
    c = 1.0 / (1.0 - alpha)
    diff = np.empty(d)
    dv = np.empty(d)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            s = 0.0
            proj = 0.0
            for k in range(d):
                diff[k] = x[i, k] - x[j, k]
                s += diff[k] * diff[k]
                dv[k] = v[j, k] - v[i, k]
                proj += diff[k] * dv[k]
            r = math.sqrt(s)
            if r == 0.0:
                if eps == 0.0:
                    continue
                f = w[j] * c * eps ** (-alpha)
                for k in range(d):
                    out[i, k] += f * dv[k]
                continue
            scale = w[j] * c * (r + eps) ** (-alpha)
            g = alpha * proj / (r * (r + eps))
            for k in range(d):
                out[i, k] += scale * (dv[k] - g * diff[k])
    return out


@njit
def _interaction_nb(x, w, alpha, eps):
    n, d = x.shape
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                dx = x[i, k] - x[j, k]
                s += dx * dx
            r = math.sqrt(s)
            if eps == 0.0:
                val = r ** (2.0 - alpha) / ((2.0 - alpha) * (1.0 - alpha))
            else:
                val = (r + eps) ** (1.0 - alpha) * (r - eps / (1.0 - alpha)) / ((2.0 - alpha) * (1.0 - alpha))
            total += w[i] * w[j] * val
    total *= 2.0
    if eps > 0.0:
        w0 = eps ** (1.0 - alpha) * (-eps / (1.0 - alpha)) / ((2.0 - alpha) * (1.0 - alpha))
        for i in range(n):
            total += w[i] * w[i] * w0
    return total


# -- numpy ----------------------------------------------------------------------------

def _grad_conv_np(xq, xs, ws, alpha, eps):
    diff = xq[:, None, :] - xs[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    with np.errstate(divide="ignore"):
        coef = np.where(r > 0, (r + eps) ** (-alpha), 0.0) if eps == 0.0 else (r + eps) ** (-alpha)
    coef = coef * ws[None, :] / (1.0 - alpha)
    return np.einsum("ij,ijk->ik", coef, diff)


def _enstrophy_np(x, u, w, alpha, eps):
    dx = x[:, None, :] - x[None, :, :]
    du = u[:, None, :] - u[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", dx, dx))
    du2 = np.einsum("ijk,ijk->ij", du, du)
    active = du2 > 0
    if eps == 0.0 and np.any(active & (r == 0)):
        return math.inf
    with np.errstate(divide="ignore"):
        ph = np.where(active, (r + eps) ** (-alpha), 0.0)
    return 0.5 * float(np.sum(w[:, None] * w[None, :] * du2 * ph))


def _flow_np(x, omega, w, alpha, eps):
    diff = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    with np.errstate(divide="ignore"):
        ph = (r + eps) ** (-alpha)
    coef = np.where(r > 0, ph, 0.0) * w[None, :] / (1.0 - alpha)
    u = omega - np.einsum("ij,ijk->ik", coef, diff)
    du = u[:, None, :] - u[None, :, :]
    du2 = np.einsum("ijk,ijk->ij", du, du)
    active = du2 > 0
    if eps == 0.0 and np.any(active & (r == 0)):
        return u, math.inf
    return u, 0.5 * float(np.sum(w[:, None] * w[None, :] * du2 * np.where(active, ph, 0.0)))


def _alignment_np(x, v, w, alpha, eps):
    n = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    dv = v[None, :, :] - v[:, None, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    off = ~np.eye(n, dtype=bool)
    if eps == 0.0:
        off &= r > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(off, (r + eps) ** (-alpha), 0.0) * w[None, :] / (1.0 - alpha)
        denom = r * (r + eps)
        g = np.where(denom > 0, alpha * np.einsum("ijk,ijk->ij", diff, dv) / denom, 0.0)
    return np.einsum("ij,ijk->ik", scale, dv - g[:, :, None] * diff)


def _interaction_np(x, w, alpha, eps):
    diff = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if eps == 0.0:
        val = r ** (2.0 - alpha) / ((2.0 - alpha) * (1.0 - alpha))
    else:
        val = (r + eps) ** (1.0 - alpha) * (r - eps / (1.0 - alpha)) / ((2.0 - alpha) * (1.0 - alpha))
    return float(np.sum(w[:, None] * w[None, :] * val))


def _prep(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _dispatch(nb, py):
    impl = nb if USE_NUMBA else py

    def call(*arrays_then_scalars):
        *arrays, alpha, eps = arrays_then_scalars
        return impl(*[_prep(a) for a in arrays], float(alpha), float(eps))

    call.__name__ = py.__name__.replace("_np", "").lstrip("_")
    call.__doc__ = py.__doc__
    return call


grad_conv = _dispatch(_grad_conv_nb, _grad_conv_np)
grad_conv.__doc__ = "``out[i] = sum_j ws[j] grad W(xq[i] - xs[j])``."
enstrophy_sum = _dispatch(_enstrophy_nb, _enstrophy_np)
enstrophy_sum.__doc__ = "``1/2 sum_{i != j} w_i w_j |u_i - u_j|^2 phi(|x_i - x_j|)``; ``inf`` on a collision."
flow = _dispatch(_flow_nb, _flow_np)
flow.__doc__ = "Field values ``omega - grad W * rho`` at the atoms and their enstrophy, in one pass."
alignment_force = _dispatch(_alignment_nb, _alignment_np)
alignment_force.__doc__ = "``out[i] = sum_{j != i} w_j D^2 W(x_i - x_j) (v_j - v_i)``."
interaction_sum = _dispatch(_interaction_nb, _interaction_np)
interaction_sum.__doc__ = "``sum_{i, j} w_i w_j W(x_i - x_j)`` including the diagonal ``W(0)``."

IMPLEMENTATIONS = {
    "grad_conv": (_grad_conv_nb, _grad_conv_np),
    "enstrophy_sum": (_enstrophy_nb, _enstrophy_np),
    "flow": (_flow_nb, _flow_np),
    "alignment_force": (_alignment_nb, _alignment_np),
    "interaction_sum": (_interaction_nb, _interaction_np),
}
