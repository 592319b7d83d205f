"""Limiting objects: the Gaussian heat kernel, killed Green kernels on
rectangles and balls, the limit variance of the field functional, and the
closed forms used by the two-dimensional maximum experiment.

Convention fixed once and validated against the path-sampling oracle: a
Brownian motion with covariance matrix S2 has generator (1/2) div(S2 grad),
so its killed Green kernel equals 2 (det S)^{-1/2} times the Green function
of -Laplace on the per-axis rescaled domain (diagonal S2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import nquad

from .domains import Ball, Rectangle
from .rng import substream


class ParameterError(ValueError):
    pass


class SingularityError(ValueError):
    """Green kernel requested on the diagonal."""


class UnsupportedError(ValueError):
    """No closed form for this domain/diffusivity combination."""


class AccuracyError(RuntimeError):
    """Quadrature failed its self-consistency check."""


@dataclass(frozen=True)
class ContinuumGreenSpec:
    domain: object            # Rectangle or Ball
    sigma2: np.ndarray        # (d, d) diagonal positive, or scalar * I

    def __post_init__(self):
        s2 = np.atleast_2d(np.asarray(self.sigma2, dtype=float))
        if s2.shape[0] != s2.shape[1]:
            raise ParameterError("sigma2 must be square")
        if not np.allclose(s2, np.diag(np.diag(s2))):
            raise UnsupportedError("only diagonal sigma2 has closed forms;"
                                   " use mc_green")
        if (np.diag(s2) <= 0).any():
            raise ParameterError("sigma2 must be positive definite")
        object.__setattr__(self, "sigma2", s2)

    @property
    def dim(self) -> int:
        return self.sigma2.shape[0]

    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma2))


def spec_for(domain, sigma2, d=None) -> ContinuumGreenSpec:
    if np.ndim(sigma2) == 0:
        d = d if d is not None else domain.dim
        sigma2 = float(sigma2) * np.eye(d)
    return ContinuumGreenSpec(domain=domain, sigma2=np.asarray(sigma2, float))


def heat_kernel(sigma2, t: float, x, y) -> float:
    """Gaussian transition density with covariance t * sigma2."""
    if t <= 0:
        raise ParameterError("heat kernel requires t > 0")
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
    d = s2.shape[0]
    diff = np.asarray(x, float) - np.asarray(y, float)
    det = np.linalg.det(s2)
    if det <= 0:
        raise ParameterError("sigma2 must be positive definite")
    quad = diff @ np.linalg.solve(s2, diff)
    return float(np.exp(-quad / (2.0 * t))
                 / np.sqrt((2.0 * math.pi * t) ** d * det))


def _log_sinh(x):
    # log sinh x for x > 0, overflow-safe
    return x + np.log1p(-np.exp(-2.0 * x)) - math.log(2.0)


def _green_rect_std(lengths: np.ndarray, u: np.ndarray, v: np.ndarray,
                    kmax: int) -> np.ndarray:
    """Green function of -Laplace on prod (0, L_i), Dirichlet, vectorized.

    ``u``, ``v`` are (m, d) points inside the box.  The sine series is
    summed analytically along the axis of largest separation per pair,
    which turns it into a geometrically convergent transverse sum.
    """
    m, d = u.shape
    out = np.zeros(m)
    sep = np.abs(u - v)
    axis_pick = np.argmax(sep / lengths, axis=1)
    for a in range(d):
        rows = np.flatnonzero(axis_pick == a)
        if rows.size == 0:
            continue
        La = lengths[a]
        trans = [i for i in range(d) if i != a]
        ks = np.arange(1, kmax + 1)
        # transverse mode grid: product over d-1 axes
        grids = np.meshgrid(*([ks] * len(trans)), indexing="ij")
        kvec = np.stack([g.reshape(-1) for g in grids], axis=1)  # (K, d-1)
        mu = np.sqrt(((kvec * math.pi
                       / lengths[trans]) ** 2).sum(axis=1))       # (K,)
        ua = u[rows, a]
        va = v[rows, a]
        s_lo = np.minimum(ua, va)
        s_hi = np.maximum(ua, va)
        # sinh(mu s_lo) sinh(mu (L - s_hi)) / (mu sinh(mu L))
        A = np.outer(s_lo, mu)
        B = np.outer(La - s_hi, mu)
        C = mu * La
        g1 = np.exp(_log_sinh(A) + _log_sinh(B) - _log_sinh(C)[None, :]) / mu
        prod = np.ones((rows.size, kvec.shape[0]))
        for j, i_ax in enumerate(trans):
            arg_u = np.outer(u[rows, i_ax], kvec[:, j] * math.pi / lengths[i_ax])
            arg_v = np.outer(v[rows, i_ax], kvec[:, j] * math.pi / lengths[i_ax])
            prod *= (2.0 / lengths[i_ax]) * np.sin(arg_u) * np.sin(arg_v)
        out[rows] = (prod * g1).sum(axis=1)
    return out


def green_rectangle(spec: ContinuumGreenSpec, x, y, tol: float = 1e-8,
                    kmax_start: int = 24, kmax_limit: int = 4096) -> float:
    """Killed Green kernel on a rectangle via the Dirichlet eigenbasis.

    The truncation doubles until two successive evaluations agree to tol.
    """
    val = green_rectangle_many(spec, np.atleast_2d(np.asarray(x, float)),
                               np.atleast_2d(np.asarray(y, float)),
                               tol=tol, kmax_start=kmax_start,
                               kmax_limit=kmax_limit)
    return float(val[0])


def green_rectangle_many(spec: ContinuumGreenSpec, x: np.ndarray,
                         y: np.ndarray, tol: float = 1e-8,
                         kmax_start: int = 24,
                         kmax_limit: int = 16384) -> np.ndarray:
    if not isinstance(spec.domain, Rectangle):
        raise UnsupportedError("green_rectangle needs a rectangle domain")
    dom = spec.domain
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    if not (dom.contains(x).all() and dom.contains(y).all()):
        raise ParameterError("points must lie inside the domain")
    if (np.abs(x - y).max(axis=1) == 0).any():
        raise SingularityError("Green kernel diverges on the diagonal")
    sig = spec.sigmas()
    lo = np.asarray(dom.lo)
    u = (x - lo) / sig
    v = (y - lo) / sig
    lengths = (np.asarray(dom.hi) - lo) / sig
    scale = 2.0 / np.prod(sig)

    # required truncation per pair from the geometric tail of the
    # transverse sum: modes decay like exp(-pi k sep_a / L_trans)
    sep = np.abs(u - v)
    axis_pick = np.argmax(sep / lengths, axis=1)
    d = u.shape[1]
    ltrans = np.empty(u.shape[0])
    for a in range(d):
        rows = axis_pick == a
        others = [i for i in range(d) if i != a]
        ltrans[rows] = lengths[others].max() if others else lengths[a]
    rate = math.pi * sep[np.arange(u.shape[0]), axis_pick] / ltrans
    tol_eff = tol / max(scale, 1.0)
    kreq = np.ceil(np.log(1.0 / tol_eff) / np.maximum(rate, 1e-12))
    kreq = np.clip(kreq, kmax_start, None).astype(int)

    out = np.empty(u.shape[0])
    pending = np.arange(u.shape[0])
    kmax = kmax_start
    while pending.size:
        if kmax > kmax_limit:
            raise AccuracyError(
                f"series did not settle below {tol} by kmax={kmax_limit}")
        rows = pending[kreq[pending] <= kmax]
        if rows.size:
            cur = _green_rect_std(lengths, u[rows], v[rows], kmax)
            chk = _green_rect_std(lengths, u[rows], v[rows], 2 * kmax)
            good = np.abs(chk - cur) <= tol_eff
            out[rows[good]] = chk[good]
            settled = set(rows[good])
            kreq[rows[~good]] = 2 * kmax
            pending = np.array([p for p in pending if p not in settled],
                               dtype=int)
        kmax *= 2
    return scale * out


def green_ball(spec: ContinuumGreenSpec, x, y, tol: float = 1e-10) -> float:
    """Killed Green kernel on a ball, isotropic diffusivity, by images."""
    if not isinstance(spec.domain, Ball):
        raise UnsupportedError("green_ball needs a ball domain")
    s2 = np.diag(spec.sigma2)
    if not np.allclose(s2, s2[0]):
        raise UnsupportedError("green_ball needs isotropic sigma2")
    sigma2 = float(s2[0])
    d = spec.dim
    R = spec.domain.radius
    c = np.asarray(spec.domain.center, float)
    xx = np.asarray(x, float) - c
    yy = np.asarray(y, float) - c
    if np.linalg.norm(xx) >= R or np.linalg.norm(yy) >= R:
        raise ParameterError("points must lie inside the ball")
    r = np.linalg.norm(xx - yy)
    if r == 0:
        raise SingularityError("Green kernel diverges on the diagonal")
    ay = np.linalg.norm(yy)
    if ay == 0:
        # swap so the image construction is nondegenerate
        xx, yy = yy, xx
        ay = np.linalg.norm(yy)
    if ay == 0:
        raise SingularityError("both points at the center")
    ystar = yy * (R * R / (ay * ay))
    rim = np.linalg.norm(xx - ystar)
    if d == 2:
        G = (1.0 / (2.0 * math.pi)) * math.log((ay * rim) / (R * r))
    else:
        area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        cd = 1.0 / ((d - 2.0) * area)
        G = cd * (r ** (2.0 - d) - (ay * rim / R) ** (2.0 - d))
    return float(2.0 * G / sigma2)


def mc_green(spec: ContinuumGreenSpec, x, y_cell: Rectangle, replicas: int,
             step: float = 1e-3, seed: int = 0,
             max_halvings: int = 3) -> Tuple[float, float]:
    """Occupation-time Monte Carlo for the killed Green kernel.

    Euler paths from x, killed on exiting the domain; accumulates time in
    ``y_cell`` divided by its volume.  The step is halved until the change
    is within the statistical error.
    """
    est, se = _mc_green_once(spec, x, y_cell, replicas, step, seed)
    for level in range(max_halvings):
        step /= 2.0
        est2, se2 = _mc_green_once(spec, x, y_cell, replicas, step,
                                   seed + 1000 * (level + 1))
        if abs(est2 - est) <= np.hypot(se, se2):
            return est2, se2
        est, se = est2, se2
    return est, se


def _bridge_survival(dom, sig, step, before, after):
    """P[the Euler segment stayed inside | endpoints inside].

    Without this correction the occupation estimate carries an O(sqrt(h))
    positive bias from excursions through the boundary between grid times;
    the bridge-crossing kill reduces it to O(h).
    """
    if isinstance(dom, Rectangle):
        surv = np.ones(before.shape[0])
        lo = np.asarray(dom.lo)
        hi = np.asarray(dom.hi)
        for i in range(before.shape[1]):
            v = sig[i] ** 2 * step
            a0 = before[:, i] - lo[i]
            a1 = after[:, i] - lo[i]
            surv *= -np.expm1(-2.0 * a0 * a1 / v)
            b0 = hi[i] - before[:, i]
            b1 = hi[i] - after[:, i]
            surv *= -np.expm1(-2.0 * b0 * b1 / v)
        return surv
    # half-space approximation through the nearest boundary point
    v = float(np.max(sig)) ** 2 * step
    d0 = dom.boundary_distance(before)
    d1 = dom.boundary_distance(after)
    return -np.expm1(-2.0 * d0 * d1 / v)


def _mc_green_once(spec, x, y_cell, replicas, step, seed):
    dom = spec.domain
    d = spec.dim
    sig = spec.sigmas()
    sqh = math.sqrt(step)
    vol = y_cell.volume()
    occ_total = np.zeros(replicas)
    batch = 8192
    pos_template = np.asarray(x, float)
    for b, start in enumerate(range(0, replicas, batch)):
        stop = min(start + batch, replicas)
        nrep = stop - start
        gen = substream(seed, b)
        pos = np.tile(pos_template, (nrep, 1))
        occ = np.zeros(nrep)
        alive = np.arange(nrep)
        while alive.size:
            before = pos[alive].copy()
            inc = gen.standard_normal((alive.size, d)) * (sig * sqh)
            pos[alive] += inc
            in_cell = y_cell.contains(pos[alive])
            occ[alive] += step * in_cell
            inside = dom.contains(pos[alive])
            surv = np.zeros(alive.size)
            surv[inside] = _bridge_survival(dom, sig, step,
                                            before[inside],
                                            pos[alive][inside])
            alive = alive[gen.random(alive.size) < surv]
        occ_total[start:stop] = occ
    vals = occ_total / vol
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))


def _sigma_sq_f_level(spec, f, theta, kmax: int, nodes: int) -> float:
    """One truncation level of the eigenbasis expansion of the variance.

    In per-axis rescaled coordinates the killed Green kernel diagonalizes
    over the sine basis, so the double integral of f f g collapses to
    2 prod(sigma) sum_k <f, phi_k>^2 / lambda_k with no singularity to
    quadrature over.  Inner products use tensor Gauss-Legendre with
    ``nodes`` points per axis.
    """
    dom = spec.domain
    d = spec.dim
    sig = spec.sigmas()
    lo = np.asarray(dom.lo)
    lengths = (np.asarray(dom.hi) - lo) / sig

    pts, wts = np.polynomial.legendre.leggauss(nodes)
    axis_nodes = [(pts + 1.0) * (lengths[i] / 2.0) for i in range(d)]
    axis_wts = [wts * (lengths[i] / 2.0) for i in range(d)]
    mesh = np.meshgrid(*axis_nodes, indexing="ij")
    upts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    fvals = np.asarray(f(upts * sig + lo), dtype=float).reshape((nodes,) * d)

    # sine design matrices S_i[node, k] = w_node sqrt(2/L) sin(k pi u / L)
    ks = np.arange(1, kmax + 1)
    smats = []
    for i in range(d):
        S = (np.sqrt(2.0 / lengths[i])
             * np.sin(np.outer(axis_nodes[i], ks) * math.pi / lengths[i]))
        smats.append(axis_wts[i][:, None] * S)
    coeff = fvals
    for i in range(d):
        coeff = np.tensordot(coeff, smats[i], axes=([0], [0]))
    grids = np.meshgrid(*([ks] * d), indexing="ij")
    lam = sum((grids[i] * math.pi / lengths[i]) ** 2 for i in range(d))
    total = float(np.sum(coeff ** 2 / lam))
    return theta * 2.0 * float(np.prod(sig)) * total


def sigma_sq_f(spec: ContinuumGreenSpec, f: Callable, theta: float = 1.0,
               tol: float = 1e-4, kmax: int = 48,
               nodes: Optional[int] = None) -> float:
    """Limit variance theta * double integral of f(x) f(y) g(x, y).

    Evaluated in the rectangle eigenbasis (the same basis as the Green
    series, where the diagonal singularity integrates away exactly); the
    result must agree across two truncation/quadrature levels to ``tol``
    relative, else an accuracy error is raised.
    """
    if not 0.0 < theta <= 1.0:
        raise ParameterError("theta must lie in (0, 1]")
    if not isinstance(spec.domain, Rectangle):
        raise UnsupportedError("sigma_sq_f needs a rectangle domain")
    n1 = nodes if nodes is not None else max(64, 2 * kmax)
    coarse = _sigma_sq_f_level(spec, f, theta, kmax, n1)
    fine = _sigma_sq_f_level(spec, f, theta, 2 * kmax, 2 * n1)
    denom = max(abs(fine), 1e-300)
    if abs(fine - coarse) / denom > tol:
        raise AccuracyError(
            f"quadrature levels differ by {abs(fine - coarse) / denom:.2e}"
            f" > {tol:.2e}; raise kmax")
    return fine


def exit_time_moment(spec: ContinuumGreenSpec, x) -> float:
    """Mean exit time of the diffusion from a ball: (R^2 - |x - c|^2)/(s^2 d)."""
    if not isinstance(spec.domain, Ball):
        raise UnsupportedError("exit_time_moment needs a ball domain")
    s2 = np.diag(spec.sigma2)
    if not np.allclose(s2, s2[0]):
        raise UnsupportedError("exit_time_moment needs isotropic sigma2")
    R = spec.domain.radius
    c = np.asarray(spec.domain.center, float)
    r2 = float(((np.asarray(x, float) - c) ** 2).sum())
    return max(R * R - r2, 0.0) / (float(s2[0]) * spec.dim)


def bar_g(sigma2, mean_mu: float) -> float:
    """On-diagonal log-growth coefficient, applied verbatim:
    1 / (pi sqrt(det sigma2) E[mu(0)]).  Two-dimensional only."""
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
    if s2.shape != (2, 2):
        raise ParameterError("bar_g is defined for d = 2")
    det = float(np.linalg.det(s2))
    if det <= 0 or mean_mu <= 0:
        raise ParameterError("need positive definite sigma2 and mean mu > 0")
    return 1.0 / (math.pi * math.sqrt(det) * mean_mu)


def centering_m_n(bar_g_value: float, n: int, d: int = 2) -> float:
    """Centering sequence sqrt(bar_g) (sqrt(2d) log n - 3/(2 sqrt(2d)) loglog n)."""
    if n < 3:
        raise ParameterError("centering needs n >= 3")
    ln = math.log(n)
    lln = math.log(ln) if ln > 1.0 else 0.0
    root = math.sqrt(2.0 * d)
    return math.sqrt(bar_g_value) * (root * ln - 1.5 / root * lln)


def homogeneous_ondiag_coefficient(d: int = 2) -> float:
    """Independent oracle for the unit-conductance on-diagonal growth in d=2:
    simple-random-walk potential-kernel coefficient (2/pi) times the mean
    holding time 1/(2d)."""
    if d != 2:
        raise ParameterError("oracle defined for d = 2")
    return (2.0 / math.pi) / (2.0 * d)
