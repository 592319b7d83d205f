"""Variable-speed random walk on the open cluster.

The walk waits at x an exponential time with mean 1/mu(x) and jumps to a
neighbor y with probability w(x,y)/mu(x).  Besides a single-trajectory
simulator there are vectorized Monte Carlo estimators for exit times,
occupation-time Green values, heat kernels, and the diffusivity matrix.

Replicas are processed in fixed-size batches; batch b draws from the
counter-based substream (seed, b), so results do not depend on scheduling
or worker count.  Reductions run in fixed batch order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .cluster import ClusterGraph
from .rng import substream

BATCH = 32768


class DynamicsError(RuntimeError):
    """Walk cannot move (isolated vertex)."""


@dataclass
class Trajectory:
    start: tuple
    times: np.ndarray      # jump times, strictly increasing, times[0] = 0
    sites: np.ndarray      # (len(times), d) visited sites
    total_time: float

    def export_csv(self, path) -> None:
        d = self.sites.shape[1]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"x{i + 1}" for i in range(d)) + "\n")
            for t, s in zip(self.times, self.sites):
                fh.write(f"{t!r}," + ",".join(str(int(v)) for v in s) + "\n")


@dataclass
class _Padded:
    """Per-vertex neighbor tables padded to the maximum degree."""

    nbr: np.ndarray     # (m, K) neighbor ids
    cumw: np.ndarray    # (m, K) cumulative weights, inf-padded
    steps: np.ndarray   # (m, K, d) jump vectors
    mu: np.ndarray


_padded_cache: dict = {}


def _padded(cg: ClusterGraph) -> _Padded:
    # cache by identity; keep a strong reference so the id stays unique
    hit = _padded_cache.get("entry")
    if hit is not None and hit[0] is cg:
        return hit[1]
    m = len(cg)
    deg = np.diff(cg.indptr)
    if (deg == 0).any():
        raise DynamicsError("cluster has an isolated vertex")
    K = int(deg.max())
    nbr = np.zeros((m, K), dtype=np.int64)
    cumw = np.full((m, K), np.inf)
    steps = np.zeros((m, K, cg.dim), dtype=np.int64)
    for v in range(m):
        lo, hi = cg.indptr[v], cg.indptr[v + 1]
        k = hi - lo
        nbr[v, :k] = cg.nbr[lo:hi]
        cumw[v, :k] = np.cumsum(cg.wts[lo:hi])
        steps[v, :k] = cg.steps[lo:hi]
    pad = _Padded(nbr=nbr, cumw=cumw, steps=steps, mu=cg.mu.copy())
    _padded_cache.clear()  # keep at most one graph resident
    _padded_cache["entry"] = (cg, pad)
    return pad


def simulate(cg: ClusterGraph, x0, horizon: Optional[float] = None,
             stop_interior: Optional[np.ndarray] = None,
             seed: int = 0, max_jumps: int = 10_000_000) -> Trajectory:
    """One trajectory, run to ``horizon`` or until it leaves the vertex set
    flagged by ``stop_interior`` (a boolean mask over cluster vertices)."""
    if horizon is None and stop_interior is None:
        raise ValueError("need a horizon or a stopping set")
    cur = cg.vertex_id(x0)
    gen = substream(seed, 0)
    times = [0.0]
    path = [cur]
    t = 0.0
    for _ in range(max_jumps):
        if stop_interior is not None and not stop_interior[cur]:
            break
        mu = cg.mu[cur]
        if mu <= 0:
            raise DynamicsError("isolated vertex")
        hold = gen.exponential(1.0 / mu)
        if horizon is not None and t + hold > horizon:
            t = horizon
            break
        t += hold
        lo, hi = cg.indptr[cur], cg.indptr[cur + 1]
        cw = np.cumsum(cg.wts[lo:hi])
        j = int(np.searchsorted(cw, gen.random() * mu, side="right"))
        j = min(j, hi - lo - 1)
        cur = int(cg.nbr[lo + j])
        times.append(t)
        path.append(cur)
    return Trajectory(start=tuple(int(v) for v in cg.coords[cg.vertex_id(x0)]),
                      times=np.array(times),
                      sites=cg.coords[np.array(path)],
                      total_time=t)


def _batch_exit(cg: ClusterGraph, pad: _Padded, starts: np.ndarray,
                interior: np.ndarray, gen,
                occupy: Optional[int] = None):
    """Run one replica batch to exit.  Returns (exit_times, occupation)."""
    nrep = starts.size
    cur = starts.copy()
    t = np.zeros(nrep)
    occ = np.zeros(nrep) if occupy is not None else None
    alive = np.arange(nrep)
    while alive.size:
        c = cur[alive]
        inside = interior[c]
        if not inside.all():
            alive = alive[inside]
            if alive.size == 0:
                break
            c = cur[alive]
        mu = pad.mu[c]
        hold = gen.standard_exponential(alive.size) / mu
        t[alive] += hold
        if occupy is not None:
            at_y = c == occupy
            if at_y.any():
                occ[alive[at_y]] += hold[at_y]
        u = gen.random(alive.size) * mu
        idx = (u[:, None] > pad.cumw[c]).sum(axis=1)
        np.minimum(idx, pad.nbr.shape[1] - 1, out=idx)
        cur[alive] = pad.nbr[c, idx]
    return t, occ


def _batch_horizon(cg: ClusterGraph, pad: _Padded, starts: np.ndarray,
                   horizon: float, gen) -> Tuple[np.ndarray, np.ndarray]:
    """Run one batch to a fixed time.  Returns (final ids, displacements)."""
    nrep = starts.size
    cur = starts.copy()
    disp = np.zeros((nrep, cg.dim), dtype=np.int64)
    t = np.zeros(nrep)
    alive = np.arange(nrep)
    while alive.size:
        c = cur[alive]
        mu = pad.mu[c]
        hold = gen.standard_exponential(alive.size) / mu
        tn = t[alive] + hold
        done = tn > horizon
        t[alive] = np.where(done, t[alive], tn)
        jump = alive[~done]
        if done.any():
            alive = alive[~done]
            if alive.size == 0:
                break
            c = cur[alive]
        u = gen.random(alive.size) * pad.mu[c]
        idx = (u[:, None] > pad.cumw[c]).sum(axis=1)
        np.minimum(idx, pad.nbr.shape[1] - 1, out=idx)
        disp[alive] += pad.steps[c, idx]
        cur[alive] = pad.nbr[c, idx]
    return cur, disp


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    n = values.size
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n))


def exit_time_mc(cg: ClusterGraph, interior: np.ndarray, x0,
                 replicas: int, seed: int = 0) -> Tuple[float, float]:
    """Sample mean and SE of the exit time from the flagged vertex set."""
    pad = _padded(cg)
    v0 = cg.vertex_id(x0)
    if not interior[v0]:
        return 0.0, 0.0
    out = np.empty(replicas)
    for b, start in enumerate(range(0, replicas, BATCH)):
        stop = min(start + BATCH, replicas)
        gen = substream(seed, b)
        starts = np.full(stop - start, v0, dtype=np.int64)
        t, _ = _batch_exit(cg, pad, starts, interior, gen)
        out[start:stop] = t
    return _mean_se(out)


def occupation_green_mc(cg: ClusterGraph, interior: np.ndarray, x, y,
                        replicas: int, seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo Green value: expected time at y before exiting."""
    pad = _padded(cg)
    v0 = cg.vertex_id(x)
    vy = cg.vertex_id(y)
    if not interior[v0] or not interior[vy]:
        return 0.0, 0.0
    out = np.empty(replicas)
    for b, start in enumerate(range(0, replicas, BATCH)):
        stop = min(start + BATCH, replicas)
        gen = substream(seed, b)
        starts = np.full(stop - start, v0, dtype=np.int64)
        _, occ = _batch_exit(cg, pad, starts, interior, gen, occupy=vy)
        out[start:stop] = occ
    return _mean_se(out)


def heat_kernel_mc(cg: ClusterGraph, t: float, x, y,
                   replicas: int, seed: int = 0) -> Tuple[float, float]:
    """Estimate P_x[X_t = y] by the fraction of replicas found at y."""
    if t < 0:
        raise ValueError("time must be >= 0")
    v0 = cg.vertex_id(x)
    vy = cg.vertex_id(y)
    if t == 0:
        return (1.0 if v0 == vy else 0.0), 0.0
    pad = _padded(cg)
    hits = np.empty(replicas)
    for b, start in enumerate(range(0, replicas, BATCH)):
        stop = min(start + BATCH, replicas)
        gen = substream(seed, b)
        starts = np.full(stop - start, v0, dtype=np.int64)
        final, _ = _batch_horizon(cg, pad, starts, t, gen)
        hits[start:stop] = final == vy
    return _mean_se(hits)


@dataclass
class DiffusivityEstimate:
    sigma2: np.ndarray       # (d, d)
    se: np.ndarray           # (d, d) per-entry standard errors
    n: int
    t: float
    replicas: int
    seed: int

    def export_csv(self, path) -> None:
        d = self.sigma2.shape[0]
        with open(path, "w") as fh:
            fh.write("i,j,sigma2,se\n")
            for i in range(d):
                for j in range(d):
                    fh.write(f"{i},{j},{self.sigma2[i, j]!r},{self.se[i, j]!r}\n")


def estimate_sigma(cg: ClusterGraph, n: int, t: float, replicas: int,
                   seed: int = 0, n_se_batches: int = 20) -> DiffusivityEstimate:
    """Diffusivity from endpoint displacements: covariance of X_{t n^2}/(n sqrt(t)).

    Start sites are drawn uniformly from cluster sites in the central
    quarter window of the box.  Standard errors come from batch means.
    """
    if n < 1 or t <= 0:
        raise ValueError("need n >= 1 and t > 0")
    d = cg.dim
    box = np.asarray(cg.box)
    lo = box // 4
    hi = box - box // 4
    central = np.flatnonzero(
        np.logical_and((cg.coords >= lo).all(axis=1),
                       (cg.coords < hi).all(axis=1)))
    if central.size == 0:
        raise DynamicsError("cluster misses the central window at this scale")
    pad = _padded(cg)
    horizon = t * n * n
    scaled = np.empty((replicas, d))
    start_gen = substream(seed, 2 ** 31)
    for b, start in enumerate(range(0, replicas, BATCH)):
        stop = min(start + BATCH, replicas)
        gen = substream(seed, b)
        starts = central[start_gen.integers(0, central.size, size=stop - start)]
        _, disp = _batch_horizon(cg, pad, starts, horizon, gen)
        scaled[start:stop] = disp / (n * np.sqrt(t))
    centered = scaled - scaled.mean(axis=0)
    sigma2 = (centered.T @ centered) / (replicas - 1)

    # batch the replicas for per-entry SEs
    nb = min(n_se_batches, replicas)
    splits = np.array_split(np.arange(replicas), nb)
    mats = []
    for idx in splits:
        c = scaled[idx] - scaled[idx].mean(axis=0)
        mats.append((c.T @ c) / max(idx.size - 1, 1))
    mats = np.array(mats)
    se = mats.std(axis=0, ddof=1) / np.sqrt(nb)
    return DiffusivityEstimate(sigma2=sigma2, se=se, n=n, t=t,
                               replicas=replicas, seed=seed)


def endpoint_sample(cg: ClusterGraph, n: int, t: float, replicas: int,
                    seed: int = 0) -> np.ndarray:
    """Scaled endpoint displacements X_{t n^2}/n, for distribution checks."""
    pad = _padded(cg)
    d = cg.dim
    box = np.asarray(cg.box)
    central = np.flatnonzero(
        np.logical_and((cg.coords >= box // 4).all(axis=1),
                       (cg.coords < box - box // 4).all(axis=1)))
    horizon = t * n * n
    out = np.empty((replicas, d))
    start_gen = substream(seed, 2 ** 31)
    for b, start in enumerate(range(0, replicas, BATCH)):
        stop = min(start + BATCH, replicas)
        gen = substream(seed, b)
        starts = central[start_gen.integers(0, central.size, size=stop - start)]
        _, disp = _batch_horizon(cg, pad, starts, horizon, gen)
        out[start:stop] = disp / n
    return out
