"""Experiment orchestration and the command-line interface.

Each experiment is a pure function of an ExperimentConfig: it generates its
environments from the master seed, runs the computation, and writes CSV
tables (plus static SVG figures where useful) and a JSON manifest into the
output directory.  Re-running with the same config produces byte-identical
CSV files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import cluster as cl
from . import continuum as co
from . import dirichlet as dr
from . import environment as env
from . import walk
from .domains import Ball, Rectangle, unit_square

# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    experiment: str = ""
    law: env.LawSpec = field(default_factory=env.constant)
    domain_kind: str = "square"        # square | ball
    d: int = 2
    box: Optional[Tuple[int, ...]] = None
    n_ladder: Tuple[int, ...] = (16, 32, 64)
    eps: float = 0.2
    delta: float = 0.3
    grid: int = 10
    replicas: int = 10_000
    seed: int = 0
    tol: float = 1e-8
    out: str = "out"
    q: float = 0.5                     # moment exponent for nu-norms
    t: float = 1.0                     # walk time horizon scale
    theta: Optional[float] = None      # cluster density input; None = derive
    sigma2: Optional[float] = None     # scalar diffusivity input; None = derive
    size: int = 50                     # figure1 panel size

    def __post_init__(self):
        if not 0.0 < self.eps < self.delta:
            raise env.ParameterError("need 0 < eps < delta")
        lad = tuple(int(n) for n in self.n_ladder)
        if any(b <= a for a, b in zip(lad, lad[1:])) or any(n < 2 for n in lad):
            raise env.ParameterError("n-ladder must be strictly increasing, n >= 2")
        self.n_ladder = lad
        if self.d < 1:
            raise env.ParameterError("dimension must be >= 1")
        if self.replicas < 1:
            raise env.ParameterError("replicas must be >= 1")
        if self.domain_kind not in ("square", "ball"):
            raise env.ParameterError("domain must be 'square' or 'ball'")

    def domain(self):
        if self.domain_kind == "square":
            return unit_square(self.d)
        return Ball(center=(0.5,) * self.d, radius=0.5)


@dataclass(frozen=True)
class KGrid:
    """Pairs (x, y) on a uniform sub-grid of D with |x-y|_2 >= eps and
    boundary distance >= delta at both endpoints."""

    pairs: np.ndarray   # (m, 2, d)
    eps: float
    delta: float

    def __len__(self):
        return self.pairs.shape[0]


def build_kgrid(domain, eps: float, delta: float, grid: int) -> KGrid:
    if not 0.0 < eps < delta:
        raise env.ParameterError("need 0 < eps < delta")
    d = domain.dim
    axes = [np.arange(1, grid) / grid] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    # tiny relative slack so grid points landing exactly on the
    # constraint are not lost to float rounding
    eps_eff = eps * (1.0 - 1e-9)
    delta_eff = delta * (1.0 - 1e-9)
    keep = domain.contains(pts) & (domain.boundary_distance(pts) >= delta_eff)
    pts = pts[keep]
    pairs = []
    for i in range(pts.shape[0]):
        for j in range(i + 1, pts.shape[0]):
            if np.linalg.norm(pts[i] - pts[j]) >= eps_eff:
                pairs.append((pts[i], pts[j]))
    if not pairs:
        raise env.ParameterError("K-grid is empty; lower eps/delta or raise grid")
    arr = np.array(pairs)
    assert (np.linalg.norm(arr[:, 0] - arr[:, 1], axis=1) >= eps_eff).all()
    assert (domain.boundary_distance(arr[:, 0]) >= delta_eff).all()
    assert (domain.boundary_distance(arr[:, 1]) >= delta_eff).all()
    return KGrid(pairs=arr, eps=eps, delta=delta)


# ---------------------------------------------------------------------------
# shared helpers


def _ensure_out(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _write_manifest(cfg: ExperimentConfig, name: str, extra: dict) -> str:
    payload = {
        "version": __version__,
        "experiment": name,
        "law": cfg.law.describe(),
        "seed": cfg.seed,
        "n_ladder": list(cfg.n_ladder),
        "replicas": cfg.replicas,
    }
    payload.update(extra)
    path = os.path.join(cfg.out, f"{name}_manifest.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _resolve_theta(cfg: ExperimentConfig) -> Tuple[float, str]:
    if cfg.theta is not None:
        return float(cfg.theta), "config"
    kind = cfg.law.kind
    base = cfg.law.base.kind if kind == "line_correlated" else kind
    if base in ("constant", "exponential", "uniform", "pareto_inverse"):
        return 1.0, "full-lattice (law has no atom at zero)"
    est, se = cl.theta_estimate(cfg.law, (32,) * cfg.d, replicas=20,
                                seed=cfg.seed + 900_000)
    return est, f"estimated on 32^d x 20 (se {se:.4f})"


def _resolve_sigma2(cfg: ExperimentConfig) -> Tuple[np.ndarray, str]:
    if cfg.sigma2 is not None:
        return float(cfg.sigma2) * np.eye(cfg.d), "config"
    if cfg.law.kind == "constant":
        c = cfg.law.c
        return 2.0 * c * np.eye(cfg.d), "exact homogeneous: 2 c I"
    fld = env.generate(cfg.law, (64,) * cfg.d, seed=cfg.seed + 800_000,
                       boundary="torus")
    cg = cl.largest_component(fld)
    est = walk.estimate_sigma(cg, n=50, t=1.0,
                              replicas=min(cfg.replicas, 50_000),
                              seed=cfg.seed + 800_001)
    s2 = float(np.diag(est.sigma2).mean()) * np.eye(cfg.d)
    return s2, (f"estimated on 64^d torus, n=50, t=1,"
                f" {est.replicas} replicas (isotropized)")


def _scaled_system(cfg: ExperimentConfig, n: int, seed: int):
    """Field on the (n+1)^d box, largest component, Dirichlet system on nD."""
    fld = env.generate(cfg.law, (n + 1,) * cfg.d, seed=seed)
    cg = cl.largest_component(fld)
    sysd = dr.assemble(cg, domain=cfg.domain(), n=n)
    return cg, sysd


def _lattice_green_at_pairs(cg, sysd, kgrid: KGrid, n: int,
                            tol: float) -> np.ndarray:
    """Solved Green values at projected K-grid pairs."""
    m = len(kgrid)
    xs = np.array([sysd.interior_index(cg.vertex_id(cl.project(cg, p, n)))
                   for p in kgrid.pairs[:, 0]])
    ys = np.array([sysd.interior_index(cg.vertex_id(cl.project(cg, p, n)))
                   for p in kgrid.pairs[:, 1]])
    if sysd.size <= dr.DENSE_CAP:
        G = dr.green_matrix(sysd)
        return G[xs, ys]
    out = np.empty(m)
    for src in np.unique(xs):
        col = dr.green_column(sysd, int(src), tol=tol)
        sel = xs == src
        out[sel] = col.values[ys[sel]]
    return out


def _continuum_green_at_pairs(spec: co.ContinuumGreenSpec,
                              kgrid: KGrid, tol: float) -> np.ndarray:
    if isinstance(spec.domain, Rectangle):
        return co.green_rectangle_many(spec, kgrid.pairs[:, 0],
                                       kgrid.pairs[:, 1], tol=tol)
    return np.array([co.green_ball(spec, x, y)
                     for x, y in kgrid.pairs])


def product_bump(pts: np.ndarray) -> np.ndarray:
    """Smooth product bump on the unit cube, vanishing at the boundary."""
    pts = np.atleast_2d(pts)
    return np.prod(np.sin(math.pi * pts) ** 2, axis=1)


# ---------------------------------------------------------------------------
# experiments


def figure1(cfg: ExperimentConfig):
    """Three field samples (one draw each) from one master seed: homogeneous,
    i.i.d. exponential, and line-correlated exponential conductances."""
    _ensure_out(cfg)
    size = cfg.size
    laws = [("constant", env.constant(1.0)),
            ("exp_iid", env.exponential(1.0)),
            ("exp_line", env.line_correlated(env.exponential(1.0), axis=0))]
    panels = []
    for name, law in laws:
        fld = env.generate(law, (size + 1, size + 1), seed=cfg.seed)
        cg = cl.largest_component(fld)
        inner = np.logical_and((cg.coords >= 1).all(axis=1),
                               (cg.coords <= size - 1).all(axis=1))
        sysd = dr.assemble(cg, interior_sites=inner)
        ens = dr.sample_dgff(sysd, 1, seed=cfg.seed)
        grid = np.zeros((size + 1, size + 1))
        coords = sysd.interior_coords()
        grid[coords[:, 0], coords[:, 1]] = ens.samples[0]
        panels.append((name, grid))
        rows = [(int(c[0]), int(c[1]), float(v))
                for c, v in zip(coords, ens.samples[0])]
        _write_csv(os.path.join(cfg.out, f"figure1_{name}.csv"),
                   ("x1", "x2", "phi"), rows)
    vmax = max(np.abs(g).max() for _, g in panels)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, (name, grid) in zip(axes, panels):
        im = ax.imshow(grid.T, origin="lower", cmap="RdBu_r",
                       vmin=-vmax, vmax=vmax)
        ax.set_title(name)
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.savefig(os.path.join(cfg.out, "figure1.svg"),
                metadata={"Date": None})
    plt.close(fig)
    center = [float(g[size // 2, size // 2]) for _, g in panels]
    return _write_manifest(cfg, "figure1", {
        "panels": [n for n, _ in panels],
        "shared_scale": float(vmax),
        "center_values": center,
    })


def lclt_experiment(cfg: ExperimentConfig):
    """Pointwise Green comparison over the K-grid along the n-ladder."""
    _ensure_out(cfg)
    theta, theta_src = _resolve_theta(cfg)
    sigma2, sigma_src = _resolve_sigma2(cfg)
    spec = co.spec_for(cfg.domain(), sigma2)
    kgrid = build_kgrid(cfg.domain(), cfg.eps, cfg.delta, cfg.grid)
    ref = _continuum_green_at_pairs(spec, kgrid, cfg.tol) / theta
    rows = []
    for n in cfg.n_ladder:
        cg, sysd = _scaled_system(cfg, n, cfg.seed)
        lat = n ** (cfg.d - 2) * _lattice_green_at_pairs(
            cg, sysd, kgrid, n, cfg.tol)
        err = np.abs(lat - ref)
        rel = err / np.abs(ref)
        rows.append((n, len(kgrid), float(err.max()), float(err.mean()),
                     float(rel.max()), float(rel.mean())))
    _write_csv(os.path.join(cfg.out, "lclt.csv"),
               ("n", "pairs", "sup_abs", "mean_abs", "sup_rel", "mean_rel"),
               rows)
    _plot_trend(cfg, "lclt", [r[0] for r in rows], [r[4] for r in rows],
                "sup relative error")
    return _write_manifest(cfg, "lclt", {
        "theta": theta, "theta_provenance": theta_src,
        "sigma2": np.diag(sigma2).tolist(), "sigma2_provenance": sigma_src,
        "pairs": len(kgrid), "eps": cfg.eps, "delta": cfg.delta,
        "sup_rel_final": rows[-1][4],
    })


def covariance_scaling_experiment(cfg: ExperimentConfig):
    """Same comparison with empirical field covariances instead of solves."""
    _ensure_out(cfg)
    theta, theta_src = _resolve_theta(cfg)
    sigma2, sigma_src = _resolve_sigma2(cfg)
    spec = co.spec_for(cfg.domain(), sigma2)
    kgrid = build_kgrid(cfg.domain(), cfg.eps, cfg.delta, cfg.grid)
    ref = _continuum_green_at_pairs(spec, kgrid, cfg.tol) / theta
    rows = []
    for n in cfg.n_ladder:
        cg, sysd = _scaled_system(cfg, n, cfg.seed)
        solved = _lattice_green_at_pairs(cg, sysd, kgrid, n, cfg.tol)
        k = cfg.replicas
        ens = dr.sample_dgff(sysd, k, seed=cfg.seed + n)
        xs = np.array([sysd.interior_index(cg.vertex_id(cl.project(cg, p, n)))
                       for p in kgrid.pairs[:, 0]])
        ys = np.array([sysd.interior_index(cg.vertex_id(cl.project(cg, p, n)))
                       for p in kgrid.pairs[:, 1]])
        a = ens.samples[:, xs]
        b = ens.samples[:, ys]
        emp = (a * b).mean(axis=0) - a.mean(axis=0) * b.mean(axis=0)
        gxx = ens.samples[:, xs].var(axis=0)
        gyy = ens.samples[:, ys].var(axis=0)
        se = np.sqrt((gxx * gyy + emp ** 2) / k)
        z = (emp - solved) / se
        scaled = n ** (cfg.d - 2) * emp
        err = np.abs(scaled - ref)
        for i in range(len(kgrid)):
            rows.append((n, i, float(emp[i]), float(solved[i]), float(se[i]),
                         float(z[i]), float(scaled[i]), float(ref[i]),
                         float(err[i])))
    _write_csv(os.path.join(cfg.out, "cov_scale.csv"),
               ("n", "pair", "empirical", "solved", "se", "z",
                "scaled", "limit", "abs_err"), rows)
    zs = np.array([r[5] for r in rows])
    return _write_manifest(cfg, "cov_scale", {
        "theta": theta, "theta_provenance": theta_src,
        "sigma2": np.diag(sigma2).tolist(), "sigma2_provenance": sigma_src,
        "pairs": len(kgrid), "samples_per_n": cfg.replicas,
        "fraction_within_4se": float((np.abs(zs) <= 4).mean()),
    })


def variance_limit_experiment(cfg: ExperimentConfig,
                              f: Callable = product_bump):
    """Exact functional variance per n against the continuum limit."""
    _ensure_out(cfg)
    theta, theta_src = _resolve_theta(cfg)
    sigma2, sigma_src = _resolve_sigma2(cfg)
    spec = co.spec_for(cfg.domain(), sigma2)
    limit = co.sigma_sq_f(spec, f, theta=theta, tol=1e-4)
    rows = []
    for n in cfg.n_ladder:
        cg, sysd = _scaled_system(cfg, n, cfg.seed)
        var = dr.variance_phi_exact(sysd, f, n, tol=cfg.tol)
        rows.append((n, float(var), float(limit), float(var / limit)))
    _write_csv(os.path.join(cfg.out, "var_limit.csv"),
               ("n", "variance", "limit", "ratio"), rows)
    return _write_manifest(cfg, "var_limit", {
        "theta": theta, "theta_provenance": theta_src,
        "sigma2": np.diag(sigma2).tolist(), "sigma2_provenance": sigma_src,
        "limit": float(limit), "final_ratio": rows[-1][3],
    })


def _ondiag_values(cfg: ExperimentConfig, ladder: Sequence[int]):
    vals = []
    for n in ladder:
        ext = 2 * n + 3
        fld = env.generate(cfg.law, (ext,) * cfg.d, seed=cfg.seed)
        cg = cl.largest_component(fld)
        center = (n + 1,) * cfg.d
        if not cg.has_site(center):
            raise env.DegenerateEnvironmentError(
                "box center is not in the largest component")
        mask = np.zeros(len(cg), dtype=bool)
        mask[cl.ball(cg, center, n)] = True
        sysd = dr.assemble(cg, interior_sites=mask)
        col = dr.green_column(sysd, center, tol=min(cfg.tol, 1e-10))
        vals.append(float(col.values[col.source]))
    return vals


def ondiag2d_experiment(cfg: ExperimentConfig):
    """On-diagonal Green at the center of chemical balls vs log n."""
    if cfg.d != 2:
        raise env.ParameterError("on-diagonal growth experiment needs d = 2")
    _ensure_out(cfg)
    ladder = cfg.n_ladder
    vals = _ondiag_values(cfg, ladder)
    logs = np.log(np.asarray(ladder, dtype=float))
    slope, intercept = np.polyfit(logs, vals, 1)
    mean_mu = 2.0 * cfg.d * cfg.law.mean() if cfg.law.mean() else None
    sigma2, sigma_src = _resolve_sigma2(cfg)
    formula = co.bar_g(sigma2, mean_mu) if mean_mu else None
    oracle = co.homogeneous_ondiag_coefficient(2)
    rows = [(n, float(np.log(n)), v) for n, v in zip(ladder, vals)]
    _write_csv(os.path.join(cfg.out, "ondiag2d.csv"),
               ("n", "log_n", "g_center"), rows)
    _plot_trend(cfg, "ondiag2d", list(logs), vals, "g(0,0)", xlabel="log n")
    extra = {
        "slope": float(slope), "intercept": float(intercept),
        "oracle_coefficient": oracle,
        "slope_vs_oracle_rel": float(abs(slope / oracle - 1.0)),
        "sigma2_provenance": sigma_src,
    }
    if formula is not None:
        extra["bar_g_formula"] = float(formula)
        extra["formula_discrepancy_flag"] = bool(
            abs(slope / formula - 1.0) > 0.25)
    return _write_manifest(cfg, "ondiag2d", extra)


def exit_bound_experiment(cfg: ExperimentConfig):
    """max_z E_z[exit] / (||nu||_q n^2) along the ladder."""
    _ensure_out(cfg)
    if cfg.q <= 0:
        raise env.ParameterError("q must be positive")
    rows = []
    for n in cfg.n_ladder:
        ext = 2 * n + 3
        fld = env.generate(cfg.law, (ext,) * cfg.d, seed=cfg.seed)
        cg = cl.largest_component(fld)
        center = (n + 1,) * cfg.d
        if not cg.has_site(center):
            raise env.DegenerateEnvironmentError(
                "box center is not in the largest component")
        ball_ids = cl.ball(cg, center, n)
        mask = np.zeros(len(cg), dtype=bool)
        mask[ball_ids] = True
        sysd = dr.assemble(cg, interior_sites=mask)
        tau = dr.mean_exit_time(sysd, tol=min(cfg.tol, 1e-10))
        nu_norm = float(np.mean(cg.nu[ball_ids] ** cfg.q) ** (1.0 / cfg.q))
        ratio = float(tau.max() / (nu_norm * n * n))
        rows.append((n, float(tau.max()), nu_norm, ratio))
    _write_csv(os.path.join(cfg.out, "exit_bound.csv"),
               ("n", "max_exit", "nu_norm", "ratio"), rows)
    ratios = np.array([r[3] for r in rows])
    return _write_manifest(cfg, "exit_bound", {
        "q": cfg.q,
        "ratio_spread": float(ratios.max() / ratios.min() - 1.0),
        "empirical_c4": float(ratios.max()),
    })


def max2d_experiment(cfg: ExperimentConfig):
    """Distribution of the centered field maximum; exploratory, no gate.

    Both centerings are emitted: one from the empirically fitted
    on-diagonal slope, one from the closed-form coefficient.
    """
    if cfg.d != 2:
        raise env.ParameterError("maximum experiment needs d = 2")
    _ensure_out(cfg)
    fit_ladder = tuple(min(n, 64) for n in (16, 32, 64))
    vals = _ondiag_values(cfg, fit_ladder)
    slope_emp = float(np.polyfit(np.log(fit_ladder), vals, 1)[0])
    mean_mu = 2.0 * cfg.d * cfg.law.mean() if cfg.law.mean() else None
    sigma2, _ = _resolve_sigma2(cfg)
    formula = co.bar_g(sigma2, mean_mu) if mean_mu else slope_emp
    rows = []
    medians = {}
    for n in cfg.n_ladder:
        side = 2 * n + 1
        fld = env.generate(cfg.law, (side, side), seed=cfg.seed)
        cg = cl.largest_component(fld)
        inner = np.logical_and((cg.coords >= 1).all(axis=1),
                               (cg.coords <= side - 2).all(axis=1))
        sysd = dr.assemble(cg, interior_sites=inner)
        if sysd.size > dr.DENSE_CAP:
            raise dr.SizeError(
                f"interior {sysd.size} exceeds the dense sampling cap;"
                " shrink the ladder")
        ens = dr.sample_dgff(sysd, cfg.replicas, seed=cfg.seed + n)
        M = np.maximum(ens.samples.max(axis=1), 0.0)
        mn_emp = co.centering_m_n(slope_emp, n)
        mn_form = co.centering_m_n(formula, n)
        for i, m in enumerate(M):
            rows.append((n, i, float(m), float(m - mn_emp),
                         float(m - mn_form)))
        medians[n] = float(np.median(M) - mn_emp)
    _write_csv(os.path.join(cfg.out, "max2d.csv"),
               ("n", "sample", "max", "centered_empirical",
                "centered_formula"), rows)
    _plot_hist(cfg, "max2d",
               np.array([r[3] for r in rows if r[0] == cfg.n_ladder[-1]]),
               "M_n minus empirical centering")
    return _write_manifest(cfg, "max2d", {
        "bar_g_empirical_slope": slope_emp,
        "bar_g_formula": float(formula),
        "median_centered_by_n": medians,
    })


def qfclt_experiment(cfg: ExperimentConfig):
    """Diffusivity table along the ladder plus an endpoint histogram."""
    _ensure_out(cfg)
    rows = []
    last = None
    for n in cfg.n_ladder:
        box = cfg.box if cfg.box is not None else (2 * n,) * cfg.d
        fld = env.generate(cfg.law, box, seed=cfg.seed, boundary="torus")
        cg = cl.largest_component(fld)
        est = walk.estimate_sigma(cg, n=n, t=cfg.t, replicas=cfg.replicas,
                                  seed=cfg.seed + n)
        for i in range(cfg.d):
            for j in range(cfg.d):
                rows.append((n, i, j, float(est.sigma2[i, j]),
                             float(est.se[i, j])))
        last = (cg, est, n)
    _write_csv(os.path.join(cfg.out, "qfclt_sigma.csv"),
               ("n", "i", "j", "sigma2", "se"), rows)
    cg, est, n = last
    pts = walk.endpoint_sample(cg, n=n, t=cfg.t,
                               replicas=min(cfg.replicas, 20_000),
                               seed=cfg.seed + 7)
    chi2_p = _chi2_marginal(pts[:, 0], var=cfg.t * float(est.sigma2[0, 0]))
    _plot_endpoint_hist(cfg, pts, est, cfg.t)
    return _write_manifest(cfg, "qfclt", {
        "final_sigma2": est.sigma2.tolist(),
        "final_se": est.se.tolist(),
        "chi2_marginal_pvalue": chi2_p,
    })


def _chi2_marginal(x: np.ndarray, var: float) -> float:
    from scipy import stats
    sd = math.sqrt(var)
    edges = np.concatenate(([-np.inf], np.linspace(-3 * sd, 3 * sd, 13),
                            [np.inf]))
    obs, _ = np.histogram(x, bins=edges)
    probs = np.diff(stats.norm.cdf(edges / sd))
    exp = probs * x.size
    keep = exp >= 5
    stat = ((obs[keep] - exp[keep]) ** 2 / exp[keep]).sum()
    stat += (obs[~keep].sum() - exp[~keep].sum()) ** 2 / max(
        exp[~keep].sum(), 1e-12)
    dof = keep.sum() - 1 + (1 if (~keep).any() else 0)
    return float(stats.chi2.sf(stat, dof))


# ---------------------------------------------------------------------------
# plotting (static SVG only)


def _plot_trend(cfg, name, xs, ys, ylabel, xlabel="n"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs, ys, "o-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(os.path.join(cfg.out, f"{name}.svg"), metadata={"Date": None})
    plt.close(fig)


def _plot_hist(cfg, name, values, xlabel):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(values, bins=40, density=True)
    ax.set_xlabel(xlabel)
    fig.tight_layout()
    fig.savefig(os.path.join(cfg.out, f"{name}.svg"), metadata={"Date": None})
    plt.close(fig)


def _plot_endpoint_hist(cfg, pts, est, t):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(pts[:, 0], bins=50, density=True, alpha=0.7)
    sd = math.sqrt(t * float(est.sigma2[0, 0]))
    xs = np.linspace(pts[:, 0].min(), pts[:, 0].max(), 200)
    ax.plot(xs, np.exp(-xs ** 2 / (2 * sd * sd)) / (sd * math.sqrt(2 * math.pi)))
    ax.set_xlabel("scaled displacement, first axis")
    fig.tight_layout()
    fig.savefig(os.path.join(cfg.out, "qfclt_endpoints.svg"),
                metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# small utility subcommands


def run_gen(cfg: ExperimentConfig):
    _ensure_out(cfg)
    box = cfg.box if cfg.box is not None else (cfg.size,) * cfg.d
    fld = env.generate(cfg.law, box, seed=cfg.seed)
    env.save_field(fld, os.path.join(cfg.out, "field.bin"))
    env.export_csv(fld, os.path.join(cfg.out, "field.csv"))
    rep = env.moment_report(fld, p=1.0, q=cfg.q, theta=0.5)
    return _write_manifest(cfg, "gen", {
        "box": list(box), "mean_weight": rep.mean_omega_p,
        "mean_inverse_q": rep.mean_inv_omega_q})


def run_theta(cfg: ExperimentConfig):
    _ensure_out(cfg)
    box = cfg.box if cfg.box is not None else (32,) * cfg.d
    est, se = cl.theta_estimate(cfg.law, box, replicas=cfg.replicas,
                                seed=cfg.seed)
    _write_csv(os.path.join(cfg.out, "theta.csv"),
               ("theta", "se", "replicas"), [(float(est), float(se),
                                              cfg.replicas)])
    return _write_manifest(cfg, "theta", {"theta": est, "se": se})


def run_green(cfg: ExperimentConfig):
    _ensure_out(cfg)
    n = cfg.n_ladder[-1]
    cg, sysd = _scaled_system(cfg, n, cfg.seed)
    center = cl.project(cg, (0.5,) * cfg.d, n)
    col = dr.green_column(sysd, tuple(center), tol=cfg.tol)
    dr.export_interior_csv(sysd, col.values,
                           os.path.join(cfg.out, "green.csv"))
    return _write_manifest(cfg, "green", {
        "n": n, "source": [int(v) for v in center],
        "residual": col.residual})


def run_sample(cfg: ExperimentConfig):
    _ensure_out(cfg)
    n = cfg.n_ladder[-1]
    cg, sysd = _scaled_system(cfg, n, cfg.seed)
    k = min(cfg.replicas, 4096)
    ens = dr.sample_dgff(sysd, k, seed=cfg.seed)
    dr.export_interior_csv(sysd, ens.samples[0],
                           os.path.join(cfg.out, "sample0.csv"))
    dr.export_interior_csv(sysd, ens.samples.var(axis=0, ddof=1),
                           os.path.join(cfg.out, "sample_var.csv"))
    return _write_manifest(cfg, "sample", {"n": n, "k": k})


def run_walk(cfg: ExperimentConfig):
    _ensure_out(cfg)
    box = cfg.box if cfg.box is not None else (cfg.size,) * cfg.d
    fld = env.generate(cfg.law, box, seed=cfg.seed)
    cg = cl.largest_component(fld)
    x0 = tuple(np.asarray(box) // 2)
    if not cg.has_site(x0):
        x0 = tuple(cg.coords[0])
    traj = walk.simulate(cg, x0, horizon=cfg.t * cfg.size ** 2,
                         seed=cfg.seed)
    traj.export_csv(os.path.join(cfg.out, "trajectory.csv"))
    return _write_manifest(cfg, "walk", {
        "start": list(x0), "jumps": len(traj.times) - 1})


def run_sigma(cfg: ExperimentConfig):
    _ensure_out(cfg)
    box = cfg.box if cfg.box is not None else (64,) * cfg.d
    fld = env.generate(cfg.law, box, seed=cfg.seed, boundary="torus")
    cg = cl.largest_component(fld)
    est = walk.estimate_sigma(cg, n=cfg.n_ladder[-1], t=cfg.t,
                              replicas=cfg.replicas, seed=cfg.seed)
    est.export_csv(os.path.join(cfg.out, "sigma.csv"))
    return _write_manifest(cfg, "sigma", {
        "sigma2": est.sigma2.tolist(), "se": est.se.tolist()})


# ---------------------------------------------------------------------------
# CLI

_EXPERIMENTS = {
    "gen": run_gen,
    "theta": run_theta,
    "green": run_green,
    "sample": run_sample,
    "walk": run_walk,
    "sigma": run_sigma,
    "lclt": lclt_experiment,
    "cov-scale": covariance_scaling_experiment,
    "var-limit": variance_limit_experiment,
    "ondiag2d": ondiag2d_experiment,
    "exit-bound": exit_bound_experiment,
    "max2d": max2d_experiment,
    "qfclt": qfclt_experiment,
    "figure1": figure1,
}


def _parse_box(text: str) -> Tuple[int, ...]:
    parts = text.replace("x", ",").split(",")
    return tuple(int(p) for p in parts if p)


def _parse_ladder(text: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rcgff",
        description="Gaussian free fields on random conductance clusters:"
                    " generation, solvers, walks, and scaling experiments.")
    p.add_argument("experiment", choices=sorted(_EXPERIMENTS))
    p.add_argument("--law", default="constant(1)",
                   help="conductance law, e.g. 'exponential(1)',"
                        " 'bernoulli(0.7)', 'line_correlated(exponential(1),0)'")
    p.add_argument("--box", default=None, help="box sides, e.g. 50,50 or 50x50")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", choices=("square", "ball"), default="square")
    p.add_argument("--n-ladder", default="16,32,64")
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--replicas", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--size", type=int, default=50)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None,
                   help="key=value file; entries override command-line flags")
    return p


def _read_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise env.ParameterError(f"bad config line: {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


_CONVERTERS = {
    "law": env.parse_law, "box": _parse_box, "n_ladder": _parse_ladder,
    "d": int, "seed": int, "grid": int, "replicas": int, "size": int,
    "eps": float, "delta": float, "tol": float, "q": float, "t": float,
    "theta": float, "sigma2": float,
    "domain": str, "out": str, "experiment": str,
}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    raw = {
        "experiment": args.experiment, "law": args.law, "box": args.box,
        "d": args.d, "seed": args.seed, "domain": args.domain,
        "n_ladder": args.n_ladder, "eps": args.eps, "delta": args.delta,
        "grid": args.grid, "replicas": args.replicas, "tol": args.tol,
        "q": args.q, "t": args.t, "size": args.size, "theta": args.theta,
        "sigma2": args.sigma2, "out": args.out,
    }
    if args.config:
        raw.update(_read_config_file(args.config))
    kwargs = {}
    for key, val in raw.items():
        if val is None:
            continue
        conv = _CONVERTERS.get(key, str)
        kwargs[key] = conv(val) if isinstance(val, str) else val
    kwargs["domain_kind"] = kwargs.pop("domain", "square")
    return ExperimentConfig(**kwargs)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = config_from_args(args)
        manifest = _EXPERIMENTS[cfg.experiment](cfg)
        print(f"wrote {manifest}")
        return 0
    except env.DegenerateEnvironmentError as exc:
        print(f"degenerate environment: {exc}", file=sys.stderr)
        return 4
    except (dr.SolverError, dr.SizeError, co.AccuracyError,
            co.SingularityError, walk.DynamicsError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (env.ParameterError, env.DomainError, co.ParameterError,
            co.UnsupportedError, cl.MembershipError, cl.GeometryError,
            ValueError, OSError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
