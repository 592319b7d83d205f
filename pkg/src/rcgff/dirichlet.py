"""Dirichlet-restricted weighted Laplacians: Green's functions, mean exit
times, Gaussian field sampling, and the rescaled field functional.

The operator is A = -L restricted to the interior with zero exterior
condition: row x has diagonal mu(x) (the FULL incident weight, including
edges to exterior neighbors) and off-diagonal -w(x, y) for interior
neighbors y.  A is symmetric positive definite, and the field with density
exp(-1/2 sum_e w(e) (phi_x - phi_y)^2), pinned to 0 outside, is the
centered Gaussian with precision matrix A and covariance A^{-1} = G.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import cg as sparse_cg

from .cluster import ClusterGraph
from .domains import scaled_interior_mask
from .environment import DomainError
from .rng import substream

DENSE_CAP = 4096


class SolverError(RuntimeError):
    """Iterative solve failed to reach tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class SizeError(ValueError):
    """Interior too large for a dense factorization."""


@dataclass
class DirichletSystem:
    cluster: ClusterGraph
    interior_ids: np.ndarray       # cluster vertex ids, lexicographic site order
    operator: csr_matrix           # A = -L restricted to interior
    scale: Optional[int] = None    # n when the domain is a scaled continuum set
    domain: object = None
    origin: Optional[np.ndarray] = None
    _chol: object = None
    _interior_pos: Optional[np.ndarray] = None  # cluster id -> interior index

    @property
    def size(self) -> int:
        return self.interior_ids.size

    def interior_coords(self) -> np.ndarray:
        return self.cluster.coords[self.interior_ids]

    def interior_index(self, vid: int) -> int:
        if self._interior_pos is None:
            pos = -np.ones(len(self.cluster), dtype=int)
            pos[self.interior_ids] = np.arange(self.size)
            self._interior_pos = pos
        k = int(self._interior_pos[vid])
        if k < 0:
            raise DomainError("vertex is not interior")
        return k

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.cluster), dtype=bool)
        mask[self.interior_ids] = True
        return mask

    def cholesky(self):
        if self._chol is None:
            if self.size > DENSE_CAP:
                raise SizeError(
                    f"interior size {self.size} exceeds dense cap {DENSE_CAP};"
                    " use green_column instead")
            self._chol = cho_factor(self.operator.toarray(), lower=True)
        return self._chol


def assemble(cg: ClusterGraph, domain=None, n: Optional[int] = None,
             origin=None, interior_sites=None) -> DirichletSystem:
    """Build the Dirichlet system on Lambda ∩ cluster.

    The interior is either ``interior_sites`` (iterable of lattice sites or
    a boolean mask over cluster vertices) or the scaled continuum set
    {z : (z - origin)/n in domain}.
    """
    if interior_sites is not None:
        if isinstance(interior_sites, np.ndarray) and interior_sites.dtype == bool:
            mask = interior_sites
        else:
            mask = np.zeros(len(cg), dtype=bool)
            for s in interior_sites:
                if np.ndim(s) == 0:
                    mask[int(s)] = True
                else:
                    mask[cg.vertex_id(s)] = True
    else:
        if domain is None or n is None:
            raise DomainError("assemble needs a domain + scale or explicit sites")
        mask = scaled_interior_mask(domain, cg.coords, n, origin)
    ids = np.flatnonzero(mask)
    if ids.size == 0:
        raise DomainError("empty interior")
    # deterministic interior ordering: lexicographic in site coordinates
    order = np.lexsort(cg.coords[ids].T[::-1])
    ids = ids[order]

    pos = -np.ones(len(cg), dtype=int)
    pos[ids] = np.arange(ids.size)
    rows, cols, vals = [], [], []
    for k, v in enumerate(ids):
        lo, hi = cg.indptr[v], cg.indptr[v + 1]
        rows.append(np.full(hi - lo + 1, k))
        cols.append(np.concatenate(([k], pos[cg.nbr[lo:hi]])))
        vals.append(np.concatenate(([cg.mu[v]], -cg.wts[lo:hi])))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = cols >= 0  # exterior neighbors enter only through the diagonal mu
    A = csr_matrix((vals[keep], (rows[keep], cols[keep])),
                   shape=(ids.size, ids.size))
    A.sum_duplicates()
    return DirichletSystem(cluster=cg, interior_ids=ids, operator=A,
                           scale=n, domain=domain,
                           origin=None if origin is None else np.asarray(origin))


def _solve(sys: DirichletSystem, b: np.ndarray, tol: float = 1e-10):
    """Solve A x = b; dense Cholesky under the cap, else Jacobi-CG."""
    A = sys.operator
    if sys.size <= DENSE_CAP:
        x = cho_solve(sys.cholesky(), b)
        res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
        return x, res
    diag = A.diagonal()
    from scipy.sparse import diags
    M = diags(1.0 / diag)
    maxiter = int(20 * np.sqrt(sys.size)) + 200
    x, info = sparse_cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=maxiter)
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    if info != 0 or res > 10 * tol:
        raise SolverError(f"conjugate gradients stopped with info={info}",
                          residual=res)
    return x, res


@dataclass
class GreenColumn:
    source: int               # interior index of y
    values: np.ndarray        # g(x, y) over interior indices x
    residual: float


def green_column(sys: DirichletSystem, y, tol: float = 1e-10) -> GreenColumn:
    """Solve A g = e_y: the Green's function column with source y.

    ``y`` may be an interior index (int) or a lattice site.
    """
    if np.ndim(y) == 0:
        k = int(y)
    else:
        k = sys.interior_index(sys.cluster.vertex_id(y))
    b = np.zeros(sys.size)
    b[k] = 1.0
    x, res = _solve(sys, b, tol)
    return GreenColumn(source=k, values=x, residual=res)


def green_matrix(sys: DirichletSystem) -> np.ndarray:
    """Full interior Green matrix A^{-1} by dense Cholesky."""
    if sys.size > DENSE_CAP:
        raise SizeError(f"interior size {sys.size} exceeds dense cap"
                        f" {DENSE_CAP}; use green_column")
    G = cho_solve(sys.cholesky(), np.eye(sys.size))
    return 0.5 * (G + G.T)


def mean_exit_time(sys: DirichletSystem, tol: float = 1e-10) -> np.ndarray:
    """u with A u = 1: expected exit time of the walk from each site."""
    u, _ = _solve(sys, np.ones(sys.size), tol)
    return u


def dirichlet_energy(cg: ClusterGraph, f: np.ndarray, g: np.ndarray) -> float:
    """sum_e w(e) (grad f)(e) (grad g)(e) over open cluster edges."""
    total = 0.0
    for v in range(len(cg)):
        lo, hi = cg.indptr[v], cg.indptr[v + 1]
        nb = cg.nbr[lo:hi]
        w = cg.wts[lo:hi]
        total += float(np.sum(w * (f[nb] - f[v]) * (g[nb] - g[v])))
    return 0.5 * total  # each edge visited from both endpoints


@dataclass
class FieldEnsemble:
    system: DirichletSystem
    samples: np.ndarray   # (k, interior) field values; exterior is 0
    seed: int

    @property
    def k(self) -> int:
        return self.samples.shape[0]


def sample_dgff(sys: DirichletSystem, k: int, seed: int = 0) -> FieldEnsemble:
    """k exact draws of the field: solve L^T phi = z for standard normal z,
    where A = L L^T, so Cov(phi) = A^{-1} = G."""
    c, lower = sys.cholesky()
    L = np.tril(c) if lower else c.T
    out = np.empty((k, sys.size))
    block = 1024
    for start in range(0, k, block):
        stop = min(start + block, k)
        gen = substream(seed, start)
        z = gen.standard_normal((stop - start, sys.size))
        out[start:stop] = solve_triangular(L, z.T, lower=True, trans="T").T
    return FieldEnsemble(system=sys, samples=out, seed=seed)


def functional_phi(sample: np.ndarray, f: Callable, n: int,
                   sys: DirichletSystem, cell_average: bool = False) -> float:
    """Riemann-sum field functional n^{d/2-1-d} sum_z f(z/n) phi_z.

    ``sample`` is a field vector over the interior.  ``f`` takes an (m, d)
    array of continuum points.  ``cell_average`` replaces point samples by
    midpoint-subdivided cell averages of f.
    """
    d = sys.cluster.dim
    v = _test_vector(f, n, sys, cell_average)
    return float(n ** (d / 2.0 - 1.0 - d) * (v @ sample))


def _test_vector(f, n, sys, cell_average=False):
    pts = sys.interior_coords().astype(float)
    if sys.origin is not None:
        pts = pts - sys.origin
    pts = pts / n
    if not cell_average:
        return np.asarray(f(pts), dtype=float)
    # 2^d-point average over the cell z/n + (-1/2n, 1/2n]^d
    d = pts.shape[1]
    acc = np.zeros(pts.shape[0])
    for corner in range(2 ** d):
        off = np.array([(1 if corner >> i & 1 else -1) for i in range(d)])
        acc += np.asarray(f(pts + off / (4.0 * n)), dtype=float)
    return acc / 2 ** d


def variance_phi_exact(sys: DirichletSystem, f: Callable, n: int,
                       tol: float = 1e-10, cell_average: bool = False) -> float:
    """Var of the field functional as the Green quadratic form
    n^(d-2-2d) v^T A^{-1} v with v_z = f(z/n)."""
    d = sys.cluster.dim
    v = _test_vector(f, n, sys, cell_average)
    w, _ = _solve(sys, v, tol)
    return float(n ** (d - 2.0 - 2.0 * d) * (v @ w))


def export_interior_csv(sys: DirichletSystem, values: np.ndarray, path) -> None:
    """CSV of (site coordinates, value) over the interior ordering."""
    coords = sys.interior_coords()
    with open(path, "w") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(coords.shape[1]))
                 + ",value\n")
        for c, val in zip(coords, values):
            fh.write(",".join(str(int(x)) for x in c) + f",{val!r}\n")
