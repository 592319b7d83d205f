"""Open-cluster geometry: components, chemical distance, balls, boundaries,
regularity diagnostics, cluster density, and the lattice projection."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .environment import (ConductanceField, DegenerateEnvironmentError,
                          LawSpec, generate)


class MembershipError(KeyError):
    """Site not in the cluster."""


class GeometryError(ValueError):
    """Requested radius or margin does not fit inside the box."""


@dataclass
class ClusterGraph:
    """A connected open component of a box as an indexed weighted graph.

    Vertices carry their lattice coordinates; adjacency is CSR-like with
    parallel arrays for the neighbor's id, the edge weight, and the lattice
    step (axis, sign) of the jump, the latter so that torus walks can be
    unwrapped into true displacements.
    """

    coords: np.ndarray          # (m, d) int lattice sites
    box: tuple
    boundary: str
    indptr: np.ndarray          # (m + 1,)
    nbr: np.ndarray             # (n_adj,) neighbor vertex ids
    wts: np.ndarray             # (n_adj,) edge weights, all > 0
    steps: np.ndarray           # (n_adj, d) int jump vectors (unwrapped)
    mu: np.ndarray              # (m,) sum of incident weights
    nu: np.ndarray              # (m,) sum of reciprocal incident weights
    _site_ids: dict = dc_field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._site_ids:
            self._site_ids = {tuple(c): i for i, c in enumerate(self.coords)}

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def vertex_id(self, site) -> int:
        key = tuple(int(v) for v in site)
        if key not in self._site_ids:
            raise MembershipError(f"site {key} not in cluster")
        return self._site_ids[key]

    def has_site(self, site) -> bool:
        return tuple(int(v) for v in site) in self._site_ids

    def neighbors(self, vid: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[vid], self.indptr[vid + 1]
        return self.nbr[lo:hi], self.wts[lo:hi]

    def adjacency_matrix(self) -> csr_matrix:
        m = len(self)
        return csr_matrix((self.wts, self.nbr, self.indptr), shape=(m, m))

    def laplacian_row_apply(self, f: np.ndarray) -> np.ndarray:
        """Apply the generator: (Lf)(x) = sum_y w(x,y)(f(y) - f(x))."""
        return self.adjacency_matrix() @ f - self.mu * f


def _open_edges(fld: ConductanceField):
    """Endpoint index pairs plus weight and step for every open edge."""
    d, box = fld.dim, fld.box
    n = fld.n_sites()
    lin = np.arange(n).reshape(box)
    heads, tails, weights, axes, signsteps = [], [], [], [], []
    mask = fld.edge_mask()
    for i in range(d):
        open_i = mask[i] & (fld.weights[i] > 0)
        src = lin[open_i]
        dst = np.roll(lin, -1, axis=i)[open_i]
        heads.append(src)
        tails.append(dst)
        weights.append(fld.weights[i][open_i])
        axes.append(np.full(src.shape[0], i))
        # step is +e_i regardless of torus wrap
    if not heads:
        return (np.empty(0, int),) * 2 + (np.empty(0),) + (np.empty(0, int),)
    return (np.concatenate(heads), np.concatenate(tails),
            np.concatenate(weights), np.concatenate(axes))


def largest_component(fld: ConductanceField) -> ClusterGraph:
    """Maximum-cardinality open component; ties broken by the component
    containing the lexicographically smallest vertex."""
    d, box = fld.dim, fld.box
    n = fld.n_sites()
    heads, tails, weights, axes = _open_edges(fld)
    if heads.size == 0:
        raise DegenerateEnvironmentError("no open edges")
    adj = csr_matrix((np.ones(heads.size), (heads, tails)), shape=(n, n))
    adj = adj + adj.T
    n_comp, labels = connected_components(adj, directed=False)
    sizes = np.bincount(labels, minlength=n_comp)
    # isolated sites are size-1 components; the giant must contain an edge
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if candidates.size > 1:
        # smallest lexicographic minimal vertex = lowest linear index,
        # since linear order on C-ordered boxes is lexicographic order
        first_member = np.full(n_comp, n, dtype=int)
        for lin_idx in range(n):
            lab = labels[lin_idx]
            if first_member[lab] == n:
                first_member[lab] = lin_idx
        label = candidates[np.argmin(first_member[candidates])]
    else:
        label = candidates[0]
    keep = labels == label
    if best < 2:
        raise DegenerateEnvironmentError("largest component is a single site")

    old_to_new = -np.ones(n, dtype=int)
    old_ids = np.flatnonzero(keep)
    old_to_new[old_ids] = np.arange(old_ids.size)
    coords = np.array(np.unravel_index(old_ids, box)).T

    sel = keep[heads]
    h, t, w, ax = heads[sel], tails[sel], weights[sel], axes[sel]
    # symmetrize: each open edge appears in both adjacency rows
    rows = np.concatenate([old_to_new[h], old_to_new[t]])
    cols = np.concatenate([old_to_new[t], old_to_new[h]])
    ws = np.concatenate([w, w])
    step_axis = np.concatenate([ax, ax])
    step_sign = np.concatenate([np.ones(h.size, int), -np.ones(h.size, int)])

    order = np.lexsort((cols, rows))
    rows, cols, ws = rows[order], cols[order], ws[order]
    step_axis, step_sign = step_axis[order], step_sign[order]
    m = old_ids.size
    indptr = np.zeros(m + 1, dtype=int)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    steps = np.zeros((rows.size, d), dtype=int)
    steps[np.arange(rows.size), step_axis] = step_sign

    mu = np.zeros(m)
    np.add.at(mu, rows, ws)
    nu = np.zeros(m)
    np.add.at(nu, rows, 1.0 / ws)
    return ClusterGraph(coords=coords, box=box, boundary=fld.boundary,
                        indptr=indptr, nbr=cols, wts=ws, steps=steps,
                        mu=mu, nu=nu)


def _bfs_distances(cg: ClusterGraph, source: int,
                   cutoff: Optional[int] = None) -> np.ndarray:
    """Hop distances from ``source``; unreached vertices get -1."""
    dist = np.full(len(cg), -1, dtype=int)
    dist[source] = 0
    frontier = np.array([source])
    r = 0
    while frontier.size:
        if cutoff is not None and r >= cutoff:
            break
        nxt = []
        for v in frontier:
            lo, hi = cg.indptr[v], cg.indptr[v + 1]
            nxt.append(cg.nbr[lo:hi])
        cand = np.unique(np.concatenate(nxt))
        cand = cand[dist[cand] < 0]
        dist[cand] = r + 1
        frontier = cand
        r += 1
    return dist


def chemical_distance(cg: ClusterGraph, x, y) -> int:
    """Graph distance (hop count) along open edges."""
    xi, yi = cg.vertex_id(x), cg.vertex_id(y)
    if xi == yi:
        return 0
    dist = _bfs_distances(cg, xi)
    return int(dist[yi])


def ball(cg: ClusterGraph, x, r: float) -> np.ndarray:
    """Vertex ids of the closed chemical ball of radius floor(r)."""
    xi = cg.vertex_id(x)
    rad = int(np.floor(r))
    if rad <= 0:
        return np.array([xi])
    dist = _bfs_distances(cg, xi, cutoff=rad)
    return np.flatnonzero(dist >= 0)


def relative_boundary(cg: ClusterGraph, A, B) -> list:
    """Open edges {x, y} with x in A and y in B \\ A, each listed once."""
    A = set(int(v) for v in A)
    B = set(int(v) for v in B)
    if not A <= B:
        raise GeometryError("relative boundary requires A subset of B")
    edges = []
    for v in sorted(A):
        lo, hi = cg.indptr[v], cg.indptr[v + 1]
        for u in cg.nbr[lo:hi]:
            u = int(u)
            if u in B and u not in A:
                edges.append((v, u))
    return edges


@dataclass(frozen=True)
class RegularityReport:
    center: tuple
    radius: int
    volume: int
    volume_ok: bool
    c_v: float
    cheeger_lower_estimate: float
    cheeger_upper_estimate: float
    distance_comparison_ok: Optional[bool]
    constants: dict


def regularity_check(cg: ClusterGraph, x, n: int, C_V: float,
                     C_riso: float, C_W: float) -> RegularityReport:
    """Ball-regularity diagnostics.

    Volume regularity C_V n^d <= |B(x, n)| is exact.  The relative
    isoperimetric part is certified two-sided on S = B(x, C_W n): a
    spectral lower bound (normalized-Laplacian gap / 2, Cheeger) and a
    sweep-cut upper bound on min |boundary A| / |A| over |A| <= |S|/2.
    """
    xi = cg.vertex_id(x)
    margin = int(np.ceil(C_W * max(n, 1)))
    site = cg.coords[xi]
    if cg.boundary == "free":
        for i in range(cg.dim):
            if site[i] - margin < 0 or site[i] + margin >= cg.box[i]:
                raise GeometryError(
                    f"ball of radius C_W*n = {margin} leaves the box")
    B = ball(cg, x, n)
    volume = B.size
    volume_ok = C_V * max(n, 1) ** cg.dim <= volume

    S = ball(cg, x, C_W * max(n, 1))
    lower, upper = _expansion_bounds(cg, S)
    return RegularityReport(center=tuple(int(v) for v in site), radius=n,
                            volume=volume, volume_ok=bool(volume_ok),
                            c_v=C_V,
                            cheeger_lower_estimate=lower,
                            cheeger_upper_estimate=upper,
                            distance_comparison_ok=None,
                            constants={"C_V": C_V, "C_riso": C_riso,
                                       "C_W": C_W})


def _expansion_bounds(cg: ClusterGraph, S: np.ndarray):
    """Two-sided bounds on the unit-weight edge expansion of the subgraph S.

    Lower: lambda_2(normalized Laplacian)/2 bounds |dA|/vol(A), and
    vol(A) >= |A| gives |dA|/|A| >= lambda_2/2.  Upper: best Fiedler sweep
    cut with |A| <= |S|/2 and vol(A) <= vol(S)/2 (so the ordering
    lower <= upper is certified).
    """
    m = S.size
    if m < 2:
        return 0.0, 0.0
    local = -np.ones(len(cg), dtype=int)
    local[S] = np.arange(m)
    rows, cols = [], []
    for v in S:
        lo, hi = cg.indptr[v], cg.indptr[v + 1]
        for u in cg.nbr[lo:hi]:
            if local[u] >= 0:
                rows.append(local[v])
                cols.append(local[u])
    rows = np.array(rows)
    cols = np.array(cols)
    adj = np.zeros((m, m))
    adj[rows, cols] = 1.0
    deg = adj.sum(axis=1)
    if (deg == 0).any():
        return 0.0, 0.0
    dinv = 1.0 / np.sqrt(deg)
    nlap = np.eye(m) - dinv[:, None] * adj * dinv[None, :]
    evals, evecs = np.linalg.eigh(nlap)
    lam2 = max(float(evals[1]), 0.0)
    lower = lam2 / 2.0

    fiedler = dinv * evecs[:, 1]
    order = np.argsort(fiedler)
    total_vol = deg.sum()
    upper = np.inf
    inA = np.zeros(m, dtype=bool)
    cut = 0.0
    volA = 0.0
    for k, v in enumerate(order):
        inA[v] = True
        volA += deg[v]
        cut += deg[v] - 2 * adj[v, inA].sum()
        size = k + 1
        if size <= m // 2 and volA <= total_vol / 2 and size > 0:
            upper = min(upper, cut / size)
    if not np.isfinite(upper):
        upper = lower
    return lower, float(max(upper, lower))


def distance_comparison_check(cg: ClusterGraph, n: int, C_d: float,
                              delta: float, n_pairs: int = 10_000,
                              seed: int = 0):
    """Check d(x, y) <= max(C_d |x-y|_inf, n^(1-delta)) over vertex pairs.

    Full check when the pair count is small, otherwise a uniform sample;
    returns (ok, worst_pair, sampled).
    """
    m = len(cg)
    floor_val = n ** (1.0 - delta)
    full = m * (m - 1) // 2 <= n_pairs
    if full:
        sources = np.arange(m)
    else:
        rng = np.random.default_rng(seed)
        sources = np.unique(rng.integers(0, m, size=max(1, n_pairs // m + 1)))
    worst = None
    worst_excess = -np.inf
    ok = True
    rng = np.random.default_rng(seed + 1)
    for s in sources:
        dist = _bfs_distances(cg, int(s))
        if full:
            targets = np.arange(m)
        else:
            targets = rng.integers(0, m, size=min(m, n_pairs // len(sources) + 1))
        diff = np.abs(cg.coords[targets] - cg.coords[s]).max(axis=1)
        bound = np.maximum(C_d * diff, floor_val)
        excess = dist[targets] - bound
        k = int(np.argmax(excess))
        if excess[k] > worst_excess:
            worst_excess = float(excess[k])
            worst = (tuple(cg.coords[s]), tuple(cg.coords[targets[k]]),
                     int(dist[targets[k]]), float(bound[k]))
        if (excess > 0).any():
            ok = False
    return ok, worst, (not full)


def theta_estimate(law: LawSpec, box: Sequence[int], replicas: int,
                   seed: int = 0):
    """Mean fraction of box sites in the largest component, with SE."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    fractions = []
    for r in range(replicas):
        fld = generate(law, box, seed=seed + r)
        try:
            cg = largest_component(fld)
            fractions.append(len(cg) / fld.n_sites())
        except DegenerateEnvironmentError:
            fractions.append(0.0)
    fractions = np.array(fractions)
    est = float(fractions.mean())
    se = float(fractions.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
    return est, se


def project(cg: ClusterGraph, x: Sequence[float], n: int,
            origin: Optional[Sequence[int]] = None) -> np.ndarray:
    """Closest cluster site to n*x in Euclidean norm, lexicographic ties.

    ``origin`` maps continuum coordinates to box coordinates: the target
    point is origin + n*x.
    """
    target = np.asarray(x, dtype=float) * n
    if origin is not None:
        target = target + np.asarray(origin, dtype=float)
    d2 = ((cg.coords - target) ** 2).sum(axis=1)
    best = d2.min()
    tied = np.flatnonzero(d2 <= best + 1e-12)
    if tied.size > 1:
        order = np.lexsort(cg.coords[tied].T[::-1])
        return cg.coords[tied[order[0]]].copy()
    return cg.coords[tied[0]].copy()


def export_cluster_csv(cg: ClusterGraph, vertex_path, edge_path) -> None:
    with open(vertex_path, "w") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(cg.dim))
                 + ",id,mu,nu\n")
        for i, c in enumerate(cg.coords):
            fh.write(",".join(str(int(v)) for v in c)
                     + f",{i},{cg.mu[i]!r},{cg.nu[i]!r}\n")
    with open(edge_path, "w") as fh:
        fh.write("id_a,id_b,weight\n")
        for v in range(len(cg)):
            lo, hi = cg.indptr[v], cg.indptr[v + 1]
            for u, w in zip(cg.nbr[lo:hi], cg.wts[lo:hi]):
                if v < u:
                    fh.write(f"{v},{u},{w!r}\n")
