"""Random conductance environments on finite boxes of Z^d.

A field assigns one nonnegative weight to every (site, axis) edge
{x, x + e_i}.  Weights are stored direction-major: ``weights[i]`` has the
box shape and holds the conductance of the edge leaving site x in
direction i.  An edge is open iff its weight is strictly positive.

Draws are counter-based and keyed by the edge itself (coordinates +
direction), so regeneration with the same (law, box, seed, boundary) is
bit-identical and, for i.i.d. laws, growing the box does not disturb the
values on existing edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import edge_uniforms

_MAGIC = b"RCGF"
_FORMAT_VERSION = 1

_LAW_KINDS = ("constant", "exponential", "bernoulli", "uniform",
              "pareto_inverse", "line_correlated")


class ParameterError(ValueError):
    """Invalid law or operation parameters."""


class DomainError(ValueError):
    """Geometric precondition violated (shift off the box, empty interior)."""


class DegenerateEnvironmentError(ValueError):
    """No open edges to work with."""


@dataclass(frozen=True)
class LawSpec:
    """Marginal law of a conductance, plus the line-correlated wrapper."""

    kind: str
    c: float = 1.0
    rate: float = 1.0
    p: float = 1.0
    a: float = 0.0
    b: float = 1.0
    q_tail: float = 1.0
    base: Optional["LawSpec"] = None
    axis: int = 0

    def __post_init__(self):
        if self.kind not in _LAW_KINDS:
            raise ParameterError(f"unknown law kind {self.kind!r}")
        if self.kind == "constant" and not self.c > 0:
            raise ParameterError("constant law requires c > 0")
        if self.kind == "exponential" and not self.rate > 0:
            raise ParameterError("exponential law requires rate > 0")
        if self.kind == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ParameterError("bernoulli law requires p in [0, 1]")
        if self.kind == "uniform" and not (0 <= self.a < self.b):
            raise ParameterError("uniform law requires 0 <= a < b")
        if self.kind == "pareto_inverse" and not self.q_tail > 0:
            raise ParameterError("pareto_inverse law requires q_tail > 0")
        if self.kind == "line_correlated":
            if self.base is None or self.base.kind == "line_correlated":
                raise ParameterError("line_correlated needs a plain base law")
            if self.axis < 0:
                raise ParameterError("line_correlated axis must be >= 0")

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniform(0,1) draws to conductances by inverse CDF."""
        if self.kind == "constant":
            return np.full_like(u, self.c)
        if self.kind == "exponential":
            return -np.log1p(-u) / self.rate
        if self.kind == "bernoulli":
            return (u < self.p).astype(np.float64)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        if self.kind == "pareto_inverse":
            # P[w < t] = t^q_tail on (0, 1]; E[w^{-q}] finite iff q < q_tail.
            return u ** (1.0 / self.q_tail)
        raise ParameterError(f"transform undefined for {self.kind!r}")

    def mean(self) -> float:
        """Closed-form marginal mean E[w]."""
        if self.kind == "constant":
            return self.c
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "bernoulli":
            return self.p
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        if self.kind == "pareto_inverse":
            # E[u^{1/q_tail}] for uniform u
            return self.q_tail / (self.q_tail + 1.0)
        return self.base.mean()

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.c:g})"
        if self.kind == "exponential":
            return f"exponential({self.rate:g})"
        if self.kind == "bernoulli":
            return f"bernoulli({self.p:g})"
        if self.kind == "uniform":
            return f"uniform({self.a:g},{self.b:g})"
        if self.kind == "pareto_inverse":
            return f"pareto_inverse({self.q_tail:g})"
        return f"line_correlated({self.base.describe()},axis={self.axis})"


def constant(c: float = 1.0) -> LawSpec:
    return LawSpec("constant", c=c)


def exponential(rate: float = 1.0) -> LawSpec:
    return LawSpec("exponential", rate=rate)


def bernoulli(p: float) -> LawSpec:
    return LawSpec("bernoulli", p=p)


def uniform(a: float, b: float) -> LawSpec:
    return LawSpec("uniform", a=a, b=b)


def pareto_inverse(q_tail: float) -> LawSpec:
    return LawSpec("pareto_inverse", q_tail=q_tail)


def line_correlated(base: LawSpec, axis: int = 0) -> LawSpec:
    return LawSpec("line_correlated", base=base, axis=axis)


def parse_law(text: str) -> LawSpec:
    """Parse strings such as ``exponential(1)`` or ``line_correlated(exponential(1),axis=0)``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    name = name.strip()
    if not rest.endswith(")"):
        raise ParameterError(f"cannot parse law {text!r}")
    args = rest[:-1].strip()
    if name == "constant":
        return constant(float(args or 1.0))
    if name == "exponential":
        return exponential(float(args or 1.0))
    if name == "bernoulli":
        return bernoulli(float(args))
    if name == "uniform":
        a, b = (float(v) for v in args.split(","))
        return uniform(a, b)
    if name == "pareto_inverse":
        return pareto_inverse(float(args))
    if name == "line_correlated":
        # base law may itself contain a parenthesized argument list
        depth = 0
        split = None
        for i, ch in enumerate(args):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                split = i
                break
        if split is None:
            base_text, axis = args, 0
        else:
            base_text = args[:split]
            axis_text = args[split + 1:].strip()
            axis = int(axis_text.split("=")[-1])
        return line_correlated(parse_law(base_text), axis=axis)
    raise ParameterError(f"unknown law {name!r}")


@dataclass(frozen=True)
class ConductanceField:
    """Edge weights on a finite box, together with how they were made."""

    dim: int
    box: tuple
    weights: np.ndarray  # shape (dim, *box), float64, >= 0
    law: LawSpec
    seed: int
    boundary: str  # "free" | "torus"

    def __post_init__(self):
        if self.boundary not in ("free", "torus"):
            raise ParameterError("boundary must be 'free' or 'torus'")

    def edge_mask(self) -> np.ndarray:
        """Boolean (dim, *box) array marking edges that exist.

        Free boundary drops the edges that would leave the box.
        """
        mask = np.ones_like(self.weights, dtype=bool)
        if self.boundary == "free":
            for i in range(self.dim):
                idx = [slice(None)] * (self.dim + 1)
                idx[0] = i
                idx[1 + i] = self.box[i] - 1
                mask[tuple(idx)] = False
        return mask

    def existing_weights(self) -> np.ndarray:
        """Flat array of the weights of existing edges."""
        return self.weights[self.edge_mask()]

    def n_sites(self) -> int:
        return int(np.prod(self.box))


@dataclass(frozen=True)
class MomentReport:
    p: float
    q: float
    theta: float
    mean_omega_p: float
    mean_inv_omega_q: float
    threshold: float
    satisfied: bool


def generate(law: LawSpec, box: Sequence[int], d: Optional[int] = None,
             seed: int = 0, boundary: str = "free") -> ConductanceField:
    """Draw a conductance field; a pure function of its arguments."""
    box = tuple(int(b) for b in box)
    if d is None:
        d = len(box)
    if d < 2:
        raise ParameterError("dimension must be >= 2")
    if len(box) != d:
        raise ParameterError("box extents must match dimension")
    if any(b < 2 for b in box):
        raise ParameterError("box extents must be >= 2 per axis")

    coords = np.indices(box).reshape(d, -1).T  # (n_sites, d), C order
    n_sites = coords.shape[0]
    weights = np.empty((d,) + box, dtype=np.float64)
    for i in range(d):
        axis_ids = np.full(n_sites, i)
        if law.kind == "line_correlated":
            keyed = coords.copy()
            keyed[:, law.axis] = 0  # one draw per line parallel to `axis`
            u = edge_uniforms(keyed, axis_ids, seed)
            w = law.base.transform(u)
        else:
            u = edge_uniforms(coords, axis_ids, seed)
            w = law.transform(u)
        weights[i] = w.reshape(box)
    weights.setflags(write=False)
    return ConductanceField(dim=d, box=box, weights=weights, law=law,
                            seed=seed, boundary=boundary)


def shift(field: ConductanceField, z: Sequence[int]) -> ConductanceField:
    """Translate the environment: output edge {x, x+e_i} reads input {x+z, ...}."""
    z = tuple(int(v) for v in z)
    if len(z) != field.dim:
        raise ParameterError("shift vector dimension mismatch")
    if field.boundary == "torus":
        w = field.weights
        for i, zi in enumerate(z):
            w = np.roll(w, -zi, axis=1 + i)
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        return ConductanceField(field.dim, field.box, w, field.law,
                                field.seed, field.boundary)
    # free boundary: crop to the window that stays inside the box
    new_box = tuple(field.box[i] - abs(z[i]) for i in range(field.dim))
    if any(b < 2 for b in new_box):
        raise DomainError("free-boundary shift leaves the box")
    sl = [slice(None)]
    for i, zi in enumerate(z):
        lo = max(zi, 0)
        sl.append(slice(lo, lo + new_box[i]))
    w = np.ascontiguousarray(field.weights[tuple(sl)])
    w.setflags(write=False)
    return ConductanceField(field.dim, new_box, w, field.law,
                            field.seed, field.boundary)


def moment_report(field: ConductanceField, p: float, q: float,
                  theta: float) -> MomentReport:
    """Empirical moment condition diagnostics over the box's edges.

    The negative moment averages w^{-q} over all existing edges with the
    closed-edge (0/0 = 0) convention, mirroring E[w^{-q} 1{open}].
    """
    if p <= 0 or q <= 0:
        raise ParameterError("p and q must be positive")
    if not 0.0 < theta < 1.0:
        raise ParameterError("theta must lie in (0, 1)")
    w = field.existing_weights()
    open_mask = w > 0
    if not open_mask.any():
        raise DegenerateEnvironmentError("all edges closed")
    mean_p = float(np.mean(w ** p))
    inv = np.zeros_like(w)
    inv[open_mask] = w[open_mask] ** (-q)
    mean_q = float(np.mean(inv))
    threshold = 2.0 * (1.0 - theta) / (field.dim - theta)
    return MomentReport(p=p, q=q, theta=theta, mean_omega_p=mean_p,
                        mean_inv_omega_q=mean_q, threshold=threshold,
                        satisfied=(1.0 / p + 1.0 / q) < threshold)


# ---------------------------------------------------------------------------
# serialization


def save_field(field: ConductanceField, path) -> None:
    """Binary format: header (magic, version, d, extents, boundary, law,
    seed) followed by little-endian float64 weights, direction-major."""
    law_desc = field.law.describe().encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        header = np.array([_FORMAT_VERSION, field.dim], dtype="<u4")
        fh.write(header.tobytes())
        fh.write(np.array(field.box, dtype="<u4").tobytes())
        fh.write(np.array([0 if field.boundary == "free" else 1],
                          dtype="<u4").tobytes())
        fh.write(np.array([len(law_desc)], dtype="<u4").tobytes())
        fh.write(law_desc)
        fh.write(np.array([field.seed], dtype="<i8").tobytes())
        fh.write(field.weights.astype("<f8").tobytes())


def load_field(path) -> ConductanceField:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ParameterError("not a conductance field file")
        version, d = np.frombuffer(fh.read(8), dtype="<u4")
        if version != _FORMAT_VERSION:
            raise ParameterError(f"unsupported file version {version}")
        box = tuple(int(v) for v in np.frombuffer(fh.read(4 * d), dtype="<u4"))
        bcode = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        ldesc_len = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        law = parse_law(fh.read(ldesc_len).decode())
        seed = int(np.frombuffer(fh.read(8), dtype="<i8")[0])
        n = d * int(np.prod(box))
        w = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape((d,) + box).copy()
    w.setflags(write=False)
    return ConductanceField(dim=int(d), box=box, weights=w, law=law,
                            seed=seed,
                            boundary="free" if bcode == 0 else "torus")


def export_csv(field: ConductanceField, path) -> None:
    """CSV export: one row per existing edge, columns x1..xd, axis, weight."""
    mask = field.edge_mask()
    with open(path, "w") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(field.dim))
                 + ",axis,weight\n")
        coords = np.indices(field.box).reshape(field.dim, -1).T
        for i in range(field.dim):
            m = mask[i].reshape(-1)
            w = field.weights[i].reshape(-1)
            for c, wv in zip(coords[m], w[m]):
                fh.write(",".join(str(int(v)) for v in c)
                         + f",{i},{wv!r}\n")
