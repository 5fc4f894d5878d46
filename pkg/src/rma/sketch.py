"""Subgaussian random projections for the data misfit.

A sketch is the n x N matrix ``(1/sqrt(n)) [r_1, ..., r_n]^T`` whose entries
are i.i.d. draws with mean 0 and variance 1. Row ``j`` is generated from a
Philox stream keyed by ``seed`` with its counter offset by ``j``, so a matrix
is a pure function of ``(dist, n, N, seed)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

#: Large-deviation constant used when reporting guarantees.
DEFAULT_C = 1.0 / 8.0

# rows with density 1/s below this are stored sparse
_SPARSE_MIN_S = 3.0


class Kind(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    ACHLIOPTAS = "achlioptas"
    SPARSE_SIGN = "sparse"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class SketchDistribution:
    """Entry distribution of a sketch.

    ``sparsity`` is only meaningful for :attr:`Kind.SPARSE_SIGN`; Rademacher
    and Achlioptas are the sparse-sign family at s = 1 and s = 3.
    """

    kind: Kind
    sparsity: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.SPARSE_SIGN:
            if self.sparsity is None or not self.sparsity >= 1.0:
                raise ValueError(f"sparse-sign distribution needs s >= 1, got {self.sparsity!r}")
        elif self.sparsity is not None and self.sparsity != {Kind.RADEMACHER: 1.0, Kind.ACHLIOPTAS: 3.0}.get(self.kind):
            raise ValueError(f"{self.kind.value} does not take a sparsity parameter")

    @classmethod
    def sparse(cls, s: float) -> "SketchDistribution":
        return cls(Kind.SPARSE_SIGN, float(s))

    @classmethod
    def from_name(cls, name: str) -> "SketchDistribution":
        """Parse ``gaussian``, ``rademacher``, ``achlioptas``, ``uniform``,
        ``sparse95`` (s=20), ``sparse99`` (s=100) or ``sparse:<s>``."""
        key = name.strip().lower()
        if key in _NAMED:
            return _NAMED[key]
        if key.startswith("sparse:"):
            return cls.sparse(float(key.split(":", 1)[1]))
        try:
            return cls(Kind(key))
        except ValueError:
            raise ValueError(f"unknown sketch distribution {name!r}") from None

    @property
    def s(self) -> float | None:
        if self.kind is Kind.RADEMACHER:
            return 1.0
        if self.kind is Kind.ACHLIOPTAS:
            return 3.0
        return self.sparsity

    @property
    def name(self) -> str:
        if self.kind is Kind.SPARSE_SIGN:
            for key, dist in _NAMED.items():
                if dist == self:
                    return key
            return f"sparse:{self.sparsity:g}"
        return self.kind.value

    @property
    def subgaussian_b(self) -> float:
        s = self.s
        if s is None:
            return 1.0
        return math.sqrt(s - 2.0 * math.log(s))

    @property
    def stores_sparse(self) -> bool:
        return self.s is not None and self.s >= _SPARSE_MIN_S


_NAMED = {
    "gaussian": SketchDistribution(Kind.GAUSSIAN),
    "rademacher": SketchDistribution(Kind.RADEMACHER),
    "achlioptas": SketchDistribution(Kind.ACHLIOPTAS),
    "sparse95": SketchDistribution(Kind.SPARSE_SIGN, 20.0),
    "sparse99": SketchDistribution(Kind.SPARSE_SIGN, 100.0),
    "uniform": SketchDistribution(Kind.UNIFORM),
}

#: The six distributions compared in the experiments.
ALL_DISTRIBUTIONS = tuple(_NAMED.values())

_UNIFORM_HALF_WIDTH = math.sqrt(3.0)


def sample(dist: SketchDistribution, rng: np.random.Generator, size=None):
    """Draw entries from ``dist``; each has mean 0 and variance 1."""
    if dist.kind is Kind.GAUSSIAN:
        return rng.standard_normal(size)
    if dist.kind is Kind.UNIFORM:
        return rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size)
    s = dist.s
    root = math.sqrt(s)
    x = rng.random(size)
    return np.where(x < 0.5 / s, root, np.where(x < 1.0 / s, -root, 0.0))


def sample_entry(dist: SketchDistribution, rng: np.random.Generator) -> float:
    return float(sample(dist, rng))


def _row_rng(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, row]))


@dataclass(frozen=True, eq=False)
class SketchMatrix:
    """The n x N sketch. Immutable once built; use :func:`build_sketch`."""

    dist: SketchDistribution
    n: int
    N: int
    seed: int
    matrix: np.ndarray | sp.csr_matrix = field(repr=False)

    @property
    def shape(self):
        return (self.n, self.N)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.matrix.toarray()
        return np.array(self.matrix)

    def apply(self, v):
        """Return ``Sigma @ v`` for a vector or an (N, k) block."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.N:
            raise ValueError(f"sketch expects length {self.N}, got {v.shape[0]}")
        return self.matrix @ v

    def apply_transpose(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n:
            raise ValueError(f"sketch transpose expects length {self.n}, got {y.shape[0]}")
        return self.matrix.T @ y

    def spec(self) -> dict:
        return {"kind": self.dist.kind.value, "s": self.dist.s, "n": self.n, "N": self.N, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.spec())

    @classmethod
    def from_spec(cls, spec) -> "SketchMatrix":
        if isinstance(spec, str):
            spec = json.loads(spec)
        kind = Kind(spec["kind"])
        dist = SketchDistribution(kind, spec.get("s") if kind is Kind.SPARSE_SIGN else None)
        return build_sketch(dist, spec["n"], spec["N"], spec["seed"])


def build_sketch(dist: SketchDistribution, n: int, N: int, seed: int) -> SketchMatrix:
    n, N, seed = int(n), int(N), int(seed)
    if n < 1 or N < 1:
        raise ValueError(f"invalid sketch dimensions n={n}, N={N}")
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    scale = 1.0 / math.sqrt(n)
    if dist.stores_sparse:
        s = dist.s
        root = math.sqrt(s) * scale
        indptr = np.zeros(n + 1, dtype=np.int64)
        indices, values = [], []
        for j in range(n):
            x = _row_rng(seed, j).random(N)
            idx = np.flatnonzero(x < 1.0 / s)
            indices.append(idx)
            values.append(np.where(x[idx] < 0.5 / s, root, -root))
            indptr[j + 1] = indptr[j] + idx.size
        matrix = sp.csr_matrix(
            (np.concatenate(values), np.concatenate(indices), indptr), shape=(n, N)
        )
    else:
        matrix = np.empty((n, N))
        for j in range(n):
            matrix[j] = sample(dist, _row_rng(seed, j), N)
        matrix *= scale
        matrix.setflags(write=False)
    return SketchMatrix(dist, n, N, seed, matrix)


def apply_sketch(S: SketchMatrix, v) -> np.ndarray:
    return S.apply(v)


def distortion(S: SketchMatrix, v) -> float:
    """``||S v||^2 / ||v||^2 - 1``."""
    v = np.asarray(v, dtype=float)
    vv = float(v @ v)
    if vv == 0.0:
        raise ValueError("distortion is undefined for the zero vector")
    sv = S.apply(v)
    return float(sv @ sv) / vv - 1.0


@dataclass(frozen=True)
class JlBudget:
    """Distortion tolerance, failure exponent and union-bound parameters."""

    epsilon: float
    beta: float = 1.0
    c: float = DEFAULT_C
    alpha: float = 0.0
    m: float | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.c <= 0.25:
            raise ValueError("c must lie in (0, 1/4]")
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")


def _ceil(x: float) -> int:
    # guard against 100.00000000000001 rounding up to 101
    return int(math.ceil(round(x, 9)))


def required_n(budget: JlBudget) -> int:
    """Smallest n with ``n >= beta / (c eps^2)``."""
    return max(1, _ceil(budget.beta / (budget.c * budget.epsilon**2)))


def required_n_union(budget: JlBudget) -> int:
    """Sketch size for all pairs among ``m`` vectors.

    The pairwise guarantee then holds with probability at least
    ``1 - m**(-alpha)``.
    """
    if budget.m is None or budget.m < 2:
        raise ValueError("union bound needs m >= 2 vectors")
    return _ceil((2.0 + budget.alpha) * math.log(budget.m) / (budget.c * budget.epsilon**2))


def failure_probability(n: int, epsilon: float, c: float = DEFAULT_C) -> float:
    """``exp(-c n eps^2)``; the success probability is one minus this."""
    if n < 1:
        raise ValueError("n must be positive")
    return math.exp(-c * n * epsilon**2)
