"""Synthetic benchmark data with known ground-truth canonical structure.

The generator draws X columns i.i.d. standard normal and builds the first
four Y columns from fixed relation families (linear, mixed, non-linear);
remaining Y columns are pure noise.  The ground truth records, per relation,
which X attributes drive which Y attribute, orthonormalized so subspace
recovery can be scored with projector differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataSet
from .errors import DataError

RELATION_KINDS = ("linear", "mixed", "nonlinear")
N_RELATIONS = 4

# Per relation: X-side coefficient pattern over the first five X attributes.
# Non-linear terms contribute an indicator 1 for each participating attribute.
_X_PATTERNS = {
    "linear": [(1.0, 2.0, 0.0, 0.0, 0.0),
               (0.0, 0.0, 1.0, 2.0, 0.0),
               (0.0, 0.0, 0.0, 0.0, 1.0),
               (0.0, 1.0, 0.0, 0.0, 1.0)],
    "mixed": [(1.0, 2.0, 0.0, 0.0, 0.0),
              (0.0, 0.0, 1.0, 2.0, 0.0),
              (0.0, 0.0, 0.0, 0.0, 1.0),
              (0.0, 1.0, 0.0, 0.0, 1.0)],
    "nonlinear": [(1.0, 2.0, 0.0, 0.0, 0.0),
                  (0.0, 0.0, 1.0, 2.0, 0.0),
                  (0.0, 0.0, 0.0, 0.0, 1.0),
                  (0.0, 1.0, 0.0, 0.0, 1.0)],
}

ALLOWED_DROP_FRACTIONS = (0.0, 0.05, 0.1, 0.15, 0.2)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic (X, Y) pair.

    ``m`` counts all X attributes (the first five carry the relations, the
    rest are noise); ``l`` counts all Y attributes (the first four carry the
    relations).  ``drop_fraction`` removes a random subset of Y rows, and
    ``shuffle_rows`` permutes both row orders independently.
    """

    relation_kind: str = "linear"
    n: int = 1000
    k: int = 1000
    m: int = 7
    l: int = 5
    drop_fraction: float = 0.0
    shuffle_rows: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.relation_kind not in RELATION_KINDS:
            raise DataError(
                f"unknown relation kind {self.relation_kind!r}; "
                f"expected one of {RELATION_KINDS}"
            )
        if self.n < 2 or self.k < 2:
            raise DataError("need n >= 2 and k >= 2")
        if self.m < 5:
            raise DataError(f"m must be >= 5 (the relations use X_1..X_5), got {self.m}")
        if self.l < 4:
            raise DataError(f"l must be >= 4 (the relations define Y_1..Y_4), got {self.l}")
        if not any(np.isclose(self.drop_fraction, f) for f in ALLOWED_DROP_FRACTIONS):
            raise DataError(
                f"drop_fraction must be one of {ALLOWED_DROP_FRACTIONS}, "
                f"got {self.drop_fraction}"
            )


@dataclass(frozen=True)
class GroundTruth:
    """Orthonormal ground-truth canonical matrices.

    The first ``n_relations`` columns span the planted relation structure
    (Gram-Schmidt in relation order); later columns complete each basis
    deterministically from the standard basis.
    """

    u_matrix: np.ndarray
    v_matrix: np.ndarray
    n_relations: int = N_RELATIONS

    def __post_init__(self):
        for mat in (self.u_matrix, self.v_matrix):
            gram = mat.T @ mat
            if not np.allclose(gram, np.eye(mat.shape[1]), atol=1e-10):
                raise DataError("ground-truth columns are not orthonormal")


def _gram_schmidt_complete(raw_columns, dim, r):
    """Orthonormalize ``raw_columns`` in order, then extend to ``r`` columns
    by orthogonalizing standard basis vectors in index order."""
    basis = []

    def push(vec):
        v = np.asarray(vec, dtype=float).copy()
        for b in basis:
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            basis.append(v / norm)
            return True
        return False

    for col in raw_columns:
        push(col)
    j = 0
    while len(basis) < r and j < dim:
        e = np.zeros(dim)
        e[j] = 1.0
        push(e)
        j += 1
    if len(basis) < r:
        raise DataError("could not complete an orthonormal ground-truth basis")
    return np.column_stack(basis[:r])


def ground_truth_for(kind: str, m: int, l: int, r: int | None = None) -> GroundTruth:
    """Build the ground truth for a relation kind and data shape.

    ``r`` defaults to min(m, l).  X-side raw vectors are the relation
    coefficient patterns padded with zeros; Y-side raw vectors are the
    indicators of Y_1..Y_4.
    """
    if r is None:
        r = min(m, l)
    x_cols = []
    for pattern in _X_PATTERNS[kind]:
        col = np.zeros(m)
        col[: len(pattern)] = pattern
        x_cols.append(col / np.linalg.norm(col))
    y_cols = [np.eye(l)[:, j] for j in range(N_RELATIONS)]
    return GroundTruth(
        _gram_schmidt_complete(x_cols, m, r),
        _gram_schmidt_complete(y_cols, l, r),
    )


def _relation_columns(kind, base, noise):
    """First four Y columns as functions of the X draw plus noise."""
    x1, x2, x3, x4, x5 = (base[:, j] for j in range(5))
    if kind == "linear":
        cols = [x1 + 2 * x2, x3 + 2 * x4, x5, x2 + x5]
    elif kind == "mixed":
        cols = [x1**2 + 2 * x2, x3**3 + 2 * x4, x5, x2 + x5]
    else:
        cols = [x1**2 + 2 * x2, x3**3 + 2 * x4, np.exp(x5), np.cos(x2 + x5)]
    return [c + noise[:, j] for j, c in enumerate(cols)]


def generate_synthetic(spec: SyntheticSpec):
    """Generate (X, Y, GroundTruth) per the spec.

    Noise terms are N(0, 0.5) (variance 0.5) except the fourth non-linear
    relation which uses N(0, 0.1).  Independent seeded streams drive the X
    draw, the noise, the row drop and the shuffles, so varying one knob never
    perturbs the others.
    """
    base_rows = max(spec.n, spec.k)
    streams = np.random.SeedSequence(spec.seed).spawn(4)
    x_rng = np.random.default_rng(streams[0])
    noise_rng = np.random.default_rng(streams[1])
    drop_rng = np.random.default_rng(streams[2])
    shuffle_rng = np.random.default_rng(streams[3])

    base = x_rng.standard_normal((base_rows, spec.m))
    x_values = base[: spec.n]

    eps_std = np.full(N_RELATIONS, np.sqrt(0.5))
    if spec.relation_kind == "nonlinear":
        eps_std[3] = np.sqrt(0.1)
    noise = noise_rng.standard_normal((spec.k, N_RELATIONS)) * eps_std

    y_values = np.empty((spec.k, spec.l))
    y_base = base[: spec.k]
    for j, col in enumerate(_relation_columns(spec.relation_kind, y_base, noise)):
        y_values[:, j] = col
    if spec.l > N_RELATIONS:
        y_values[:, N_RELATIONS:] = noise_rng.standard_normal(
            (spec.k, spec.l - N_RELATIONS)
        )

    if spec.drop_fraction > 0:
        n_drop = int(round(spec.drop_fraction * spec.k))
        dropped = drop_rng.choice(spec.k, size=n_drop, replace=False)
        keep = np.setdiff1d(np.arange(spec.k), dropped)
        y_values = y_values[keep]

    if spec.shuffle_rows:
        x_values = x_values[shuffle_rng.permutation(x_values.shape[0])]
        y_values = y_values[shuffle_rng.permutation(y_values.shape[0])]

    x_names = tuple(f"x_{j}" for j in range(spec.m))
    y_names = tuple(f"y_{j}" for j in range(spec.l))
    gt = ground_truth_for(spec.relation_kind, spec.m, spec.l)
    return DataSet(x_values, x_names), DataSet(y_values, y_names), gt
