"""Linear canonical correlation analysis, the paired-sample reference.

Used both as a benchmark column and as a property-test anchor: on whitened
paired data the first canonical pair minimizes the paired least-squares cost
over all unit-norm direction pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataSet, Transform, whiten
from .errors import DataError

CORRESPONDENCE_ERROR = "CCA requires sample correspondence"


@dataclass(frozen=True)
class CcaResult:
    """Canonical directions (orthonormal in whitened coordinates) and their
    correlations, non-increasing."""

    u_matrix: np.ndarray
    v_matrix: np.ndarray
    correlations: np.ndarray
    transforms_x: tuple[Transform, ...] = ()
    transforms_y: tuple[Transform, ...] = ()

    @property
    def r(self) -> int:
        return self.u_matrix.shape[1]

    def raw_directions(self, side: str) -> np.ndarray:
        """Unit-norm directions in the original attribute coordinates."""
        mat = self.u_matrix if side == "x" else self.v_matrix
        transforms = self.transforms_x if side == "x" else self.transforms_y
        out = mat.astype(float).copy()
        for t in reversed(transforms):
            if t.kind == "whiten":
                out = t.scale @ out
            elif t.kind == "rescale_unit":
                out = out / t.scale[:, None]
        return out / np.linalg.norm(out, axis=0)


def _fix_signs(mat):
    # largest-magnitude entry of every column made positive, for determinism
    idx = np.argmax(np.abs(mat), axis=0)
    signs = np.sign(mat[idx, np.arange(mat.shape[1])])
    signs[signs == 0] = 1.0
    return mat * signs


def fit_linear_cca(x: DataSet, y: DataSet) -> CcaResult:
    """Whiten both sides and take the SVD of the cross-covariance.

    Requires n = k (row i of x corresponds to row i of y) and nonsingular
    covariances on both sides.
    """
    if x.n_rows != y.n_rows:
        raise DataError(CORRESPONDENCE_ERROR)
    xw = x if x.whitened else whiten(x)
    yw = y if y.whitened else whiten(y)
    n = xw.n_rows
    cross = xw.values.T @ yw.values / n
    left, sing, right_t = np.linalg.svd(cross, full_matrices=False)
    r = min(x.n_attributes, y.n_attributes)
    u_mat = _fix_signs(left[:, :r])
    v_mat = _fix_signs(right_t[:r].T)
    return CcaResult(
        u_matrix=u_mat,
        v_matrix=v_mat,
        correlations=np.clip(sing[:r], -1.0, 1.0),
        transforms_x=xw.transforms,
        transforms_y=yw.transforms,
    )


def paired_squared_error(u, v, x_values, y_values) -> float:
    """sum_i (u' x_i - v' y_i)^2 for paired rows; the objective CCA's first
    pair minimizes on whitened data."""
    diff = x_values @ np.asarray(u, float) - y_values @ np.asarray(v, float)
    return float(diff @ diff)
