"""The three divergence measures between projected samples, with gradients.

All measures compare an x-sample (projections of the first dataset) against a
y-sample (scaled projections of the second).  Values are functions of the two
multisets only; gradients are exact partial derivatives of each measure with
every auxiliary quantity (bandwidths, ratio-model weights, kernel centers)
held fixed, which is what the alternating solvers need.

Measures:

* ``mallows``    -- sum over all sample pairs of |x_i - y_j|^t; for t = 2 this
  collapses to an O(n + k) expansion and acts as a least-squares cost.
* ``quadratic``  -- plug-in estimate of the integrated squared difference of
  the two kernel density estimates (four Gaussian-kernel sums).
* ``pearson``    -- symmetrized relative Pearson divergence, estimated with a
  linear-in-parameters density-ratio model solved in closed form.
* ``pearson_multi`` -- the Pearson construction on r-dimensional projections
  with multivariate RBF kernels and widened bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DataError, FitError

KINDS = ("mallows", "quadratic", "pearson", "pearson_multi")
DEFAULT_CV_GRID = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class DivergenceSpec:
    """Which measure to use, plus its hyperparameters.

    ``center_count`` of None means min(200, n) at fit time.
    ``ratio_regularization`` is a nonnegative ridge weight or the string
    "cv" to pick one from ``cv_grid`` by 5-fold cross-validation.
    ``use_printed_cross_term`` switches the ratio-model system matrix to a
    non-symmetric variant kept only for comparison purposes (it mixes the two
    samples inside one product and requires k <= n).
    """

    kind: str = "mallows"
    mallows_order: int = 2
    center_count: int | None = None
    ratio_regularization: float | str = 0.1
    cv_grid: tuple = DEFAULT_CV_GRID
    bandwidth_policy: str = "median_heuristic"
    use_printed_cross_term: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FitError(f"unknown divergence kind {self.kind!r}; expected {KINDS}")
        if self.mallows_order < 1:
            raise FitError("mallows_order must be >= 1")
        if self.center_count is not None and self.center_count < 1:
            raise FitError("center_count must be positive")
        if isinstance(self.ratio_regularization, str):
            if self.ratio_regularization != "cv":
                raise FitError("ratio_regularization must be a number or 'cv'")
        elif self.ratio_regularization < 0:
            raise FitError("ratio_regularization must be >= 0")
        if self.bandwidth_policy != "median_heuristic":
            raise FitError(f"unknown bandwidth policy {self.bandwidth_policy!r}")


@dataclass(frozen=True)
class Bandwidths:
    sigma_x: float
    sigma_y: float

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise FitError("bandwidths must be strictly positive")


def median_pairwise_distance(rows) -> float:
    """Median Euclidean distance over unordered pairs i < j.

    Self-distances are excluded: including the n zero self-pairs would bias
    the median downward and can make it collapse to zero for small samples.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.shape[0] < 2:
        raise DataError("need at least 2 rows for a pairwise median")
    med = float(np.median(pdist(rows)))
    if med == 0.0:
        raise FitError("degenerate sample: median pairwise distance is zero")
    return med


def median_bandwidths(x_rows, y_rows, beta: float = 1.0) -> Bandwidths:
    """Median-heuristic bandwidths; the y-side scales linearly in |beta|."""
    return Bandwidths(
        median_pairwise_distance(x_rows),
        abs(beta) * median_pairwise_distance(y_rows),
    )


def multi_bandwidths(x_rows, y_rows, betas) -> Bandwidths:
    """Bandwidths for r-dimensional projections: the x side widens by a
    factor of r, the y side by the sum of the scaling factors."""
    betas = np.asarray(betas, dtype=float)
    r = betas.size
    return Bandwidths(
        r * median_pairwise_distance(x_rows),
        float(np.sum(betas)) * median_pairwise_distance(y_rows),
    )


# ---------------------------------------------------------------------------
# Mallows (least-squares) measure
# ---------------------------------------------------------------------------


def _check_samples(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size < 1 or y.size < 1:
        raise DataError("empty projected sample")
    return x, y


def mallows_value(x, y, t: int = 2) -> float:
    """Sum over all (i, j) of |x_i - y_j|^t.

    For t = 2 the double sum expands to
    ``k * sum(x^2) + n * sum(y^2) - 2 * sum(x) * sum(y)``
    and is evaluated in O(n + k); other orders fall back to the explicit
    double sum.  Samples are sorted before summation so the value depends
    only on the multisets, exactly.
    """
    x, y = _check_samples(x, y)
    x, y = np.sort(x), np.sort(y)
    n, k = x.size, y.size
    if t == 2:
        return float(k * (x @ x) + n * (y @ y) - 2.0 * x.sum() * y.sum())
    return float((np.abs(x[:, None] - y[None, :]) ** t).sum())


def mallows_gradient(x, y, t: int = 2):
    """Exact gradient of the t = 2 Mallows sum, in O(n + k)."""
    if t != 2:
        raise FitError(f"analytic gradient only available for order 2, got t={t}")
    x, y = _check_samples(x, y)
    n, k = x.size, y.size
    dx = 2.0 * (k * x - y.sum())
    dy = 2.0 * (n * y - x.sum())
    return dx, dy


# ---------------------------------------------------------------------------
# Quadratic (KDE L2) measure
# ---------------------------------------------------------------------------


def _gauss(diff, sigma):
    # N(0, sigma^2) density evaluated at the differences
    return np.exp(-0.5 * (diff / sigma) ** 2) / (sigma * np.sqrt(2.0 * np.pi))


def quadratic_value(x, y, bw: Bandwidths) -> float:
    """Four-term Gaussian-kernel estimate of the integrated squared
    difference between the KDEs of the two samples.

    Sorted before summation: the value is an exact function of the
    multisets."""
    x, y = _check_samples(x, y)
    x, y = np.sort(x), np.sort(y)
    dxx = x[:, None] - x[None, :]
    dyy = y[:, None] - y[None, :]
    dxy = x[:, None] - y[None, :]
    t1 = _gauss(dxx, bw.sigma_x).mean()
    t2 = _gauss(dyy, bw.sigma_y).mean()
    t3 = _gauss(dxy, bw.sigma_y).mean()
    t4 = _gauss(dxy, bw.sigma_x).mean()
    return float(t1 + t2 - t3 - t4)


def quadratic_gradient(x, y, bw: Bandwidths):
    """Partial derivatives of :func:`quadratic_value` with the bandwidths
    treated as constants."""
    x, y = _check_samples(x, y)
    n, k = x.size, y.size
    sx, sy = bw.sigma_x, bw.sigma_y

    def dgauss(diff, sigma):
        return -diff / sigma**2 * _gauss(diff, sigma)

    dxx = x[:, None] - x[None, :]
    dyy = y[:, None] - y[None, :]
    dxy = x[:, None] - y[None, :]
    gxx = dgauss(dxx, sx)
    gyy = dgauss(dyy, sy)
    gxy = dgauss(dxy, sy) + dgauss(dxy, sx)
    dx = 2.0 / n**2 * gxx.sum(axis=1) - gxy.sum(axis=1) / (n * k)
    dy = 2.0 / k**2 * gyy.sum(axis=1) + gxy.sum(axis=0) / (n * k)
    return dx, dy


# ---------------------------------------------------------------------------
# Pearson divergence with a kernel density-ratio model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioModel:
    """Fitted kernel model g(z) = sum_i theta_i * omega(z, c_i) of the
    relative density ratio p / ((p + q) / 2).

    ``centers`` are points of the numerator sample (one row each in the
    multivariate case); ``theta`` solves (E + lambda I) theta = e.
    """

    centers: np.ndarray
    theta: np.ndarray
    bandwidth: float
    regularization: float
    residual: float = 0.0
    used_fallback: bool = False
    cv_lambda: float | None = None

    def _omega(self, z):
        z = np.asarray(z, dtype=float)
        if self.centers.ndim == 1:
            diff2 = (z.ravel()[:, None] - self.centers[None, :]) ** 2
        else:
            diff2 = cdist(np.atleast_2d(z), self.centers, "sqeuclidean")
        return np.exp(-diff2 / (2.0 * self.bandwidth**2))

    def predict(self, z) -> np.ndarray:
        """g(z) for each sample point."""
        return self._omega(z) @ self.theta

    def _gradient_from(self, om, z):
        # d g / d z reusing a precomputed kernel block
        z = np.asarray(z, dtype=float)
        w = om * self.theta[None, :]
        if self.centers.ndim == 1:
            diff = z.ravel()[:, None] - self.centers[None, :]
            return -(w * diff).sum(axis=1) / self.bandwidth**2
        zz = np.atleast_2d(z)
        # sum_j theta_j omega_ij (c_j - z_i) / sigma^2
        return (w @ self.centers - w.sum(axis=1)[:, None] * zz) / self.bandwidth**2

    def predict_gradient(self, z) -> np.ndarray:
        """d g / d z per sample point (a vector per row in the multivariate
        case), with theta and centers fixed."""
        return self._gradient_from(self._omega(z), z)


def _sorted_sample(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 1:
        return np.sort(sample, kind="stable")
    order = np.lexsort(sample.T[::-1])
    return sample[order]


def _ridge_solve(e_mat, e_vec, lam, symmetric=True):
    from scipy.linalg import solve

    d = e_vec.size
    return solve(e_mat + lam * np.eye(d), e_vec,
                 assume_a="pos" if symmetric else "gen")


def _cv_lambda(phi_num, phi_den, grid, rng):
    """5-fold cross-validation of the ridge weight, minimizing the quadratic
    surrogate 0.5 theta' E theta - e' theta on held-out folds."""
    n, k = phi_num.shape[0], phi_den.shape[0]
    folds_num = rng.permutation(np.arange(n) % 5)
    folds_den = rng.permutation(np.arange(k) % 5)
    scores = np.zeros(len(grid))
    for fold in range(5):
        tr_n, te_n = folds_num != fold, folds_num == fold
        tr_k, te_k = folds_den != fold, folds_den == fold
        if te_n.sum() == 0 or tr_n.sum() == 0 or te_k.sum() == 0 or tr_k.sum() == 0:
            continue
        e_tr = _system_matrix(phi_num[tr_n], phi_den[tr_k])
        b_tr = phi_num[tr_n].mean(axis=0)
        e_te = _system_matrix(phi_num[te_n], phi_den[te_k])
        b_te = phi_num[te_n].mean(axis=0)
        for gi, lam in enumerate(grid):
            try:
                theta = _ridge_solve(e_tr, b_tr, lam)
            except np.linalg.LinAlgError:
                scores[gi] = np.inf
                continue
            scores[gi] += 0.5 * theta @ e_te @ theta - b_te @ theta
    return float(grid[int(np.argmin(scores))])


def _system_matrix(phi_num, phi_den, printed_variant=False, phi_num_full=None):
    n, k = phi_num.shape[0], phi_den.shape[0]
    if printed_variant:
        if phi_num_full is None or phi_num_full.shape[0] < k:
            raise FitError(
                "printed cross-term variant needs at least as many numerator "
                "samples as denominator samples"
            )
        second = phi_den.T @ phi_num_full[:k] / (2.0 * k)
    else:
        second = phi_den.T @ phi_den / (2.0 * k)
    return phi_num.T @ phi_num / (2.0 * n) + second


def _omega_block(z, centers, sigma):
    z = np.asarray(z, dtype=float)
    if centers.ndim == 1:
        diff2 = (z.ravel()[:, None] - centers[None, :]) ** 2
    else:
        diff2 = cdist(np.atleast_2d(z), centers, "sqeuclidean")
    return np.exp(-diff2 / (2.0 * sigma**2))


def fit_ratio_model(numer, denom, spec: DivergenceSpec, sigma: float, seed) -> RatioModel:
    """Fit the ratio model for numerator sample vs. the equal mixture.

    Centers are a seeded draw from the numerator sample after sorting, so the
    result depends only on the sample multiset and the seed.  The ridge
    weight comes from ``spec.ratio_regularization`` ("cv" triggers 5-fold
    cross-validation over ``spec.cv_grid``).  A singular unregularized system
    falls back to the smallest positive grid value and flags the model.
    """
    # sorting first makes the fit an exact function of the sample multisets
    numer = _sorted_sample(np.asarray(numer, dtype=float))
    denom = _sorted_sample(np.asarray(denom, dtype=float))
    n = numer.shape[0]
    d = min(spec.center_count if spec.center_count is not None else 200, n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=d, replace=False))
    centers = numer[idx]

    phi_num = _omega_block(numer, centers, sigma)
    phi_den = _omega_block(denom, centers, sigma)
    e_mat = _system_matrix(
        phi_num, phi_den, spec.use_printed_cross_term, phi_num_full=phi_num
    )
    e_vec = phi_num.mean(axis=0)

    cv_lambda = None
    lam = spec.ratio_regularization
    if lam == "cv":
        cv_lambda = _cv_lambda(phi_num, phi_den, spec.cv_grid, rng)
        lam = cv_lambda

    symmetric = not spec.use_printed_cross_term
    used_fallback = False
    try:
        theta = _ridge_solve(e_mat, e_vec, lam, symmetric)
        residual = float(np.max(np.abs((e_mat + lam * np.eye(d)) @ theta - e_vec)))
        if not np.all(np.isfinite(theta)) or residual > 1e-8:
            raise np.linalg.LinAlgError("ill-conditioned ratio system")
    except np.linalg.LinAlgError:
        if lam > 0:
            raise FitError("ratio-model system could not be solved") from None
        lam = min(g for g in spec.cv_grid if g > 0)
        used_fallback = True
        theta = _ridge_solve(e_mat, e_vec, lam, symmetric)
        residual = float(np.max(np.abs((e_mat + lam * np.eye(d)) @ theta - e_vec)))

    return RatioModel(centers, theta, sigma, float(lam), residual,
                      used_fallback, cv_lambda)


def _pe_plugin(g_numer, g_denom) -> float:
    """Plug-in Pearson estimate from ratio-model values on both samples."""
    n, k = g_numer.size, g_denom.size
    return float(
        -0.25 * (g_numer**2).mean() - 0.25 * (g_denom**2).mean()
        + g_numer.mean() - 0.5
    )


def _pearson_models(x, y, spec, bw, seed):
    # one seed for both directions keeps the symmetric sum exactly
    # invariant under swapping the two samples
    fwd = fit_ratio_model(x, y, spec, bw.sigma_x, seed)
    rev = fit_ratio_model(y, x, spec, bw.sigma_y, seed)
    return fwd, rev


def pearson_value(x, y, spec: DivergenceSpec, bw: Bandwidths, seed=0) -> float:
    """Symmetric Pearson divergence estimate.

    Two ratio models are fitted, one per direction, and the two plug-in
    estimates are summed.  Each direction is clamped at zero from below so
    the reported divergence stays interpretable; optimization paths use the
    unclamped sum (see :class:`FrozenPearson`).
    """
    fwd, rev = _pearson_models(np.asarray(x, float), np.asarray(y, float),
                               spec, bw, seed)
    return pearson_value_from_models(x, y, fwd, rev, clamp=True)


def pearson_value_from_models(x, y, fwd: RatioModel, rev: RatioModel,
                              clamp: bool = True) -> float:
    x, y = _sorted_sample(x), _sorted_sample(y)
    pe_fwd = _pe_plugin(fwd.predict(x), fwd.predict(y))
    pe_rev = _pe_plugin(rev.predict(y), rev.predict(x))
    if clamp:
        return max(pe_fwd, 0.0) + max(pe_rev, 0.0)
    return pe_fwd + pe_rev


def pearson_gradient(x, y, fwd: RatioModel, rev: RatioModel):
    """Gradient of the (unclamped) symmetric estimate with the model weights
    and centers of both directions frozen."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    k = y.shape[0]

    g_x, gp_x = fwd.predict(x), fwd.predict_gradient(x)
    g_y, gp_y = fwd.predict(y), fwd.predict_gradient(y)
    h_y, hp_y = rev.predict(y), rev.predict_gradient(y)
    h_x, hp_x = rev.predict(x), rev.predict_gradient(x)

    def col(vals):
        # broadcast sample-value coefficients over vector-valued gradients
        return vals if vals.ndim == gp_x.ndim else vals[:, None]

    dx = col(-0.5 / n * g_x + 1.0 / n) * gp_x + col(-0.5 / n * h_x) * hp_x
    dy = col(-0.5 / k * g_y) * gp_y + col(-0.5 / k * h_y + 1.0 / k) * hp_y
    return dx, dy


def pearson_multi_value(x_proj, y_proj, spec: DivergenceSpec, betas,
                        x_rows=None, y_rows=None, seed=0,
                        bw: Bandwidths | None = None) -> float:
    """Symmetric Pearson estimate between r-dimensional projections.

    Bandwidths follow the multi-pair convention (x side scaled by r, y side
    by the sum of the scaling factors) computed from the raw data rows, or
    can be passed explicitly for cross-checks against the univariate path.
    """
    x_proj = np.atleast_2d(np.asarray(x_proj, dtype=float))
    y_proj = np.atleast_2d(np.asarray(y_proj, dtype=float))
    if x_proj.shape[1] != y_proj.shape[1]:
        raise DataError("projections must have the same number of columns")
    if bw is None:
        if x_rows is None or y_rows is None:
            raise DataError("need raw rows (or explicit bandwidths)")
        bw = multi_bandwidths(x_rows, y_rows, betas)
    fwd, rev = _pearson_models(x_proj, y_proj, spec, bw, seed)
    return pearson_value_from_models(x_proj, y_proj, fwd, rev, clamp=True)


# ---------------------------------------------------------------------------
# Frozen objectives for the alternating solvers
# ---------------------------------------------------------------------------


class FrozenMallows:
    """Mallows t=2 objective; ``normalized`` divides by n*k so the measure is
    the mean over couplings rather than the raw sum (same minimizer under
    hard constraints, and a divergence scale that keeps reconstruction
    weights meaningful)."""

    def __init__(self, normalized: bool = False):
        self.normalized = normalized

    def refresh(self, x, y):
        return self

    def value(self, x, y) -> float:
        v = mallows_value(x, y)
        if self.normalized:
            v /= len(x) * len(y)
        return v

    def gradient(self, x, y):
        dx, dy = mallows_gradient(x, y)
        if self.normalized:
            nk = len(x) * len(y)
            dx, dy = dx / nk, dy / nk
        return dx, dy

    def value_and_gradient(self, x, y):
        dx, dy = self.gradient(x, y)
        return self.value(x, y), dx, dy


class FrozenQuadratic:
    def __init__(self, bw: Bandwidths):
        self.bw = bw

    def value(self, x, y) -> float:
        return quadratic_value(x, y, self.bw)

    def gradient(self, x, y):
        return quadratic_gradient(x, y, self.bw)

    def value_and_gradient(self, x, y):
        x, y = _check_samples(x, y)
        n, k = x.size, y.size
        sx, sy = self.bw.sigma_x, self.bw.sigma_y
        dxx = x[:, None] - x[None, :]
        dyy = y[:, None] - y[None, :]
        dxy = x[:, None] - y[None, :]
        kxx, kyy = _gauss(dxx, sx), _gauss(dyy, sy)
        kxy_y, kxy_x = _gauss(dxy, sy), _gauss(dxy, sx)
        value = float(kxx.mean() + kyy.mean() - kxy_y.mean() - kxy_x.mean())
        gxx = -dxx / sx**2 * kxx
        gyy = -dyy / sy**2 * kyy
        gxy = -dxy / sy**2 * kxy_y - dxy / sx**2 * kxy_x
        dx = 2.0 / n**2 * gxx.sum(axis=1) - gxy.sum(axis=1) / (n * k)
        dy = 2.0 / k**2 * gyy.sum(axis=1) + gxy.sum(axis=0) / (n * k)
        return value, dx, dy


class FrozenPearson:
    """Pearson objective with both ratio models frozen at construction."""

    def __init__(self, x, y, spec: DivergenceSpec, bw: Bandwidths, seed):
        self.spec = spec
        self.bw = bw
        self.fwd, self.rev = _pearson_models(
            np.asarray(x, float), np.asarray(y, float), spec, bw, seed
        )

    def value(self, x, y) -> float:
        return pearson_value_from_models(x, y, self.fwd, self.rev, clamp=False)

    def reported_value(self, x, y) -> float:
        return pearson_value_from_models(x, y, self.fwd, self.rev, clamp=True)

    def gradient(self, x, y):
        return pearson_gradient(x, y, self.fwd, self.rev)

    def value_and_gradient(self, x, y):
        """Joint evaluation sharing the four kernel blocks."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, k = x.shape[0], y.shape[0]
        om_fx, om_fy = self.fwd._omega(x), self.fwd._omega(y)
        om_rx, om_ry = self.rev._omega(x), self.rev._omega(y)
        g_x, g_y = om_fx @ self.fwd.theta, om_fy @ self.fwd.theta
        h_x, h_y = om_rx @ self.rev.theta, om_ry @ self.rev.theta
        value = _pe_plugin(g_x, g_y) + _pe_plugin(h_y, h_x)
        gp_x = self.fwd._gradient_from(om_fx, x)
        gp_y = self.fwd._gradient_from(om_fy, y)
        hp_x = self.rev._gradient_from(om_rx, x)
        hp_y = self.rev._gradient_from(om_ry, y)

        def col(vals):
            return vals if vals.ndim == gp_x.ndim else vals[:, None]

        dx = col(-0.5 / n * g_x + 1.0 / n) * gp_x + col(-0.5 / n * h_x) * hp_x
        dy = col(-0.5 / k * g_y) * gp_y + col(-0.5 / k * h_y + 1.0 / k) * hp_y
        return value, dx, dy
