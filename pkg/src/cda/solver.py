"""Solvers for the four problem formulations.

Two optimizer families:

* constrained pairs (``cda``) and constrained joint (``mcda``): geodesic
  natural-gradient descent.  For a single vector the skew-symmetric update
  ``u <- exp(-t (g u' - u g')) u`` is the closed-form rotation in the plane
  spanned by the vector and the tangent gradient; for matrices the m x m
  matrix exponential is used.  Orthogonality to previously extracted pairs is
  enforced exactly by reparameterizing in an orthonormal basis of the
  complement.  Step sizes come from a derivative-free 1-d search
  (golden-section bracketing plus Nelder-Mead style polish, at most 30
  objective evaluations, initial bracket [0, 1]).

* reconstruction-relaxed variants (``rcda``, ``mrcda``): the hard unit-norm
  constraints are replaced by quadratic reconstruction penalties and the
  resulting unconstrained problem is solved with L-BFGS (history 10,
  strong-Wolfe line search).

Both families alternate: the scaling factor, the bandwidths and any
density-ratio weights are refreshed between optimizer rounds and held fixed
inside them, so every inner step descends a well-defined frozen objective.

Row order never matters: ``fit`` sorts both datasets' rows lexicographically
before optimizing, which makes results bit-identical under input shuffles.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import divergence as dv
from .dataset import DataSet, Transform, apply_transforms, rescale_unit, whiten
from .errors import DataError, FitError
from .scaling import OPTIMIZED, RULE_BASED, ScalingMatrix, ScalingMode, beta_rule

FORMULATIONS = ("cda", "mcda", "rcda", "mrcda")
BASIS_SCHEMA_VERSION = "cda-basis/1"

_UNIVARIATE_KINDS = ("mallows", "quadratic", "pearson")


@dataclass(frozen=True)
class SolverConfig:
    formulation: str = "cda"
    divergence: dv.DivergenceSpec = field(default_factory=dv.DivergenceSpec)
    scaling: ScalingMode = field(default_factory=ScalingMode)
    lambda_recon: float = 0.5
    delta_recon: float = 0.5
    max_outer_iters: int = 300
    grad_tolerance: float = 1e-6
    restarts: int = 5
    seed: int = 0
    r_pairs: int | str = "auto"
    whiten_inputs: bool | None = None

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise FitError(f"unknown formulation {self.formulation!r}")
        if self.lambda_recon <= 0 or self.delta_recon <= 0:
            raise FitError("reconstruction weights must be positive")
        if self.restarts < 1:
            raise FitError("need at least one restart")
        if self.max_outer_iters < 1:
            raise FitError("max_outer_iters must be positive")
        if self.formulation in ("mcda", "mrcda"):
            if self.divergence.kind != "pearson_multi":
                raise FitError(
                    f"{self.formulation} optimizes all pairs jointly and needs the "
                    "multivariate divergence; set divergence kind to 'pearson_multi'"
                )
        elif self.divergence.kind not in _UNIVARIATE_KINDS:
            raise FitError(
                f"{self.formulation} extracts pairs one at a time and needs a "
                f"univariate divergence, one of {_UNIVARIATE_KINDS}"
            )

    @property
    def effective_whiten(self) -> bool:
        if self.whiten_inputs is None:
            return self.formulation in ("rcda", "mrcda")
        return self.whiten_inputs


@dataclass
class CanonicalBasis:
    """Fitted canonical vectors plus scaling factors and diagnostics.

    ``u_matrix``/``v_matrix`` hold the vectors exactly as optimized: unit
    norm for constrained formulations, while reconstruction formulations
    leave norms to the penalty balance (they approach 1 as the weights
    grow).  The ``*_normalized`` properties provide unit-column copies for
    reporting.  Vectors live in the preprocessed coordinate system recorded
    by ``transforms_x``/``transforms_y``.
    """

    u_matrix: np.ndarray
    v_matrix: np.ndarray
    gammas: ScalingMatrix
    objective_per_pair: np.ndarray
    diagnostics: dict
    formulation: str
    divergence: dv.DivergenceSpec | None
    transforms_x: tuple[Transform, ...] = ()
    transforms_y: tuple[Transform, ...] = ()

    @property
    def r(self) -> int:
        return self.u_matrix.shape[1]

    @property
    def u_normalized(self) -> np.ndarray:
        return self.u_matrix / np.linalg.norm(self.u_matrix, axis=0)

    @property
    def v_normalized(self) -> np.ndarray:
        return self.v_matrix / np.linalg.norm(self.v_matrix, axis=0)

    def raw_directions(self, side: str) -> np.ndarray:
        """Unit-norm directions mapped back to the original attribute space.

        The preprocessing chain is linear, so a direction in preprocessed
        coordinates corresponds to one in raw coordinates via the transposed
        linear parts, applied in reverse order.
        """
        mat = self.u_matrix if side == "x" else self.v_matrix
        transforms = self.transforms_x if side == "x" else self.transforms_y
        out = mat.astype(float).copy()
        for t in reversed(transforms):
            if t.kind == "rescale_unit":
                out = out / t.scale[:, None]
            elif t.kind == "whiten":
                out = t.scale @ out
        return out / np.linalg.norm(out, axis=0)

    @staticmethod
    def _stable_diagnostics(diag):
        # wall-clock is reported in process but never persisted: serialized
        # documents must be byte-identical across runs with equal seeds
        if isinstance(diag, dict):
            return {k: CanonicalBasis._stable_diagnostics(v)
                    for k, v in diag.items() if k != "seconds"}
        if isinstance(diag, list):
            return [CanonicalBasis._stable_diagnostics(v) for v in diag]
        return diag

    def to_json(self) -> str:
        div = None
        if self.divergence is not None:
            div = {
                "kind": self.divergence.kind,
                "mallows_order": self.divergence.mallows_order,
                "center_count": self.divergence.center_count,
                "ratio_regularization": self.divergence.ratio_regularization,
                "cv_grid": list(self.divergence.cv_grid),
                "bandwidth_policy": self.divergence.bandwidth_policy,
                "use_printed_cross_term": self.divergence.use_printed_cross_term,
            }
        doc = {
            "version": BASIS_SCHEMA_VERSION,
            "formulation": self.formulation,
            "divergence": div,
            "U": self.u_matrix.tolist(),
            "V": self.v_matrix.tolist(),
            "betas": self.gammas.betas.tolist(),
            "objectives": self.objective_per_pair.tolist(),
            "diagnostics": self._stable_diagnostics(self.diagnostics),
            "preprocessing": {
                "x": [t.to_jsonable() for t in self.transforms_x],
                "y": [t.to_jsonable() for t in self.transforms_y],
            },
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "CanonicalBasis":
        doc = json.loads(text)
        version = doc.get("version")
        if version != BASIS_SCHEMA_VERSION:
            raise DataError(
                f"unsupported basis schema {version!r}; expected {BASIS_SCHEMA_VERSION}"
            )
        div = doc["divergence"]
        spec = None
        if div is not None:
            spec = dv.DivergenceSpec(
                kind=div["kind"],
                mallows_order=div["mallows_order"],
                center_count=div["center_count"],
                ratio_regularization=div["ratio_regularization"],
                cv_grid=tuple(div["cv_grid"]),
                bandwidth_policy=div["bandwidth_policy"],
                use_printed_cross_term=div["use_printed_cross_term"],
            )
        return CanonicalBasis(
            u_matrix=np.asarray(doc["U"], dtype=float),
            v_matrix=np.asarray(doc["V"], dtype=float),
            gammas=ScalingMatrix(np.asarray(doc["betas"], dtype=float)),
            objective_per_pair=np.asarray(doc["objectives"], dtype=float),
            diagnostics=doc["diagnostics"],
            formulation=doc["formulation"],
            divergence=spec,
            transforms_x=tuple(Transform.from_jsonable(t)
                               for t in doc["preprocessing"]["x"]),
            transforms_y=tuple(Transform.from_jsonable(t)
                               for t in doc["preprocessing"]["y"]),
        )


# ---------------------------------------------------------------------------
# small numeric helpers
# ---------------------------------------------------------------------------


def _sort_rows(values: np.ndarray) -> np.ndarray:
    return values[np.lexsort(values.T[::-1])]


def _centered_second_moment(values: np.ndarray) -> np.ndarray:
    # reconstruction terms are defined on centered rows
    centered = values - values.mean(axis=0)
    return centered.T @ centered / values.shape[0]


def _complement_basis(prev: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``prev``'s columns."""
    if prev.shape[1] == 0:
        return np.eye(dim)
    q, _ = np.linalg.qr(prev, mode="complete")
    return q[:, prev.shape[1]:]


def _line_search_1d(phi, f0: float, max_evals: int = 30, hi: float = 1.0):
    """Derivative-free minimization of phi on t >= 0, anchored at phi(0)=f0.

    Golden-section shrinks [0, hi]; the best point is then polished with 1-d
    Nelder-Mead moves (reflection/expansion/contraction) that may leave the
    initial bracket.  Returns (t, phi(t)) with phi(t) <= f0, or (0, f0) when
    no improvement was found.
    """
    evals = 0
    best_t, best_f = 0.0, f0

    def ev(t):
        nonlocal evals, best_t, best_f
        f = phi(t)
        evals += 1
        if f < best_f:
            best_t, best_f = t, f
        return f

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = ev(c), ev(d)
    golden_budget = max(6, max_evals // 2)
    while evals < golden_budget:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = ev(d)

    # Nelder-Mead on an interval: simplex of two points around the incumbent.
    t_best = best_t if best_t > 0 else 0.5 * (a + b)
    h = max(1e-3 * hi, 0.25 * (b - a))
    s = [(t_best, best_f if best_t > 0 else ev(t_best)),
         (t_best + h, ev(t_best + h))]
    while evals < max_evals:
        s.sort(key=lambda p: p[1])
        (t1, f1), (t2, f2) = s
        tr = max(0.0, 2.0 * t1 - t2)
        fr = ev(tr)
        if fr < f1:
            te = max(0.0, 3.0 * t1 - 2.0 * t2)
            if evals < max_evals:
                fe = ev(te)
                s = [(te, fe), (tr, fr)] if fe < fr else [(tr, fr), (t1, f1)]
            else:
                s = [(tr, fr), (t1, f1)]
        else:
            tc = t1 + 0.5 * (t2 - t1)
            fcn = ev(tc)
            s = [(t1, f1), (tc, fcn)]
        if abs(s[0][0] - s[1][0]) < 1e-14:
            break

    if best_f > f0 - 1e-15 * max(1.0, abs(f0)):
        return 0.0, f0
    return best_t, best_f


def _rotate_on_sphere(u, tangent, angle):
    """Exact geodesic step on the unit sphere away from ``tangent``."""
    norm = np.linalg.norm(tangent)
    if norm == 0 or angle == 0:
        return u
    w = tangent / norm
    return np.cos(angle) * u - np.sin(angle) * w


def _golden_scalar(fun, lo, hi, evals=16):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    used = 2
    while used < evals:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        used += 1
    return (c, fc) if fc < fd else (d, fd)


# ---------------------------------------------------------------------------
# frozen-objective construction shared by all formulations
# ---------------------------------------------------------------------------


class _Medians:
    """Pairwise-distance medians of the (preprocessed) data rows, computed
    once per fit; bandwidths are derived from them at the current scaling."""

    def __init__(self, xv, yv, kind):
        self.needed = kind in ("quadratic", "pearson", "pearson_multi")
        if self.needed:
            self.med_x = dv.median_pairwise_distance(xv)
            self.med_y = dv.median_pairwise_distance(yv)

    def univariate(self, beta) -> dv.Bandwidths:
        return dv.Bandwidths(self.med_x, abs(beta) * self.med_y)

    def multi(self, betas) -> dv.Bandwidths:
        r = len(betas)
        return dv.Bandwidths(r * self.med_x, float(np.sum(betas)) * self.med_y)


def _freeze(kind, spec, medians, beta, xproj, yproj, seed):
    if kind == "mallows":
        return dv.FrozenMallows(normalized=True)
    if kind == "quadratic":
        return dv.FrozenQuadratic(medians.univariate(beta))
    if kind == "pearson":
        return dv.FrozenPearson(xproj, yproj, spec, medians.univariate(beta), seed)
    return dv.FrozenPearson(xproj, yproj, spec, medians.multi(beta), seed)


def _reported_value(kind, spec, medians, beta, xproj, yproj, seed) -> float:
    """Final per-pair objective in the public measure's convention (raw
    Mallows sum, quadratic estimate, clamped symmetric Pearson)."""
    if kind == "mallows":
        return dv.mallows_value(xproj, yproj)
    if kind == "quadratic":
        return dv.quadratic_value(xproj, yproj, medians.univariate(beta))
    return dv.pearson_value(xproj, yproj, spec, medians.univariate(beta), seed)


# ---------------------------------------------------------------------------
# constrained single-pair solver (cda)
# ---------------------------------------------------------------------------


def _pair_seed(cfg, pair_index, restart):
    """Independent RNG material for one (pair, restart): a generator for
    initialization plus integer seeds for center draws and reporting.

    ``pair_index`` of None tags a joint (all-pairs) fit."""
    tag = 0 if pair_index is None else pair_index + 1
    root = np.random.SeedSequence((cfg.seed, tag, restart))
    init_ss, freeze_ss, report_ss = root.spawn(3)
    rng = np.random.default_rng(init_ss)
    freeze_seed = int(freeze_ss.generate_state(1)[0])
    report_seed = int(report_ss.generate_state(1)[0])
    return rng, freeze_seed, report_seed


def _principal_direction(values) -> np.ndarray:
    centered = values - values.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0]


def _initial_reduced(values, basis, restart, rng) -> np.ndarray:
    if restart == 0:
        cand = basis.T @ _principal_direction(values)
        norm = np.linalg.norm(cand)
        if norm > 1e-12:
            return cand / norm
    cand = rng.standard_normal(basis.shape[1])
    return cand / np.linalg.norm(cand)


def _natural_gradient_pair(xv, yv, cfg, basis_u, basis_v, restart):
    """One restart of constrained geodesic descent inside the complement."""
    kind = cfg.divergence.kind
    medians = _Medians(xv, yv, kind)
    pair_index = basis_u.shape[0] - basis_u.shape[1]
    rng, freeze_seed, report_seed = _pair_seed(cfg, pair_index, restart)

    u = _initial_reduced(xv, basis_u, restart, rng)
    v = _initial_reduced(yv, basis_v, restart, rng)
    xu = xv @ basis_u
    yv_red = yv @ basis_v

    beta = None
    if cfg.scaling.mode == OPTIMIZED:
        beta = beta_rule(basis_u @ u, basis_v @ v, cfg.scaling.zero_threshold)

    history = []
    iterations = 0
    grad_norm = np.inf
    for iterations in range(cfg.max_outer_iters):
        if cfg.scaling.mode == RULE_BASED:
            beta = beta_rule(basis_u @ u, basis_v @ v, cfg.scaling.zero_threshold)
        xproj = xu @ u
        yproj = beta * (yv_red @ v)
        frozen = _freeze(kind, cfg.divergence, medians, beta, xproj, yproj,
                         freeze_seed)
        f0, dx, dy = frozen.value_and_gradient(xproj, yproj)
        gu = xu.T @ dx
        gv = beta * (yv_red.T @ dy)
        gu_t = gu - (gu @ u) * u
        gv_t = gv - (gv @ v) * v
        nu, nv = np.linalg.norm(gu_t), np.linalg.norm(gv_t)
        grad_norm = np.hypot(nu, nv)
        if grad_norm < cfg.grad_tolerance:
            break

        def phi(t):
            ut = _rotate_on_sphere(u, gu_t, t * nu)
            vt = _rotate_on_sphere(v, gv_t, t * nv)
            return frozen.value(xu @ ut, beta * (yv_red @ vt))

        t_step, f_new = _line_search_1d(phi, f0)
        if t_step == 0.0:
            break
        u = _rotate_on_sphere(u, gu_t, t_step * nu)
        v = _rotate_on_sphere(v, gv_t, t_step * nv)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)

        if cfg.scaling.mode == OPTIMIZED:
            xproj = xu @ u
            yraw = yv_red @ v

            def phi_beta(b):
                # bandwidths and ratio weights stay frozen during the search
                return frozen.value(xproj, b * yraw)

            beta, _ = _golden_scalar(phi_beta, beta / 3.0, 3.0 * beta)

        history.append(f_new)
        if len(history) >= 6:
            recent = history[-6:]
            span = max(recent) - min(recent)
            if span < 1e-9 * max(1.0, abs(recent[-1])):
                iterations += 1
                break

    # sign flips keep all constraints and the geodesic flow cannot cross
    # them; pick the relative orientation with the lower frozen objective
    xproj = xu @ u
    yraw = yv_red @ v
    frozen = _freeze(kind, cfg.divergence, medians, beta, xproj, beta * yraw,
                     freeze_seed)
    if frozen.value(xproj, -beta * yraw) < frozen.value(xproj, beta * yraw):
        v = -v

    u_full = basis_u @ u
    v_full = basis_v @ v
    if cfg.scaling.mode == RULE_BASED:
        beta = beta_rule(u_full, v_full, cfg.scaling.zero_threshold)
    objective = _reported_value(kind, cfg.divergence, medians, beta,
                                xv @ u_full, beta * (yv @ v_full), report_seed)
    return u_full, v_full, beta, objective, iterations, grad_norm


def fit_cda_pair(xv, yv, cfg: SolverConfig, previous_u, previous_v):
    """Extract one constrained pair orthogonal to the previous columns.

    ``xv``/``yv`` are preprocessed value matrices (rescaled, rows already
    canonicalized by the caller).  Returns (u, v, beta, objective,
    diagnostics) with the best restart kept.
    """
    m, l = xv.shape[1], yv.shape[1]
    previous_u = np.asarray(previous_u, dtype=float).reshape(m, -1)
    previous_v = np.asarray(previous_v, dtype=float).reshape(l, -1)
    basis_u = _complement_basis(previous_u, m)
    basis_v = _complement_basis(previous_v, l)
    if basis_u.shape[1] == 0 or basis_v.shape[1] == 0:
        raise FitError("no orthogonal directions left to search")

    t0 = time.perf_counter()
    results = []
    for restart in range(cfg.restarts):
        results.append(_natural_gradient_pair(xv, yv, cfg, basis_u, basis_v, restart))
    objectives = [r[3] for r in results]
    best = int(np.argmin(objectives))
    u, v, beta, objective, iterations, grad_norm = results[best]
    diag = {
        "iterations": iterations,
        "final_grad_norm": float(grad_norm),
        "restart_index": best,
        "restart_objectives": [float(o) for o in objectives],
        "seconds": time.perf_counter() - t0,
    }
    return u, v, beta, objective, diag


# ---------------------------------------------------------------------------
# constrained joint solver (mcda)
# ---------------------------------------------------------------------------


def _orthonormal_init(values, r, restart, rng):
    dim = values.shape[1]
    if restart == 0:
        centered = values - values.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        q, _ = np.linalg.qr(vt[:r].T)
        if q.shape[1] == r:
            return q
    q, _ = np.linalg.qr(rng.standard_normal((dim, r)))
    return q


def _stiefel_step(mat, grad, t):
    skew = grad @ mat.T - mat @ grad.T
    return scipy.linalg.expm(-t * skew) @ mat


def _natural_gradient_joint(xv, yv, cfg, r, restart):
    medians = _Medians(xv, yv, "pearson_multi")
    rng, freeze_seed, report_seed = _pair_seed(cfg, None, restart)

    u_mat = _orthonormal_init(xv, r, restart, rng)
    v_mat = _orthonormal_init(yv, r, restart, rng)
    thresh = cfg.scaling.zero_threshold

    def rule_betas(u, v):
        return np.array([beta_rule(u[:, i], v[:, i], thresh) for i in range(r)])

    betas = rule_betas(u_mat, v_mat)
    history = []
    iterations = 0
    grad_norm = np.inf
    for iterations in range(cfg.max_outer_iters):
        if cfg.scaling.mode == RULE_BASED:
            betas = rule_betas(u_mat, v_mat)
        xproj = xv @ u_mat
        yproj = (yv @ v_mat) * betas
        frozen = _freeze("pearson_multi", cfg.divergence, medians, betas,
                         xproj, yproj, freeze_seed)
        f0, dxp, dyp = frozen.value_and_gradient(xproj, yproj)
        gu = xv.T @ dxp
        gv = (yv.T @ dyp) * betas
        au = gu @ u_mat.T - u_mat @ gu.T
        av = gv @ v_mat.T - v_mat @ gv.T
        grad_norm = np.hypot(np.linalg.norm(au @ u_mat), np.linalg.norm(av @ v_mat))
        if grad_norm < cfg.grad_tolerance:
            break

        def phi(t):
            ut = _stiefel_step(u_mat, gu, t)
            vt = _stiefel_step(v_mat, gv, t)
            return frozen.value(xv @ ut, (yv @ vt) * betas)

        t_step, f_new = _line_search_1d(phi, f0)
        if t_step == 0.0:
            break
        u_mat = _stiefel_step(u_mat, gu, t_step)
        v_mat = _stiefel_step(v_mat, gv, t_step)

        if cfg.scaling.mode == OPTIMIZED:
            xproj = xv @ u_mat
            yraw = yv @ v_mat
            for i in range(r):
                def phi_beta(b, i=i):
                    trial = betas.copy()
                    trial[i] = b
                    return frozen.value(xproj, yraw * trial)

                betas[i], _ = _golden_scalar(phi_beta, betas[i] / 3.0,
                                             3.0 * betas[i])

        history.append(f_new)
        if len(history) >= 6:
            recent = history[-6:]
            if max(recent) - min(recent) < 1e-9 * max(1.0, abs(recent[-1])):
                iterations += 1
                break

    if cfg.scaling.mode == RULE_BASED:
        betas = rule_betas(u_mat, v_mat)

    # greedy per-column orientation pass (rotations cannot flip signs)
    frozen = _freeze("pearson_multi", cfg.divergence, medians, betas,
                     xv @ u_mat, (yv @ v_mat) * betas, freeze_seed)
    for i in range(r):
        xproj = xv @ u_mat
        yproj = (yv @ v_mat) * betas
        flipped = yproj.copy()
        flipped[:, i] = -flipped[:, i]
        if frozen.value(xproj, flipped) < frozen.value(xproj, yproj):
            v_mat[:, i] = -v_mat[:, i]

    xproj = xv @ u_mat
    yproj = (yv @ v_mat) * betas
    joint = dv.pearson_multi_value(xproj, yproj, cfg.divergence, betas,
                                   bw=medians.multi(betas), seed=report_seed)
    return u_mat, v_mat, betas, joint, iterations, grad_norm


# ---------------------------------------------------------------------------
# reconstruction-relaxed solvers (rcda, mrcda)
# ---------------------------------------------------------------------------


def reconstruction_cost(u, second_moment, weight) -> float:
    """weight/n * sum_i ||u u' z_i - z_i||^2 via the second-moment matrix."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        usu = u @ second_moment @ u
        return float(weight * ((u @ u - 2.0) * usu + np.trace(second_moment)))
    p = u @ u.T
    ps = p @ second_moment
    return float(weight * (np.trace(p @ ps) - 2.0 * np.trace(ps)
                           + np.trace(second_moment)))


def _reconstruction_grad(u, second_moment, weight):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        su = second_moment @ u
        return 2.0 * weight * ((u @ su) * u + (u @ u - 2.0) * su)
    p = u @ u.T
    su = second_moment @ u
    return 2.0 * weight * (p @ su + second_moment @ (p @ u) - 2.0 * su)


def _lbfgs(fun_grad, z0, gtol=1e-9, maxiter=200):
    from scipy.optimize import minimize

    result = minimize(fun_grad, z0, jac=True, method="L-BFGS-B",
                      options={"maxcor": 10, "maxiter": maxiter,
                               "ftol": 1e-14, "gtol": gtol})
    return result


def _steepest_descent(fun_grad, z0, iters=100):
    """Backtracking gradient descent used only when L-BFGS aborts."""
    z = z0.copy()
    f, g = fun_grad(z)
    step = 1.0
    for _ in range(iters):
        gnorm = np.linalg.norm(g)
        if gnorm < 1e-12:
            break
        while step > 1e-16:
            trial = z - step * g
            ft, gt = fun_grad(trial)
            if ft < f:
                z, f, g = trial, ft, gt
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    return z, f


def _rcda_restart(xv, yv, cfg, basis_u, basis_v, restart):
    kind = cfg.divergence.kind
    medians = _Medians(xv, yv, kind)
    n, k = xv.shape[0], yv.shape[0]
    s_x = _centered_second_moment(xv)
    s_y = _centered_second_moment(yv)
    sred_u = basis_u.T @ s_x @ basis_u
    sred_v = basis_v.T @ s_y @ basis_v
    tr_x, tr_y = np.trace(s_x), np.trace(s_y)
    xu = xv @ basis_u
    yv_red = yv @ basis_v
    p, q = basis_u.shape[1], basis_v.shape[1]

    rng, freeze_seed, report_seed = _pair_seed(cfg, basis_u.shape[0] - p, restart)

    u = _initial_reduced(xv, basis_u, restart, rng)
    v = _initial_reduced(yv, basis_v, restart, rng)
    optimize_beta = cfg.scaling.mode == OPTIMIZED
    beta = beta_rule(basis_u @ u, basis_v @ v, cfg.scaling.zero_threshold)

    def recon_value_grad(uu, vv):
        val = (cfg.lambda_recon * ((uu @ uu - 2.0) * (uu @ sred_u @ uu) + tr_x)
               + cfg.delta_recon * ((vv @ vv - 2.0) * (vv @ sred_v @ vv) + tr_y))
        gu = _reconstruction_grad(uu, sred_u, cfg.lambda_recon)
        gv = _reconstruction_grad(vv, sred_v, cfg.delta_recon)
        return val, gu, gv

    fell_back = False
    prev_total = np.inf
    outer_used = 0
    total = np.inf
    for outer in range(min(cfg.max_outer_iters, 25)):
        outer_used = outer + 1
        if not optimize_beta:
            beta = beta_rule(basis_u @ u, basis_v @ v, cfg.scaling.zero_threshold)
        frozen = _freeze(kind, cfg.divergence, medians, beta,
                         xu @ u, beta * (yv_red @ v), freeze_seed)

        def fun_grad(z):
            uu, vv = z[:p], z[p:p + q]
            b = z[-1] if optimize_beta else beta
            xp = xu @ uu
            yraw = yv_red @ vv
            yp = b * yraw
            val, gu, gv = recon_value_grad(uu, vv)
            div_val, dx, dy = frozen.value_and_gradient(xp, yp)
            val += div_val
            gu = gu + xu.T @ dx
            gv = gv + b * (yv_red.T @ dy)
            grad = np.concatenate([gu, gv, [dy @ yraw]]) if optimize_beta \
                else np.concatenate([gu, gv])
            return val, grad

        z0 = np.concatenate([u, v, [beta]]) if optimize_beta \
            else np.concatenate([u, v])
        result = _lbfgs(fun_grad, z0, gtol=min(cfg.grad_tolerance, 1e-9))
        z = result.x
        total = result.fun
        if not result.success and result.status != 1:
            z, total = _steepest_descent(fun_grad, z0)
            fell_back = True
        u, v = z[:p], z[p:p + q]
        if optimize_beta:
            beta = float(z[-1])
        if abs(prev_total - total) < 1e-8 * max(1.0, abs(total)):
            break
        prev_total = total

    u_full = basis_u @ u
    v_full = basis_v @ v
    if not optimize_beta:
        beta = beta_rule(u_full, v_full, cfg.scaling.zero_threshold)
    objective = _reported_value(kind, cfg.divergence, medians, beta,
                                xv @ u_full, beta * (yv @ v_full), report_seed)
    return (u_full, v_full, beta, objective, outer_used, float(total), fell_back)


def fit_rcda_pair(xv, yv, cfg: SolverConfig, previous_u, previous_v):
    """One reconstruction-relaxed pair, orthogonal to previous columns.

    Unconstrained L-BFGS inside the orthogonal complement; the scaling
    factor either follows the rule between optimizer rounds or joins the
    variable block.  Returns (u, v, beta, objective, diagnostics); ``u`` and
    ``v`` are the unnormalized optimizer output.
    """
    m, l = xv.shape[1], yv.shape[1]
    previous_u = np.asarray(previous_u, dtype=float).reshape(m, -1)
    previous_v = np.asarray(previous_v, dtype=float).reshape(l, -1)
    basis_u = _complement_basis(previous_u, m)
    basis_v = _complement_basis(previous_v, l)
    if basis_u.shape[1] == 0 or basis_v.shape[1] == 0:
        raise FitError("no orthogonal directions left to search")

    t0 = time.perf_counter()
    results = [_rcda_restart(xv, yv, cfg, basis_u, basis_v, restart)
               for restart in range(cfg.restarts)]
    totals = [r[5] for r in results]
    best = int(np.argmin(totals))
    u, v, beta, objective, outer_used, total, fell_back = results[best]
    diag = {
        "iterations": outer_used,
        "final_grad_norm": None,
        "restart_index": best,
        "restart_objectives": [float(t) for t in totals],
        "line_search_fallback": fell_back,
        "seconds": time.perf_counter() - t0,
    }
    return u, v, beta, objective, diag


def _mrcda_restart(xv, yv, cfg, r, restart):
    medians = _Medians(xv, yv, "pearson_multi")
    n, k = xv.shape[0], yv.shape[0]
    m, l = xv.shape[1], yv.shape[1]
    s_x = _centered_second_moment(xv)
    s_y = _centered_second_moment(yv)

    rng, freeze_seed, report_seed = _pair_seed(cfg, None, restart)

    u_mat = _orthonormal_init(xv, r, restart, rng)
    v_mat = _orthonormal_init(yv, r, restart, rng)
    thresh = cfg.scaling.zero_threshold
    optimize_beta = cfg.scaling.mode == OPTIMIZED

    def rule_betas(u, v):
        return np.array([beta_rule(u[:, i], v[:, i], thresh) for i in range(r)])

    betas = rule_betas(u_mat, v_mat)
    prev_total = np.inf
    outer_used = 0
    fell_back = False
    total = np.inf
    for outer in range(min(cfg.max_outer_iters, 12)):
        outer_used = outer + 1
        if not optimize_beta:
            betas = rule_betas(u_mat, v_mat)
        frozen = _freeze("pearson_multi", cfg.divergence, medians, betas,
                         xv @ u_mat, (yv @ v_mat) * betas, freeze_seed)

        def unpack(z):
            u = z[:m * r].reshape(m, r)
            v = z[m * r:m * r + l * r].reshape(l, r)
            b = z[-r:] if optimize_beta else betas
            return u, v, b

        def fun_grad(z):
            u, v, b = unpack(z)
            xp = xv @ u
            yraw = yv @ v
            yp = yraw * b
            div_val, dxp, dyp = frozen.value_and_gradient(xp, yp)
            val = (reconstruction_cost(u, s_x, cfg.lambda_recon)
                   + reconstruction_cost(v, s_y, cfg.delta_recon)
                   + div_val)
            gu = _reconstruction_grad(u, s_x, cfg.lambda_recon) + xv.T @ dxp
            gv = (_reconstruction_grad(v, s_y, cfg.delta_recon)
                  + (yv.T @ dyp) * b)
            parts = [gu.ravel(), gv.ravel()]
            if optimize_beta:
                parts.append((dyp * yraw).sum(axis=0))
            return val, np.concatenate(parts)

        parts = [u_mat.ravel(), v_mat.ravel()]
        if optimize_beta:
            parts.append(betas)
        z0 = np.concatenate(parts)
        result = _lbfgs(fun_grad, z0, gtol=min(cfg.grad_tolerance, 1e-9),
                        maxiter=80)
        z, total = result.x, result.fun
        if not result.success and result.status != 1:
            z, total = _steepest_descent(fun_grad, z0)
            fell_back = True
        u_mat, v_mat, b = unpack(z)
        if optimize_beta:
            betas = np.asarray(b, dtype=float)
        if abs(prev_total - total) < 1e-6 * max(1.0, abs(total)):
            break
        prev_total = total

    if not optimize_beta:
        betas = rule_betas(u_mat, v_mat)
    joint = dv.pearson_multi_value(xv @ u_mat, (yv @ v_mat) * betas,
                                   cfg.divergence, betas,
                                   bw=medians.multi(betas), seed=report_seed)
    return u_mat, v_mat, betas, joint, outer_used, float(total), fell_back


# ---------------------------------------------------------------------------
# top-level fit and projection
# ---------------------------------------------------------------------------


def _resolve_r(cfg, m, l, n, k) -> int:
    if cfg.r_pairs == "auto":
        r = min(m, l, n, k)
    else:
        r = int(cfg.r_pairs)
    if r < 1:
        raise FitError("nothing to fit: need at least one canonical pair")
    if r > min(m, l):
        raise FitError(
            f"r_pairs={r} exceeds the {min(m, l)} orthogonal pairs this "
            "data admits"
        )
    return r


def _preprocess(ds: DataSet, cfg: SolverConfig) -> DataSet:
    # Reconstruction formulations center only inside the reconstruction
    # term (via the covariance); the divergence sees the data as given, so
    # without whitening no extra transform is applied here.
    out = ds if ds.rescaled_unit else rescale_unit(ds)
    if cfg.effective_whiten:
        out = whiten(out)
    return out


def _per_pair_objectives(cfg, medians, u_mat, v_mat, betas, xv, yv, seed):
    values = []
    for i in range(u_mat.shape[1]):
        xp = xv @ u_mat[:, i]
        yp = betas[i] * (yv @ v_mat[:, i])
        kind = cfg.divergence.kind
        if kind == "pearson_multi":
            spec = replace(cfg.divergence, kind="pearson")
            values.append(dv.pearson_value(xp, yp, spec,
                                           medians.univariate(betas[i]), seed))
        else:
            values.append(_reported_value(kind, cfg.divergence, medians,
                                          betas[i], xp, yp, seed))
    return np.asarray(values)


def fit(x: DataSet, y: DataSet, cfg: SolverConfig) -> CanonicalBasis:
    """Fit canonical vector pairs between two datasets.

    Inputs are rescaled to [0, 1] automatically if they are not already;
    reconstruction formulations additionally center (and by default whiten)
    them.  The result is deterministic given ``cfg.seed`` and invariant to
    the row order of either dataset.
    """
    # canonicalize row order before any preprocessing: every objective is a
    # row-multiset function, and whitening sums must accumulate in a fixed
    # order for results to be bit-identical under input shuffles
    x = replace(x, values=_sort_rows(x.values))
    y = replace(y, values=_sort_rows(y.values))
    x_pre = _preprocess(x, cfg)
    y_pre = _preprocess(y, cfg)
    xv = _sort_rows(x_pre.values)
    yv = _sort_rows(y_pre.values)
    n, m = xv.shape
    k, l = yv.shape
    r = _resolve_r(cfg, m, l, n, k)
    kind = cfg.divergence.kind
    medians = _Medians(xv, yv, kind)
    report_seed = cfg.seed

    if cfg.formulation in ("cda", "rcda"):
        pair_fn = fit_cda_pair if cfg.formulation == "cda" else fit_rcda_pair
        u_cols, v_cols, betas, pair_diags = [], [], [], []
        prev_u = np.zeros((m, 0))
        prev_v = np.zeros((l, 0))
        for _ in range(r):
            u, v, beta, _, diag = pair_fn(xv, yv, cfg, prev_u, prev_v)
            u_cols.append(u)
            v_cols.append(v)
            betas.append(beta)
            pair_diags.append(diag)
            prev_u = np.column_stack([prev_u, u / np.linalg.norm(u)])
            prev_v = np.column_stack([prev_v, v / np.linalg.norm(v)])
        u_mat = np.column_stack(u_cols)
        v_mat = np.column_stack(v_cols)
        betas = np.asarray(betas)
        diagnostics = {"pairs": pair_diags}
    else:
        t0 = time.perf_counter()
        restart_fn = (_natural_gradient_joint if cfg.formulation == "mcda"
                      else _mrcda_restart)
        results = [restart_fn(xv, yv, cfg, r, restart)
                   for restart in range(cfg.restarts)]
        key = [res[3] if cfg.formulation == "mcda" else res[5]
               for res in results]
        best = int(np.argmin(key))
        res = results[best]
        u_mat, v_mat, betas, joint = res[0], res[1], np.asarray(res[2]), res[3]
        diagnostics = {
            "joint_objective": float(joint),
            "restart_index": best,
            "restart_objectives": [float(k_) for k_ in key],
            "iterations": res[4],
            "seconds": time.perf_counter() - t0,
        }

    objectives = _per_pair_objectives(cfg, medians, u_mat, v_mat, betas,
                                      xv, yv, report_seed)
    diagnostics["formulation"] = cfg.formulation
    diagnostics["seed"] = cfg.seed
    diagnostics["scaling_mode"] = cfg.scaling.mode
    return CanonicalBasis(
        u_matrix=u_mat,
        v_matrix=v_mat,
        gammas=ScalingMatrix(betas),
        objective_per_pair=objectives,
        diagnostics=diagnostics,
        formulation=cfg.formulation,
        divergence=cfg.divergence,
        transforms_x=x_pre.transforms,
        transforms_y=y_pre.transforms,
    )


def fit_mcda(x: DataSet, y: DataSet, cfg: SolverConfig) -> CanonicalBasis:
    """Joint constrained fit of all pairs (requires pearson_multi)."""
    if cfg.formulation != "mcda":
        cfg = replace(cfg, formulation="mcda")
    return fit(x, y, cfg)


def fit_mrcda(x: DataSet, y: DataSet, cfg: SolverConfig) -> CanonicalBasis:
    """Joint reconstruction-relaxed fit of all pairs (requires pearson_multi)."""
    if cfg.formulation != "mrcda":
        cfg = replace(cfg, formulation="mrcda")
    return fit(x, y, cfg)


def project(basis: CanonicalBasis, ds: DataSet, side: str) -> np.ndarray:
    """Map a dataset into the fitted latent space.

    Side "x" returns U'-projected rows; side "y" returns rows projected by
    V and scaled per pair.  ``ds`` must be in the same state as the data
    passed to ``fit`` (its preprocessing chain is re-applied here).
    """
    if side not in ("x", "y"):
        raise DataError(f"side must be 'x' or 'y', got {side!r}")
    mat = basis.u_matrix if side == "x" else basis.v_matrix
    transforms = basis.transforms_x if side == "x" else basis.transforms_y
    if ds.n_attributes != mat.shape[0]:
        raise DataError(
            f"dataset has {ds.n_attributes} attributes but side {side!r} "
            f"expects {mat.shape[0]}"
        )
    values = apply_transforms(ds.values, transforms)
    out = values @ mat
    if side == "y":
        out = out * basis.gammas.betas[None, :]
    return out
