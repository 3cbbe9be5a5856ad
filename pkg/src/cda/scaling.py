"""Scaling factors that bring the two projections onto a common domain.

For [0, 1]-rescaled attributes and unit-norm directions, u^T x lies in
[-sqrt(m_eff), sqrt(m_eff)] where m_eff counts the non-zero entries of u;
beta = sqrt(m_eff / l_eff) maps the second projection onto the first's
domain.  Optimizer iterates are never exactly zero, so "non-zero" means
magnitude above a configurable threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError

RULE_BASED = "rule"
OPTIMIZED = "optimize"

_MODE_ALIASES = {"rule_based": RULE_BASED, "optimized": OPTIMIZED}


@dataclass(frozen=True)
class ScalingMode:
    mode: str = RULE_BASED
    zero_threshold: float = 1e-8

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in (RULE_BASED, OPTIMIZED):
            raise FitError(f"unknown scaling mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.zero_threshold < 0:
            raise FitError("zero_threshold must be >= 0")


@dataclass(frozen=True)
class ScalingMatrix:
    """Diagonal of per-pair scaling factors, all non-zero."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        if np.any(betas == 0):
            raise FitError("scaling factors must be non-zero")
        object.__setattr__(self, "betas", betas)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.betas)


def effective_support(vec, threshold: float = 1e-8) -> int:
    """Number of entries of ``vec`` whose magnitude exceeds ``threshold``
    times the largest magnitude.

    The reference point makes the count scale-invariant: reconstruction
    formulations produce iterates with norms far from 1, where an absolute
    cutoff would miscount the support of a perfectly good direction.
    """
    mags = np.abs(np.asarray(vec, dtype=float))
    ref = mags.max() if mags.size else 0.0
    if ref == 0.0:
        return 0
    return int(np.count_nonzero(mags > threshold * ref))


def beta_rule(u, v, threshold: float = 1e-8) -> float:
    """sqrt(m_eff / l_eff) over the thresholded supports of u and v."""
    m_eff = effective_support(u, threshold)
    l_eff = effective_support(v, threshold)
    if m_eff == 0 or l_eff == 0:
        raise FitError("degenerate direction: all entries below the zero threshold")
    return float(np.sqrt(m_eff / l_eff))
