"""
Scoring subspace-cluster redundancy
===================================

Subspace clusters live on different attribute sets and object sets, so they
cannot be compared coordinate-wise.  The divergence distance fits canonical
pairs between two cluster slices and averages the per-pair objectives.  The
greedy potential score ranks candidates by fresh object coverage per unit
cost, modulated by the summed distance to the clusters already selected; an
exactly-zero distance sum marks a duplicate and scores 0 outright.
"""

import numpy as np

from cda import ClusterRecord, cluster_distance, cluster_potential
from cda.dataset import from_values
from cda.evaluation import method_config

rng = np.random.default_rng(8)

# %% Three clusters: two Gaussian clouds (near-duplicates of each other) and
# one bimodal cloud with a genuinely different shape.
base = rng.standard_normal((60, 2))
dup = base + 0.05 * rng.standard_normal((60, 2))
bimodal = 0.1 * rng.standard_normal((60, 2)) \
    + 3.0 * (rng.integers(0, 2, (60, 2)) * 2 - 1)

c_base = ClusterRecord(from_values(base), cover=frozenset(range(60)), cost=2.0)
c_dup = ClusterRecord(from_values(dup), cover=frozenset(range(40, 100)), cost=2.0)
c_new = ClusterRecord(from_values(bimodal), cover=frozenset(range(90, 150)), cost=2.0)

cfg = method_config("cda_m", seed=0, restarts=1)

# %% Distances: the near-duplicate sits much closer to the base cluster than
# the structurally different cloud.
d_dup = cluster_distance(c_base, c_dup, cfg)
d_new = cluster_distance(c_base, c_new, cfg)
print(f"distance base -> duplicate: {d_dup:10.2f}")
print(f"distance base -> bimodal:   {d_new:10.2f}")

# %% Potentials relative to a selection holding the base cluster.  Fresh
# coverage enters the numerator; cost and the summed distance enter the
# denominator.
selected = [c_base]
print(f"\nfresh cover duplicate: {len(c_dup.cover - c_base.cover)}, "
      f"bimodal: {len(c_new.cover - c_base.cover)}")
print(f"potential of duplicate: {cluster_potential(c_dup, selected, cfg):.4f}")
print(f"potential of bimodal:   {cluster_potential(c_new, selected, cfg):.4f}")

# %% With an empty selection the score reduces to coverage per cost.
print(f"\nfirst-step potential of base: "
      f"{cluster_potential(c_base, [], cfg):.1f} "
      f"(= {len(c_base.cover)} objects / cost {c_base.cost})")

# %% An exact duplicate slice: under the quadratic measure identical samples
# diverge by exactly zero, which the guard maps to a zero score instead of a
# division by zero.
cfg_q = method_config("cda_q", seed=0, restarts=1)
clone = ClusterRecord(c_base.data, cover=frozenset(range(30, 90)), cost=2.0)
print(f"\ndistance base -> exact clone (quadratic): "
      f"{cluster_distance(c_base, clone, cfg_q):.2e}")
print(f"potential of exact clone: "
      f"{cluster_potential(clone, [c_base], cfg_q):.1f} (guarded duplicate)")
