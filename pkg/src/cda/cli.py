"""Command-line front end.

Subcommands: gen | fit | project | bench | cluster-dist.  Every command is
deterministic given its full flag set including --seed.  Exit codes: 0 on
success, 1 on a runtime/domain error, 2 on a usage error.  The environment
variable CDA_SEED supplies the default seed when --seed is not given.

`fit` reads options from an optional JSON config file; explicit flags
override config values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from . import solver as sv
from .baselines import fit_linear_cca
from .dataset import load_csv, save_csv
from .divergence import DivergenceSpec
from .errors import CdaError, DataError
from .evaluation import ClusterRecord, cluster_distance, cluster_potential
from .scaling import ScalingMode
from .synthetic import SyntheticSpec, generate_synthetic

_GEN_OPTIONS = {
    "relation": (str, "linear"),
    "n": (int, 1000),
    "k": (int, 1000),
    "m": (int, 7),
    "l": (int, 5),
    "drop_fraction": (float, 0.0),
    "shuffle": (bool, False),
    "seed": (int, None),
}

# fit options: name -> (type, default)
_FIT_OPTIONS = {
    "method": (str, "cda"),
    "divergence": (str, "mallows"),
    "beta": (str, "rule"),
    "restarts": (int, 5),
    "seed": (int, None),
    "r_pairs": (str, "auto"),
    "lambda_recon": (float, 0.5),
    "delta_recon": (float, 0.5),
    "max_outer_iters": (int, 300),
    "grad_tolerance": (float, 1e-6),
    "whiten": (bool, None),
    "center_count": (int, None),
    "ratio_regularization": (str, "0.1"),
}


def _default_seed() -> int:
    env = os.environ.get("CDA_SEED")
    return int(env) if env else 0


def _load_config(path, options) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - set(options)
    if unknown:
        raise DataError(
            f"unknown config keys {sorted(unknown)}; "
            f"valid keys are {sorted(options)}"
        )
    return cfg


def _merge_options(args, options) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    merged = {name: default for name, (_, default) in options.items()}
    if getattr(args, "config", None):
        merged.update(_load_config(args.config, options))
    for name in options:
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            merged[name] = flag_val
    if merged.get("seed") is None:
        merged["seed"] = _default_seed()
    return merged


def _merge_fit_options(args) -> dict:
    return _merge_options(args, _FIT_OPTIONS)


def _solver_config(opts) -> sv.SolverConfig | None:
    """None means the CCA baseline."""
    if opts["method"] == "cca":
        return None
    reg = opts["ratio_regularization"]
    if isinstance(reg, str) and reg != "cv":
        reg = float(reg)
    r_pairs = opts["r_pairs"]
    if isinstance(r_pairs, str) and r_pairs != "auto":
        r_pairs = int(r_pairs)
    return sv.SolverConfig(
        formulation=opts["method"],
        divergence=DivergenceSpec(
            kind=opts["divergence"],
            center_count=opts["center_count"],
            ratio_regularization=reg,
        ),
        scaling=ScalingMode(mode=opts["beta"]),
        lambda_recon=opts["lambda_recon"],
        delta_recon=opts["delta_recon"],
        max_outer_iters=opts["max_outer_iters"],
        grad_tolerance=opts["grad_tolerance"],
        restarts=opts["restarts"],
        seed=opts["seed"],
        r_pairs=r_pairs,
        whiten_inputs=opts["whiten"],
    )


def _add_fit_flags(parser):
    parser.add_argument("--method", choices=["cda", "mcda", "rcda", "mrcda", "cca"])
    parser.add_argument("--divergence",
                        choices=["mallows", "quadratic", "pearson", "pearson_multi"])
    parser.add_argument("--beta", choices=["rule", "optimize"])
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--r-pairs", dest="r_pairs")
    parser.add_argument("--lambda-recon", dest="lambda_recon", type=float)
    parser.add_argument("--delta-recon", dest="delta_recon", type=float)
    parser.add_argument("--max-outer-iters", dest="max_outer_iters", type=int)
    parser.add_argument("--grad-tolerance", dest="grad_tolerance", type=float)
    parser.add_argument("--whiten", dest="whiten", action="store_true", default=None)
    parser.add_argument("--no-whiten", dest="whiten", action="store_false")
    parser.add_argument("--center-count", dest="center_count", type=int)
    parser.add_argument("--ratio-regularization", dest="ratio_regularization")
    parser.add_argument("--config", help="JSON file with fit options")


def _cca_basis(result) -> sv.CanonicalBasis:
    from .scaling import ScalingMatrix

    return sv.CanonicalBasis(
        u_matrix=result.u_matrix,
        v_matrix=result.v_matrix,
        gammas=ScalingMatrix(np.ones(result.r)),
        objective_per_pair=1.0 - result.correlations,
        diagnostics={"correlations": result.correlations.tolist(),
                     "formulation": "cca"},
        formulation="cca",
        divergence=None,
        transforms_x=result.transforms_x,
        transforms_y=result.transforms_y,
    )


def cmd_gen(args) -> int:
    opts = _merge_options(args, _GEN_OPTIONS)
    seed = opts["seed"]
    spec = SyntheticSpec(
        relation_kind=opts["relation"], n=opts["n"], k=opts["k"],
        m=opts["m"], l=opts["l"], drop_fraction=opts["drop_fraction"],
        shuffle_rows=opts["shuffle"], seed=seed,
    )
    x, y, gt = generate_synthetic(spec)
    save_csv(x, args.out_x)
    save_csv(y, args.out_y)
    with open(args.out_gt, "w", encoding="utf-8") as fh:
        json.dump({
            "relation_kind": spec.relation_kind,
            "n_relations": gt.n_relations,
            "U": gt.u_matrix.tolist(),
            "V": gt.v_matrix.tolist(),
            "seed": seed,
        }, fh, indent=2)
    print(f"seed={seed}")
    return 0


def cmd_fit(args) -> int:
    opts = _merge_fit_options(args)
    x = load_csv(args.x, has_header=not args.no_header)
    y = load_csv(args.y, has_header=not args.no_header)
    cfg = _solver_config(opts)
    if cfg is None:
        basis = _cca_basis(fit_linear_cca(x, y))
    else:
        basis = sv.fit(x, y, cfg)
    text = basis.to_json()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    if args.verbose:
        for i, pair in enumerate(basis.diagnostics.get("pairs", [])):
            print(f"pair {i}: iterations={pair['iterations']} "
                  f"restart={pair['restart_index']} "
                  f"objective={basis.objective_per_pair[i]!r}")
    print(f"wrote {args.out} ({basis.r} pairs)")
    return 0


def cmd_project(args) -> int:
    with open(args.basis, "r", encoding="utf-8") as fh:
        basis = sv.CanonicalBasis.from_json(fh.read())
    data = load_csv(args.data, has_header=not args.no_header)
    coords = sv.project(basis, data, args.side)
    save_csv(coords, args.out, names=[f"z_{j}" for j in range(coords.shape[1])])
    print(f"wrote {args.out} ({coords.shape[0]} rows x {coords.shape[1]} columns)")
    return 0


def cmd_bench(args) -> int:
    methods = args.methods.split(",") if args.methods else None
    kinds = args.kinds.split(",") if args.kinds else None
    report = ev.run_benchmark(
        args.suite, trials=args.trials,
        seed=args.seed if args.seed is not None else _default_seed(),
        methods=methods, kinds=kinds, n=args.n, k=args.k, m=args.m, l=args.l,
        restarts=args.restarts, jobs=args.jobs,
    )
    print(report.format_table())
    if args.out:
        with open(args.out + ".csv", "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(report.format_table())
        print(f"wrote {args.out}.csv and {args.out}.txt")
    return 0


def cmd_cluster_dist(args) -> int:
    opts = _merge_fit_options(args)
    cfg = _solver_config(opts)
    if cfg is None:
        raise DataError("cluster distances need a divergence method, not cca")
    c1 = ClusterRecord(
        data=load_csv(args.c1, has_header=not args.no_header),
        cover=frozenset((args.cover or "c1").split(",")),
        cost=args.cost,
    )
    c2_data = load_csv(args.c2, has_header=not args.no_header)
    w = min(c1.data.n_attributes, c2_data.n_attributes)
    c2 = ClusterRecord(data=c2_data, cover=frozenset({"c2"}), cost=1.0)
    dist = cluster_distance(c1, c2, cfg)
    print(f"dist={dist!r} w={w}")
    if args.selected is not None:
        with open(args.selected, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        selected = [
            ClusterRecord(
                data=load_csv(entry["path"], has_header=not args.no_header),
                cover=frozenset(entry["cover"]),
                cost=float(entry["cost"]),
            )
            for entry in manifest
        ]
        potent = cluster_potential(c1, selected, cfg)
        print(f"potent={potent!r} selected={len(selected)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cda",
        description="Canonical divergence analysis: generate benchmark data, "
                    "fit canonical vector pairs, project data into the latent "
                    "space, and run benchmark suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic benchmark data")
    p.add_argument("--relation", choices=["linear", "mixed", "nonlinear"])
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--l", type=int)
    p.add_argument("--drop-fraction", dest="drop_fraction", type=float)
    p.add_argument("--shuffle", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with generator options")
    p.add_argument("--out-x", dest="out_x", required=True)
    p.add_argument("--out-y", dest="out_y", required=True)
    p.add_argument("--out-gt", dest="out_gt", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit canonical vector pairs")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--verbose", "-v", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="project data into a fitted latent space")
    p.add_argument("--basis", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--side", choices=["x", "y"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=list(ev.SUITES), required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--kinds", help="comma-separated relation kinds")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--m", type=int, default=7)
    p.add_argument("--l", type=int, default=5)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output file prefix")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("cluster-dist",
                       help="divergence distance between two cluster slices")
    p.add_argument("--c1", required=True)
    p.add_argument("--c2", required=True)
    p.add_argument("--cover", help="comma-separated object ids covered by c1")
    p.add_argument("--cost", type=float, default=1.0)
    p.add_argument("--selected", help="JSON manifest of already-selected clusters")
    p.add_argument("--no-header", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_cluster_dist)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
