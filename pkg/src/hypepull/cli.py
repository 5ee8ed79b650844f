"""Command-line entry point.

Subcommands produce plain-file artifacts (JSON + CSV) with embedded
resolved configuration and version string; reruns with identical flags and
seeds are bit-identical. The companion vizkit package renders these
artifacts to figures.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import VERSION_STRING, io, lorentz
from .errors import (ConfigError, DataError, DomainError, HypepullError,
                     NumericError)
from .geodesic import (DiscreteCurve, GeodesicConfig, base_geodesic,
                       curve_energy, decode_curve, optimize_geodesic,
                       spline_energy, via_origin_init)
from .gplvm import (BackConstraint, GraphPrior, LatentModel, Priors,
                    TrainConfig, TrajectoryPrior, stress_loss,
                    stress_minimizing_init, train_map)
from .kernels import EuclSEKernel, Hyp2SEKernel, Hyp3SEKernel
from .pullback import expected_metric_many

GRID_SCHEMA = "hypepull/grid/v1"
CURVE_SCHEMA = "hypepull/curve/v1"
UNCERTAINTY_SCHEMA = "hypepull/uncertainty/v1"


def _n_threads() -> int:
    env = os.environ.get("HYPEPULL_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _dump_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_resolved_config(outdir: Path, config: dict) -> None:
    _dump_json(outdir / "resolved_config.json",
               {"version": VERSION_STRING, "config": config})


def _build_kernel(manifold, dim, tau, kappa, mc_samples, seed):
    if manifold == "euclidean":
        return EuclSEKernel(tau=tau, kappa=kappa, dim=dim)
    if dim == 2:
        return Hyp2SEKernel(tau=tau, kappa=kappa, n_samples=mc_samples,
                            seed=seed)
    if dim == 3:
        return Hyp3SEKernel(tau=tau, kappa=kappa)
    raise ConfigError("hyperbolic latent dimension must be 2 or 3")


# ---------------------------------------------------------------------------
# metric volume grids
# ---------------------------------------------------------------------------

def _metric_volumes(gs: np.ndarray, manifold: str) -> np.ndarray:
    eig = np.linalg.eigvalsh(gs)
    if manifold == "hyperbolic":
        idx = np.argmin(np.abs(eig), axis=1)
        mask = np.ones(eig.shape, dtype=bool)
        mask[np.arange(len(eig)), idx] = False
        eig = eig[mask].reshape(len(eig), -1)
    prod = np.prod(eig, axis=1)
    if np.any(prod < -1e-9):
        raise NumericError("negative metric determinant on the grid")
    return np.sqrt(np.maximum(prod, 0.0))


def compute_volume_grid(model: LatentModel, resolution: int):
    """Metric volume on a 2D chart grid.

    Hyperbolic models use a Poincare grid over the unit square with
    off-ball points dropped (3D latents are sliced at third coordinate 0);
    Euclidean models use a rectangular grid over the padded data range.
    Evaluation is chunked over a worker pool; outputs are ordered by grid
    index and independent of the pool size.
    """
    if model.manifold == "hyperbolic":
        lin = np.linspace(-1.0, 1.0, resolution)
        uu, vv = np.meshgrid(lin, lin, indexing="ij")
        coords = np.column_stack([uu.ravel(), vv.ravel()])
        keep = np.sum(coords**2, axis=1) < 1.0
        coords = coords[keep]
        if model.kernel.dim == 3:
            full = np.column_stack([coords, np.zeros(len(coords))])
        else:
            full = coords
        latent = np.stack([lorentz.poincare_to_lorentz(p) for p in full])
    else:
        lo = model.X.min(axis=0) - 0.2
        hi = model.X.max(axis=0) + 0.2
        lin_u = np.linspace(lo[0], hi[0], resolution)
        lin_v = np.linspace(lo[1], hi[1], resolution)
        uu, vv = np.meshgrid(lin_u, lin_v, indexing="ij")
        coords = np.column_stack([uu.ravel(), vv.ravel()])
        if model.kernel.ncoords == 3:
            full = np.column_stack([coords, np.zeros(len(coords))])
        else:
            full = coords
        latent = full

    chunk = 128
    spans = [(lo_, min(lo_ + chunk, len(latent)))
             for lo_ in range(0, len(latent), chunk)]

    def work(span):
        lo_, hi_ = span
        gs = expected_metric_many(model, latent[lo_:hi_])
        return _metric_volumes(gs, model.manifold)

    model.cache  # build once before the pool shares it read-only
    volumes = np.empty(len(latent))
    with concurrent.futures.ThreadPoolExecutor(max_workers=_n_threads()) as ex:
        for (lo_, hi_), vols in zip(spans, ex.map(work, spans)):
            volumes[lo_:hi_] = vols
    return coords, volumes


def write_grid_artifact(path, model, coords, volumes, config) -> None:
    doc = {
        "schema": GRID_SCHEMA,
        "version": VERSION_STRING,
        "manifold": model.manifold,
        "coords": "poincare" if model.manifold == "hyperbolic" else "euclidean",
        "points": [[float(u) for u in row] for row in coords],
        "volume": [float(v) for v in volumes],
        "config": config,
    }
    _dump_json(path, doc)


# ---------------------------------------------------------------------------
# curve artifacts
# ---------------------------------------------------------------------------

def _base_metric_energies(curve: DiscreteCurve) -> np.ndarray:
    """Per-segment energy under the latent manifold's own metric."""
    pts = curve.points
    if curve.manifold == "hyperbolic":
        d = lorentz.distance(pts[:-1], pts[1:], validate=False)
    else:
        d = np.linalg.norm(pts[1:] - pts[:-1], axis=1)
    return np.asarray(d) ** 2


def write_curve_artifact(path, curve: DiscreteCurve, model, kind, config,
                         loss_trace=None) -> None:
    total, seg = curve_energy(curve, model)
    means, vars_, mean_unc = decode_curve(curve, model)
    doc = {
        "schema": CURVE_SCHEMA,
        "version": VERSION_STRING,
        "kind": kind,
        "manifold": curve.manifold,
        "points": [[float(v) for v in p] for p in curve.points],
        "segment_energies_pullback": [float(e) for e in seg],
        "segment_energies_base": [float(e)
                                  for e in _base_metric_energies(curve)],
        "total_energy_pullback": float(total),
        "spline_energy": float(spline_energy(curve)),
        "decoded_means": [[float(v) for v in row] for row in means],
        "decoded_vars": [float(v) for v in vars_],
        "mean_uncertainty": float(mean_unc),
        "config": config,
    }
    if curve.manifold == "hyperbolic":
        doc["points_poincare"] = [
            [float(v) for v in lorentz.lorentz_to_poincare(p, validate=False)]
            for p in curve.points]
    if loss_trace is not None:
        doc["loss_trace"] = [float(x) for x in loss_trace]
    _dump_json(path, doc)


def write_energies_csv(path, base_curve, pull_curve, model) -> None:
    """Per-segment energies: the base geodesic under its own metric, the
    base geodesic under the pullback metric, and the optimized curve."""
    base_base = _base_metric_energies(base_curve)
    _, base_pull = curve_energy(base_curve, model)
    _, pull_pull = curve_energy(pull_curve, model)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "base_curve_base_metric",
                    "base_curve_pullback_metric",
                    "pullback_curve_pullback_metric"])
        for i in range(len(base_base)):
            w.writerow([i, repr(float(base_base[i])),
                        repr(float(base_pull[i])),
                        repr(float(pull_pull[i]))])


def write_decoded_csv(path, curve, model) -> None:
    means, vars_, _ = decode_curve(curve, model)
    rows = np.column_stack([np.arange(len(curve.points)), means, vars_])
    io.write_matrix_csv(path, rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_cshape(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = {k: getattr(args, k) for k in
              ("manifold", "n", "mc_samples", "grid", "m", "steps", "lr",
               "lam", "grad_mode", "tau", "kappa", "noise", "seed",
               "data_noise", "c_radius", "init")}
    config["command"] = "cshape"

    pts = io.gen_cshape(args.n, noise=args.data_noise, seed=args.seed,
                        radius=args.c_radius)
    # the C points serve as both latents and observations (encoded in
    # ambient Lorentz coordinates for the hyperbolic variant); no training
    if args.manifold == "hyperbolic":
        kernel = Hyp2SEKernel(tau=args.tau, kappa=args.kappa,
                              n_samples=args.mc_samples, seed=args.seed)
        X = io.cshape_lorentz(pts)
        Y = X.copy()
    else:
        kernel = EuclSEKernel(tau=args.tau, kappa=args.kappa, dim=2)
        X = pts
        Y = pts
    model = LatentModel(X, Y, kernel, args.noise)

    coords, volumes = compute_volume_grid(model, args.grid)
    write_grid_artifact(outdir / "grid.json", model, coords, volumes, config)

    x_a, x_b = X[0], X[-1]
    if args.init == "via-origin":
        init = via_origin_init(x_a, x_b, args.m, model.manifold)
    else:
        init = base_geodesic(x_a, x_b, args.m, model.manifold)
    base = base_geodesic(x_a, x_b, args.m, model.manifold)
    gcfg = GeodesicConfig(steps=args.steps, lr=args.lr, lam=args.lam,
                          grad_mode=args.grad_mode)
    pull, trace = optimize_geodesic(init, model, gcfg)

    write_curve_artifact(outdir / "curve_base.json", base, model, "base",
                         config)
    write_curve_artifact(outdir / "curve_pullback.json", pull, model,
                         "pullback", config, loss_trace=trace)
    write_energies_csv(outdir / "energies.csv", base, pull, model)
    _write_resolved_config(outdir, config)
    return 0


_PRESETS = {
    "none": {},
    "mnist-like": {"steps": 500, "lr_hyp": 0.05, "lr_eucl": 0.01,
                   "fit_hyperparams": True, "kappa_gamma": (2.0, 2.0),
                   "tau_gamma": (5.0, 0.8), "latent_alpha": 1.0},
    "robots-like": {"steps": 500, "lr_hyp": 0.05, "lr_eucl": 0.01,
                    "fit_hyperparams": True, "kappa_gamma": (2.0, 2.0),
                    "stress_weight": 6000.0, "stress_mode": "mean",
                    "latent_alpha": 1.0},
    "grasps-like": {"steps": 10000, "lr_hyp": 0.001, "lr_eucl": 0.001,
                    "stress_mode": "sum", "stress_rows": "endpoints",
                    "back_constraints": True, "stress_init": True,
                    "latent_alpha": 1.0},
}


def cmd_train(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = io.load_dataset(args.data, args.graph, args.traj)
    d_out = bundle.observations.shape[1]
    d_lat = args.dim
    preset = dict(_PRESETS[args.preset])

    steps = args.steps if args.steps is not None else preset.get("steps", 500)
    if args.lr is not None:
        lr = args.lr
    elif args.manifold == "hyperbolic":
        lr = preset.get("lr_hyp", 0.05)
    else:
        lr = preset.get("lr_eucl", 0.01)

    kernel = _build_kernel(args.manifold, d_lat, args.tau, args.kappa,
                           args.mc_samples, args.seed)
    model = LatentModel.from_data(bundle.observations + bundle.obs_mean,
                                  kernel, args.noise)

    priors = Priors()
    stress_weight = (args.stress_weight if args.stress_weight is not None
                     else preset.get("stress_weight"))
    if args.preset == "grasps-like" and stress_weight is None:
        stress_weight = float(d_out)
    stress_mode = args.stress_mode or preset.get("stress_mode", "sum")
    if bundle.node_dist is not None and stress_weight:
        rows = None
        if preset.get("stress_rows") == "endpoints" and bundle.traj_starts is not None:
            starts = list(bundle.traj_starts)
            ends = [s - 1 for s in starts[1:]] + [len(bundle.observations) - 1]
            rows = np.asarray(sorted(set(starts + ends)), dtype=int)
        priors.graph = GraphPrior(node_dist=bundle.node_dist,
                                  assignment=bundle.assignment,
                                  weight=stress_weight, mode=stress_mode,
                                  rows=rows)
    if bundle.traj_starts is not None:
        dyn_weight = (args.dyn_weight if args.dyn_weight is not None
                      else 2.0 * d_out / d_lat)
        priors.trajectory = TrajectoryPrior(starts=bundle.traj_starts,
                                            sigma_dyn2=args.dyn_sigma2,
                                            weight=dyn_weight)
    if (args.stress_init or preset.get("stress_init")) and priors.graph is not None:
        model.set_latents(stress_minimizing_init(
            model, priors.graph, traj_starts=bundle.traj_starts,
            seed=args.seed))
    if args.back_constraints or preset.get("back_constraints"):
        priors.back = BackConstraint.from_data(model.Y, model.X,
                                               manifold=model.manifold)

    fit_hyp = args.fit_hyperparams or bool(preset.get("fit_hyperparams"))
    tcfg = TrainConfig(
        steps=steps, lr=lr, optimize_hyperparams=fit_hyp,
        latent_prior_alpha=(args.latent_alpha if args.latent_alpha is not None
                            else preset.get("latent_alpha")),
        kappa_gamma=preset.get("kappa_gamma"),
        tau_gamma=preset.get("tau_gamma"),
        seed=args.seed)

    config = {k: getattr(args, k) for k in
              ("manifold", "dim", "preset", "tau", "kappa", "noise",
               "mc_samples", "seed")}
    config.update({"command": "train", "steps": steps, "lr": lr,
                   "stress_weight": stress_weight,
                   "stress_mode": stress_mode,
                   "fit_hyperparams": fit_hyp})

    trained, trace = train_map(model, priors, tcfg)

    priors_config = {
        "stress_weight": stress_weight if priors.graph is not None else None,
        "stress_mode": stress_mode if priors.graph is not None else None,
        "dynamics_weight": (priors.trajectory.weight
                            if priors.trajectory is not None else None),
        "back_constraints": priors.back is not None,
    }
    summary = {"steps": len(trace) - 1,
               "initial_objective": trace[0]["objective"],
               "final_objective": trace[-1]["objective"]}
    if priors.graph is not None:
        summary["final_stress"] = stress_loss(trained.X, priors.graph,
                                              trained.manifold)
    io.save_checkpoint(outdir / "checkpoint.json", trained,
                       priors_config=priors_config, trace_summary=summary)

    keys = sorted({k for row in trace for k in row})
    with open(outdir / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in trace:
            w.writerow([repr(float(row.get(k, np.nan))) for k in keys])
    _write_resolved_config(outdir, config)
    return 0


def _parse_endpoint(model: LatentModel, index, coords):
    if index is not None:
        if not (0 <= index < model.n_points):
            raise ConfigError(f"endpoint index {index} outside 0.."
                              f"{model.n_points - 1}")
        return model.X[index]
    vals = np.asarray([float(v) for v in coords.split(",")], dtype=float)
    if model.manifold == "hyperbolic":
        if len(vals) != model.kernel.dim:
            raise ConfigError(
                f"expected {model.kernel.dim} Poincare coordinates")
        return lorentz.poincare_to_lorentz(vals)
    if len(vals) != model.kernel.ncoords:
        raise ConfigError(f"expected {model.kernel.ncoords} coordinates")
    return vals


def cmd_geodesic(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model, _ = io.load_checkpoint(args.checkpoint)
    if (args.start_index is None) == (args.start is None):
        raise ConfigError("give exactly one of --start-index / --start")
    if (args.end_index is None) == (args.end is None):
        raise ConfigError("give exactly one of --end-index / --end")
    x_a = _parse_endpoint(model, args.start_index, args.start)
    x_b = _parse_endpoint(model, args.end_index, args.end)

    config = {k: getattr(args, k) for k in
              ("checkpoint", "m", "steps", "lr", "lam", "grad_mode", "init",
               "start", "end", "start_index", "end_index")}
    config["command"] = "geodesic"

    base = base_geodesic(x_a, x_b, args.m, model.manifold)
    if args.init == "via-origin":
        init = via_origin_init(x_a, x_b, args.m, model.manifold)
    else:
        init = base
    gcfg = GeodesicConfig(steps=args.steps, lr=args.lr, lam=args.lam,
                          grad_mode=args.grad_mode)
    pull, trace = optimize_geodesic(init, model, gcfg)

    write_curve_artifact(outdir / "curve_base.json", base, model, "base",
                         config)
    write_curve_artifact(outdir / "curve_pullback.json", pull, model,
                         "pullback", config, loss_trace=trace)
    write_energies_csv(outdir / "energies.csv", base, pull, model)
    write_decoded_csv(outdir / "decoded_base.csv", base, model)
    write_decoded_csv(outdir / "decoded_pullback.csv", pull, model)
    _, _, unc_base = decode_curve(base, model)
    _, _, unc_pull = decode_curve(pull, model)
    _dump_json(outdir / "uncertainty.json", {
        "schema": UNCERTAINTY_SCHEMA,
        "version": VERSION_STRING,
        "base": float(unc_base),
        "pullback": float(unc_pull),
        "config": config,
    })
    _write_resolved_config(outdir, config)
    return 0


def cmd_volume_grid(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model, _ = io.load_checkpoint(args.checkpoint)
    config = {"command": "volume-grid", "checkpoint": args.checkpoint,
              "grid": args.grid}
    coords, volumes = compute_volume_grid(model, args.grid)
    write_grid_artifact(outdir / "grid.json", model, coords, volumes, config)
    _write_resolved_config(outdir, config)
    return 0


def cmd_gen_tree(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    feats, dist, assignment = io.gen_tree_dataset(args.depth, args.branching,
                                                  args.dims, args.seed)
    io.write_matrix_csv(outdir / "obs.csv", feats)
    _dump_json(outdir / "graph.json", {
        "nodes": list(range(len(dist))),
        "dist": [[float(v) for v in row] for row in dist],
        "assignment": [int(a) for a in assignment],
    })
    _write_resolved_config(outdir, {"command": "gen-tree",
                                    "depth": args.depth,
                                    "branching": args.branching,
                                    "dims": args.dims, "seed": args.seed})
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hypepull",
        description="Pullback metrics and data-adherent geodesics for "
                    "(hyperbolic) GP latent variable models.")
    p.add_argument("--version", action="version", version=VERSION_STRING)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cshape", help="self-contained C-shape experiment")
    c.add_argument("--manifold", choices=["hyperbolic", "euclidean"],
                   default="hyperbolic")
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--mc-samples", type=int, default=3000, dest="mc_samples")
    c.add_argument("--grid", type=int, default=110)
    c.add_argument("--m", type=int, default=25)
    c.add_argument("--steps", type=int, default=200)
    c.add_argument("--lr", type=float, default=0.005)
    c.add_argument("--lambda", type=float, default=1.0, dest="lam")
    c.add_argument("--grad-mode", choices=["fd_local", "analytic"],
                   default="fd_local", dest="grad_mode")
    c.add_argument("--init", choices=["base", "via-origin"], default="base")
    c.add_argument("--tau", type=float, default=0.7)
    c.add_argument("--kappa", type=float, default=0.15)
    c.add_argument("--noise", type=float, default=0.69)
    c.add_argument("--data-noise", type=float, default=0.0, dest="data_noise")
    c.add_argument("--c-radius", type=float, default=0.7, dest="c_radius")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cshape)

    t = sub.add_parser("train", help="train a GP(H)LVM on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--graph", default=None)
    t.add_argument("--traj", default=None)
    t.add_argument("--manifold", choices=["hyperbolic", "euclidean"],
                   default="hyperbolic")
    t.add_argument("--dim", type=int, default=2)
    t.add_argument("--preset", choices=sorted(_PRESETS), default="none")
    t.add_argument("--tau", type=float, default=1.0)
    t.add_argument("--kappa", type=float, default=0.5)
    t.add_argument("--noise", type=float, default=0.1)
    t.add_argument("--mc-samples", type=int, default=1000, dest="mc_samples")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--stress-weight", type=float, default=None,
                   dest="stress_weight")
    t.add_argument("--stress-mode", choices=["sum", "mean"], default=None,
                   dest="stress_mode")
    t.add_argument("--dyn-sigma2", type=float, default=0.01,
                   dest="dyn_sigma2")
    t.add_argument("--dyn-weight", type=float, default=None,
                   dest="dyn_weight")
    t.add_argument("--latent-alpha", type=float, default=None,
                   dest="latent_alpha")
    t.add_argument("--fit-hyperparams", action="store_true",
                   dest="fit_hyperparams")
    t.add_argument("--back-constraints", action="store_true",
                   dest="back_constraints")
    t.add_argument("--stress-init", action="store_true", dest="stress_init")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("geodesic", help="optimize a pullback geodesic on a "
                                        "trained checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--start-index", type=int, default=None,
                   dest="start_index")
    g.add_argument("--end-index", type=int, default=None, dest="end_index")
    g.add_argument("--start", default=None,
                   help="comma-separated latent coordinates "
                        "(Poincare chart for hyperbolic models)")
    g.add_argument("--end", default=None)
    g.add_argument("--m", type=int, default=25)
    g.add_argument("--steps", type=int, default=200)
    g.add_argument("--lr", type=float, default=0.005)
    g.add_argument("--lambda", type=float, default=1.0, dest="lam")
    g.add_argument("--grad-mode", choices=["fd_local", "analytic"],
                   default="fd_local", dest="grad_mode")
    g.add_argument("--init", choices=["base", "via-origin"], default="base")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_geodesic)

    v = sub.add_parser("volume-grid", help="export the metric volume grid "
                                           "of a checkpoint")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--grid", type=int, default=110)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_volume_grid)

    gt = sub.add_parser("gen-tree", help="generate a synthetic tree dataset")
    gt.add_argument("--depth", type=int, default=3)
    gt.add_argument("--branching", type=int, default=2)
    gt.add_argument("--dims", type=int, default=5)
    gt.add_argument("--seed", type=int, default=0)
    gt.add_argument("--out", required=True)
    gt.set_defaults(func=cmd_gen_tree)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except HypepullError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
