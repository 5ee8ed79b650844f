"""Render hypepull artifacts to raster figures.

Figure kinds:

* ``heatmap``: metric-volume grid as a filled scatter over the chart, the
  exterior of the unit disk masked for hyperbolic grids, with optional
  geodesic overlays drawn in chart coordinates.
* ``energy``: two-panel per-segment energy profiles from ``energies.csv``
  (base curve under base and pullback metrics; optimized pullback curve).
* ``decode-strip``: decoded means per output dimension over the curve
  parameter, with a +-2 sigma envelope from the shared posterior variance.

Rendering is read-only and deterministic: repeated invocations on the same
inputs produce identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KNOWN_SCHEMAS = {
    "grid": "hypepull/grid/v1",
    "curve": "hypepull/curve/v1",
}

_SAVE_OPTS = dict(dpi=130, metadata={"Software": "vizkit"})


class ArtifactError(Exception):
    pass


def load_json_artifact(path, kind):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: not valid JSON ({exc})") from None
    schema = doc.get("schema")
    if schema != KNOWN_SCHEMAS[kind]:
        raise ArtifactError(
            f"{path}: unknown schema {schema!r}, expected "
            f"{KNOWN_SCHEMAS[kind]!r}")
    return doc


def load_energies_csv(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [[float(v) for v in row] for row in reader if row]
    except OSError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ArtifactError(f"{path}: bad numeric field ({exc})") from None
    if header is None or len(header) < 4 or header[0] != "segment":
        raise ArtifactError(f"{path}: not an energies.csv artifact")
    if not rows:
        raise ArtifactError(f"{path}: no energy rows")
    return header, np.asarray(rows)


def load_decoded_csv(path):
    import warnings

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")   # empty input raises below
            data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ArtifactError(f"{path}: bad numeric field ({exc})") from None
    if data.size == 0 or data.shape[1] < 3:
        raise ArtifactError(f"{path}: expected columns t, means..., var")
    return data


def _curve_chart_points(doc):
    if "points_poincare" in doc:
        return np.asarray(doc["points_poincare"])
    return np.asarray(doc["points"])


def render_heatmap(grid_path, curve_paths, out_path, vmin=None, vmax=None,
                   log_scale=True):
    doc = load_json_artifact(grid_path, "grid")
    pts = np.asarray(doc.get("points", []), dtype=float)
    vol = np.asarray(doc.get("volume", []), dtype=float)
    if pts.size == 0 or vol.size == 0:
        raise ArtifactError(f"{grid_path}: empty grid")
    if len(pts) != len(vol):
        raise ArtifactError(f"{grid_path}: points/volume length mismatch")
    hyperbolic = doc.get("coords") == "poincare"

    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    values = np.log10(np.maximum(vol, 1e-12)) if log_scale else vol
    sc = ax.scatter(pts[:, 0], pts[:, 1], c=values, s=14, marker="s",
                    cmap="viridis", vmin=vmin, vmax=vmax, linewidths=0)
    label = "log10 metric volume" if log_scale else "metric volume"
    fig.colorbar(sc, ax=ax, shrink=0.85, label=label)
    if hyperbolic:
        # mask the exterior of the unit disk
        theta = np.linspace(0, 2 * np.pi, 512)
        ax.fill(np.concatenate([np.cos(theta), 1.5 * np.cos(theta[::-1])]),
                np.concatenate([np.sin(theta), 1.5 * np.sin(theta[::-1])]),
                color="white", zorder=2)
        ax.plot(np.cos(theta), np.sin(theta), color="black", lw=1.0, zorder=3)
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
    styles = [dict(color="black", ls="--", lw=1.8),
              dict(color="black", ls="-", lw=1.8)]
    for i, cpath in enumerate(curve_paths or []):
        cdoc = load_json_artifact(cpath, "curve")
        cpts = _curve_chart_points(cdoc)
        ax.plot(cpts[:, 0], cpts[:, 1], zorder=4,
                label=cdoc.get("kind", f"curve {i}"),
                **styles[min(i, len(styles) - 1)])
    if curve_paths:
        ax.legend(loc="upper right")
    ax.set_aspect("equal")
    ax.set_xlabel("latent dim 1")
    ax.set_ylabel("latent dim 2")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)


def render_energy(energies_path, out_path):
    header, rows = load_energies_csv(energies_path)
    seg = rows[:, 0]
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    axes[0].plot(seg, rows[:, 1], color="black", ls="--",
                 label="base curve, base metric")
    axes[0].plot(seg, rows[:, 2], color="seagreen", ls="--",
                 label="base curve, pullback metric")
    axes[0].set_title("base geodesic")
    axes[1].plot(seg, rows[:, 3], color="black",
                 label="pullback curve, pullback metric")
    axes[1].set_title("optimized pullback geodesic")
    for ax in axes:
        ax.set_xlabel("segment")
        ax.set_ylabel("energy")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)


def render_decode_strip(decoded_path, out_path, max_dims=8):
    data = load_decoded_csv(decoded_path)
    t = data[:, 0]
    means = data[:, 1:-1]
    sd = np.sqrt(np.maximum(data[:, -1], 0.0))
    d = min(means.shape[1], max_dims)
    fig, axes = plt.subplots(d, 1, figsize=(7.0, 1.6 * d), sharex=True,
                             squeeze=False)
    for i in range(d):
        ax = axes[i, 0]
        ax.fill_between(t, means[:, i] - 2 * sd, means[:, i] + 2 * sd,
                        color="lightgray")
        ax.plot(t, means[:, i], color="black", lw=1.5)
        ax.set_ylabel(f"dim {i}")
    axes[-1, 0].set_xlabel("curve point")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)


def build_parser():
    p = argparse.ArgumentParser(prog="vizkit",
                                description="Render hypepull artifacts.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("render", help="render one figure")
    r.add_argument("--kind", choices=["heatmap", "energy", "decode-strip"],
                   required=True)
    r.add_argument("--grid", help="grid.json (heatmap)")
    r.add_argument("--curves", nargs="*", default=[],
                   help="curve artifacts overlaid on the heatmap")
    r.add_argument("--energies", help="energies.csv (energy)")
    r.add_argument("--decoded", help="decoded CSV (decode-strip)")
    r.add_argument("--vmin", type=float, default=None)
    r.add_argument("--vmax", type=float, default=None)
    r.add_argument("--linear", action="store_true",
                   help="linear instead of log color scale")
    r.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "heatmap":
            if not args.grid:
                raise ArtifactError("--kind heatmap requires --grid")
            render_heatmap(args.grid, args.curves, args.out,
                           vmin=args.vmin, vmax=args.vmax,
                           log_scale=not args.linear)
        elif args.kind == "energy":
            if not args.energies:
                raise ArtifactError("--kind energy requires --energies")
            render_energy(args.energies, args.out)
        else:
            if not args.decoded:
                raise ArtifactError("--kind decode-strip requires --decoded")
            render_decode_strip(args.decoded, args.out)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
