"""Dataset ingestion, synthetic data generation, and checkpoint files.

File formats: CSV for matrices, JSON for structured metadata. Checkpoints
are a single JSON document with float64 arrays embedded as base64-encoded
little-endian bytes, so that reloaded models reproduce every metric
evaluation bit-exactly.
"""

from __future__ import annotations

import base64
import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from . import VERSION_STRING, lorentz
from .errors import DataError
from .gplvm import LatentModel
from .kernels import kernel_from_config

CHECKPOINT_SCHEMA = "hypepull/checkpoint/v1"


# ---------------------------------------------------------------------------
# exact binary float arrays inside JSON
# ---------------------------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"dtype": "<f8", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    observations: np.ndarray        # centered
    obs_mean: np.ndarray
    node_dist: np.ndarray | None = None
    assignment: np.ndarray | None = None
    traj_starts: np.ndarray | None = None


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            if rows and len(row) != len(rows[0]):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, "
                    f"expected {len(rows[0])}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow([repr(float(v)) for v in row])


def _graph_from_json(doc: dict, n_rows: int):
    nodes = doc.get("nodes")
    if nodes is None:
        raise DataError("graph JSON needs a 'nodes' list")
    k = len(nodes)
    if "dist" in doc:
        dist = np.asarray(doc["dist"], dtype=float)
        if dist.shape != (k, k):
            raise DataError(f"graph 'dist' must be {k}x{k}, got {dist.shape}")
        for i in range(k):
            for j in range(k):
                if dist[i, j] != dist[j, i]:
                    raise DataError(
                        f"graph 'dist' asymmetric at ({i}, {j}): "
                        f"{dist[i, j]} != {dist[j, i]}")
    elif "edges" in doc:
        adj = np.zeros((k, k))
        for e in doc["edges"]:
            i, j = int(e[0]), int(e[1])
            if not (0 <= i < k and 0 <= j < k):
                raise DataError(f"graph edge ({i}, {j}) out of range")
            w = float(e[2]) if len(e) > 2 else 1.0
            adj[i, j] = adj[j, i] = w
        dist = shortest_path(adj, method="D", directed=False, unweighted=False)
        if np.any(np.isinf(dist)):
            raise DataError("graph is disconnected")
    else:
        raise DataError("graph JSON needs 'dist' or 'edges'")
    assignment = np.asarray(doc.get("assignment",
                                    list(range(min(k, n_rows)))), dtype=int)
    if len(assignment) != n_rows:
        raise DataError(
            f"assignment length {len(assignment)} != data rows {n_rows}")
    if np.any(assignment < 0) or np.any(assignment >= k):
        bad = int(np.argmax((assignment < 0) | (assignment >= k)))
        raise DataError(f"assignment row {bad} references node "
                        f"{assignment[bad]} outside 0..{k - 1}")
    return dist, assignment


def load_dataset(obs_path, graph_path=None, traj_path=None) -> DatasetBundle:
    """Read observations (centered; mean retained) plus optional graph and
    trajectory structure."""
    Y = read_matrix_csv(obs_path)
    mean = Y.mean(axis=0)
    bundle = DatasetBundle(observations=Y - mean, obs_mean=mean)
    if graph_path is not None:
        if not os.path.exists(graph_path):
            raise DataError(f"{graph_path}: file not found")
        with open(graph_path) as fh:
            doc = json.load(fh)
        bundle.node_dist, bundle.assignment = _graph_from_json(doc, len(Y))
    if traj_path is not None:
        if not os.path.exists(traj_path):
            raise DataError(f"{traj_path}: file not found")
        with open(traj_path) as fh:
            doc = json.load(fh)
        starts = np.asarray(doc.get("starts", []), dtype=int)
        if len(starts) == 0 or starts[0] != 0:
            raise DataError("trajectory 'starts' must begin with 0")
        if np.any(np.diff(starts) <= 0) or np.any(starts >= len(Y)):
            raise DataError("trajectory 'starts' must be strictly increasing "
                            f"and < {len(Y)}")
        bundle.traj_starts = starts
    return bundle


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def gen_cshape(n: int, noise: float = 0.0, seed: int = 0,
               radius: float = 0.7, span_degrees: float = 270.0) -> np.ndarray:
    """2D points on a C-shaped arc inside the unit disk, opening to the
    right; optional Gaussian jitter thickens the arc into a band."""
    if not 0 < radius < 1:
        raise DataError("C radius must lie in (0, 1)")
    half_gap = np.pi * (1.0 - span_degrees / 360.0)
    thetas = np.linspace(half_gap, 2.0 * np.pi - half_gap, n)
    pts = radius * np.column_stack([np.cos(thetas), np.sin(thetas)])
    if noise > 0:
        rng = np.random.default_rng(seed)
        pts = pts + noise * rng.standard_normal(pts.shape)
        norms = np.linalg.norm(pts, axis=1)
        over = norms >= 0.99
        pts[over] *= (0.99 / norms[over])[:, None]
    return pts


def cshape_lorentz(pts: np.ndarray) -> np.ndarray:
    """Lift Poincare-disk points onto the hyperboloid."""
    return np.stack([lorentz.poincare_to_lorentz(p) for p in pts])


def gen_tree_dataset(depth: int, branching: int, dims: int, seed: int = 0):
    """Complete tree with features diffused down the edges.

    Returns ``(features, node_dist, assignment)`` with one data row per
    node, hop-count node distances, and the identity assignment.
    """
    if depth < 1:
        raise DataError("tree depth must be >= 1")
    n_nodes = sum(branching**i for i in range(depth + 1))
    rng = np.random.default_rng(seed)
    feats = np.zeros((n_nodes, dims))
    parents = np.zeros(n_nodes, dtype=int)
    for child in range(1, n_nodes):
        parents[child] = (child - 1) // branching
        feats[child] = feats[parents[child]] + rng.standard_normal(dims)
    adj = np.zeros((n_nodes, n_nodes))
    for child in range(1, n_nodes):
        adj[child, parents[child]] = adj[parents[child], child] = 1.0
    dist = shortest_path(adj, method="D", directed=False)
    return feats, dist, np.arange(n_nodes)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _kernel_to_doc(kernel) -> dict:
    cfg = kernel.to_config()
    if cfg["type"] == "hyp2se":
        cfg["b"] = encode_array(kernel.b)
        cfg["s_raw"] = encode_array(kernel.s_raw)
    return cfg


def _kernel_from_doc(cfg: dict):
    cfg = dict(cfg)
    if cfg.get("type") == "hyp2se" and "b" in cfg:
        cfg["b"] = decode_array(cfg["b"])
        cfg["s_raw"] = decode_array(cfg["s_raw"])
    return kernel_from_config(cfg)


def save_checkpoint(path, model: LatentModel, priors_config: dict | None = None,
                    trace_summary: dict | None = None) -> None:
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "version": VERSION_STRING,
        "manifold": model.manifold,
        "dim": model.kernel.dim,
        "kernel": _kernel_to_doc(model.kernel),
        "noise_var": model.noise_var,
        "jitter": model.jitter,
        "latents": encode_array(model.X),
        "observations": encode_array(model.Y),
        "obs_mean": encode_array(model.obs_mean),
        "priors": priors_config or {},
        "trace_summary": trace_summary or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, document)."""
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise DataError(f"{path}: unknown checkpoint schema "
                        f"{doc.get('schema')!r}")
    kernel = _kernel_from_doc(doc["kernel"])
    model = LatentModel(decode_array(doc["latents"]),
                        decode_array(doc["observations"]),
                        kernel, doc["noise_var"], doc["jitter"],
                        obs_mean=decode_array(doc["obs_mean"]))
    return model, doc
