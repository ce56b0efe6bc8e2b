"""Post-training analyses of a trained codebook.

Covers code usage (perplexity), reconstruction error, nearest-code
confusion, pairwise code distances, decoded prototypes, the nearest-partner
graph between codes and Louvain community detection on that graph.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .numeric import Rng


def perplexity(assignments, num_codes: int | None = None) -> float:
    """exp of the natural-log entropy of empirical code usage."""
    a = np.asarray(assignments, dtype=np.int64).reshape(-1)
    if a.size == 0:
        raise ValueError("perplexity of an empty assignment vector")
    counts = np.bincount(a, minlength=num_codes or 0)
    p = counts[counts > 0] / a.size
    return float(math.exp(-np.sum(p * np.log(p))))


@dataclass
class AnalysisReport:
    perplexity: float
    mse: float
    accuracy: float | None
    confusion: np.ndarray
    distance_matrix: np.ndarray
    class_names: tuple[str, ...]
    code_names: tuple[str, ...]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "perplexity": self.perplexity,
            "mse": self.mse,
            "accuracy": self.accuracy,
            "n_samples": self.n_samples,
            "class_names": list(self.class_names),
            "code_names": list(self.code_names),
            "confusion": self.confusion.tolist(),
            "distance_matrix": self.distance_matrix.tolist(),
        }


def code_names(model) -> tuple[str, ...]:
    if model.config.variant == "supervised" and model.class_names is not None:
        return tuple(model.class_names)
    return tuple(f"code{i}" for i in range(model.config.num_codes))


def evaluate(model, ds: Dataset, chunk: int = 2048) -> AnalysisReport:
    """Nearest-code (eval phase) reconstruction over the whole dataset."""
    from .model import decode, encode, nearest_code

    cfg = model.config
    if ds.n_features != cfg.input_dim:
        raise ValueError(f"data has {ds.n_features} features, model expects {cfg.input_dim}")
    if cfg.variant == "supervised" and ds.n_classes != cfg.num_codes:
        raise ValueError(f"data has {ds.n_classes} classes, model has {cfg.num_codes} codes")
    k = np.empty(ds.n_samples, dtype=np.int64)
    sq_err = 0.0
    for lo in range(0, ds.n_samples, chunk):
        x = ds.features[lo:lo + chunk]
        kb = nearest_code(model.embedding, encode(model, x))
        diff = x - decode(model, model.embedding[kb])
        sq_err += float(np.sum(diff * diff))
        k[lo:lo + chunk] = kb
    confusion = np.zeros((ds.n_classes, cfg.num_codes), dtype=np.int64)
    np.add.at(confusion, (ds.labels, k), 1)
    accuracy = float(np.mean(k == ds.labels)) if cfg.variant == "supervised" else None
    return AnalysisReport(
        perplexity=perplexity(k, cfg.num_codes),
        mse=sq_err / ds.features.size,
        accuracy=accuracy,
        confusion=confusion,
        distance_matrix=code_distance_matrix(model.embedding),
        class_names=ds.class_names,
        code_names=code_names(model),
        n_samples=ds.n_samples,
    )


def code_distance_matrix(embedding) -> np.ndarray:
    e = np.asarray(embedding, dtype=np.float64)
    diff = e[:, None, :] - e[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    return d


def decode_codes(model) -> np.ndarray:
    """Decoder output for every code row: one prototype per code."""
    from .model import decode

    return decode(model, model.embedding)


def class_mean_oracle(train_ds: Dataset, eval_ds: Dataset) -> tuple[np.ndarray, float]:
    """Per-class train means and the MSE of reconstructing every eval sample by its class mean.

    This is the smallest MSE any model that emits one fixed output per class
    can reach, whatever its architecture.
    """
    if train_ds.n_features != eval_ds.n_features:
        raise ValueError("train and eval data have different feature counts")
    counts = np.bincount(train_ds.labels, minlength=eval_ds.n_classes)
    seen = np.unique(eval_ds.labels)
    missing = [eval_ds.class_names[c] for c in seen if c >= counts.size or counts[c] == 0]
    if missing:
        raise ValueError(f"eval classes absent from train data: {missing}")
    means = np.full((counts.size, train_ds.n_features), np.nan)
    for c in np.flatnonzero(counts):
        means[c] = train_ds.features[train_ds.labels == c].mean(axis=0)
    diff = eval_ds.features - means[eval_ds.labels]
    return means, float(np.mean(diff * diff))


def pearson_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    return np.sum(a * b, axis=1) / np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))


# ---------------------------------------------------------------------------
# nearest-partner graph and communities


@dataclass
class PartnerGraph:
    names: tuple[str, ...]
    edges: list[tuple[int, int, float]]

    def undirected_adjacency(self) -> np.ndarray:
        n = len(self.names)
        a = np.zeros((n, n))
        for s, t, _ in self.edges:
            a[s, t] = a[t, s] = 1.0
        return a

    def connects(self, i: int, j: int) -> bool:
        return any({s, t} == {i, j} for s, t, _ in self.edges)


@dataclass
class CommunityPartition:
    membership: np.ndarray
    modularity: float

    @property
    def n_communities(self) -> int:
        return int(self.membership.max()) + 1 if self.membership.size else 0


def nearest_partner_graph(distance_matrix, names) -> PartnerGraph:
    """One directed edge from each code to its closest other code."""
    d = np.array(distance_matrix, dtype=np.float64)
    n = d.shape[0]
    if n < 2:
        raise ValueError("a partner graph needs at least two nodes")
    if len(names) != n:
        raise ValueError(f"{len(names)} names for {n} nodes")
    np.fill_diagonal(d, np.inf)
    partner = np.argmin(d, axis=1)
    return PartnerGraph(tuple(names), [(i, int(partner[i]), float(d[i, partner[i]])) for i in range(n)])


def modularity(adjacency, membership) -> float:
    """Newman modularity sum_c (e_c / m - (a_c / 2m)^2) of a symmetric weight matrix.

    Diagonal entries count twice the self-loop weight (so row sums are degrees).
    """
    a = np.asarray(adjacency, dtype=np.float64)
    c = np.asarray(membership, dtype=np.int64)
    two_m = a.sum()
    if two_m == 0:
        return 0.0
    q = 0.0
    for comm in np.unique(c):
        idx = c == comm
        internal = a[np.ix_(idx, idx)].sum()
        degree = a[idx].sum()
        q += internal / two_m - (degree / two_m) ** 2
    return float(q)


def _local_moving(a: np.ndarray, rng: Rng) -> tuple[np.ndarray, bool]:
    n = a.shape[0]
    k = a.sum(axis=1)
    m = a.sum() / 2.0
    comm = np.arange(n)
    tot = k.copy()
    moved_any = False
    order = rng.permutation(n)
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = comm[i]
            tot[ci] -= k[i]
            links = np.bincount(comm, weights=a[i], minlength=n)
            links[ci] -= a[i, i]
            candidates = np.unique(np.concatenate(([ci], comm[(a[i] > 0) & (np.arange(n) != i)])))
            gains = links[candidates] / m - tot[candidates] * k[i] / (2.0 * m * m)
            best = ci
            best_gain = gains[candidates == ci][0]
            for c, g in zip(candidates, gains):
                if g > best_gain + 1e-14:
                    best, best_gain = c, g
            comm[i] = best
            tot[best] += k[i]
            if best != ci:
                improved = moved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, moved_any


def louvain(graph: PartnerGraph | np.ndarray, rng: Rng) -> CommunityPartition:
    """Two-phase Louvain on the symmetrized, unit-weight version of ``graph``.

    Local moving runs in an rng-shuffled node order until no single move
    improves modularity; communities are then collapsed into super-nodes and
    the process repeats until nothing moves.
    """
    adj = graph.undirected_adjacency() if isinstance(graph, PartnerGraph) else np.asarray(graph, float)
    n = adj.shape[0]
    if n == 0:
        raise ValueError("louvain needs a non-empty graph")
    membership = np.arange(n)
    if adj.sum() == 0:
        return CommunityPartition(membership, 0.0)
    # self-loops are stored as twice their weight so row sums stay degrees
    a = adj + np.diag(np.diag(adj))
    while True:
        comm, moved = _local_moving(a, rng)
        if not moved:
            break
        membership = comm[membership]
        p = np.zeros((a.shape[0], comm.max() + 1))
        p[np.arange(a.shape[0]), comm] = 1.0
        a = p.T @ a @ p
    _, membership = np.unique(membership, return_inverse=True)
    return CommunityPartition(membership, modularity(adj + np.diag(np.diag(adj)), membership))


# ---------------------------------------------------------------------------
# exports


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name) or "_"


def write_matrix_csv(path, matrix, row_names, col_names) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["", *col_names])
        for name, row in zip(row_names, np.asarray(matrix)):
            w.writerow([name, *(repr(v.item()) for v in row)])


def write_pgm(path, image: np.ndarray, value_range: tuple[float, float]) -> None:
    """Binary 8-bit PGM; ``value_range`` maps linearly onto [0, 255]."""
    lo, hi = value_range
    pixels = np.clip(np.rint((np.asarray(image) - lo) * (255.0 / (hi - lo))), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    m = _PGM_HEADER.match(blob)
    if m is None or int(m.group(3)) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    pixels = blob[m.end():m.end() + w * h]
    if len(pixels) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def write_prototypes(out_dir, prototypes, names, value_range, image_shape) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, proto in zip(names, prototypes):
        p = out_dir / f"{_safe_name(name)}.pgm"
        write_pgm(p, proto.reshape(image_shape), value_range)
        paths.append(p)
    return paths


def graph_dot(graph: PartnerGraph, partition: CommunityPartition | None = None) -> str:
    lines = ["digraph partners {"]
    for i, name in enumerate(graph.names):
        attr = f' [community={partition.membership[i]}]' if partition is not None else ""
        lines.append(f'  "{name}"{attr};')
    for s, t, dist in graph.edges:
        lines.append(f'  "{graph.names[s]}" -> "{graph.names[t]}" [dist={dist!r}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_json(graph: PartnerGraph, partition: CommunityPartition) -> str:
    doc = {
        "nodes": list(graph.names),
        "edges": [{"source": graph.names[s], "target": graph.names[t], "dist": d} for s, t, d in graph.edges],
        "communities": {name: int(c) for name, c in zip(graph.names, partition.membership)},
        "modularity": partition.modularity,
    }
    return json.dumps(doc, indent=2)
