"""Dataset representation: CSR adjacency, on-disk formats, splits, statistics.

A dataset directory holds:
  edges.tsv      one undirected edge per line, `u<TAB>v`, 0-based ids
  features.tsv   N lines of d tab-separated reals
  features.f32le optional binary sidecar: uint32-LE (N, d) header + row-major f32
  labels.tsv     N lines, one integer in [0, C)
  splits.json    optional {"train": [...], "val": [...], "test": [...]}
  meta.json      optional {"name": str, "num_classes": int}

Adjacencies are stored symmetric, binary, zero-diagonal; self-loops exist only
inside the normalized propagation matrix returned by `normalize_adjacency`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ValidationError
from .rng import RngState


@dataclass
class CsrAdjacency:
    row_offsets: np.ndarray  # int64, length N+1
    col_indices: np.ndarray  # int64, length nnz
    values: np.ndarray  # float64, length nnz
    dim: int

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def row(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def has_entry(self, i: int, j: int) -> bool:
        row = self.row(i)
        k = np.searchsorted(row, j)
        return k < row.shape[0] and row[k] == j

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.dim, self.dim))
        rows = np.repeat(np.arange(self.dim), self.degrees())
        dense[rows, self.col_indices] = self.values
        return dense

    def edge_pairs(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with u < v in each row."""
        rows = np.repeat(np.arange(self.dim), self.degrees())
        upper = rows < self.col_indices
        return np.stack([rows[upper], self.col_indices[upper]], axis=1)

    def validate(self, binary: bool = True) -> None:
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape[0] != self.dim + 1 or ro[0] != 0 or ro[-1] != ci.shape[0]:
            raise ValidationError("CSR row_offsets inconsistent with dim/nnz")
        if np.any(np.diff(ro) < 0):
            raise ValidationError("CSR row_offsets must be non-decreasing")
        rows = np.repeat(np.arange(self.dim), np.diff(ro))
        if ci.shape[0]:
            if ci.min() < 0 or ci.max() >= self.dim:
                raise ValidationError("CSR column index out of range")
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (ci[1:] <= ci[:-1])):
                raise ValidationError("CSR columns must be sorted and unique per row")
        if np.any(rows == ci):
            raise ValidationError("adjacency must have a zero diagonal")
        if binary and ci.shape[0] and not np.all(self.values == 1.0):
            raise ValidationError("adjacency values must all be 1")
        fwd = np.sort(rows * self.dim + ci)
        rev = np.sort(ci * self.dim + rows)
        if not np.array_equal(fwd, rev):
            raise ValidationError("adjacency is not structurally symmetric")


@dataclass
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n: int) -> None:
        for name, m in (("train", self.train), ("val", self.val), ("test", self.test)):
            if m.dtype != bool or m.shape != (n,):
                raise ValidationError(f"{name} mask must be a boolean vector of length {n}")
        total = self.train.astype(int) + self.val.astype(int) + self.test.astype(int)
        if np.any(total != 1):
            raise ValidationError("split masks must partition the node set")


@dataclass
class GraphStats:
    num_nodes: int
    num_edges: int
    avg_degree: float
    homophily_ratio: float


@dataclass
class Graph:
    features: np.ndarray  # N x d
    adjacency: CsrAdjacency
    labels: np.ndarray  # int64, length N
    splits: SplitMasks
    num_classes: int
    name: str = ""

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    def validate(self) -> None:
        n = self.num_nodes
        if self.adjacency.dim != n:
            raise ValidationError("adjacency dimension != number of feature rows")
        if self.labels.shape != (n,):
            raise ValidationError("labels length != number of nodes")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise ValidationError("labels must lie in [0, num_classes)")
        self.adjacency.validate(binary=True)
        self.splits.validate(n)

    def with_adjacency(self, adj: CsrAdjacency) -> "Graph":
        """Same attributes/labels/splits over a different edge set."""
        return Graph(
            features=self.features,
            adjacency=adj,
            labels=self.labels,
            splits=self.splits,
            num_classes=self.num_classes,
            name=self.name,
        )


def csr_from_edge_pairs(n: int, pairs: np.ndarray, dedup: bool = True) -> CsrAdjacency:
    """Build a symmetric binary CSR from undirected (u, v) pairs.

    Rejects self-loops; with dedup=True, duplicate and reversed duplicates
    collapse to a single undirected edge.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0]:
        if pairs.min() < 0 or pairs.max() >= n:
            raise ValidationError(f"edge endpoint out of range [0, {n})")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValidationError("self-loop edges are not allowed")
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keys = lo * n + hi
        if dedup:
            keys = np.unique(keys)
        elif np.unique(keys).shape[0] != keys.shape[0]:
            raise ValidationError("duplicate undirected edge")
        lo, hi = keys // n, keys % n
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=row_offsets[1:])
    return CsrAdjacency(
        row_offsets=row_offsets,
        col_indices=dst,
        values=np.ones(dst.shape[0], dtype=np.float64),
        dim=n,
    )


def normalize_adjacency(adj: CsrAdjacency, validate: bool = True) -> CsrAdjacency:
    """Symmetric propagation matrix: self-loops added, entry (i,j) = 1/sqrt(dt_i*dt_j)
    with dt_i = degree_i + 1. Isolated nodes keep a unit diagonal entry.

    `validate=False` skips the precondition checks; callers may use it only on
    adjacencies that came straight out of a trusted constructor."""
    if validate:
        adj.validate(binary=True)
    n = adj.dim
    deg_tilde = adj.degrees().astype(np.float64) + 1.0
    rows = np.repeat(np.arange(n), adj.degrees())
    src = np.concatenate([rows, np.arange(n)])
    dst = np.concatenate([adj.col_indices, np.arange(n)])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=row_offsets[1:])
    return CsrAdjacency(
        row_offsets=row_offsets,
        col_indices=dst,
        values=1.0 / np.sqrt(deg_tilde[src] * deg_tilde[dst]),
        dim=n,
    )


def make_split(n: int, train_ratio: float, val_ratio: float, seed: int) -> SplitMasks:
    """Random node partition; train/val counts use floor, test takes the rest."""
    if n < 3:
        raise ValidationError("need at least 3 nodes to split")
    if not (0.0 < train_ratio < 1.0 and 0.0 < val_ratio < 1.0):
        raise ValidationError("split ratios must lie in (0, 1)")
    if train_ratio + val_ratio >= 1.0:
        raise ValidationError("train_ratio + val_ratio must be < 1")
    n_train = int(np.floor(train_ratio * n))
    n_val = int(np.floor(val_ratio * n))
    perm = RngState(seed).substream("split").generator().permutation(n)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return SplitMasks(train=train, val=val, test=test)


def graph_stats(g: Graph) -> GraphStats:
    n = g.num_nodes
    num_edges = g.adjacency.nnz // 2
    pairs = g.adjacency.edge_pairs()
    if num_edges == 0:
        homophily = 0.0  # degenerate convention for edgeless graphs
    else:
        same = g.labels[pairs[:, 0]] == g.labels[pairs[:, 1]]
        homophily = float(np.mean(same))
    return GraphStats(
        num_nodes=n,
        num_edges=num_edges,
        avg_degree=2.0 * num_edges / n if n else 0.0,
        homophily_ratio=homophily,
    )


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetFormatError(f"missing required file: {path}")
    return path.read_text().splitlines()


def _load_features(dataset_dir: Path) -> np.ndarray:
    binary = dataset_dir / "features.f32le"
    if binary.is_file():
        raw = binary.read_bytes()
        if len(raw) < 8:
            raise DatasetFormatError("features.f32le shorter than its header")
        n, d = struct.unpack("<II", raw[:8])
        body = np.frombuffer(raw, dtype="<f4", offset=8)
        if body.shape[0] != n * d:
            raise DatasetFormatError("features.f32le payload does not match header")
        return body.reshape(n, d).astype(np.float64)
    lines = _read_lines(dataset_dir / "features.tsv")
    feats = []
    for idx, ln in enumerate(lines):
        if not ln.strip():
            continue
        try:
            feats.append([float(tok) for tok in ln.split("\t")])
        except ValueError as exc:
            raise DatasetFormatError(f"features.tsv line {idx}: {exc}") from exc
    if not feats:
        raise DatasetFormatError("features.tsv is empty")
    widths = {len(r) for r in feats}
    if len(widths) != 1:
        raise DatasetFormatError("features.tsv rows have inconsistent widths")
    return np.asarray(feats, dtype=np.float64)


def load_graph(dataset_dir: str | Path, split_seed: int = 0) -> Graph:
    """Load a dataset directory into a validated Graph.

    Duplicate / reversed edge lines are deduplicated; self-loop lines are
    rejected. If splits.json is absent, a 10/10/80 split is generated
    deterministically from `split_seed`.
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise DatasetFormatError(f"not a dataset directory: {dataset_dir}")
    features = _load_features(dataset_dir)
    n = features.shape[0]

    label_lines = _read_lines(dataset_dir / "labels.tsv")
    labels = []
    for idx, ln in enumerate(label_lines):
        if not ln.strip():
            continue
        try:
            labels.append(int(ln.strip()))
        except ValueError as exc:
            raise DatasetFormatError(f"labels.tsv line {idx}: {exc}") from exc
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != n:
        raise DatasetFormatError(
            f"labels.tsv has {labels.shape[0]} rows but features describe {n} nodes"
        )

    pairs = []
    for idx, ln in enumerate(_read_lines(dataset_dir / "edges.tsv")):
        if not ln.strip():
            continue
        toks = ln.split()
        if len(toks) != 2:
            raise DatasetFormatError(f"edges.tsv line {idx}: expected `u<TAB>v`")
        try:
            pairs.append((int(toks[0]), int(toks[1])))
        except ValueError as exc:
            raise DatasetFormatError(f"edges.tsv line {idx}: {exc}") from exc
    adjacency = csr_from_edge_pairs(n, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))

    name = dataset_dir.name
    num_classes = int(labels.max()) + 1 if n else 0
    meta_path = dataset_dir / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        name = meta.get("name", name)
        if "num_classes" in meta:
            num_classes = int(meta["num_classes"])

    splits_path = dataset_dir / "splits.json"
    if splits_path.is_file():
        spec = json.loads(splits_path.read_text())
        masks = {}
        for key in ("train", "val", "test"):
            if key not in spec:
                raise DatasetFormatError(f"splits.json missing key {key!r}")
            m = np.zeros(n, dtype=bool)
            ids = np.asarray(spec[key], dtype=np.int64)
            if ids.shape[0] and (ids.min() < 0 or ids.max() >= n):
                raise ValidationError("splits.json node id out of range")
            m[ids] = True
            masks[key] = m
        splits = SplitMasks(**masks)
    else:
        splits = make_split(n, 0.1, 0.1, seed=split_seed)

    g = Graph(
        features=features,
        adjacency=adjacency,
        labels=labels,
        splits=splits,
        num_classes=num_classes,
        name=name,
    )
    g.validate()
    return g


def _format_real(x: float) -> str:
    return repr(float(x))


def write_graph(g: Graph, dataset_dir: str | Path, binary_features: bool = False) -> None:
    """Write the canonical dataset files (round-trips byte-identically)."""
    dataset_dir = Path(dataset_dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    pairs = g.adjacency.edge_pairs()
    with (dataset_dir / "edges.tsv").open("w") as fh:
        for u, v in pairs:
            fh.write(f"{u}\t{v}\n")
    with (dataset_dir / "labels.tsv").open("w") as fh:
        for y in g.labels:
            fh.write(f"{int(y)}\n")
    with (dataset_dir / "features.tsv").open("w") as fh:
        for row in g.features:
            fh.write("\t".join(_format_real(x) for x in row) + "\n")
    if binary_features:
        n, d = g.features.shape
        with (dataset_dir / "features.f32le").open("wb") as fh:
            fh.write(struct.pack("<II", n, d))
            fh.write(np.ascontiguousarray(g.features, dtype="<f4").tobytes())
    splits = {
        "train": np.flatnonzero(g.splits.train).tolist(),
        "val": np.flatnonzero(g.splits.val).tolist(),
        "test": np.flatnonzero(g.splits.test).tolist(),
    }
    (dataset_dir / "splits.json").write_text(
        json.dumps(splits, separators=(",", ":")) + "\n"
    )
    (dataset_dir / "meta.json").write_text(
        json.dumps({"name": g.name, "num_classes": g.num_classes}, separators=(",", ":"))
        + "\n"
    )
