"""Citation-network dataset preparation.

Converts the classic raw Cora distribution (cora.content + cora.cites) into
the dataset-directory layout this package loads, downloading the archive
first when a network is available. Node order follows cora.content; class
names map to label ids in sorted order; citation lines become undirected
edges with duplicates and self-citations dropped.
"""

from __future__ import annotations

import struct
import tarfile
import tempfile
import urllib.request
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError
from .graph import csr_from_edge_pairs

CORA_URLS = (
    "https://linqs-data.soe.ucsc.edu/public/lbc/cora.tgz",
    "https://github.com/abojchevski/graph2gauss/raw/master/data/cora.tgz",
)


def download_cora(raw_dir: str | Path) -> Path:
    """Fetch and unpack the raw archive; returns the directory holding the
    cora.content / cora.cites pair."""
    raw_dir = Path(raw_dir)
    raw_dir.mkdir(parents=True, exist_ok=True)
    last_error: Exception | None = None
    for url in CORA_URLS:
        try:
            with tempfile.NamedTemporaryFile(suffix=".tgz") as tmp:
                with urllib.request.urlopen(url, timeout=60) as resp:
                    tmp.write(resp.read())
                tmp.flush()
                with tarfile.open(tmp.name, "r:gz") as tar:
                    tar.extractall(raw_dir)
            found = find_raw_cora(raw_dir)
            if found is not None:
                return found
        except Exception as exc:  # try the next mirror
            last_error = exc
    raise DatasetFormatError(f"could not download the raw cora archive: {last_error}")


def find_raw_cora(raw_dir: str | Path) -> Path | None:
    raw_dir = Path(raw_dir)
    if not raw_dir.is_dir():
        return None
    for content in sorted(raw_dir.rglob("cora.content")):
        if (content.parent / "cora.cites").is_file():
            return content.parent
    return None


def prepare_cora(dest: str | Path, raw_dir: str | Path | None = None) -> Path:
    """Build a loadable cora dataset directory at `dest`.

    Looks for the raw files under `raw_dir` (or `dest/raw`), downloading them
    when absent. Writes edges.tsv / features.tsv / labels.tsv / meta.json plus
    the binary feature sidecar; no splits.json, so loaders generate seeded
    10/10/80 splits.
    """
    dest = Path(dest)
    raw_dir = Path(raw_dir) if raw_dir is not None else dest / "raw"
    raw = find_raw_cora(raw_dir)
    if raw is None:
        raw = download_cora(raw_dir)

    content_lines = (raw / "cora.content").read_text().splitlines()
    paper_index: dict[str, int] = {}
    feature_rows: list[np.ndarray] = []
    class_names: list[str] = []
    for ln in content_lines:
        toks = ln.split()
        if len(toks) < 3:
            raise DatasetFormatError("malformed cora.content line")
        paper_id, *feats, cls = toks
        paper_index[paper_id] = len(feature_rows)
        feature_rows.append(np.array([float(t) for t in feats]))
        class_names.append(cls)
    features = np.stack(feature_rows)
    label_of = {name: i for i, name in enumerate(sorted(set(class_names)))}
    labels = np.array([label_of[c] for c in class_names], dtype=np.int64)

    pairs = []
    for ln in (raw / "cora.cites").read_text().splitlines():
        toks = ln.split()
        if len(toks) != 2:
            continue
        a, b = paper_index.get(toks[0]), paper_index.get(toks[1])
        if a is None or b is None or a == b:
            continue
        pairs.append((a, b))
    adjacency = csr_from_edge_pairs(features.shape[0], np.array(pairs, dtype=np.int64))

    dest.mkdir(parents=True, exist_ok=True)
    with (dest / "edges.tsv").open("w") as fh:
        for u, v in adjacency.edge_pairs():
            fh.write(f"{u}\t{v}\n")
    with (dest / "labels.tsv").open("w") as fh:
        for y in labels:
            fh.write(f"{int(y)}\n")
    with (dest / "features.tsv").open("w") as fh:
        for row in features:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    n, d = features.shape
    with (dest / "features.f32le").open("wb") as fh:
        fh.write(struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
    (dest / "meta.json").write_text(
        '{"name":"cora","num_classes":%d}\n' % (int(labels.max()) + 1)
    )
    return dest
