"""Embedding databases, the linear ranking model, and the ranking function."""
from __future__ import annotations

from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import DimensionMismatch, RankingList, check_query


class EmbeddingFileError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmbeddingDatabase:
    """Candidate IDs with fixed embedding vectors (immutable after construction)."""

    def __init__(self, ids: Sequence, embeddings, labels: Optional[Sequence] = None):
        ids = tuple(ids)
        emb = np.array(embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError("embeddings must be a 2-d array")
        if len(ids) != emb.shape[0]:
            raise ValueError(f"{len(ids)} ids but {emb.shape[0]} embeddings")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValueError(f"duplicate candidate id {dup!r}")
        if labels is not None:
            labels = tuple(None if lab is None else int(lab) for lab in labels)
            if len(labels) != len(ids):
                raise ValueError("labels and ids differ in length")
        emb.setflags(write=False)
        self.ids = ids
        self.embeddings = emb
        self.labels = labels
        self.index = {cid: i for i, cid in enumerate(ids)}
        # position of each entry when IDs are sorted ascending (tie-break key)
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        tie = np.empty(len(ids), dtype=np.int64)
        tie[order] = np.arange(len(ids))
        tie.setflags(write=False)
        self._tie_key = tie
        self._id_array = np.array(ids, dtype=object)

    def __len__(self):
        return len(self.ids)

    def __contains__(self, cid):
        return cid in self.index

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def embedding(self, cid) -> np.ndarray:
        return self.embeddings[self.index[cid]]

    def label(self, cid) -> Optional[int]:
        return None if self.labels is None else self.labels[self.index[cid]]

    def subset_indices(self, ids) -> np.ndarray:
        return np.array([self.index[c] for c in ids], dtype=np.int64)


class RankingModel:
    """Linear embedder ``g(q) = W q`` with Euclidean distance to stored embeddings."""

    def __init__(self, weights, image_shape: Optional[tuple] = None):
        W = np.array(weights, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError("weights must be an E x D matrix")
        W.setflags(write=False)
        self.weights = W
        if image_shape is not None:
            image_shape = tuple(int(s) for s in image_shape)
            if int(np.prod(image_shape)) != W.shape[1]:
                raise ValueError(f"image shape {image_shape} does not match D={W.shape[1]}")
        self.image_shape = image_shape

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[0]

    def embed(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.ndim == 1:
            return self.weights @ q
        # row-by-row so batched and single evaluations agree bit-for-bit
        return np.stack([self.weights @ row for row in q])

    def distances(self, q, db: EmbeddingDatabase) -> np.ndarray:
        """Distances from the query (or each query row) to every db entry."""
        if db.dim != self.embed_dim:
            raise DimensionMismatch(
                f"database embeddings have dim {db.dim}, model produces {self.embed_dim}")
        q = np.asarray(q, dtype=np.float64)
        if q.ndim == 2:
            return np.stack([self.distances(row, db) for row in q])
        diff = db.embeddings - self.weights @ q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    @cached_property
    def _pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.weights)

    def preimage(self, embedding, base: float = 0.5) -> np.ndarray:
        """A query image whose embedding is as close as possible to ``embedding``.

        Starts from a flat grey image and moves along the row space of W;
        the result is clipped into the image box.
        """
        x0 = np.full(self.input_dim, base)
        q = x0 + self._pinv @ (np.asarray(embedding, dtype=np.float64) - self.weights @ x0)
        return np.clip(q, 0.0, 1.0)

    def save(self, path) -> None:
        payload = {"weights": self.weights}
        if self.image_shape is not None:
            payload["image_shape"] = np.array(self.image_shape)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path) -> "RankingModel":
        with np.load(path) as data:
            shape = tuple(data["image_shape"].tolist()) if "image_shape" in data else None
            return cls(data["weights"], shape)


def _order(dist: np.ndarray, tie_key: np.ndarray, visible_range: Optional[int]) -> np.ndarray:
    n = dist.shape[0]
    if visible_range is not None and visible_range < n:
        # anything tied with the N-th smallest distance must stay in the pool
        cut = np.partition(dist, visible_range - 1)[visible_range - 1]
        pool = np.flatnonzero(dist <= cut)
        sub = np.lexsort((tie_key[pool], dist[pool]))
        return pool[sub][:visible_range]
    return np.lexsort((tie_key, dist))


def rank(model: RankingModel, db: EmbeddingDatabase, q,
         visible_range: Optional[int] = None) -> RankingList:
    """Sort the database by ascending distance to ``q``; keep the first N entries.

    Ties are broken by ascending candidate ID.
    """
    if len(db) == 0:
        raise ValueError("cannot rank an empty database")
    q = check_query(q, model.input_dim)
    if visible_range is not None and visible_range < 1:
        raise ValueError("visible range must be positive")
    dist = model.distances(q, db)
    order = _order(dist, db._tie_key, visible_range)
    return RankingList(tuple(db._id_array[order].tolist()))


def rank_batch(model: RankingModel, db: EmbeddingDatabase, queries,
               visible_range: Optional[int] = None) -> list[RankingList]:
    if len(db) == 0:
        raise ValueError("cannot rank an empty database")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected a (B, {model.input_dim}) batch, got {queries.shape}")
    dists = model.distances(queries, db)
    return [RankingList(tuple(db._id_array[_order(d, db._tie_key, visible_range)].tolist()))
            for d in dists]


def save_db(db: EmbeddingDatabase, path) -> None:
    """Write the tab-separated embedding text format."""
    lines = [f"dim {db.dim}"]
    for i, cid in enumerate(db.ids):
        sid = str(cid)
        if "\t" in sid or "\n" in sid:
            raise ValueError(f"candidate id {sid!r} contains a tab or newline")
        label = "-" if db.labels is None or db.labels[i] is None else str(db.labels[i])
        vec = ",".join(repr(float(v)) for v in db.embeddings[i])
        lines.append(f"{sid}\t{label}\t{vec}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_db(path) -> EmbeddingDatabase:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise EmbeddingFileError(1, "empty file, expected 'dim E' header")
    header = lines[0].split()
    if len(header) != 2 or header[0] != "dim":
        raise EmbeddingFileError(1, f"malformed header {lines[0]!r}, expected 'dim E'")
    try:
        dim = int(header[1])
    except ValueError:
        raise EmbeddingFileError(1, f"dimension {header[1]!r} is not an integer") from None
    if dim < 1:
        raise EmbeddingFileError(1, f"dimension must be positive, got {dim}")

    ids, labels, rows, seen = [], [], [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise EmbeddingFileError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        cid, label, vec = parts
        if cid in seen:
            raise EmbeddingFileError(lineno, f"duplicate candidate id {cid!r}")
        seen.add(cid)
        try:
            values = [float(v) for v in vec.split(",")]
        except ValueError:
            raise EmbeddingFileError(lineno, "embedding contains a non-numeric value") from None
        if len(values) != dim:
            raise EmbeddingFileError(lineno, f"embedding has {len(values)} values, header says {dim}")
        if label in ("-", ""):
            labels.append(None)
        else:
            try:
                labels.append(int(label))
            except ValueError:
                raise EmbeddingFileError(lineno, f"label {label!r} is not an integer") from None
        ids.append(cid)
        rows.append(values)
    emb = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    has_labels = any(lab is not None for lab in labels)
    return EmbeddingDatabase(ids, emb, labels if has_labels else None)
