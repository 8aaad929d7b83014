"""Synthetic class-clustered embedding databases with a linear embedder."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .core import AttackSpec
from .oracle.database import EmbeddingDatabase, RankingModel

DEFAULT_IMAGE_SHAPE = (3, 32, 32)


def candidate_id(i: int) -> str:
    # zero padding keeps lexical and numeric ID order identical
    return f"c{i:06d}"


def gen_synthetic_db(classes: int = 10, per_class: int = 100, embed_dim: int = 32,
                     intra_class_std: float = 0.1, seed: Optional[int] = 0,
                     center_scale: float = 1.0,
                     image_shape: tuple = DEFAULT_IMAGE_SHAPE) -> tuple[EmbeddingDatabase, RankingModel]:
    """Gaussian class centres plus isotropic within-class noise.

    The embedder has orthonormal rows (QR of a Gaussian matrix), so every
    stored embedding has an exact preimage near the grey image.
    """
    if classes < 1 or per_class < 1 or embed_dim < 1:
        raise ValueError("classes, per_class and embed_dim must be positive")
    if intra_class_std < 0 or center_scale < 0:
        raise ValueError("scales must be non-negative")
    input_dim = int(np.prod(image_shape))
    if embed_dim > input_dim:
        raise ValueError("embed_dim cannot exceed the image dimension")
    rng = np.random.default_rng(seed)
    centers = center_scale * rng.standard_normal((classes, embed_dim))
    labels = np.repeat(np.arange(classes), per_class)
    emb = centers[labels] + intra_class_std * rng.standard_normal((classes * per_class, embed_dim))
    basis, _ = np.linalg.qr(rng.standard_normal((input_dim, embed_dim)))
    model = RankingModel(basis.T, image_shape)
    ids = [candidate_id(i) for i in range(len(emb))]
    return EmbeddingDatabase(ids, emb, labels.tolist()), model


def query_image(model: RankingModel, db: EmbeddingDatabase, cid) -> np.ndarray:
    """The query image corresponding to a database entry."""
    return model.preimage(db.embedding(cid))


def collinear_triple(seed: Optional[int] = 0, embed_dim: int = 8, image_shape: tuple = (1, 8, 8),
                     spacing: float = 0.5, extra: int = 0, epsilon=8 / 255,
                     query_budget: int = 1000):
    """Three embeddings on a line, with a desired order no query can realise.

    Returns ``(db, model, q, spec)`` where the spec asks for
    ``c1 < c3 < c2`` with ``c1 = c2 - o`` and ``c3 = c2 + o``.
    """
    rng = np.random.default_rng(seed)
    input_dim = int(np.prod(image_shape))
    basis, _ = np.linalg.qr(rng.standard_normal((input_dim, embed_dim)))
    model = RankingModel(basis.T, image_shape)
    o = rng.standard_normal(embed_dim)
    o *= spacing / np.linalg.norm(o)
    e2 = 0.3 * rng.standard_normal(embed_dim)
    rows = [e2 - o, e2, e2 + o]
    ids = ["c1", "c2", "c3"]
    for i in range(extra):
        rows.append(e2 + 3 * spacing * rng.standard_normal(embed_dim))
        ids.append(f"x{i:03d}")
    db = EmbeddingDatabase(ids, np.array(rows))
    # a query that sits off the line near c2
    q = model.preimage(e2 + 0.1 * spacing * rng.standard_normal(embed_dim))
    spec = AttackSpec(candidates=("c1", "c2", "c3"), permutation=(0, 2, 1), epsilon=epsilon,
                      query_budget=query_budget)
    return db, model, q, spec
