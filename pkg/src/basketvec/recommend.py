"""Cosine queries over an embedding table and market basket generation.

Basket generation follows the two step recipe: rank every other product by
cosine similarity to the query, keep the top k, then eliminate candidates
that fall in the query's own concept cluster (substitutes).  The literal
variant may return fewer than k items; over_fetch keeps scanning the ranked
list until k survivors are found or the space is exhausted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .io import read_embeddings_text, write_embeddings_text
from .validation import check_int, check_matrix


class EmbeddingSpace:
    """An immutable product embedding matrix with cached row norms."""

    def __init__(self, vectors, tokens=None):
        self.vectors = check_matrix(vectors, "vectors")
        if tokens is not None:
            tokens = list(tokens)
            if len(tokens) != self.vectors.shape[0]:
                raise ValidationError(
                    f"{len(tokens)} tokens for {self.vectors.shape[0]} embedding rows")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)} if tokens else {}
        self.norms_ = np.linalg.norm(self.vectors, axis=1)
        self.zero_rows_ = self.norms_ == 0.0

    @property
    def n_products(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_dims(self) -> int:
        return self.vectors.shape[1]

    def id_of(self, token: str) -> int:
        if token not in self.index:
            raise ValidationError(f"unknown product {token!r}")
        return self.index[token]

    @classmethod
    def from_text(cls, path) -> "EmbeddingSpace":
        tokens, vectors = read_embeddings_text(path)
        return cls(vectors, tokens)

    def save_text(self, path) -> None:
        if self.tokens is None:
            raise ValidationError("this space has no tokens to export")
        write_embeddings_text(path, self.tokens, self.vectors)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError("cosine_similarity needs same-length vectors")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def _ranked_candidates(space: EmbeddingSpace, query: int):
    """All products ranked by (similarity desc, id asc), query and zero rows left out."""
    v = space.vectors[query]
    safe_norms = np.where(space.zero_rows_, 1.0, space.norms_)
    sims = (space.vectors @ v) / (safe_norms * space.norms_[query])
    np.clip(sims, -1.0, 1.0, out=sims)
    keep = ~space.zero_rows_
    keep[query] = False
    ids = np.nonzero(keep)[0]
    sims = sims[ids]
    order = np.lexsort((ids, -sims))
    return ids[order], sims[order]


def _check_query(space: EmbeddingSpace, query: int) -> int:
    query = check_int(query, "query", minimum=0)
    if query >= space.n_products:
        raise ValidationError(f"product id {query} out of range (P={space.n_products})")
    if space.zero_rows_[query]:
        raise ValidationError(f"product {query} has a zero-norm embedding")
    return query


def top_k_similar(space: EmbeddingSpace, query: int, k: int):
    """The k most cosine-similar products to `query`, excluding itself."""
    query = _check_query(space, query)
    k = check_int(k, "k", minimum=1)
    ids, sims = _ranked_candidates(space, query)
    return [(int(i), float(s)) for i, s in zip(ids[:k], sims[:k])]


@dataclass(frozen=True)
class BasketEntry:
    product: int
    similarity: float
    concept: int


def market_basket(space: EmbeddingSpace, concepts, query: int, k: int,
                  over_fetch: bool = False) -> list[BasketEntry]:
    """Complementary products for one query, ordered by descending similarity.

    Literal mode takes the top k then drops same-concept candidates, so the
    result may be shorter than k.  over_fetch walks the full ranked list
    until k survivors are collected.
    """
    query = _check_query(space, query)
    k = check_int(k, "k", minimum=1)
    if concepts.centroids_.shape[1] != space.n_dims:
        raise ValidationError(
            f"concept model is {concepts.centroids_.shape[1]}-dimensional, "
            f"space is {space.n_dims}-dimensional")
    query_concept = int(concepts.predict(space.vectors[query].reshape(1, -1))[0])
    ids, sims = _ranked_candidates(space, query)
    if not over_fetch:
        ids, sims = ids[:k], sims[:k]
    if ids.size == 0:
        return []
    labels = concepts.predict(space.vectors[ids])
    basket = []
    for i, s, c in zip(ids, sims, labels):
        if int(c) == query_concept:
            continue
        basket.append(BasketEntry(int(i), float(s), int(c)))
        if len(basket) == k:
            break
    return basket


def combine_embeddings(space: EmbeddingSpace, ids) -> np.ndarray:
    """Arithmetic mean of the given rows, the combined-query vector."""
    ids = list(ids)
    if not ids:
        raise ValidationError("combine_embeddings needs at least one product id")
    for i in ids:
        check_int(i, "product id", minimum=0)
        if i >= space.n_products:
            raise ValidationError(f"product id {i} out of range (P={space.n_products})")
    return space.vectors[ids].mean(axis=0)


def top_k_similar_to_vector(space: EmbeddingSpace, vector, k: int, exclude_ids=()):
    """Nearest products to an arbitrary vector (e.g. a combined embedding)."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape[0] != space.n_dims:
        raise ValidationError(f"expected a {space.n_dims}-dimensional vector")
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValidationError("cannot rank against a zero-norm vector")
    k = check_int(k, "k", minimum=1)
    safe_norms = np.where(space.zero_rows_, 1.0, space.norms_)
    sims = (space.vectors @ v) / (safe_norms * nv)
    np.clip(sims, -1.0, 1.0, out=sims)
    keep = ~space.zero_rows_
    for i in exclude_ids:
        keep[int(i)] = False
    ids = np.nonzero(keep)[0]
    order = np.lexsort((ids, -sims[ids]))
    chosen = ids[order][:k]
    return [(int(i), float(sims[i])) for i in chosen]
