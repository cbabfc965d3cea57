"""Embedding persistence and geometric queries.

Similarity measures over trained vectors, phrasal-verb paraphrasing via
Hadamard products against the constant extra-slice vector, preposition
ranking, and singular-value spectra of tensor slices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .corpus import SparseCountTensor, Vocabulary
from .factorize import EmbeddingSet

logger = logging.getLogger(__name__)

__all__ = [
    "EmbeddingStore",
    "cosine_similarity",
    "preposition_similarity_table",
    "pair_similarity",
    "triple_similarity",
    "paraphrase_phrasal_verb",
    "rank_preposition",
    "slice_spectrum",
    "save_embeddings",
    "load_embeddings",
]

NOPREP_TOKEN = "__NOPREP__"


@dataclass
class EmbeddingStore:
    """Token -> vector map plus the constant extra-slice vector.

    Words come from the U factor, prepositions from Q; ``prepositions``
    keeps the roster order used for ranking and tie-breaking.
    """

    vectors: dict[str, np.ndarray]
    q_const: np.ndarray
    dim: int
    prepositions: list[str] = field(default_factory=list)

    @classmethod
    def from_factors(cls, vocab: Vocabulary, emb: EmbeddingSet) -> "EmbeddingStore":
        vectors: dict[str, np.ndarray] = {}
        for i, tok in enumerate(vocab.words):
            vectors[tok] = np.asarray(emb.U[i], dtype=np.float64)
        for k, tok in enumerate(vocab.prepositions):
            vectors[tok] = np.asarray(emb.Q[k], dtype=np.float64)
        q_const = np.asarray(emb.Q[vocab.n_prepositions], dtype=np.float64)
        return cls(vectors=vectors, q_const=q_const, dim=emb.dim,
                   prepositions=list(vocab.prepositions))

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        try:
            return self.vectors[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in embedding store") from None

    def get_or_zero(self, token: str) -> np.ndarray:
        return self.vectors.get(token, np.zeros(self.dim))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(a @ b / (na * nb))


def preposition_similarity_table(
    store: EmbeddingStore,
    pairs: Sequence[tuple[str, str]],
    centered: bool = True,
) -> list[tuple[str, str, float]]:
    """Cosine for each preposition pair, optionally after subtracting the
    mean of all roster preposition vectors."""
    if centered:
        if not store.prepositions:
            raise ValueError("centered similarity needs a preposition roster")
        mean = np.mean([store.get(p) for p in store.prepositions], axis=0)
    else:
        mean = np.zeros(store.dim)
    rows = []
    for left, right in pairs:
        sim = cosine_similarity(store.get(left) - mean, store.get(right) - mean)
        rows.append((left, right, sim))
    return rows


def pair_similarity(v_left: np.ndarray, v_right: np.ndarray,
                    v_p: np.ndarray) -> float:
    """Best cosine between the preposition and either context side; a
    zero-vector side is excluded from the max."""
    if np.linalg.norm(v_p) == 0.0:
        raise ValueError("preposition vector must be nonzero")
    sims = []
    for v in (v_left, v_right):
        if np.linalg.norm(v) > 0.0:
            sims.append(cosine_similarity(v, v_p))
    if not sims:
        raise ValueError("both context vectors are zero")
    return max(sims)


def triple_similarity(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Three-way inner product sum(a*b*c) normalized by 3-norms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    norms = [np.sum(np.abs(v) ** 3) ** (1.0 / 3.0) for v in (a, b, c)]
    if any(n == 0.0 for n in norms):
        raise ValueError("triple similarity undefined for zero 3-norm vector")
    return float(np.sum(a * b * c) / (norms[0] * norms[1] * norms[2]))


def paraphrase_phrasal_verb(
    head: str,
    prep: str,
    candidate_verbs: Sequence[str],
    store: EmbeddingStore,
) -> list[tuple[str, float]]:
    """Rank candidate single verbs as paraphrases of (head, prep).

    Candidates are sorted ascending by the Euclidean distance between
    their Hadamard product with the constant extra-slice vector and the
    head's product with the preposition vector; ties keep candidate order.
    """
    if not candidate_verbs:
        raise ValueError("candidate set is empty")
    target = store.get(head) * store.get(prep)
    scored = []
    for pos, verb in enumerate(candidate_verbs):
        dist = float(np.linalg.norm(store.get(verb) * store.q_const - target))
        scored.append((dist, pos, verb))
    scored.sort(key=lambda rec: (rec[0], rec[1]))
    return [(verb, dist) for dist, _, verb in scored]


def rank_preposition(
    context_vectors: Sequence[np.ndarray],
    observed_prep: str,
    store: EmbeddingStore,
) -> tuple[int, float]:
    """1-based cosine rank of the observed preposition against the
    averaged context, ties broken by roster order."""
    if observed_prep not in store.prepositions:
        raise ValueError(f"preposition {observed_prep!r} not in roster")
    context = [np.asarray(v, dtype=np.float64) for v in context_vectors
               if np.linalg.norm(v) > 0.0]
    if not context:
        raise ValueError("no nonzero context vectors")
    mean = np.mean(context, axis=0)
    sims = [cosine_similarity(store.get(p), mean) for p in store.prepositions]
    observed_idx = store.prepositions.index(observed_prep)
    observed_sim = sims[observed_idx]
    rank = 1
    for idx, sim in enumerate(sims):
        if sim > observed_sim or (sim == observed_sim and idx < observed_idx):
            rank += 1
    return rank, observed_sim


def slice_spectrum(tensor: SparseCountTensor, k: int, top_m: int) -> np.ndarray:
    """Top singular values of log(1+X[:,:,k]) divided by the largest.

    Uses iterative sparse SVD for large slices, falling back to a dense
    SVD when the requested count does not leave room for iteration.
    """
    if top_m < 1:
        raise ValueError(f"top_m must be >= 1, got {top_m}")
    n = tensor.n_words
    items = [(i, j, c) for (i, j, kk), c in tensor.entries.items() if kk == k]
    if not items:
        raise ValueError(f"slice {k} is empty")
    rows, cols, vals = zip(*items)
    mat = scipy.sparse.csr_matrix(
        (np.log1p(np.array(vals, dtype=np.float64)), (rows, cols)), shape=(n, n)
    )
    top_m = min(top_m, n)
    if top_m < min(mat.shape) - 1 and n > 50:
        svals = scipy.sparse.linalg.svds(mat, k=top_m, return_singular_vectors=False)
        svals = np.sort(svals)[::-1]
    else:
        svals = np.linalg.svd(mat.toarray(), compute_uv=False)[:top_m]
    if svals[0] == 0.0:
        raise ValueError(f"slice {k} has zero spectrum")
    return svals / svals[0]


def save_embeddings(store: EmbeddingStore, path) -> None:
    """Common word-vector text layout: a `count dim` header, then one
    `token f1 ... fd` line per token; the constant vector is stored
    under the reserved token."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(store.vectors) + 1} {store.dim}\n")
        for tok, vec in store.vectors.items():
            fh.write(tok + " " + " ".join(format(x, ".17g") for x in vec) + "\n")
        fh.write(NOPREP_TOKEN + " "
                 + " ".join(format(x, ".17g") for x in store.q_const) + "\n")


def load_embeddings(path, roster: Sequence[str] | None = None) -> EmbeddingStore:
    """Load the text layout; also accepts externally trained word2vec or
    GloVe style files (with or without the count/dim header)."""
    vectors: dict[str, np.ndarray] = {}
    q_const = None
    dim = None
    declared = None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        parts = first.split()
        start = 2
        if len(parts) == 2:
            try:
                declared, dim = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"{path}: line 1: bad header") from None
        else:
            # Headerless GloVe-style file: the first line is a vector row.
            dim = len(parts) - 1
            vectors[parts[0]] = _parse_vector(parts, dim, path, 1)
        for lineno, line in enumerate(fh, start=start):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim} floats, got {len(parts) - 1}"
                )
            vec = _parse_vector(parts, dim, path, lineno)
            if parts[0] == NOPREP_TOKEN:
                q_const = vec
            else:
                vectors[parts[0]] = vec
    total = len(vectors) + (1 if q_const is not None else 0)
    if declared is not None and total != declared:
        raise ValueError(f"{path}: header declares {declared} rows, found {total}")
    if q_const is None:
        q_const = np.zeros(dim)
    preps = [p for p in roster if p in vectors] if roster else []
    return EmbeddingStore(vectors=vectors, q_const=q_const, dim=dim,
                          prepositions=preps)


def _parse_vector(parts, dim, path, lineno) -> np.ndarray:
    try:
        return np.array([float(x) for x in parts[1:]], dtype=np.float64)
    except ValueError:
        raise ValueError(f"{path}: line {lineno}: non-numeric vector entry") from None
