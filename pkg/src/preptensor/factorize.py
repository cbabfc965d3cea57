"""Low-rank factorization of the log-transformed count tensor.

Two routes to the same factor matrices U (words), W (second word mode)
and Q (prepositions plus the extra slice): alternating least squares
with early orthogonalization, and a weighted gradient decomposition
with per-index bias terms trained only on nonzero entries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import SparseCountTensor

logger = logging.getLogger(__name__)

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

__all__ = [
    "TrainingConfig",
    "EmbeddingSet",
    "CooTensor",
    "log_transform",
    "weight",
    "orthogonalize_factors",
    "als_update_mode",
    "als_objective",
    "cp_fit",
    "decompose_orth_als",
    "decompose_weighted",
    "weighted_gradient",
]

RIDGE = 1e-8


@dataclass
class TrainingConfig:
    """Hyperparameters shared by both decomposition methods."""

    dim: int = 200
    iterations: int = 20
    ortho_iterations: int = 5
    x_max: float = 10.0
    alpha: float = 0.75
    learning_rate: float = 0.05
    seed: int = 0
    fit_tol: float = 1e-5

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.ortho_iterations > self.iterations:
            raise ValueError("ortho_iterations must not exceed iterations")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.x_max <= 0:
            raise ValueError(f"x_max must be positive, got {self.x_max}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class EmbeddingSet:
    """Factor matrices of one decomposition run.

    Rows of U are word vectors, rows of Q are preposition vectors with
    the extra-slice vector last. Bias vectors are present exactly for
    the weighted method.
    """

    U: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    method_tag: str
    b_U: np.ndarray | None = None
    b_W: np.ndarray | None = None
    b_Q: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    @property
    def has_biases(self) -> bool:
        return self.b_U is not None

    def validate(self) -> None:
        for name, arr in (("U", self.U), ("W", self.W), ("Q", self.Q)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in factor {name}")
        biases = (self.b_U, self.b_W, self.b_Q)
        if self.method_tag == "WD":
            if any(b is None for b in biases):
                raise ValueError("weighted decomposition requires bias vectors")
        elif any(b is not None for b in biases):
            raise ValueError(f"method {self.method_tag} must not carry biases")


@dataclass
class CooTensor:
    """Real-valued sparse tensor in coordinate form."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray
    dims: tuple[int, int, int]

    @property
    def nnz(self) -> int:
        return len(self.values)

    @classmethod
    def from_counts(cls, tensor: SparseCountTensor) -> "CooTensor":
        keys = sorted(tensor.entries, key=lambda e: (e[2], e[0], e[1]))
        arr = np.array(keys, dtype=np.int64).reshape(-1, 3)
        vals = np.array([tensor.entries[key] for key in keys], dtype=np.float64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], vals, tensor.dims)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)))


def log_transform(tensor: SparseCountTensor) -> CooTensor:
    """ln(1+x) on every stored count; the sparsity pattern is unchanged."""
    coo = CooTensor.from_counts(tensor)
    return CooTensor(coo.i, coo.j, coo.k, np.log1p(coo.values), coo.dims)


def weight(x, x_max: float, alpha: float):
    """Saturating weight min((x/x_max)^alpha, 1) applied to raw counts."""
    x = np.asarray(x, dtype=np.float64)
    out = np.minimum((x / x_max) ** alpha, 1.0)
    return float(out) if out.ndim == 0 else out


def _as_coo(tensor) -> tuple[CooTensor, CooTensor]:
    """Return (raw, log-domain) views of a count or real tensor."""
    if isinstance(tensor, SparseCountTensor):
        raw = CooTensor.from_counts(tensor)
    elif isinstance(tensor, CooTensor):
        raw = tensor
    else:
        raise TypeError(f"unsupported tensor type {type(tensor).__name__}")
    if raw.nnz == 0:
        raise ValueError("empty tensor: nothing to decompose")
    return raw, CooTensor(raw.i, raw.j, raw.k, np.log1p(raw.values), raw.dims)


def _reconstruction_at(emb: EmbeddingSet, coo: CooTensor) -> np.ndarray:
    return np.sum(emb.U[coo.i] * emb.W[coo.j] * emb.Q[coo.k], axis=1)


def als_objective(coo: CooTensor, U: np.ndarray, W: np.ndarray, Q: np.ndarray) -> float:
    """Squared Frobenius error against the full tensor (zeros included),
    evaluated without densifying.

    Split into the residual on the stored pattern plus the
    reconstruction's energy on the zero pattern; the split avoids the
    cancellation a norm-expansion formula suffers near exact fits.
    """
    recon_at = np.sum(U[coo.i] * W[coo.j] * Q[coo.k], axis=1)
    sparse_term = float(np.sum((coo.values - recon_at) ** 2))
    n, _, kp1 = coo.dims
    if coo.nnz == n * n * kp1:
        return sparse_term
    recon2 = float(np.sum((U.T @ U) * (W.T @ W) * (Q.T @ Q)))
    zero_term = max(recon2 - float(np.sum(recon_at ** 2)), 0.0)
    return sparse_term + zero_term


def cp_fit(coo, embeddings: EmbeddingSet) -> float:
    """1 minus relative Frobenius reconstruction error."""
    if isinstance(coo, SparseCountTensor):
        coo = log_transform(coo)
    norm_t = coo.norm()
    if norm_t == 0.0:
        raise ValueError("zero tensor has no defined fit")
    obj = als_objective(coo, embeddings.U, embeddings.W, embeddings.Q)
    return 1.0 - np.sqrt(obj) / norm_t


def _mttkrp(coo: CooTensor, A: np.ndarray, B: np.ndarray,
            idx_out: np.ndarray, idx_a: np.ndarray, idx_b: np.ndarray,
            n_out: int) -> np.ndarray:
    d = A.shape[1]
    out = np.zeros((n_out, d))
    np.add.at(out, idx_out, coo.values[:, None] * (A[idx_a] * B[idx_b]))
    return out


def als_update_mode(coo: CooTensor, U: np.ndarray, W: np.ndarray, Q: np.ndarray,
                    mode: str) -> np.ndarray:
    """Exact ridge-regularized least-squares update of one factor matrix,
    holding the other two fixed."""
    n, _, kp1 = coo.dims
    if mode == "U":
        m = _mttkrp(coo, W, Q, coo.i, coo.j, coo.k, n)
        gram = (W.T @ W) * (Q.T @ Q)
    elif mode == "W":
        m = _mttkrp(coo, U, Q, coo.j, coo.i, coo.k, n)
        gram = (U.T @ U) * (Q.T @ Q)
    elif mode == "Q":
        m = _mttkrp(coo, U, W, coo.k, coo.i, coo.j, kp1)
        gram = (U.T @ U) * (W.T @ W)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    gram = gram + RIDGE * np.eye(gram.shape[0])
    return np.linalg.solve(gram, m.T).T


def orthogonalize_factors(factor: np.ndarray,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Orthonormalize the d component columns, preserving their span.

    Rank-deficient columns are replaced by random orthogonal completions
    (logged); the result always has orthonormal columns.
    """
    n, d = factor.shape
    if n < d:
        raise ValueError(f"need at least d={d} rows to orthogonalize, got {n}")
    q, r = np.linalg.qr(factor)
    # Fix signs so the decomposition is deterministic.
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    deficient = np.abs(np.diag(r)) < 1e-12 * max(1.0, np.abs(r).max())
    if np.any(deficient):
        logger.warning("orthogonalize: replacing %d rank-deficient component(s)",
                       int(deficient.sum()))
        rng = rng or np.random.default_rng(0)
        for col in np.nonzero(deficient)[0]:
            v = rng.standard_normal(n)
            for other in range(d):
                if other != col:
                    v -= (q[:, other] @ v) * q[:, other]
            q[:, col] = v / np.linalg.norm(v)
    return q


def _init_factors(dims: tuple[int, int, int], d: int, seed: int):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)
    n, _, kp1 = dims
    U = rng.standard_normal((n, d)) * scale
    W = rng.standard_normal((n, d)) * scale
    Q = rng.standard_normal((kp1, d)) * scale
    return rng, U, W, Q


def decompose_orth_als(tensor, config: TrainingConfig) -> EmbeddingSet:
    """CP decomposition of the log tensor by alternating least squares.

    During the first ``ortho_iterations`` sweeps the factor components
    are orthogonalized before the least-squares updates (skipped for
    factors with fewer rows than components). Deterministic given the
    seed. Accepts a raw count tensor or an already log-domain CooTensor;
    count tensors are log-transformed first.
    """
    if isinstance(tensor, SparseCountTensor):
        coo = log_transform(tensor)
    elif isinstance(tensor, CooTensor):
        coo = tensor
    else:
        raise TypeError(f"unsupported tensor type {type(tensor).__name__}")
    if coo.nnz == 0 or coo.norm() == 0.0:
        raise ValueError("empty tensor: nothing to decompose")
    rng, U, W, Q = _init_factors(coo.dims, config.dim, config.seed)
    norm_t = coo.norm()
    prev_fit = -np.inf
    for sweep in range(config.iterations):
        if sweep < config.ortho_iterations:
            if U.shape[0] >= config.dim:
                U = orthogonalize_factors(U, rng)
            if W.shape[0] >= config.dim:
                W = orthogonalize_factors(W, rng)
            if Q.shape[0] >= config.dim:
                Q = orthogonalize_factors(Q, rng)
        U = als_update_mode(coo, U, W, Q, "U")
        W = als_update_mode(coo, U, W, Q, "W")
        Q = als_update_mode(coo, U, W, Q, "Q")
        obj = als_objective(coo, U, W, Q)
        fit = 1.0 - np.sqrt(obj) / norm_t
        logger.info("sweep %d objective %.10g fit %.10g", sweep + 1, obj, fit)
        if sweep >= config.ortho_iterations and fit - prev_fit < config.fit_tol:
            break
        prev_fit = fit
    emb = EmbeddingSet(U=U, W=W, Q=Q, method_tag="ALS")
    emb.validate()
    return emb


def weighted_gradient(emb: EmbeddingSet, i: int, j: int, k: int, x: float,
                      x_max: float, alpha: float):
    """Analytic gradient of one weighted squared-residual term.

    Returns (g_u, g_w, g_q, g_bias) where the shared scalar bias gradient
    applies to all three biases.
    """
    u, w, q = emb.U[i], emb.W[j], emb.Q[k]
    r = float(u @ (w * q)) + float(emb.b_U[i]) + float(emb.b_W[j]) + float(emb.b_Q[k])
    r -= np.log1p(x)
    g = 2.0 * weight(x, x_max, alpha) * r
    return g * (w * q), g * (u * q), g * (u * w), g


def _wd_epoch_python(order, ii, jj, kk, targets, weights, lr,
                     U, W, Q, bU, bW, bQ, GU, GW, GQ, GbU, GbW, GbQ):
    loss = 0.0
    for e in order:
        i, j, k = ii[e], jj[e], kk[e]
        u, w, q = U[i], W[j], Q[k]
        r = float(u @ (w * q)) + bU[i] + bW[j] + bQ[k] - targets[e]
        wt = weights[e]
        loss += wt * r * r
        g = 2.0 * wt * r
        gu = g * (w * q)
        gw = g * (u * q)
        gq = g * (u * w)
        U[i] = u - lr * gu / np.sqrt(GU[i])
        W[j] = w - lr * gw / np.sqrt(GW[j])
        Q[k] = q - lr * gq / np.sqrt(GQ[k])
        GU[i] += gu * gu
        GW[j] += gw * gw
        GQ[k] += gq * gq
        bU[i] -= lr * g / np.sqrt(GbU[i])
        bW[j] -= lr * g / np.sqrt(GbW[j])
        bQ[k] -= lr * g / np.sqrt(GbQ[k])
        GbU[i] += g * g
        GbW[j] += g * g
        GbQ[k] += g * g
    return loss


if _HAVE_NUMBA:

    @njit(cache=True)
    def _wd_epoch_numba(order, ii, jj, kk, targets, weights, lr,
                        U, W, Q, bU, bW, bQ, GU, GW, GQ, GbU, GbW, GbQ):
        d = U.shape[1]
        loss = 0.0
        for e in order:
            i, j, k = ii[e], jj[e], kk[e]
            r = bU[i] + bW[j] + bQ[k] - targets[e]
            for c in range(d):
                r += U[i, c] * W[j, c] * Q[k, c]
            wt = weights[e]
            loss += wt * r * r
            g = 2.0 * wt * r
            for c in range(d):
                u, w, q = U[i, c], W[j, c], Q[k, c]
                gu = g * w * q
                gw = g * u * q
                gq = g * u * w
                U[i, c] = u - lr * gu / np.sqrt(GU[i, c])
                W[j, c] = w - lr * gw / np.sqrt(GW[j, c])
                Q[k, c] = q - lr * gq / np.sqrt(GQ[k, c])
                GU[i, c] += gu * gu
                GW[j, c] += gw * gw
                GQ[k, c] += gq * gq
            bU[i] -= lr * g / np.sqrt(GbU[i])
            bW[j] -= lr * g / np.sqrt(GbW[j])
            bQ[k] -= lr * g / np.sqrt(GbQ[k])
            GbU[i] += g * g
            GbW[j] += g * g
            GbQ[k] += g * g
        return loss


def wd_loss(raw: CooTensor, emb: EmbeddingSet, x_max: float, alpha: float) -> float:
    """Weighted squared-residual loss over the nonzero entries."""
    targets = np.log1p(raw.values)
    weights = weight(raw.values, x_max, alpha)
    resid = (_reconstruction_at(emb, raw)
             + emb.b_U[raw.i] + emb.b_W[raw.j] + emb.b_Q[raw.k] - targets)
    return float(np.sum(weights * resid ** 2))


def decompose_weighted(tensor, config: TrainingConfig,
                       init: EmbeddingSet | None = None) -> EmbeddingSet:
    """Weighted decomposition with biases by adaptive stochastic descent.

    Visits shuffled nonzero entries (zero entries carry zero weight) for
    ``iterations`` epochs, updating each touched row with per-coordinate
    adaptive step sizes. Deterministic given seed in single-shard mode.
    """
    raw, _log = _as_coo(tensor)
    if np.any(raw.values <= 0):
        raise ValueError("weighted decomposition requires positive nonzero entries")
    d = config.dim
    n, _, kp1 = raw.dims
    rng = np.random.default_rng(config.seed)
    if init is not None:
        U, W, Q = init.U.copy(), init.W.copy(), init.Q.copy()
        bU, bW, bQ = init.b_U.copy(), init.b_W.copy(), init.b_Q.copy()
    else:
        scale = 1.0 / np.sqrt(d)
        U = rng.standard_normal((n, d)) * scale
        W = rng.standard_normal((n, d)) * scale
        Q = rng.standard_normal((kp1, d)) * scale
        bU = np.zeros(n)
        bW = np.zeros(n)
        bQ = np.zeros(kp1)
    GU, GW, GQ = np.ones_like(U), np.ones_like(W), np.ones_like(Q)
    GbU, GbW, GbQ = np.ones_like(bU), np.ones_like(bW), np.ones_like(bQ)
    targets = np.log1p(raw.values)
    weights = weight(raw.values, config.x_max, config.alpha)
    ii = raw.i.astype(np.int64)
    jj = raw.j.astype(np.int64)
    kk = raw.k.astype(np.int64)
    epoch_fn = _wd_epoch_numba if _HAVE_NUMBA else _wd_epoch_python
    for epoch in range(config.iterations):
        order = rng.permutation(raw.nnz).astype(np.int64)
        loss = epoch_fn(order, ii, jj, kk, targets, weights,
                        config.learning_rate,
                        U, W, Q, bU, bW, bQ, GU, GW, GQ, GbU, GbW, GbQ)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"weighted decomposition diverged at epoch {epoch + 1}: "
                f"loss is not finite (try a smaller learning rate)"
            )
        logger.info("epoch %d loss %.10g", epoch + 1, loss)
    emb = EmbeddingSet(U=U, W=W, Q=Q, method_tag="WD", b_U=bU, b_W=bW, b_Q=bQ)
    emb.validate()
    return emb
