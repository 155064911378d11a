"""Exact t-SNE with the quadratic pairwise formulation.

No tree approximations: P and Q are full N x N matrices, which caps
the practical input size but keeps the gradient simple enough to
verify numerically. The per-point bandwidths come from a binary search
matching each conditional distribution's entropy to log(perplexity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_POINTS = 5000
P_FLOOR = 1e-12


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    momentum_switch_iter: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    seed: int = 0


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_probs(dists_row: np.ndarray, beta: float, self_idx: int) -> np.ndarray:
    """Softmax of -beta * distance with the diagonal forced to zero."""
    logits = -beta * dists_row
    logits[self_idx] = -np.inf
    logits -= logits.max()
    p = np.exp(logits)
    p[self_idx] = 0.0
    return p / p.sum()


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def conditional_probs(
    dists: np.ndarray, perplexity: float, tol: float = 1e-4, max_iter: int = 64
) -> np.ndarray:
    """Per-row bandwidth search. Row i holds p(j | i), diagonal zero."""
    n = dists.shape[0]
    target = np.log(perplexity)
    cond = np.zeros_like(dists)
    for i in range(n):
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        row = dists[i].copy()
        for _ in range(max_iter):
            p = _row_probs(row, beta, i)
            gap = _entropy(p) - target
            if abs(gap) < tol:
                break
            if gap > 0:
                # entropy too high: sharpen by raising beta
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else 0.5 * (beta + beta_hi)
            else:
                beta_hi = beta
                beta = 0.5 * (beta + beta_lo)
        cond[i] = p
    return cond


def joint_probabilities(features: np.ndarray, perplexity: float) -> np.ndarray:
    cond = conditional_probs(pairwise_sq_dists(features), perplexity)
    p = (cond + cond.T) / (2.0 * features.shape[0])
    np.maximum(p, P_FLOOR, out=p)
    np.fill_diagonal(p, 0.0)
    return p


def _q_matrix(embedding: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t affinities: (normalized Q, unnormalized numerator)."""
    num = 1.0 / (1.0 + pairwise_sq_dists(embedding))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    np.maximum(q, P_FLOOR, out=q)
    np.fill_diagonal(q, 0.0)
    return q, num


def kl_divergence(p: np.ndarray, embedding: np.ndarray) -> float:
    q, _ = _q_matrix(embedding)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_gradient(p: np.ndarray, embedding: np.ndarray) -> np.ndarray:
    q, num = _q_matrix(embedding)
    weights = (p - q) * num
    # dC/dy_i = 4 sum_j w_ij (y_i - y_j)
    return 4.0 * (
        embedding * weights.sum(axis=1)[:, None] - weights @ embedding
    )


def _validate(features: np.ndarray, config: TsneConfig) -> None:
    if features.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {features.shape}")
    if not np.isfinite(features).all():
        raise ValueError("features contain NaN or infinity")
    n = features.shape[0]
    if n > MAX_POINTS:
        raise ValueError(
            f"{n} points exceeds the exact-method limit of {MAX_POINTS}"
        )
    if config.perplexity < 2.0:
        raise ValueError(f"perplexity {config.perplexity} too small")
    if n < 3 * config.perplexity:
        raise ValueError(
            f"need at least {int(np.ceil(3 * config.perplexity))} points for "
            f"perplexity {config.perplexity}, got {n}"
        )
    if config.iterations < 1:
        raise ValueError("iterations must be positive")


def tsne(features: np.ndarray, config: TsneConfig | None = None) -> np.ndarray:
    """Embed rows of `features` into the plane. Deterministic per seed."""
    config = config or TsneConfig()
    features = np.asarray(features, dtype=np.float64)
    _validate(features, config)
    n = features.shape[0]
    p = joint_probabilities(features, config.perplexity)

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-2, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        grad = kl_gradient(p * config.early_exaggeration if exaggerate else p, y)
        momentum = (
            config.initial_momentum
            if it < config.momentum_switch_iter
            else config.final_momentum
        )
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    return y
