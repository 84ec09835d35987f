"""Projected scale-free online gradient ascent on the unit L2 ball."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DirectionState:
    """Current direction ``q`` and the running sum of squared gradient norms.

    Gradients are negative subgradients, so the update moves *along* them:
    ``q <- Proj(q + g / sqrt(sum ||g_s||^2))``.
    """

    q: np.ndarray
    grad_norm_sq_sum: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, dim):
        return cls(q=np.zeros(int(dim)))

    def copy(self):
        return DirectionState(self.q.copy(), self.grad_norm_sq_sum, self.step)

    def update(self, g):
        """In-place update with gradient ``g``; returns the new ``q``."""
        sq = float(np.dot(g, g))
        if not math.isfinite(sq):
            raise ValueError("gradient contains NaN or Inf")
        self.grad_norm_sq_sum += sq
        self.step += 1
        if self.grad_norm_sq_sum > 0.0:
            q = self.q
            q += g * (1.0 / math.sqrt(self.grad_norm_sq_sum))
            norm_sq = float(np.dot(q, q))
            if norm_sq > 1.0:
                q *= 1.0 / math.sqrt(norm_sq)
        return self.q


def direction_update(state, g_hat):
    """Return the updated state, leaving ``state`` untouched."""
    g = np.asarray(g_hat, dtype=float)
    if g.shape != state.q.shape:
        raise ValueError(f"gradient shape {g.shape} does not match direction {state.q.shape}")
    new = state.copy()
    new.update(g)
    return new


def direction_regret(gradients, directions, u):
    """``sum_t <g_t, u - q_t>`` for a comparator in the unit ball."""
    G = np.asarray(gradients, dtype=float)
    Q = np.asarray(directions, dtype=float)
    u = np.asarray(u, dtype=float)
    if G.shape != Q.shape:
        raise ValueError(f"length mismatch: {G.shape} vs {Q.shape}")
    if np.linalg.norm(u) > 1.0 + 1e-12:
        raise ValueError("comparator must lie in the unit ball")
    if G.size == 0:
        return 0.0
    return float(np.sum(G @ u) - np.einsum("ij,ij->", G, Q))
