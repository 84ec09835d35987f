"""BANCO: coin-betting magnitude times projected scale-free direction.

The iterate is ``w_t = m_t * q_t``. Each round the oracle is queried at
``w_t`` for a sanitised negative subgradient ``g_t``; the coin
``s_t = <g_t, q_t>`` (with the direction *before* its update) feeds the
magnitude learner, ``g_t`` feeds the direction learner, and the returned
point is the uniform average of ``w_1, ..., w_T``.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .direction import DirectionState
from .magnitude import BettingState
from .noise import NoiseModel


@dataclass
class RunConfig:
    dim: int
    G: float
    noise: NoiseModel
    T: int
    seed: int = 0

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError(f"G must be positive, got {self.G}")
        if isinstance(self.T, bool) or int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if self.noise.dim != self.dim:
            raise ValueError(f"noise dim {self.noise.dim} != run dim {self.dim}")


class BancoOptimizer:
    """Stateful BANCO learner; feed it one sanitised gradient per round."""

    def __init__(self, dim, G, noise):
        self.dim = int(dim)
        self.betting = BettingState.from_noise(G, noise.sigma_sq, noise.b)
        self.direction = DirectionState.zeros(self.dim)
        self.w = np.zeros(self.dim)
        self.w_avg_accum = np.zeros(self.dim)
        self.step_count = 0

    @classmethod
    def from_config(cls, config):
        return cls(config.dim, config.G, config.noise)

    @property
    def average(self):
        """Average of the iterates played so far (zero before the first round)."""
        if self.step_count == 0:
            return np.zeros(self.dim)
        return self.w_avg_accum / self.step_count

    def copy(self):
        return copy.deepcopy(self)

    def step(self, g_hat):
        """Consume the gradient for the current iterate ``w_t``; returns the coin ``s_t``."""
        g = np.asarray(getattr(g_hat, "vec", g_hat), dtype=float)
        if g.shape != self.w.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match dim {self.dim}")
        self.w_avg_accum += self.w
        self.step_count += 1
        coin = float(np.dot(g, self.direction.q))
        m = self.betting.update(coin)
        q = self.direction.update(g)
        self.w = m * q
        return coin


def banco_step(opt, g_hat):
    """Return a new optimizer advanced by one round; ``opt`` is left as is."""
    g = np.asarray(getattr(g_hat, "vec", g_hat), dtype=float)
    new = opt.copy()
    new.step(g)
    return new


@dataclass
class RunTrace:
    """Per-round record of what was played: ``m_t``, ``q_t``, ``g_t``, ``s_t``."""

    gradients: np.ndarray
    magnitudes: np.ndarray
    directions: np.ndarray
    coins: np.ndarray
    iterates: np.ndarray

    @property
    def direction_norms(self):
        return np.linalg.norm(self.directions, axis=1)


@dataclass
class RunResult:
    average: np.ndarray
    calls: int
    wall_time: float
    checkpoints: dict = field(default_factory=dict)
    trace: RunTrace | None = None
    error: Exception | None = None

    @property
    def truncated(self):
        return self.error is not None


def banco_run(config, oracle, checkpoints=(), trace=False, stop_on=()):
    """One pass of ``config.T`` oracle calls.

    ``checkpoints`` lists rounds ``t`` at which the running average of
    ``w_1..w_t`` is recorded. ``trace=True`` keeps every played quantity
    (O(T*d) memory). Exceptions of a type in ``stop_on`` end the run early
    and are stored on the result instead of propagating.
    """
    opt = BancoOptimizer.from_config(config)
    T = int(config.T)
    marks = sorted({int(c) for c in checkpoints})
    if marks and (marks[0] < 1 or marks[-1] > T):
        raise ValueError(f"checkpoints must lie in [1, {T}]")
    if trace:
        d = config.dim
        tr = RunTrace(np.empty((T, d)), np.empty(T), np.empty((T, d)), np.empty(T), np.empty((T, d)))
    saved = {}
    next_mark = iter(marks)
    mark = next(next_mark, None)
    error = None
    start = time.perf_counter()
    t = 0
    try:
        for t in range(1, T + 1):
            if trace:
                tr.iterates[t - 1] = opt.w
                tr.magnitudes[t - 1] = opt.betting.current_m
                tr.directions[t - 1] = opt.direction.q
            g = oracle(opt.w)
            g = getattr(g, "vec", g)
            coin = opt.step(g)
            if trace:
                tr.gradients[t - 1] = g
                tr.coins[t - 1] = coin
            if t == mark:
                saved[t] = opt.average
                mark = next(next_mark, None)
    except tuple(stop_on) as exc:
        error = exc
        if trace:
            n = opt.step_count
            tr = RunTrace(tr.gradients[:n], tr.magnitudes[:n], tr.directions[:n], tr.coins[:n], tr.iterates[:n])
    wall = time.perf_counter() - start
    return RunResult(opt.average, opt.step_count, wall, saved, tr if trace else None, error)


def regret_decomposition_check(gradients, magnitudes, directions, u):
    """Split the linear regret against ``u`` into magnitude and direction parts.

    Returns ``(lhs, rhs_m, rhs_d)`` with ``lhs = sum <g_t, u - m_t q_t>``,
    ``rhs_m = sum s_t (||u|| - m_t)`` and ``rhs_d = ||u|| sum <g_t, u/||u|| - q_t>``
    (``u/||u|| = 0`` when ``u = 0``). The split is exact on every path.
    """
    G = np.asarray(gradients, dtype=float)
    M = np.asarray(magnitudes, dtype=float)
    Q = np.asarray(directions, dtype=float)
    u = np.asarray(u, dtype=float)
    if G.shape != Q.shape or M.shape != (G.shape[0],):
        raise ValueError(f"trace length mismatch: {G.shape}, {M.shape}, {Q.shape}")
    norm_u = float(np.linalg.norm(u))
    coins = np.einsum("ij,ij->i", G, Q)
    gu = G @ u
    lhs = float(np.sum(gu - M * coins))
    rhs_m = float(np.sum(coins * (norm_u - M)))
    if norm_u == 0.0:
        rhs_d = 0.0
    else:
        rhs_d = norm_u * float(np.sum(gu / norm_u - coins))
    return lhs, rhs_m, rhs_d


def regret(gradients, iterates, u):
    """``sum <g_t, u - w_t>`` for a comparator ``u``."""
    G = np.asarray(gradients, dtype=float)
    W = np.asarray(iterates, dtype=float)
    return float(np.sum(G @ np.asarray(u, dtype=float)) - np.einsum("ij,ij->", G, W))


__all__ = [
    "BancoOptimizer",
    "RunConfig",
    "RunResult",
    "RunTrace",
    "banco_run",
    "banco_step",
    "regret",
    "regret_decomposition_check",
]
