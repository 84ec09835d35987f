"""Reference SGD optimisers and a grid-search tuner.

Gradients are negative subgradients, so every step is ``w + eta * g``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .banco import RunResult


@dataclass
class SgdConfig:
    """Constant step ``eta``; with ``adaptive=True`` the step is
    ``radius / sqrt(sum ||g_s||^2)`` instead."""

    dim: int
    T: int
    eta: float | None = None
    adaptive: bool = False
    radius: float | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.T, bool) or int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if self.adaptive:
            if self.radius is None or not self.radius > 0:
                raise ValueError(f"adaptive SGD needs a positive radius, got {self.radius}")
        elif self.eta is None or not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


def sgd_step(w, g_hat, eta):
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    out = np.asarray(w, dtype=float) + eta * np.asarray(getattr(g_hat, "vec", g_hat), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError("SGD step produced a non-finite iterate")
    return out


def sgd_run(config, oracle, checkpoints=(), stop_on=()):
    """One pass of ``config.T`` oracle calls; returns the average of ``w_1..w_T``."""
    T = int(config.T)
    marks = sorted({int(c) for c in checkpoints})
    if marks and (marks[0] < 1 or marks[-1] > T):
        raise ValueError(f"checkpoints must lie in [1, {T}]")
    w = np.zeros(config.dim)
    acc = np.zeros(config.dim)
    saved = {}
    next_mark = iter(marks)
    mark = next(next_mark, None)
    eta = config.eta
    sq_sum = 0.0
    calls = 0
    error = None
    start = time.perf_counter()
    try:
        for t in range(1, T + 1):
            g = oracle(w)
            g = getattr(g, "vec", g)
            acc += w
            calls = t
            if config.adaptive:
                sq_sum += float(np.dot(g, g))
                eta = config.radius / math.sqrt(sq_sum) if sq_sum > 0.0 else 0.0
            w = w + eta * g
            if t == mark:
                saved[t] = acc / t
                mark = next(next_mark, None)
    except tuple(stop_on) as exc:
        error = exc
    wall = time.perf_counter() - start
    avg = acc / calls if calls else np.zeros(config.dim)
    return RunResult(avg, calls, wall, saved, None, error)


@dataclass
class GridTuneResult:
    grid: list
    per_eta_risk: dict
    best_eta: float
    total_requests: int
    averages: dict = field(default_factory=dict)


def grid_tune(grid, config, oracle_factory, ledger, risk_fn):
    """Run constant-step SGD once per ``eta`` and keep the best.

    ``oracle_factory(k, ledger)`` must return a fresh one-pass oracle for the
    ``k``-th grid point that charges ``ledger``. ``risk_fn(w)`` scores the
    returned average; the smallest score wins (ties go to the earlier eta).
    """
    grid = [float(e) for e in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    per_eta = {}
    averages = {}
    total = 0
    for k, eta in enumerate(grid):
        cfg = SgdConfig(dim=config.dim, T=config.T, eta=eta, seed=config.seed)
        res = sgd_run(cfg, oracle_factory(k, ledger))
        total += res.calls
        per_eta[eta] = float(risk_fn(res.average))
        averages[eta] = res.average
    best = min(grid, key=lambda e: per_eta[e])
    return GridTuneResult(grid, per_eta, best, total, averages)


def default_grid(epsilon, dim, T, n_points=15, low=-6.0, high=1.0):
    """Log-spaced step grid ``10**low .. 10**high``.

    The default range brackets the oracle step ``||w*|| (eps/d) / sqrt(T)`` for
    ``||w*||`` from 0.1 to 100 at ``eps = 1, d = 2, T = 1e5``; ``epsilon``,
    ``dim`` and ``T`` shift the grid so it stays centred on ``(eps/d)/sqrt(T)``.
    """
    centre = math.log10((epsilon / dim) / math.sqrt(T)) - math.log10((1.0 / 2.0) / math.sqrt(1e5))
    return list(np.logspace(low + centre, high + centre, n_points))
