"""Synthetic convex risks with known minimisers and their subgradient oracles.

All subgradients are *negative* subgradients with norm at most 1:

* ``point_mass_abs``: ``l(w) = ||w - w*||``, no data.
* ``noisy_abs``: ``l(w, x) = ||w - x||`` with ``x = w* + spread * u``, ``u``
  uniform on the unit sphere. ``w*`` minimises the risk by symmetry.
* ``hinge``: ``l(w, (z, y)) = max(0, 1 - y <w, z>)`` with ``z`` uniform on the
  unit sphere and ``y = sign(<w_planted, z>)`` flipped with probability
  ``flip``. The minimiser is a reference point, see :func:`reference_minimizer`.
* ``logistic``: ``l(w, (z, y)) = log(1 + exp(-y <w, z>))`` with
  ``P(y = 1 | z) = sigmoid(<w*, z>)``; the model is well specified so ``w*``
  is the exact minimiser.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .noise import MechanismKind, sample_noise

_BLOCK = 2048


class ProblemKind(str, enum.Enum):
    POINT_MASS_ABS = "point_mass_abs"
    NOISY_ABS = "noisy_abs"
    HINGE = "hinge"
    LOGISTIC = "logistic"


@dataclass(frozen=True, eq=False)
class SanitizedGradient:
    vec: np.ndarray
    step: int


@dataclass(eq=False)
class Problem:
    kind: ProblemKind
    dim: int
    w_star: np.ndarray
    data_params: dict = field(default_factory=dict)
    G: float = 1.0

    def __post_init__(self):
        self.kind = ProblemKind(self.kind)
        self.w_star = np.asarray(self.w_star, dtype=float)
        if self.w_star.shape != (self.dim,):
            raise ValueError(f"w_star must have shape ({self.dim},), got {self.w_star.shape}")

    @property
    def w_star_norm(self):
        return float(np.linalg.norm(self.w_star))

    @property
    def has_data(self):
        return self.kind is not ProblemKind.POINT_MASS_ABS

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "dim": self.dim,
            "w_star": self.w_star.tolist(),
            "data_params": dict(self.data_params),
            "G": self.G,
        }

    def sample(self, rng, n):
        """Draw ``n`` i.i.d. data points as an ``(n, d)`` feature array and labels.

        Labels are ``None`` for the distance problems.
        """
        d = self.dim
        if self.kind is ProblemKind.POINT_MASS_ABS:
            return np.broadcast_to(self.w_star, (n, d)), None
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        if self.kind is ProblemKind.NOISY_ABS:
            return self.w_star + self.data_params.get("spread", 1.0) * z, None
        if self.kind is ProblemKind.HINGE:
            planted = np.asarray(self.data_params["planted"], dtype=float)
            y = np.where(z @ planted >= 0.0, 1.0, -1.0)
            flip = rng.random(n) < self.data_params.get("flip", 0.1)
            return z, np.where(flip, -y, y)
        p = 1.0 / (1.0 + np.exp(-(z @ self.w_star)))
        return z, np.where(rng.random(n) < p, 1.0, -1.0)

    def neg_subgradient(self, w, x, y=None):
        """Negative subgradient of ``l(., x)`` at ``w`` for one data point."""
        if self.kind is ProblemKind.POINT_MASS_ABS or self.kind is ProblemKind.NOISY_ABS:
            diff = x - w
            n = math.sqrt(float(np.dot(diff, diff)))
            # 0 is a valid subgradient at the kink.
            return diff * (1.0 / n) if n > 0.0 else np.zeros_like(diff)
        margin = y * float(np.dot(w, x))
        if self.kind is ProblemKind.HINGE:
            return y * x if margin < 1.0 else np.zeros_like(x)
        if margin >= 0.0:
            e = math.exp(-margin)
            c = e / (1.0 + e)
        else:
            c = 1.0 / (1.0 + math.exp(margin))
        return (y * c) * x

    def losses(self, w, x, y=None):
        """Per-sample losses at ``w`` over a data batch."""
        w = np.asarray(w, dtype=float)
        if self.kind is ProblemKind.POINT_MASS_ABS or self.kind is ProblemKind.NOISY_ABS:
            return np.linalg.norm(x - w, axis=1)
        margin = y * (x @ w)
        if self.kind is ProblemKind.HINGE:
            return np.maximum(0.0, 1.0 - margin)
        return np.logaddexp(0.0, -margin)


def make_problem(kind, dim, w_star_norm=None, w_star=None, seed=0, random_direction=False,
                 reference_steps=200_000, **data_params):
    """Build a problem with a minimiser of the requested norm.

    Without an explicit ``w_star``, the minimiser is ``w_star_norm * e_1``, or
    ``w_star_norm`` times a unit vector drawn from ``seed`` when
    ``random_direction`` is set. For ``hinge`` that vector is the planted
    labelling direction and ``w_star`` is filled in by :func:`reference_minimizer`
    with ``reference_steps`` noiseless steps.
    """
    kind = ProblemKind(kind)
    if w_star is None:
        if w_star_norm is None:
            raise ValueError("give either w_star or w_star_norm")
        if random_direction:
            v = np.random.default_rng(seed).standard_normal(dim)
            w_star = w_star_norm * v / np.linalg.norm(v)
        else:
            w_star = np.zeros(dim)
            w_star[0] = w_star_norm
    w_star = np.asarray(w_star, dtype=float)
    if kind is ProblemKind.HINGE:
        params = {"flip": 0.1, **data_params, "planted": w_star.tolist()}
        prob = Problem(kind, dim, np.zeros(dim), params)
        prob.w_star = reference_minimizer(prob, T=reference_steps, seed=seed)
        return prob
    return Problem(kind, dim, w_star, data_params)


def raw_subgradient(problem, w, rng):
    """One negative subgradient at ``w`` for a fresh sample."""
    x, y = problem.sample(rng, 1)
    return problem.neg_subgradient(np.asarray(w, dtype=float), x[0], None if y is None else y[0])


class SanitizedOracle:
    """Callable ``w -> SanitizedGradient`` that adds mechanism noise.

    Each call consumes one fresh data point and one fresh noise draw and
    charges one request to ``ledger`` *before* anything is released, so a
    budget refusal leaks nothing. Data and noise come from independent
    streams drawn in blocks; results depend only on ``seed``.
    """

    def __init__(self, problem, noise, ledger=None, seed=0, run_label="run"):
        if noise.dim != problem.dim:
            raise ValueError(f"noise dim {noise.dim} != problem dim {problem.dim}")
        self.problem = problem
        self.noise = noise
        self.ledger = ledger
        self.run_label = run_label
        data_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
        self._data_rng = np.random.default_rng(data_seq)
        self._noise_rng = np.random.default_rng(noise_seq)
        self._noiseless = noise.kind is MechanismKind.NONE
        self._xi = None
        self._x = self._y = None
        self._i = _BLOCK
        self.calls = 0

    def _refill(self):
        if not self._noiseless:
            self._xi = sample_noise(self.noise, self._noise_rng, _BLOCK)
        if self.problem.has_data:
            self._x, self._y = self.problem.sample(self._data_rng, _BLOCK)
        self._i = 0

    def raw(self, w):
        """Charge and return ``(raw subgradient, noise)`` for the next request."""
        if self.ledger is not None:
            self.ledger.charge(self.run_label, 1)
        if self._i == _BLOCK:
            self._refill()
        i = self._i
        self._i = i + 1
        self.calls += 1
        p = self.problem
        if p.has_data:
            g = p.neg_subgradient(w, self._x[i], None if self._y is None else self._y[i])
        else:
            g = p.neg_subgradient(w, p.w_star)
        return g, (None if self._noiseless else self._xi[i])

    def __call__(self, w):
        g, xi = self.raw(w)
        vec = g if xi is None else g + xi
        return SanitizedGradient(vec, self.calls)


def sanitized_oracle(problem, noise, ledger=None, seed=0, run_label="run"):
    return SanitizedOracle(problem, noise, ledger, seed, run_label)


def risk(problem, w, n_mc=10_000, rng=None, sample=None):
    """Risk estimate and its standard error.

    Exact for ``point_mass_abs``. Otherwise the mean loss over ``sample``
    (an ``(x, y)`` pair from :meth:`Problem.sample`), or over ``n_mc`` fresh
    samples from ``rng``.
    """
    w = np.asarray(w, dtype=float)
    if problem.kind is ProblemKind.POINT_MASS_ABS:
        return float(np.linalg.norm(w - problem.w_star)), 0.0
    if sample is None:
        if rng is None:
            rng = np.random.default_rng(0)
        sample = problem.sample(rng, int(n_mc))
    losses = problem.losses(w, *sample)
    n = losses.shape[0]
    se = float(losses.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(losses.mean()), se


def reference_minimizer(problem, T=200_000, seed=0):
    """Minimiser estimate from a long noiseless BANCO run."""
    from .banco import RunConfig, banco_run
    from .noise import derive_params

    if problem.kind is ProblemKind.POINT_MASS_ABS:
        return problem.w_star.copy()
    noise = derive_params(MechanismKind.NONE, None, problem.dim)
    oracle = SanitizedOracle(problem, noise, seed=seed + 7919)
    cfg = RunConfig(dim=problem.dim, G=problem.G, noise=noise, T=T, seed=seed)
    return banco_run(cfg, oracle).average
