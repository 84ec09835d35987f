"""Local differential privacy sanitisation mechanisms.

The Laplace mechanism adds noise with density proportional to
``exp(-(eps/2) * ||z||_2)`` on R^d. It is sampled exactly as a Gamma(d, eps/2)
radius times a uniform direction on the unit sphere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp


class MechanismKind(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    NONE = "none"


class PreconditionError(ValueError):
    """Inputs fall outside the region where a stated guarantee holds."""


@dataclass(frozen=True)
class NoiseModel:
    """Mechanism parameters with the derived noise constants.

    ``epsilon`` is the privacy parameter for Laplace, the per-coordinate scale
    ``s`` for Gaussian, and ``None`` for the noiseless mechanism. ``b == 0``
    means the sub-exponential condition holds for every ``beta``.
    """

    kind: MechanismKind
    epsilon: float | None
    dim: int
    sigma_sq: float
    sigma_1d_sq: float
    b: float

    @property
    def is_private(self):
        return self.kind is MechanismKind.LAPLACE

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "epsilon": self.epsilon,
            "dim": self.dim,
            "sigma_sq": self.sigma_sq,
            "sigma_1d_sq": self.sigma_1d_sq,
            "b": self.b,
        }


def derive_params(kind, epsilon_or_scale, dim):
    """Build a :class:`NoiseModel` with all derived constants filled in.

    Laplace: ``sigma^2 = 4(d^2+d)/eps^2``, ``sigma_1d^2 = 18 d^2/eps^2``,
    ``b = eps/4``. Gaussian with scale ``s``: ``sigma_1d^2 = s^2``,
    ``sigma^2 = d s^2``, ``b = 0``. The noiseless mechanism ignores
    ``epsilon_or_scale``.
    """
    kind = MechanismKind(kind)
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    dim = int(dim)
    if kind is MechanismKind.NONE:
        return NoiseModel(kind, None, dim, 0.0, 0.0, 0.0)
    if epsilon_or_scale is None or not epsilon_or_scale > 0 or not math.isfinite(epsilon_or_scale):
        raise ValueError(f"{kind.value} parameter must be positive and finite, got {epsilon_or_scale}")
    e = float(epsilon_or_scale)
    if kind is MechanismKind.LAPLACE:
        return NoiseModel(kind, e, dim, 4.0 * (dim * dim + dim) / e**2, 18.0 * dim * dim / e**2, e / 4.0)
    return NoiseModel(kind, e, dim, dim * e * e, e * e, 0.0)


def _unit_directions(rng, n, d):
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # A zero Gaussian vector has probability zero; guard anyway.
    bad = norms[:, 0] == 0.0
    while bad.any():
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = norms[:, 0] == 0.0
    return v / norms


def sample_laplace_noise(model, rng, size=None):
    """Draw from the density proportional to ``exp(-(eps/2)||z||)``.

    Returns shape ``(d,)`` when ``size`` is None, else ``(size, d)``.
    """
    if model.kind is not MechanismKind.LAPLACE:
        raise ValueError(f"expected a Laplace model, got {model.kind.value}")
    n = 1 if size is None else int(size)
    radius = rng.gamma(shape=model.dim, scale=2.0 / model.epsilon, size=n)
    out = _unit_directions(rng, n, model.dim) * radius[:, None]
    return out[0] if size is None else out


def sample_gaussian_noise(model, rng, size=None):
    if model.kind is not MechanismKind.GAUSSIAN:
        raise ValueError(f"expected a Gaussian model, got {model.kind.value}")
    shape = (model.dim,) if size is None else (int(size), model.dim)
    return model.epsilon * rng.standard_normal(shape)


def sample_noise(model, rng, size=None):
    """Dispatch on ``model.kind``; the noiseless mechanism returns zeros."""
    if model.kind is MechanismKind.LAPLACE:
        return sample_laplace_noise(model, rng, size)
    if model.kind is MechanismKind.GAUSSIAN:
        return sample_gaussian_noise(model, rng, size)
    shape = (model.dim,) if size is None else (int(size), model.dim)
    return np.zeros(shape)


def laplace_log_normalizer(epsilon, dim):
    """log of ``integral exp(-(eps/2)||z||) dz`` over R^d.

    Equals ``log Gamma(d) + d log(2/eps) + log |S^{d-1}|`` with the sphere area
    ``2 pi^{d/2} / Gamma(d/2)``.
    """
    log_surface = math.log(2.0) + 0.5 * dim * math.log(math.pi) - gammaln(0.5 * dim)
    return float(gammaln(dim) + dim * math.log(2.0 / epsilon) + log_surface)


def laplace_log_density(model, z):
    """Normalised log-density of the Laplace mechanism at ``z`` (last axis = d)."""
    if model.kind is not MechanismKind.LAPLACE:
        raise ValueError(f"expected a Laplace model, got {model.kind.value}")
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.dim:
        raise ValueError(f"expected last dimension {model.dim}, got {z.shape}")
    out = -0.5 * model.epsilon * np.linalg.norm(z, axis=-1) - laplace_log_normalizer(model.epsilon, model.dim)
    return float(out) if out.ndim == 0 else out


def ldp_ratio_check(model, g, g_prime, probe_points, G=1.0):
    """Largest absolute log-likelihood ratio between releases of ``g`` and ``g_prime``.

    The release of ``g`` has density ``rho(u - g)``. For ``||g||, ||g'|| <= G <= 1``
    the result is at most ``(eps/2) ||g - g'|| <= eps``.
    """
    g = np.asarray(g, dtype=float)
    g_prime = np.asarray(g_prime, dtype=float)
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if probes.size == 0:
        raise ValueError("probe_points must be nonempty")
    if g.shape != (model.dim,) or g_prime.shape != (model.dim,) or probes.shape[1] != model.dim:
        raise ValueError("dimension mismatch")
    if G > 1.0:
        raise PreconditionError(f"gradient bound G={G} exceeds 1; the eps guarantee needs ||g - g'|| <= 2")
    tol = 1e-12
    if np.linalg.norm(g) > G + tol or np.linalg.norm(g_prime) > G + tol:
        raise PreconditionError("gradient norms exceed the declared bound G")
    diff = laplace_log_density(model, probes - g) - laplace_log_density(model, probes - g_prime)
    return float(np.max(np.abs(diff)))


@dataclass(frozen=True)
class MgfCheck:
    beta: float
    log_estimate: float
    log_bound: float
    rel_stderr: float
    passed: bool


def empirical_mgf_check(model, betas, rng, n_samples=100_000, n_directions=8, slack=5.0):
    """Monte-Carlo test of the directional sub-exponential condition.

    For each ``beta`` and each random unit direction ``a``, estimates
    ``E exp(beta <xi, a>)`` and checks it does not exceed
    ``exp(beta^2 sigma_1d^2 / 2)`` by more than ``slack`` standard errors.
    Computed in log space since both sides can exceed the float range.
    """
    xi = sample_noise(model, rng, n_samples)
    dirs = _unit_directions(rng, n_directions, model.dim)
    proj = xi @ dirs.T
    out = []
    for beta in betas:
        log_bound = 0.5 * beta * beta * model.sigma_1d_sq
        for j in range(n_directions):
            v = beta * proj[:, j]
            log_mean = float(logsumexp(v) - math.log(n_samples))
            # Relative standard error of the mean of exp(v).
            log_sq = float(logsumexp(2.0 * v) - math.log(n_samples))
            rel_var = max(math.exp(log_sq - 2.0 * log_mean) - 1.0, 0.0)
            rel_se = math.sqrt(rel_var / n_samples)
            lower = 1.0 - slack * rel_se
            passed = lower <= 0.0 or log_mean + math.log(lower) <= log_bound
            out.append(MgfCheck(float(beta), log_mean, log_bound, rel_se, passed))
    return out


def moment_report(model, n, seed=0, mgf_samples=100_000):
    """Empirical moment and MGF summary for the ``check-noise`` command."""
    rng = np.random.default_rng(seed)
    xi = sample_noise(model, rng, n)
    sq = np.einsum("ij,ij->i", xi, xi)
    mean_sq = float(sq.mean())
    report = {
        "mechanism": model.to_dict(),
        "n": int(n),
        "mean_sq_norm": mean_sq,
        "mean_sq_norm_stderr": float(sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "sigma_sq_bound": model.sigma_sq,
        "mean_vector": xi.mean(axis=0).tolist(),
        "checks": [],
    }
    ok = True
    if model.kind is not MechanismKind.NONE:
        rel = abs(mean_sq - model.sigma_sq) / model.sigma_sq
        passed = rel < 0.02
        report["checks"].append({"name": "second_moment_within_2pct", "value": rel, "passed": passed})
        ok &= passed
        stderr = xi.std(axis=0, ddof=1) / math.sqrt(n)
        z = float(np.max(np.abs(xi.mean(axis=0)) / stderr))
        passed = z < 5.0
        report["checks"].append({"name": "zero_mean_max_z", "value": z, "passed": passed})
        ok &= passed
    if model.b > 0:
        betas = [s * k / model.b for s in (-1, 1) for k in (0.5, 1.0)]
        mgf = empirical_mgf_check(model, betas, rng, n_samples=mgf_samples)
        passed = all(c.passed for c in mgf)
        report["checks"].append({
            "name": "mgf_bound",
            "value": max(c.log_estimate - c.log_bound for c in mgf),
            "passed": passed,
        })
        ok &= passed
    report["passed"] = bool(ok)
    return report
