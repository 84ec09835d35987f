import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banco_ldp.ledger import BudgetExceededError, PrivacyLedger
from banco_ldp.noise import derive_params
from banco_ldp.problems import (
    Problem,
    ProblemKind,
    SanitizedGradient,
    make_problem,
    raw_subgradient,
    reference_minimizer,
    risk,
    sanitized_oracle,
)


class TestRawSubgradient:
    def test_point_mass_at_minimiser(self):
        p = make_problem("point_mass_abs", 3, 2.0)
        np.testing.assert_array_equal(raw_subgradient(p, p.w_star, np.random.default_rng(0)), np.zeros(3))

    def test_point_mass_toward_w_star(self):
        p = make_problem("point_mass_abs", 2, w_star=[3.0, 0.0])
        np.testing.assert_array_equal(raw_subgradient(p, [0.0, 0.0], np.random.default_rng(0)), [1.0, 0.0])

    def test_hinge_bounded_1e6(self):
        p = make_problem("hinge", 4, 1.0)
        rng = np.random.default_rng(1)
        for _ in range(10):
            w = rng.normal(size=4) * 3
            z, y = p.sample(rng, 100_000)
            active = y * (z @ w) < 1.0
            g = (y * active)[:, None] * z
            assert np.max(np.linalg.norm(g, axis=1)) <= 1 + 1e-12
        # The per-sample oracle agrees with the vectorised formula on a subset.
        for i in range(200):
            expected = y[i] * z[i] if y[i] * (z[i] @ w) < 1 else np.zeros(4)
            np.testing.assert_array_equal(p.neg_subgradient(w, z[i], y[i]), expected)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(list(ProblemKind)), st.integers(1, 8), st.integers(0, 2**31),
           st.floats(-100, 100))
    def test_bounded_all_kinds(self, kind, d, seed, scale):
        rng = np.random.default_rng(seed)
        p = make_problem(kind, d, abs(scale) + 0.1, seed=seed % 7) if kind is not ProblemKind.HINGE else _HINGE
        d = p.dim
        w = rng.normal(size=d) * scale
        for _ in range(20):
            assert np.linalg.norm(raw_subgradient(p, w, rng)) <= p.G + 1e-12


_HINGE = make_problem("hinge", 3, 1.0, seed=3)


def _fd_gradient(p, w, n, seed, h=1e-5):
    x, y = p.sample(np.random.default_rng(seed), n)
    out, se = np.empty(p.dim), np.empty(p.dim)
    for i in range(p.dim):
        e = np.zeros(p.dim)
        e[i] = h
        diff = (p.losses(w + e, x, y) - p.losses(w - e, x, y)) / (2 * h)
        out[i] = diff.mean()
        se[i] = diff.std(ddof=1) / math.sqrt(n)
    return out, se


class TestUnbiased:
    @pytest.mark.parametrize("kind,params", [
        ("noisy_abs", {"spread": 1.0}), ("hinge", {}), ("logistic", {}), ("point_mass_abs", {}),
    ])
    def test_mean_subgradient_matches_finite_difference(self, kind, params):
        d = 3
        p = make_problem(kind, d, 1.5, seed=1, **params)
        w = np.array([0.4, -0.7, 0.2])
        oracle = sanitized_oracle(p, derive_params("none", None, d), seed=9)
        g = np.array([oracle(w).vec for _ in range(100_000)])
        g_mean = g.mean(axis=0)
        g_se = g.std(axis=0, ddof=1) / math.sqrt(len(g))
        fd, fd_se = _fd_gradient(p, w, 1_000_000, seed=10)
        tol = 3 * np.sqrt(g_se**2 + fd_se**2) + 1e-8
        assert np.all(np.abs(g_mean + fd) <= tol), (g_mean, -fd, tol)


class TestOracle:
    def test_none_mechanism_is_raw(self):
        p = make_problem("noisy_abs", 2, 1.0)
        o = sanitized_oracle(p, derive_params("none", None, 2))
        for _ in range(50):
            g, xi = o.raw(np.zeros(2))
            assert xi is None
        o1 = sanitized_oracle(p, derive_params("none", None, 2), seed=4)
        o2 = sanitized_oracle(p, derive_params("none", None, 2), seed=4)
        for _ in range(50):
            np.testing.assert_array_equal(o1(np.ones(2)).vec, o2.raw(np.ones(2))[0])

    def test_laplace_noise_mean_zero(self):
        p = make_problem("point_mass_abs", 2, 1.0)
        o = sanitized_oracle(p, derive_params("laplace", 1.0, 2), seed=2)
        w = np.array([0.3, 0.3])
        diff = np.array([o(w).vec for _ in range(100_000)]) - raw_subgradient(p, w, None)
        se = diff.std(axis=0) / math.sqrt(len(diff))
        assert np.all(np.abs(diff.mean(axis=0)) < 4 * se)

    def test_budget_fail_closed(self):
        p = make_problem("point_mass_abs", 2, 1.0)
        ledger = PrivacyLedger(1.0, budget=100)
        o = sanitized_oracle(p, derive_params("laplace", 1.0, 2), ledger)
        for _ in range(100):
            o(np.zeros(2))
        with pytest.raises(BudgetExceededError):
            o(np.zeros(2))
        assert o.calls == 100 and ledger.request_count == 100

    def test_step_numbers(self):
        p = make_problem("point_mass_abs", 2, 1.0)
        o = sanitized_oracle(p, derive_params("laplace", 1.0, 2))
        out = [o(np.zeros(2)) for _ in range(3)]
        assert isinstance(out[0], SanitizedGradient) and [s.step for s in out] == [1, 2, 3]

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            sanitized_oracle(make_problem("point_mass_abs", 2, 1.0), derive_params("laplace", 1.0, 3))

    def test_block_boundary_continuity(self):
        # Streams do not depend on where the block refills fall.
        p = make_problem("logistic", 2, 1.0)
        noise = derive_params("laplace", 1.0, 2)
        a = sanitized_oracle(p, noise, seed=6)
        xs = np.array([a(np.zeros(2)).vec for _ in range(5000)])
        b = sanitized_oracle(p, noise, seed=6)
        np.testing.assert_array_equal(xs, np.array([b(np.zeros(2)).vec for _ in range(5000)]))


class TestRisk:
    def test_point_mass_at_minimiser(self):
        p = make_problem("point_mass_abs", 2, 3.0)
        assert risk(p, p.w_star) == (0.0, 0.0)

    def test_point_mass_norm(self):
        p = make_problem("point_mass_abs", 4, 10.0)
        assert risk(p, np.zeros(4))[0] == 10.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    def test_point_mass_exact(self, w):
        p = make_problem("point_mass_abs", 3, w_star=[1.0, -2.0, 0.5])
        assert risk(p, w)[0] == float(np.linalg.norm(np.array(w) - p.w_star))

    def test_logistic_w_star_beats_zero(self):
        p = make_problem("logistic", 3, 2.0)
        sample = p.sample(np.random.default_rng(0), 200_000)
        r_star, se1 = risk(p, p.w_star, sample=sample)
        r_zero, _ = risk(p, np.zeros(3), sample=sample)
        assert r_star <= r_zero and r_zero == pytest.approx(math.log(2), abs=1e-12)
        assert se1 > 0

    def test_logistic_reference_minimiser_near_w_star(self):
        p = make_problem("logistic", 2, 1.0)
        ref = reference_minimizer(p, T=50_000)
        sample = p.sample(np.random.default_rng(1), 200_000)
        assert risk(p, ref, sample=sample)[0] <= risk(p, np.zeros(2), sample=sample)[0]

    def test_hinge_reference_beats_zero(self):
        sample = _HINGE.sample(np.random.default_rng(2), 200_000)
        assert risk(_HINGE, _HINGE.w_star, sample=sample)[0] < risk(_HINGE, np.zeros(3), sample=sample)[0]

    def test_noisy_abs_minimiser_by_symmetry(self):
        p = make_problem("noisy_abs", 2, 1.0, spread=0.5)
        sample = p.sample(np.random.default_rng(3), 100_000)
        r0 = risk(p, p.w_star, sample=sample)[0]
        assert r0 == pytest.approx(0.5, abs=1e-12)
        for dw in ([0.05, 0.0], [0.0, -0.05]):
            assert risk(p, p.w_star + np.array(dw), sample=sample)[0] > r0

    def test_fresh_sample_se(self):
        p = make_problem("noisy_abs", 2, 1.0)
        est, se = risk(p, np.zeros(2), n_mc=10_000, rng=np.random.default_rng(0))
        assert 0 < se < 0.02 and est > 0


class TestMakeProblem:
    def test_default_direction_e1(self):
        p = make_problem("point_mass_abs", 3, 2.5)
        np.testing.assert_array_equal(p.w_star, [2.5, 0.0, 0.0])
        assert p.w_star_norm == 2.5

    def test_random_direction(self):
        p = make_problem("point_mass_abs", 5, 2.0, seed=1, random_direction=True)
        assert p.w_star_norm == pytest.approx(2.0, rel=1e-14)

    def test_errors(self):
        with pytest.raises(ValueError):
            make_problem("point_mass_abs", 2)
        with pytest.raises(ValueError):
            make_problem("nope", 2, 1.0)
        with pytest.raises(ValueError):
            Problem("point_mass_abs", 2, np.zeros(3))

    def test_to_dict(self):
        d = make_problem("noisy_abs", 2, 1.0, spread=0.3).to_dict()
        assert d == {"kind": "noisy_abs", "dim": 2, "w_star": [1.0, 0.0], "data_params": {"spread": 0.3}, "G": 1.0}
