import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gprc.errors import ArgumentError, GridError, IllConditionedError, MissingFieldError
from gprc.gp import ChiConfig, Dataset, FieldEstimate, NoiseConfig, OptimizerConfig
from gprc.inference import (
    Chain, GprcPosterior, MhConfig, Prior, TwoStagePosterior, build_posterior, chain_stats,
    log_posterior, mh_sample, potential, potential_terms, run_chain, two_stage_potential,
)
from gprc.operators import linear_equation, oscillator_equation
from gprc.problems import builtin, collocation_grid, oscillator_solution, simulate

osc = oscillator_equation()
T = np.linspace(0, 10, 200)


def analytic_estimate(grid, theta=(1.0, 3.0)):
    u, du, ddu = oscillator_solution(theta, 1.0, 0.0, grid[:, 0])
    return FieldEstimate(grid, {(0,): u, (1,): du, (2,): ddu}, {})


class Flat:
    """Constant log-density on a box."""

    def __init__(self, lo, hi):
        self.prior = Prior(lo, hi)

    def __call__(self, th):
        return 0.0 if self.prior.contains(th) else -math.inf


class TestPrior:
    def test_contains_and_center(self):
        p = Prior((0, 0), (5, 5))
        assert p.contains([5.0, 0.0]) and not p.contains([5.1, 1.0])
        np.testing.assert_allclose(p.center, [2.5, 2.5])

    def test_rejects_empty_box(self):
        with pytest.raises(ArgumentError):
            Prior((1.0,), (1.0,))


class TestPotential:
    def setup_method(self):
        X = np.array([[1.0], [2.0]])
        self.colloc = T[:, None]
        self.grid = np.vstack([X, self.colloc])
        est = analytic_estimate(self.grid)
        self.data = Dataset(X, est.mean[(0,)][:2], [[0, 10]])
        self.est = est

    def test_zero_when_exact(self):
        assert potential((1.0, 3.0), self.data, self.est, osc, self.colloc) == pytest.approx(0.0, abs=1e-20)

    def test_equation_part_at_truth(self):
        _, e = potential_terms((1.0, 3.0), self.data, self.est, osc, self.colloc)
        assert e < 1e-6

    def test_doubling_misfit_quadruples_data_part(self):
        u = self.est.mean[(0,)][:2]
        d1 = Dataset(self.data.X, u + np.array([0.1, -0.2]), [[0, 10]])
        d2 = Dataset(self.data.X, u + np.array([0.2, -0.4]), [[0, 10]])
        a, _ = potential_terms((1.0, 3.0), d1, self.est, osc, self.colloc)
        b, _ = potential_terms((1.0, 3.0), d2, self.est, osc, self.colloc)
        assert b == pytest.approx(4 * a)

    def test_missing_functional(self):
        bad = FieldEstimate(self.grid, {(0,): self.est.mean[(0,)]}, {})
        with pytest.raises(MissingFieldError):
            potential((1.0, 3.0), self.data, bad, osc, self.colloc)

    def test_grid_layout_checked(self):
        with pytest.raises(GridError):
            potential((1.0, 3.0), self.data, self.est, osc, self.colloc[::-1])

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_nonnegative(self, a, b):
        assert potential((a, b), self.data, self.est, osc, self.colloc) >= 0


class TestTwoStagePotential:
    def test_zero_operator(self):
        eq = linear_equation("zero", [{"orders": [1], "coeff": 0.0}], 2, 1)
        est0 = analytic_estimate(T[:, None])
        assert two_stage_potential((0.3, 4.0), est0, eq, T[:, None]) == 0.0

    def test_grid_search_finds_truth(self):
        est0 = analytic_estimate(T[:, None])
        # mean squared residual is a quadratic form in (1, th1, th2)
        v = np.stack([est0.mean[(2,)], est0.mean[(1,)], est0.mean[(0,)]])
        G = v @ v.T / len(T)
        t1, t2 = np.meshgrid(np.arange(0, 2.0001, 0.01), np.arange(2, 4.0001, 0.01), indexing="ij")
        w = np.stack([np.ones_like(t1), t1, t2])
        eta = np.einsum("iab,ij,jab->ab", w, G, w)
        i, j = np.unravel_index(np.argmin(eta), eta.shape)
        assert abs(t1[i, j] - 1.0) <= 0.01 and abs(t2[i, j] - 3.0) <= 0.01
        # spot-check the quadratic form against the function itself away from its zero
        got = two_stage_potential((t1[50, 50], t2[50, 50]), est0, osc, T[:, None])
        assert got == pytest.approx(eta[50, 50], rel=1e-9)

    def test_quadratic_in_theta(self, rng):
        g = T[:, None]
        est0 = FieldEstimate(g, {k: rng.normal(size=200) for k in osc.functionals}, {})
        pts = rng.uniform(0, 5, (6, 2))
        vals = [two_stage_potential(p, est0, osc, g) for p in pts]
        A = np.column_stack([np.ones(6), pts[:, 0], pts[:, 1], pts[:, 0] ** 2, pts[:, 0] * pts[:, 1], pts[:, 1] ** 2])
        coef = np.linalg.solve(A, vals)
        p = rng.uniform(0, 5, 2)
        fit = coef @ [1, p[0], p[1], p[0] ** 2, p[0] * p[1], p[1] ** 2]
        assert fit == pytest.approx(two_stage_potential(p, est0, osc, g), rel=1e-10)


class TestLogPosterior:
    @pytest.fixture(scope="class")
    @classmethod
    def osc_post(cls):
        eq, cfg = builtin("oscillator")
        data = simulate(cfg, 0)
        return GprcPosterior(data, eq, Prior((0, 0), (10, 10)), 100.0, collocation_grid(cfg),
                             NoiseConfig(cfg.noise_var, cfg.sigma_r2, False), ChiConfig(1),
                             opt=OptimizerConfig(restarts=2))

    def test_outside_prior(self, osc_post):
        assert log_posterior((11.0, 1.0), osc_post) == -math.inf

    def test_truth_beats_far_point(self, osc_post):
        assert log_posterior((1.0, 3.0), osc_post) > log_posterior((5.0, 10.0), osc_post)

    def test_alpha_scales_differences(self):
        est0 = analytic_estimate(T[:, None], (0.7, 2.0))
        data = Dataset([[1.0]], [0.0], [[0, 10]])
        a = TwoStagePosterior(data, osc, Prior((0, 0), (5, 5)), 10.0, T[:, None], est0=est0)
        b = TwoStagePosterior(data, osc, Prior((0, 0), (5, 5)), 20.0, T[:, None], est0=est0)
        da = log_posterior((1, 3), a) - log_posterior((2, 2), a)
        db = log_posterior((1, 3), b) - log_posterior((2, 2), b)
        assert db == pytest.approx(2 * da)

    def test_failures_rejected(self):
        class Failing:
            prior = Prior((0,), (1,))
            alpha = 1.0
            failures = 0

            def potential(self, th):
                raise IllConditionedError("boom")

        ctx = Failing()
        assert log_posterior([0.5], ctx) == -math.inf
        assert ctx.failures == 1


class TestMhSample:
    def test_flat_target_acceptance_equals_in_box_fraction(self):
        target = Flat((0.0,), (1.0,))
        ch = mh_sample(target, MhConfig(20000, (0.6,), 1.0, seed=3, init=(0.5,)))
        # replay the proposals to count the in-box ones
        rng = np.random.default_rng(3)
        theta, inside = 0.5, 0
        for _ in range(19999):
            prop = theta + 0.6 * rng.standard_normal(1)[0]
            rng.random()
            if 0 <= prop <= 1:
                theta, inside = prop, inside + 1
        assert ch.accepted == inside
        assert np.all((ch.samples >= 0) & (ch.samples <= 1))

    def test_standard_normal_moments(self):
        ch = mh_sample(lambda th: -0.5 * float(th[0] ** 2),
                       MhConfig(50000, (0.6,), 1.0, seed=0, init=(0.0,)))
        assert abs(ch.samples.mean()) < 0.05
        assert abs(ch.samples.var() - 1.0) < 0.1

    def test_deterministic(self):
        cfg = MhConfig(500, (0.5, 0.5), 1.0, seed=11, init=(0.0, 0.0))
        f = lambda th: -float(th @ th)  # noqa: E731
        np.testing.assert_array_equal(mh_sample(f, cfg).samples, mh_sample(f, cfg).samples)

    def test_single_sample_is_init(self):
        ch = mh_sample(lambda th: 0.0, MhConfig(1, (0.6,), 1.0, init=(0.3,)))
        assert len(ch) == 1 and ch.samples[0, 0] == 0.3 and ch.accepted == 0

    def test_rejections_repeat_state(self):
        ch = mh_sample(lambda th: -50.0 * float(th[0] ** 2), MhConfig(300, (2.0,), 1.0, seed=1, init=(0.0,)))
        same = np.all(ch.samples[1:] == ch.samples[:-1], axis=1)
        np.testing.assert_array_equal(same, ~ch.accepted_steps[1:])

    def test_init_outside_support(self):
        with pytest.raises(ArgumentError):
            mh_sample(Flat((0.0,), (1.0,)), MhConfig(10, (0.1,), 1.0, init=(2.0,)))

    def test_unexpected_error_truncates(self):
        calls = []

        def target(th):
            calls.append(1)
            if len(calls) > 5:
                raise RuntimeError("lost connection")
            return 0.0

        ch = mh_sample(target, MhConfig(100, (0.1,), 1.0, init=(0.0,)))
        assert ch.truncated and len(ch) == 5 and "lost" in ch.error

    def test_config_validation(self):
        with pytest.raises(ArgumentError):
            MhConfig(0, (0.1,))
        with pytest.raises(ArgumentError):
            MhConfig(5, (0.0,))
        with pytest.raises(ArgumentError):
            MhConfig(5, (0.1,), alpha=-1.0)

    def test_three_state_detailed_balance(self):
        centers, weights, w = np.array([-2.0, 0.0, 2.0]), np.array([0.2, 0.3, 0.5]), 0.05

        def target(th):
            d = np.exp(-0.5 * ((th[0] - centers) / w) ** 2)
            return float(np.log(np.sum(weights * d) + 1e-300))

        n = 100_000
        ch = mh_sample(target, MhConfig(n, (1.5,), 1.0, seed=2, init=(0.0,)))
        state = np.argmin(np.abs(ch.samples[:, 0][:, None] - centers), axis=1)
        ind = state[:, None] == np.arange(3)
        freq = ind.mean(axis=0)
        # Monte-Carlo error of a correlated chain from 100 batch means
        se = ind.reshape(100, -1, 3).mean(axis=1).std(axis=0, ddof=1) / 10
        assert np.all(np.abs(freq - weights) <= 3 * se)


class TestChainStats:
    def test_constant_chain(self):
        ch = Chain(np.ones((50, 2)), np.zeros(50), np.zeros(50, bool), 0)
        st_ = chain_stats(ch, 10)
        assert st_["std"] == [0.0, 0.0] and st_["n_used"] == 40

    def test_histogram_counts(self, rng):
        ch = Chain(rng.normal(size=(1000, 1)), np.zeros(1000), np.ones(1000, bool), 0)
        st_ = chain_stats(ch, 100, bins=25)
        assert sum(st_["histograms"][0]["counts"]) == 900
        assert len(st_["histograms"][0]["edges"]) == 26

    def test_burn_in_windows_agree(self, rng):
        x = rng.normal(size=(4000, 1))
        ch = Chain(x, np.zeros(4000), np.ones(4000, bool), 0)
        a, b = chain_stats(ch, 0)["mean"][0], chain_stats(ch, 2000)["mean"][0]
        se = np.sqrt(1 / 4000 + 1 / 2000)
        assert abs(a - b) < 2 * se

    def test_default_burn_in(self):
        ch = Chain(np.zeros((100, 1)), np.zeros(100), np.zeros(100, bool), 0)
        assert chain_stats(ch)["burn_in"] == 20

    def test_bad_burn_in(self):
        ch = Chain(np.zeros((10, 1)), np.zeros(10), np.zeros(10, bool), 0)
        with pytest.raises(ArgumentError):
            chain_stats(ch, 10)


class TestWiring:
    def test_argmax_invariant_to_alpha(self):
        eq, cfg = builtin("oscillator")
        data = simulate(cfg, 0)
        post = build_posterior(eq, cfg, data, "two-stage")
        grid = [(a, b) for a in np.linspace(0, 2, 9) for b in np.linspace(1, 5, 9)]
        best = []
        for alpha in (1.0, 100.0, 1e4):
            post.alpha = alpha
            best.append(int(np.argmax([log_posterior(g, post) for g in grid])))
        assert len(set(best)) == 1

    def test_run_chain_length_and_potentials(self):
        eq, cfg = builtin("oscillator", n_samples=20)
        data = simulate(cfg, 0)
        post = build_posterior(eq, cfg, data, "two-stage")
        ch = run_chain(post, cfg, 0)
        assert len(ch) == 20
        assert ch.potentials[0] == pytest.approx(post.potential(cfg.init))
        assert 0.0 <= ch.acceptance_rate <= 1.0

    def test_unknown_method(self):
        eq, cfg = builtin("oscillator")
        with pytest.raises(ArgumentError):
            build_posterior(eq, cfg, simulate(cfg, 0), "bayes")
