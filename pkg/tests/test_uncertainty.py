import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evdepth.errors import (
    Divergence,
    InvalidParams,
    MomentOverflow,
    NoValidPixels,
    NonPositiveDepth,
    NonPositiveSigma,
    OutOfRange,
)
from evdepth.uncertainty import (
    EvidentialParams,
    GaussianParams,
    LogNormalParams,
    UncertaintyField,
    batch_loss,
    e2depth_inverse,
    e2depth_map,
    evidential_moments,
    evidential_nll,
    evidential_nll_grad,
    fit_pointwise,
    gaussian_nll,
    gaussian_nll_grad,
    gradient_check,
    lognormal_moments,
    lognormal_nll,
    positivity,
    positivity_inverse,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class TestPositivity:
    def test_values(self):
        assert positivity(0.0) == pytest.approx(math.log(2), abs=1e-12)
        assert positivity(50.0) == pytest.approx(50.0, abs=1e-12)
        assert positivity(0.0, floor=1.0) == pytest.approx(1 + math.log(2), abs=1e-12)

    def test_never_below_floor(self):
        assert positivity(-1000.0, floor=1e-6) >= 1e-6
        assert np.isfinite(positivity(1e6))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-30, 30))
    def test_inverse(self, raw):
        v = positivity(raw, 1e-6)
        assert positivity(positivity_inverse(v, 1e-6), 1e-6) == pytest.approx(v, rel=1e-9)


class TestGaussian:
    def test_standard_value(self):
        assert gaussian_nll(0.0, GaussianParams(0.0, 1.0)) == pytest.approx(HALF_LOG_2PI, abs=1e-12)

    def test_gradient_at_one(self):
        dmu, ds = gaussian_nll_grad(1.0, GaussianParams(0.0, 1.0))
        assert dmu == pytest.approx(-1.0) and ds == pytest.approx(0.0, abs=1e-15)

    def test_rejects_sigma(self):
        for s in (0.0, -1.0):
            with pytest.raises(NonPositiveSigma):
                gaussian_nll(0.0, GaussianParams(0.0, s))

    def test_matches_scipy_density(self, rng):
        from scipy.stats import norm

        y, mu, s = rng.normal(size=50), rng.normal(size=50), rng.uniform(0.1, 3, 50)
        np.testing.assert_allclose(gaussian_nll(y, GaussianParams(mu, s)),
                                   -norm.logpdf(y, mu, s), rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 20), st.floats(-20, 20))
    def test_shift_invariance(self, y, mu, s, c):
        a = gaussian_nll(y, GaussianParams(mu, s))
        b = gaussian_nll(y + c, GaussianParams(mu + c, s))
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 20), st.floats(0.1, 10))
    def test_scale_covariance(self, y, mu, s, c):
        a = gaussian_nll(y, GaussianParams(mu, s))
        b = gaussian_nll(c * y, GaussianParams(c * mu, c * s))
        assert b == pytest.approx(a + math.log(c), abs=1e-8)


class TestLogNormal:
    def test_unit_value(self):
        assert lognormal_nll(1.0, LogNormalParams(0.0, 1.0)) == pytest.approx(HALF_LOG_2PI, abs=1e-12)

    def test_rejects_depth(self):
        with pytest.raises(NonPositiveDepth):
            lognormal_nll(0.0, LogNormalParams(0.0, 1.0))

    def test_moments(self):
        mean, var = lognormal_moments(LogNormalParams(0.0, 1.0))
        assert mean == pytest.approx(math.exp(0.5), rel=1e-12)
        assert var == pytest.approx((math.e - 1) * math.e, rel=1e-12)

    def test_moments_monte_carlo(self):
        rng = np.random.default_rng(7)
        mu, s = 0.3, 0.4
        draws = np.exp(rng.normal(mu, s, 1_000_000))
        mean, var = lognormal_moments(LogNormalParams(mu, s))
        se_mean = math.sqrt(var / len(draws))
        assert abs(draws.mean() - mean) < 5 * se_mean
        assert draws.var() == pytest.approx(var, rel=0.02)

    def test_overflow(self):
        with pytest.raises(MomentOverflow):
            lognormal_moments(LogNormalParams(0.0, 40.0))

    def test_matches_scipy_density(self, rng):
        from scipy.stats import lognorm

        y = rng.uniform(0.1, 30, 50)
        mu, s = rng.normal(size=50), rng.uniform(0.1, 2, 50)
        np.testing.assert_allclose(lognormal_nll(y, LogNormalParams(mu, s)),
                                   -lognorm.logpdf(y, s, scale=np.exp(mu)), rtol=1e-10)


class TestEvidential:
    def test_penalty_zero_at_location(self):
        _, pen = evidential_nll(3.0, EvidentialParams(3.0, 1.0, 2.0, 1.0))
        assert pen == 0.0

    def test_moments(self):
        m, alea, epi = evidential_moments(EvidentialParams(2.0, 1.0, 2.0, 3.0))
        assert (m, alea, epi) == (2.0, 3.0, 3.0)

    def test_domain(self):
        for p in (EvidentialParams(0, 0.0, 2, 1), EvidentialParams(0, 1, 1.0, 1),
                  EvidentialParams(0, 1, 2, -1.0)):
            with pytest.raises(InvalidParams):
                evidential_nll(0.0, p)

    def test_matches_student_t(self, rng):
        from scipy.stats import t as student

        p = EvidentialParams(rng.normal(size=40), rng.uniform(0.1, 5, 40),
                             rng.uniform(1.1, 8, 40), rng.uniform(0.1, 5, 40))
        y = rng.normal(size=40) * 3
        nll, _ = evidential_nll(y, p, lam=0.0)
        ref = -student.logpdf(y, df=p.dof, loc=p.m, scale=p.scale)
        np.testing.assert_allclose(nll, ref, rtol=1e-10)

    def test_gaussian_limit(self, rng):
        sigma, kappa, alpha = 1.7, 2.0, 1e8
        beta = kappa * alpha * sigma**2 / (1 + kappa)
        y = rng.normal(0, 3, 100)
        nll, _ = evidential_nll(y, EvidentialParams(0.0, kappa, alpha, beta), lam=0.0)
        gauss = gaussian_nll(y, GaussianParams(0.0, sigma))
        assert np.max(np.abs(nll - gauss)) < 1e-3

    def test_penalty_gradient_sign(self):
        dm, *_ = evidential_nll_grad(2.0, EvidentialParams(1.0, 1.0, 2.0, 1.0))
        assert dm < 0


class TestGradients:
    @pytest.mark.parametrize("model", ["gaussian", "lognormal", "evidential"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_analytic_matches_finite_difference(self, model, seed):
        assert gradient_check(model, n=1000, seed=seed) < 1e-4

    def test_detects_wrong_gradient(self):
        def broken(y, p):
            dmu, ds = gaussian_nll_grad(y, p)
            return dmu, 1.01 * ds

        assert gradient_check("gaussian", n=200, grad_fn=broken) > 1e-3


class TestE2Depth:
    def test_endpoints(self):
        assert e2depth_map(1.0) == pytest.approx(35.0, rel=1e-12)
        assert e2depth_map(0.0) == pytest.approx(35 * math.exp(-8), rel=1e-12)

    def test_inverse_grid(self):
        grid = np.linspace(0, 1, 1001)
        np.testing.assert_allclose(e2depth_inverse(e2depth_map(grid)), grid, atol=1e-12)

    def test_monotone(self):
        d = e2depth_map(np.linspace(0, 1, 101))
        assert np.all(np.diff(d) > 0)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            e2depth_map(1.5)
        with pytest.raises(OutOfRange):
            e2depth_inverse(100.0)


def _gaussian_field(mu, sigma):
    return UncertaintyField("gaussian", {"mu": mu, "sigma": sigma})


class TestBatchLoss:
    def test_singleton(self):
        r = batch_loss(_gaussian_field([[0.0]], [[1.0]]), [[1.0]])
        assert r.loss == pytest.approx(HALF_LOG_2PI + 0.5, abs=1e-12) and r.count == 1

    def test_excludes_nonpositive(self):
        f = _gaussian_field([[1.0, 50.0]], [[1.0, 1.0]])
        a = batch_loss(f, [[1.0, 0.0]])
        assert a.count == 1 and a.loss == pytest.approx(HALF_LOG_2PI)

    def test_uniform_field(self):
        f = _gaussian_field(np.full((4, 4), 2.0), np.full((4, 4), 0.5))
        one = gaussian_nll(2.3, GaussianParams(2.0, 0.5))
        assert batch_loss(f, np.full((4, 4), 2.3)).loss == pytest.approx(one, rel=1e-12)

    def test_no_valid(self):
        with pytest.raises(NoValidPixels):
            batch_loss(_gaussian_field([[1.0]], [[1.0]]), [[0.0]])

    @pytest.mark.parametrize("model", ["gaussian", "lognormal", "evidential"])
    def test_matches_pixel_loop(self, rng, model):
        h, w = 32, 32
        gt = rng.uniform(0.5, 20, (h, w))
        gt[rng.random((h, w)) < 0.2] = 0
        valid = rng.random((h, w)) < 0.9
        if model == "evidential":
            planes = {"m": rng.uniform(1, 20, (h, w)), "kappa": rng.uniform(0.1, 3, (h, w)),
                      "alpha": rng.uniform(1.1, 5, (h, w)), "beta": rng.uniform(0.1, 3, (h, w))}
        else:
            planes = {"mu": rng.uniform(0, 3, (h, w)), "sigma": rng.uniform(0.1, 2, (h, w))}
        f = UncertaintyField(model, planes)
        total, n = 0.0, 0
        for i in range(h):
            for j in range(w):
                if gt[i, j] <= 0 or not valid[i, j]:
                    continue
                q = {k: v[i, j] for k, v in planes.items()}
                if model == "gaussian":
                    total += gaussian_nll(gt[i, j], GaussianParams(**q))
                elif model == "lognormal":
                    total += lognormal_nll(gt[i, j], LogNormalParams(**q))
                else:
                    total += sum(evidential_nll(gt[i, j], EvidentialParams(**q)))
                n += 1
        r = batch_loss(f, gt, valid)
        assert r.count == n and r.loss == pytest.approx(total / n, abs=1e-9)


class TestField:
    def test_from_raw_floors(self):
        f = UncertaintyField.from_raw("evidential", {"m": [[1.0]], "kappa": [[-800.0]],
                                                     "alpha": [[-800.0]], "beta": [[-800.0]]})
        assert f.planes["kappa"][0, 0] >= 1e-6 and f.planes["alpha"][0, 0] > 1
        assert np.all(np.isfinite(f.variance))

    def test_variance_kinds(self):
        g = _gaussian_field([[1.0]], [[2.0]])
        assert g.variance[0, 0] == 4.0 and g.aleatoric is None
        e = UncertaintyField("evidential", {"m": [[1.0]], "kappa": [[2.0]],
                                            "alpha": [[3.0]], "beta": [[4.0]]})
        assert e.aleatoric[0, 0] == 2.0 and e.epistemic[0, 0] == 1.0
        assert e.variance[0, 0] == 1.0

    def test_immutable(self):
        g = _gaussian_field([[1.0]], [[2.0]])
        with pytest.raises(ValueError):
            g.planes["mu"][0, 0] = 3


class TestFit:
    def test_gaussian_recovery(self):
        y = np.random.default_rng(3).normal(5.0, 0.5, 10_000)
        r = fit_pointwise(y, "gaussian")
        se = 0.5 / math.sqrt(len(y))
        assert abs(r.params.mu - 5.0) < 3 * se
        assert abs(r.params.sigma - 0.5) < 3 * se / math.sqrt(2)

    def test_lognormal_recovery(self):
        y = np.exp(np.random.default_rng(4).normal(0.0, 1.0, 10_000))
        r = fit_pointwise(y, "lognormal")
        se = 1 / math.sqrt(len(y))
        assert abs(r.params.mu) < 3 * se and abs(r.params.sigma - 1) < 3 * se / math.sqrt(2)

    def test_evidential_location(self):
        y = np.random.default_rng(5).normal(5.0, 0.5, 5_000)
        r = fit_pointwise(y, "evidential", lam=0.0)
        assert abs(r.params.m - 5.0) < 3 * 0.5 / math.sqrt(len(y))

    def test_constant_samples(self):
        r = fit_pointwise(np.full(100, 2.5), "gaussian")
        assert r.params.mu == pytest.approx(2.5) and r.params.sigma < 1e-3

    def test_divergence(self):
        y = np.random.default_rng(6).normal(0, 1, 100)
        with pytest.raises(Divergence) as exc:
            fit_pointwise(y, "gaussian", step_size=50.0, steps=500, patience=1)
        assert exc.value.trace and "rose" in str(exc.value)
