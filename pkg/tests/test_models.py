import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from condirt.models import (
    Diffusion1D,
    banana_target,
    diffusion1d_target,
    dopri45,
    gaussian_hellinger,
    linear_gaussian_target,
    make_model,
    random_linear_gaussian,
    rk4_fixed,
    sir_target,
    solve_diffusion,
)
from condirt.models.diffusion import haar_features
from condirt.models.ode import OdeError
from condirt.models.sir import sir_rhs

from oracles import cell_gauss_rule, gaussian_hellinger_closed_form, gaussian_posterior, tensor_points


def decay(t, y, p):
    return -p[:, :1] * y


class TestOde:
    def test_exponential_decay(self):
        rates = np.array([[0.1], [1.0], [5.0]])
        out = dopri45(decay, np.ones((3, 1)), [0.5, 1.0, 2.0], rtol=1e-9, params=rates)
        exact = np.exp(-rates[:, 0][None, :] * np.array([0.5, 1.0, 2.0])[:, None])
        np.testing.assert_allclose(out[:, :, 0], exact, rtol=1e-7)

    @pytest.mark.parametrize("beta,gamma", [(0.5, 0.2), (1.5, 0.3), (0.1, 1.0), (2.0, 2.0)])
    def test_sir_against_scipy(self, beta, gamma):
        ref = integrate.solve_ivp(
            lambda t, s: [-beta * s[0] * s[1], beta * s[0] * s[1] - gamma * s[1], gamma * s[1]],
            (0, 5), [99.0, 1.0, 0.0], t_eval=[1.25, 2.5, 3.75, 5.0], rtol=1e-11, atol=1e-11,
            method="DOP853",
        )
        ours = dopri45(sir_rhs, np.array([[99.0, 1.0, 0.0]]), [1.25, 2.5, 3.75, 5.0], rtol=1e-9,
                       params=np.array([[beta, gamma]]))[:, 0, :]
        np.testing.assert_allclose(ours, ref.y.T, rtol=1e-6, atol=1e-6)

    def test_rk4_order(self):
        errs = []
        for h in (0.1, 0.05):
            y = rk4_fixed(decay, np.ones((1, 1)), [1.0], h, params=np.ones((1, 1)))[0, 0, 0]
            errs.append(abs(y - np.exp(-1)))
        assert 14 < errs[0] / errs[1] < 18

    def test_blow_up_raises(self):
        with pytest.raises(OdeError):
            dopri45(lambda t, y, p: y**2, np.ones((1, 1)), [2.0], max_steps=2000)

    def test_per_trajectory_steps_independent(self):
        # A stiff neighbour must not change the solution of an easy trajectory.
        rates = np.array([[0.3], [300.0]])
        both = dopri45(decay, np.ones((2, 1)), [1.0], params=rates)[0, 0, 0]
        alone = dopri45(decay, np.ones((1, 1)), [1.0], params=rates[:1])[0, 0, 0]
        assert both == alone


class TestSir:
    def test_population_conserved(self):
        from condirt.models import solve_sir

        states = solve_sir(np.array([0.4, 1.7]), np.array([0.9, 0.1]), full=True)
        np.testing.assert_allclose(states.sum(axis=2), 100.0, rtol=1e-9)

    def test_truncated_joint_in_box(self):
        m = sir_target()
        x = m.sample_joint(200, np.random.default_rng(0))
        assert x.shape == (200, 6) and np.all(m.in_box(x))

    def test_log_joint_matches_scipy(self):
        m = sir_target()
        x = m.sample_joint(5, np.random.default_rng(1))
        mean = m.forward(x[:, 4:])
        ref = stats.norm.logpdf(x[:, :4], mean, 1.0).sum(axis=1) - np.log(4.0)
        np.testing.assert_allclose(m.log_joint(x), ref, rtol=1e-12)

    def test_forward_deduplicates(self):
        m = sir_target()
        before = m.solve_count
        m.forward(np.array([[0.5, 0.5]] * 10))
        assert m.solve_count - before == 1


class TestLinearGaussian:
    @pytest.fixture
    def lg(self):
        return random_linear_gaussian(3, 4, seed=5)

    def test_posterior(self, lg):
        y = np.array([0.4, -1.2, 2.0])
        mean, cov = gaussian_posterior(lg.G, y)
        np.testing.assert_allclose(lg.posterior_mean(y), mean, atol=1e-12)
        np.testing.assert_allclose(lg.posterior_cov(), cov, atol=1e-12)

    def test_log_joint_is_normal_density(self, lg):
        x = lg.sample_joint(10, np.random.default_rng(0))
        ref = stats.multivariate_normal(lg.joint_mean, lg.joint_cov).logpdf(x)
        np.testing.assert_allclose(lg.log_joint(x), ref, rtol=1e-10)

    def test_whitened_equivalent_posterior(self):
        rng = np.random.default_rng(2)
        g = rng.standard_normal((2, 3))
        pc, nc = np.diag([2.0, 0.5, 1.0]), np.array([[1.0, 0.3], [0.3, 0.5]])
        lg = linear_gaussian_target(g, prior_cov=pc, noise_cov=nc)
        w, (ls, lg_root) = lg.whitened()
        y = np.array([0.3, -0.7])
        np.testing.assert_allclose(lg_root @ w.posterior_mean(np.linalg.solve(ls, y)), lg.posterior_mean(y),
                                   atol=1e-10)
        np.testing.assert_allclose(lg_root @ w.posterior_cov() @ lg_root.T, lg.posterior_cov(), atol=1e-10)

    def test_reduce_identity_is_noop(self, lg):
        red = lg.reduce(np.eye(3), np.eye(4))
        np.testing.assert_allclose(red.G, lg.G)
        np.testing.assert_allclose(red.noise_cov, np.eye(3))

    def test_reduce_marginalizes_parameters(self, lg):
        # Keeping all observations and some parameters must reproduce their exact marginal posterior.
        b = np.linalg.qr(np.random.default_rng(3).standard_normal((4, 2)))[0]
        red = lg.reduce(np.eye(3), b)
        np.testing.assert_allclose(red.posterior_cov(), b.T @ lg.posterior_cov() @ b, atol=1e-10)
        y = np.array([1.0, 0.0, -1.0])
        np.testing.assert_allclose(red.posterior_mean(y), b.T @ lg.posterior_mean(y), atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(m1=st.floats(-3, 3), m2=st.floats(-3, 3), s1=st.floats(0.2, 3), s2=st.floats(0.2, 3))
    def test_hellinger_univariate(self, m1, m2, s1, s2):
        ours = gaussian_hellinger(np.array([m1]), np.array([[s1**2]]), np.array([m2]), np.array([[s2**2]]))
        assert ours == pytest.approx(gaussian_hellinger_closed_form(m1, s1, m2, s2), abs=1e-10)


class TestDiffusion:
    def test_haar_orthogonal(self):
        x = (np.arange(256) + 0.5) / 256
        f = haar_features(x, 15, r=0.0)
        gram = f.T @ f / 256
        np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-14)

    def test_constant_coefficient(self):
        u = solve_diffusion(np.full((1, 32), 2.0))[0]
        x = np.linspace(0, 1, 33)
        np.testing.assert_allclose(u, x * (1 - x) / 4, atol=1e-13)

    def test_piecewise_coefficient_against_quadrature(self):
        # u(x) = int_0^x (c - s) / kappa(s) ds with c fixed by u(1) = 0.
        m = diffusion1d_target(n_theta=15)
        theta = np.random.default_rng(0).laplace(size=(1, 15))
        log_k = m.log_kappa(theta)[0]
        kappa = lambda s: np.exp(log_k[min(int(s * m.n_cells), m.n_cells - 1)])  # noqa: E731
        brk = list(np.arange(1, 16) / 16)
        a = integrate.quad(lambda s: 1 / kappa(s), 0, 1, points=brk, epsabs=1e-13)[0]
        b = integrate.quad(lambda s: s / kappa(s), 0, 1, points=brk, epsabs=1e-13)[0]
        c = b / a
        exact = [integrate.quad(lambda s: (c - s) / kappa(s), 0, x, points=[p for p in brk if p < x],
                                epsabs=1e-13)[0] for x in m.x_obs]
        np.testing.assert_allclose(m.forward(theta)[0], exact, rtol=1e-9)

    @pytest.mark.parametrize("kw", [{"n_theta": 4}, {"n_obs": 30}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Diffusion1D(**kw)

    def test_observation_box_covers_data(self):
        m = diffusion1d_target()
        x = m.sample_joint(500, np.random.default_rng(1))
        assert np.mean(np.all((x[:, :7] >= m.lower[:7]) & (x[:, :7] <= m.upper[:7]), axis=1)) > 0.98


class TestBanana:
    def test_mass_on_box(self):
        b = banana_target()
        rules = [cell_gauss_rule(np.linspace(lo, hi, 161), 6) for lo, hi in zip(b.lower, b.upper)]
        pts, wts = tensor_points(rules)
        assert np.sum(np.exp(b.log_joint(pts)) * wts) == pytest.approx(1.0, abs=1e-3)


class TestRegistry:
    @pytest.mark.parametrize("name,d", [("sir", 6), ("lingauss", 7), ("diffusion1d", 22), ("banana", 2)])
    def test_names(self, name, d):
        assert make_model(name).d == d

    def test_unknown(self):
        with pytest.raises(KeyError):
            make_model("lorenz")
