import numpy as np
import pytest
from scipy import stats

from snakelab import environment as E
from snakelab import snake as S
from snakelab import stats as st
from snakelab import superprocess as SP
from snakelab import walk as Wk
from snakelab.errors import ParameterError, ResourceError


def gh_run(n, r, seed=3, d=2, K=1.0):
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2 * n, hurst=0.7, seed=seed)
    renv = E.rescaled_environment(spec, n, r)
    return SP.simulate_bbmre(renv, n, K, d, seed, r)


def iid_run(n, r, seed=4, d=1, K=1.0):
    spec = E.EnvironmentSpec(kind="iid-logit", length=2 * n, sigma=1.0, seed=seed)
    renv = E.rescaled_environment(spec, n, r)
    return SP.simulate_bbmre(renv, n, K, d, seed, r)


def flat_run(n, r, d=2, K=1.0):
    return SP.simulate_bbmre(E.constant_environment(0.5, 2 * n, n=n), n, K, d, 5, r)


# ---------------------------------------------------------------- test functions

def test_heat_examples():
    one = SP.Constant(1.0)
    assert SP.heat_evolve(one, 3.0) is one
    c = SP.heat_evolve(SP.Cosine((1.0, 1.0)), 1.0)
    assert c.amplitude == pytest.approx(np.exp(-1.0))
    b = SP.heat_evolve(SP.GaussianBump((0.0, 0.0), 0.5), 0.25)
    assert b.variance == pytest.approx(0.75)
    with pytest.raises(ParameterError):
        SP.heat_evolve(one, -1.0)


def test_bump_heat_matches_convolution():
    # P_t f(x) = E f(x + sqrt(t) Z), by Gauss-Hermite quadrature in d = 1
    f = SP.GaussianBump((0.3,), 0.4, 2.0)
    z, w = np.polynomial.hermite_e.hermegauss(60)
    w = w / w.sum()
    x = np.linspace(-2, 2, 9)
    ref = np.array([np.sum(w * f((xx + np.sqrt(0.7) * z)[:, None])) for xx in x])
    np.testing.assert_allclose(f.heat(0.7)(x[:, None]), ref, rtol=1e-10)


@pytest.mark.parametrize("phi", [SP.Cosine((0.7, -1.2), 1.5, 0.3), SP.GaussianBump((0.2, -0.1), 0.8, 1.3)])
def test_laplacian_by_finite_differences(phi):
    x = np.array([[0.1, 0.4], [-0.6, 0.9]])
    h = 1e-3
    lap = np.zeros(len(x))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        lap += (phi(x + e) - 2 * phi(x) + phi(x - e)) / h ** 2
    np.testing.assert_allclose(phi.laplacian(x), lap, rtol=1e-5)


def test_square_and_scale():
    x = np.random.default_rng(1).normal(size=(20, 2))
    for phi in (SP.Constant(1.7), SP.Cosine((1.0, 2.0), 0.8, 0.4), SP.GaussianBump((0.0, 1.0), 0.6, 1.4)):
        np.testing.assert_allclose(phi.square()(x), phi(x) ** 2, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(phi.scale(-2.0)(x), -2.0 * phi(x), atol=1e-15)
    s = SP.Constant(1.0) + SP.Cosine((1.0, 0.0))
    np.testing.assert_allclose(s(x), 1.0 + np.cos(x[:, 0]))


def test_parse_test_function():
    assert SP.parse_test_function("const:2", 2) == SP.Constant(2.0)
    assert SP.parse_test_function("cos:1,0", 2) == SP.Cosine((1.0, 0.0))
    assert SP.parse_test_function("bump:0,1:0.5", 2) == SP.GaussianBump((0.0, 1.0), 0.5)
    for bad in ("cos:1", "sin:1,2", "cos:a,b"):
        with pytest.raises(ParameterError):
            SP.parse_test_function(bad, 2)


# ---------------------------------------------------------------- particle system

def test_initial_and_final_measure():
    run = gh_run(50, 0)
    assert run.measure(0).mass == 1.0
    np.testing.assert_array_equal(run.measure(0).atoms, 0.0)
    assert run.measure(run.nK).mass == 0
    assert run.total_mass()[-1] == 0


def test_requires_integer_nK():
    with pytest.raises(ParameterError):
        SP.simulate_bbmre(None, 10, 0.55, 1, 1)


def test_population_guard(monkeypatch):
    monkeypatch.setattr(SP, "POPULATION_GUARD", 50)
    with pytest.raises(ResourceError) as info:
        flat_run(40, 0)
    assert isinstance(info.value.partial, SP.ParticleSystem)


def test_conditional_first_moment():
    # E[X_{1/n}(phi) | beta] = m_1 X_0(P_{1/n} phi)
    n, reps = 20, 20000
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2 * n, hurst=0.7, seed=7)
    renv = E.rescaled_environment(spec, n)
    phi = SP.Cosine((1.0, 2.0))
    vals = np.array([SP.simulate_bbmre(renv, n, 0.1, 2, 8, r).measure(1).evaluate(phi) for r in range(reps)])
    m1 = float(renv.offspring_means(1))
    target = m1 * float(phi.heat(1.0 / n)(np.zeros((1, 2)))[0])
    assert abs(vals.mean() - target) < 4 * vals.std(ddof=1) / np.sqrt(reps)


def test_total_mass_in_law_matches_walk():
    # direct simulation vs excursion extraction, mass at t0 = K/2
    n, K, reps = 20, 1.0, 1000
    renv = E.constant_environment(0.5, 4 * n, n=n)
    lvl = n // 2
    direct = np.array([flat_run(n, r, d=1).total_mass()[lvl] for r in range(reps)])
    walk = np.array([Wk.reflected_upcounts(renv, K, n, 11, r)[lvl] / n for r in range(reps)])
    assert st.ks_two_sample(direct, walk).passed


def test_labels():
    run = flat_run(30, 2)
    assert run.label(0, 4) == (4,)
    i = 5
    g = run.generations[i]
    assert len(g.births) > 0
    labels = [run.label(i, k) for k in range(len(g.births))]
    assert all(len(a) == i + 1 for a in labels)
    assert len(set(labels)) == len(labels)
    # siblings share the parent's label prefix
    k = int(np.argmax(g.parent == g.parent[-1]))
    assert labels[k][:-1] == labels[-1][:-1]
    assert run.alive(i / 30).shape == g.births.shape


def test_snake_particles_match_snake_measure():
    renv = E.constant_environment(0.5, 100, n=15)
    path = Wk.simulate_reflected_walk(renv, 2.0, 15, 3)
    sn = S.build_snake(path, 2, 3)
    ps = SP.particles_from_snake(sn)
    for i in range(path.nK + 1):
        np.testing.assert_array_equal(ps.measure(i).atoms, S.measure_from_snake(sn, i).atoms)


# ---------------------------------------------------------------- conditional means

def test_gaussian_predictions_against_direct_solve():
    H, L = 0.7, 12
    x = np.random.default_rng(2).normal(size=L)
    mu, var = SP.gaussian_predictions(x, H)
    r = E.fgn_autocov(H, np.arange(L))
    for k in range(1, L):
        C = r[np.abs(np.subtract.outer(np.arange(k), np.arange(k)))]
        c = r[k - np.arange(k)]
        coef = np.linalg.solve(C, c)
        assert mu[k] == pytest.approx(coef @ x[:k], abs=1e-12)
        assert var[k] == pytest.approx(r[0] - c @ coef, abs=1e-12)
    assert mu[0] == 0 and var[0] == 1.0


def test_conditional_moments_iid_closed_form():
    spec = E.EnvironmentSpec(kind="iid-logit", length=100, sigma=1.0, seed=1)
    renv = E.rescaled_environment(spec, 50)
    m1, m2 = SP.conditional_offspring_moments(renv, "iid", 5)
    a = spec.iid_half_width / renv.D_n
    z = np.linspace(-a, a, 200001)
    assert m1[0] == pytest.approx(np.trapezoid(np.exp(-z), z) / (2 * a), rel=1e-9)
    assert m2[0] == pytest.approx(np.trapezoid(np.exp(-z) + np.exp(-2 * z), z) / (2 * a), rel=1e-9)
    with pytest.raises(ParameterError):
        SP.conditional_offspring_moments(renv, "gaussian-hermite", 5)


def test_conditional_moments_gh_is_unbiased():
    # averaging E[m_i | past] over environments gives E[m_i]
    n, reps, L = 100, 400, 30
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=2 * n, hurst=0.7, seed=2)
    cm, real = [], []
    for r in range(reps):
        renv = E.rescaled_environment(spec, n, r)
        cm.append(SP.conditional_offspring_moments(renv, "gaussian-hermite", L)[0])
        real.append(renv.offspring_means(np.arange(1, L + 1)))
    diff = np.array(real) - np.array(cm)
    z = np.abs(diff.mean(axis=0)) / (diff.std(axis=0, ddof=1) / np.sqrt(reps))
    assert z.max() < st.bonferroni_z(L)


# ---------------------------------------------------------------- decomposition

@pytest.mark.parametrize("seed", range(5))
def test_decomposition_identity(seed):
    dec = SP.decomposition(gh_run(60, seed), SP.Cosine((1.0, 0.5)), "gaussian-hermite")
    assert dec.relative_residual < 1e-10
    assert dec.X[0] == pytest.approx(1.0 * np.cos(0.0))


def test_flat_environment_has_no_env_noise():
    dec = SP.decomposition(flat_run(40, 1), SP.Cosine((1.0, 0.0)), "iid")
    np.testing.assert_array_equal(dec.N, 0.0)
    np.testing.assert_array_equal(dec.A, 0.0)
    assert dec.relative_residual < 1e-10


def test_constant_phi_kills_spatial_noise():
    run = gh_run(60, 1)
    dec = SP.decomposition(run, SP.Constant(1.0), "gaussian-hermite")
    np.testing.assert_allclose(dec.M, 0.0, atol=1e-15)
    assert np.all(dec.drift == 0)


def test_constant_phi_drift_is_total_mass_drift():
    run = gh_run(60, 2)
    dec = SP.decomposition(run, SP.Constant(1.0), "gaussian-hermite")
    cm, _ = SP.conditional_offspring_moments(run.env_ref, "gaussian-hermite", run.nK)
    mass = run.total_mass()
    expect = np.concatenate([[0.0], np.cumsum(mass[:run.nK - 1] * (cm[:run.nK - 1] - 1.0))])
    np.testing.assert_allclose(dec.A, expect, atol=1e-13)


def test_env_model_mismatch():
    with pytest.raises(ParameterError):
        SP.decomposition(gh_run(20, 0), SP.Constant(1.0), "iid")
    with pytest.raises(ParameterError):
        SP.decomposition(iid_run(20, 0), SP.Constant(1.0), "gaussian-hermite")


def test_qv_zero_and_bilinear():
    run = gh_run(50, 3)
    zero = SP.decomposition(run, SP.Cosine((1.0, 0.0), 0.0), "gaussian-hermite")
    for s in (zero.qv_predictable, zero.qv_realized, zero.qv_target):
        np.testing.assert_array_equal(s, 0.0)
    phi = SP.Cosine((1.0, 0.0))
    a = SP.decomposition(run, phi, "gaussian-hermite")
    b = SP.decomposition(run, phi.scale(3.0), "gaussian-hermite")
    for u, v in ((a.qv_predictable, b.qv_predictable), (a.qv_realized, b.qv_realized), (a.qv_target, b.qv_target)):
        np.testing.assert_allclose(v, 9.0 * u, rtol=1e-12, atol=1e-300)


def test_predictable_qv_near_target():
    phi = SP.Cosine((1.0, 0.0))
    ens = [SP.decomposition(gh_run(100, r), phi, "gaussian-hermite") for r in range(100)]
    q = SP.qv_estimate(ens)
    assert q.relative_gap() < 0.10
    # both routes estimate the same quantity
    assert q.realized[-1] == pytest.approx(q.predictable[-1], rel=0.25)


def test_martingale_nullity():
    phi = SP.Cosine((1.0, 0.5))
    ens = [SP.decomposition(gh_run(40, r, seed=9), phi, "gaussian-hermite") for r in range(400)]
    for key in ("Z", "N", "M"):
        inc = np.diff(np.array([getattr(s, key) for s in ens]), axis=1)
        rep = st.martingale_check(inc, key)
        assert rep.passed, rep.line()


def test_drift_comparison_iid():
    phi = SP.Cosine((1.0,))
    ens = [SP.decomposition(iid_run(400, r), phi, "iid") for r in range(200)]
    rep = SP.drift_comparison(ens)
    ints = np.array([s.taylor_integral[-1] for s in ens])
    se = ints.std(ddof=1) / np.sqrt(len(ints))
    assert rep.mean_abs_gap < 3 * se
    assert rep.mean_abs_gap < 0.01 * rep.mean_abs_integral


def test_drift_vanishes_in_flat_environment():
    ens = [SP.decomposition(flat_run(40, r), SP.Constant(1.0), "iid") for r in range(5)]
    np.testing.assert_array_equal(SP.drift_comparison(ens).drift_mean, 0.0)


def test_decomposition_rows():
    dec = SP.decomposition(flat_run(20, 0, d=1), SP.Constant(1.0), "iid")
    rows = list(dec.rows())
    assert len(rows) == len(dec.times) and len(rows[0]) == 6
