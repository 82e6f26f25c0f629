import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amp_evolve.amp import AmpProblem, cs_adapter, init, onsager_lambda, onsager_xi, run, step
from amp_evolve.denoisers import builtin, constant_signal, eval_vec, linear, residual, soft
from amp_evolve.distributions import Gaussian, sample
from amp_evolve.empirical import inner
from amp_evolve.ensembles import generate, preset
from amp_evolve.errors import InvalidInput, NumericalFailure
from amp_evolve.experiments import cs_setup, run_replication


def _problem(n, N, seed=0, name="gaussian", noise=0.1):
    g = np.random.default_rng(seed)
    A = generate(preset(name), n, N, seed)
    return AmpProblem(A, g.standard_normal(N), noise * g.standard_normal(n))


def test_problem_validation():
    with pytest.raises(InvalidInput):
        AmpProblem(np.ones((2, 3)), np.ones(2), np.ones(2))
    with pytest.raises(InvalidInput):
        AmpProblem(np.ones((4, 3)), np.ones(3), np.ones(4))


def test_init_examples():
    p = _problem(20, 40)
    s = init(p, -p.x0)
    assert s.t == 0 and np.all(s.h == 0) and np.all(s.m_prev == 0)
    assert s.sigma0_sq == pytest.approx(inner(p.x0, p.x0) / p.rho)
    assert init(p, np.zeros(40)).sigma0_sq == 0.0
    with pytest.raises(InvalidInput):
        init(p, np.zeros(39))


def test_init_clt():
    N, rho = 10_000, 0.5
    q0 = sample(Gaussian(0.0, 1.0), N, 4)
    p = AmpProblem(np.zeros((int(rho * N), N)), np.zeros(N), np.zeros(int(rho * N)))
    # sd of <q0,q0> is sqrt(2/N) ~ 0.014, so 5% is a >3 sigma band
    assert init(p, q0).sigma0_sq == pytest.approx(1.0 / rho, rel=0.05)


def test_onsager_lambda_examples():
    h = np.random.default_rng(1).standard_normal(50)
    x0 = np.random.default_rng(2).standard_normal(50)
    assert onsager_lambda(linear(1.7), 3, h, x0, 0.4) == pytest.approx(1.7 / 0.4)
    assert onsager_lambda(constant_signal(), 3, h, x0, 0.4) == 0.0


def test_onsager_lambda_cs_support_fraction():
    g = np.random.default_rng(3)
    h, x0 = g.standard_normal(200), g.standard_normal(200)
    theta, rho = 0.6, 0.5
    f = builtin("cs_soft_threshold_f", {"theta": [theta]})
    lam = onsager_lambda(f, 1, h, x0, rho)
    support = np.mean(np.abs(x0 - h) > theta)
    assert lam == pytest.approx(-support / rho, abs=1e-15)
    # finite differences of the vector map, one coordinate at a time
    eps = 1e-7
    fd = []
    for i in range(h.size):
        hp, hm = h.copy(), h.copy()
        hp[i] += eps
        hm[i] -= eps
        fd.append((eval_vec(f, 1, hp, x0)[i] - eval_vec(f, 1, hm, x0)[i]) / (2 * eps))
    assert np.mean(fd) / rho == pytest.approx(lam, abs=1e-6)


def test_onsager_xi_examples():
    g = np.random.default_rng(4)
    b, w = g.standard_normal(30), g.standard_normal(30)
    assert onsager_xi(residual(), 0, b, w) == 1.0
    assert onsager_xi(linear(-0.3), 0, b, w) == pytest.approx(-0.3)
    th = builtin("tanh")
    eps = 1e-6
    fd = np.mean((eval_vec(th, 0, b + eps, w) - eval_vec(th, 0, b - eps, w)) / (2 * eps))
    assert onsager_xi(th, 0, b, w) == pytest.approx(fd, abs=1e-5)


def test_step_zero_start():
    p = _problem(6, 10, seed=5)
    s = step(init(p, np.zeros(10)), p, constant_signal(), residual())
    assert np.all(s.b == 0)
    assert np.allclose(s.m, -p.w)
    # xi_0 = 1 but q^0 = 0, so h^1 = A^T m^0
    assert np.allclose(s.h, p.A.T @ s.m)
    assert s.t == 1 and s.lambda_t == 0.0


def test_step_hand_instance():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    x0 = np.array([1.0, -1.0])
    w = np.array([0.5, 0.25])
    p = AmpProblem(A, x0, w)
    s1 = step(init(p, x0), p, constant_signal(), residual())
    # b0 = A x0 = (-1, -1); m0 = b0 - w; xi0 = 1; h1 = A^T m0 - x0
    assert s1.b.tolist() == [-1.0, -1.0]
    assert s1.m.tolist() == [-1.5, -1.25]
    assert s1.h.tolist() == [-6.25, -7.0]
    s2 = step(s1, p, constant_signal(), residual())
    assert s2.lambda_t == 0.0
    assert s2.q.tolist() == x0.tolist()
    assert s2.h.tolist() == [-6.25, -7.0]


def test_cs_residual_identity():
    n, N = 10, 20
    p = _problem(n, N, seed=6, noise=0.05)
    ad = cs_adapter([0.8, 0.6, 0.5, 0.4])
    s = init(p, ad.q0(p.x0))
    y = p.A @ p.x0 + p.w
    thetas = [0.8, 0.6, 0.5, 0.4]
    for t in range(4):
        m_prev, h_t = s.m_prev, s.h
        s = step(s, p, ad.f, ad.g)
        xhat = ad.estimate(s.q, p.x0)
        # y - A xhat = w - A q^t and A q^t = b^t + lambda_t m^{t-1}
        assert np.allclose(y - p.A @ xhat, -(s.b - p.w) - s.lambda_t * m_prev, atol=1e-13)
        if t >= 1:
            # the estimate is the soft threshold of x0 - h^t at theta_{t-1}
            assert np.allclose(xhat, soft(p.x0 - h_t, thetas[t - 1]), atol=1e-14)


def test_cs_adapter_cold_start_and_zero_signal():
    ad = cs_adapter([1.0, 1.0, 1.0])
    x0 = np.array([0.5, -2.0, 0.0])
    assert np.array_equal(ad.q0(x0), -x0)
    assert np.allclose(cs_adapter([1.0], theta_init=1.0).q0(x0), soft(x0, 1.0) - x0)
    n, N = 8, 16
    p = AmpProblem(generate(preset("rademacher"), n, N, 1), np.zeros(N), np.zeros(n))
    traj = run(p, ad.q0(p.x0), ad.f, ad.g, 3, retain="all")
    assert np.all(traj.qq == 0)
    assert all(np.all(traj.vector("q", t) == 0) for t in range(3))


def test_run_single_step_matches_step():
    p = _problem(15, 30, seed=7)
    f, g = builtin("tanh"), residual()
    traj = run(p, p.x0, f, g, 1, retain="all")
    s = step(init(p, p.x0), p, f, g)
    assert traj.T == 1
    assert traj.qq[0] == inner(s.q, s.q)
    assert traj.bb[0] == inner(s.b, s.b)
    assert traj.hh[0] == inner(s.h, s.h)
    assert traj.mm[0] == inner(s.m, s.m)
    assert np.array_equal(traj.vector("h", 0), s.h)


def test_run_constant_signal_is_flat():
    p = _problem(20, 40, seed=8)
    traj = run(p, p.x0, constant_signal(), residual(), 5)
    assert np.all(traj.qq == traj.qq[0])


def test_run_deterministic_and_gram_consistent():
    p = _problem(40, 80, seed=9)
    ad = cs_adapter(0.5)
    t1 = run(p, ad.q0(p.x0), ad.f, ad.g, 6, retain="all")
    t2 = run(p, ad.q0(p.x0), ad.f, ad.g, 6, retain="all")
    assert t1.to_csv() == t2.to_csv() and t1.gram_json() == t2.gram_json()
    for kind, G in (("q", t1.gram_q), ("b", t1.gram_b), ("m", t1.gram_m), ("h", t1.gram_h)):
        for a in range(6):
            for b in range(6):
                ref = inner(t1.vector(kind, a), t1.vector(kind, b))
                assert G[a, b] == pytest.approx(ref, rel=1e-12, abs=1e-300)
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() >= -1e-8 * max(1.0, np.abs(G).max())


def test_run_retain_subset():
    p = _problem(10, 20, seed=10)
    traj = run(p, p.x0, builtin("tanh"), residual(), 4, retain=[1, 3])
    assert traj.has_vectors(times=[1, 3]) and not traj.has_vectors(times=[0])
    with pytest.raises(InvalidInput):
        traj.vector("q", 0)


def test_run_divergence_reports_iteration():
    p = _problem(20, 40, seed=11)
    with pytest.raises(NumericalFailure) as exc:
        run(p, p.x0, linear(1e4), builtin("linear", {"a": 1e4}), 10)
    assert exc.value.iteration is not None and 0 <= exc.value.iteration < 10


def test_trajectory_csv_schema():
    p = _problem(10, 20, seed=12)
    lines = run(p, p.x0, builtin("tanh"), residual(), 2).to_csv().splitlines()
    assert lines[0] == "# amp-evolve schema v1"
    assert lines[1] == "t,qq,bb,hh,mm,lambda,xi"
    assert len(lines) == 4


def test_cs_benchmark_mse_falls_then_settles():
    setup = cs_setup(preset("gaussian"), N=1000, T=10)
    traj = run_replication(setup, 3)
    qq = traj.qq
    assert np.all(np.diff(qq[:6]) < 0)
    assert qq[-1] < 0.05 * qq[0]
    # the SE oracle tracks the same shape
    sig = np.array(setup.se.sigma_sq[:10]) * setup.rho
    assert np.all(np.diff(sig[1:]) <= 0)
    assert qq[3] == pytest.approx(sig[3], rel=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**31), st.floats(-1.5, 1.5))
def test_linear_gram_psd(n, seed, a):
    N = 2 * n
    p = _problem(n, N, seed=seed)
    traj = run(p, p.x0, linear(a), builtin("tanh"), 4)
    for G in (traj.gram_q, traj.gram_b, traj.gram_m, traj.gram_h):
        assert np.allclose(G, G.T)
        scale = max(1.0, float(np.abs(G).max()))
        assert np.linalg.eigvalsh(G).min() >= -1e-8 * scale
