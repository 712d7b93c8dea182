import numpy as np
import pytest

from scaledgd.problem import NoiseModel, dense_m_star, make_ground_truth
from scaledgd.sensing import gaussian_operator, identity_operator, measure
from scaledgd.solver import (DivergenceError, PreconditionerError, SolverConfig,
                             StoppingRule, estimate_damping, gradient, loss,
                             random_init, run, spectral_init, step_gd,
                             step_prec_gd, step_scaled_gd,
                             step_scaled_gd_lambda)


def _scalar_setup():
    # n = 1 identity sensing with M* = 1, so f(x) = (x^2 - 1)^2 / 4
    op = identity_operator(1)
    y = np.array([1.0])
    x = np.array([[0.5]])
    return op, y, x


def test_scalar_closed_forms():
    op, y, x = _scalar_setup()
    assert loss(op, y, x) == pytest.approx(0.140625, abs=1e-15)
    g = gradient(op, y, x)
    assert g[0, 0] == pytest.approx(-0.375, abs=1e-15)
    eta, lam = 0.1, 0.25
    assert step_scaled_gd_lambda(x, g, eta, lam)[0, 0] == pytest.approx(0.575, abs=1e-14)
    assert step_gd(x, g, eta)[0, 0] == pytest.approx(0.5375, abs=1e-14)
    assert step_scaled_gd(x, g, eta)[0, 0] == pytest.approx(0.65, abs=1e-14)
    f = loss(op, y, x)
    assert step_prec_gd(x, g, eta, f)[0, 0] == pytest.approx(0.56, abs=1e-14)


def test_scalar_recurrence_oracle():
    # x_{t+1} = x_t - eta (x_t^2 - 1) x_t / (x_t^2 + lam), checked to 1e-14
    op, y, x = _scalar_setup()
    eta, lam = 0.2, 0.1
    s = 0.5
    for _ in range(30):
        x = step_scaled_gd_lambda(x, gradient(op, y, x), eta, lam)
        s = s - eta * (s * s - 1.0) * s / (s * s + lam)
        assert abs(x[0, 0] - s) <= 1e-14


def test_gradient_matches_finite_differences():
    h = 1e-6
    for inst in range(20):
        gen = np.random.default_rng(inst)
        op = gaussian_operator(6, 40, seed=inst)
        y = gen.normal(size=40)
        x = gen.normal(size=(6, 2))
        g = gradient(op, y, x)
        scale = max(np.abs(g).max(), 1.0)
        for _ in range(5):
            i, j = gen.integers(6), gen.integers(2)
            xp = x.copy(); xp[i, j] += h
            xm = x.copy(); xm[i, j] -= h
            fd = (loss(op, y, xp) - loss(op, y, xm)) / (2 * h)
            assert abs(g[i, j] - fd) <= 1e-6 * scale


def test_ground_truth_is_fixed_point():
    gt = make_ground_truth(12, 3, 2, seed=5)
    op = gaussian_operator(12, 240, seed=6)
    y = measure(op, gt).y
    x_star = gt.x_star
    g = gradient(op, y, x_star)
    assert np.abs(g).max() <= 1e-10
    for stepped in (step_gd(x_star, g, 0.3),
                    step_scaled_gd_lambda(x_star, g, 0.3, 0.05),
                    step_prec_gd(x_star, g, 0.3, loss(op, y, x_star))):
        assert np.abs(stepped - x_star).max() <= 1e-9


def test_rotation_equivariance():
    # M_t is invariant under right-rotation of the initialization
    n, r = 20, 4
    gt = make_ground_truth(n, 2, 3, seed=1)
    op = gaussian_operator(n, 400, seed=2)
    y = measure(op, gt).y
    x0 = random_init(n, r, 0.1, seed=3)
    q, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(r, r)))
    stop = StoppingRule(patience=1000)
    base = dict(algorithm="scaled_gd_lambda", r=r, eta=0.3, lam=0.05,
                init="explicit", max_iters=50, stop=stop)
    xa = run(op, y, SolverConfig(x0=x0, **base)).final_state.x
    xb = run(op, y, SolverConfig(x0=x0 @ q, **base)).final_state.x
    ma, mb = xa @ xa.T, xb @ xb.T
    assert np.abs(ma - mb).max() <= 1e-9 * np.abs(ma).max()


def test_large_lambda_approaches_gd():
    # (C + lam I)^{-1} ~ I/lam with error ||C|| / (lam (lam - ||C||))
    gen = np.random.default_rng(7)
    x = gen.normal(size=(10, 3))
    g = gen.normal(size=(10, 3))
    c_norm = np.linalg.norm(x.T @ x, 2)
    eta = 0.5
    for lam in (2.5 * c_norm, 10 * c_norm, 1e4 * c_norm):
        precond = step_scaled_gd_lambda(x, g, eta, lam)
        gd_limit = step_gd(x, g, eta / lam)
        bound = eta * np.linalg.norm(g, 2) * c_norm / (lam * (lam - c_norm))
        assert np.linalg.norm(precond - gd_limit, 2) <= bound * (1 + 1e-10)


def test_run_deterministic():
    gt = make_ground_truth(15, 2, 2, seed=9)
    op = gaussian_operator(15, 200, seed=10)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="scaled_gd_lambda", r=3, eta=0.3, lam=0.01,
                       alpha=1e-6, max_iters=40, stop=StoppingRule(patience=500),
                       seed_init=11)
    a = run(op, y, cfg, oracle=gt)
    b = run(op, y, cfg, oracle=gt)
    assert np.array_equal(a.final_state.x, b.final_state.x)
    assert [r.loss for r in a.records] == [r.loss for r in b.records]


def test_stop_at_truth_immediately():
    gt = make_ground_truth(10, 2, 2, seed=0)
    op = identity_operator(10)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="gd", r=2, eta=0.1, init="explicit",
                       x0=gt.x_star, max_iters=100,
                       stop=StoppingRule(target_rel_err=1e-9))
    traj = run(op, y, cfg, oracle=gt)
    assert traj.stop_reason == "target_reached"
    assert traj.final_state.t == 0


def test_target_stop_needs_oracle():
    op = identity_operator(5)
    cfg = SolverConfig(algorithm="gd", r=1, eta=0.1, max_iters=10,
                       stop=StoppingRule(target_rel_err=1e-3))
    with pytest.raises(ValueError):
        run(op, np.zeros(op.m) + 0.1, cfg)


def test_patience_stop_on_stalled_loss():
    # tiny step size stalls the loss, so patience fires well before max_iters
    gt = make_ground_truth(8, 2, 2, seed=3)
    op = identity_operator(8)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="gd", r=2, eta=1e-12, alpha=1e-3,
                       max_iters=10_000, stop=StoppingRule(patience=20))
    traj = run(op, y, cfg)
    assert traj.stop_reason == "patience"
    assert traj.final_state.t < 100


def test_max_iters_stop_and_final_record():
    gt = make_ground_truth(8, 2, 2, seed=3)
    op = identity_operator(8)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="scaled_gd_lambda", r=3, eta=0.3, lam=0.01,
                       max_iters=17, stop=StoppingRule(patience=1000),
                       record_every=5)
    traj = run(op, y, cfg, oracle=gt)
    assert traj.stop_reason == "max_iters"
    ts = [r.t for r in traj.records]
    assert ts == [0, 5, 10, 15, 17]


def test_prec_gd_lambda_schedule_decreases():
    # lambda_t = sqrt(f(X_t)) tracks the loss, which decays on a converging run
    gt = make_ground_truth(12, 2, 2, seed=4)
    op = gaussian_operator(12, 360, seed=5)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="prec_gd", r=2, eta=0.3, init="spectral",
                       max_iters=60, stop=StoppingRule(patience=1000))
    traj = run(op, y, cfg, oracle=gt)
    lams = [np.sqrt(r.loss) for r in traj.records]
    assert lams[-1] < 1e-4 * lams[0]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(lams, lams[1:]))


def test_spectral_init_identity_recovers_truth():
    gt = make_ground_truth(10, 3, 2, seed=6)
    op = identity_operator(10)
    y = measure(op, gt).y
    x0 = spectral_init(op, y, 3)
    assert np.abs(x0 @ x0.T - dense_m_star(gt)).max() <= 1e-10


def test_spectral_init_clips_negative_eigenvalues():
    op = identity_operator(4)
    y = op.apply_forward(-np.eye(4))
    x0 = spectral_init(op, y, 2)
    assert np.array_equal(x0, np.zeros((4, 2)))


def test_random_init_scale_and_determinism():
    a = random_init(50, 3, 1e-6, seed=1)
    assert a.shape == (50, 3)
    assert np.array_equal(a, random_init(50, 3, 1e-6, seed=1))
    assert np.array_equal(2 * a, random_init(50, 3, 2e-6, seed=1))
    # entries are alpha N(0, 1/n): Frobenius norm concentrates near alpha sqrt(r)
    assert 0.5e-6 < np.linalg.norm(a) < 3e-6


def test_estimate_damping_identity():
    gt = make_ground_truth(9, 3, 2, seed=8)
    op = identity_operator(9)
    y = measure(op, gt).y
    est = estimate_damping(op, y, rank_guess=3)
    # A*(y) = M*, so the surrogate is c_frac times sigma_min(X*)^2
    assert est.lambda_hat == pytest.approx(0.25 * gt.sigma_star[-1] ** 2, rel=1e-10)
    est2 = estimate_damping(op, y, rank_guess=3, c_frac=0.05)
    assert est2.lambda_hat == pytest.approx(0.05 * gt.sigma_star[-1] ** 2, rel=1e-10)
    with pytest.raises(ValueError):
        estimate_damping(op, y, rank_guess=0)


def test_divergence_guard():
    gt = make_ground_truth(8, 2, 2, seed=2)
    op = identity_operator(8)
    y = measure(op, gt).y
    cfg = SolverConfig(algorithm="gd", r=2, eta=50.0, alpha=0.5,
                       max_iters=200, stop=StoppingRule(patience=500))
    with pytest.raises(DivergenceError):
        run(op, y, cfg)


def test_preconditioner_singularity():
    x = np.zeros((5, 2))
    x[:, 0] = 1.0  # rank deficient, X^T X singular
    g = np.ones((5, 2))
    with pytest.raises(PreconditionerError):
        step_scaled_gd(x, g, 0.1)
    # positive damping repairs it
    step_scaled_gd_lambda(x, g, 0.1, 1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(algorithm="newton", r=2, eta=0.1)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd", r=0, eta=0.1)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd", r=2, eta=-0.1)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="scaled_gd", r=2, eta=0.1, lam=0.5)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd", r=2, eta=0.1, lam=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd", r=2, eta=0.1, init="explicit")
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd", r=2, eta=0.1, alpha=0.0)
    with pytest.raises(ValueError):
        StoppingRule()
    with pytest.raises(ValueError):
        StoppingRule(target_rel_err=0.0)
    with pytest.raises(ValueError):
        StoppingRule(patience=0)


def test_noisy_measurements_flow_through():
    gt = make_ground_truth(10, 2, 2, seed=7)
    op = gaussian_operator(10, 300, seed=8)
    y = measure(op, gt, NoiseModel(sigma=1e-3, seed=1)).y
    cfg = SolverConfig(algorithm="scaled_gd_lambda", r=3, eta=0.3, lam=0.01,
                       alpha=1e-6, max_iters=200, stop=StoppingRule(patience=50))
    traj = run(op, y, cfg, oracle=gt)
    final = traj.records[-1]
    assert final.rel_err_fro is not None and final.rel_err_fro < 0.05
