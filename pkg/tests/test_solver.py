import numpy as np
import pytest

from cineflow import mri, objective, simdata, solver
from cineflow.grid import CoilMaps, SamplingMask
from cineflow.objective import ModelParams
from cineflow.solver import DivergenceError, ModelKind, SolverParams
from conftest import crandn


def test_fista_simple_quadratic():
    c = np.array([1.0, -2.0, 3.0])
    x, _ = solver.fista(lambda x: 2 * (x - c), 2.0, np.zeros(3), 100, 1e-12)
    assert np.linalg.norm(x - c) < 1e-8


def test_fista_least_squares_closed_form(rng):
    M = rng.standard_normal((12, 8)) + 3 * np.eye(12, 8)
    b = rng.standard_normal(12)
    x_star = np.linalg.solve(M.T @ M, M.T @ b)
    L = 2 * np.linalg.eigvalsh(M.T @ M).max()
    x, iters = solver.fista(lambda x: 2 * M.T @ (M @ x - b), L, np.zeros(8), 5000, 1e-15)
    assert np.linalg.norm(x - x_star) < 1e-8


def test_fista_complex_quadratic(rng):
    c = crandn(rng, (2, 3, 3))
    x, _ = solver.fista(lambda x: 2 * (x - c), 3.0, np.zeros_like(c), 500, 1e-14)
    assert np.max(np.abs(x - c)) < 1e-8


def test_fista_stationary_start():
    c = np.array([0.5, 0.25])
    x, j = solver.fista(lambda x: 2 * (x - c), 2.0, c.copy(), 50, 1e-5)
    assert j == 1 and np.array_equal(x, c)
    x, j = solver.fista(lambda x: 2 * x, 2.0, np.zeros(2), 50, 1e-5)
    assert j == 1 and not x.any()


def test_fista_single_step():
    x0 = np.array([1.0, 2.0])
    g = lambda x: np.array([3.0 * x[0], -x[1]])  # noqa: E731
    x, j = solver.fista(g, 4.0, x0, 1, 1e-5)
    assert j == 1 and np.array_equal(x, x0 - g(x0) / 4.0)


def test_fista_does_not_mutate_input():
    x0 = np.ones(3)
    solver.fista(lambda x: 2 * x, 2.0, x0, 5, 1e-12)
    assert np.array_equal(x0, np.ones(3))


def test_early_stop_monotone_in_delta(rng):
    M = rng.standard_normal((10, 10)) + 4 * np.eye(10)
    b = rng.standard_normal(10)
    L = 2 * np.linalg.eigvalsh(M.T @ M).max()
    g = lambda x: 2 * M.T @ (M @ x - b)  # noqa: E731
    _, j_loose = solver.fista(g, L, np.zeros(10), 10000, 1e-3)
    _, j_tight = solver.fista(g, L, np.zeros(10), 10000, 1e-5)
    assert j_loose < j_tight


def test_fista_divergence_and_input_checks():
    with pytest.raises(DivergenceError, match="divergence"):
        solver.fista(lambda x: x * np.nan, 1.0, np.ones(2), 5, 1e-5)
    with pytest.raises(ValueError):
        solver.fista(lambda x: x, 0.0, np.ones(2), 5, 1e-5)
    with pytest.raises(ValueError):
        solver.fista(lambda x: x, 1.0, np.ones(2), 0, 1e-5)


def test_momentum_sequence():
    t = 1.0
    for _ in range(100):
        t2 = solver.momentum_next(t)
        assert t2 > t and t2 == pytest.approx((1 + np.sqrt(1 + 4 * t * t)) / 2)
        t = t2


def test_rel_change_guard():
    z = np.zeros(3)
    assert solver._rel_change(z, z) == 0.0
    assert solver._rel_change(np.ones(3), z) == np.inf


def test_solver_params_validation():
    p = SolverParams()
    assert (p.n_outer, p.n_rho, p.n_v, p.delta) == (200, 1400, 3200, 1e-5)
    for bad in ({"delta": 0}, {"n_rho": 0}, {"sigma": -1}, {"init": "random"}):
        with pytest.raises(ValueError):
            SolverParams(**bad)


def _unit_system(nt=2, n=6):
    return mri.MriSystem(CoilMaps(np.ones((1, n, n))), SamplingMask.full(nt, n))


@pytest.mark.parametrize("model", ["fw", "dt", "of", "cheat-of"])
def test_unregularized_full_sampling_inverts(model, rng):
    s = _unit_system()
    rho_true = crandn(rng, s.image_shape)
    y = mri.forward(s, rho_true)
    sp = SolverParams(n_outer=2, n_rho=200, n_v=5, delta=1e-14)
    v_gt = crandn(rng, (2,) + s.image_shape)
    rho, _, _ = solver.reconstruct(y, s, model, ModelParams(), sp, v_gt=v_gt)
    assert np.max(np.abs(rho - mri.adjoint(s, y))) < 1e-8
    assert np.max(np.abs(rho - rho_true)) < 1e-8


def test_dt_beats_fw_on_static_noisy_sequence():
    spec = simdata.PhantomSpec(nt=6, nx=32, ny=32)
    frame = simdata.make_phantom_frame0(spec)
    gt = np.broadcast_to(frame, spec.dims).copy()
    coils = simdata.make_coil_maps(4, spec.dims, 0)
    s = mri.MriSystem(coils, mri.make_mask(spec.nt, spec.nx, rng_seed=1))
    y = simdata.synthesize_measurements(gt, s, simdata.NoiseSpec(0.02, 2))
    sp = SolverParams(n_rho=150)
    from cineflow import metrics
    mask = np.abs(frame) > 0.05
    p_fw = metrics.evaluate(gt, solver.reconstruct(y, s, "fw", ModelParams(alpha1=0.01), sp)[0], mask)
    p_dt = metrics.evaluate(gt, solver.reconstruct(y, s, "dt", ModelParams(alpha1=0.01, alpha3=0.3), sp)[0], mask)
    assert p_dt.mean_psnr > p_fw.mean_psnr


def _random_problem(rng, nt=3, n=8):
    coils = CoilMaps(crandn(rng, (2, n, n)))
    s = mri.MriSystem(coils, mri.make_mask(nt, n, rng_seed=0) if n >= 8 else SamplingMask.full(nt, n))
    y = mri.forward(s, crandn(rng, s.image_shape))
    return s, y


def test_of_subsolves_descend(rng):
    s, y = _random_problem(rng)
    mp = ModelParams(alpha1=0.05, alpha2=0.05, alpha3=0.5, eps1=0.05, eps2=0.05, eps3=0.05)
    _, _, trace = solver.reconstruct(y, s, "of", mp, SolverParams(sigma=1.0, n_outer=5, n_rho=30, n_v=30))
    assert len(trace) == 10
    assert [r.subproblem for r in trace][:2] == ["rho", "v"]
    for r in trace:
        assert r.F_value <= r.F_start + 1e-9


def test_effective_params_and_reductions(rng):
    mp = ModelParams(alpha1=0.1, alpha2=0.2, alpha3=0.3)
    assert solver.effective_params(ModelKind.FW, mp) == mp.replace(alpha2=0.0, alpha3=0.0)
    assert solver.effective_params(ModelKind.DT, mp) == mp.replace(alpha2=0.0)
    assert solver.effective_params(ModelKind.OF, mp) == mp
    s, y = _random_problem(rng)
    rho, v = crandn(rng, s.image_shape), crandn(rng, (2,) + s.image_shape)
    fw = objective.rho_gradient_oracle(y, s, v, ModelParams(alpha1=0.1))(rho)
    of = objective.rho_gradient_oracle(y, s, v, ModelParams(alpha1=0.1, alpha2=0.0, alpha3=0.0))(rho)
    assert np.array_equal(fw, of)
    z = np.zeros_like(v)
    dt = objective.rho_gradient_oracle(y, s, z, solver.effective_params(ModelKind.DT, mp))(rho)
    of0 = objective.rho_gradient_oracle(y, s, z, mp)(rho)
    assert np.array_equal(dt, of0)


def test_fw_matches_per_frame_solves(rng):
    s, y = _random_problem(rng)
    sp = SolverParams(n_rho=60, delta=1e-30)
    mp = ModelParams(alpha1=0.05, eps1=0.05)
    rho, _, _ = solver.reconstruct(y, s, "fw", mp, sp)
    # same step size, so each frame follows the identical FISTA path
    L = objective.lipschitz_rho(s, np.zeros((2,) + s.image_shape), mp)
    for t in range(s.nt):
        def g(x, t=t):
            full = np.zeros(s.image_shape, complex)
            full[t] = x
            return objective.rho_gradient_oracle(y, s, np.zeros((2,) + s.image_shape), mp)(full)[t]
        xt, _ = solver.fista(g, L, np.zeros(s.image_shape[1:], complex), 60, 1e-30)
        assert np.allclose(xt, rho[t], atol=1e-12)


def test_cheat_of_requires_velocity(rng):
    s, y = _random_problem(rng)
    with pytest.raises(ValueError, match="ground-truth velocities"):
        solver.reconstruct(y, s, "cheat-of", ModelParams(), SolverParams(n_rho=2))
    with pytest.raises(ValueError):
        solver.reconstruct(y, s, "cheat-of", ModelParams(), SolverParams(n_rho=2), v_gt=np.zeros((2, 1, 8, 8)))


def test_deterministic_and_trace_csv(rng, tmp_path):
    s, y = _random_problem(rng)
    mp = ModelParams(alpha1=0.05, alpha2=0.05, alpha3=0.5)
    sp = SolverParams(sigma=1.0, n_outer=3, n_rho=20, n_v=20)
    a = solver.reconstruct(y, s, "of", mp, sp)
    b = solver.reconstruct(y, s, "of", mp, sp)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    a[2].write_csv(tmp_path / "a.csv")
    b[2].write_csv(tmp_path / "b.csv")
    raw = (tmp_path / "a.csv").read_bytes()
    assert raw == (tmp_path / "b.csv").read_bytes()
    assert raw.startswith(b"outer_iter,subproblem,inner_iters,F_value,grad_norm,rel_change\r\n")
    assert raw.count(b"\r\n") == 1 + len(a[2])


def test_outer_stop_on_stationary_problem():
    # zero data and zero start: every sub-solve is stationary, so one outer iteration suffices
    s = _unit_system()
    y = np.zeros(s.kspace_shape, complex)
    mp = ModelParams(alpha1=0.1, alpha2=0.1, alpha3=0.1)
    _, _, trace = solver.reconstruct(y, s, "of", mp, SolverParams(n_outer=50, n_rho=5, n_v=5))
    assert len(trace) == 2
