import numpy as np
import pytest

from regionid.controller import SafetyParams, build_constraints, solve_qp
from regionid.observer import Measurement
from regionid.ukf import SigmaParams, UkfState, initial_state, sigma_points, ukf_step, ukf_update


def kf_step(mean, P, z, H, Q, R, bias):
    """Textbook linear Kalman filter for a random-walk state."""
    P = P + Q
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    mean = mean + K @ (z - (H @ mean + bias))
    P = (np.eye(len(mean)) - K @ H) @ P
    return mean, P


def test_sigma_weights_sum_to_one():
    wm, wc, spread = SigmaParams().weights(2)
    assert wm.sum() == pytest.approx(1.0)
    assert spread == pytest.approx(2e-6)


def test_sigma_params_validation():
    with pytest.raises(ValueError):
        SigmaParams(alpha=0.0)
    with pytest.raises(ValueError):
        SigmaParams(alpha=1.0, kappa=-2.0).weights(2)


def test_sigma_points_reproduce_mean_and_covariance():
    P = np.array([[2.0, 0.3], [0.3, 0.5]])
    sp = SigmaParams(alpha=0.5)
    X, wm, wc = sigma_points(np.array([1.0, -1.0]), P, sp)
    assert np.allclose(wm @ X, [1, -1])
    dX = X - wm @ X
    assert np.allclose((wc[:, None] * dX).T @ dX - (1 - sp.alpha ** 2 + sp.beta) * np.outer(dX[0], dX[0]), P)


def test_matches_linear_kalman_filter_without_constraints():
    rng = np.random.default_rng(40)
    k_p = 1.3
    theta = np.array([2.0, -1.0])
    st = initial_state((-5, 5, -5, 5))
    for k in range(200):
        x = rng.uniform(-3, 3, size=2)
        z = k_p * (theta - x) + rng.normal(scale=1e-3, size=2)
        m = Measurement(0.02 * k, x, z, np.zeros((0, 2)))
        mean, P = kf_step(st.mean, st.covariance, z, k_p * np.eye(2), st.Q, st.R, -k_p * x)
        st = ukf_step(st, m, k_p, SafetyParams())
        assert np.max(np.abs(st.mean - mean)) <= 1e-8
        assert np.max(np.abs(st.covariance - P)) <= 1e-8 * max(1.0, np.max(np.abs(P)))


def test_two_active_constraints_freeze_the_mean():
    sp = SafetyParams(D_s=0.5, gamma=2.0)
    x = np.zeros(2)
    obs = np.array([[0.6, 0.55], [0.6, -0.55]])  # corridor walls ahead on both sides
    theta = np.array([5.0, 0.3])
    u = solve_qp(theta - x, build_constraints(x, obs, sp))
    assert len(u.active_indices) == 2
    m = Measurement(0.0, x, u.u_star, obs)
    st = UkfState(np.array([4.0, 1.0]), np.diag([0.01, 0.01]))
    for _ in range(20):
        new = ukf_step(st, m, 1.0, sp)
        assert np.linalg.norm(new.mean - st.mean) <= 1e-9
        st = new


def test_constant_measurement_model_leaves_mean():
    st = UkfState(np.array([1.0, 2.0]), np.eye(2))
    for _ in range(50):
        new = ukf_update(st, np.array([0.5, 0.5]), lambda th: np.array([0.3, -0.2]))
        assert np.linalg.norm(new.mean - st.mean) <= 1e-9
        st = new


def test_covariance_stays_spd_over_long_random_run():
    rng = np.random.default_rng(41)
    sp = SafetyParams()
    st = initial_state((-5, 5, -5, 5))
    for k in range(10_000):
        x = rng.uniform(-3, 3, size=2)
        obs = x + rng.normal(size=(int(rng.integers(0, 4)), 2)) * 1.5
        obs = obs[np.linalg.norm(obs - x, axis=1) > sp.D_s + 1e-3]
        cs = build_constraints(x, obs, sp)
        theta = rng.uniform(-5, 5, size=2)
        z = solve_qp(theta - x, cs).u_star + rng.normal(scale=1e-3, size=2)
        st = ukf_step(st, Measurement(0.02 * k, x, z, obs), 1.0, sp)
        P = st.covariance
        assert np.array_equal(P, P.T)
        assert np.min(np.linalg.eigvalsh(P)) > 0


def test_initial_state():
    st = initial_state((0, 10, -2, 2), std_fraction=0.1)
    assert np.allclose(st.mean, [5, 0]) and np.allclose(np.diag(st.covariance), [1.0, 0.16])
    assert np.allclose(st.Q, 1e-8 * np.eye(2)) and np.allclose(st.R, 1e-6 * np.eye(2))
