import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachplan.grid import ScalarField, TimeIndexedField, make_grid
from reachplan.vehicles import (
    DubinsModel,
    ErrorModel,
    LeastRestrictivePolicy,
    NominalTrajectory,
    OptimalPolicy,
    TrackingPolicy,
    argmax_disturbance,
    argmin_control,
    error_flow,
    error_hamiltonian,
    ham_brs_minmax,
    ham_error_maxminmin,
    ham_frs_closed_loop,
    ham_frs_maxmax,
    least_restrictive_control,
    tracking_control,
)

TWO_PI = 2 * np.pi

MODEL = DubinsModel(v_min=0.5, v_max=1.0, omega_max=1.0, d_pos_max=0.1, d_theta_max=0.2)


def error_model(grid=None):
    if grid is None:
        grid = make_grid(
            [(-0.15, 0.15), (-0.15, 0.15), (-np.pi, np.pi)], [11, 11, 11],
            [False, False, True],
        )
    return ErrorModel(MODEL, (0.75, 0.75), 0.6, grid)


def rotation_flow(x, u, d):
    """Independent evaluation: body velocity rotated into the world frame."""
    rot = np.array(
        [[math.cos(x[2]), -math.sin(x[2])], [math.sin(x[2]), math.cos(x[2])]]
    )
    vel = rot @ np.array([u[0], 0.0])
    return np.array([vel[0] + d[0], vel[1] + d[1], u[1] + d[2]])


class TestFlow:
    def test_straight_ahead(self):
        assert MODEL.flow((0, 0, 0), (1, 0)) == pytest.approx([1, 0, 0])

    def test_quarter_turn_heading(self):
        out = MODEL.flow((0, 0, np.pi / 2), (0.5, 1))
        assert out == pytest.approx([0, 0.5, 1], abs=1e-12)

    def test_matches_rotation_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
            u = rng.uniform([0.5, -1], [1.0, 1])
            ang = rng.uniform(0, TWO_PI)
            r = 0.1 * math.sqrt(rng.uniform())
            d = np.array([r * math.cos(ang), r * math.sin(ang),
                          rng.uniform(-0.2, 0.2)])
            assert MODEL.flow(x, u, d) == pytest.approx(rotation_flow(x, u, d))

    def test_control_bound_violation(self):
        with pytest.raises(ValueError):
            MODEL.flow((0, 0, 0), (1.5, 0))

    def test_disturbance_bound_violation(self):
        with pytest.raises(ValueError):
            MODEL.flow((0, 0, 0), (1, 0), (0.2, 0.2, 0))

    def test_model_validation(self):
        with pytest.raises(ValueError):
            DubinsModel(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            DubinsModel(0.5, 1.0, 1.0, d_pos_max=-0.1)


def sample_inputs(model, n_ctrl=50, n_dist=50):
    """Exhaustive input grids; extreme points included via linspace ends."""
    vs = np.linspace(model.v_min, model.v_max, n_ctrl)
    ws = np.linspace(-model.omega_max, model.omega_max, n_ctrl)
    angles = np.linspace(0, TWO_PI, n_dist, endpoint=False)
    d_pos = model.d_pos_max * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    d_th = np.linspace(-model.d_theta_max, model.d_theta_max, n_dist)
    return vs, ws, d_pos, d_th


def brute_minmax(model, x, lam):
    """Grid search; the dynamics split additively in control and disturbance,
    so the joint optimum is the sum of per-input optima."""
    vs, ws, d_pos, d_th = sample_inputs(model)
    a = lam[0] * math.cos(x[2]) + lam[1] * math.sin(x[2])
    ctrl = np.min(a * vs) + np.min(lam[2] * ws)
    dist = np.max(d_pos @ lam[:2]) + np.max(lam[2] * d_th)
    return ctrl + dist


def brute_maxmax(model, x, lam):
    vs, ws, d_pos, d_th = sample_inputs(model)
    a = lam[0] * math.cos(x[2]) + lam[1] * math.sin(x[2])
    return (np.max(a * vs) + np.max(lam[2] * ws)
            + np.max(d_pos @ lam[:2]) + np.max(lam[2] * d_th))


class TestHamiltonians:
    def test_heading_only_costate(self):
        h = ham_brs_minmax(MODEL, np.array([0.3, -0.2, 1.0]), np.array([0.0, 0.0, 1.0]))
        assert float(h) == pytest.approx(-0.8)

    def test_zero_costate(self):
        assert float(ham_brs_minmax(MODEL, np.zeros(3), np.zeros(3))) == 0.0
        assert float(ham_frs_maxmax(MODEL, np.zeros(3), np.zeros(3))) == 0.0

    def test_maxmax_forward_speed(self):
        h = ham_frs_maxmax(MODEL, np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert float(h) == pytest.approx(1.1)

    def test_minmax_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
            lam = rng.uniform(-2, 2, size=3)
            assert float(ham_brs_minmax(MODEL, x, lam)) == pytest.approx(
                brute_minmax(MODEL, x, lam), abs=1e-3
            )

    def test_maxmax_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
            lam = rng.uniform(-2, 2, size=3)
            assert float(ham_frs_maxmax(MODEL, x, lam)) == pytest.approx(
                brute_maxmax(MODEL, x, lam), abs=1e-3
            )

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
    def test_positive_homogeneity(self, c, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
        lam = rng.uniform(-2, 2, size=3)
        for ham in (ham_brs_minmax, ham_frs_maxmax):
            assert float(ham(MODEL, x, c * lam)) == pytest.approx(
                c * float(ham(MODEL, x, lam)), rel=1e-9, abs=1e-12
            )

    def test_argopt_within_bounds_and_reproduces_value(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
            lam = rng.uniform(-2, 2, size=3)
            u = argmin_control(MODEL, x, lam)
            d = argmax_disturbance(MODEL, x, lam)
            MODEL.check_control(u)
            MODEL.check_disturbance(d)
            f = MODEL.flow(x, u, d)
            assert float(lam @ f) == pytest.approx(
                float(ham_brs_minmax(MODEL, x, lam)), abs=1e-12
            )

    def test_tie_breaking_midpoints(self):
        # costate orthogonal to the heading: speed is indifferent -> midpoint
        u = argmin_control(MODEL, np.array([0, 0, 0.0]), np.array([0.0, 1.0, 0.0]))
        assert u[0] == pytest.approx(MODEL.v_mid)
        assert u[1] == pytest.approx(0.0)


class TestClosedLoopHamiltonian:
    def _policy(self):
        g = make_grid([(-1, 1), (-1, 1), (0, TWO_PI)], [15, 15, 15], [False, False, True])
        xs, ys = np.meshgrid(g.coords[0], g.coords[1], indexing="ij")
        vals = np.sqrt((xs - 0.5) ** 2 + ys**2)[:, :, None] - 0.1
        f = ScalarField(g, np.broadcast_to(vals, g.shape).copy())
        tif = TimeIndexedField([-1.0, 0.0], [f, f])
        return OptimalPolicy(tif, MODEL)

    def test_zero_disturbance_degenerate_max(self):
        model0 = DubinsModel(0.5, 1.0, 1.0, 0.0, 0.0)
        policy = OptimalPolicy(self._policy().values, model0)
        x = np.array([-0.3, 0.2, 0.1])
        lam = np.array([0.7, -0.4, 0.2])
        u = policy.control(-0.5, x)
        f = model0.flow(x, u)
        assert float(ham_frs_closed_loop(policy, x, lam, -0.5)) == pytest.approx(
            float(lam @ f), abs=1e-12
        )

    def test_aligned_costate_adds_disturbance_envelope(self):
        policy = self._policy()
        x = np.array([-0.3, 0.2, 0.1])
        lam = np.array([0.7, -0.4, 0.2])
        u = policy.control(-0.5, x)
        f = MODEL.flow(x, u)
        expected = float(lam @ f) + 0.1 * math.hypot(0.7, -0.4) + 0.2 * 0.2
        assert float(ham_frs_closed_loop(policy, x, lam, -0.5)) == pytest.approx(
            expected, abs=1e-12
        )


class TestLeastRestrictive:
    def _policy(self):
        g = make_grid([(-1, 1), (-1, 1), (0, TWO_PI)], [21, 21, 21], [False, False, True])
        xs, ys = np.meshgrid(g.coords[0], g.coords[1], indexing="ij")
        vals = (np.hypot(xs, ys) - 0.5)[:, :, None]
        f = ScalarField(g, np.broadcast_to(vals, g.shape).copy())
        return OptimalPolicy(TimeIndexedField([-1.0, 0.0], [f, f]), MODEL)

    def test_deep_inside_returns_fallback(self):
        policy = self._policy()
        u = least_restrictive_control(policy, -0.5, np.array([0.05, 0.0, 1.0]), (0.75, 0.0))
        assert u == pytest.approx([0.75, 0.0])

    def test_on_boundary_returns_optimal(self):
        policy = self._policy()
        x = np.array([0.5, 0.0, 0.0])
        u = least_restrictive_control(policy, -0.5, x, (0.75, 0.0))
        expected = argmin_control(MODEL, x, policy.gradient(-0.5, x))
        assert u == pytest.approx(expected)

    def test_fallback_must_be_admissible(self):
        with pytest.raises(ValueError):
            least_restrictive_control(self._policy(), -0.5, np.zeros(3), (2.0, 0.0))

    def test_policy_wrapper_matches_function(self):
        policy = self._policy()
        wrapper = LeastRestrictivePolicy(policy, lambda t, x: np.array([0.75, 0.0]))
        x = np.array([0.05, 0.0, 1.0])
        assert wrapper.control(-0.5, x) == pytest.approx([0.75, 0.0])


class TestErrorDynamics:
    def test_perfect_tracking_fixed_point(self):
        em = error_model()
        e_dot = error_flow(em, np.zeros(3), (0.75, 0.0), (0.75, 0.0))
        assert np.allclose(e_dot, 0.0)

    def test_reference_turn_couples_position(self):
        em = error_model()
        e_dot = error_flow(em, (0.0, 1.0, 0.0), (0.75, 0.0), (0.75, 0.6))
        assert e_dot == pytest.approx([0.6, 0.0, -0.6])

    def test_matches_two_trajectory_transformation(self):
        # integrate the absolute vehicle and the reference, transform their
        # difference into the reference frame, and finite-difference it
        em = error_model()
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(25):
            x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
            xr = x + rng.uniform(-0.1, 0.1, size=3)
            u = rng.uniform([0.5, -1], [1.0, 1.0])
            ur = np.array([0.75, rng.uniform(-0.6, 0.6)])
            ang = rng.uniform(0, TWO_PI)
            d = np.array([0.05 * math.cos(ang), 0.05 * math.sin(ang), 0.1])

            def rel_error(x, xr):
                c, s = math.cos(xr[2]), math.sin(xr[2])
                rx, ry = x[0] - xr[0], x[1] - xr[1]
                return np.array(
                    [c * rx + s * ry, -s * rx + c * ry,
                     (x[2] - xr[2] + np.pi) % TWO_PI - np.pi]
                )

            x1 = x + h * MODEL.flow(x, u, d)
            xr1 = xr + h * np.array(
                [ur[0] * math.cos(xr[2]), ur[0] * math.sin(xr[2]), ur[1]]
            )
            numeric = (rel_error(x1, xr1) - rel_error(x, xr)) / h
            c, s = math.cos(xr[2]), math.sin(xr[2])
            d_ref = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])
            analytic = error_flow(em, rel_error(x, xr), u, ur, d_ref)
            assert numeric == pytest.approx(analytic, abs=1e-5)

    def test_reference_bounds_enforced(self):
        em = error_model()
        with pytest.raises(ValueError):
            error_flow(em, np.zeros(3), (0.75, 0.0), (0.9, 0.0))

    def test_planner_must_sit_inside_tracker(self):
        g = error_model().grid
        with pytest.raises(ValueError):
            ErrorModel(MODEL, (0.75, 0.75), 1.5, g)


def brute_error_ham(em, e, lam):
    tr = em.tracker
    vs = np.linspace(tr.v_min, tr.v_max, 50)
    ws = np.linspace(-tr.omega_max, tr.omega_max, 50)
    vr = np.linspace(em.planner_v[0], em.planner_v[1], 10)
    wr = np.linspace(-em.planner_omega_max, em.planner_omega_max, 50)
    angles = np.linspace(0, TWO_PI, 50, endpoint=False)
    d_pos = tr.d_pos_max * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    d_th = np.linspace(-tr.d_theta_max, tr.d_theta_max, 50)
    b = lam[0] * math.cos(e[2]) + lam[1] * math.sin(e[2])
    track = np.max(b * vs) + np.max(lam[2] * ws)
    plan = np.min(-lam[0] * vr) + np.min((lam[0] * e[1] - lam[1] * e[0] - lam[2]) * wr)
    dist = np.min(d_pos @ lam[:2]) + np.min(lam[2] * d_th)
    return track + plan + dist


class TestErrorHamiltonian:
    def test_heading_costate_signs(self):
        em = error_model()
        e = np.zeros(3)
        lam = np.array([0.0, 0.0, 1.0])
        u = tracking_control(em, e, lam)
        assert u[1] == pytest.approx(1.0)  # tracker turns with the costate
        # planner contributes -0.6, heading disturbance -0.2, tracker +1
        assert float(ham_error_maxminmin(em, e, lam)) == pytest.approx(1.0 - 0.6 - 0.2)

    def test_zero_costate(self):
        em = error_model()
        assert float(ham_error_maxminmin(em, np.zeros(3), np.zeros(3))) == 0.0

    def test_matches_brute_force(self):
        em = error_model()
        rng = np.random.default_rng(6)
        for _ in range(200):
            e = rng.uniform([-0.15, -0.15, -np.pi], [0.15, 0.15, np.pi])
            lam = rng.uniform(-2, 2, size=3)
            assert float(ham_error_maxminmin(em, e, lam)) == pytest.approx(
                brute_error_ham(em, e, lam), abs=1e-3
            )

    def test_tracking_control_achieves_max(self):
        em = error_model()
        rng = np.random.default_rng(7)
        for _ in range(100):
            e = rng.uniform([-0.15, -0.15, -np.pi], [0.15, 0.15, np.pi])
            lam = rng.uniform(-2, 2, size=3)
            u = tracking_control(em, e, lam)
            em.tracker.check_control(u)
            # plugging the tracker's choice back with worst-case planner and
            # disturbance reproduces the Hamiltonian
            b = lam[0] * math.cos(e[2]) + lam[1] * math.sin(e[2])
            got = (
                b * u[0] + lam[2] * u[1]
                + np.min(-lam[0] * np.array(em.planner_v))
                - em.planner_omega_max * abs(lam[0] * e[1] - lam[1] * e[0] - lam[2])
                - em.tracker.d_pos_max * math.hypot(lam[0], lam[1])
                - em.tracker.d_theta_max * abs(lam[2])
            )
            assert float(got) == pytest.approx(
                float(ham_error_maxminmin(em, e, lam)), abs=1e-12
            )

    def test_grid_hamiltonian_alpha_dominates(self):
        em = error_model()
        ham = error_hamiltonian(em)
        rng = np.random.default_rng(8)
        for _ in range(100):
            e = rng.uniform([-0.15, -0.15, -np.pi], [0.15, 0.15, np.pi])
            lam = rng.uniform(-2, 2, size=3)
            for k in range(3):
                step = np.zeros(3)
                step[k] = 1e-6
                slope = (
                    ham_error_maxminmin(em, e, lam + step)
                    - ham_error_maxminmin(em, e, lam - step)
                ) / 2e-6
                assert abs(slope) <= ham.wave_speeds()[k] + 1e-6


class TestNominalTrajectoryAndTracking:
    def test_state_interpolation_wraps_heading(self):
        times = [0.0, 1.0]
        states = np.array([[0, 0, 6.0], [1, 0, 0.5]])  # crosses the 2*pi seam
        controls = np.array([[0.75, 0.3], [0.75, 0.3]])
        nom = NominalTrajectory(times, states, controls)
        mid = nom.state(0.5)
        # halfway along the short way around the circle
        expected = (6.0 + (0.5 + TWO_PI - 6.0) / 2) % TWO_PI
        assert mid[2] == pytest.approx(expected)

    def test_tracking_policy_error_frame(self):
        g = error_model().grid
        kernel_value = ScalarField(g, -signed_dist(g))
        nom = NominalTrajectory(
            [0.0, 1.0], np.array([[0, 0, np.pi / 2], [0, 0.75, np.pi / 2]]),
            np.array([[0.75, 0.0], [0.75, 0.0]]),
        )
        policy = TrackingPolicy(kernel_value, error_model(), nom)
        # vehicle exactly on the reference: zero error
        e = policy.error(0.0, np.array([0.0, 0.0, np.pi / 2]))
        assert np.allclose(e, 0.0, atol=1e-12)
        # vehicle ahead of the reference along its heading: +e_x
        e = policy.error(0.0, np.array([0.0, 0.1, np.pi / 2]))
        assert e == pytest.approx([0.1, 0.0, 0.0], abs=1e-12)
        u = policy.control(0.0, np.array([0.02, 0.0, np.pi / 2]))
        MODEL.check_control(u)


def signed_dist(grid):
    ex, ey = np.meshgrid(grid.coords[0], grid.coords[1], indexing="ij")
    return np.broadcast_to((np.hypot(ex, ey) - 0.075)[:, :, None], grid.shape).copy()
