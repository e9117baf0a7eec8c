import numpy as np
import pytest

from reachplan.grid import ScalarField, make_grid, signed_distance_ball
from reachplan.levelset import (
    CflViolationError,
    Hamiltonian,
    cfl_timestep,
    lax_friedrichs_step,
    tvd_rk_step,
    upwind_derivatives,
    upwind_raw,
)
from reachplan.vehicles import (
    DubinsModel,
    brs_hamiltonian,
    frs_hamiltonian,
    ham_brs_minmax,
    ham_frs_maxmax,
)

TWO_PI = 2 * np.pi


def advection_ham(c, alpha=None):
    return Hamiltonian(fn=lambda t, x, lam: c * lam[0], alpha=(abs(c) if alpha is None else alpha,))


class TestUpwindDerivatives:
    def test_linear_field_exact_interior(self):
        g = make_grid([(0, 1)], [21])
        f = ScalarField(g, 3.0 * g.coords[0])
        pair = upwind_derivatives(f)
        assert np.allclose(pair.left[0][1:-1], 3.0)
        assert np.allclose(pair.right[0][1:-1], 3.0)

    def test_constant_field_zero(self):
        g = make_grid([(0, 1), (0, 1)], [9, 9])
        pair = upwind_derivatives(ScalarField(g, np.ones(g.shape)))
        for d in range(2):
            assert np.allclose(pair.left[d], 0.0)
            assert np.allclose(pair.right[d], 0.0)

    def test_periodic_wrap(self):
        g = make_grid([(0, TWO_PI)], [256], [True])
        f = ScalarField(g, np.sin(g.coords[0]))
        pair = upwind_derivatives(f)
        # one-sided first-order error is O(dx) everywhere, including the seam
        assert np.max(np.abs(pair.left[0] - np.cos(g.coords[0]))) < 2 * g.spacing[0]

    def test_first_order_convergence_rate(self):
        errs = []
        for n in (64, 128, 256):
            g = make_grid([(0, 1)], [n])
            f = ScalarField(g, np.sin(2 * np.pi * g.coords[0]))
            pair = upwind_derivatives(f)
            exact = 2 * np.pi * np.cos(2 * np.pi * g.coords[0])
            errs.append(np.max(np.abs(pair.left[0][3:-3] - exact[3:-3])))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates > 0.8)

    def test_weno5_high_order_convergence(self):
        errs = []
        for n in (32, 64, 128):
            g = make_grid([(0, TWO_PI)], [n], [True])
            f = ScalarField(g, np.sin(g.coords[0]))
            pair = upwind_derivatives(f, scheme="weno5")
            exact = np.cos(g.coords[0])
            errs.append(np.max(np.abs(pair.left[0] - exact)))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(rates > 3.0)

    def test_min_node_requirements(self):
        g = make_grid([(0, 1)], [5])
        f = ScalarField(g, np.zeros(5))
        with pytest.raises(ValueError):
            upwind_derivatives(f, scheme="weno5")
        with pytest.raises(ValueError):
            upwind_derivatives(f, scheme="mystery")


class TestLaxFriedrichsStep:
    def test_zero_hamiltonian_is_identity(self):
        g = make_grid([(0, 1)], [33])
        rng = np.random.default_rng(0)
        v = rng.normal(size=33)
        ham = Hamiltonian(fn=lambda t, x, lam: np.zeros_like(lam[0]), alpha=(0.0,))
        assert np.array_equal(lax_friedrichs_step(g, v, ham, 0.0, 0.01), v)

    def test_advection_translates_profile(self):
        # method-of-characteristics oracle: V(t, x) = V0(x - c t)
        c = 0.8
        g = make_grid([(-2, 2)], [401])
        v0 = lambda x: np.tanh(4 * x)
        v = v0(g.coords[0])
        ham = advection_ham(c)
        dt = cfl_timestep(g, ham)
        t_final = 0.5
        n = int(np.ceil(t_final / dt))
        h = t_final / n
        for _ in range(n):
            v = lax_friedrichs_step(g, v, ham, 0.0, h)
        exact = v0(g.coords[0] - c * t_final)
        interior = abs(g.coords[0]) < 1.5
        assert np.max(np.abs(v[interior] - exact[interior])) < 0.06

    def test_unit_speed_reach_grows_distance(self):
        # H = |lam|: every level of a signed distance drops at unit rate,
        # V(t) = sd - |t|
        g = make_grid([(-2, 2)], [401])
        sd = signed_distance_ball(g, [0.0], 0.3, dims=(0,)).values
        ham = Hamiltonian(fn=lambda t, x, lam: np.abs(lam[0]), alpha=(1.0,))
        v = sd.copy()
        t_final = 0.6
        dt = cfl_timestep(g, ham)
        n = int(np.ceil(t_final / dt))
        for _ in range(n):
            v = lax_friedrichs_step(g, v, ham, 0.0, t_final / n)
        # sd - t away from the cone floor (min value cannot drop below -0.3)
        exact = np.maximum(sd - t_final, -0.3)
        band = (abs(g.coords[0]) < 1.5) & (abs(exact) < 0.15)
        assert np.max(np.abs(v[band] - exact[band])) < 3 * g.spacing[0]

    def test_cfl_violation_raises(self):
        g = make_grid([(0, 1)], [101])
        ham = advection_ham(1.0)
        with pytest.raises(CflViolationError):
            lax_friedrichs_step(g, np.zeros(101), ham, 0.0, 10 * cfl_timestep(g, ham))

    def test_monotonicity_under_cfl(self):
        # if V <= W pointwise, the step preserves the ordering
        g = make_grid([(-1, 1)], [101])
        ham = Hamiltonian(fn=lambda t, x, lam: -np.abs(lam[0]), alpha=(1.0,))
        dt = cfl_timestep(g, ham)
        rng = np.random.default_rng(42)
        for _ in range(10):
            v = rng.normal(size=101).cumsum() * g.spacing[0]
            w = v + rng.uniform(0, 0.5, size=101)
            v1 = lax_friedrichs_step(g, v, ham, 0.0, dt)
            w1 = lax_friedrichs_step(g, w, ham, 0.0, dt)
            assert np.all(v1 <= w1 + 1e-12)


class TestTvdRkStep:
    def test_order_one_equals_plain_step(self):
        g = make_grid([(-1, 1)], [65])
        rng = np.random.default_rng(3)
        v = rng.normal(size=65).cumsum() * g.spacing[0]
        ham = advection_ham(0.5)
        dt = cfl_timestep(g, ham)
        a = tvd_rk_step(g, v, ham, 0.0, dt, order=1)
        b = lax_friedrichs_step(g, v, ham, 0.0, dt)
        assert np.array_equal(a, b)

    def test_zero_hamiltonian_identity_all_orders(self):
        g = make_grid([(-1, 1)], [33])
        v = np.linspace(0, 1, 33)
        ham = Hamiltonian(fn=lambda t, x, lam: np.zeros_like(lam[0]), alpha=(0.0,))
        for order in (1, 2, 3):
            assert np.allclose(tvd_rk_step(g, v, ham, 0.0, 0.1, order=order), v)

    def test_temporal_convergence_orders(self):
        # H depends on t only, so the spatial part is exact and the time
        # integration error is isolated: V(T) = V0 - integral of cos
        g = make_grid([(0, 1)], [5])
        v0 = np.zeros(5)
        ham = Hamiltonian(fn=lambda t, x, lam: np.cos(t) + 0 * lam[0], alpha=(0.0,))
        t_final = 1.0
        exact = -np.sin(t_final)

        def err(order, n):
            v = v0.copy()
            h = t_final / n
            for k in range(n):
                v = tvd_rk_step(g, v, ham, k * h, h, order=order)
            return abs(v[0] - exact)

        for order, expected_rate in ((1, 0.9), (2, 1.9), (3, 1.9)):
            e1, e2 = err(order, 20), err(order, 40)
            rate = np.log2(e1 / e2)
            assert rate > expected_rate, f"order {order}: rate {rate}"

    def test_unsupported_order(self):
        g = make_grid([(0, 1)], [9])
        with pytest.raises(ValueError, match="order"):
            tvd_rk_step(g, np.zeros(9), advection_ham(1.0), 0.0, 1e-3, order=4)


class TestDissipationBounds:
    def test_alpha_dominates_sampled_hamiltonian_slopes(self):
        model = DubinsModel(0.5, 1.0, 1.0, 0.1, 0.2)
        grid = make_grid([(-1, 1), (-1, 1), (0, TWO_PI)], [9, 9, 9], [False, False, True])
        rng = np.random.default_rng(1)
        envelope = model.alpha()
        for factory, point_ham in ((brs_hamiltonian, ham_brs_minmax),
                                   (frs_hamiltonian, ham_frs_maxmax)):
            ham = factory(model, grid)
            # the scheme's node-sampled bounds stay inside the analytic envelope
            for k, a in enumerate(ham.alpha):
                assert np.all(np.asarray(a) <= envelope[k] + 1e-12)
            for _ in range(200):
                x = rng.uniform([-1, -1, 0], [1, 1, TWO_PI])
                lam = rng.uniform(-2, 2, size=3)
                # node-wise bounds at the sample's heading
                local = (
                    model.v_max * abs(np.cos(x[2])) + model.d_pos_max,
                    model.v_max * abs(np.sin(x[2])) + model.d_pos_max,
                    model.omega_max + model.d_theta_max,
                )
                for k in range(3):
                    step = np.zeros(3)
                    step[k] = 1e-6
                    # central secant: bounded by sup |dH/dlam_k| by the MVT
                    slope = (
                        point_ham(model, x, lam + step) - point_ham(model, x, lam - step)
                    ) / 2e-6
                    assert abs(slope) <= local[k] + 1e-6
                    assert abs(slope) <= envelope[k] + 1e-6

    def test_advective_hamiltonian_cfl_uses_total_speed(self):
        g = make_grid([(0, 1)], [11])
        ham = Hamiltonian(
            fn=lambda t, x, lam: 0.1 * np.abs(lam[0]),
            alpha=(0.1,),
            advection=lambda t, x: (np.ones(1),),
            advection_bound=(1.0,),
        )
        assert cfl_timestep(g, ham) == pytest.approx(0.5 / (1.1 / g.spacing[0]))

    def test_advection_requires_bound(self):
        with pytest.raises(ValueError):
            Hamiltonian(fn=lambda t, x, lam: lam[0], alpha=(1.0,),
                        advection=lambda t, x: (np.ones(1),))


class TestAdvectivePath:
    def test_pure_advection_matches_characteristics(self):
        c = -0.6
        g = make_grid([(-2, 2)], [401])
        v0 = lambda x: np.tanh(3 * x)
        ham = Hamiltonian(
            fn=lambda t, x, lam: np.zeros_like(lam[0]),
            alpha=(0.0,),
            advection=lambda t, x: (np.full(401, c),),
            advection_bound=(abs(c),),
        )
        v = v0(g.coords[0])
        t_final = 0.5
        dt = cfl_timestep(g, ham)
        n = int(np.ceil(t_final / dt))
        for _ in range(n):
            v = tvd_rk_step(g, v, ham, 0.0, t_final / n, order=2)
        exact = v0(g.coords[0] - c * t_final)
        interior = abs(g.coords[0]) < 1.5
        assert np.max(np.abs(v[interior] - exact[interior])) < 0.06
