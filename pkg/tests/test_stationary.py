"""Stationary solves: constant branches, interface layers, separation checks."""

import numpy as np
import pytest

from phaselab import (
    DiffusionSpec,
    Field,
    Grid,
    KernelSpec,
    MobilitySpec,
    PotentialSpec,
    State,
    StepperConfig,
    cahn_hilliard,
    chemical_potential,
    conserved_allen_cahn,
    energy,
    nonlocal_cahn_hilliard,
    norm_l2,
    solve_equilibrium,
    separation_bound,
    stationary_residual,
    step,
)
from phaselab.stationary import equilibrium_seeds


def log_potential(theta=0.3, theta0=1.0):
    return PotentialSpec.logarithmic(theta, theta0)


def deep_quench_ch(gamma=1e-3, diffusion=None):
    P = log_potential()
    mob = MobilitySpec.polynomial([1.0, 0.0, -0.5], m_star=0.5)
    dif = diffusion or DiffusionSpec.polynomial([1.0, 0.0, 0.5], a_star=1.0)
    return cahn_hilliard(P, mob, dif, alpha=1.0, gamma=gamma)


def tanh_seed(grid, width=0.01, amplitude=0.99):
    x = grid.axes()[0]
    prof = amplitude * np.tanh((x - 0.5) / width)
    prof -= prof.mean()
    return Field(grid, prof)


class TestResidual:
    def test_ac_constant_branch(self):
        P = log_potential()
        M = conserved_allen_cahn(P, beta=1.0, gamma=1e-3)
        grid = Grid((32,), (1.0,))
        k = 0.2
        mu_c = float(P.dF(k)) - P.theta0 * k
        res = stationary_residual(M, Field.constant(grid, k), mu_c)
        assert np.max(np.abs(res.data)) == 0.0

    def test_ch_unit_diffusion_constant_branch(self):
        P = log_potential()
        M = cahn_hilliard(P, MobilitySpec.constant(1.0), DiffusionSpec.constant(1.0),
                          alpha=1.0, gamma=1e-3)
        grid = Grid((32,), (1.0,))
        k = 0.2
        mu_c = float(P.dF(k)) - P.theta0 * k  # f'(k)
        res = stationary_residual(M, Field.constant(grid, k), mu_c)
        assert np.max(np.abs(res.data)) <= 1e-15

    def test_nonlocal_degenerate_kernel(self):
        P = log_potential()
        ker = KernelSpec("custom", scale=1.0, profile=lambda r: np.zeros_like(r))
        M = nonlocal_cahn_hilliard(P, MobilitySpec.constant(1.0), ker,
                                   nonlocal_consistency=False)
        grid = Grid((16,), (1.0,))
        k = 0.3
        res = stationary_residual(M, Field.constant(grid, k), float(P.dF(k)))
        assert np.max(np.abs(res.data)) == 0.0


class TestSolve:
    def test_ac_constant_converges_immediately(self):
        P = log_potential()
        M = conserved_allen_cahn(P, beta=1.0, gamma=1e-3)
        grid = Grid((32,), (1.0,))
        eq = solve_equilibrium(M, 0.2, Field.constant(grid, 0.2), tol=1e-12)
        assert np.allclose(eq.phi_inf.data, 0.2, atol=1e-13)
        assert eq.mu_inf == pytest.approx(float(P.dF(0.2)) - 0.2, abs=1e-12)
        assert eq.residual_l2 <= 1e-12
        assert eq.delta == pytest.approx(0.8, abs=1e-12)

    def test_deep_quench_layer(self):
        M = deep_quench_ch()
        grid = Grid((128,), (1.0,))
        eq = solve_equilibrium(M, 0.0, tanh_seed(grid), tol=1e-12)
        # interior transition layer, not a constant
        assert np.ptp(eq.phi_inf.data) > 1.5
        assert eq.delta > 0.0
        assert energy(M, eq.phi_inf) < energy(M, Field.constant(grid, 0.0))
        # fixed point of the dynamic stepper
        out = step(M, State(eq.phi_inf), 1e-2, StepperConfig())
        assert norm_l2(Field(grid, out.phi.data - eq.phi_inf.data)) <= 1e-9

    def test_continuation_warm_starts(self):
        # constant diffusion keeps the stationary Jacobian exact
        M = deep_quench_ch(diffusion=DiffusionSpec.constant(1.0))
        grid = Grid((128,), (1.0,))
        prev = solve_equilibrium(M, 0.0, tanh_seed(grid), tol=1e-10)
        for k in (0.05, 0.1):
            eq = solve_equilibrium(M, k, prev.phi_inf, tol=1e-10)
            assert eq.iterations <= 10
            assert eq.phi_inf.mean() == pytest.approx(k, abs=1e-12)
            prev = eq

    def test_mean_constraint_exact(self):
        M = deep_quench_ch()
        grid = Grid((64,), (1.0,))
        eq = solve_equilibrium(M, 0.1, tanh_seed(grid, width=0.02, amplitude=0.9),
                               tol=1e-12)
        assert abs(eq.phi_inf.mean() - 0.1) <= 1e-12

    def test_mu_inf_is_mean_of_chemical_potential(self):
        M = deep_quench_ch()
        grid = Grid((64,), (1.0,))
        eq = solve_equilibrium(M, 0.0, tanh_seed(grid, width=0.02), tol=1e-12)
        mu = chemical_potential(M, eq.phi_inf)
        assert abs(eq.mu_inf - mu.data.mean()) <= 1e-10

    @pytest.mark.parametrize("dt", [1e-4, 1e-2])
    def test_fixed_point_property(self, dt):
        M = deep_quench_ch()
        grid = Grid((64,), (1.0,))
        eq = solve_equilibrium(M, 0.0, tanh_seed(grid, width=0.02), tol=1e-12)
        out = step(M, State(eq.phi_inf), dt, StepperConfig())
        assert norm_l2(Field(grid, out.phi.data - eq.phi_inf.data)) <= 1e-8


class TestSeparation:
    def test_constant_margin(self):
        P = log_potential()
        M = conserved_allen_cahn(P, beta=1.0, gamma=1e-3)
        grid = Grid((16,), (1.0,))
        eq = solve_equilibrium(M, 0.2, Field.constant(grid, 0.2), tol=1e-12)
        assert separation_bound(eq) == pytest.approx(0.8, abs=1e-12)

    def test_layer_delta_stable_under_refinement(self):
        # thin interface: the bulk plateau solves the pointwise equation, so
        # the margin is grid-independent to far below the tolerance
        M = deep_quench_ch()
        g128 = Grid((128,), (1.0,))
        eq1 = solve_equilibrium(M, 0.0, tanh_seed(g128), tol=1e-12)
        assert eq1.delta > 0.0
        g256 = Grid((256,), (1.0,))
        x256 = g256.axes()[0]
        vals = np.interp(x256, g128.axes()[0], eq1.phi_inf.data)
        vals -= vals.mean()
        eq2 = solve_equilibrium(M, 0.0, Field(g256, vals), tol=1e-12)
        assert abs(eq1.delta - eq2.delta) <= 1e-6

    def test_nonlocal_gradient_bound(self):
        # literal convolution stationary form admits layered states; the
        # kernel-gradient inequality must hold with measurable slack
        P = log_potential()
        mob = MobilitySpec.polynomial([1.0, 0.0, -0.5], m_star=0.5)
        ker = KernelSpec("gaussian", scale=0.08)
        M = nonlocal_cahn_hilliard(P, mob, ker, nonlocal_consistency=False)
        grid = Grid((128,), (1.0,))
        eq = solve_equilibrium(M, 0.0, tanh_seed(grid, width=0.08, amplitude=0.8),
                               tol=1e-11)
        assert np.ptp(eq.phi_inf.data) > 1.5
        rep = separation_bound(eq, full=True)
        assert rep.delta > 0.0
        assert rep.grad_norm <= rep.grad_bound
        assert rep.bound_ok

    def test_nonlocal_consistent_constant_is_equilibrium(self):
        P = log_potential()
        ker = KernelSpec("gaussian", scale=0.08)
        M = nonlocal_cahn_hilliard(P, MobilitySpec.constant(1.0), ker)
        grid = Grid((64,), (1.0,))
        eq = solve_equilibrium(M, 0.1, Field.constant(grid, 0.1), tol=1e-12)
        assert np.allclose(eq.phi_inf.data, 0.1, atol=1e-12)


class TestSeeds:
    def test_seed_library_admissible(self):
        grid = Grid((64,), (1.0,))
        for seed_id, f in equilibrium_seeds(grid, k=0.1):
            assert f.mean() == pytest.approx(0.1, abs=1e-12), seed_id
            assert np.max(np.abs(f.data)) < 1.0, seed_id
