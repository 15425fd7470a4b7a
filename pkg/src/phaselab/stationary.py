"""Stationary states: mu(phi_inf) = mu_inf constant, at prescribed mean.

All three model presets share the same stationary form, so the residual is
simply the chemical potential minus an unknown constant multiplier.  The
solver treats (phi, mu_inf) as a bordered Newton system

    [ d(mu)/d(phi)   -1 ] [ d_phi    ]   [ mu(phi) - mu_inf ]
    [ mean-row        0 ] [ d_mu_inf ] = [ mean(phi) - k    ]

with the same pointwise clamping as the dynamic stepper.  Stationary states
are generally non-unique; which one is found depends on the initial guess,
so seeds are first-class inputs and get recorded with the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as g
from . import physics as ph
from .errors import NewtonDivergenceError, SeparationFailureError, ValidationError


@dataclass
class EquilibriumState:
    phi_inf: g.Field
    mu_inf: float
    residual_l2: float
    delta: float            # separation margin 1 - max|phi_inf|
    k: float                # prescribed mean
    seed_id: str = ""
    iterations: int = 0
    model: ph.ModelConfig | None = None

    def sidecar(self) -> dict:
        return {
            "mu_inf": self.mu_inf,
            "residual": self.residual_l2,
            "delta": self.delta,
            "k": self.k,
            "seed_id": self.seed_id,
        }


@dataclass
class SeparationReport:
    delta: float
    grad_norm: float | None = None
    grad_bound: float | None = None
    bound_ok: bool | None = None


def stationary_residual(M: ph.ModelConfig, phi: g.Field, mu_c: float) -> g.Field:
    """mu(phi) - mu_c; identically zero exactly at a stationary state."""
    mu = ph.chemical_potential(M, phi)
    return g.Field(phi.grid, mu.data - mu_c)


def _mu_jacobian(M: ph.ModelConfig, phi: g.Field) -> np.ndarray:
    """Dense linearization of the chemical potential.

    The nonlinear-diffusion coefficient is frozen at the current iterate
    (re-linearized every step); the a' gradient-square derivative is dropped,
    trading quadratic convergence for robustness.
    """
    grid = phi.grid
    n = grid.n_cells
    P = M.potential
    d2 = np.asarray(P.d2F(phi.data))
    if float(d2.min()) < P.theta * (1.0 - 1e-9):
        raise ValidationError("F'' dipped below theta during Jacobian assembly")
    J = np.diag(d2)
    if M.sigma1:
        J -= P.theta0 * np.eye(n)
    if M.gamma > 0:
        a_face = ph._coefficient_faces(M, phi, M.diffusion)
        L_a = g.weighted_laplacian_matrix(grid, a_face)
        J -= M.gamma * L_a.toarray()
    if M.sigma2:
        K = M.kernel.matrix(grid)
        J -= K.dense
        if M.nonlocal_consistency:
            J += np.diag(K.row_sums)
    return J


def solve_equilibrium(M: ph.ModelConfig, k: float, guess: g.Field,
                      tol: float = 1e-12, max_iter: int = 80,
                      seed_id: str = "") -> EquilibriumState:
    """Damped bordered Newton for (phi_inf, mu_inf) with mean(phi_inf) = k.

    Gradient-free models (gamma = 0) are solved in the entropy variable
    psi = F'(phi): the map phi = (F')^{-1}(psi) keeps iterates strictly
    inside (-1, 1), so the barrier never throttles the Newton step.
    """
    if abs(k) >= 1.0:
        raise ValueError("prescribed mean must lie in (-1, 1)")
    if M.gamma == 0:
        return _solve_equilibrium_entropy(M, k, guess, tol, max_iter, seed_id)
    grid = guess.grid
    n = grid.n_cells
    eps = M.potential.eps_guard
    limit = 1.0 - eps
    sqrt_vol = np.sqrt(grid.cell_volume)

    x = np.clip(guess.data.copy(), -limit + eps, limit - eps)
    mu_c = float(ph.chemical_potential(M, g.Field(grid, x)).data.mean())

    def total_residual(xv, mv):
        r1 = ph.chemical_potential(M, g.Field(grid, xv)).data - mv
        r2 = float(xv.mean()) - k
        return r1, r2, float(np.sqrt(np.dot(r1, r1) * grid.cell_volume + r2 * r2))

    r1, r2, rnorm = total_residual(x, mu_c)
    iters = 0
    for iters in range(1, max_iter + 1):
        if rnorm <= tol and abs(r2) <= 1e-12:
            break
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = _mu_jacobian(M, g.Field(grid, x))
        J[:n, n] = -1.0
        J[n, :n] = 1.0 / n
        rhs = np.concatenate([-r1, [-r2]])
        try:
            delta = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergenceError("singular stationary Jacobian",
                                        iterations=iters, residual=rnorm) from exc
        lam = 1.0
        accepted = False
        for _ in range(40):
            xn = x + lam * delta[:n]
            mn = mu_c + lam * delta[n]
            if np.max(np.abs(xn)) >= limit:
                lam *= 0.5
                continue
            r1n, r2n, rn = total_residual(xn, mn)
            if rn <= tol or rn < rnorm * (1.0 - 1e-4 * lam):
                x, mu_c, r1, r2, rnorm = xn, mn, r1n, r2n, rn
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonDivergenceError("stationary damping exhausted",
                                        iterations=iters, residual=rnorm)
    else:
        raise NewtonDivergenceError(
            f"stationary solve did not converge in {max_iter} iterations",
            iterations=max_iter, residual=rnorm,
        )

    phi_inf = g.Field(grid, x)
    delta = 1.0 - float(np.max(np.abs(x)))
    if delta <= 0:
        raise SeparationFailureError(
            "converged state touches the pure phases; this should be impossible"
        )
    res_l2 = float(np.linalg.norm(r1)) * sqrt_vol
    return EquilibriumState(phi_inf, mu_c, res_l2, delta, k,
                            seed_id=seed_id, iterations=iters, model=M)


def _solve_equilibrium_entropy(M: ph.ModelConfig, k: float, guess: g.Field,
                               tol: float, max_iter: int, seed_id: str) -> EquilibriumState:
    """Bordered Newton in psi = F'(phi) for gamma = 0 models.

    The stationary system reads psi - sigma1 theta0 T(psi) - sigma2 J*T(psi)
    [+ sigma2 w T(psi)] = mu_inf with T = (F')^{-1}; T' = 1/F''(T) <= 1/theta
    keeps the dense Jacobian well conditioned and iterates unconstrained.
    """
    grid = guess.grid
    n = grid.n_cells
    P = M.potential
    eps = P.eps_guard
    sqrt_vol = np.sqrt(grid.cell_volume)
    K = M.kernel.matrix(grid) if M.sigma2 else None
    w = K.row_sums if (K is not None and M.nonlocal_consistency) else None

    def local_part(phi):
        out = np.zeros_like(phi)
        if M.sigma1:
            out -= P.theta0 * phi
        if K is not None:
            out -= K.apply_values(phi)
            if w is not None:
                out += w * phi
        return out

    psi = np.asarray(P.dF(np.clip(guess.data, -1 + eps, 1 - eps)))
    phi = np.asarray(P.inverse_dF(psi))
    mu_c = float(np.mean(psi + local_part(phi)))

    def residuals(psi_v, phi_v, mu_v):
        r1 = psi_v + local_part(phi_v) - mu_v
        r2 = float(phi_v.mean()) - k
        return r1, r2, float(np.sqrt(np.dot(r1, r1) * grid.cell_volume + r2 * r2))

    r1, r2, rnorm = residuals(psi, phi, mu_c)
    iters = 0
    for iters in range(1, max_iter + 1):
        if rnorm <= tol and abs(r2) <= 1e-12:
            break
        Tp = 1.0 / np.asarray(P.d2F(phi))
        J = np.zeros((n + 1, n + 1))
        body = np.eye(n)
        if M.sigma1:
            body -= P.theta0 * np.diag(Tp)
        if K is not None:
            body -= K.dense * Tp[None, :]
            if w is not None:
                body += np.diag(w * Tp)
        J[:n, :n] = body
        J[:n, n] = -1.0
        J[n, :n] = Tp / n
        rhs = np.concatenate([-r1, [-r2]])
        try:
            delta_step = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergenceError("singular stationary Jacobian",
                                        iterations=iters, residual=rnorm) from exc
        lam = 1.0
        accepted = False
        for _ in range(60):
            psi_n = psi + lam * delta_step[:n]
            mu_n = mu_c + lam * delta_step[n]
            phi_n = np.asarray(P.inverse_dF(psi_n))
            r1n, r2n, rn = residuals(psi_n, phi_n, mu_n)
            if rn <= tol or rn < rnorm * (1.0 - 1e-4 * lam):
                psi, phi, mu_c = psi_n, phi_n, mu_n
                r1, r2, rnorm = r1n, r2n, rn
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonDivergenceError("stationary damping exhausted",
                                        iterations=iters, residual=rnorm)
    else:
        raise NewtonDivergenceError(
            f"stationary solve did not converge in {max_iter} iterations",
            iterations=max_iter, residual=rnorm,
        )

    phi_inf = g.Field(grid, np.clip(phi, -1 + eps, 1 - eps))
    delta = 1.0 - float(np.max(np.abs(phi_inf.data)))
    if delta <= 0:
        raise SeparationFailureError(
            "converged state touches the pure phases; this should be impossible"
        )
    res_l2 = float(np.linalg.norm(r1)) * sqrt_vol
    return EquilibriumState(phi_inf, mu_c, res_l2, delta, k,
                            seed_id=seed_id, iterations=iters, model=M)


def separation_bound(e: EquilibriumState, full: bool = False):
    """Separation margin of a converged state.

    For the nonlocal model additionally checks the kernel gradient bound
    |grad phi_inf|_{L2} <= |grad J|_{L1} / theta and reports both sides when
    ``full`` is requested.
    """
    delta = 1.0 - float(np.max(np.abs(e.phi_inf.data)))
    report = SeparationReport(delta=delta)
    M = e.model
    if M is not None and M.sigma2:
        grad_norm = g.norm_h1_semi(e.phi_inf)
        bound = M.kernel.grad_l1(e.phi_inf.grid) / M.potential.theta
        report.grad_norm = grad_norm
        report.grad_bound = bound
        report.bound_ok = bool(grad_norm <= bound)
    return report if full else delta


def bulk_root(potential, tol: float = 1e-13) -> float:
    """Positive root of f'(s) = F'(s) - theta0 s (the coexistence bulk value).

    Layer profiles plateau near +-this value; seeding there keeps Newton off
    the long valley between the mixed state and the singular barrier.
    """
    from scipy.optimize import brentq

    def fprime(s):
        return float(potential.dF(s)) - potential.theta0 * s

    hi = 1.0 - max(potential.eps_guard, 1e-13)
    if fprime(hi) <= 0:
        return 0.9
    return float(brentq(fprime, 1e-9, hi, xtol=tol))


def equilibrium_seeds(grid: g.Grid, k: float, kinds=("constant", "tanh"),
                      amplitude: float | None = None, width: float | None = None,
                      potential=None) -> list:
    """Library of initial guesses: constants and interface-layer profiles.

    Every returned pair is (seed_id, admissible Field with mean exactly k).
    With a potential supplied, layer plateaus sit just inside the coexistence
    bulk values; the default layer width is a few cells so thin-interface
    equilibria are reachable.
    """
    seeds = []
    if "constant" in kinds:
        seeds.append(("constant", g.Field.constant(grid, k)))
    if "tanh" in kinds:
        if amplitude is None:
            amplitude = 0.999 * bulk_root(potential) if potential is not None else 0.9
        amplitude = min(amplitude, 0.999)
        xs = grid.cell_centers()[0].ravel()
        L = grid.lengths[0]
        w = width if width is not None else 3.0 * grid.spacing[0]
        for sign, name in ((+1.0, "tanh_mid"), (-1.0, "tanh_flip")):
            if abs(k) >= 0.9 * amplitude:
                continue
            # place the interface so the discrete mean hits k exactly
            x0 = 0.5 * L * (1.0 - sign * k / amplitude)
            for _ in range(60):
                prof = sign * amplitude * np.tanh((xs - x0) / w)
                err = prof.mean() - k
                if abs(err) < 1e-15:
                    break
                x0 += sign * err * L / (2.0 * amplitude)
                x0 = float(np.clip(x0, w, L - w))
            prof = sign * amplitude * np.tanh((xs - x0) / w)
            prof += k - prof.mean()  # residual shift far below the margin
            if np.max(np.abs(prof)) < 1.0:
                seeds.append((name, g.Field(grid, prof)))
    return seeds
