"""Energy-stable, mass-conserving time integration of the evolution models.

One semi-implicit step solves

    (phi+ - phi) / dt = alpha div(m(phi) grad mu+) - beta (mu+ - mean(mu+))

with the chemical potential split convexly: the gradient diffusion (with the
coefficient a frozen at the old state) and the singular entropy derivative
F'(phi+) are implicit, while the concave and nonlocal pieces (-theta0 phi,
-J*phi, the a' gradient-square term) stay explicit.  F'' >= theta makes the
implicit map monotone, so damped Newton with pointwise clamping inside
(-1, 1) is robust; the barrier of F' itself keeps iterates off the pure
phases.

Mass is conserved exactly: the committed update is phi + dt * RHS(phi+),
whose discrete mean vanishes to roundoff (the flux form telescopes; the
relaxation form subtracts the discrete mean of the whole right-hand side).

The adaptive driver rejects any step that violates the one-step energy
inequality E(phi+) + dt * D(phi+) <= E(phi) + tol_E and retries with half the
step; trajectories that violate dissipation are worthless for the analysis
layer, so violation is treated as failure, not warning.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as g
from . import physics as ph
from .errors import (
    BoundsViolationError,
    NewtonDivergenceError,
    StepFloorError,
    ValidationError,
)


@dataclass
class State:
    """Evolving field plus bookkeeping from the step that produced it."""

    phi: g.Field
    t: float = 0.0
    newton_iters: int = 0
    dt_used: float = 0.0
    energy: float = float("nan")


@dataclass
class StepperConfig:
    dt_init: float = 1e-5
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    max_backtracks: int = 40
    tol_e: float = 1e-10
    snapshot_every: int = 50
    steady_tol: float = 1e-9
    steady_dwell: int = 100
    grow_factor: float = 1.2
    grow_every: int = 5

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.newton_tol <= 0 or self.tol_e <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class Trajectory:
    """Per-step diagnostics plus sparse field snapshots of one run."""

    grid: g.Grid
    times: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    grad_mu_l2: np.ndarray
    mu_fluct_l2: np.ndarray
    phi_min: np.ndarray
    phi_max: np.ndarray
    sep_margin: np.ndarray
    dt: np.ndarray
    newton_iters: np.ndarray
    snapshots: list
    provenance: dict
    model: ph.ModelConfig | None = None
    complete: bool = True

    CSV_COLUMNS = (
        "t,mass,energy,dissipation,grad_mu_l2,mu_fluct_l2,"
        "phi_min,phi_max,sep_margin,dt,newton_iters"
    )

    @property
    def dissipation_norm_kind(self) -> str:
        return self.provenance.get("dissipation_norm", "grad_mu")

    def dissipation_norm_series(self) -> np.ndarray:
        if self.dissipation_norm_kind == "mu_fluct":
            return self.mu_fluct_l2
        return self.grad_mu_l2

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.CSV_COLUMNS + "\n")
            for k in range(len(self.times)):
                row = [
                    self.times[k], self.mass[k], self.energy[k], self.dissipation[k],
                    self.grad_mu_l2[k], self.mu_fluct_l2[k], self.phi_min[k],
                    self.phi_max[k], self.sep_margin[k], self.dt[k],
                ]
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write(f",{int(self.newton_iters[k])}\n")

    def verify(self, tol_mass: float = 1e-10, tol_mass_step: float = 1e-14,
               tol_e: float = 1e-10) -> dict:
        """Re-check the structural invariants from the recorded series."""
        out = {}
        out["finite"] = all(
            bool(np.all(np.isfinite(a)))
            for a in (self.mass, self.energy, self.dissipation,
                      self.phi_min, self.phi_max)
        )
        out["times_increasing"] = bool(np.all(np.diff(self.times) > 0))
        drift = np.abs(self.mass - self.mass[0])
        out["mass_conserved"] = bool(np.all(drift <= tol_mass))
        step_drift = np.abs(np.diff(self.mass))
        out["mass_per_step"] = bool(np.all(step_drift <= tol_mass_step))
        de = self.energy[1:] + self.dt[1:] * self.dissipation[1:] - self.energy[:-1]
        out["energy_inequality"] = bool(np.all(de <= tol_e))
        out["strict_bounds"] = bool(
            np.all(self.phi_min > -1.0) and np.all(self.phi_max < 1.0)
        )
        out["ok"] = all(out.values())
        return out


# ---------------------------------------------------------------------------
# operator assembly

# The Jacobian I - dt[alpha L_m - beta I] dG with dG = -gamma L_a + diag(c)
# always lives on one fixed sparsity pattern per (model, grid): patterns are
# value-independent because the face weights are strictly positive.  The plan
# below precomputes all scatter positions once, so a step only writes numbers
# into preallocated arrays.


def _face_pair_indices(grid: g.Grid):
    """Per axis: cell index pairs (p, q) across each physical face."""
    idx = np.arange(grid.n_cells).reshape(grid.shape)
    pairs = []
    for a, n in enumerate(grid.shape):
        sl_lo = [slice(None)] * grid.dim
        sl_lo[a] = slice(0, n - 1)
        sl_hi = [slice(None)] * grid.dim
        sl_hi[a] = slice(1, n)
        p = idx[tuple(sl_lo)].ravel()
        q = idx[tuple(sl_hi)].ravel()
        if grid.bc == g.PERIODIC:
            sl_last = [slice(None)] * grid.dim
            sl_last[a] = n - 1
            sl_first = [slice(None)] * grid.dim
            sl_first[a] = 0
            p = np.concatenate([p, idx[tuple(sl_last)].ravel()])
            q = np.concatenate([q, idx[tuple(sl_first)].ravel()])
        pairs.append((p, q))
    return pairs


def _face_weight_values(grid: g.Grid, faces: g.FaceField):
    """Face weights per axis in the order of _face_pair_indices."""
    out = []
    for a, n in enumerate(grid.shape):
        comp = faces.components[a]
        w_int = [slice(None)] * grid.dim
        w_int[a] = slice(1, n)
        vals = comp[tuple(w_int)].ravel()
        if grid.bc == g.PERIODIC:
            w_wrap = [slice(None)] * grid.dim
            w_wrap[a] = 0
            vals = np.concatenate([vals, comp[tuple(w_wrap)].ravel()])
        out.append(vals)
    return out


class _LaplacianTemplate:
    """Reusable CSR matrix for div(w grad .) with in-place value refresh."""

    def __init__(self, grid: g.Grid):
        self.grid = grid
        self.matrix = g.weighted_laplacian_matrix(grid, g.unit_face_weights(grid))
        self.matrix.sort_indices()
        n = grid.n_cells
        keys = np.repeat(np.arange(n, dtype=np.int64),
                         np.diff(self.matrix.indptr)) * n + self.matrix.indices
        self.pairs = _face_pair_indices(grid)
        self.slots = []
        for a, (p, q) in enumerate(self.pairs):
            pp = np.searchsorted(keys, p.astype(np.int64) * n + p)
            pq = np.searchsorted(keys, p.astype(np.int64) * n + q)
            qq = np.searchsorted(keys, q.astype(np.int64) * n + q)
            qp = np.searchsorted(keys, q.astype(np.int64) * n + p)
            self.slots.append((pp, pq, qq, qp))

    def refresh(self, faces: g.FaceField):
        data = self.matrix.data
        data[:] = 0.0
        weights = _face_weight_values(self.grid, faces)
        for a, h in enumerate(self.grid.spacing):
            c = weights[a] / (h * h)
            pp, pq, qq, qp = self.slots[a]
            np.add.at(data, pp, -c)
            np.add.at(data, pq, c)
            np.add.at(data, qq, -c)
            np.add.at(data, qp, c)
        return self.matrix


def _csc_union(n: int, key_arrays):
    keys = np.unique(np.concatenate(key_arrays))
    indptr = np.searchsorted(keys, np.arange(n + 1, dtype=np.int64) * n).astype(np.int32)
    indices = (keys % n).astype(np.int32)
    return keys, indices, indptr


def _csr_keys_csc(X, n: int) -> np.ndarray:
    """col*n + row keys of a canonical CSR matrix."""
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(X.indptr))
    return X.indices.astype(np.int64) * n + rows


class _AssemblyPlan:
    """All value-independent structure for one (model, grid) pair."""

    def __init__(self, M: ph.ModelConfig, grid: g.Grid):
        n = grid.n_cells
        self.grid = grid
        self.n = n
        self.has_La = M.gamma > 0
        self.has_Lm = M.alpha > 0
        self.const_a = M.diffusion.is_constant
        self.const_m = M.mobility.is_constant

        self.La_tmpl = _LaplacianTemplate(grid) if self.has_La else None
        self.Lm_tmpl = _LaplacianTemplate(grid) if self.has_Lm else None
        key_arrays = [np.arange(n, dtype=np.int64) * (n + 1)]  # identity diagonal
        prod = None
        if self.has_La:
            self.La_tmpl.refresh(g.unit_face_weights(grid))
            key_arrays.append(_csr_keys_csc(self.La_tmpl.matrix, n))
        if self.has_Lm:
            self.Lm_tmpl.refresh(g.unit_face_weights(grid))
            key_arrays.append(_csr_keys_csc(self.Lm_tmpl.matrix, n))
        if self.has_La and self.has_Lm:
            prod = (self.Lm_tmpl.matrix @ self.La_tmpl.matrix).tocsr()
            prod.sort_indices()
            key_arrays.append(_csr_keys_csc(prod, n))
        keys, indices, indptr = _csc_union(n, key_arrays)
        self.nnz = keys.size
        self.A = sp.csc_matrix((np.zeros(keys.size), indices, indptr), shape=(n, n))
        self.col_counts = np.diff(indptr)
        self.I_data = np.zeros(keys.size)
        self.I_data[np.searchsorted(keys, np.arange(n, dtype=np.int64) * (n + 1))] = 1.0
        self.pos_La = (np.searchsorted(keys, _csr_keys_csc(self.La_tmpl.matrix, n))
                       if self.has_La else None)
        self.pos_Lm = (np.searchsorted(keys, _csr_keys_csc(self.Lm_tmpl.matrix, n))
                       if self.has_Lm else None)
        self.pos_prod = np.searchsorted(keys, _csr_keys_csc(prod, n)) if prod is not None else None
        self.prod_nnz = prod.nnz if prod is not None else 0


def _model_cache(M: ph.ModelConfig) -> dict:
    cache = getattr(M, "_grid_operator_cache", None)
    if cache is None:
        cache = {}
        M._grid_operator_cache = cache
    return cache


def _check_convexity_floor(d2f: np.ndarray, theta: float):
    """The entropy convexity floor F'' >= theta is a contract, not advice."""
    if float(d2f.min()) < theta * (1.0 - 1e-9):
        raise ValidationError(
            "F'' dipped below theta during Jacobian assembly; the supplied "
            "potential violates its convexity contract"
        )


class _StepWorkspace:
    """Operators frozen at the old state for one implicit solve.

    Constant-coefficient operator values are assembled once per (model,
    grid); with varying coefficients only plain array scatters and one sparse
    product run per step.
    """

    def __init__(self, M: ph.ModelConfig, phi_field: g.Field):
        grid = phi_field.grid
        n = grid.n_cells
        self.M = M
        self.grid = grid
        self.P = M.potential
        self.n = n
        phi = phi_field.data

        cache = _model_cache(M)
        plan = cache.get(grid)
        if plan is None:
            plan = _AssemblyPlan(M, grid)
            cache[grid] = plan
        self.plan = plan

        varying = (plan.has_La and not plan.const_a) or (plan.has_Lm and not plan.const_m)
        if varying or not getattr(plan, "values_ready", False):
            if plan.has_La:
                a_face = ph._coefficient_faces(M, phi_field, M.diffusion)
                plan.La_tmpl.refresh(a_face)
            if plan.has_Lm:
                m_face = ph._coefficient_faces(M, phi_field, M.mobility)
                plan.Lm_tmpl.refresh(m_face)
            lin = np.zeros(plan.nnz)
            B = np.zeros(plan.nnz)
            colsum_La = None
            if plan.has_La and plan.has_Lm:
                prod = plan.Lm_tmpl.matrix @ plan.La_tmpl.matrix
                prod.sort_indices()
                if prod.nnz != plan.prod_nnz:  # pattern is structurally fixed
                    raise RuntimeError("operator product pattern changed")
                lin[plan.pos_prod] += (M.alpha * M.gamma) * prod.data
            if plan.has_La:
                La = plan.La_tmpl.matrix
                if M.beta > 0:
                    lin[plan.pos_La] += -(M.beta * M.gamma) * La.data
                colsum_La = np.bincount(La.indices, weights=La.data, minlength=n)
            if plan.has_Lm:
                B[plan.pos_Lm] += -M.alpha * plan.Lm_tmpl.matrix.data
            if M.beta > 0:
                B += M.beta * plan.I_data
            plan.lin_data = lin
            plan.B_data = B
            plan.colsum_La = colsum_La
            plan.values_ready = True
        self.L_a = plan.La_tmpl.matrix if plan.has_La else None
        self.L_m = plan.Lm_tmpl.matrix if plan.has_Lm else None

        explicit = np.zeros(n)
        if M.gamma > 0:
            da = np.asarray(M.diffusion.dfn(phi))
            if np.any(da):
                explicit += M.gamma * 0.5 * da * ph.grad_sq_cell(phi_field)
        if M.sigma1:
            explicit -= self.P.theta0 * phi
        self.w = None
        if M.sigma2:
            K = M.kernel.matrix(grid)
            explicit -= K.apply_values(phi)
            if M.nonlocal_consistency:
                self.w = K.row_sums
        self.explicit = explicit

    def mu_of(self, x: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.P.dF(x)) + self.explicit
        if self.L_a is not None:
            mu -= self.M.gamma * (self.L_a @ x)
        if self.w is not None:
            mu += self.w * x
        return mu

    def rhs_of(self, mu: np.ndarray) -> np.ndarray:
        M = self.M
        if M.alpha > 0:
            r = M.alpha * (self.L_m @ mu)
            if M.beta > 0:
                r -= M.beta * (mu - mu.mean())
            return r
        return -M.beta * (mu - mu.mean())

    def jacobian_solver(self, x: np.ndarray, dt: float):
        """LU of the sparse part plus rank-one correction of the mean term."""
        M = self.M
        plan = self.plan
        c = np.asarray(self.P.d2F(x))
        _check_convexity_floor(c, self.P.theta)
        if self.w is not None:
            c = c + self.w
        A = plan.A
        A.data[:] = plan.I_data + dt * plan.lin_data \
            + dt * plan.B_data * np.repeat(c, plan.col_counts)
        lu = spla.splu(A)
        if M.beta <= 0:
            return lu.solve
        # subtract the rank-one mean projection via Sherman-Morrison
        v = c if plan.colsum_La is None else c - M.gamma * plan.colsum_La
        u = np.full(self.n, dt * M.beta / self.n)
        Ainv_u = lu.solve(u)
        denom = 1.0 - float(v @ Ainv_u)

        def solve(b):
            y = lu.solve(b)
            return y + Ainv_u * (float(v @ y) / denom)

        return solve


def step(M: ph.ModelConfig, s: State, dt: float, cfg: StepperConfig,
         _workspace: _StepWorkspace | None = None) -> State:
    """One semi-implicit step; raises NewtonDivergenceError / BoundsViolationError."""
    grid = s.phi.grid
    phi = s.phi.data
    limit = 1.0 - M.potential.eps_guard
    sqrt_vol = np.sqrt(grid.cell_volume)
    ws = _workspace if _workspace is not None else _StepWorkspace(M, s.phi)

    x = np.clip(phi, -limit, limit)
    rhs = None
    converged = False
    iters = 0
    for iters in range(cfg.newton_max_iter + 1):
        mu = ws.mu_of(x)
        rhs = ws.rhs_of(mu)
        resid = x - phi - dt * rhs
        rnorm = float(np.linalg.norm(resid)) * sqrt_vol
        if rnorm <= cfg.newton_tol:
            if converged or rnorm <= 0.01 * cfg.newton_tol or iters >= cfg.newton_max_iter:
                break
            converged = True  # one extra polish pass makes the commit harmless
        elif iters >= cfg.newton_max_iter:
            raise NewtonDivergenceError(
                f"no convergence in {cfg.newton_max_iter} iterations",
                iterations=iters, residual=rnorm,
            )
        solve = ws.jacobian_solver(x, dt)
        delta = solve(-resid)
        lam = 1.0
        accepted = False
        best = (rnorm, x, rhs)
        for _ in range(cfg.max_backtracks):
            xn = x + lam * delta
            if np.max(np.abs(xn)) >= limit:
                lam *= 0.5
                continue
            mu_n = ws.mu_of(xn)
            rhs_n = ws.rhs_of(mu_n)
            resid_n = xn - phi - dt * rhs_n
            rn = float(np.linalg.norm(resid_n)) * sqrt_vol
            if rn < best[0]:
                best = (rn, xn, rhs_n)
            if rn <= cfg.newton_tol or rn < rnorm * (1.0 - 1e-4 * lam):
                x = xn
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            if converged:
                # the pre-polish iterate already met the tolerance; roundoff
                # blocks further decrease, so keep the best point seen
                rnorm, x, rhs = best
                break
            raise NewtonDivergenceError(
                "damping exhausted (iterate pinned at the singular barrier)",
                iterations=iters, residual=rnorm,
            )

    phi_new = phi + dt * rhs  # mass-exact commit: mean(rhs) telescopes to 0
    if np.max(np.abs(phi_new)) >= limit:
        raise BoundsViolationError("post-solve values hit the guard band; reduce dt")
    return State(g.Field(grid, phi_new), s.t + dt, newton_iters=iters, dt_used=dt)


class _Recorder:
    def __init__(self, M, cfg):
        self.M = M
        self.cfg = cfg
        self.rows = {k: [] for k in (
            "times", "mass", "energy", "dissipation", "grad_mu_l2", "mu_fluct_l2",
            "phi_min", "phi_max", "sep_margin", "dt", "newton_iters")}
        self.snapshots = []

    def sample(self, state: State, dt: float, snapshot: bool, diag: dict | None = None):
        phi = state.phi
        if diag is None:
            diag = _diagnose(self.M, phi)
        r = self.rows
        r["times"].append(state.t)
        r["mass"].append(phi.mean())
        r["energy"].append(diag["energy"])
        r["dissipation"].append(diag["dissipation"])
        r["grad_mu_l2"].append(diag["grad_mu_l2"])
        r["mu_fluct_l2"].append(diag["mu_fluct_l2"])
        r["phi_min"].append(float(phi.data.min()))
        r["phi_max"].append(float(phi.data.max()))
        r["sep_margin"].append(1.0 - float(np.max(np.abs(phi.data))))
        r["dt"].append(dt)
        r["newton_iters"].append(state.newton_iters)
        if snapshot:
            self.snapshots.append((state.t, phi.copy()))
        return diag["energy"], diag["dissipation"]

    def build(self, grid, provenance, model, complete) -> Trajectory:
        r = self.rows
        return Trajectory(
            grid=grid,
            times=np.array(r["times"]),
            mass=np.array(r["mass"]),
            energy=np.array(r["energy"]),
            dissipation=np.array(r["dissipation"]),
            grad_mu_l2=np.array(r["grad_mu_l2"]),
            mu_fluct_l2=np.array(r["mu_fluct_l2"]),
            phi_min=np.array(r["phi_min"]),
            phi_max=np.array(r["phi_max"]),
            sep_margin=np.array(r["sep_margin"]),
            dt=np.array(r["dt"]),
            newton_iters=np.array(r["newton_iters"], dtype=int),
            snapshots=self.snapshots,
            provenance=provenance,
            model=model,
            complete=complete,
        )


def run(M: ph.ModelConfig, phi0: g.Field, t_max: float, cfg: StepperConfig | None = None,
        provenance: dict | None = None) -> Trajectory:
    """Adaptive integration to t_max (or steady state), fully diagnosed.

    Steps failing Newton, the pointwise guard, or the one-step energy
    inequality are rejected and retried with dt/2; after grow_every clean
    steps dt grows by grow_factor up to dt_max.  Raises StepFloorError (with
    the partial trajectory attached) if dt_min is reached while still failing.
    """
    cfg = cfg or StepperConfig()
    if np.max(np.abs(phi0.data)) > 1.0:
        raise ValueError("initial data must satisfy |phi0| <= 1")
    if abs(phi0.mean()) >= 1.0:
        raise ValueError("initial mean must lie in (-1, 1)")
    eps = M.potential.eps_guard
    start = phi0.copy()
    np.clip(start.data, -(1.0 - eps), 1.0 - eps, out=start.data)

    prov = dict(provenance or {})
    prov.setdefault("dissipation_norm", M.dissipation_norm)
    prov.setdefault("m_star", M.mobility.m_star)
    prov.setdefault("preset", M.preset)
    prov.setdefault("alpha", M.alpha)
    prov.setdefault("beta", M.beta)
    prov.setdefault("gamma", M.gamma)

    rec = _Recorder(M, cfg)
    state = State(start, 0.0)
    e_prev, _ = rec.sample(state, 0.0, snapshot=True)

    dt = cfg.dt_init
    clean = 0
    accepted = 0
    rejected = {"newton": 0, "bounds": 0, "energy": 0}
    dwell = 0
    stop_reason = "t_max"
    t0 = _time.perf_counter()
    ws = _StepWorkspace(M, state.phi)

    while state.t < t_max - 1e-14 * max(1.0, t_max):
        dt_step = min(dt, t_max - state.t)
        try:
            new_state = step(M, state, dt_step, cfg, _workspace=ws)
        except (NewtonDivergenceError, BoundsViolationError) as exc:
            kind = "newton" if isinstance(exc, NewtonDivergenceError) else "bounds"
            rejected[kind] += 1
            clean = 0
            dt *= 0.5
            if dt < cfg.dt_min:
                traj = rec.build(phi0.grid, _finish(prov, rejected, accepted, t0, "step_floor"), M, False)
                raise StepFloorError(f"dt fell below dt_min after {kind} failures", traj) from exc
            continue

        diag = _diagnose(M, new_state.phi)
        if diag["energy"] + dt_step * diag["dissipation"] > e_prev + cfg.tol_e:
            rejected["energy"] += 1
            clean = 0
            dt *= 0.5
            if dt < cfg.dt_min:
                traj = rec.build(phi0.grid, _finish(prov, rejected, accepted, t0, "step_floor"), M, False)
                raise StepFloorError("dt fell below dt_min under dissipation violations", traj)
            continue

        state = new_state
        state.energy = diag["energy"]
        ws = _StepWorkspace(M, state.phi)
        accepted += 1
        snapshot = (accepted % cfg.snapshot_every == 0)
        e_prev, _ = rec.sample(state, dt_step, snapshot=snapshot, diag=diag)

        clean += 1
        if clean >= cfg.grow_every:
            dt = min(dt * cfg.grow_factor, cfg.dt_max)
            clean = 0

        dissnorm = rec.rows["grad_mu_l2"][-1] if M.dissipation_norm == "grad_mu" \
            else rec.rows["mu_fluct_l2"][-1]
        if dissnorm < cfg.steady_tol:
            dwell += 1
            if dwell >= cfg.steady_dwell:
                stop_reason = "steady"
                break
        else:
            dwell = 0

    if not rec.snapshots or rec.snapshots[-1][0] < state.t:
        rec.snapshots.append((state.t, state.phi.copy()))
    return rec.build(phi0.grid, _finish(prov, rejected, accepted, t0, stop_reason), M, True)


def _diagnose(M, phi: g.Field) -> dict:
    mu = ph.chemical_potential(M, phi)
    grad_mu = g.gradient(mu)
    grid = phi.grid
    vol = grid.cell_volume
    gm2 = 0.0
    diss_grad = 0.0
    if M.alpha > 0:
        m_face = ph._coefficient_faces(M, phi, M.mobility)
    for a in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[a] = slice(1, None)
        comp2 = grad_mu.components[a][tuple(sl)] ** 2
        gm2 += float(comp2.sum()) * vol
        if M.alpha > 0:
            diss_grad += float((m_face.components[a][tuple(sl)] * comp2).sum()) * vol
    fluct = mu.data - mu.data.mean()
    fluct2 = float(np.dot(fluct, fluct)) * vol
    return {
        "energy": ph.energy(M, phi),
        "dissipation": M.alpha * diss_grad + M.beta * fluct2,
        "grad_mu_l2": float(np.sqrt(max(gm2, 0.0))),
        "mu_fluct_l2": float(np.sqrt(max(fluct2, 0.0))),
    }


def _finish(prov, rejected, accepted, t0, reason):
    out = dict(prov)
    out["accepted"] = accepted
    out["rejected"] = dict(rejected)
    out["wall_time_s"] = _time.perf_counter() - t0
    out["stop_reason"] = reason
    return out
