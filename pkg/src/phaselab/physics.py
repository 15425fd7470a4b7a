"""Potentials, coefficients, model constants, chemical potential, energies.

The general model couples a conserved flux and a mean-subtracted relaxation::

    dphi/dt = alpha * div(m(phi) grad mu) - beta * (mu - mean(mu))
    mu      = -gamma div(a(phi) grad phi) + gamma a'(phi)/2 |grad phi|^2
              + F'(phi) - sigma1 * theta0 * phi - sigma2 * (J * phi)

with zero-flux boundaries.  Three named presets select the cases of interest:
mass-conserving transport with nonlinear diffusion (CH_NONLINEAR), the
conserved relaxation flow (CONSERVED_AC, a == 1), and the convolution-kernel
model (NONLOCAL_CH, gamma = 0).

The convex part of the mixing energy is the singular entropy term F with
F'' >= theta and F' blowing up at the pure phases +-1; the logarithmic form

    F(s) = theta/2 * ((1+s) ln(1+s) + (1-s) ln(1-s)),   F(+-1) = theta ln 2

is built in, and custom potentials are admitted after passing the same
invariant battery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import grid as g
from .errors import PotentialDomainError, ValidationError

PRESET_CH = "CH_NONLINEAR"
PRESET_AC = "CONSERVED_AC"
PRESET_NONLOCAL = "NONLOCAL_CH"

_SAMPLE = np.linspace(-1 + 1e-9, 1 - 1e-9, 4001)


class PotentialSpec:
    """Singular double-obstacle-free entropy F on (-1, 1).

    ``theta`` is the entropy temperature (convexity floor of F''), ``theta0``
    the critical temperature entering the concave decoupling term.  Orders 1
    and 2 are only defined up to the guard distance ``eps_guard`` from the
    pure phases; order 0 extends continuously to the closed interval.
    """

    def __init__(self, theta, theta0, kind="logarithmic", eps_guard=1e-14,
                 f0=None, f1=None, f2=None):
        if theta <= 0:
            raise ValidationError("theta must be positive")
        if theta0 <= theta:
            raise ValidationError("theta0 must exceed theta")
        self.theta = float(theta)
        self.theta0 = float(theta0)
        self.kind = kind
        self.eps_guard = float(eps_guard)
        if kind == "logarithmic":
            self._f0 = self._log0
            self._f1 = self._log1
            self._f2 = self._log2
        elif kind == "custom":
            if not (f0 and f1 and f2):
                raise ValidationError("custom potentials must supply F, F', F''")
            self._f0, self._f1, self._f2 = f0, f1, f2
        else:
            raise ValidationError(f"unknown potential kind {kind!r}")
        self._validate()

    @classmethod
    def logarithmic(cls, theta, theta0, eps_guard=1e-14) -> "PotentialSpec":
        return cls(theta, theta0, "logarithmic", eps_guard)

    @classmethod
    def custom(cls, theta, theta0, f0, f1, f2, eps_guard=1e-14) -> "PotentialSpec":
        return cls(theta, theta0, "custom", eps_guard, f0, f1, f2)

    def _log0(self, s):
        return 0.5 * self.theta * (xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s))

    def _log1(self, s):
        return 0.5 * self.theta * np.log((1.0 + s) / (1.0 - s))

    def _log2(self, s):
        return self.theta / ((1.0 - s) * (1.0 + s))

    def _validate(self):
        # contract battery: F(0)=0, F'(0)=0, F'' >= theta on a dense sample,
        # and F' must diverge approaching the pure phases
        if abs(float(self._f0(0.0))) > 1e-12:
            raise ValidationError("potential must satisfy F(0) = 0")
        if abs(float(self._f1(0.0))) > 1e-12:
            raise ValidationError("potential must satisfy F'(0) = 0")
        d2 = np.asarray(self._f2(_SAMPLE))
        if np.any(d2 < self.theta * (1.0 - 1e-9)):
            raise ValidationError("potential must satisfy F'' >= theta on (-1, 1)")
        probe = 1.0 - 1e-12
        near = abs(float(self._f1(probe)))
        ref = abs(float(self._f1(0.99)))
        if not (near >= 2.0 * ref + self.theta and float(self._f1(probe)) > 0
                and float(self._f1(-probe)) < 0):
            raise ValidationError("F' must diverge to +-inf at the pure phases")
        if self.kind == "logarithmic":
            target = self.theta * np.log(2.0)
            if abs(float(self._f0(1.0)) - target) > 1e-12 * max(1.0, target):
                raise ValidationError("logarithmic potential must have F(+-1) = theta ln 2")

    def _check_domain(self, s, order):
        a = np.asarray(s, dtype=float)
        limit = 1.0 if order == 0 else 1.0 - self.eps_guard
        if np.any(np.abs(a) > limit):
            raise PotentialDomainError(
                f"order-{order} potential evaluation at |s| > {limit}"
            )
        return a

    def F(self, s):
        return self._f0(self._check_domain(s, 0))

    def dF(self, s):
        return self._f1(self._check_domain(s, 1))

    def d2F(self, s):
        return self._f2(self._check_domain(s, 2))

    def inverse_dF(self, psi):
        """(F')^{-1}: maps all of R strictly inside (-1, 1).

        Closed form tanh(psi/theta) for the logarithmic kind; bisection on
        the guarded interval otherwise (F' is strictly increasing).
        """
        psi = np.asarray(psi, dtype=float)
        if self.kind == "logarithmic":
            return np.tanh(psi / self.theta)
        from scipy.optimize import brentq
        lo, hi = -1.0 + self.eps_guard, 1.0 - self.eps_guard
        flat = np.atleast_1d(psi).ravel()
        out = np.empty_like(flat)
        for i, p in enumerate(flat):
            if self._f1(lo) >= p:
                out[i] = lo
            elif self._f1(hi) <= p:
                out[i] = hi
            else:
                out[i] = brentq(lambda s: float(self._f1(s)) - p, lo, hi, xtol=1e-15)
        return out.reshape(psi.shape) if psi.shape else float(out[0])


def eval_potential(P: PotentialSpec, s, order: int):
    """Evaluate F, F', or F''; raises PotentialDomainError outside the domain."""
    if order == 0:
        return P.F(s)
    if order == 1:
        return P.dF(s)
    if order == 2:
        return P.d2F(s)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


class MobilitySpec:
    """Non-degenerate mobility m(s) >= m_star > 0 on [-1, 1]."""

    def __init__(self, fn, m_star):
        if m_star <= 0:
            raise ValidationError("m_star must be positive")
        self.fn = fn
        self.m_star = float(m_star)
        sample = np.asarray(fn(np.linspace(-1.0, 1.0, 2001)))
        if np.any(sample < self.m_star * (1.0 - 1e-12)):
            raise ValidationError("mobility dips below its declared m_star")

    @classmethod
    def constant(cls, value=1.0) -> "MobilitySpec":
        v = float(value)
        out = cls(lambda s: np.full_like(np.asarray(s, dtype=float), v), v)
        out.is_constant = True
        out.constant_value = v
        return out

    @classmethod
    def polynomial(cls, coeffs, m_star) -> "MobilitySpec":
        c = np.asarray(coeffs, dtype=float)
        if c.size == 1:
            return cls.constant(c[0])
        return cls(lambda s: np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), c), m_star)

    is_constant: bool = False
    constant_value: float | None = None

    def __call__(self, s):
        return self.fn(s)


# 64-point Gauss-Legendre rule for the interface-coordinate antiderivative
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


class DiffusionSpec:
    """Nonlinear gradient-energy coefficient a(s) >= a_star > 0 with derivative."""

    def __init__(self, fn, dfn, a_star):
        if a_star <= 0:
            raise ValidationError("a_star must be positive")
        self.fn = fn
        self.dfn = dfn
        self.a_star = float(a_star)
        s = np.linspace(-1.0, 1.0, 2001)
        vals = np.asarray(fn(s))
        if np.any(vals < self.a_star * (1.0 - 1e-12)):
            raise ValidationError("diffusion coefficient dips below its declared a_star")
        h = 1e-5
        inner_pts = s[(np.abs(s) < 1.0 - 2 * h)]
        fd = (np.asarray(fn(inner_pts + h)) - np.asarray(fn(inner_pts - h))) / (2 * h)
        declared = np.asarray(dfn(inner_pts))
        scale = np.maximum(1.0, np.abs(declared))
        if np.any(np.abs(fd - declared) > 1e-6 * scale * (1.0 + 1e3 * h)):
            raise ValidationError("declared a' inconsistent with finite differences of a")

    @classmethod
    def constant(cls, value=1.0) -> "DiffusionSpec":
        v = float(value)
        out = cls(
            lambda s: np.full_like(np.asarray(s, dtype=float), v),
            lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            v,
        )
        out.is_constant = True
        out.constant_value = v
        return out

    @classmethod
    def polynomial(cls, coeffs, a_star) -> "DiffusionSpec":
        c = np.asarray(coeffs, dtype=float)
        if c.size == 1:
            return cls.constant(c[0])
        dc = np.polynomial.polynomial.polyder(c)
        return cls(
            lambda s: np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), c),
            lambda s: np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), dc),
            a_star,
        )

    is_constant: bool = False
    constant_value: float | None = None

    def __call__(self, s):
        return self.fn(s)

    def antiderivative_sqrt(self, s):
        """A(s) = integral_0^s sqrt(a(t)) dt by Gauss-Legendre quadrature."""
        s = np.asarray(s, dtype=float)
        half = 0.5 * s
        nodes = half[..., None] * (_GL_X + 1.0)
        return half * np.sum(_GL_W * np.sqrt(self.fn(nodes)), axis=-1)


class KernelSpec:
    """Even interaction kernel built from a radial profile J(|x|).

    Evenness is structural (the profile only sees |x|).  Per-grid kernel
    matrices and the numerical ``|grad J|_{L1}`` estimate over a compact box
    containing all cell-center differences are cached.
    """

    def __init__(self, kind="gaussian", scale=0.1, support=None, profile=None):
        self.kind = kind
        self.scale = float(scale)
        if self.scale <= 0:
            raise ValidationError("kernel scale must be positive")
        self.support = float(support) if support is not None else 4.0 * self.scale
        if kind == "gaussian":
            pass
        elif kind == "tophat":
            self.support = float(support) if support is not None else self.scale
        elif kind == "custom":
            if profile is None:
                raise ValidationError("custom kernels must supply a radial profile")
        else:
            raise ValidationError(f"unknown kernel kind {kind!r}")
        self._profile = profile
        self._matrices: dict[g.Grid, g.KernelMatrix] = {}
        self._grad_l1: dict[tuple, float] = {}

    def profile(self, r, dim: int):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            s2 = self.scale * self.scale
            norm = (2.0 * np.pi * s2) ** (dim / 2.0)
            out = np.exp(-0.5 * r * r / s2) / norm
            return np.where(r <= self.support, out, 0.0)
        if self.kind == "tophat":
            R = self.support
            vol = 2.0 * R if dim == 1 else np.pi * R * R
            return np.where(r <= R, 1.0 / vol, 0.0)
        return self._profile(r)

    def grad_l1(self, grid: g.Grid) -> float:
        """Numerical |grad J|_{L1} over the box [-L, L]^d of center differences.

        Forward differences on a fine sampling grid; for a kernel with jumps
        this converges to the total variation rather than diverging.
        """
        key = (grid.dim, grid.lengths)
        if key not in self._grad_l1:
            per_axis = 4096 if grid.dim == 1 else 512
            axes = [np.linspace(-L, L, per_axis) for L in grid.lengths]
            steps = [ax[1] - ax[0] for ax in axes]
            if grid.dim == 1:
                r = np.abs(axes[0])
                J = self.profile(r, 1)
                total = float(np.sum(np.abs(np.diff(J))))  # sum |dJ| = int |J'| dx
            else:
                X, Y = np.meshgrid(*axes, indexing="ij")
                J = self.profile(np.sqrt(X * X + Y * Y), 2)
                gx = np.diff(J, axis=0)[:, :-1] / steps[0]
                gy = np.diff(J, axis=1)[:-1, :] / steps[1]
                total = float(np.sum(np.sqrt(gx * gx + gy * gy)) * steps[0] * steps[1])
            self._grad_l1[key] = total
        return self._grad_l1[key]

    def matrix(self, grid: g.Grid) -> g.KernelMatrix:
        if grid not in self._matrices:
            self._matrices[grid] = g.KernelMatrix.from_profile(
                grid, lambda r: self.profile(r, grid.dim), self.grad_l1(grid)
            )
        return self._matrices[grid]


@dataclass
class ModelConfig:
    """Constants and coefficient specifications of the general model."""

    alpha: float
    beta: float
    gamma: float
    sigma1: int
    sigma2: int
    potential: PotentialSpec
    mobility: MobilitySpec
    diffusion: DiffusionSpec
    kernel: KernelSpec | None = None
    nonlocal_consistency: bool = True
    preset: str | None = None
    face_mode: str = "arithmetic"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValidationError("alpha, beta, gamma must be non-negative")
        if self.sigma1 not in (0, 1) or self.sigma2 not in (0, 1):
            raise ValidationError("sigma1, sigma2 must be 0 or 1")
        if self.alpha <= 0 and self.beta <= 0:
            raise ValidationError("at least one of alpha, beta must be positive")
        if self.sigma2 == 1 and self.kernel is None:
            raise ValidationError("sigma2 = 1 requires a kernel specification")

    @property
    def dissipation_norm(self) -> str:
        """Diagnostic norm classifying good times: gradient for conserved
        transport, mean-free fluctuation for the relaxation flow."""
        return "grad_mu" if self.alpha > 0 else "mu_fluct"


def cahn_hilliard(potential, mobility, diffusion, alpha=1.0, gamma=1.0) -> ModelConfig:
    """Mass-conserving transport with nonlinear diffusion (alpha>0, gamma>0, sigma1=1)."""
    if alpha <= 0 or gamma <= 0:
        raise ValidationError("CH_NONLINEAR needs alpha > 0 and gamma > 0")
    return ModelConfig(alpha, 0.0, gamma, 1, 0, potential, mobility, diffusion,
                       preset=PRESET_CH)


def conserved_allen_cahn(potential, beta=1.0, gamma=1.0) -> ModelConfig:
    """Mean-subtracted relaxation flow (beta>0, gamma>0, sigma1=1, a == 1)."""
    if beta <= 0 or gamma <= 0:
        raise ValidationError("CONSERVED_AC needs beta > 0 and gamma > 0")
    return ModelConfig(0.0, beta, gamma, 1, 0, potential, MobilitySpec.constant(1.0),
                       DiffusionSpec.constant(1.0), preset=PRESET_AC)


def nonlocal_cahn_hilliard(potential, mobility, kernel, alpha=1.0,
                           nonlocal_consistency=True) -> ModelConfig:
    """Convolution-kernel transport model (alpha>0, gamma=0, sigma2=1)."""
    if alpha <= 0:
        raise ValidationError("NONLOCAL_CH needs alpha > 0")
    return ModelConfig(alpha, 0.0, 0.0, 0, 1, potential, mobility,
                       DiffusionSpec.constant(1.0), kernel=kernel,
                       nonlocal_consistency=nonlocal_consistency,
                       preset=PRESET_NONLOCAL)


def grad_sq_cell(phi: g.Field) -> np.ndarray:
    """|grad phi|^2 at cells: per-axis average of the two adjacent squared
    face differences, summed over axes.

    Built from the same face gradients as the divergence term, which is what
    makes the chemical potential the exact discrete first variation of the
    gradient energy.
    """
    grid = phi.grid
    grad = g.gradient(phi)
    out = np.zeros(grid.shape)
    for a, n in enumerate(grid.shape):
        comp = grad.components[a]
        lo = [slice(None)] * grid.dim
        lo[a] = slice(0, n)
        hi = [slice(None)] * grid.dim
        hi[a] = slice(1, n + 1)
        out += 0.5 * (comp[tuple(lo)] ** 2 + comp[tuple(hi)] ** 2)
    return out.ravel()


def chemical_potential(M: ModelConfig, phi: g.Field) -> g.Field:
    """First variation of the discrete free energy.

    With ``nonlocal_consistency`` on, the convolution part carries the extra
    diagonal (J*1) phi term so that mu is the exact gradient of the
    double-integral energy on the bounded domain; switched off, the literal
    -J*phi form is produced instead.
    """
    grid = phi.grid
    mu = np.zeros(grid.n_cells)
    P = M.potential
    if M.gamma > 0:
        a_face = _coefficient_faces(M, phi, M.diffusion)
        mu -= M.gamma * g.weighted_div_grad(phi, a_face).data
        da = np.asarray(M.diffusion.dfn(phi.data))
        if np.any(da):
            mu += M.gamma * 0.5 * da * grad_sq_cell(phi)
    mu += np.asarray(P.dF(phi.data))
    if M.sigma1:
        mu -= P.theta0 * phi.data
    if M.sigma2:
        K = M.kernel.matrix(grid)
        mu -= K.apply_values(phi.data)
        if M.nonlocal_consistency:
            mu += K.row_sums * phi.data
    return g.Field(grid, mu)


def _coefficient_faces(M: ModelConfig, phi: g.Field, spec) -> g.FaceField:
    vals = g.Field(phi.grid, np.asarray(spec(phi.data)))
    return g.face_average(vals, M.face_mode)


def energy(M: ModelConfig, phi: g.Field) -> float:
    """Total free energy of a configuration.

    E = gamma/2 * sum_faces a |grad phi|^2 + sum F(phi)
        - sigma1 * theta0/2 * sum phi^2
        + sigma2 * 1/4 * sum_ij K_ij (phi_i - phi_j)^2,

    all weighted by cell volume.  The double sum is evaluated through the
    convolution identity sum_ij K_ij (phi_i - phi_j)^2 = 2 (w phi, phi) -
    2 (J*phi, phi) with w the kernel row sums.
    """
    grid = phi.grid
    vol = grid.cell_volume
    P = M.potential
    E = float(np.sum(P.F(phi.data))) * vol
    if M.sigma1:
        E -= 0.5 * P.theta0 * float(np.dot(phi.data, phi.data)) * vol
    if M.gamma > 0:
        a_face = _coefficient_faces(M, phi, M.diffusion)
        grad = g.gradient(phi)
        sq = g.FaceField(grid, tuple(
            w * c * c for w, c in zip(a_face.components, grad.components)
        ))
        E += 0.5 * M.gamma * g.face_sum(grid, sq)
    if M.sigma2:
        K = M.kernel.matrix(grid)
        conv = K.apply_values(phi.data)
        E += 0.5 * (float(np.dot(K.row_sums * phi.data, phi.data))
                    - float(np.dot(conv, phi.data))) * vol
    return E


def dissipation_rate(M: ModelConfig, phi: g.Field, mu: g.Field) -> float:
    """Instantaneous dissipation: alpha * sum m(phi)|grad mu|^2 + beta * sum (mu - mean)^2."""
    grid = phi.grid
    D = 0.0
    if M.alpha > 0:
        m_face = _coefficient_faces(M, phi, M.mobility)
        grad = g.gradient(mu)
        sq = g.FaceField(grid, tuple(
            w * c * c for w, c in zip(m_face.components, grad.components)
        ))
        D += M.alpha * g.face_sum(grid, sq)
    if M.beta > 0:
        fluct = mu.data - mu.data.mean()
        D += M.beta * float(np.dot(fluct, fluct)) * grid.cell_volume
    return D
