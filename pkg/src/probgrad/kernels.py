"""Matern-5/2 covariance over joint (domain, parameter) coordinates.

The base kernel is

    k(r, r') = sigma^2 (1 + sqrt(5) d + (5/3) d^2) exp(-sqrt(5) d),
    d^2      = (r - r')^T L^{-1} (r - r'),   L = diag(ell),

with a diagonal length-scale matrix split into a domain part (``ell_x``)
and a parameter part (``ell_p``).  Mixed partial derivatives up to second
order per argument are evaluated in closed form: writing u = r - r' and
phi(u) = k(r, r'), every derivative is a combination of radial factors
G_k(d) and monomials in the scaled differences u_a / ell_a, so the
removable 0/0 at d = 0 never has to be taken numerically.

On top of the base kernel sit the two problem-specific variants:

* a linear time warp q(t) = t with a 2x2 output coupling matrix
  C = [[1, rho], [rho, 1]] (oscillator benchmark); the warp pins the
  prior to zero at t = 0 where the sensitivity is known to vanish,
* a parabolic boundary warp q(x2) = 1 - (2 x2 - 1)^2 (flow benchmark),
  vanishing on the top and bottom edges of the unit square.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, UnsupportedOrderError

SQRT5 = float(np.sqrt(5.0))

# Maximum derivative order per kernel argument (Matern 5/2 has exactly two
# mean-square derivatives).
MAX_ORDER_PER_ARG = 2


@dataclass(frozen=True)
class KernelHyper:
    """Hyperparameters of the joint Matern-5/2 prior.

    sigma  : amplitude, > 0
    ell_x  : domain length-scale, > 0
    ell_p  : parameter length-scale, > 0
    rho    : output coupling in [-1, 1] (two-output problems only)
    """

    sigma: float
    ell_x: float
    ell_p: float
    rho: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.ell_x > 0 and self.ell_p > 0):
            raise InputError("sigma, ell_x, ell_p must all be positive")
        if abs(self.rho) > 1.0:
            raise InputError("|rho| must be <= 1 for a PSD coupling matrix")

    def lengthscales(self, dim_x: int, dim_p: int) -> np.ndarray:
        """Diagonal of L: ell_x on the first dim_x axes, ell_p after."""
        return np.concatenate(
            [np.full(dim_x, self.ell_x), np.full(dim_p, self.ell_p)]
        )

    def coupling(self) -> np.ndarray:
        return np.array([[1.0, self.rho], [self.rho, 1.0]])


@dataclass(frozen=True)
class DerivOrder:
    """A partial derivative: ``order`` derivatives along joint axis ``axis``."""

    axis: int
    order: int

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise UnsupportedOrderError(
                f"derivative order {self.order} not in {{0, 1, 2}}"
            )
        if self.axis < 0:
            raise InputError("axis must be nonnegative")


def normalize_deriv(deriv) -> tuple[int, ...]:
    """Flatten a derivative spec into a sorted tuple of axes.

    Accepts an int axis, a DerivOrder, or an iterable of either; each
    occurrence of an axis stands for one differentiation along it.
    """
    if deriv is None:
        return ()
    if isinstance(deriv, (int, np.integer)):
        return (int(deriv),)
    if isinstance(deriv, DerivOrder):
        return (deriv.axis,) * deriv.order
    axes: list[int] = []
    for d in deriv:
        axes.extend(normalize_deriv(d))
    axes.sort()
    if len(axes) > MAX_ORDER_PER_ARG:
        raise UnsupportedOrderError(
            f"total derivative order {len(axes)} exceeds kernel smoothness "
            f"({MAX_ORDER_PER_ARG} per argument)"
        )
    return tuple(axes)


class Matern52:
    """Stationary Matern-5/2 kernel with per-axis length-scales."""

    def __init__(self, sigma: float, lengthscales: Sequence[float]):
        ell = np.asarray(lengthscales, dtype=float)
        if sigma <= 0 or np.any(ell <= 0):
            raise InputError("amplitude and length-scales must be positive")
        self.sigma = float(sigma)
        self.ell = ell
        self.w = 1.0 / ell  # inverse squared-distance weights
        self.dim = ell.size
        self.n_blocks = 1

    # -- distance helpers ------------------------------------------------

    def _check(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise InputError(
                f"points have dimension {Z.shape[1]}, kernel expects {self.dim}"
            )
        return Z

    def _sqdist(self, Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
        A = Z1 * np.sqrt(self.w)
        B = Z2 * np.sqrt(self.w)
        d2 = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.maximum(d2, 0.0)

    # -- evaluation -------------------------------------------------------

    def __call__(self, Z1, Z2) -> np.ndarray:
        return self.deriv_matrix(Z1, Z2, (), ())

    def deriv_matrix(self, Z1, Z2, d1=(), d2=()) -> np.ndarray:
        """Mixed partial matrix [d^{|d1|}/dr^{d1} d^{|d2|}/dr'^{d2} k](z_i, z'_j).

        d1 and d2 are tuples of joint-coordinate axes; each entry is one
        differentiation of the corresponding argument.
        """
        d1 = normalize_deriv(d1)
        d2 = normalize_deriv(d2)
        Z1 = self._check(Z1)
        Z2 = self._check(Z2)

        m = d1 + d2
        sign = -1.0 if len(d2) % 2 else 1.0
        s2 = self.sigma**2

        D2 = self._sqdist(Z1, Z2)
        d = np.sqrt(D2)
        t = SQRT5 * d
        E = np.exp(-t)

        if len(m) == 0:
            return s2 * (1.0 + t + t * t / 3.0) * E

        # scaled differences u~_a = (z_a - z'_a) / ell_a; only needed axes
        U = {
            a: (Z1[:, a][:, None] - Z2[:, a][None, :]) * self.w[a]
            for a in set(m)
        }
        w = self.w

        # radial factors: G_{k+1} = G_k'(d) / d, starting from G_0 = phi
        G1 = -(5.0 / 3.0) * s2 * (1.0 + t) * E
        if len(m) == 1:
            return sign * G1 * U[m[0]]

        G2 = (25.0 / 3.0) * s2 * E
        if len(m) == 2:
            a, b = m
            out = G2 * U[a] * U[b]
            if a == b:
                out = out + G1 * w[a]
            return sign * out

        # G3, G4 carry removable 1/d singularities; they always appear
        # multiplied by enough u-factors that the d -> 0 limit is zero,
        # so inv_d is clamped to 0 on the diagonal.
        inv_d = np.zeros_like(d)
        np.divide(1.0, d, out=inv_d, where=d > 0)
        G3 = -(25.0 * SQRT5 / 3.0) * s2 * E * inv_d
        if len(m) == 3:
            a, b, c = m
            out = G3 * U[a] * U[b] * U[c]
            if a == b:
                out = out + G2 * w[a] * U[c]
            if a == c:
                out = out + G2 * w[a] * U[b]
            if b == c:
                out = out + G2 * w[b] * U[a]
            return sign * out

        if len(m) == 4:
            a, b, c, e = m
            G4 = (25.0 * SQRT5 / 3.0) * s2 * E * (1.0 + t) * inv_d**3
            out = G4 * U[a] * U[b] * U[c] * U[e]
            pairs = (
                (a, b, c, e),
                (a, c, b, e),
                (a, e, b, c),
                (b, c, a, e),
                (b, e, a, c),
                (c, e, a, b),
            )
            for i, j, k, l in pairs:
                if i == j:
                    out = out + G3 * w[i] * U[k] * U[l]
            if a == b and c == e:
                out = out + G2 * w[a] * w[c]
            if a == c and b == e:
                out = out + G2 * w[a] * w[b]
            if a == e and b == c:
                out = out + G2 * w[a] * w[b]
            return sign * out

        raise UnsupportedOrderError(
            f"total mixed order {len(m)} exceeds the kernel smoothness"
        )


class LinearWarp:
    """q(z) = z[axis]; used to pin the prior to zero at t = 0."""

    def __init__(self, axis: int = 0):
        self.axis = axis

    def value(self, Z: np.ndarray, order: int = 0) -> np.ndarray:
        if order == 0:
            return Z[:, self.axis]
        if order == 1:
            return np.ones(Z.shape[0])
        return np.zeros(Z.shape[0])


class BumpWarp:
    """q(z) = 1 - (2 z[axis] - 1)^2; vanishes at z[axis] in {0, 1}."""

    def __init__(self, axis: int = 1):
        self.axis = axis

    def value(self, Z: np.ndarray, order: int = 0) -> np.ndarray:
        x = Z[:, self.axis]
        if order == 0:
            return 1.0 - (2.0 * x - 1.0) ** 2
        if order == 1:
            return -4.0 * (2.0 * x - 1.0)
        if order == 2:
            return np.full(Z.shape[0], -8.0)
        return np.zeros(Z.shape[0])


def _warp_splits(deriv: tuple[int, ...], waxis: int):
    """Leibniz splits of a derivative multiset between warp and base kernel.

    Yields (warp_order, base_axes, coeff) with warp_order derivatives
    falling on the warp factor (only possible along its axis).
    """
    if len(deriv) == 0:
        yield 0, (), 1.0
    elif len(deriv) == 1:
        (a,) = deriv
        yield 0, (a,), 1.0
        if a == waxis:
            yield 1, (), 1.0
    elif len(deriv) == 2:
        a, b = deriv
        yield 0, (a, b), 1.0
        if a == b == waxis:
            yield 1, (a,), 2.0
            yield 2, (), 1.0
        elif a == waxis:
            yield 1, (b,), 1.0
        elif b == waxis:
            yield 1, (a,), 1.0
    else:  # pragma: no cover - guarded by normalize_deriv
        raise UnsupportedOrderError("warped derivatives limited to order 2")


class CoupledKernel:
    """Warped, output-coupled wrapper around a base Matern-5/2 kernel.

    k((z, i), (z', j)) = C[i, j] q(z) q(z') k_base(z, z')

    with an optional scalar warp q acting through one joint axis and an
    optional PSD coupling matrix C across output blocks.
    """

    def __init__(self, base: Matern52, warp=None, coupling=None):
        self.base = base
        self.warp = warp
        if coupling is None:
            coupling = np.array([[1.0]])
        self.coupling = np.asarray(coupling, dtype=float)
        self.n_blocks = self.coupling.shape[0]
        self.dim = base.dim

    def deriv_matrix(self, Z1, Z2, d1=(), d2=(), b1: int = 0, b2: int = 0):
        d1 = normalize_deriv(d1)
        d2 = normalize_deriv(d2)
        if not (0 <= b1 < self.n_blocks and 0 <= b2 < self.n_blocks):
            raise InputError("output block index out of range")
        cfac = self.coupling[b1, b2]
        Z1 = self.base._check(Z1)
        Z2 = self.base._check(Z2)
        if self.warp is None:
            return cfac * self.base.deriv_matrix(Z1, Z2, d1, d2)
        out = np.zeros((Z1.shape[0], Z2.shape[0]))
        if cfac == 0.0:
            return out
        for o1, r1, c1 in _warp_splits(d1, self.warp.axis):
            q1 = self.warp.value(Z1, o1)
            if not np.any(q1):
                continue
            for o2, r2, c2 in _warp_splits(d2, self.warp.axis):
                q2 = self.warp.value(Z2, o2)
                if not np.any(q2):
                    continue
                K = self.base.deriv_matrix(Z1, Z2, r1, r2)
                out += (c1 * c2) * (q1[:, None] * q2[None, :]) * K
        return cfac * out

    def __call__(self, Z1, Z2, b1: int = 0, b2: int = 0):
        return self.deriv_matrix(Z1, Z2, (), (), b1, b2)


# ---------------------------------------------------------------------------
# scalar convenience API
# ---------------------------------------------------------------------------


def _as_joint(r, expected=None) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if r.ndim != 1:
        raise InputError("joint coordinates must be 1-D vectors")
    if expected is not None and r.size != expected:
        raise InputError(f"joint coordinate dimension {r.size} != {expected}")
    return r


def _scalar_matern(hyp: KernelHyper, dim: int, n_domain_axes) -> Matern52:
    if n_domain_axes is None:
        n_domain_axes = dim
    if not 0 <= n_domain_axes <= dim:
        raise InputError("n_domain_axes out of range")
    ell = hyp.lengthscales(n_domain_axes, dim - n_domain_axes)
    return Matern52(hyp.sigma, ell)


def matern52(r, r2, hyp: KernelHyper, n_domain_axes: int | None = None) -> float:
    """sigma^2 (1 + sqrt5 d + 5/3 d^2) exp(-sqrt5 d) at a single pair.

    By default every axis uses the domain length-scale ell_x; pass
    ``n_domain_axes`` to split the joint vector into domain/parameter parts.
    """
    r = _as_joint(r)
    r2 = _as_joint(r2, expected=r.size)
    k = _scalar_matern(hyp, r.size, n_domain_axes)
    return float(k.deriv_matrix(r[None, :], r2[None, :])[0, 0])


def matern52_deriv(
    r, r2, hyp: KernelHyper, d1, d2, n_domain_axes: int | None = None
) -> float:
    """Exact analytic mixed partial of :func:`matern52`."""
    r = _as_joint(r)
    r2 = _as_joint(r2, expected=r.size)
    k = _scalar_matern(hyp, r.size, n_domain_axes)
    a1 = normalize_deriv(d1)
    a2 = normalize_deriv(d2)
    for a in a1 + a2:
        if a >= r.size:
            raise InputError(f"derivative axis {a} out of range")
    return float(k.deriv_matrix(r[None, :], r2[None, :], a1, a2)[0, 0])


def fhn_kernel(hyp: KernelHyper, dim_p: int = 4) -> CoupledKernel:
    """Prior kernel for the oscillator problem: C q(t) q(t') k_{5/2}.

    Joint coordinates are [t, p_1 .. p_dim_p]; blocks index the two state
    components.
    """
    base = Matern52(hyp.sigma, hyp.lengthscales(1, dim_p))
    return CoupledKernel(base, warp=LinearWarp(axis=0), coupling=hyp.coupling())


def gwf_kernel(hyp: KernelHyper, dim_p: int) -> CoupledKernel:
    """Prior kernel for the flow problem: q(x2) q(x2') k_{5/2}.

    Joint coordinates are [x_1, x_2, p_1 .. p_dim_p]; single output block.
    """
    base = Matern52(hyp.sigma, hyp.lengthscales(2, dim_p))
    return CoupledKernel(base, warp=BumpWarp(axis=1))


def kernel_fhn(z1, z2, hyp: KernelHyper) -> float:
    """Scalar oscillator kernel; z = (t, p, block) with block in {0, 1}."""
    t1, p1, i1 = z1
    t2, p2, i2 = z2
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    p2 = np.atleast_1d(np.asarray(p2, dtype=float))
    if p1.size != p2.size:
        raise InputError("parameter dimensions differ")
    if i1 not in (0, 1) or i2 not in (0, 1):
        raise InputError("block index must be 0 (v) or 1 (w)")
    if t1 < 0 or t2 < 0:
        raise InputError("time must be nonnegative")
    k = fhn_kernel(hyp, dim_p=p1.size)
    Z1 = np.concatenate([[t1], p1])[None, :]
    Z2 = np.concatenate([[t2], p2])[None, :]
    return float(k.deriv_matrix(Z1, Z2, (), (), int(i1), int(i2))[0, 0])


def kernel_gwf(z1, z2, hyp: KernelHyper) -> float:
    """Scalar flow kernel; z = (x, p) with x in the unit square."""
    x1, p1 = z1
    x2, p2 = z2
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    p2 = np.atleast_1d(np.asarray(p2, dtype=float))
    if x1.size != 2 or x2.size != 2:
        raise InputError("spatial points must be 2-D")
    if np.any(x1 < 0) or np.any(x1 > 1) or np.any(x2 < 0) or np.any(x2 > 1):
        raise InputError("spatial points must lie in the unit square")
    if p1.size != p2.size:
        raise InputError("parameter dimensions differ")
    k = gwf_kernel(hyp, dim_p=p1.size)
    Z1 = np.concatenate([x1, p1])[None, :]
    Z2 = np.concatenate([x2, p2])[None, :]
    return float(k.deriv_matrix(Z1, Z2)[0, 0])
