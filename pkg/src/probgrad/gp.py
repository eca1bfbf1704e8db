"""Gaussian inference over linear information functionals.

A :class:`LinearFunctional` is a finite weighted combination of
(possibly derivative-tagged) kernel-section evaluations at joint
(domain-point, parameter) locations.  Conditioning a zero-mean kernel
prior on values of such functionals is plain Gaussian linear algebra:

    mean(L)      = k_L^T G^{-1} f
    cov(L, L')   = L C L'* - k_L^T G^{-1} k_L'
    G            = I C I*   (Gram matrix of the observed functionals)

All Gram blocks are assembled through a packed representation that
deduplicates term locations per (derivative-signature, block) group, so
functionals that share evaluation points (e.g. stiffness-row selectors
over a fixed mesh) cost one kernel matrix over unique locations plus a
sparse congruence, not one kernel call per term pair.

The observation values may carry several right-hand-side columns that
share the same functional set and Cholesky factor; this is how the
forward mode reuses one factorization across all parameter columns of
the sensitivity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import (
    InputError,
    KernelEvaluationError,
    SingularInformationError,
)
from .kernels import normalize_deriv

# adaptive diagonal nugget: relative to mean(diag G), escalated x10 on
# factorization failure
JITTER_START = 1e-10
JITTER_MAX = 1e-4

# a new functional whose Gram row leaves a Schur residual below this
# relative level is treated as linearly dependent on the collected set
DEPENDENCE_TOL = 1e-8


@dataclass(frozen=True)
class Term:
    """One weighted kernel-section evaluation inside a functional."""

    loc: tuple
    block: int
    deriv: tuple
    weight: float


class LinearFunctional:
    """Finite weighted combination of derivative-tagged point evaluations."""

    __slots__ = ("terms",)

    def __init__(self, terms: Sequence[Term]):
        if len(terms) == 0:
            raise InputError("a linear functional needs at least one term")
        for t in terms:
            if not np.isfinite(t.weight):
                raise InputError("functional weights must be finite")
        self.terms = tuple(terms)

    @classmethod
    def from_parts(cls, locs, blocks, derivs, weights) -> "LinearFunctional":
        terms = [
            Term(tuple(np.atleast_1d(l).astype(float)), int(b), normalize_deriv(d), float(w))
            for l, b, d, w in zip(locs, blocks, derivs, weights)
        ]
        return cls(terms)

    @classmethod
    def evaluation(cls, loc, block: int = 0, weight: float = 1.0) -> "LinearFunctional":
        """delta[loc] on one output block."""
        return cls.from_parts([loc], [block], [()], [weight])

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return f"LinearFunctional({len(self.terms)} terms)"


@dataclass
class FiniteGaussian:
    """Finite-dimensional Gaussian with a symmetric PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        m = self.mean.size
        if self.cov.shape != (m, m):
            raise InputError("covariance shape does not match mean")
        scale = max(np.abs(self.cov).max(), 1.0)
        if np.abs(self.cov - self.cov.T).max() > 1e-12 * scale:
            raise InputError("covariance must be symmetric")
        self.cov = 0.5 * (self.cov + self.cov.T)
        tr = max(np.trace(self.cov), 0.0)
        eigs = np.linalg.eigvalsh(self.cov)
        if eigs.min() < -1e-8 * max(tr, 1.0):
            raise InputError("covariance has a significantly negative eigenvalue")

    @property
    def dim(self) -> int:
        return self.mean.size

    def trace_sqrt(self) -> float:
        return float(np.sqrt(max(np.trace(self.cov), 0.0)))


class _Packed:
    """Term groups of a functional list, ready for vectorized Gram assembly.

    Terms are bucketed by (derivative signature, output block); inside a
    bucket the locations are deduplicated and a sparse (n_functionals x
    n_unique) weight matrix scatters kernel values back to rows.
    """

    __slots__ = ("n", "groups")

    def __init__(self, functionals: Sequence[LinearFunctional], dim: int):
        self.n = len(functionals)
        buckets: dict = {}
        for i, f in enumerate(functionals):
            for t in f.terms:
                if len(t.loc) != dim:
                    raise InputError(
                        f"term location dim {len(t.loc)} != kernel dim {dim}"
                    )
                key = (t.deriv, t.block)
                buckets.setdefault(key, ([], [], []))
                rows, locs, wts = buckets[key]
                rows.append(i)
                locs.append(t.loc)
                wts.append(t.weight)
        self.groups = {}
        for key, (rows, locs, wts) in buckets.items():
            Z = np.asarray(locs, dtype=float)
            Zu, inv = np.unique(Z, axis=0, return_inverse=True)
            S = scipy.sparse.coo_matrix(
                (np.asarray(wts), (np.asarray(rows), inv.ravel())),
                shape=(self.n, Zu.shape[0]),
            ).tocsr()
            self.groups[key] = (Zu, S)


def _cross(pa: _Packed, pb: _Packed, kernel) -> np.ndarray:
    out = np.zeros((pa.n, pb.n))
    for (da, ba), (Za, Sa) in pa.groups.items():
        for (db, bb), (Zb, Sb) in pb.groups.items():
            K = kernel.deriv_matrix(Za, Zb, da, db, ba, bb)
            out += Sa @ (Sb @ K.T).T
    if not np.all(np.isfinite(out)):
        raise KernelEvaluationError("non-finite entry in Gram block")
    return out


def gram(functionals, kernel, functionals2=None) -> np.ndarray:
    """(Cross-)Gram matrix G_{ij} = I_i [applied to arg 1] I_j [arg 2] k."""
    pa = _Packed(functionals, kernel.dim)
    if functionals2 is None:
        G = _cross(pa, pa, kernel)
        return 0.5 * (G + G.T)
    pb = _Packed(functionals2, kernel.dim)
    return _cross(pa, pb, kernel)


def chol_append(chol, cross, block, jitter: float = 0.0) -> np.ndarray:
    """Extend a Cholesky factor to the bordered matrix [[G, c], [c^T, B]].

    Only a factorization of the new block's size is computed: with
    B' = B + jitter I and V = L^{-1} c, the Schur complement B' - V^T V
    is factorized and appended below the existing factor.
    """
    block = np.atleast_2d(np.asarray(block, dtype=float))
    b = block.shape[0]
    if block.shape != (b, b):
        raise InputError("block must be square")
    blk = block + jitter * np.eye(b)
    if chol is None or np.size(chol) == 0:
        try:
            return np.linalg.cholesky(blk)
        except np.linalg.LinAlgError as e:
            raise SingularInformationError(str(e)) from e
    chol = np.asarray(chol, dtype=float)
    n = chol.shape[0]
    cross = np.asarray(cross, dtype=float).reshape(n, b)
    V = scipy.linalg.solve_triangular(chol, cross, lower=True)
    S = blk - V.T @ V
    S = 0.5 * (S + S.T)
    try:
        L22 = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as e:
        raise SingularInformationError(str(e)) from e
    out = np.zeros((n + b, n + b))
    out[:n, :n] = chol
    out[n:, :n] = V.T
    out[n:, n:] = L22
    return out


class GaussianState:
    """Immutable bundle of kernel prior + conditioning bookkeeping.

    Prior mean is zero (both benchmark problems use centred priors); the
    posterior over any functional follows from the stored Cholesky factor
    of the jittered Gram matrix and the cached solve ``alpha = G^{-1} f``.
    ``values`` may have several columns (shared functionals, distinct
    right-hand sides).
    """

    __slots__ = (
        "kernel",
        "functionals",
        "values",
        "chol",
        "alpha",
        "gram_diag",
        "jitter_diag",
        "n_rhs",
        "_packed",
    )

    def __init__(self, kernel, functionals, values, chol, alpha, gram_diag, jitter_diag, n_rhs):
        self.kernel = kernel
        self.functionals = tuple(functionals)
        self.values = values
        self.chol = chol
        self.alpha = alpha
        self.gram_diag = gram_diag
        self.jitter_diag = jitter_diag
        self.n_rhs = n_rhs
        self._packed = None

    @property
    def n(self) -> int:
        return len(self.functionals)

    @property
    def packed(self) -> _Packed:
        if self._packed is None:
            self._packed = _Packed(self.functionals, self.kernel.dim)
        return self._packed

    def __repr__(self):
        return f"GaussianState(n={self.n}, n_rhs={self.n_rhs})"


def empty_state(kernel, n_rhs: int = 1) -> GaussianState:
    if n_rhs < 1:
        raise InputError("n_rhs must be >= 1")
    return GaussianState(
        kernel,
        (),
        np.zeros((0, n_rhs)),
        np.zeros((0, 0)),
        np.zeros((0, n_rhs)),
        np.zeros(0),
        np.zeros(0),
        n_rhs,
    )


def _coerce_values(values, n: int, n_rhs: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != (n, n_rhs):
        raise InputError(f"values shape {v.shape} != ({n}, {n_rhs})")
    if not np.all(np.isfinite(v)):
        raise InputError("observation values must be finite")
    return v


def _schur_chol_with_drop(S, diag_ref, jitter, ref_scale):
    """Row-by-row Cholesky of a Schur complement, dropping dependent rows.

    A pivot below DEPENDENCE_TOL * diag_ref[i] marks row i as a linear
    combination of the rows before it (and of the already-collected
    information); the row is skipped instead of poisoning the factor.
    Returns (lower factor over kept rows, kept indices).  Raises if a
    pivot is negative well beyond the dependence band, which signals
    roundoff trouble that a larger jitter may fix.
    """
    b = S.shape[0]
    kept: list[int] = []
    L = np.zeros((b, b))
    for i in range(b):
        m = len(kept)
        if m:
            row = scipy.linalg.solve_triangular(
                L[:m, :m], S[np.asarray(kept), i], lower=True
            )
        else:
            row = np.zeros(0)
        pivot = S[i, i] + jitter - row @ row
        floor = DEPENDENCE_TOL * max(diag_ref[i], 0.0)
        degenerate = diag_ref[i] <= 1e-14 * ref_scale
        if degenerate or pivot <= floor:
            if pivot < -10.0 * (floor + jitter) and not degenerate:
                raise SingularInformationError(
                    "Schur complement indefinite beyond the dependence band"
                )
            continue
        L[m, :m] = row
        L[m, m] = np.sqrt(pivot)
        kept.append(i)
    m = len(kept)
    return L[:m, :m].copy(), np.asarray(kept, dtype=int)


def condition(state: GaussianState, new_functionals, new_values, *, drop_singular=True) -> GaussianState:
    """Condition on new (functional, value) pairs; returns a new state.

    The existing state is unchanged.  Functionals whose Gram rows are
    within relative DEPENDENCE_TOL of a linear combination of the
    collected set are dropped with a warning when ``drop_singular`` is
    set, honoring the linear-independence assumption on the information
    set; otherwise a SingularInformationError is raised.  A small
    adaptive diagonal nugget keeps the factorization alive for
    near-duplicate functionals.
    """
    new_functionals = list(new_functionals)
    if len(new_functionals) == 0:
        return state
    vals = _coerce_values(new_values, len(new_functionals), state.n_rhs)

    pb = _Packed(new_functionals, state.kernel.dim)
    cross = _cross(state.packed, pb, state.kernel) if state.n else np.zeros((0, pb.n))
    block = _cross(pb, pb, state.kernel)
    block = 0.5 * (block + block.T)
    bdiag = np.diag(block).copy()

    if state.n:
        V = scipy.linalg.solve_triangular(state.chol, cross, lower=True)
        S = block - V.T @ V
    else:
        V = np.zeros((0, pb.n))
        S = block
    S = 0.5 * (S + S.T)

    diag_all = np.concatenate([state.gram_diag, bdiag])
    mean_diag = float(np.mean(diag_all)) if diag_all.size else 1.0
    if not mean_diag > 0:
        mean_diag = 1.0

    rel = JITTER_START
    while True:
        try:
            L22, keep = _schur_chol_with_drop(S, bdiag, rel * mean_diag, mean_diag)
            break
        except SingularInformationError:
            rel *= 10.0
            if rel > JITTER_MAX:
                raise

    if len(keep) < len(new_functionals):
        if not drop_singular:
            raise SingularInformationError(
                f"{len(new_functionals) - len(keep)} functionals are "
                "numerically dependent on the collected information"
            )
        warnings.warn(
            f"dropped {len(new_functionals) - len(keep)} numerically "
            "dependent information functional(s)",
            stacklevel=2,
        )
        if len(keep) == 0:
            return state

    n, b = state.n, len(keep)
    chol = np.zeros((n + b, n + b))
    chol[:n, :n] = state.chol
    chol[n:, :n] = V[:, keep].T
    chol[n:, n:] = L22
    gram_diag = np.concatenate([state.gram_diag, bdiag[keep]])
    jitter_diag = np.concatenate([state.jitter_diag, np.full(b, rel * mean_diag)])
    return _finalize(
        state, [new_functionals[k] for k in keep], vals[keep], chol, gram_diag, jitter_diag
    )


def _finalize(state, new_functionals, vals, chol, gram_diag, jitter_diag):
    values = np.vstack([state.values, vals])
    alpha = scipy.linalg.cho_solve((chol, True), values)
    return GaussianState(
        state.kernel,
        state.functionals + tuple(new_functionals),
        values,
        chol,
        alpha,
        gram_diag,
        jitter_diag,
        state.n_rhs,
    )


def _cross_to_query(state: GaussianState, functionals) -> np.ndarray:
    pq = _Packed(functionals, state.kernel.dim)
    if state.n == 0:
        return np.zeros((0, pq.n))
    return _cross(state.packed, pq, state.kernel)


def posterior_mean(state: GaussianState, functionals) -> np.ndarray:
    """Posterior means, shape (n_query, n_rhs)."""
    K = _cross_to_query(state, functionals)
    if state.n == 0:
        return np.zeros((len(functionals), state.n_rhs))
    return K.T @ state.alpha


def posterior_cov(state: GaussianState, functionals) -> np.ndarray:
    """Posterior covariance matrix of a functional list (rhs-independent)."""
    prior = gram(functionals, state.kernel)
    if state.n == 0:
        return prior
    K = _cross_to_query(state, functionals)
    V = scipy.linalg.solve_triangular(state.chol, K, lower=True)
    C = prior - V.T @ V
    return 0.5 * (C + C.T)


def posterior_functional(state: GaussianState, L: LinearFunctional, L2=None):
    """(mean of L, posterior covariance of (L, L2)); L2 defaults to L.

    The mean is a scalar for single-column states and a vector with one
    entry per right-hand-side column otherwise.
    """
    fs = [L] if L2 is None or L2 is L else [L, L2]
    m = posterior_mean(state, [L])
    C = posterior_cov(state, fs)
    cov = float(C[0, 0] if len(fs) == 1 else C[0, 1])
    mean = m[0] if state.n_rhs > 1 else float(m[0, 0])
    return mean, cov


def posterior_var_diag(state: GaussianState, functionals) -> np.ndarray:
    """Posterior variances of each functional, without the full q x q matrix."""
    prior_diag = np.array(
        [gram([f], state.kernel)[0, 0] for f in functionals]
    )
    if state.n == 0:
        return prior_diag
    K = _cross_to_query(state, functionals)
    V = scipy.linalg.solve_triangular(state.chol, K, lower=True)
    return prior_diag - np.sum(V * V, axis=0)


def trace_metric(state: GaussianState, query) -> float:
    """sqrt of the summed posterior variances over the query functionals."""
    query = list(query)
    if len(query) == 0:
        raise InputError("query must be nonempty")
    var = posterior_var_diag(state, query)
    return float(np.sqrt(np.sum(np.clip(var, 0.0, None))))


def log_marginal_likelihood(state: GaussianState) -> float:
    """Zero-mean Gaussian evidence of the stored observations.

    For a single value column this is
    -1/2 f^T G^{-1} f - 1/2 log det G - (n/2) log 2 pi; independent
    right-hand-side columns contribute additively with a shared factor.
    """
    if state.n == 0:
        raise InputError("log marginal likelihood needs at least one observation")
    quad = float(np.sum(state.values * state.alpha))
    logdet = 2.0 * float(np.sum(np.log(np.diag(state.chol))))
    r = state.n_rhs
    return -0.5 * quad - 0.5 * r * logdet - 0.5 * state.n * r * np.log(2.0 * np.pi)
