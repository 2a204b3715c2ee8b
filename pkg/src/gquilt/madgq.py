"""Max-determinant graph-quilting reconstruction at the population level."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

from .edges import EdgeSet
from .scheme import ObservationScheme, PartialCovariance, SchemeError

log = logging.getLogger(__name__)

SUPPORT_RTOL = 1e-10
DENSE_HESSIAN_MAX = 1500


class NotCompletableError(ArithmeticError):
    """Observed covariance has no positive definite completion (or the solver diverged)."""


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("precision matrix must be square")
        t = 0.5 * (t + t.T)
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def support(self) -> EdgeSet:
        scale = np.abs(self.theta).max()
        return EdgeSet.from_matrix(self.theta, SUPPORT_RTOL * scale)

    def is_pd(self) -> bool:
        try:
            np.linalg.cholesky(self.theta)
        except np.linalg.LinAlgError:
            return False
        return True


@dataclass(frozen=True)
class PartitionABC:
    """Partition of the nodes with O^c = (A x C) u (C x A)."""

    A: frozenset[int]
    B: frozenset[int]
    C: frozenset[int]

    def __post_init__(self):
        for name in "ABC":
            object.__setattr__(self, name, frozenset(int(i) for i in getattr(self, name)))
        if not self.A or not self.C:
            raise ValueError("A and C must be nonempty")
        if (self.A & self.B) or (self.A & self.C) or (self.B & self.C):
            raise ValueError("A, B, C must be disjoint")

    @property
    def p(self) -> int:
        return len(self.A) + len(self.B) + len(self.C)

    def check_covers(self, p: int):
        if (self.A | self.B | self.C) != frozenset(range(p)):
            raise ValueError("A, B, C must cover all nodes")

    def index(self, name: str) -> np.ndarray:
        return np.asarray(sorted(getattr(self, name)), dtype=int)

    def subsets(self) -> list[frozenset[int]]:
        return [self.A | self.B, self.B | self.C]


def _chol_inv(theta: np.ndarray):
    """(inverse, logdet) via Cholesky; raises LinAlgError when not PD."""
    c, low = sla.cho_factor(theta, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    inv = sla.cho_solve((c, low), np.eye(theta.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T), logdet


def _is_pd(m: np.ndarray) -> bool:
    try:
        sla.cho_factor(m, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return False
    return True


class _ObservedParams:
    """Coordinates of a symmetric matrix supported on O (upper triangle incl. diagonal)."""

    def __init__(self, mask: np.ndarray):
        self.p = mask.shape[0]
        iu, ju = np.nonzero(np.triu(mask))
        self.i, self.j = iu, ju
        self.offdiag = iu != ju
        # gradient/Hessian weight: off-diagonal coordinates appear twice in the matrix
        self.w = np.where(self.offdiag, 2.0, 1.0)

    def to_matrix(self, x: np.ndarray) -> np.ndarray:
        m = np.zeros((self.p, self.p))
        m[self.i, self.j] = x
        m[self.j, self.i] = x
        return m

    def take(self, m: np.ndarray) -> np.ndarray:
        return m[self.i, self.j]

    def neg_hessian(self, w: np.ndarray) -> np.ndarray:
        i, j = self.i, self.j
        h = w[np.ix_(i, i)] * w[np.ix_(j, j)] + w[np.ix_(i, j)] * w[np.ix_(j, i)]
        s = np.where(self.offdiag, 1.0, 0.5)
        return 2.0 * h * np.outer(s, s)

    def neg_hessian_op(self, w: np.ndarray) -> LinearOperator:
        def mv(v):
            v = np.ravel(v)
            return self.w * self.take(w @ self.to_matrix(v) @ w)
        n = self.i.size
        return LinearOperator((n, n), matvec=mv, dtype=float)


def _objective(logdet: float, theta: np.ndarray, sigma0: np.ndarray) -> float:
    return logdet - float(np.sum(theta * sigma0))


def _check_completable(sigma: PartialCovariance):
    s = sigma.values
    d = np.diagonal(s)
    if not sigma.mask.diagonal().all():
        raise SchemeError("O is missing a diagonal entry")
    if (d <= 0).any():
        raise NotCompletableError("nonpositive observed variance")
    for vk in sigma.scheme.subsets:
        idx = np.asarray(sorted(vk), dtype=int)
        if not _is_pd(s[np.ix_(idx, idx)]):
            raise NotCompletableError("an observed principal block is not positive definite")


def madgq_complete(sigma: PartialCovariance, tol: float = 1e-9, max_iter: int = 5000,
                   theta0: Optional[np.ndarray] = None) -> PrecisionEstimate:
    """Maximise log det(Theta) - <Theta, Sigma>_O subject to Theta_{O^c} = 0.

    Damped Newton ascent over the observed coordinates. The stationarity
    condition [Theta^{-1}]_O = Sigma_O is driven below ``tol`` in max norm.
    """
    _check_completable(sigma)
    mask = sigma.mask
    s0 = sigma.filled(0.0)
    params = _ObservedParams(mask)
    sig_x = params.take(s0)
    theta = np.diag(1.0 / np.diagonal(s0)) if theta0 is None else np.array(theta0, dtype=float)
    theta = np.where(mask, theta, 0.0)
    w, logdet = _chol_inv(theta)
    f = _objective(logdet, theta, s0)
    polished = False
    for it in range(max_iter):
        resid = params.take(w) - sig_x
        gap = np.abs(resid).max()
        if gap <= tol:
            # one extra step buys several digits for downstream exact comparisons
            if polished or gap <= 1e-13:
                break
            polished = True
        grad = params.w * resid
        if params.i.size <= DENSE_HESSIAN_MAX:
            hneg = params.neg_hessian(w)
            try:
                step = sla.solve(hneg, grad, assume_a="pos", check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                step = grad
        else:
            op = params.neg_hessian_op(w)
            wii, wjj, wij = w[params.i, params.i], w[params.j, params.j], w[params.i, params.j]
            diag_h = np.where(params.offdiag, 2.0 * (wii * wjj + wij ** 2), wii ** 2)
            pre = LinearOperator(op.shape, matvec=lambda v: np.ravel(v) / diag_h, dtype=float)
            step, _ = cg(op, grad, rtol=min(1e-2, max(gap, 1e-12)), maxiter=500, M=pre)
        d = params.to_matrix(step)
        decrement = float(grad @ step)
        t = 1.0
        if decrement < 1.0 / 16:
            # Newton decrement below 1/4: the log-det barrier is self-concordant, so the
            # full step stays positive definite and ascends; skip the line search, whose
            # objective comparison is dominated by round-off this close to the optimum
            try:
                w_new, logdet_new = _chol_inv(theta + d)
            except (np.linalg.LinAlgError, ValueError):
                pass
            else:
                theta, w, f = theta + d, w_new, _objective(logdet_new, theta + d, s0)
                continue
        while True:
            cand = theta + t * d
            try:
                w_new, logdet_new = _chol_inv(cand)
            except (np.linalg.LinAlgError, ValueError):
                t *= 0.5
            else:
                f_new = _objective(logdet_new, cand, s0)
                if f_new >= f + 0.25 * t * decrement or t < 1e-12:
                    break
                t *= 0.5
            if t < 1e-14:
                raise NotCompletableError("line search failed to find a positive definite ascent step")
        theta, w, f = cand, w_new, f_new
        if not np.isfinite(f) or np.abs(theta).max() > 1e12:
            raise NotCompletableError("iterates diverged; observed covariance is not completable")
    else:
        raise NotCompletableError(f"no convergence after {max_iter} Newton iterations (gap {gap:.3g})")
    log.debug("madgq_complete converged in %d iterations, gap %.3g", it, gap)
    theta = np.where(mask, theta, 0.0)
    return PrecisionEstimate(theta)


def stationarity_gap(theta: np.ndarray, sigma: PartialCovariance) -> float:
    """max over O of |[Theta^{-1}]_ij - Sigma_ij|."""
    w = np.linalg.inv(theta)
    return float(np.abs(w - sigma.filled(0.0))[sigma.mask].max())


def madgq_k2_closed_form(theta: PrecisionEstimate, part: PartitionABC, check_tol: float = 1e-10) -> PrecisionEstimate:
    """Closed-form MAD_GQ solution when O^c = (A x C) u (C x A)."""
    t = theta.theta
    part.check_covers(t.shape[0])
    a, b, c = part.index("A"), part.index("B"), part.index("C")
    blk = lambda r, s: t[np.ix_(r, s)]
    try:
        inv_cc = np.linalg.inv(blk(c, c))
        inv_aa = np.linalg.inv(blk(a, a))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("singular diagonal block in a positive definite input") from exc
    out = np.zeros_like(t)
    out[np.ix_(a, a)] = blk(a, a) - blk(a, c) @ inv_cc @ blk(c, a)
    out[np.ix_(c, c)] = blk(c, c) - blk(c, a) @ inv_aa @ blk(a, c)
    if b.size:
        ab = blk(a, b) - blk(a, c) @ inv_cc @ blk(c, b)
        bc = blk(b, c) - blk(b, a) @ inv_aa @ blk(a, c)
        out[np.ix_(a, b)] = ab
        out[np.ix_(b, a)] = ab.T
        out[np.ix_(b, c)] = bc
        out[np.ix_(c, b)] = bc.T
        tcc = out[np.ix_(c, c)]
        taa = out[np.ix_(a, a)]
        bb1 = blk(b, b) - blk(b, c) @ inv_cc @ blk(c, b) + bc @ np.linalg.solve(tcc, bc.T)
        bb2 = blk(b, b) - blk(b, a) @ inv_aa @ blk(a, b) + ab.T @ np.linalg.solve(taa, ab)
        if np.abs(bb1 - bb2).max() > check_tol * max(1.0, np.abs(bb1).max()):
            raise ArithmeticError("the two expressions for the separator block disagree")
        out[np.ix_(b, b)] = 0.5 * (bb1 + bb2)
    return PrecisionEstimate(out)


def schur_entangle(theta: PrecisionEstimate | np.ndarray, nodes: Iterable[int]) -> np.ndarray:
    """Theta_UU - Theta_{U U^c} Theta_{U^c U^c}^{-1} Theta_{U^c U}, i.e. (Sigma_UU)^{-1}."""
    t = theta.theta if isinstance(theta, PrecisionEstimate) else np.asarray(theta)
    p = t.shape[0]
    u = np.asarray(sorted(set(int(i) for i in nodes)), dtype=int)
    if u.size == 0:
        raise ValueError("U must be nonempty")
    uc = np.setdiff1d(np.arange(p), u)
    if uc.size == 0:
        raise ValueError("U must have a nonempty complement")
    t_ucuc = t[np.ix_(uc, uc)]
    t_ucu = t[np.ix_(uc, u)]
    c, low = sla.cho_factor(t_ucuc, lower=True)
    out = t[np.ix_(u, u)] - t_ucu.T @ sla.cho_solve((c, low), t_ucu)
    return 0.5 * (out + out.T)


def check_identifiability(theta: PrecisionEstimate, scheme: ObservationScheme) -> bool:
    """True iff every edge of theta lies in O."""
    return all(scheme.observed[e] for e in theta.support)


def check_mutual_incoherence(theta_tilde: PrecisionEstimate) -> Optional[float]:
    """Largest alpha with max_{e not in S} ||Gamma_eS Gamma_SS^{-1}||_1 <= 1 - alpha.

    Gamma = Sigma~ (x) Sigma~ indexed by ordered pairs; S is the support of
    theta_tilde including the diagonal pairs. Returns None when the bound
    exceeds 1 (no admissible alpha).
    """
    t = theta_tilde.theta
    p = t.shape[0]
    if len(theta_tilde.support) == 0:
        return 1.0
    sig = np.linalg.inv(t)
    scale = np.abs(t).max()
    supp = np.abs(t) > SUPPORT_RTOL * scale
    np.fill_diagonal(supp, True)
    si, sj = np.nonzero(supp)
    ni, nj = np.nonzero(~supp)
    if ni.size == 0:
        return 1.0
    # Gamma_{(a,b),(c,d)} = Sigma_ac Sigma_bd
    g_ss = sig[np.ix_(si, si)] * sig[np.ix_(sj, sj)]
    g_ns = sig[np.ix_(ni, si)] * sig[np.ix_(nj, sj)]
    prod = np.linalg.solve(g_ss.T, g_ns.T).T
    worst = np.abs(prod).sum(axis=1).max()
    alpha = 1.0 - worst
    if alpha <= 0:
        return None
    return float(min(alpha, 1.0))
