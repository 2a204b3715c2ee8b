"""l1-penalised graph-quilting estimator and the full-data graphical lasso."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .madgq import PrecisionEstimate
from .scheme import PartialCovariance, SchemeError, full_scheme

log = logging.getLogger(__name__)


class SolverError(ArithmeticError):
    def __init__(self, msg: str, report: "SolverReport"):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class PenaltySpec:
    """Nonnegative off-diagonal penalty matrix; the diagonal is never penalised."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("penalty matrix must be square")
        if (m < 0).any() or not np.isfinite(m).all():
            raise ValueError("penalties must be finite and nonnegative")
        m = 0.5 * (m + m.T)
        np.fill_diagonal(m, 0.0)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def scalar(cls, lam: float, p: int) -> "PenaltySpec":
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        return cls(np.full((p, p), float(lam)))

    @classmethod
    def coerce(cls, penalty, p: int) -> "PenaltySpec":
        if isinstance(penalty, PenaltySpec):
            return penalty
        if np.isscalar(penalty):
            return cls.scalar(float(penalty), p)
        return cls(np.asarray(penalty))

    def mean_offdiag(self) -> float:
        p = self.matrix.shape[0]
        return float(self.matrix.sum() / (p * (p - 1))) if p > 1 else 0.0


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    final_gap: float
    objective: float
    converged: bool
    tol: float
    regime: str = "unique"

    def to_dict(self) -> dict:
        return asdict(self)


def penalized_objective(theta: np.ndarray, sigma: PartialCovariance, lam: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return -np.inf
    s0 = sigma.filled(0.0)
    return float(logdet - np.sum(theta * s0) - np.sum(lam * np.abs(theta)))


def _kkt_gap(theta, w, s0, lam, mask):
    g = w - s0
    nz = theta != 0
    r = np.where(nz, np.abs(g - lam * np.sign(theta)), np.maximum(np.abs(g) - lam, 0.0))
    np.fill_diagonal(r, np.abs(np.diagonal(g)))
    return float(r[mask].max())


def _soft(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def _inv_logdet(theta):
    c, low = sla.cho_factor(theta, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    w = sla.cho_solve((c, low), np.eye(theta.shape[0]), check_finite=False)
    return 0.5 * (w + w.T), logdet


def gqlasso_fit(sigma_hat: PartialCovariance, penalty, tol: float = 1e-7, max_iter: int = 20000,
                theta0: Optional[np.ndarray] = None, strict: bool = True
                ) -> tuple[PrecisionEstimate, SolverReport]:
    """Maximise log det(T) - sum_O T_ij S_ij - ||L o T||_1,off subject to T_{O^c} = 0.

    Proximal-gradient ascent with Barzilai-Borwein step proposals and
    backtracking that keeps every iterate positive definite. Stops once the
    KKT residual on O drops below ``tol * ||S_O||_inf``.
    """
    p = sigma_hat.p
    mask = sigma_hat.mask
    lam = PenaltySpec.coerce(penalty, p).matrix
    s0 = sigma_hat.filled(0.0)
    if not np.isfinite(s0[mask]).all():
        raise SchemeError("non-finite observed covariance entry")
    d = np.diagonal(s0)
    if (d <= 0).any():
        raise SchemeError("observed variances must be positive")
    lam = np.where(mask, lam, 0.0)
    off = mask & ~np.eye(p, dtype=bool)
    regime = "unique" if (lam[off] > 0).all() else "lambda_zero"
    abs_tol = tol * max(np.abs(s0[mask]).max(), 1e-300)

    if theta0 is None:
        lbar = float(lam[off].mean()) if off.any() else 0.0
        theta = np.diag(1.0 / (d + lbar))
    else:
        theta = np.where(mask, np.array(theta0, dtype=float), 0.0)
    try:
        w, logdet = _inv_logdet(theta)
    except np.linalg.LinAlgError:
        theta = np.diag(1.0 / d)
        w, logdet = _inv_logdet(theta)
    smooth = -logdet + float(np.sum(theta * s0))
    t = float(np.linalg.eigvalsh(theta)[0]) ** 2
    gap = _kkt_gap(theta, w, s0, lam, mask)
    it = 0
    while gap > abs_tol and it < max_iter:
        it += 1
        grad = s0 - w
        while True:
            cand = theta - t * grad
            cand = np.where(off, _soft(cand, t * lam), cand)
            cand = np.where(mask, cand, 0.0)
            step = cand - theta
            try:
                w_new, logdet_new = _inv_logdet(cand)
            except (np.linalg.LinAlgError, ValueError):
                t *= 0.5
                continue
            smooth_new = -logdet_new + float(np.sum(cand * s0))
            bound = smooth + float(np.sum(grad * step)) + float(np.sum(step * step)) / (2 * t)
            if smooth_new <= bound + 1e-14 * abs(smooth) or t < 1e-14:
                break
            t *= 0.5
        dw = w - w_new
        denom = float(np.sum(step * dw))
        ss = float(np.sum(step * step))
        theta, w, smooth = cand, w_new, smooth_new
        gap = _kkt_gap(theta, w, s0, lam, mask)
        if ss == 0.0:
            break
        t = ss / denom if denom > 0 else t * 2.0
        t = min(max(t, 1e-10), 1e10)
    theta = np.where(mask, theta, 0.0)
    obj = -smooth - float(np.sum(lam * np.abs(theta)))
    report = SolverReport(it, gap / max(np.abs(s0[mask]).max(), 1e-300), obj, bool(gap <= abs_tol), tol, regime)
    if not report.converged and strict:
        raise SolverError(f"no convergence after {it} iterations (relative KKT gap {report.final_gap:.3g})", report)
    return PrecisionEstimate(theta), report


def glasso_fit(sigma_hat: np.ndarray, lam: float, **kw) -> tuple[PrecisionEstimate, SolverReport]:
    """Graphical lasso on a fully observed covariance (diagonal unpenalised)."""
    s = np.asarray(sigma_hat, dtype=float)
    return gqlasso_fit(PartialCovariance(s, full_scheme(s.shape[0])), lam, **kw)


def fit_path(sigma_hat: PartialCovariance, lambdas: Sequence[float], **kw
             ) -> list[tuple[float, PrecisionEstimate, SolverReport]]:
    """Fits along a lambda grid, warm-started from the next larger lambda."""
    out = []
    theta0 = None
    for lam in sorted(set(float(x) for x in lambdas), reverse=True):
        est, rep = gqlasso_fit(sigma_hat, lam, theta0=theta0, **kw)
        theta0 = est.theta
        out.append((lam, est, rep))
    return out


def theory_penalty(n_bar: float, p: int, gamma: float, alpha: float, c: float = 1.0) -> float:
    """(8 / alpha) * c * sqrt(log(p**gamma) / n_bar), the Gaussian-tail penalty level."""
    if gamma <= 2:
        raise ValueError("gamma must exceed 2")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if n_bar < 2:
        raise ValueError("n_bar must be at least 2")
    return 8.0 / alpha * c * math.sqrt(gamma * math.log(p) / n_bar)


def oracle_lambda(lambda_grid: Sequence[float], sigma_hat: PartialCovariance, theta_tilde_reference: np.ndarray,
                  return_fits: bool = False, **kw):
    """Grid lambda minimising ||Theta_hat(lambda) - Theta~||_max; ties go to the larger lambda."""
    if len(lambda_grid) == 0:
        raise ValueError("empty lambda grid")
    ref = np.asarray(theta_tilde_reference)
    path = fit_path(sigma_hat, lambda_grid, **kw)
    best = None
    for lam, est, rep in path:  # descending lambda, strict improvement keeps ties at larger lambda
        loss = float(np.abs(est.theta - ref).max())
        if best is None or loss < best[1]:
            best = (lam, loss, est, rep)
    if return_fits:
        return best
    return best[0]
