"""Thresholded graph estimators, distortion statistics and graph-comparison metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .edges import EdgeSet
from .madgq import PrecisionEstimate
from .reco import (DEFAULT_SLACK, diag_maxima, pcor_transform, reco_known_diag, reco_unknown_diag,
                   subset_complements)
from .scheme import ObservationScheme


def _theta(t) -> np.ndarray:
    return t.theta if isinstance(t, PrecisionEstimate) else np.asarray(t, dtype=float)


def threshold_edges(theta, tau: float, restrict: Optional[np.ndarray] = None) -> EdgeSet:
    """Edges with |theta_ij| > tau, optionally limited to the cells of ``restrict``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return EdgeSet.from_matrix(_theta(theta), tau).restrict(restrict)


def estimate_graph_S(theta_hat, scheme: ObservationScheme, true_diag, tau: float, xi: float,
                     slack: float = 0.0) -> EdgeSet:
    """Thresholded graph on O joined with the known-diagonal RECO candidate set."""
    in_o = threshold_edges(theta_hat, tau, scheme.observed)
    return in_o | reco_known_diag(theta_hat, scheme, true_diag, xi, slack).candidate_edges


def estimate_graph_U(theta_hat, scheme: ObservationScheme, tau: float, xi1: float, xi2: float,
                     pcor: bool = False, slack: float = 0.0) -> EdgeSet:
    """Thresholded graph on O joined with the unknown-diagonal RECO candidate set.

    With ``pcor`` both the O-threshold and the RECO band act on partial
    correlations, so tau, xi1, xi2 are on the partial-correlation scale.
    """
    t = _theta(theta_hat)
    in_o = threshold_edges(pcor_transform(t) if pcor else t, tau, scheme.observed)
    return in_o | reco_unknown_diag(t, scheme, xi1, xi2, slack, pcor).candidate_edges


def latent_subgraph(sigma_aa: np.ndarray, nu: float) -> EdgeSet:
    """Edges among the observed block A from thresholding (Sigma_AA)^{-1} at nu/2."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    try:
        prec = np.linalg.inv(np.asarray(sigma_aa, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma_AA is singular") from exc
    return EdgeSet.from_matrix(prec, nu / 2)


def tau_from_sparsity(theta_hat, scheme: ObservationScheme, pi_o: float) -> float:
    """Smallest threshold keeping at most pi_o * |O| edges in O.

    |O| counts unordered off-diagonal observed pairs.
    """
    if not 0 <= pi_o <= 1:
        raise ValueError("pi_o must lie in [0, 1]")
    t = _theta(theta_hat)
    upper = np.triu(scheme.observed, 1)
    mags = np.abs(t[upper])
    budget = math.floor(pi_o * upper.sum() + 1e-12)
    if (mags > 0).sum() <= budget:
        return 0.0
    srt = np.sort(mags)[::-1]
    # keeping the top `budget` magnitudes requires tau >= the (budget+1)-th largest
    return float(srt[budget])


@dataclass(frozen=True)
class DistortionStats:
    delta: float
    nu: float
    delta_pcor: float
    nu_pcor: float
    omega: Optional[float]
    psi1: Optional[float]
    psi2: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def distortion_stats(theta_true, theta_tilde, scheme: ObservationScheme, slack: float = DEFAULT_SLACK
                     ) -> DistortionStats:
    """delta, nu (and partial-correlation analogues), omega and the band margins psi1, psi2."""
    t, tt = _theta(theta_true), _theta(theta_tilde)
    off_o = scheme.observed & ~np.eye(scheme.p, dtype=bool)
    edges_o = off_o & (t != 0)
    if not edges_o.any():
        raise ValueError("no edge in O: nu is undefined")
    delta = float(np.abs(t - tt)[off_o].max()) if off_o.any() else 0.0
    nu = float(np.abs(t[edges_o]).min())
    r, rt = pcor_transform(t), pcor_transform(tt)
    delta_pcor = float(np.abs(r - rt)[off_o].max())
    nu_pcor = float(np.abs(r[edges_o]).min())
    omega = psi1 = psi2 = None
    if scheme.has_subsets:
        comps = subset_complements(tt, scheme)
        bar = diag_maxima(comps, scheme)
        gaps = np.diagonal(t) - bar
        dropped = gaps > slack
        if dropped.any():
            omega = float(gaps[dropped].min())
        band = []
        for c in comps:
            a = np.abs(c[~np.eye(c.shape[0], dtype=bool)])
            band.append(a[(a > slack) & (a < nu - slack)])
        band = np.concatenate(band) if band else np.array([])
        if band.size:
            psi1 = float(band.min() / 2)
            psi2 = float((nu - band.max()) / 2)
    return DistortionStats(delta, nu, delta_pcor, nu_pcor, omega, psi1, psi2)


@dataclass(frozen=True)
class GraphMetrics:
    fpp: Optional[float]
    fnp: Optional[float]
    sens: Optional[float]
    spec: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pair_mask(p: int, restrict: Optional[np.ndarray]) -> np.ndarray:
    m = np.triu(np.ones((p, p), dtype=bool), 1)
    if restrict is not None:
        m &= np.asarray(restrict, dtype=bool)
    return m


def compare_graphs(estimated: EdgeSet, truth: EdgeSet, restrict: Optional[np.ndarray] = None) -> GraphMetrics:
    """Confusion rates over unordered off-diagonal pairs (optionally inside ``restrict``)."""
    if estimated.p != truth.p:
        raise ValueError("edge sets over different node counts")
    cells = _pair_mask(truth.p, restrict)
    est, tru = estimated.to_matrix()[cells], truth.to_matrix()[cells]
    tp = int((est & tru).sum())
    fp = int((est & ~tru).sum())
    fn = int((~est & tru).sum())
    tn = int((~est & ~tru).sum())
    pos, neg = tp + fn, fp + tn
    return GraphMetrics(
        fpp=fp / neg if neg else None,
        fnp=fn / pos if pos else None,
        sens=tp / pos if pos else None,
        spec=tn / neg if neg else None,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def roc_auc(points: Sequence[tuple[float, float]]) -> float:
    """Area under the upper envelope of ROC points, anchored at (0,0) and (1,1).

    The envelope joins the non-dominated points (no other point has a lower
    false-positive rate and a higher sensitivity) by straight segments.
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("need at least two ROC points")
    if ((pts < 0) | (pts > 1)).any():
        raise ValueError("ROC points must lie in the unit square")
    pts = np.vstack([pts, [[0.0, 0.0], [1.0, 1.0]]])
    # sort by x ascending, y descending; a point survives if it beats every point to its left
    order = np.lexsort((-pts[:, 1], pts[:, 0]))
    pts = pts[order]
    xs, ys = [], []
    best = -np.inf
    for x, y in pts:
        if y > best:
            xs.append(x)
            ys.append(y)
            best = y
    if xs[-1] < 1.0:
        xs.append(1.0)  # the best sensitivity stays available at any larger rate
        ys.append(best)
    return float(np.trapezoid(ys, xs))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(fpp, sens) of the rule "score > t" for every distinct t, plus the empty rule.

    Equivalent to calling :func:`compare_graphs` once per threshold; returns
    an empty array when either class is absent.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        return np.empty((0, 2))
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp, fp = np.cumsum(y), np.cumsum(~y)
    ends = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    keep = np.isfinite(s[ends]) | (s[ends] > 0)  # a -inf score is never selected
    pts = np.column_stack([fp[ends][keep] / neg, tp[ends][keep] / pos])
    return np.vstack([[0.0, 0.0], pts])


@dataclass(frozen=True)
class SampleSizes:
    n_o: float
    n_s: Optional[float]
    n_u: Optional[float]


def min_sample_sizes(stats: DistortionStats, p: int, d: int, c_o: float = 1.0,
                     c_s: float = 1.0, c_u: float = 1.0, n_star: float = 0.0) -> SampleSizes:
    """Gaussian-case minimal joint sample sizes for recovery in O, and in O^c via S or U.

    The constants absorb alpha, Gamma and the tail exponent, none of which is
    computable from data. Returns ``math.inf`` where a denominator vanishes;
    None where the required statistic (omega or psi) is absent.
    """
    if stats.delta >= stats.nu / 2:
        raise ValueError("delta must be below nu/2")
    logp = math.log(p)
    margin = stats.nu / 2 - stats.delta
    n_o = max(n_star, c_o * logp / margin ** 2) if margin > 0 else math.inf
    n_s = None
    if stats.omega is not None:
        n_s = max(n_star, c_s * d * p * logp / stats.omega ** 2) if stats.omega > 0 else math.inf
    n_u = None
    if stats.psi1 is not None and stats.psi2 is not None:
        m = min(stats.psi1, stats.psi2)
        n_u = max(n_star, c_u * d * p * logp / m ** 2) if m > 0 else math.inf
    return SampleSizes(n_o, n_s, n_u)


def bootstrap_band(data, subsets, lam: float, nu: float, n_boot: int = 100, seed: int = 0,
                   pcor: bool = False) -> tuple[float, float]:
    """Data-driven (xi1, xi2) = (2 s, nu - 2 s), s the largest bootstrap sd of a complement entry.

    Rows are resampled with replacement, the penalised fit is redone at
    ``lam`` and the subset complements recomputed each time.
    """
    from .gqlasso import gqlasso_fit
    from .scheme import IndicatorData, observed_covariance

    if n_boot < 2:
        raise ValueError("need at least two bootstrap resamples")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_boot):
        rows = rng.integers(0, data.n, size=data.n)
        boot = IndicatorData(data.samples[rows], data.indicators[rows], data.known_means)
        cov = observed_covariance(boot, subsets)
        est, _ = gqlasso_fit(cov, lam)
        comps = subset_complements(est.theta, cov.scheme)
        draws.append(np.concatenate([(pcor_transform(c) if pcor else c)[np.triu_indices(c.shape[0], 1)]
                                     for c in comps]))
    sd = float(np.std(np.asarray(draws), axis=0, ddof=1).max())
    xi1, xi2 = 2 * sd, nu - 2 * sd
    if xi1 >= xi2:
        raise ValueError(f"bootstrap spread {sd:.3g} leaves an empty band below nu={nu}")
    return xi1, xi2
