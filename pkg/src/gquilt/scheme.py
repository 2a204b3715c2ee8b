"""Observation schemes and pairwise-complete covariance estimation.

Node indices are 0-based throughout the library; file formats use 1-based
indices and are converted at the I/O boundary (see :mod:`gquilt.io`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class SchemeError(ValueError):
    """Invalid observation scheme or data violating the observation assumptions."""


@dataclass(frozen=True)
class ObservationScheme:
    """Block-missing observation design.

    ``observed`` is the boolean p x p mask of jointly observed pairs O.
    ``joint_n`` holds co-observation counts n_ij once data are attached; it is
    ``None`` for a scheme built from subsets alone.
    """

    p: int
    subsets: tuple[frozenset[int], ...]
    observed: np.ndarray
    joint_n: Optional[np.ndarray] = None

    def __post_init__(self):
        self.observed.setflags(write=False)
        if self.joint_n is not None:
            self.joint_n.setflags(write=False)

    @property
    def unobserved(self) -> np.ndarray:
        return ~self.observed

    def upper_unobserved(self) -> list[tuple[int, int]]:
        """Strict upper-triangular part of O^c as sorted (i, j) pairs, i < j."""
        i, j = np.nonzero(np.triu(~self.observed, 1))
        return list(zip(i.tolist(), j.tolist()))

    def upper_observed(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.observed, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def has_subsets(self) -> bool:
        return len(self.subsets) > 0

    def with_counts(self, joint_n: np.ndarray) -> "ObservationScheme":
        return ObservationScheme(self.p, self.subsets, self.observed.copy(),
                                 np.array(joint_n, dtype=np.int64))


def build_scheme(p: int, subsets: Iterable[Iterable[int]]) -> ObservationScheme:
    """Build the scheme with O = union of V_k x V_k over the given subsets."""
    if p < 2:
        raise SchemeError(f"need p >= 2, got {p}")
    blocks = []
    for k, vk in enumerate(subsets):
        vk = frozenset(int(i) for i in vk)
        if not vk:
            raise SchemeError(f"subset {k} is empty")
        bad = [i for i in vk if i < 0 or i >= p]
        if bad:
            raise SchemeError(f"subset {k} has out-of-range indices {sorted(bad)}")
        blocks.append(vk)
    if not blocks:
        raise SchemeError("no subsets given")
    covered = frozenset().union(*blocks)
    if len(covered) != p:
        missing = sorted(set(range(p)) - covered)
        raise SchemeError(f"nodes {missing} are not covered by any subset")
    observed = np.zeros((p, p), dtype=bool)
    for vk in blocks:
        idx = np.fromiter(sorted(vk), dtype=int)
        observed[np.ix_(idx, idx)] = True
    return ObservationScheme(p, tuple(blocks), observed)


def scheme_from_mask(observed: np.ndarray, joint_n: Optional[np.ndarray] = None) -> ObservationScheme:
    """Scheme defined directly by its observed-pair mask (no subset list)."""
    observed = np.asarray(observed, dtype=bool)
    if observed.ndim != 2 or observed.shape[0] != observed.shape[1]:
        raise SchemeError("observed mask must be square")
    if not np.array_equal(observed, observed.T):
        raise SchemeError("observed mask must be symmetric")
    if not observed.diagonal().all():
        raise SchemeError("every variable must be observed (diagonal of O)")
    return ObservationScheme(observed.shape[0], (), observed.copy(),
                             None if joint_n is None else np.array(joint_n, dtype=np.int64))


def full_scheme(p: int) -> ObservationScheme:
    return build_scheme(p, [range(p)])


def missingness_ratio(scheme: ObservationScheme) -> float:
    """eta = |O^c| / p^2, counting ordered pairs."""
    return float((~scheme.observed).sum()) / scheme.p ** 2


def min_joint_sample_size(scheme: ObservationScheme) -> int:
    """Minimum co-observation count over O."""
    if scheme.joint_n is None:
        raise SchemeError("joint sample sizes are not populated")
    if not scheme.observed.any():
        raise SchemeError("O is empty")
    return int(scheme.joint_n[scheme.observed].min())


@dataclass(frozen=True)
class IndicatorData:
    """n x p samples with an n x p observation-indicator matrix."""

    samples: np.ndarray
    indicators: np.ndarray
    known_means: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.samples.shape != self.indicators.shape:
            raise SchemeError("samples and indicators must have the same shape")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_nan(cls, x: np.ndarray, known_means=None) -> "IndicatorData":
        """Treat NaN cells as unobserved."""
        x = np.asarray(x, dtype=float)
        ind = ~np.isnan(x)
        return cls(np.where(ind, x, 0.0), ind, known_means)


@dataclass(frozen=True)
class PartialCovariance:
    """Covariance values defined only where ``scheme.observed`` is True.

    Entries outside O hold NaN in ``values`` but consumers must go through
    ``mask``; the solvers never read an unobserved cell.
    """

    values: np.ndarray
    scheme: ObservationScheme = field(repr=False)

    def __post_init__(self):
        v = np.where(self.scheme.observed, self.values, np.nan)
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def p(self) -> int:
        return self.scheme.p

    @property
    def mask(self) -> np.ndarray:
        return self.scheme.observed

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Dense copy with unobserved cells replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def max_abs(self) -> float:
        return float(np.abs(self.values[self.mask]).max())

    @classmethod
    def from_population(cls, sigma: np.ndarray, scheme: ObservationScheme) -> "PartialCovariance":
        return cls(np.array(sigma, dtype=float), scheme)


def joint_counts(indicators: np.ndarray) -> np.ndarray:
    ind = np.asarray(indicators, dtype=float)
    return np.rint(ind.T @ ind).astype(np.int64)


def observed_covariance(data: IndicatorData, subsets: Optional[Sequence[Iterable[int]]] = None) -> PartialCovariance:
    """Pairwise-complete sample covariance.

    Sigma_ij = m_ij - m_i m_j where m_ij averages X_i X_j over the rows that
    observe both variables and m_i averages X_i over every row observing i
    (or equals the known mean). Pairs with n_ij <= 1 are left out of O.
    """
    ind = np.asarray(data.indicators, dtype=bool)
    x = np.asarray(data.samples, dtype=float)
    if not np.isfinite(x[ind]).all():
        raise SchemeError("non-finite value in an observed cell")
    xz = np.where(ind, x, 0.0)
    nij = joint_counts(ind)
    diag = np.diagonal(nij)
    if (diag <= 1).any():
        bad = np.nonzero(diag <= 1)[0].tolist()
        raise SchemeError(f"variables {bad} are observed at most once (each n_ii must exceed 1)")
    cross = xz.T @ xz
    observed = nij > 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mij = np.where(observed, cross / np.where(observed, nij, 1), np.nan)
    if data.known_means is not None:
        mi = np.asarray(data.known_means, dtype=float)
        if mi.shape != (data.p,):
            raise SchemeError("known_means must have length p")
    else:
        mi = xz.sum(axis=0) / diag
    values = mij - np.outer(mi, mi)
    values = 0.5 * (values + values.T)
    if subsets is not None:
        base = build_scheme(data.p, subsets)
        if not np.array_equal(observed, base.observed):
            raise SchemeError("pairs with n_ij > 1 do not match the declared subsets")
        scheme = ObservationScheme(data.p, base.subsets, observed, nij)
    else:
        scheme = scheme_from_mask(observed, nij)
    return PartialCovariance(values, scheme)


def observed_covariance_from_moments(p: int, blocks: Sequence[tuple[Sequence[int], int, np.ndarray, np.ndarray]],
                                     subsets: Optional[Sequence[Iterable[int]]] = None,
                                     known_means: Optional[np.ndarray] = None) -> PartialCovariance:
    """Same estimator as :func:`observed_covariance`, from per-block sufficient statistics.

    Each block is ``(nodes, count, column_sums, cross_products)`` summarising
    ``count`` rows that observe exactly ``nodes``.
    """
    nij = np.zeros((p, p), dtype=np.int64)
    sums = np.zeros(p)
    cross = np.zeros((p, p))
    for nodes, count, s, c in blocks:
        idx = np.asarray(sorted(nodes), dtype=int)
        nij[np.ix_(idx, idx)] += int(count)
        sums[idx] += s
        cross[np.ix_(idx, idx)] += c
    diag = np.diagonal(nij)
    if (diag <= 1).any():
        bad = np.nonzero(diag <= 1)[0].tolist()
        raise SchemeError(f"variables {bad} are observed at most once (each n_ii must exceed 1)")
    observed = nij > 1
    mij = np.where(observed, cross / np.where(observed, nij, 1), np.nan)
    mi = np.asarray(known_means, dtype=float) if known_means is not None else sums / diag
    values = mij - np.outer(mi, mi)
    values = 0.5 * (values + values.T)
    if subsets is not None:
        base = build_scheme(p, subsets)
        if not np.array_equal(observed, base.observed):
            raise SchemeError("pairs with n_ij > 1 do not match the declared subsets")
        scheme = ObservationScheme(p, base.subsets, observed, nij)
    else:
        scheme = scheme_from_mask(observed, nij)
    return PartialCovariance(values, scheme)
