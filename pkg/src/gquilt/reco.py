"""Recursive-complement (RECO) recovery of edges among never co-observed pairs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .edges import EdgeSet
from .madgq import PartitionABC, PrecisionEstimate, schur_entangle
from .scheme import ObservationScheme

DEFAULT_SLACK = 1e-9
ENUMERATION_MAX_CELLS = 24


@dataclass(frozen=True)
class RecoResult:
    flagged_nodes: frozenset[int]
    candidate_edges: EdgeSet
    lower_bound: int
    per_subset_complements: tuple[np.ndarray, ...] = field(default=(), repr=False)
    mode: str = ""
    info: dict = field(default_factory=dict)

    def to_dict(self, one_based: bool = True) -> dict:
        off = 1 if one_based else 0
        return {
            "mode": self.mode,
            "flagged_nodes": sorted(i + off for i in self.flagged_nodes),
            "candidate_edges": self.candidate_edges.to_list(one_based),
            "lower_bound": int(self.lower_bound),
            **{k: v for k, v in self.info.items()},
        }


def _theta(t) -> np.ndarray:
    return t.theta if isinstance(t, PrecisionEstimate) else np.asarray(t, dtype=float)


def _require_subsets(scheme: ObservationScheme):
    if not scheme.has_subsets:
        raise ValueError("RECO needs the observed subsets V_1..V_K of the scheme")
    covered = frozenset().union(*scheme.subsets)
    if covered != frozenset(range(scheme.p)):
        raise ValueError(f"nodes {sorted(set(range(scheme.p)) - covered)} are not covered by any subset")


def subset_complements(theta_tilde, scheme: ObservationScheme) -> tuple[np.ndarray, ...]:
    """Schur complements of theta_tilde onto every observed subset (sorted node order)."""
    _require_subsets(scheme)
    t = _theta(theta_tilde)
    out = []
    for vk in scheme.subsets:
        if len(vk) == scheme.p:
            out.append(t.copy())
        else:
            out.append(schur_entangle(t, vk))
    return tuple(out)


def pcor_transform(m: np.ndarray) -> np.ndarray:
    """-D^{-1/2} M D^{-1/2} off the diagonal; the diagonal is set to 0."""
    m = np.asarray(m, dtype=float)
    d = np.diagonal(m)
    if (d <= 0).any():
        raise ValueError("partial correlations need a positive diagonal")
    s = 1.0 / np.sqrt(d)
    r = -m * np.outer(s, s)
    np.fill_diagonal(r, 0.0)
    return r


def _upper_oc(scheme: ObservationScheme) -> np.ndarray:
    return np.triu(~scheme.observed, 1)


def _proj_bound(cells: np.ndarray) -> int:
    """max over the two coordinates of the number of distinct projections."""
    if not cells.any():
        return 0
    rows = np.any(cells, axis=1).sum()
    cols = np.any(cells, axis=0).sum()
    return int(max(rows, cols))


def _cover_bound(anchored: np.ndarray, scheme: ObservationScheme) -> int:
    """Fewest unobserved pairs covering every anchored node: |T| - maximum matching inside T.

    Each anchored node carries at least one true edge in O^c, and one edge
    covers at most two of them, so this many true edges are always present.
    """
    nodes = np.nonzero(anchored)[0]
    if nodes.size == 0:
        return 0
    g = nx.Graph()
    g.add_nodes_from(nodes.tolist())
    unobs = ~scheme.observed
    g.add_edges_from((int(i), int(j)) for i, j in itertools.combinations(nodes, 2) if unobs[i, j])
    return int(nodes.size - len(nx.max_weight_matching(g, maxcardinality=True)))


def _anchored(nodes, scheme: ObservationScheme) -> np.ndarray:
    """Nodes i with some V_k containing i such that i is unobserved with all of V_k^c."""
    p = scheme.p
    keep = np.zeros(p, dtype=bool)
    unobs = ~scheme.observed
    for i in nodes:
        for vk in scheme.subsets:
            if i not in vk:
                continue
            comp = np.setdiff1d(np.arange(p), np.fromiter(vk, dtype=int))
            if unobs[i, comp].all():
                keep[i] = True
                break
    return keep


def diag_maxima(complements: Sequence[np.ndarray], scheme: ObservationScheme) -> np.ndarray:
    """For each node, the largest diagonal entry it receives across the subset complements."""
    bar = np.full(scheme.p, -np.inf)
    for vk, comp in zip(scheme.subsets, complements):
        idx = np.asarray(sorted(vk), dtype=int)
        bar[idx] = np.maximum(bar[idx], np.diagonal(comp))
    return bar


def reco_known_diag(theta_tilde, scheme: ObservationScheme, true_diag, xi: float = 0.0,
                    slack: float = DEFAULT_SLACK) -> RecoResult:
    """Algorithm with known diag(Theta): flag nodes whose best complement diagonal falls short.

    A node is flagged when max_k [Theta~^(k)]_ii < Theta_ii + xi - slack; the
    candidate set is every unobserved pair between flagged nodes.
    """
    p = scheme.p
    true_diag = np.asarray(true_diag, dtype=float)
    if true_diag.shape != (p,) or (true_diag <= 0).any():
        raise ValueError("true_diag must be a positive vector of length p")
    comps = subset_complements(theta_tilde, scheme)
    bar = diag_maxima(comps, scheme)
    flagged = bar < true_diag + xi - slack
    cells = _upper_oc(scheme) & np.outer(flagged, flagged)
    f0 = bar < true_diag - slack
    anchored = f0 & _anchored(np.nonzero(f0)[0], scheme)
    omega_cells = _upper_oc(scheme) & np.outer(anchored, anchored)
    info = {"cover_bound": _cover_bound(anchored, scheme)}
    if flagged.all() and xi > 0:
        info["note"] = "xi > 0 flags every node; the candidate set is all unobserved pairs"
    return RecoResult(frozenset(np.nonzero(flagged)[0].tolist()), EdgeSet.from_matrix(cells),
                      _proj_bound(omega_cells), comps, "known_diag", info)


def band_nodes(complements: Sequence[np.ndarray], scheme: ObservationScheme, xi1: float, xi2: float,
               slack: float = DEFAULT_SLACK, pcor: bool = False) -> np.ndarray:
    """Nodes that, in every subset containing them, carry an off-diagonal entry with xi1 < |x| < xi2."""
    p = scheme.p
    hit = np.ones(p, dtype=bool)
    for vk, comp in zip(scheme.subsets, complements):
        idx = np.asarray(sorted(vk), dtype=int)
        m = pcor_transform(comp) if pcor else comp.copy()
        a = np.abs(m)
        np.fill_diagonal(a, np.nan)
        with np.errstate(invalid="ignore"):
            inband = (a > xi1 + slack) & (a < xi2 - slack)
        row = inband.any(axis=1)
        hit[idx] &= row
    return hit


def band_levels(complements: Sequence[np.ndarray], scheme: ObservationScheme, pcor: bool = False,
                slack: float = 0.0) -> np.ndarray:
    """h_i = max_k min_j {|x^(k)_ij| > slack}.

    With xi1 = 0, node i is in the band set exactly when h_i < xi2 - slack.
    """
    h = np.full(scheme.p, -np.inf)
    for vk, comp in zip(scheme.subsets, complements):
        idx = np.asarray(sorted(vk), dtype=int)
        a = np.abs(pcor_transform(comp) if pcor else comp)
        np.fill_diagonal(a, 0.0)
        a[a <= slack] = np.inf
        h[idx] = np.maximum(h[idx], a.min(axis=1))
    return h


def reco_unknown_diag(theta_tilde, scheme: ObservationScheme, xi1: float, xi2: float,
                      slack: float = DEFAULT_SLACK, pcor: bool = False) -> RecoResult:
    """Algorithm without diag(Theta): flag nodes with off-diagonal complement entries inside (xi1, xi2)."""
    if not 0 <= xi1 < xi2:
        raise ValueError("need 0 <= xi1 < xi2")
    comps = subset_complements(theta_tilde, scheme)
    hit = band_nodes(comps, scheme, xi1, xi2, slack, pcor)
    upper = _upper_oc(scheme)
    cells = upper & (hit[:, None] | hit[None, :])
    anchored = hit & _anchored(np.nonzero(hit)[0], scheme)
    bound = _proj_bound(upper & np.outer(anchored, anchored))
    return RecoResult(frozenset(np.nonzero(hit)[0].tolist()), EdgeSet.from_matrix(cells), bound, comps,
                      "unknown_diag_pcor" if pcor else "unknown_diag",
                      {"cover_bound": _cover_bound(anchored, scheme)})


def _k2_pairs(a_nodes, c_nodes, p) -> EdgeSet:
    return EdgeSet.from_pairs(p, ((i, j) for i in a_nodes for j in c_nodes))


def reco_k2_known(theta_tilde, true_diag, part: PartitionABC, slack: float = DEFAULT_SLACK) -> RecoResult:
    """Two-subset case: candidate set A* x C* from the diagonal drops of theta_tilde."""
    t = _theta(theta_tilde)
    p = t.shape[0]
    part.check_covers(p)
    true_diag = np.asarray(true_diag, dtype=float)
    drop = np.diagonal(t) < true_diag - slack
    a_star = sorted(i for i in part.A if drop[i])
    c_star = sorted(j for j in part.C if drop[j])
    m, big_m = min(len(a_star), len(c_star)), max(len(a_star), len(c_star))
    return RecoResult(frozenset(a_star) | frozenset(c_star), _k2_pairs(a_star, c_star, p), big_m,
                      (), "k2_known", {"m": m, "M": big_m, "A_star": a_star, "C_star": c_star})


def reco_k2_unknown(theta_tilde, nu: float, part: PartitionABC, slack: float = DEFAULT_SLACK,
                    pcor: bool = False) -> RecoResult:
    """Two-subset case without diagonals: (A_nu x C) u (A x C_nu)."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    t = _theta(theta_tilde)
    p = t.shape[0]
    part.check_covers(p)
    a = np.abs(pcor_transform(t) if pcor else t)
    np.fill_diagonal(a, 0.0)
    inband = (a > slack) & (a < nu - slack)
    row = inband.any(axis=1)
    a_nu = sorted(i for i in part.A if row[i])
    c_nu = sorted(j for j in part.C if row[j])
    cand = _k2_pairs(a_nu, sorted(part.C), p) | _k2_pairs(sorted(part.A), c_nu, p)
    return RecoResult(frozenset(a_nu) | frozenset(c_nu), cand, max(len(a_nu), len(c_nu)), (),
                      "k2_unknown", {"A_nu": a_nu, "C_nu": c_nu})


def reduce_to_k2(scheme: ObservationScheme) -> Optional[tuple[frozenset[int], frozenset[int]]]:
    """Row and column projections of the upper unobserved set, when they are disjoint.

    The K = 2 superset built on (U1, U2) contains the general candidate set
    but is never smaller, so this is a diagnostic rather than a shortcut.
    """
    i, j = np.nonzero(_upper_oc(scheme))
    if i.size == 0:
        return None
    u1, u2 = frozenset(i.tolist()), frozenset(j.tolist())
    if u1 & u2:
        return None
    return u1, u2


@dataclass(frozen=True)
class StructureCount:
    xi: int
    phi: int
    chi: float


def _covering_count_ie(rows: int, cols: int, k: int) -> int:
    """k-subsets of a rows x cols grid touching every row and column (inclusion-exclusion)."""
    total = 0
    for r in range(rows + 1):
        for c in range(cols + 1):
            cells = (rows - r) * (cols - c)
            total += (-1) ** (r + c) * math.comb(rows, r) * math.comb(cols, c) * math.comb(cells, k)
    return total


def _covering_count_enum(rows: int, cols: int, k: int) -> int:
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    n = 0
    for pick in itertools.combinations(cells, k):
        if len({r for r, _ in pick}) == rows and len({c for _, c in pick}) == cols:
            n += 1
    return n


def structure_count(a_star: int, c_star: int, a_size: int, c_size: int, kappa: int,
                    method: str = "enumerate") -> StructureCount:
    """Number of kappa-edge graphs inside an a_star x c_star candidate grid that explain every distortion.

    ``phi`` counts all kappa-edge graphs between A and C; ``chi = 1 - xi/phi``.
    """
    m, big_m = min(a_star, c_star), max(a_star, c_star)
    if a_star < 1 or c_star < 1 or a_star > a_size or c_star > c_size:
        raise ValueError("candidate grid must be nonempty and fit inside A x C")
    if not big_m <= kappa <= m * big_m:
        raise ValueError(f"kappa must lie in [{big_m}, {m * big_m}]")
    if method == "enumerate":
        if a_star * c_star > ENUMERATION_MAX_CELLS:
            raise ValueError(f"grid of {a_star * c_star} cells is too large to enumerate")
        xi = _covering_count_enum(a_star, c_star, kappa)
    elif method == "formula":
        xi = _covering_count_ie(a_star, c_star, kappa)
    else:
        raise ValueError(f"unknown method {method!r}")
    phi = math.comb(a_size * c_size, kappa)
    return StructureCount(xi, phi, 1.0 - xi / phi)
