import math

import numpy as np
import pytest

from gquilt.edges import EdgeSet
from gquilt.madgq import PartitionABC, PrecisionEstimate, madgq_complete, madgq_k2_closed_form
from gquilt.reco import (band_levels, band_nodes, pcor_transform, reco_k2_known, reco_k2_unknown,
                         reco_known_diag, reco_unknown_diag, reduce_to_k2, structure_count, subset_complements)
from gquilt.scheme import PartialCovariance, build_scheme, full_scheme

from oracles import covering_subsets, random_precision

THETA3 = np.array([[1, .3, .2], [.3, 1, .3], [.2, .3, 1.]])
SCHEME3 = build_scheme(3, [[0, 1], [1, 2]])


def completion(theta, scheme):
    return madgq_complete(PartialCovariance.from_population(np.linalg.inv(theta), scheme))


@pytest.fixture(scope="module")
def tt3():
    return completion(THETA3, SCHEME3)


def test_known_diag_three_node(tt3):
    r = reco_known_diag(tt3, SCHEME3, np.ones(3))
    assert r.candidate_edges.to_list() == [[1, 3]]
    assert r.lower_bound == 1
    # node 2 also loses diagonal mass in both complements (0.97 - 0.24^2/0.96 = 0.91 < 1)
    assert r.flagged_nodes == {0, 1, 2}
    assert all(c.shape == (2, 2) for c in r.per_subset_complements)


def test_known_diag_without_oc_edges_is_empty():
    theta = THETA3.copy()
    theta[0, 2] = theta[2, 0] = 0
    r = reco_known_diag(completion(theta, SCHEME3), SCHEME3, np.ones(3))
    assert len(r.candidate_edges) == 0 and r.lower_bound == 0


def test_positive_xi_flags_everything(tt3):
    r = reco_known_diag(tt3, SCHEME3, np.ones(3), xi=1.0)
    assert r.flagged_nodes == {0, 1, 2}
    assert "note" in r.info


def test_unknown_diag_three_node(tt3):
    r = reco_unknown_diag(tt3, SCHEME3, 0.0, 0.3)
    assert r.candidate_edges.to_list() == [[1, 3]]
    assert r.lower_bound <= len(r.candidate_edges)
    with pytest.raises(ValueError):
        reco_unknown_diag(tt3, SCHEME3, 0.3, 0.3)


def test_unknown_diag_without_oc_edges_is_empty():
    theta = THETA3.copy()
    theta[0, 2] = theta[2, 0] = 0
    r = reco_unknown_diag(completion(theta, SCHEME3), SCHEME3, 0.0, 0.3)
    assert len(r.candidate_edges) == 0


def test_k2_known_three_node(tt3):
    r = reco_k2_known(tt3, np.ones(3), PartitionABC({0}, {1}, {2}))
    assert r.info["A_star"] == [0] and r.info["C_star"] == [2]
    assert r.info["m"] == r.info["M"] == 1
    assert r.candidate_edges.to_list() == [[1, 3]]


def test_k2_known_no_cross_edges():
    theta = THETA3.copy()
    theta[0, 2] = theta[2, 0] = 0
    r = reco_k2_known(completion(theta, SCHEME3), np.ones(3), PartitionABC({0}, {1}, {2}))
    assert len(r.candidate_edges) == 0 and r.flagged_nodes == frozenset()


def test_k2_known_single_pair_is_exact():
    rng = np.random.default_rng(0)
    p = 8
    theta = random_precision(rng, p, density=0.4)
    a, b, c = [0, 1, 2], [3, 4], [5, 6, 7]
    theta[np.ix_(a, c)] = 0
    theta[np.ix_(c, a)] = 0
    theta[1, 6] = theta[6, 1] = 0.3
    theta[np.diag_indices(p)] += 0.3
    part = PartitionABC(a, b, c)
    tt = madgq_k2_closed_form(PrecisionEstimate(theta), part)
    r = reco_k2_known(tt, np.diagonal(theta), part)
    assert r.candidate_edges.to_list(one_based=False) == [[1, 6]]


def test_k2_unknown_worked_scenario():
    # nodes 1..15 (0-based 0..14): A = 1..5, B = 6..10, C = 11..15, A_nu = {5}, C_nu = {11}
    p = 15
    part = PartitionABC(range(0, 5), range(5, 10), range(10, 15))
    tt = np.eye(p)
    tt[4, 7] = tt[7, 4] = 0.05   # distorted, below nu
    tt[10, 8] = tt[8, 10] = 0.05
    tt[0, 1] = tt[1, 0] = 0.5    # undistorted, above nu
    r = reco_k2_unknown(tt, 0.2, part)
    want = {(4, j) for j in range(10, 15)} | {(i, 10) for i in range(0, 5)}
    assert r.candidate_edges.edges == frozenset(want)
    assert r.info["A_nu"] == [4] and r.info["C_nu"] == [10]
    assert r.lower_bound == 1


def test_k2_unknown_small_nu_is_empty(tt3):
    r = reco_k2_unknown(tt3, 0.01, PartitionABC({0}, {1}, {2}))
    assert len(r.candidate_edges) == 0


def test_general_algorithm_reduces_to_k2():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = 9
        theta = random_precision(rng, p, density=0.5)
        part = PartitionABC([0, 1, 2], [3, 4, 5], [6, 7, 8])
        scheme = build_scheme(p, part.subsets())
        tt = madgq_k2_closed_form(PrecisionEstimate(theta), part)
        a = reco_known_diag(tt, scheme, np.diagonal(theta))
        b = reco_k2_known(tt, np.diagonal(theta), part)
        assert a.candidate_edges == b.candidate_edges


def test_minimality_of_k2_grid():
    rng = np.random.default_rng(2)
    p = 8
    theta = random_precision(rng, p, density=0.6)
    part = PartitionABC([0, 1, 2], [3, 4], [5, 6, 7])
    tt = madgq_k2_closed_form(PrecisionEstimate(theta), part)
    r = reco_k2_known(tt, np.diagonal(theta), part)
    a_star, c_star = r.info["A_star"], r.info["C_star"]
    assert a_star and c_star
    # each flagged node is the only explanation for its own diagonal drop
    for drop in a_star + c_star:
        rest = EdgeSet.from_pairs(p, [(i, j) for i in a_star for j in c_star if drop not in (i, j)])
        covered = {v for e in rest for v in e}
        assert drop not in covered


def test_pcor_transform():
    r = pcor_transform(np.array([[1, .3], [.3, 1.]]))
    assert r[0, 1] == pytest.approx(-0.3) and r[0, 0] == 0
    m = np.array([[2.0, .5, 0], [.5, 3.0, .2], [0, .2, 1.5]])
    np.testing.assert_allclose(pcor_transform(m), pcor_transform(7 * m))
    assert (pcor_transform(np.diag([1.0, 2.0])) == 0).all()
    with pytest.raises(ValueError):
        pcor_transform(np.diag([1.0, 0.0]))


def test_reduce_to_k2():
    assert reduce_to_k2(full_scheme(4)) is None
    s = build_scheme(5, [[0, 1, 2], [2, 3, 4]])
    assert reduce_to_k2(s) == (frozenset({0, 1}), frozenset({3, 4}))
    # four subsets whose unobserved pairs still split into disjoint row/column sets
    chained = build_scheme(6, [[0, 1, 2], [2, 3, 4], [3, 4, 5], [5, 0]])
    assert reduce_to_k2(chained) == (frozenset({0, 1, 2}), frozenset({3, 4, 5}))
    # node 1 is missing with both 0 and 2, so it lands on both sides
    assert reduce_to_k2(build_scheme(4, [[0, 2, 3], [1, 3]])) is None


def test_band_levels_match_band_nodes():
    rng = np.random.default_rng(3)
    theta = random_precision(rng, 10, density=0.4)
    scheme = build_scheme(10, [range(0, 6), range(3, 9), [8, 9, 0]])
    comps = subset_complements(theta, scheme)
    h = band_levels(comps, scheme)
    for xi2 in np.unique(np.r_[h[np.isfinite(h)], h[np.isfinite(h)] + 1e-9, 0.05, 10.0]):
        assert np.array_equal(band_nodes(comps, scheme, 0.0, xi2, 0.0), h < xi2)


@pytest.mark.parametrize("rows, cols, k", [(2, 2, 2), (2, 3, 3), (3, 3, 4), (2, 4, 5), (3, 3, 3)])
def test_structure_count_matches_enumeration_oracle(rows, cols, k):
    got = structure_count(rows, cols, 5, 5, k)
    assert got.xi == covering_subsets(rows, cols, k)
    assert structure_count(rows, cols, 5, 5, k, method="formula").xi == got.xi
    assert got.phi == math.comb(25, k)


def test_structure_count_worked_examples():
    a = structure_count(2, 2, 3, 4, 2)
    assert (a.xi, a.phi) == (2, 66)
    b = structure_count(4, 5, 7, 7, 5)
    assert (b.xi, b.phi) == (240, 1906884)
    c = structure_count(1, 1, 1, 1, 1)
    assert (c.xi, c.phi, c.chi) == (1, 1, 0.0)


def test_structure_count_errors():
    with pytest.raises(ValueError):
        structure_count(2, 3, 4, 4, 2)   # kappa below max(a*, c*)
    with pytest.raises(ValueError):
        structure_count(2, 3, 4, 4, 7)   # kappa above a* c*
    with pytest.raises(ValueError):
        structure_count(5, 5, 6, 6, 5)   # 25 cells: too many to enumerate
    assert structure_count(5, 5, 6, 6, 5, method="formula").xi == 120


def test_cover_bound_hand_example():
    # four anchored nodes, all pairs unobserved: two disjoint edges can cover them, so two is sound
    from gquilt.reco import _cover_bound
    scheme = build_scheme(6, [[0, 4, 5], [1, 4, 5], [2, 4, 5], [3, 4, 5]])
    anchored = np.array([True, True, True, True, False, False])
    assert _cover_bound(anchored, scheme) == 2
    assert _cover_bound(np.zeros(6, bool), scheme) == 0


def test_cover_bound_counts_true_edges_on_random_instances():
    from oracles import random_subsets
    rng = np.random.default_rng(11)
    for _ in range(60):
        p = int(rng.integers(6, 16))
        scheme = build_scheme(p, random_subsets(rng, p, int(rng.integers(2, 5))))
        theta = random_precision(rng, p, density=0.3)
        tt = completion(theta, scheme)
        oc_true = {(i, j) for i, j in zip(*np.nonzero(np.triu(~scheme.observed & (theta != 0), 1)))}
        s = reco_known_diag(tt, scheme, np.diagonal(theta))
        assert len(oc_true & s.candidate_edges.edges) >= s.info["cover_bound"]
        o_mags = np.abs(theta[np.triu(scheme.observed & (theta != 0), 1)])
        if o_mags.size:
            u = reco_unknown_diag(tt, scheme, 0.0, float(o_mags.min()))
            assert len(oc_true & u.candidate_edges.edges) >= u.info["cover_bound"]


def test_cover_bound_equals_projection_bound_for_two_subsets():
    rng = np.random.default_rng(12)
    for _ in range(20):
        p = 9
        theta = random_precision(rng, p, density=0.5)
        part = PartitionABC([0, 1, 2], [3, 4, 5], [6, 7, 8])
        scheme = build_scheme(p, part.subsets())
        tt = madgq_k2_closed_form(PrecisionEstimate(theta), part)
        r = reco_known_diag(tt, scheme, np.diagonal(theta))
        assert r.info["cover_bound"] == r.lower_bound == reco_k2_known(tt, np.diagonal(theta), part).info["M"]
