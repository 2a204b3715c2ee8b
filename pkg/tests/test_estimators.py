import math

import numpy as np
import pytest

from gquilt.edges import EdgeSet
from gquilt.estimators import (DistortionStats, compare_graphs, distortion_stats, estimate_graph_S,
                               estimate_graph_U, latent_subgraph, min_sample_sizes, roc_auc, roc_points,
                               tau_from_sparsity, threshold_edges)
from gquilt.madgq import madgq_complete
from gquilt.scheme import PartialCovariance, build_scheme, full_scheme

from oracles import auc_fine_grid, random_precision

THETA3 = np.array([[1, .3, .2], [.3, 1, .3], [.2, .3, 1.]])
SCHEME3 = build_scheme(3, [[0, 1], [1, 2]])


@pytest.fixture(scope="module")
def tt3():
    return madgq_complete(PartialCovariance.from_population(np.linalg.inv(THETA3), SCHEME3)).theta


def test_compare_graphs_five_nodes():
    truth = EdgeSet.from_pairs(5, [(0, 1), (2, 3)])
    est = EdgeSet.from_pairs(5, [(0, 1), (1, 4)])
    m = compare_graphs(est, truth)
    assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 7)
    assert m.sens == 0.5 and m.fpp == pytest.approx(1 / 8)
    assert m.fpp + m.spec == pytest.approx(1) and m.fnp + m.sens == pytest.approx(1)


def test_compare_graphs_identical_and_degenerate():
    g = EdgeSet.from_pairs(4, [(0, 1), (1, 2)])
    m = compare_graphs(g, g)
    assert m.sens == 1 and m.spec == 1 and m.fpp == 0
    empty = compare_graphs(EdgeSet.empty(3), EdgeSet.empty(3))
    assert empty.sens is None and empty.spec == 1
    with pytest.raises(ValueError):
        compare_graphs(EdgeSet.empty(3), EdgeSet.empty(4))


def test_compare_graphs_restricted_to_region():
    truth = EdgeSet.from_pairs(3, [(0, 1), (0, 2)])
    est = EdgeSet.from_pairs(3, [(0, 1)])
    oc = ~SCHEME3.observed
    m = compare_graphs(est, truth, oc)
    assert (m.tp, m.fp, m.fn, m.tn) == (0, 0, 1, 0)
    assert m.fpp is None and m.sens == 0.0


def test_roc_auc_examples():
    three = [(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)]
    assert roc_auc(three) == pytest.approx(0.5 * 0.2 * 0.8 + 0.8 * 0.8 + 0.5 * 0.8 * 0.2)
    assert roc_auc(three) == pytest.approx(auc_fine_grid(three), abs=1e-8)
    pts = [(0.0, 0.0), (0.2, 0.6), (0.5, 0.9), (1.0, 1.0)]
    assert roc_auc(pts) == pytest.approx(auc_fine_grid(pts), abs=1e-8)
    assert roc_auc([(0, 0), (1, 1)]) == pytest.approx(0.5)
    assert roc_auc([(0, 1), (1, 1)]) == pytest.approx(1.0)
    # dominated points never lower the curve
    assert roc_auc(pts + [(0.6, 0.1)]) == pytest.approx(roc_auc(pts))
    with pytest.raises(ValueError):
        roc_auc([(0.2, 1.5), (0, 0)])


def test_roc_auc_matches_fine_grid_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = rng.uniform(size=(6, 2))
        assert roc_auc(pts) == pytest.approx(auc_fine_grid(pts), abs=1e-8)


def test_roc_points_match_threshold_loop():
    rng = np.random.default_rng(1)
    p = 9
    scores = np.round(rng.uniform(size=(p, p)), 1)
    scores = np.triu(scores, 1)
    truth_m = np.triu(rng.uniform(size=(p, p)) < 0.3, 1)
    iu = np.triu_indices(p, 1)
    pts = roc_points(scores[iu], truth_m[iu])
    truth = EdgeSet.from_matrix((truth_m | truth_m.T).astype(float))
    want = [(0.0, 0.0)]
    for t in sorted(set(scores[iu]), reverse=True):
        est = EdgeSet.from_pairs(p, [(i, j) for i, j in zip(*iu) if scores[i, j] >= t])
        m = compare_graphs(est, truth)
        want.append((m.fpp, m.sens))
    np.testing.assert_allclose(pts, np.array(want))


def test_roc_points_edge_cases():
    assert roc_points(np.array([1.0, 2.0]), np.array([True, True])).shape == (0, 2)
    pts = roc_points(np.array([-np.inf, 1.0]), np.array([False, True]))
    np.testing.assert_allclose(pts, [[0, 0], [0, 1]])


def test_threshold_is_strict_and_monotone():
    t = np.array([[1, .3, -.2], [.3, 1, 0], [-.2, 0, 1.]])
    assert threshold_edges(t, 0.2).to_list(one_based=False) == [[0, 1]]
    assert len(threshold_edges(t, 0.19)) == 2
    rng = np.random.default_rng(2)
    r = random_precision(rng, 10, density=0.5)
    sizes = [len(threshold_edges(r, tau)) for tau in np.linspace(0, 0.5, 11)]
    assert sizes == sorted(sizes, reverse=True)
    with pytest.raises(ValueError):
        threshold_edges(t, -0.1)


def test_threshold_restricted_to_o(tt3):
    assert len(threshold_edges(THETA3, 0.1, SCHEME3.observed)) == 2


def test_tau_from_sparsity():
    t = np.eye(4)
    for (i, j), v in {(0, 1): .5, (0, 2): .3, (1, 2): .1, (2, 3): .05}.items():
        t[i, j] = t[j, i] = v
    s = full_scheme(4)
    # |O| = 6 pairs; keeping at most 3 needs tau at the fourth largest magnitude (0.05)
    tau = tau_from_sparsity(t, s, 0.5)
    assert tau == 0.05 and len(threshold_edges(t, tau)) == 3
    tau = tau_from_sparsity(t, s, 2 / 6)
    assert tau == 0.1 and len(threshold_edges(t, tau)) == 2
    assert tau_from_sparsity(t, s, 1.0) == 0.0
    assert len(threshold_edges(t, tau_from_sparsity(t, s, 0.0))) == 0
    with pytest.raises(ValueError):
        tau_from_sparsity(t, s, 1.5)


def test_distortion_stats_three_node(tt3):
    st = distortion_stats(THETA3, tt3, SCHEME3)
    assert st.delta == pytest.approx(0.06)
    assert st.nu == pytest.approx(0.3)
    # independent complements: inverse of the completed covariance restricted to each subset
    sig = np.linalg.inv(tt3)
    diag_max = np.full(3, -np.inf)
    for vk in ([0, 1], [1, 2]):
        c = np.linalg.inv(sig[np.ix_(vk, vk)])
        diag_max[vk] = np.maximum(diag_max[vk], np.diagonal(c))
    gaps = 1.0 - diag_max
    assert st.omega == pytest.approx(gaps[gaps > 1e-9].min())
    assert st.psi1 is not None and st.psi2 is not None


def test_distortion_stats_zero_when_identifiable():
    t = np.eye(4)
    t[0, 1] = t[1, 0] = 0.3
    s = build_scheme(4, [[0, 1, 2], [2, 3]])
    tt = madgq_complete(PartialCovariance.from_population(np.linalg.inv(t), s)).theta
    st = distortion_stats(t, tt, s)
    assert st.delta == pytest.approx(0, abs=1e-9) and st.omega is None
    with pytest.raises(ValueError):
        distortion_stats(np.eye(3), np.eye(3), SCHEME3)


def test_min_sample_sizes():
    st = DistortionStats(delta=0.05, nu=0.3, delta_pcor=0, nu_pcor=0.3, omega=0.04, psi1=0.01, psi2=0.02)
    n = min_sample_sizes(st, p=100, d=3)
    assert n.n_o == pytest.approx(math.log(100) / 0.1 ** 2)
    assert n.n_s == pytest.approx(3 * 100 * math.log(100) / 0.04 ** 2)
    assert n.n_u == pytest.approx(3 * 100 * math.log(100) / 0.01 ** 2)
    assert min_sample_sizes(st, 100, 3, n_star=1e12).n_o == 1e12
    zero = DistortionStats(0.0, 0.3, 0, 0.3, 0.0, None, None)
    z = min_sample_sizes(zero, 10, 2)
    assert z.n_s == math.inf and z.n_u is None
    with pytest.raises(ValueError):
        min_sample_sizes(DistortionStats(0.2, 0.3, 0, 0.3, None, None, None), 10, 2)


def test_latent_subgraph():
    theta = np.array([[1, .4, .2, 0], [.4, 1, 0, .2], [.2, 0, 1, 0], [0, .2, 0, 1.]])
    sig = np.linalg.inv(theta)
    a = [0, 1]
    got = latent_subgraph(sig[np.ix_(a, a)], nu=0.4)
    assert got.to_list(one_based=False) == [[0, 1]]
    with pytest.raises(ValueError):
        latent_subgraph(sig[np.ix_(a, a)], 0.0)


def test_estimate_graph_s_and_u(tt3):
    gs = estimate_graph_S(tt3, SCHEME3, np.ones(3), tau=0.15, xi=0.0)
    assert gs.to_list() == [[1, 2], [1, 3], [2, 3]]
    gu = estimate_graph_U(tt3, SCHEME3, tau=0.15, xi1=0.0, xi2=0.3)
    assert gu.to_list() == [[1, 2], [1, 3], [2, 3]]
    gp = estimate_graph_U(tt3, SCHEME3, tau=0.15, xi1=0.0, xi2=0.3, pcor=True)
    assert [1, 2] in gp.to_list()
