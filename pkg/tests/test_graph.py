"""Graph construction, taxonomy, homophily, editing, and the exact shift
identities, with brute-force oracles at every step."""

import itertools

import numpy as np
import pytest

from fairgraph.errors import (
    DegenerateEditError,
    InfeasibleError,
    InvalidTargetError,
    ResourceLimitError,
    UndefinedRatioError,
)
from fairgraph.graph import (
    EdgeCensus,
    EdgeType,
    Graph,
    NodeLabels,
    classify_edge,
    edge_census,
    fair_edge_remove,
    homophily_ratios,
    load_edge_list,
    minimal_deletions,
    oracle_best_deletion_sets,
    predict_ratio_shift,
    single_edge_effect,
)
from fairgraph.verify import random_labeled_graph


def naive_ratios(g, labels):
    """Independent oracle: double loop over the raw edge list."""
    y = labels.effective_label()
    s = labels.sensitive
    same_c = same_s = 0
    for u, v in g.edges:
        if y[u] == y[v]:
            same_c += 1
        if s[u] == s[v]:
            same_s += 1
    return same_c / g.m, same_s / g.m


# ---------------------------------------------------------------------------
# construction

def test_from_edges_rejects_bad_input():
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 5)])


def test_dedup_counts_duplicates_and_self_loops():
    g, dropped = Graph.from_edges_dedup(4, [(0, 1), (1, 0), (2, 2), (1, 2), (0, 1)])
    assert g.edges == ((0, 1), (1, 2))
    assert dropped == 3


def test_adjacency_is_symmetric_closure():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (0, 3)])
    assert g.adjacency == ((1, 3), (0, 2), (1,), (0,))
    assert g.has_edge(1, 0) and g.has_edge(0, 1)
    assert not g.has_edge(2, 3)


def test_load_edge_list_formats(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("0 1\n2,3\n# comment\n\n1 2\n")
    assert load_edge_list(path) == [(0, 1), (2, 3), (1, 2)]
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    with pytest.raises(ValueError):
        load_edge_list(bad)


def test_labels_validation():
    with pytest.raises(ValueError):
        NodeLabels.create(sensitive=[0, 2])
    labels = NodeLabels.create(sensitive=[0, 1], class_label=[1, -1],
                               pseudo_label=[-1, 0])
    assert labels.effective_label().tolist() == [1, 0]
    with pytest.raises(ValueError):
        NodeLabels.create(sensitive=[0, 1], class_label=[1, -1]).effective_label()


# ---------------------------------------------------------------------------
# taxonomy

def test_classify_edge_examples():
    assert classify_edge(0, 0, 1, 1) is EdgeType.I
    assert classify_edge(1, 0, 0, 0) is EdgeType.III
    assert classify_edge(1, 0, 0, 1) is EdgeType.IV
    assert classify_edge(1, 1, 0, 1) is EdgeType.II
    with pytest.raises(ValueError):
        classify_edge(2, 0, 0, 0)


def test_taxonomy_is_a_partition():
    # every (y_u, y_v, s_u, s_v) combination lands in exactly one type
    for combo in itertools.product((0, 1), repeat=4):
        t = classify_edge(*combo)
        assert t in EdgeType


def test_census_counts_sum_and_recover_nc_ns():
    rng = np.random.default_rng(0)
    for _ in range(50):
        g, labels = random_labeled_graph(rng, max_n=12)
        c = edge_census(g, labels)
        assert c.count_i + c.count_ii + c.count_iii + c.count_iv == g.m
        assert c.n_c == c.count_i + c.count_ii
        assert c.n_s == c.count_i + c.count_iii


# ---------------------------------------------------------------------------
# homophily ratios

def test_all_same_labels_gives_ones():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    labels = NodeLabels.create(sensitive=[1, 1, 1], class_label=[0, 0, 0])
    assert homophily_ratios(g, labels) == (1.0, 1.0)


def test_ratios_match_naive_double_loop():
    rng = np.random.default_rng(7)
    for _ in range(25):
        g, labels = random_labeled_graph(rng, max_n=20)
        assert homophily_ratios(g, labels) == naive_ratios(g, labels)


def test_empty_graph_ratio_error():
    g = Graph.from_edges(3, [])
    labels = NodeLabels.create(sensitive=[0, 1, 0], class_label=[0, 1, 1])
    with pytest.raises(UndefinedRatioError):
        homophily_ratios(g, labels)


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    g, labels = random_labeled_graph(rng, max_n=12)
    perm = rng.permutation(g.n)
    g2 = Graph.from_edges(g.n, [(perm[u], perm[v]) for u, v in g.edges])
    inv = np.empty(g.n, dtype=np.int64)
    inv[perm] = np.arange(g.n)
    labels2 = NodeLabels.create(sensitive=labels.sensitive[inv],
                                class_label=labels.effective_label()[inv])
    assert homophily_ratios(g, labels) == homophily_ratios(g2, labels2)
    assert edge_census(g, labels) == edge_census(g2, labels2)


# ---------------------------------------------------------------------------
# fair edge removal

def four_node_case():
    # (y, s) = a(0,0) b(1,0) c(1,1) d(0,1), square a-b-c-d-a
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    labels = NodeLabels.create(sensitive=[0, 0, 1, 1], class_label=[0, 1, 1, 0])
    return g, labels


def test_fair_edge_remove_hand_case():
    g, labels = four_node_case()
    edited, report = fair_edge_remove(g, labels)
    assert set(report.removed_edges) == {(0, 1), (2, 3)}
    assert (report.hr_c_before, report.hr_s_before) == (0.5, 0.5)
    assert (report.hr_c_after, report.hr_s_after) == (1.0, 0.0)
    assert report.census_after.count_iii == 0
    assert edited.m == report.census_before.m - len(report.removed_edges)


def test_no_type_iii_is_a_fixed_point():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    labels = NodeLabels.create(sensitive=[0, 1, 0], class_label=[0, 0, 0])
    edited, report = fair_edge_remove(g, labels)
    assert edited.edges == g.edges
    assert report.removed_edges == ()


def test_degenerate_edit_raises_with_payload():
    g = Graph.from_edges(2, [(0, 1)])
    labels = NodeLabels.create(sensitive=[0, 0], class_label=[0, 1])
    with pytest.raises(DegenerateEditError) as exc:
        fair_edge_remove(g, labels)
    assert exc.value.graph.m == 0
    assert len(exc.value.report.removed_edges) == 1


def test_remove_is_idempotent_and_monotone():
    rng = np.random.default_rng(11)
    for _ in range(40):
        g, labels = random_labeled_graph(rng, max_n=12)
        try:
            once, report = fair_edge_remove(g, labels)
        except DegenerateEditError:
            continue
        twice, report2 = fair_edge_remove(once, labels)
        assert twice.edges == once.edges and report2.removed_edges == ()
        assert report.hr_c_after >= report.hr_c_before - 1e-15
        assert report.hr_s_after <= report.hr_s_before + 1e-15


# ---------------------------------------------------------------------------
# shift identities

def test_predict_ratio_shift_examples():
    census = EdgeCensus(count_i=3, count_ii=3, count_iii=3, count_iv=1)  # m=10, N_c=6
    dc, ds = predict_ratio_shift(census, 3)
    assert dc == pytest.approx(18 / 70, abs=1e-15)
    assert predict_ratio_shift(census, 0) == (0.0, 0.0)
    all_sens_same = EdgeCensus(count_i=6, count_ii=0, count_iii=4, count_iv=0)  # N_s=m
    assert predict_ratio_shift(all_sens_same, 2)[1] == 0.0


def test_predict_ratio_shift_errors():
    census = EdgeCensus(count_i=1, count_ii=0, count_iii=1, count_iv=0)
    with pytest.raises(ZeroDivisionError):
        predict_ratio_shift(census, 2)
    census2 = EdgeCensus(count_i=3, count_ii=0, count_iii=1, count_iv=0)
    with pytest.raises(InfeasibleError):
        predict_ratio_shift(census2, 2)


def test_shift_identity_exact_on_random_subsets():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 60:
        g, labels = random_labeled_graph(rng, max_n=14)
        y = labels.effective_label()
        s = labels.sensitive
        census = edge_census(g, labels)
        type_iii = [e for e in g.edges if y[e[0]] != y[e[1]] and s[e[0]] == s[e[1]]]
        if not type_iii or len(type_iii) == g.m:
            continue
        k = int(rng.integers(1, len(type_iii) + 1))
        picks = rng.choice(len(type_iii), size=k, replace=False)
        edited = g.remove_edges([type_iii[i] for i in picks])
        hr_c0, hr_s0 = homophily_ratios(g, labels)
        hr_c1, hr_s1 = homophily_ratios(edited, labels)
        dc, ds = predict_ratio_shift(census, k)
        assert abs((hr_c1 - hr_c0) - dc) < 1e-12
        assert abs((hr_s1 - hr_s0) - ds) < 1e-12
        checked += 1


def deletion_sign_oracle(g, labels, edge):
    """Independent oracle: actually delete the edge and recount."""
    hr_c0, hr_s0 = homophily_ratios(g, labels)
    edited = g.remove_edges([edge])
    hr_c1, hr_s1 = homophily_ratios(edited, labels)
    dc, ds = hr_c1 - hr_c0, hr_s1 - hr_s0
    return ((dc > 1e-15) - (dc < -1e-15), (ds > 1e-15) - (ds < -1e-15))


def test_single_edge_effect_type_iii():
    census = EdgeCensus(count_i=4, count_ii=2, count_iii=4, count_iv=0)
    assert (census.m, census.n_c, census.n_s) == (10, 6, 8)
    assert single_edge_effect(census, EdgeType.III) == (1, -1)


def test_single_edge_effect_type_ii_matches_deletion_oracle():
    # Build a graph realizing m=10, N_c=6, N_s=8 with a Type II edge;
    # the expected signs are frozen from deletion_sign_oracle: deleting a
    # same-label edge lowers hr_c, so the census (6, 8, 10) gives (-1, +1).
    census = EdgeCensus(count_i=4, count_ii=2, count_iii=4, count_iv=0)
    rng = np.random.default_rng(2)
    found = False
    while not found:
        g, labels = random_labeled_graph(rng, max_n=10, max_m=16, min_m=2)
        c = edge_census(g, labels)
        if c.count_ii == 0:
            continue
        y = labels.effective_label()
        s = labels.sensitive
        edge = next(e for e in g.edges
                    if y[e[0]] == y[e[1]] and s[e[0]] != s[e[1]])
        want = single_edge_effect(c, EdgeType.II)
        assert deletion_sign_oracle(g, labels, edge) == want
        found = True
    assert single_edge_effect(census, EdgeType.II) == (-1, 1)


def test_single_edge_effect_type_i_saturated():
    census = EdgeCensus(count_i=3, count_ii=2, count_iii=0, count_iv=0)  # N_c = m
    assert single_edge_effect(census, EdgeType.I)[0] == 0


def test_single_edge_effect_sign_table_exhaustive():
    rng = np.random.default_rng(13)
    for _ in range(100):
        g, labels = random_labeled_graph(rng, max_n=10, max_m=16, min_m=2)
        census = edge_census(g, labels)
        y = labels.effective_label()
        s = labels.sensitive
        for e in g.edges:
            t = classify_edge(int(y[e[0]]), int(y[e[1]]), int(s[e[0]]), int(s[e[1]]))
            observed = deletion_sign_oracle(g, labels, e)
            assert observed == single_edge_effect(census, t)
            if t is not EdgeType.III:
                assert not (observed[0] > 0 and observed[1] < 0)


# ---------------------------------------------------------------------------
# budgeted deletions

def test_minimal_deletions_hand_case():
    census = EdgeCensus(count_i=4, count_ii=2, count_iii=4, count_iv=0)
    # m=10, N_c=6, N_s=8: thresholds give k_c*=2, k_s*=4
    assert minimal_deletions(census, 0.75, 0.7) == 4


def test_minimal_deletions_single_step():
    census = EdgeCensus(count_i=8, count_ii=1, count_iii=1, count_iv=0)
    # N_c = m-1 = 9; one deletion saturates hr_c
    hr_c = census.n_c / census.m
    assert minimal_deletions(census, hr_c + 1e-6, census.n_s / census.m - 1e-6) == 1


def test_minimal_deletions_infeasible_and_bad_targets():
    census = EdgeCensus(count_i=4, count_ii=2, count_iii=1, count_iv=0)
    with pytest.raises(InfeasibleError):
        minimal_deletions(census, 0.99, 0.01)
    with pytest.raises(InvalidTargetError):
        minimal_deletions(census, 0.2, 0.5)  # tau_c below current hr_c
    with pytest.raises(InvalidTargetError):
        minimal_deletions(census, 0.99, 0.99)  # tau_s above current hr_s


# ---------------------------------------------------------------------------
# exhaustive deletion oracle

def test_oracle_k_zero_is_identity():
    g, labels = four_node_case()
    summary = oracle_best_deletion_sets(g, labels, 0)
    hr_c, hr_s = homophily_ratios(g, labels)
    assert summary.max_hr_c == hr_c and summary.min_hr_s == hr_s
    assert summary.achieves_predicted


def test_oracle_enumerates_all_subsets():
    rng = np.random.default_rng(4)
    g, labels = random_labeled_graph(rng, max_n=6, max_m=6, min_m=6)
    summary = oracle_best_deletion_sets(g, labels, 2)
    assert summary.n_subsets == 15


def test_oracle_type_iii_subsets_match_prediction():
    rng = np.random.default_rng(9)
    hits = 0
    while hits < 20:
        g, labels = random_labeled_graph(rng, max_n=8, max_m=12, min_m=3)
        census = edge_census(g, labels)
        if census.count_iii < 2 or census.count_iii >= g.m:
            continue
        k = 2
        summary = oracle_best_deletion_sets(g, labels, k)
        dc, ds = predict_ratio_shift(census, k)
        hr_c, hr_s = homophily_ratios(g, labels)
        # with enough Type III edges, the joint optimum is the predicted point
        assert summary.achieves_predicted
        assert summary.max_hr_c == pytest.approx(hr_c + dc, abs=1e-12)
        assert summary.min_hr_s == pytest.approx(hr_s + ds, abs=1e-12)
        hits += 1


def test_oracle_resource_limit():
    g = Graph.from_edges(18, [(i, i + 1) for i in range(17)])
    labels = NodeLabels.create(sensitive=[0, 1] * 9, class_label=[0] * 18)
    with pytest.raises(ResourceLimitError):
        oracle_best_deletion_sets(g, labels, 1)
