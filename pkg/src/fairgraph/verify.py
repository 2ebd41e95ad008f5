"""Randomized verification suites for the edge-editing identities.

Three suites, each driven by seeded random graphs:
  * identity: recomputed (hr_c, hr_s) shifts after deleting random Type III
    subsets (and after full fair_edge_remove) must match the closed forms to
    a 1e-12 absolute tolerance;
  * signs: exhaustive single-edge deletions must reproduce the per-type sign
    table, and only Type III may raise hr_c while lowering hr_s;
  * budget: minimal_deletions must agree exactly with exhaustive search over
    all feasible deletion budgets on small graphs.

Each suite returns a SuiteReport; `run_suites` aggregates them and the CLI
serializes the first counterexample when one exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import (
    EdgeType,
    Graph,
    NodeLabels,
    classify_edge,
    edge_census,
    fair_edge_remove,
    homophily_ratios,
    minimal_deletions,
    predict_ratio_shift,
    single_edge_effect,
)
from .errors import DegenerateEditError, InfeasibleError
from .seeding import derive_seed


def random_labeled_graph(rng, max_n=30, max_m=None, min_m=1):
    """Random simple graph with random binary labels on every node."""
    while True:
        n = int(rng.integers(2, max_n + 1))
        possible = n * (n - 1) // 2
        cap = possible if max_m is None else min(possible, max_m)
        if cap < min_m:
            continue
        m = int(rng.integers(min_m, cap + 1))
        idx = rng.choice(possible, size=m, replace=False)
        edges = [_decode_pair(n, k) for k in sorted(int(i) for i in idx)]
        g = Graph.from_edges(n, edges)
        labels = NodeLabels.create(
            sensitive=rng.integers(0, 2, size=n),
            class_label=rng.integers(0, 2, size=n))
        return g, labels


def _decode_pair(n, k):
    """k-th pair (u, v) with u < v in lexicographic order."""
    u = 0
    remaining = k
    row = n - 1
    while remaining >= row:
        remaining -= row
        row -= 1
        u += 1
    return (u, u + 1 + remaining)


@dataclass
class SuiteReport:
    name: str
    graphs_checked: int = 0
    cases_checked: int = 0
    max_residual: float = 0.0
    counterexample: dict | None = None

    @property
    def passed(self):
        return self.counterexample is None

    def to_dict(self):
        return {"name": self.name, "graphs_checked": self.graphs_checked,
                "cases_checked": self.cases_checked,
                "max_residual": self.max_residual,
                "passed": self.passed, "counterexample": self.counterexample}


def _graph_payload(g, labels):
    return {"n": g.n, "edges": [list(e) for e in g.edges],
            "class_label": labels.effective_label().tolist(),
            "sensitive": labels.sensitive.tolist()}


def identity_suite(n_graphs=500, seed=0, tol=1e-12, max_n=30, edit_fn=None):
    """Observed vs closed-form ratio shifts for random Type III subsets."""
    edit_fn = edit_fn or fair_edge_remove
    rng = np.random.default_rng(derive_seed(seed, "verify:identity"))
    report = SuiteReport(name="identity")
    for _ in range(n_graphs):
        g, labels = random_labeled_graph(rng, max_n=max_n)
        y = labels.effective_label()
        s = labels.sensitive
        census = edge_census(g, labels)
        hr_c, hr_s = homophily_ratios(g, labels)
        report.graphs_checked += 1

        type_iii = [e for e in g.edges
                    if y[e[0]] != y[e[1]] and s[e[0]] == s[e[1]]]
        k_max = len(type_iii)
        if k_max == g.m:
            k_max -= 1  # keep at least one edge so ratios stay defined
        k = int(rng.integers(0, k_max + 1)) if k_max > 0 else 0
        subset = [type_iii[int(i)] for i in rng.choice(len(type_iii), size=k, replace=False)] \
            if k else []
        edited = g.remove_edges(subset)
        hr_c2, hr_s2 = homophily_ratios(edited, labels)
        pred_dc, pred_ds = predict_ratio_shift(census, k)
        res = max(abs((hr_c2 - hr_c) - pred_dc), abs((hr_s2 - hr_s) - pred_ds))
        report.max_residual = max(report.max_residual, res)
        report.cases_checked += 1
        if res > tol:
            report.counterexample = {"kind": "subset-shift", "k": k,
                                     "residual": res, **_graph_payload(g, labels)}
            return report

        # full removal must leave zero Type III edges and match the identity
        if census.count_iii < g.m and census.count_iii > 0:
            try:
                edited_full, edit_rep = edit_fn(g, labels)
            except DegenerateEditError:
                continue
            census_after = edge_census(edited_full, labels)
            if census_after.count_iii != 0:
                report.counterexample = {"kind": "type-iii-left-behind",
                                         "left": census_after.count_iii,
                                         **_graph_payload(g, labels)}
                return report
            k_full = g.m - edited_full.m
            hr_c3, hr_s3 = homophily_ratios(edited_full, labels)
            pred_dc, pred_ds = predict_ratio_shift(census, census.count_iii)
            res = max(abs((hr_c3 - hr_c) - pred_dc), abs((hr_s3 - hr_s) - pred_ds))
            report.max_residual = max(report.max_residual, res)
            report.cases_checked += 1
            if res > tol or k_full != census.count_iii:
                report.counterexample = {"kind": "full-removal-shift",
                                         "removed": k_full,
                                         "expected_removed": census.count_iii,
                                         "residual": res,
                                         **_graph_payload(g, labels)}
                return report
    return report


def sign_suite(n_graphs=200, seed=0, max_m=16):
    """Exhaustive single-edge deletions vs the per-type sign table."""
    rng = np.random.default_rng(derive_seed(seed, "verify:signs"))
    report = SuiteReport(name="signs")
    for _ in range(n_graphs):
        g, labels = random_labeled_graph(rng, max_n=10, max_m=max_m, min_m=2)
        y = labels.effective_label()
        s = labels.sensitive
        census = edge_census(g, labels)
        hr_c, hr_s = homophily_ratios(g, labels)
        report.graphs_checked += 1
        for e in g.edges:
            t = classify_edge(int(y[e[0]]), int(y[e[1]]), int(s[e[0]]), int(s[e[1]]))
            edited = g.remove_edges([e])
            hr_c2, hr_s2 = homophily_ratios(edited, labels)
            dc, ds = hr_c2 - hr_c, hr_s2 - hr_s
            want_dc, want_ds = single_edge_effect(census, t)
            got_dc = (dc > 1e-15) - (dc < -1e-15)
            got_ds = (ds > 1e-15) - (ds < -1e-15)
            report.cases_checked += 1
            if (got_dc, got_ds) != (want_dc, want_ds):
                report.counterexample = {"kind": "sign-table", "edge": list(e),
                                         "type": t.value,
                                         "predicted": [want_dc, want_ds],
                                         "observed": [got_dc, got_ds],
                                         **_graph_payload(g, labels)}
                return report
            if t is not EdgeType.III and dc > 1e-15 and ds < -1e-15:
                report.counterexample = {"kind": "non-iii-improvement",
                                         "edge": list(e), "type": t.value,
                                         **_graph_payload(g, labels)}
                return report
            if t is EdgeType.III and census.n_c > 0 and census.n_s < census.m \
                    and not (dc > 1e-15 and ds < -1e-15):
                report.counterexample = {"kind": "iii-not-improving",
                                         "edge": list(e),
                                         **_graph_payload(g, labels)}
                return report
    return report


def budget_suite(n_instances=100, seed=0, max_m=12):
    """minimal_deletions vs brute-force minimal feasible budget."""
    rng = np.random.default_rng(derive_seed(seed, "verify:budget"))
    report = SuiteReport(name="budget")
    while report.cases_checked < n_instances:
        g, labels = random_labeled_graph(rng, max_n=8, max_m=max_m, min_m=2)
        census = edge_census(g, labels)
        m, n_c, n_s, miii = census.m, census.n_c, census.n_s, census.count_iii
        if miii == 0 or n_c == 0 or n_s == 0:
            continue
        # brute force: smallest k in 0..min(miii, m-1) meeting both thresholds
        k_limit = min(miii, m - 1)
        reachable_c = [Fraction(n_c, m - k) for k in range(k_limit + 1)]
        reachable_s = [Fraction(n_s - k, m - k) for k in range(k_limit + 1)]
        if reachable_c[-1] == reachable_c[0] or reachable_s[-1] == reachable_s[0]:
            continue
        # pick targets strictly between the k=0 ratios and the best reachable
        tau_c = float((reachable_c[0] + reachable_c[-1]) / 2)
        tau_s = float((reachable_s[0] + reachable_s[-1]) / 2)
        brute = next((k for k in range(k_limit + 1)
                      if reachable_c[k] >= Fraction(tau_c)
                      and reachable_s[k] <= Fraction(tau_s)), None)
        report.graphs_checked += 1
        try:
            got = minimal_deletions(census, tau_c, tau_s)
        except InfeasibleError:
            got = None
        report.cases_checked += 1
        if got != brute:
            report.counterexample = {"kind": "budget", "tau_c": tau_c,
                                     "tau_s": tau_s, "expected": brute,
                                     "got": got, **_graph_payload(g, labels)}
            return report
    return report


def run_suites(n_graphs=100, seed=0, tol=1e-12, edit_fn=None):
    """Run all three suites; returns (passed, [SuiteReport])."""
    reports = [
        identity_suite(n_graphs=n_graphs, seed=seed, tol=tol, edit_fn=edit_fn),
        sign_suite(n_graphs=n_graphs, seed=seed),
        budget_suite(n_instances=n_graphs, seed=seed),
    ]
    return all(r.passed for r in reports), reports
