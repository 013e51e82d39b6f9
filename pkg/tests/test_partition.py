import math

import numpy as np
import pytest

from fogfed.dist import NormalSpec, point_mass
from fogfed.federation import EtcMatrix
from fogfed.model import (
    Edge,
    MicroServiceSpec,
    Request,
    WorkflowSpec,
    builtin_app,
)
from fogfed.partition import (
    EtcSuccessEstimator,
    PartitionConfig,
    baseline_least_data,
    baseline_mincut,
    build_plan,
    min_cut,
    no_partition,
    propart,
    validate_plan,
)


def _vs(*ids):
    return tuple(
        MicroServiceSpec(i, i, "t", NormalSpec(10.0, 1.0), 1.0) for i in ids
    )


def _chain(ids, data=None):
    if data is None:
        edges = [(ids[i], ids[i + 1]) for i in range(len(ids) - 1)]
    else:
        edges = [
            Edge(ids[i], ids[i + 1], data[i]) for i in range(len(ids) - 1)
        ]
    return WorkflowSpec("t", _vs(*ids), tuple(edges))


def brute_force_cuts(w, weights):
    """All minimum-weight ancestor-closed bisections (entries in, exits out)."""
    ids = [v.id for v in w.vertices]
    entries, exits = set(w.entries()), set(w.exits())
    n = len(ids)
    best_w, best_sides = math.inf, []
    for mask in range(1, 2**n - 1):
        side = {ids[i] for i in range(n) if mask >> i & 1}
        if not entries <= side or side & exits:
            continue
        if any(e.src not in side and e.dst in side for e in w.edges):
            continue
        weight = sum(
            weights[(e.src, e.dst)]
            for e in w.edges
            if e.src in side and e.dst not in side
        )
        if weight < best_w:
            best_w, best_sides = weight, [side]
        elif weight == best_w:
            best_sides.append(side)
    return best_w, best_sides


def random_dag(rng, n):
    """Single-entry DAG: every non-root vertex has an incoming edge."""
    ids = [f"v{i}" for i in range(n)]
    edges = set()
    for i in range(1, n):
        edges.add((ids[int(rng.integers(0, i))], ids[i]))
        for j in range(i):
            if rng.random() < 0.25:
                edges.add((ids[j], ids[i]))
    w = WorkflowSpec("t", _vs(*ids), tuple(sorted(edges)))
    # halves of small ints stay exact in binary, so weight equality is exact
    weights = {
        (e.src, e.dst): float(rng.integers(1, 9)) / 2.0 for e in w.edges
    }
    return w, weights


class TestMinCut:
    def test_weighted_chain(self):
        w = _chain(["a", "b", "c"])
        cut = min_cut(w, {("a", "b"): 5.0, ("b", "c"): 2.0})
        assert cut.side_s == {"a", "b"}
        assert cut.cut_edges == (("b", "c"),)
        assert cut.cut_weight == 2.0

    def test_unit_chain_cuts_first_edge(self):
        w = _chain(["a", "b", "c", "d"])
        cut = min_cut(w, {e: 1.0 for e in [("a", "b"), ("b", "c"), ("c", "d")]})
        assert cut.side_s == {"a"}
        assert cut.cut_weight == 1.0

    def test_diamond(self):
        vs = _vs("a", "b", "c", "d")
        edges = (("a", "b"), ("a", "c"), ("b", "d"), ("c", "d"))
        w = WorkflowSpec("t", vs, edges)
        weights = {
            ("a", "b"): 3.0,
            ("a", "c"): 3.0,
            ("b", "d"): 1.0,
            ("c", "d"): 1.0,
        }
        cut = min_cut(w, weights)
        assert cut.cut_weight == 2.0
        assert set(cut.cut_edges) == {("b", "d"), ("c", "d")}

    def test_single_vertex_rejected(self):
        w = WorkflowSpec("t", _vs("a"), ())
        with pytest.raises(ValueError):
            min_cut(w, {})

    def test_missing_weight(self):
        w = _chain(["a", "b"])
        with pytest.raises(KeyError):
            min_cut(w, {})

    def test_non_positive_weight(self):
        w = _chain(["a", "b"])
        with pytest.raises(ValueError):
            min_cut(w, {("a", "b"): 0.0})

    def test_matches_brute_force_on_random_dags(self):
        rng = np.random.default_rng(2042)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            w, weights = random_dag(rng, n)
            cut = min_cut(w, weights)
            best_w, best_sides = brute_force_cuts(w, weights)
            assert cut.cut_weight == best_w
            # closure and orientation
            assert set(w.entries()) <= cut.side_s
            assert not any(
                e.src in cut.side_t and e.dst in cut.side_s for e in w.edges
            )
            # the returned side is the inclusion-minimal optimum
            for side in best_sides:
                assert cut.side_s <= side


def _etc_two_fogs(types, slow_ms, fast_ms):
    entries, specs = {}, {}
    for t in types:
        entries[(t, 0)] = point_mass(slow_ms, 1.0)
        entries[(t, 1)] = point_mass(fast_ms, 1.0)
        specs[(t, 0)] = NormalSpec(slow_ms, 0.0)
        specs[(t, 1)] = NormalSpec(fast_ms, 0.0)
    return EtcMatrix(1.0, entries, specs)


def _request(w, slack_per_vertex, arrival=0.0):
    per = {v.id: arrival + slack_per_vertex for v in w.vertices}
    total = slack_per_vertex * len(w.vertices)
    return Request(
        0, arrival, "workflow", w, 0, arrival + total, per
    )


class TestProPart:
    def test_alpha_gate_keeps_whole(self):
        w = _chain(["a", "b", "c", "d"])
        etc = _etc_two_fogs([v.id for v in w.vertices], 10.0, 10.0)
        req = _request(w, 50.0)  # local: 40ms vs 200 budget -> P=1
        plan = propart(w, etc, req, PartitionConfig(alpha=0.5))
        assert len(plan.partitions) == 1
        assert plan.root_p == 1.0
        assert plan.trace == ()
        assert validate_plan(plan, w) == []

    def test_alpha_zero_never_splits(self):
        w = _chain(["a", "b", "c", "d"])
        etc = _etc_two_fogs([v.id for v in w.vertices], 100.0, 10.0)
        req = _request(w, 50.0)  # local P=0, but alpha=0 accepts anything
        plan = propart(w, etc, req, PartitionConfig(alpha=0.0))
        assert len(plan.partitions) == 1
        assert validate_plan(plan, w) == []

    def test_single_vertex_final(self):
        w = WorkflowSpec("t", _vs("a"), ())
        etc = _etc_two_fogs(["a"], 100.0, 10.0)
        req = _request(w, 50.0)
        plan = propart(w, etc, req, PartitionConfig(alpha=0.99))
        assert len(plan.partitions) == 1

    def test_improving_split_accepted(self):
        w = _chain(["a", "b", "c", "d"])
        etc = _etc_two_fogs([v.id for v in w.vertices], 100.0, 10.0)
        req = _request(w, 50.0)
        plan = propart(w, etc, req, PartitionConfig(alpha=0.5))
        assert plan.root_p == 0.0
        assert len(plan.partitions) == 2
        assert [len(p.vertices) for p in plan.partitions] == [1, 3]
        assert plan.trace[0].accepted
        assert plan.trace[0].p_s > plan.root_p
        assert plan.trace[0].p_t > plan.root_p
        # the deeper re-split cannot improve on certainty and rolls back
        assert not plan.trace[1].accepted
        assert validate_plan(plan, w) == []
        # split is min-cut-consistent: unit data ties resolve to the
        # smallest ancestor-closed side
        best_w, _ = brute_force_cuts(
            w, {(e.src, e.dst): e.data_mb for e in w.edges}
        )
        crossing = sum(
            e.data_mb
            for e in w.edges
            if e.src in {v.id for v in plan.partitions[0].vertices}
            and e.dst in {v.id for v in plan.partitions[1].vertices}
        )
        assert crossing == best_w

    def test_non_improving_split_rolls_back(self):
        w = _chain(["a", "b", "c", "d"])
        # both fogs hopeless: every side stays at P=0
        etc = _etc_two_fogs([v.id for v in w.vertices], 100.0, 100.0)
        req = _request(w, 50.0)
        plan = propart(w, etc, req, PartitionConfig(alpha=0.5))
        assert len(plan.partitions) == 1
        assert len(plan.trace) == 1
        assert not plan.trace[0].accepted
        assert validate_plan(plan, w) == []

    def test_precedence_order(self):
        w = _chain(["a", "b", "c", "d"])
        etc = _etc_two_fogs([v.id for v in w.vertices], 100.0, 10.0)
        req = _request(w, 50.0)
        plan = propart(w, etc, req, PartitionConfig(alpha=0.5))
        seen = []
        for p in plan.partitions:
            seen.extend(v.id for v in p.vertices)
        assert seen == ["a", "b", "c", "d"]

    def test_pinned_partition_flagged(self):
        w = builtin_app("fire")
        etc = _etc_two_fogs([v.id for v in w.vertices], 100.0, 10.0)
        req = _request(w, 50.0)
        plan = propart(w, etc, req, PartitionConfig(alpha=0.5))
        assert plan.must_run_local[0]
        assert not any(plan.must_run_local[1:])

    def test_estimator_injection(self):
        w = _chain(["a", "b"])
        etc = _etc_two_fogs(["a", "b"], 100.0, 10.0)
        est = EtcSuccessEstimator(etc)
        req = _request(w, 50.0)
        a = propart(w, etc, req, PartitionConfig(alpha=0.5))
        b = propart(w, etc, req, PartitionConfig(alpha=0.5), estimator=est)
        assert len(a.partitions) == len(b.partitions)


class TestBaselines:
    def test_no_partition_covers_everything(self):
        w = builtin_app("fire")
        plan = no_partition(w)
        assert len(plan.partitions) == 1
        assert plan.partitions[0] == w
        assert plan.must_run_local == (True,)
        assert validate_plan(plan, w) == []

    def test_mincut_fire_cuts_first_edge(self):
        w = builtin_app("fire")
        plan = baseline_mincut(w)
        assert len(plan.partitions) == 2
        assert [len(p.vertices) for p in plan.partitions] == [1, 6]
        assert plan.partitions[0].vertices[0].id == "fire.capture"
        assert validate_plan(plan, w) == []

    def test_mincut_single_vertex(self):
        w = WorkflowSpec("t", _vs("a"), ())
        plan = baseline_mincut(w)
        assert plan.method == "min_cut"
        assert len(plan.partitions) == 1

    def test_least_data_picks_smallest_crossing(self):
        w = _chain(["a", "b", "c", "d"], data=[10.0, 1.0, 10.0])
        plan = baseline_least_data(w)
        assert [len(p.vertices) for p in plan.partitions] == [2, 2]
        assert {v.id for v in plan.partitions[0].vertices} == {"a", "b"}

    def test_least_data_tie_breaks_smallest_head(self):
        w = _chain(["a", "b", "c"], data=[2.0, 2.0])
        plan = baseline_least_data(w)
        assert [len(p.vertices) for p in plan.partitions] == [1, 2]

    def test_least_data_fire_cuts_after_features(self):
        w = builtin_app("fire")
        plan = baseline_least_data(w)
        assert [len(p.vertices) for p in plan.partitions] == [4, 3]
        head = {v.id for v in plan.partitions[0].vertices}
        assert head == {
            "fire.capture", "fire.preprocess", "fire.noise", "fire.features"
        }
        assert validate_plan(plan, w) == []

    def test_least_data_diamond_prefix(self):
        vs = _vs("a", "b", "c", "d")
        edges = (
            Edge("a", "b", 3.0),
            Edge("a", "c", 3.0),
            Edge("b", "d", 1.0),
            Edge("c", "d", 3.0),
        )
        w = WorkflowSpec("t", vs, edges)
        # prefix crossings: {a}=6, {a,b}=4, {a,b,c}=4 -> first k wins
        plan = baseline_least_data(w)
        assert {v.id for v in plan.partitions[0].vertices} == {"a", "b"}

    def test_build_plan_dispatch(self):
        w = builtin_app("oil")
        for method, parts in (
            ("no_partition", 1),
            ("min_cut", 2),
            ("least_data", 2),
        ):
            plan = build_plan(PartitionConfig(method=method), w)
            assert plan.method == method
            assert len(plan.partitions) == parts
            assert validate_plan(plan, w) == []

    def test_build_plan_propart_needs_inputs(self):
        w = builtin_app("oil")
        with pytest.raises(ValueError):
            build_plan(PartitionConfig(method="propart"), w)


class TestConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            PartitionConfig(alpha=1.5)
        with pytest.raises(ValueError):
            PartitionConfig(alpha=-0.1)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            PartitionConfig(method="magic")
