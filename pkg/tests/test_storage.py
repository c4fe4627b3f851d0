import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctdg import (
    AdaptiveSizing,
    BatchSizing,
    DynamicGraph,
    FixedSizing,
    InsertionBatch,
    NodeNotFoundError,
    new_graph,
    parse_offload,
)
from ctdg.storage import write_offload_records

from conftest import make_random_case


# -- construction -----------------------------------------------------------


def test_new_graph_empty_state():
    g = new_graph(directed=False, tau=48)
    assert g.num_nodes == 0
    assert g.total_edges_inserted == 0
    stats = g.storage_stats()
    assert stats.avg_list_len == 0.0
    assert stats.edge_data_bytes == 0
    assert stats.metadata_bytes == 0
    assert stats.wasted_slots == 0


def test_new_graph_paper_thresholds():
    # the two tuned thresholds: 8192 (GDELT-like) and 48 (Netflix-like)
    assert new_graph(directed=True, tau=8192).tau == 8192
    assert new_graph(directed=False, tau=48).tau == 48


def test_new_graph_zero_tau_rejected():
    with pytest.raises(ValueError):
        new_graph(directed=False, tau=0)


# -- block capacity ----------------------------------------------------------


def test_new_block_capacity_min_formula():
    g = new_graph(directed=True, tau=48)
    g.add_edges([(0, i + 1, i) for i in range(5)])
    assert g.degree(0) == 5
    assert g.new_block_capacity(0) == 5


def test_new_block_capacity_threshold_clamp():
    g = new_graph(directed=True, tau=8192)
    g.add_edges([(0, 1, t) for t in range(10_000)])
    assert g.new_block_capacity(0) == 8192


def test_first_edge_of_isolated_node_allocates_one_slot():
    g = new_graph(directed=True, tau=48)
    g.add_edges([(7, 3, 10)])
    assert g.new_block_capacity(3) == 1  # degree-0 node
    handles = g.blocks_of(7)
    assert len(handles) == 1
    assert g.fast.blk_capacity[handles[0]] == 1


def test_new_block_capacity_unknown_node():
    g = new_graph()
    with pytest.raises(NodeNotFoundError):
        g.new_block_capacity(3)


# -- add_edges ----------------------------------------------------------------


def test_add_edges_matches_naive_adjacency():
    g = new_graph(directed=False, tau=48)
    result = g.add_edges([(0, 2, 12), (0, 2, 23)])
    assert result.accepted_ids == [0, 1]
    assert sorted((n, e, t) for n, e, t, v in g.iter_edges(0)) == [(2, 0, 12), (2, 1, 23)]
    assert sorted((n, e, t) for n, e, t, v in g.iter_edges(2)) == [(0, 0, 12), (0, 1, 23)]
    assert g.node_entry(0).num_blocks >= 1


def test_full_tail_block_grows_list():
    g = DynamicGraph(directed=True, sizing=FixedSizing(4))
    g.add_edges([(0, 1, t) for t in range(4)])
    assert g.node_entry(0).num_blocks == 1
    g.add_edges([(0, 1, 9)])
    assert g.node_entry(0).num_blocks == 2


def test_out_of_order_edge_rejected_rest_applies():
    g = new_graph(directed=True)
    result = g.add_edges([(0, 1, 10), (0, 2, 5), (0, 3, 11)])
    assert result.rejected == [1]
    assert result.edge_ids[1] is None
    assert g.degree(0) == 2
    assert [t for _, _, t, _ in g.iter_edges(0)] == [10, 11]


def test_undirected_rejection_checks_both_endpoints():
    g = new_graph(directed=False)
    g.add_edges([(0, 1, 10)])
    result = g.add_edges([(2, 1, 5)])  # fine for node 2, stale for node 1
    assert result.rejected == [0]


def test_edge_ids_strictly_increasing_across_batches():
    g = new_graph(directed=True)
    ids = g.add_edges([(0, 1, 1), (1, 2, 2)]).accepted_ids
    ids += g.add_edges([(2, 3, 3)]).accepted_ids
    assert ids == sorted(ids) == list(range(3))


def test_negative_node_id_rejected():
    g = new_graph()
    with pytest.raises(ValueError):
        g.add_edges([(-1, 0, 3)])


# -- deletion ------------------------------------------------------------------


def test_delete_edge_soft():
    g = new_graph(directed=True, tau=8)
    ids = g.add_edges([(0, 1, 1), (0, 2, 2)]).accepted_ids
    before = [(int(g.fast.blk_size[h]), int(g.fast.blk_capacity[h])) for h in g.blocks_of(0)]
    assert g.delete_edges([ids[0]]) == 1
    assert g.degree(0) == 1
    after = [(int(g.fast.blk_size[h]), int(g.fast.blk_capacity[h])) for h in g.blocks_of(0)]
    assert before == after


def test_delete_edge_idempotent():
    g = new_graph(directed=True)
    ids = g.add_edges([(0, 1, 1)]).accepted_ids
    assert g.delete_edges(ids) == 1
    assert g.delete_edges(ids) == 0


def test_delete_unknown_edge_counts_zero():
    g = new_graph(directed=True)
    g.add_edges([(0, 1, 1)])
    assert g.delete_edges([999]) == 0


def test_delete_node_semantics():
    g = new_graph(directed=True)
    g.add_edges([(0, 1, 1)])
    assert g.delete_node(0) is True
    with pytest.raises(NodeNotFoundError):
        g.degree(0)
    assert g.delete_node(0) is False
    assert g.delete_node(42) is False


# -- offload -------------------------------------------------------------------


def _three_block_graph():
    g = DynamicGraph(directed=True, sizing=FixedSizing(2))
    g.add_edges([(0, 1, 1), (0, 2, 5), (0, 3, 10), (0, 4, 15), (0, 5, 20), (0, 6, 30)])
    assert g.node_entry(0).num_blocks == 3
    return g


def test_offload_cutoff_below_all():
    g = _three_block_graph()
    sink = io.BytesIO()
    assert g.offload_before(0, sink) == 0
    assert sink.getvalue() == b"TGOF" + (1).to_bytes(4, "little")
    assert g.node_entry(0).num_blocks == 3


def test_offload_cutoff_above_all():
    g = _three_block_graph()
    sink = io.BytesIO()
    assert g.offload_before(31, sink) == 6
    entry = g.node_entry(0)
    assert entry.num_blocks == 0
    assert entry.head_block is None and entry.tail_block is None
    assert entry.degree == 0


def test_offload_mixed_cutoff_drops_prefix():
    g = _three_block_graph()  # blocks have t_max 5, 15, 30
    sink = io.BytesIO()
    assert g.offload_before(20, sink) == 4
    entry = g.node_entry(0)
    assert entry.num_blocks == 1
    assert [t for _, _, t, _ in g.iter_edges(0)] == [20, 30]
    assert entry.degree == 2
    records = parse_offload(io.BytesIO(sink.getvalue()))
    assert [(n, [r[2] for r in recs]) for n, recs in records] == [(0, [1, 5]), (0, [10, 15])]


def test_offload_roundtrip_bit_exact():
    rng = np.random.default_rng(5)
    case = make_random_case(rng, max_edges=400)
    sink = io.BytesIO()
    case.graph.offload_before(case.max_ts() // 2, sink)
    blob = sink.getvalue()
    assert write_offload_records(parse_offload(io.BytesIO(blob))) == blob


def test_offload_io_failure_leaves_graph_unchanged():
    class FailingSink:
        def write(self, data):
            raise OSError("disk full")

    g = _three_block_graph()
    with pytest.raises(OSError):
        g.offload_before(31, FailingSink())
    assert g.node_entry(0).num_blocks == 3
    assert g.degree(0) == 6


def test_offloaded_edges_never_sampled():
    from ctdg import SamplingPolicy, sample_layer
    from ctdg.storage import TS_MIN

    g = _three_block_graph()
    g.offload_before(20, io.BytesIO())
    layer = sample_layer(g, [0], [TS_MIN], [100], 50, SamplingPolicy.recent(), seed=0)
    assert sorted(layer.timestamps.tolist()) == [20, 30]


# -- stats ---------------------------------------------------------------------


def test_wasted_slots_arithmetic():
    g = DynamicGraph(directed=True, sizing=FixedSizing(5))
    g.add_edges([(0, 1, 1), (0, 2, 2), (0, 3, 3)])
    assert g.storage_stats().wasted_slots == 2


def test_adaptive_beats_strawman_on_skewed_stream():
    from ctdg import generate_synthetic

    stream = generate_synthetic(150, 6000, 2.0, 100_000, seed=2, src_skew=2.0)
    lens = {}
    for name, sizing in (("adaptive", AdaptiveSizing(48)), ("strawman", BatchSizing())):
        g = DynamicGraph(directed=True, sizing=sizing)
        for i in range(0, len(stream), 200):
            g.add_edges(InsertionBatch(stream[i : i + 200]))
        lens[name] = g.storage_stats().avg_list_len
    assert lens["adaptive"] < lens["strawman"]


# -- invariants (property-based) -------------------------------------------------


@st.composite
def sorted_streams(draw):
    n_nodes = draw(st.integers(2, 12))
    n_edges = draw(st.integers(1, 60))
    directed = draw(st.booleans())
    tau = draw(st.sampled_from([1, 2, 3, 8, 48]))
    ts = sorted(draw(st.lists(st.integers(0, 500), min_size=n_edges, max_size=n_edges)))
    edges = [
        (draw(st.integers(0, n_nodes - 1)), draw(st.integers(0, n_nodes - 1)), ts[i])
        for i in range(n_edges)
    ]
    return directed, tau, edges


@settings(max_examples=60, deadline=None)
@given(sorted_streams())
def test_chronology_invariant(case):
    directed, tau, edges = case
    g = DynamicGraph(directed=directed, tau=tau)
    g.add_edges(edges)
    for node in range(g.num_nodes):
        ts = [t for _, _, t, _ in g.iter_edges(node)]
        assert ts == sorted(ts)
        # block ranges are consistent and non-overlapping along the list
        handles = g.blocks_of(node)
        for h in handles:
            size = int(g.fast.blk_size[h])
            arr = g.shared.get(h)
            assert g.fast.blk_tmin[h] == arr.timestamps[0]
            assert g.fast.blk_tmax[h] == arr.timestamps[size - 1]
        for a, b in zip(handles, handles[1:]):
            assert g.fast.blk_tmax[a] <= g.fast.blk_tmin[b]


@settings(max_examples=60, deadline=None)
@given(sorted_streams())
def test_block_size_law(case):
    directed, tau, edges = case
    g = DynamicGraph(directed=directed, tau=tau)
    g.add_edges(edges)
    for node in range(g.num_nodes):
        written = 0
        for h in g.blocks_of(node):
            assert g.fast.blk_capacity[h] == min(max(written, 1), tau)
            written += int(g.fast.blk_size[h])


@settings(max_examples=60, deadline=None)
@given(sorted_streams(), st.data())
def test_conservation_and_soft_delete_neutrality(case, data):
    directed, tau, edges = case
    g = DynamicGraph(directed=directed, tau=tau)
    ids = g.add_edges(edges).accepted_ids
    victims = data.draw(st.lists(st.sampled_from(ids), max_size=len(ids), unique=True)) if ids else []

    layout_before = [
        (h, int(g.fast.blk_size[h]), int(g.fast.blk_capacity[h]), int(g.fast.blk_tmin[h]), int(g.fast.blk_tmax[h]))
        for node in range(g.num_nodes)
        for h in g.blocks_of(node)
    ]
    n_deleted = g.delete_edges(victims)
    assert n_deleted == len(victims)
    layout_after = [
        (h, int(g.fast.blk_size[h]), int(g.fast.blk_capacity[h]), int(g.fast.blk_tmin[h]), int(g.fast.blk_tmax[h]))
        for node in range(g.num_nodes)
        for h in g.blocks_of(node)
    ]
    assert layout_before == layout_after

    live = len(ids) - len(victims)
    degree_sum = int(g.fast.degree.sum())
    assert degree_sum == live if directed else degree_sum == 2 * live


def test_waste_bound_logged_not_asserted(caplog):
    g = new_graph(directed=True, tau=48)
    g.add_edges([(0, 1, 1)])
    assert isinstance(g.check_waste_bound(), bool)


def test_neighbor_set_equivalence_random(rng):
    for _ in range(15):
        case = make_random_case(rng, max_edges=300)
        node = int(rng.integers(0, max(case.nodes()) + 1))
        t_hi = case.max_ts() + 1
        got = sorted(
            (n, e, t)
            for n, e, t, valid in (case.graph.iter_edges(node) if case.graph.has_node(node) else [])
            if valid and n not in case.deleted_nodes and node not in case.deleted_nodes
        )
        want = sorted(case.live_candidates(node, -(10**9), t_hi))
        assert got == want
