"""Command-line interface: ingest, generate, sample, bench, partition,
continuous, cluster."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .cluster import ClusterSim, ClusterSpec, Origin, serve_cluster_tcp
from .harness import (
    IngestFormatError,
    RunConfig,
    bench,
    load_config,
    load_edge_csv,
    run_continuous,
    save_edge_csv,
    sizing_from_name,
)
from .metrics import access_distribution
from .partition import PartitionSpec, balance_stats, dispatch
from .sampling import SampleRequest, SamplingPolicy, sample_khop
from .storage import DynamicGraph, InsertionBatch
from .synth import generate_synthetic


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _build_graph(args) -> DynamicGraph:
    edges = load_edge_csv(args.data)
    sizing = sizing_from_name(args.sizing, args.tau, args.fixed_block_size)
    graph = DynamicGraph(directed=args.directed, tau=args.tau, sizing=sizing)
    for i in range(0, len(edges), args.batch_edges):
        graph.add_edges(InsertionBatch(edges[i : i + args.batch_edges]))
    return graph


def _add_graph_args(parser) -> None:
    parser.add_argument("--data", required=True, help="edge CSV (src,dst,timestamp[,label])")
    parser.add_argument("--directed", action="store_true")
    parser.add_argument("--tau", type=int, default=48)
    parser.add_argument("--sizing", default="adaptive", choices=["adaptive", "fixed", "strawman", "adjacency"])
    parser.add_argument("--fixed-block-size", type=int, default=48)
    parser.add_argument("--batch-edges", type=int, default=10_000)


def cmd_ingest(args) -> int:
    graph = _build_graph(args)
    stats = graph.storage_stats()
    print(
        json.dumps(
            {
                "nodes": graph.num_nodes,
                "edges_inserted": graph.total_edges_inserted,
                "avg_list_len": stats.avg_list_len,
                "max_list_len": stats.max_list_len,
                "edge_data_bytes": stats.edge_data_bytes,
                "metadata_bytes": stats.metadata_bytes,
                "wasted_slots": stats.wasted_slots,
            }
        )
    )
    return 0


def cmd_generate(args) -> int:
    edges = generate_synthetic(args.nodes, args.edges, args.skew, args.time_span, args.seed)
    save_edge_csv(args.out, edges)
    print(json.dumps({"edges": len(edges), "out": args.out}))
    return 0


def cmd_sample(args) -> int:
    graph = _build_graph(args)
    policy = SamplingPolicy(args.policy, args.delta)
    request = SampleRequest(_int_list(args.targets), _int_list(args.times), _int_list(args.fanouts), policy, args.seed)
    sample = sample_khop(graph, request, workers=args.workers)
    print(json.dumps(sample.to_json_dict()))
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    if args.data:
        config.dataset = args.data
    if args.sizing:
        config.sizing = args.sizing
    report = bench(config, repeats=args.repeats)
    print(json.dumps(report))
    return 0


def cmd_partition(args) -> int:
    edges = load_edge_csv(args.data)
    spec = PartitionSpec(args.partitions)
    shards = dispatch(spec, edges, args.directed)
    base, ext = os.path.splitext(args.out_prefix)
    ext = ext or ".csv"
    paths = []
    for p, shard in enumerate(shards):
        path = f"{base}.part{p}{ext}"
        save_edge_csv(path, list(shard))
        paths.append(path)
    stats = balance_stats(spec, edges, args.directed)
    stats_path = f"{base}.stats.json"
    with open(stats_path, "w") as fh:
        json.dump(
            {
                "node_counts": list(stats.node_counts),
                "edge_counts": list(stats.edge_counts),
                "node_cv": stats.node_cv,
                "edge_cv": stats.edge_cv,
                "shards": paths,
            },
            fh,
        )
    print(json.dumps({"shards": paths, "stats": stats_path}))
    return 0


def cmd_continuous(args) -> int:
    config = load_config(args.config)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        last = None
        for report in run_continuous(config):
            out.write(report.to_json() + "\n")
            last = report
        if args.histograms and last is not None:
            for kind, counts in (("node", last.node_access_counts), ("edge", last.edge_access_counts)):
                path = f"{args.histograms}.{kind}.csv"
                with open(path, "w") as fh:
                    fh.write("rank,count\n")
                    for rank, count in enumerate(counts, start=1):
                        fh.write(f"{rank},{count}\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_cluster(args) -> int:
    """TCP-mode demo: partition a stream, serve it, and check the distributed
    sample against the single-graph result."""
    edges = load_edge_csv(args.data) if args.data else generate_synthetic(200, 2000, 2.2, 100_000, args.seed)
    spec = ClusterSpec(args.machines, args.workers)
    cluster = ClusterSim(spec, directed=args.directed, tau=args.tau)
    cluster.add_edges(edges)
    local = DynamicGraph(directed=args.directed, tau=args.tau)
    local.add_edges(InsertionBatch(edges))

    servers, transport = serve_cluster_tcp(cluster)
    cluster.transport = transport
    try:
        rng = np.random.default_rng(args.seed)
        nodes = sorted({s for s, _, _ in edges})
        t_hi = max(t for _, _, t in edges) + 1
        matches = 0
        for i in range(args.requests):
            targets = [int(x) for x in rng.choice(nodes, size=8)]
            times = [int(t_hi)] * 8
            request = SampleRequest(targets, times, _int_list(args.fanouts), SamplingPolicy(args.policy, args.delta), int(rng.integers(0, 2**31)))
            got = cluster.sample_khop(request, Origin(0, i % args.workers))
            want = sample_khop(local, request)
            matches += int(got == want)
        telemetry = [
            {"machine": m, "rank": r, "requests": t.requests_served, "targets": t.targets_sampled, "busy_time": t.busy_time}
            for m, r, t in cluster.all_telemetry()
        ]
        print(
            json.dumps(
                {
                    "requests": args.requests,
                    "bitwise_matches": matches,
                    "rank_cv": cluster.rank_group_cv(),
                    "telemetry": telemetry,
                }
            )
        )
    finally:
        transport.close()
        for server in servers:
            server.stop()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ctdg", description="Continuous-time dynamic graph engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a graph from CSV and print storage stats")
    _add_graph_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="write a synthetic edge stream")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--edges", type=int, required=True)
    p.add_argument("--skew", type=float, default=2.2)
    p.add_argument("--time-span", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="temporal k-hop sample, JSON to stdout")
    _add_graph_args(p)
    p.add_argument("--targets", required=True, help="comma-separated node ids")
    p.add_argument("--times", required=True, help="comma-separated query timestamps")
    p.add_argument("--fanouts", default="10,10")
    p.add_argument("--policy", default="recent", choices=["recent", "uniform", "time_window"])
    p.add_argument("--delta", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="throughput benchmark")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--sizing")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("partition", help="hash-partition a CSV into shards")
    p.add_argument("--data", required=True)
    p.add_argument("--partitions", type=int, required=True)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("continuous", help="run the continuous-learning loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="JSON-lines report path (default stdout)")
    p.add_argument("--histograms", help="prefix for access-count CSV histograms")
    p.set_defaults(func=cmd_continuous)

    p = sub.add_parser("cluster", help="TCP-mode distributed sampling demo")
    p.add_argument("--data")
    p.add_argument("--machines", type=int, default=2)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--tau", type=int, default=48)
    p.add_argument("--fanouts", default="10,10")
    p.add_argument("--policy", default="recent", choices=["recent", "uniform", "time_window"])
    p.add_argument("--delta", type=int, default=0)
    p.add_argument("--requests", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IngestFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
