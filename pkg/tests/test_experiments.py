import json

import numpy as np
import pytest

from mfnets.data_io import generate_family
from mfnets.experiments import (
    NATURAL_EDGES,
    SUMMARIZERS,
    PoolTooSmallError,
    check_pool,
    map_trials,
    ordering_graphs,
    ratio_histogram,
    read_csv,
    run_hf_sweep,
    run_noise_orderings,
    run_sparsity_study,
    run_three_model,
    run_topology_histogram,
    sparsity_graph,
    summarize_topology,
    worker_count,
)
from mfnets.graph import longest_chain, validate
from mfnets.objective import NodeData


def _square(a, b):
    return a * a + b


def small_runs():
    return {
        "three_model": lambda: run_three_model(range(3), max_iters=500, grid_size=21),
        "noise_orderings": lambda: run_noise_orderings(range(2), counts=(20, 10, 5), max_iters=100,
                                                       grid_size=5),
        "topology": lambda: run_topology_histogram(6, seed=3, max_iters=100),
        "sparsity": lambda: run_sparsity_study(range(2), lambdas=(0.01,), max_iters=2000, test_size=50),
    }


@pytest.fixture(scope="module")
def results():
    return {name: fn() for name, fn in small_runs().items()}


@pytest.mark.parametrize("name", ["three_model", "noise_orderings", "topology", "sparsity"])
def test_summary_recomputed_from_written_records(results, name, tmp_path):
    res = results[name]
    files = res.write(tmp_path)
    records = read_csv(tmp_path / files["records"])
    assert len(records) == len(res.records)
    emitted = json.loads((tmp_path / "summary.json").read_text())
    recomputed = json.loads(json.dumps(SUMMARIZERS[res.name](records)))
    assert recomputed == emitted
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["experiment"] == res.name
    assert set(manifest["metadata"]) == {"runtime_s", "finished"}
    assert "version" in manifest and "config" in manifest


@pytest.mark.parametrize("name", ["three_model", "topology"])
def test_outputs_byte_identical_on_rerun(results, name, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    results[name].write(a)
    small_runs()[name]().write(b)
    for f in sorted(p.name for p in a.iterdir()):
        if f == "manifest.json":
            ma, mb = (json.loads((d / f).read_text()) for d in (a, b))
            ma.pop("metadata"), mb.pop("metadata")
            assert ma == mb
        else:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_thread_count_does_not_change_results():
    one = run_topology_histogram(4, seed=1, threads=1, max_iters=100)
    two = run_topology_histogram(4, seed=1, threads=2, max_iters=100)
    assert one.records == two.records
    assert one.tables == two.tables


def test_map_trials_order_and_worker_count(monkeypatch):
    args = [(i, 1) for i in range(7)]
    assert map_trials(_square, args, threads=3) == [i * i + 1 for i in range(7)]
    monkeypatch.setenv("MFNET_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("MFNET_THREADS", "0")
    assert worker_count() == 1
    assert worker_count(2) == 2


def test_three_model_records(results):
    res = results["three_model"]
    assert [r["seed"] for r in res.records] == [0, 1, 2]
    for r in res.records:
        assert r["ratio"] == pytest.approx(r["mse_true"] / r["mse_hierarchical"])
    assert len(res.tables["curves"]) == 3 * 21


def test_ordering_graphs():
    graphs = ordering_graphs()
    assert len(graphs["natural"].edges) == 8
    assert sorted(e.key for e in graphs["natural"].edges) == sorted(NATURAL_EDGES)
    for name in ("hier_delta", "hier_noise"):
        assert len(graphs[name].edges) == 8
        assert longest_chain(graphs[name], 9) == 9
    assert longest_chain(graphs["natural"], 9) == 5
    for g in graphs.values():
        validate(g)
        assert g.nodes[1].dim == 2


def test_noise_orderings_records(results):
    res = results["noise_orderings"]
    for r in res.records:
        assert r["ratio_delta"] == pytest.approx(r["mse_natural"] / r["mse_hier_delta"])
        assert r["ratio_noise"] == pytest.approx(r["mse_natural"] / r["mse_hier_noise"])
    assert len(res.tables["surfaces"]) == 2 * 25
    with pytest.raises(ValueError):
        run_noise_orderings(range(1), counts=(1, 2))
    with pytest.raises(ValueError):
        run_noise_orderings(range(1), sigma="bogus")


def test_ratio_histogram_degenerate_at_one():
    hist = ratio_histogram(np.ones(10), bins=24, log_range=(-3.0, 3.0))
    counts = [h["count"] for h in hist]
    assert sum(counts) == 10 and max(counts) == 10
    (b,) = [h for h in hist if h["count"]]
    assert b["lo"] <= 1.0 < b["hi"]
    # out-of-range ratios are clipped into the end bins
    hist = ratio_histogram([1e-9, 1e9], bins=4)
    assert hist[0]["count"] == 1 and hist[-1]["count"] == 1


def test_topology_self_ratio_and_summary():
    recs = [{"ratio_full_hierarchical": 0.5, "ratio_peer_hierarchical": 2.0, "ratio_full_peer": 0.25},
            {"ratio_full_hierarchical": 0.5, "ratio_peer_hierarchical": 0.5, "ratio_full_peer": 1.0}]
    s = summarize_topology(recs)
    assert s["frac_full_lt_hierarchical"] == 1.0
    assert s["frac_peer_lt_hierarchical"] == 0.5
    assert s["frac_both_lt_hierarchical"] == 0.5


def test_topology_histogram_tables(results):
    res = results["topology"]
    hist = res.tables["histogram"]
    assert {h["pair"] for h in hist} == {"full/hierarchical", "peer/hierarchical", "full/peer"}
    for pair in ("full/hierarchical", "peer/hierarchical", "full/peer"):
        assert sum(h["count"] for h in hist if h["pair"] == pair) == 6


def test_topology_ingested_pool_and_pool_errors():
    pool = generate_family("peer_truth", dim=2, counts=[30, 10, 6], noise=0.01, seed=0).datasets
    res = run_topology_histogram(3, seed=0, pool=pool, max_iters=100)
    assert res.config["pool"] == "ingested" and len(res.records) == 3
    with pytest.raises(PoolTooSmallError, match="node 3"):
        run_topology_histogram(2, pool=pool, counts=(20, 5, 6))
    with pytest.raises(PoolTooSmallError, match="no samples for node 2"):
        check_pool([NodeData(1, np.zeros((5, 1)), np.zeros(5)), NodeData(3, np.zeros((5, 1)), np.zeros(5))],
                   {1: 2, 2: 1, 3: 2})


def test_sparsity_rows(results):
    res = results["sparsity"]
    methods = [(r["seed"], r["method"]) for r in res.records]
    assert methods == [(0, "none"), (0, "l2"), (0, "l1"), (1, "none"), (1, "l2"), (1, "l1")]
    for r in res.records:
        if r["method"] == "l1":
            assert r["kkt"] <= 1e-4
    g = sparsity_graph()
    assert sorted(e.key for e in g.edges) == [(1, 2), (1, 3), (2, 3)]
    assert all(e.basis.degree == 0 for e in g.edges)


def test_hf_sweep_groups():
    res = run_hf_sweep(range(1), hf_counts=(3, 6), lam=0.01, max_iters=2000, test_size=30)
    assert res.name == "hf_sweep"
    assert sorted({g["hf_count"] for g in res.summary["groups"]}) == [3, 6]
