import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfnets.basis import BasisSpec
from mfnets.data_io import (
    ANALYTICAL_TABLE,
    THREE_MODEL_TRUE,
    DataFormatError,
    analytical_mean,
    analytical_model,
    error_report,
    generate_analytical_noise,
    generate_family,
    generate_three_model,
    graph_from_dict,
    graph_to_dict,
    load_dataset,
    load_graph,
    load_params,
    params_from_table,
    read_table,
    save_dataset,
    save_datasets,
    save_graph,
    save_params,
    three_node_graph,
)
from mfnets.graph import GraphError, build_graph, longest_chain
from mfnets.mfnet import LayoutError, MFNet, edge_key, init_params, node_key


def test_dataset_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (7, 2)), rng.normal(size=7) * 1e-17
    save_dataset(tmp_path / "d.csv", x, y)
    x2, y2 = read_table(tmp_path / "d.csv")
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(y, y2)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x1,x2,y"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e12, 1e12, allow_nan=False), min_size=1, max_size=10))
def test_dataset_round_trip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    x = np.array(values)
    save_dataset(path, x, -x)
    x2, y2 = read_table(path)
    np.testing.assert_array_equal(x2.ravel(), x)
    np.testing.assert_array_equal(y2, -x)


def test_read_table_errors_name_path_and_line(tmp_path):
    missing = tmp_path / "missing.csv"
    with pytest.raises(FileNotFoundError, match="missing.csv"):
        read_table(missing)
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,y\n0.1,1.0\n0.2\n")
    with pytest.raises(DataFormatError, match=r"bad.csv:3: dimension inconsistency"):
        read_table(bad)
    bad.write_text("x1,y\n0.1,abc\n")
    with pytest.raises(DataFormatError, match=r":2: parse error"):
        read_table(bad)
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(DataFormatError, match="header"):
        read_table(bad)
    bad.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        read_table(bad)


def test_read_points_without_y(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("x1,x2\n0.5,-0.5\n")
    x, y = read_table(p, with_y=False)
    assert y is None
    np.testing.assert_array_equal(x, [[0.5, -0.5]])
    p.write_text("x1\n")
    x, _ = read_table(p, with_y=False)
    assert x.shape == (0, 1)


def test_load_dataset_validation(tmp_path):
    save_dataset(tmp_path / "a.csv", [0.0, 0.5], [1.0, 2.0])
    (d,) = load_dataset([(2, tmp_path / "a.csv", 0.5)])
    assert d.node == 2 and d.sigma == 0.5 and d.n == 2
    with pytest.raises(DataFormatError, match="sigma"):
        load_dataset([{"node": 1, "path": tmp_path / "a.csv", "sigma": 0.0}])
    (tmp_path / "e.csv").write_text("x1,y\n")
    with pytest.raises(DataFormatError, match="no data rows"):
        load_dataset([(1, tmp_path / "e.csv", 1.0)])


def test_save_datasets_entries(tmp_path):
    sd = generate_three_model(seed=3)
    entries = save_datasets(tmp_path, sd.datasets)
    assert [e["path"] for e in entries] == ["node1.csv", "node2.csv", "node3.csv"]
    back = load_dataset([{**e, "path": tmp_path / e["path"]} for e in entries])
    for a, b in zip(sd.datasets, back):
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)


def test_graph_round_trip(tmp_path):
    g = build_graph([1, 2, 3, 4], [(1, 3), (2, 3), (3, 4)],
                    {1: BasisSpec("legendre", 2, 2, ((-1.0, 1.0), (0.0, 2.0))), 2: BasisSpec("monomial", 1, 2),
                     3: BasisSpec("monomial", 0, 2), 4: BasisSpec("monomial", 3, 2)},
                    BasisSpec("monomial", 1, 2), target=4)
    save_graph(tmp_path / "g.yaml", g)
    assert "1 -> 3" in (tmp_path / "g.yaml").read_text()
    g2 = load_graph(tmp_path / "g.yaml")
    assert graph_to_dict(g2) == graph_to_dict(g)
    assert MFNet(g2).layout == MFNet(g).layout


def test_graph_from_dict_defaults_and_errors():
    g = graph_from_dict({"nodes": [1, 2], "edges": ["1 -> 2"],
                         "node_basis": {"kind": "monomial", "degree": 2, "dim": 1}})
    assert g.nodes[1].degree == 2 and g.target == 2
    with pytest.raises(GraphError, match="cannot parse"):
        graph_from_dict({"nodes": [1, 2], "edges": ["1 => 2"]})
    with pytest.raises(GraphError, match="self-loop"):
        graph_from_dict({"nodes": [1], "edges": ["1 -> 1"]})
    with pytest.raises(GraphError, match="duplicate"):
        graph_from_dict({"nodes": [1, 1]})


def test_params_round_trip_and_layout_check(tmp_path):
    net = MFNet(three_node_graph("true"))
    p = init_params(net, "gaussian", 4)
    save_params(tmp_path / "p.json", p)
    q = load_params(tmp_path / "p.json")
    np.testing.assert_array_equal(p.values, q.values)
    assert q.layout == p.layout
    doc = json.loads((tmp_path / "p.json").read_text())
    assert len(doc["layout"]) == len(net.layout.slices)
    other = MFNet(three_node_graph("peer"))
    with pytest.raises(LayoutError):
        other.check(q)
    with pytest.raises(FileNotFoundError, match="nope.json"):
        load_params(tmp_path / "nope.json")


def test_three_model_table_and_generator():
    sd = generate_three_model(counts=(2, 3, 3), seed=0)
    assert [d.n for d in sd.datasets] == [2, 3, 3]
    # nested design: smaller sets are prefixes of larger ones
    np.testing.assert_array_equal(sd.datasets[0].x, sd.datasets[1].x[:2])
    # noiseless: f1 = beta_1 . [1, x]
    b1 = THREE_MODEL_TRUE[node_key(1)]
    d1 = sd.datasets[0]
    np.testing.assert_allclose(d1.y, b1[0] + b1[1] * d1.x[:, 0], rtol=1e-14)
    # f2 on the grid equals (alpha12 . [1,x]) f1 + beta_2 . [1,x]
    x = sd.grid[:, 0]
    a12, b2 = THREE_MODEL_TRUE[edge_key(1, 2)], THREE_MODEL_TRUE[node_key(2)]
    f1 = b1[0] + b1[1] * x
    np.testing.assert_allclose(sd.truth[2], (a12[0] + a12[1] * x) * f1 + b2[0] + b2[1] * x, rtol=1e-13)
    again = generate_three_model(counts=(2, 3, 3), seed=0)
    np.testing.assert_array_equal(again.datasets[2].y, sd.datasets[2].y)


def test_params_from_table_matches_layout():
    p = params_from_table(three_node_graph("true"), THREE_MODEL_TRUE)
    np.testing.assert_array_equal(p[edge_key(2, 3)], THREE_MODEL_TRUE[edge_key(2, 3)])


def test_analytical_models():
    x = np.array([[0.5, -0.25]])
    x1, x2 = 0.5, -0.25
    top = 2 + 2 * x1**5 + 2 * x2**5 + 3 * x1 * x2 + x1**2 + x2**2 + 5 * x1**2 * x2**2 + 0.5 * (x1 + x2)
    np.testing.assert_allclose(analytical_mean(x, 1, 1), [top])
    np.testing.assert_allclose(analytical_model(1, x), [2 + 3 * x1 * x2 + 0.5 * (x1 + x2)])
    assert sorted(ANALYTICAL_TABLE) == list(range(1, 10))
    # noise factor is a mean of N standard normals: its spread shrinks like 1/sqrt(N)
    rng = np.random.default_rng(0)
    pts = np.zeros((20000, 2))
    for k, (_, _, n) in ANALYTICAL_TABLE.items():
        rel = analytical_model(k, pts, rng) / analytical_mean(pts, *ANALYTICAL_TABLE[k][:2]) - 1
        assert abs(rel.std() * np.sqrt(n) - 1) < 0.05


def test_generate_analytical_noise():
    sd = generate_analytical_noise([3] * 9, seed=1, grid_size=5, noise_overrides={9: 0.1})
    assert [d.node for d in sd.datasets] == list(range(1, 10))
    assert sd.datasets[8].sigma == 0.1 and sd.datasets[0].sigma == 1.0
    assert sd.grid.shape == (25, 2)
    with pytest.raises(ValueError):
        generate_analytical_noise([3] * 8)


def test_generate_family():
    sd = generate_family("chain_truth", h=4, node_degree=2, edge_degree=1, counts=[5, 5, 5, 5],
                         noise=0.1, seed=2, test_size=30)
    assert longest_chain(sd.graph, 4) == 4
    assert all(d.sigma == 0.1 for d in sd.datasets)
    assert sd.truth[4].shape == (30,)
    sd = generate_family("peer_truth", edge_degree=0, edge_magnitude=(0.3, 1.0), seed=5)
    for e in ((1, 3), (2, 3)):
        assert 0.3 <= abs(sd.params[edge_key(*e)][0]) <= 1.0
    with pytest.raises(ValueError, match="unknown family"):
        generate_family("ring")


def test_error_report():
    r = error_report([3.0, 4.0], [3.0, 3.0])
    assert r.rel_rmse == pytest.approx(0.2)
    assert r.max_error == 1.0 and r.n == 2
    with pytest.raises(ValueError):
        error_report([0.0], [1.0])
    with pytest.raises(ValueError):
        error_report([1.0, 2.0], [1.0])
