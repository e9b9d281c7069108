"""Datasets, graph and parameter files, synthetic truth generators and error metrics."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .basis import BasisSpec
from .graph import Edge, GraphError, GraphSpec, build_graph
from .mfnet import MFNet, ParamLayout, ParamVector, edge_key, evaluate, init_params, node_key
from .objective import NodeData


class DataFormatError(ValueError):
    pass


# -- three-model example --------------------------------------------------------

# True parameters [offset, slope] of the three-model network 1->2, 2->3, 1->3.
THREE_MODEL_TRUE = {
    node_key(1): [-0.399999, 0.61917357],
    node_key(2): [0.69834347, -1.25328053],
    node_key(3): [0.45912744, 1.31524971],
    edge_key(1, 2): [-0.79113519, -0.34445981],
    edge_key(1, 3): [-0.67351648, -0.32938732],
    edge_key(2, 3): [-1.45728517, 0.59830806],
}

# Parameters reported after training on the true graph; not a minimizer we
# reproduce exactly, kept to check non-uniqueness of the parameterization.
THREE_MODEL_LEARNED = {
    node_key(1): [-0.399999, 0.61917357],
    node_key(2): [0.62987041, -1.1472885],
    node_key(3): [0.62853275, 1.09869172],
    edge_key(1, 2): [-0.96231826, -0.34445981],
    edge_key(1, 3): [0.42886841, -0.25443088],
    edge_key(2, 3): [-1.18968888, 0.59172251],
}

LINEAR_1D = BasisSpec("monomial", 1, 1)

THREE_NODE_EDGES = {
    "true": [(1, 2), (2, 3), (1, 3)],
    "full": [(1, 2), (2, 3), (1, 3)],
    "hierarchical": [(1, 2), (2, 3)],
    "peer": [(1, 3), (2, 3)],
}


def three_node_graph(kind: str = "true", node_basis=LINEAR_1D, edge_basis=LINEAR_1D) -> GraphSpec:
    """One of the three-source graphs: ``true``/``full``, ``hierarchical`` or ``peer``."""
    try:
        edges = THREE_NODE_EDGES[kind]
    except KeyError:
        raise GraphError(f"unknown three-node graph {kind!r}") from None
    return build_graph([1, 2, 3], edges, node_basis, edge_basis, target=3)


def params_from_table(graph, table: dict) -> ParamVector:
    net = MFNet(graph) if not isinstance(graph, MFNet) else graph
    p = init_params(net, "zeros")
    for key, vals in table.items():
        p[key] = vals
    return p


def _nested_points(rng, counts: dict, dim: int, nested: bool) -> dict:
    if nested:
        # one shared draw; each node takes a prefix, so smaller sets sit inside larger ones
        pool = rng.uniform(-1.0, 1.0, (max(counts.values()), dim))
        return {k: pool[:n].copy() for k, n in counts.items()}
    return {k: rng.uniform(-1.0, 1.0, (n, dim)) for k, n in sorted(counts.items())}


@dataclass
class SyntheticData:
    graph: GraphSpec
    params: Optional[ParamVector]
    datasets: list
    grid: np.ndarray
    truth: dict = field(default_factory=dict)


def _counts(counts, nodes) -> dict:
    if isinstance(counts, dict):
        return {int(k): int(v) for k, v in counts.items()}
    counts = list(counts)
    if len(counts) != len(nodes):
        raise ValueError(f"expected {len(nodes)} counts, got {len(counts)}")
    out = {k: int(c) for k, c in zip(nodes, counts)}
    if any(c < 1 for c in out.values()):
        raise ValueError("sample counts must be positive")
    return out


def generate_three_model(counts=(2, 3, 3), nested: bool = True, seed: int = 0,
                         grid_size: int = 201) -> SyntheticData:
    """Noiseless data from the three-model network with its tabulated true parameters.

    Sample locations are uniform on [-1, 1]; the dense grid has ``grid_size``
    equispaced points and ``truth`` holds every node's values on it.
    """
    graph = three_node_graph("true")
    net = MFNet(graph)
    params = params_from_table(net, THREE_MODEL_TRUE)
    cnt = _counts(counts, [1, 2, 3])
    pts = _nested_points(np.random.default_rng(seed), cnt, 1, nested)
    datasets = [NodeData(k, pts[k], evaluate(net, params, k, pts[k])) for k in sorted(cnt)]
    grid = np.linspace(-1.0, 1.0, grid_size).reshape(-1, 1)
    truth = {k: evaluate(net, params, k, grid) for k in (1, 2, 3)}
    return SyntheticData(graph, params, datasets, grid, truth)


# -- analytical noise example --------------------------------------------------

# node -> (delta1, delta2, number of samples averaged in the noise factor)
ANALYTICAL_TABLE = {
    1: (0, 0, 5), 2: (0, 0, 10), 3: (0, 0, 100),
    4: (0, 1, 5), 5: (0, 1, 10), 6: (0, 1, 100),
    7: (1, 1, 5), 8: (1, 1, 10), 9: (1, 1, 100),
}


def analytical_mean(x, delta1: float, delta2: float) -> np.ndarray:
    """Noiseless part of the analytical test function on 2D inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2 = x[:, 0], x[:, 1]
    return (
        2.0
        + (2 * x1**5 + 2 * x2**5) * delta1
        + 3 * x1 * x2
        + (x1**2 + x2**2 + 5 * x1**2 * x2**2) * delta2
        + 0.5 * x1
        + 0.5 * x2
    )


def analytical_model(k: int, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Model ``k``: the mean times (1 + sample mean of N standard normals), redrawn per point.

    Without ``rng`` the noiseless mean is returned.
    """
    d1, d2, nsamp = ANALYTICAL_TABLE[k]
    mean = analytical_mean(x, d1, d2)
    if rng is None:
        return mean
    noise = rng.standard_normal((mean.size, nsamp)).mean(axis=1)
    return mean * (1.0 + noise)


def analytical_grid(size: int = 41) -> np.ndarray:
    t = np.linspace(-1.0, 1.0, size)
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def generate_analytical_noise(counts, seed: int = 0, grid_size: int = 41,
                              noise_overrides: Optional[dict] = None) -> SyntheticData:
    """Noisy samples of the nine analytical models on [-1, 1]^2 plus the noiseless top-model grid.

    ``noise_overrides`` maps node id to the sigma recorded in its NodeData
    (default 1.0); it does not change how data are drawn.
    """
    cnt = _counts(counts, list(range(1, 10)))
    rng = np.random.default_rng(seed)
    sig = {k: 1.0 for k in cnt}
    sig.update(noise_overrides or {})
    datasets = []
    for k in sorted(cnt):
        x = rng.uniform(-1.0, 1.0, (cnt[k], 2))
        datasets.append(NodeData(k, x, analytical_model(k, x, rng), sig[k]))
    grid = analytical_grid(grid_size)
    truth = {9: analytical_mean(grid, 1, 1)}
    return SyntheticData(None, None, datasets, grid, truth)


# -- random-parameter families -------------------------------------------------


def family_graph(family: str, dim: int = 1, node_degree=1, edge_degree=1, h: int = 3) -> GraphSpec:
    """``peer_truth``: 1->3, 2->3. ``chain_truth``: 1->2->...->h.

    Degrees may be an int or a per-node / per-edge dict.
    """
    if family == "peer_truth":
        nodes, edges = [1, 2, 3], [(1, 3), (2, 3)]
    elif family == "chain_truth":
        nodes, edges = list(range(1, h + 1)), [(i, i + 1) for i in range(1, h)]
    else:
        raise ValueError(f"unknown family {family!r}; expected peer_truth or chain_truth")
    nb = {k: BasisSpec("monomial", node_degree[k] if isinstance(node_degree, dict) else node_degree, dim)
          for k in nodes}
    eb = {e: BasisSpec("monomial", edge_degree[e] if isinstance(edge_degree, dict) else edge_degree, dim)
          for e in edges}
    return build_graph(nodes, edges, nb, eb, target=nodes[-1])


def generate_family(family: str, dim: int = 1, node_degree=1, edge_degree=1, counts=None,
                    noise: float = 0.0, seed: int = 0, h: int = 3,
                    edge_magnitude: Optional[tuple] = None, nested: bool = False,
                    test_size: int = 0) -> SyntheticData:
    """Random true network of the given family and noisy samples from it.

    True parameters are standard normal. With ``edge_magnitude=(lo, hi)`` the
    constant coefficient of each edge is redrawn with magnitude uniform in
    ``[lo, hi]`` and a random sign. Inputs are uniform on ``[-1, 1]^dim`` and
    observations carry additive N(0, noise^2) errors; each NodeData records
    ``sigma = noise`` (or 1.0 when noiseless). ``test_size`` uniform test
    points get noiseless truth for every node.
    """
    graph = family_graph(family, dim, node_degree, edge_degree, h)
    net = MFNet(graph)
    rng = np.random.default_rng(seed)
    params = ParamVector(rng.standard_normal(net.layout.size), net.layout)
    if edge_magnitude is not None:
        lo, hi = edge_magnitude
        for e in sorted(graph.edges, key=lambda e: e.key):
            mag = rng.uniform(lo, hi)
            params[edge_key(*e.key)][0] = mag * rng.choice([-1.0, 1.0])
    nodes = sorted(graph.nodes)
    cnt = _counts(counts if counts is not None else [20] * len(nodes), nodes)
    pts = _nested_points(rng, cnt, dim, nested)
    sigma = noise if noise > 0 else 1.0
    datasets = []
    for k in nodes:
        y = evaluate(net, params, k, pts[k])
        if noise > 0:
            y = y + noise * rng.standard_normal(y.size)
        datasets.append(NodeData(k, pts[k], y, sigma))
    grid = rng.uniform(-1.0, 1.0, (test_size, dim))
    truth = {k: evaluate(net, params, k, grid) for k in nodes} if test_size else {}
    return SyntheticData(graph, params, datasets, grid, truth)


# -- error metrics -------------------------------------------------------------


@dataclass
class ErrorReport:
    rel_rmse: float
    max_error: float
    n: int


def error_report(truth, pred) -> ErrorReport:
    """Relative l2 error ``||truth - pred|| / ||truth||`` and max pointwise error."""
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape:
        raise ValueError(f"truth has {truth.size} values, predictions {pred.size}")
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("truth has zero norm; relative error undefined")
    diff = truth - pred
    return ErrorReport(float(np.linalg.norm(diff) / norm),
                       float(np.max(np.abs(diff), initial=0.0)), truth.size)


# -- file formats ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(path, x, y):
    """Write ``x1,...,xd,y`` columns; floats are written with round-trip precision."""
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1) if x.ndim != 2 else x
    y = np.asarray(y, dtype=float).ravel()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join([f"x{i + 1}" for i in range(x.shape[1])] + ["y"])
    lines = [header] + [",".join(_fmt(v) for v in (*row, yy)) for row, yy in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")


def read_table(path, with_y: bool = True) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Parse a columnar file with header ``x1,...,xd[,y]``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file, expected a header line")
    lineno, header = rows[0]
    header = [h.strip() for h in header]
    ncols = len(header)
    expected = [f"x{i + 1}" for i in range(ncols - (1 if with_y else 0))] + (["y"] if with_y else [])
    if header != expected:
        raise DataFormatError(f"{path}:{lineno}: header {header} does not match {expected}")
    data = []
    for lineno, r in rows[1:]:
        if len(r) != ncols:
            raise DataFormatError(
                f"{path}:{lineno}: dimension inconsistency, row has {len(r)} columns, header has {ncols}"
            )
        try:
            data.append([float(c) for c in r])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: parse error: {exc}") from None
    arr = np.array(data, dtype=float).reshape(-1, ncols)
    if with_y:
        return arr[:, :-1], arr[:, -1]
    return arr, None


def load_dataset(entries) -> list[NodeData]:
    """Load per-node files.

    ``entries`` is a sequence of ``(node, path, sigma)`` triples or of dicts
    with those keys.
    """
    out = []
    for ent in entries:
        if isinstance(ent, dict):
            node, path, sigma = ent["node"], ent["path"], ent.get("sigma", 1.0)
        else:
            node, path, sigma = ent
        sigma = float(sigma)
        if not sigma > 0:
            raise DataFormatError(f"node {node}: sigma must be positive, got {sigma}")
        x, y = read_table(path)
        if y.size == 0:
            raise DataFormatError(f"{path}: no data rows")
        out.append(NodeData(int(node), x, y, sigma))
    return out


def save_datasets(directory, datasets: Sequence[NodeData], prefix: str = "node") -> list[dict]:
    """Write one file per node and return manifest entries for them."""
    directory = Path(directory)
    entries = []
    for d in sorted(datasets, key=lambda d: d.node):
        name = f"{prefix}{d.node}.csv"
        save_dataset(directory / name, d.x, d.y)
        entries.append({"node": d.node, "path": name, "sigma": d.sigma})
    return entries


_EDGE_RE = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")


def graph_to_dict(graph: GraphSpec) -> dict:
    return {
        "nodes": [{"id": k, "basis": graph.nodes[k].to_dict()} for k in sorted(graph.nodes)],
        "edges": [
            {"edge": f"{e.source} -> {e.target}", "basis": e.basis.to_dict()}
            for e in sorted(graph.edges, key=lambda e: e.key)
        ],
        "target": graph.target,
    }


def graph_from_dict(d: dict) -> GraphSpec:
    """Build a graph from its document form.

    Optional top-level ``node_basis`` / ``edge_basis`` give defaults for items
    without their own ``basis``.
    """
    node_default = BasisSpec.from_dict(d.get("node_basis", {}))
    edge_default = BasisSpec.from_dict(d.get("edge_basis", {}))
    nodes = {}
    for item in d.get("nodes", []):
        if not isinstance(item, dict):
            item = {"id": item}
        k = int(item["id"])
        if k in nodes:
            raise GraphError(f"duplicate node id {k}")
        nodes[k] = BasisSpec.from_dict(item["basis"]) if "basis" in item else node_default
    edges = []
    for item in d.get("edges", []):
        text = item["edge"] if isinstance(item, dict) else item
        m = _EDGE_RE.match(str(text))
        if not m:
            raise GraphError(f"cannot parse edge {text!r}; expected 'from -> to'")
        j, i = int(m.group(1)), int(m.group(2))
        if j == i:
            raise GraphError(f"self-loop {j} -> {i} is not allowed")
        basis = BasisSpec.from_dict(item["basis"]) if isinstance(item, dict) and "basis" in item else edge_default
        edges.append(Edge(j, i, basis))
    target = d.get("target")
    return GraphSpec(nodes, tuple(edges), None if target is None else int(target))


def save_graph(path, graph: GraphSpec):
    Path(path).write_text(yaml.safe_dump(graph_to_dict(graph), sort_keys=False))


def load_graph(path) -> GraphSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"graph file not found: {path}")
    return graph_from_dict(yaml.safe_load(path.read_text()) or {})


def save_params(path, params: ParamVector):
    doc = {"layout": params.layout.to_records(), "values": [float(v) for v in params.values]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_params(path) -> ParamVector:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parameter file not found: {path}")
    doc = json.loads(path.read_text())
    return ParamVector(np.array(doc["values"], dtype=float), ParamLayout.from_records(doc["layout"]))
