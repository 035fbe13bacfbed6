"""Gas network data model, file formats, and physics residuals.

A network is a connected directed graph. Edges are either lossy pipes, where
the squared-pressure difference follows ``psi_m - psi_n = a * sign(phi) *
phi**2``, or ideal compressors enforcing ``psi_n = alpha * psi_m`` with
nonnegative flow. One reference node has its squared pressure pinned.

All quantities are dimensionless; callers must use one consistent unit
system. External node/edge names are arbitrary strings mapped to dense
0-based indices at parse time; reports translate back to external names.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .tolerances import EPS_BAL

FORMAT_VERSION = 1


class NetworkError(ValueError):
    """Malformed network/scenario data or an inconsistent model."""


@dataclass(frozen=True)
class Pipe:
    """Lossy pipe; ``a`` is squared pressure drop per squared flow, a > 0."""

    a: float


@dataclass(frozen=True)
class Compressor:
    """Ideal compressor; multiplies squared pressure by ``alpha`` > 0.

    Flow through a compressor is only admissible in the edge direction.
    """

    alpha: float


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    kind: Pipe | Compressor

    @property
    def is_pipe(self) -> bool:
        return isinstance(self.kind, Pipe)

    @property
    def is_compressor(self) -> bool:
        return isinstance(self.kind, Compressor)


@dataclass(frozen=True)
class GasNetwork:
    """Immutable network; safe to share across concurrent solves."""

    node_names: tuple[str, ...]
    edge_names: tuple[str, ...]
    edges: tuple[Edge, ...]
    reference: int
    psi_ref: float

    def __post_init__(self):
        if len(self.edge_names) != len(self.edges):
            raise NetworkError("edge_names and edges length mismatch")

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _node_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.node_names)}

    @cached_property
    def _edge_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.edge_names)}

    def node_id(self, name: str) -> int:
        try:
            return self._node_index[name]
        except KeyError:
            raise NetworkError(f"unknown node {name!r}") from None

    def edge_id(self, name: str) -> int:
        try:
            return self._edge_index[name]
        except KeyError:
            raise NetworkError(f"unknown edge {name!r}") from None

    @cached_property
    def incident(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node: (edge_id, neighbor) pairs sorted by edge id."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.node_names]
        for eid, e in enumerate(self.edges):
            adj[e.tail].append((eid, e.head))
            adj[e.head].append((eid, e.tail))
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def lossy_edges(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.edges) if e.is_pipe)

    @cached_property
    def compressor_edges(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.edges) if e.is_compressor)


@dataclass(frozen=True)
class FlowState:
    """Candidate solution: flows per edge and squared pressures per node."""

    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> tuple[str, ...]:
        return tuple(v.code for v in self.violations)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [{"code": v.code, "message": v.message} for v in self.violations],
        }


def build_network(nodes, edges, reference, psi_ref) -> GasNetwork:
    """Construct a network from plain specs.

    ``edges`` entries are (name, tail_name, head_name, kind, value) where
    kind is "pipe" (value = friction a) or "compressor" (value = ratio alpha).
    """
    node_names = tuple(str(n) for n in nodes)
    index = {n: i for i, n in enumerate(node_names)}
    if len(index) != len(node_names):
        raise NetworkError("duplicate node name")
    edge_names = []
    built = []
    for name, tail, head, kind, value in edges:
        try:
            t, h = index[str(tail)], index[str(head)]
        except KeyError as exc:
            raise NetworkError(f"edge {name!r}: dangling endpoint {exc.args[0]!r}") from None
        if kind == "pipe":
            k = Pipe(float(value))
        elif kind == "compressor":
            k = Compressor(float(value))
        else:
            raise NetworkError(f"edge {name!r}: unknown kind {kind!r}")
        edge_names.append(str(name))
        built.append(Edge(t, h, k))
    if str(reference) not in index:
        raise NetworkError(f"reference node {reference!r}: dangling endpoint")
    return GasNetwork(
        node_names=node_names,
        edge_names=tuple(edge_names),
        edges=tuple(built),
        reference=index[str(reference)],
        psi_ref=float(psi_ref),
    )


def _require(cond: bool, message: str):
    if not cond:
        raise NetworkError(message)


def parse_network(text: str) -> GasNetwork:
    """Parse and normalize a network file.

    Non-ideal compressors ("noideal_compressor" entries carrying both ``a``
    and ``alpha``) are normalized into an ideal compressor followed by a
    lossy pipe through a synthetic junction node.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(
            f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    _require(isinstance(doc, dict), "top level must be an object")
    _require(doc.get("format_version") == FORMAT_VERSION,
             f"unsupported format_version {doc.get('format_version')!r}")
    _require(isinstance(doc.get("nodes"), list), "missing or invalid 'nodes' list")
    _require(isinstance(doc.get("edges"), list), "missing or invalid 'edges' list")
    _require(isinstance(doc.get("reference"), dict), "missing or invalid 'reference'")

    node_names: list[str] = []
    index: dict[str, int] = {}
    for entry in doc["nodes"]:
        _require(isinstance(entry, dict) and "id" in entry, "node entry must carry 'id'")
        name = str(entry["id"])
        _require(name not in index, f"duplicate node id {name!r}")
        index[name] = len(node_names)
        node_names.append(name)

    edge_names: list[str] = []
    edges: list[Edge] = []
    seen_edges: set[str] = set()
    split_queue: list[tuple[int, float]] = []
    for entry in doc["edges"]:
        _require(isinstance(entry, dict), "edge entry must be an object")
        for key in ("id", "from", "to", "type"):
            _require(key in entry, f"edge entry missing {key!r}")
        name = str(entry["id"])
        _require(name not in seen_edges, f"duplicate edge id {name!r}")
        seen_edges.add(name)
        for endpoint in (entry["from"], entry["to"]):
            _require(str(endpoint) in index,
                     f"edge {name!r}: dangling endpoint {endpoint!r}")
        tail, head = index[str(entry["from"])], index[str(entry["to"])]
        _require(tail != head, f"edge {name!r}: self-loop on node {entry['from']!r}")
        etype = entry["type"]
        if etype == "pipe":
            _require("a" in entry, f"pipe {name!r} missing friction 'a'")
            kind: Pipe | Compressor = Pipe(float(entry["a"]))
        elif etype == "compressor":
            _require("alpha" in entry, f"compressor {name!r} missing ratio 'alpha'")
            kind = Compressor(float(entry["alpha"]))
        elif etype == "noideal_compressor":
            _require("a" in entry and "alpha" in entry,
                     f"noideal_compressor {name!r} needs both 'a' and 'alpha'")
            kind = Compressor(float(entry["alpha"]))
            split_queue.append((len(edges), float(entry["a"])))
        else:
            raise NetworkError(f"edge {name!r}: unknown type {etype!r}")
        edge_names.append(name)
        edges.append(Edge(tail, head, kind))

    ref = doc["reference"]
    _require("node" in ref and "psi" in ref, "'reference' needs 'node' and 'psi'")
    _require(str(ref["node"]) in index,
             f"reference node: dangling endpoint {ref['node']!r}")

    net = GasNetwork(
        node_names=tuple(node_names),
        edge_names=tuple(edge_names),
        edges=tuple(edges),
        reference=index[str(ref["node"])],
        psi_ref=float(ref["psi"]),
    )
    for eid, a in split_queue:
        net, _ = split_nonideal_compressor(net, eid, a=a)
    return net


def load_network(path) -> GasNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(fh.read())


def serialize_network(net: GasNetwork) -> str:
    """Canonical JSON form; parse(serialize(net)) == net."""
    edges = []
    for name, e in zip(net.edge_names, net.edges):
        entry: dict = {
            "id": name,
            "from": net.node_names[e.tail],
            "to": net.node_names[e.head],
        }
        if e.is_pipe:
            entry["type"] = "pipe"
            entry["a"] = e.kind.a
        else:
            entry["type"] = "compressor"
            entry["alpha"] = e.kind.alpha
        edges.append(entry)
    doc = {
        "format_version": FORMAT_VERSION,
        "nodes": [{"id": n} for n in net.node_names],
        "edges": edges,
        "reference": {"node": net.node_names[net.reference], "psi": net.psi_ref},
    }
    return json.dumps(doc, indent=2)


def split_nonideal_compressor(net: GasNetwork, edge_id: int, a: float | None = None,
                              alpha: float | None = None) -> tuple[GasNetwork, bool]:
    """Replace a non-ideal compressor edge by compressor + lossy pipe.

    Edge (m, n) becomes an ideal compressor (m, n') followed by a pipe
    (n', n) with friction ``a``, where n' is a fresh zero-injection junction.
    Returns (network, applied); calling on an already-ideal compressor
    (``a`` falsy) is a flagged no-op.
    """
    edge = net.edges[edge_id]
    if not edge.is_compressor:
        raise NetworkError(f"edge {net.edge_names[edge_id]!r} is not a compressor")
    if not a:
        return net, False
    if alpha is None:
        alpha = edge.kind.alpha

    base = net.edge_names[edge_id]
    mid_name = f"{base}__mid"
    while mid_name in net.node_names:
        mid_name += "'"
    pipe_name = f"{base}__pipe"
    while pipe_name in net.edge_names:
        pipe_name += "'"
    mid = net.n_nodes
    edges = list(net.edges)
    edges[edge_id] = Edge(edge.tail, mid, Compressor(float(alpha)))
    edges.append(Edge(mid, edge.head, Pipe(float(a))))
    return GasNetwork(
        node_names=net.node_names + (mid_name,),
        edge_names=net.edge_names + (pipe_name,),
        edges=tuple(edges),
        reference=net.reference,
        psi_ref=net.psi_ref,
    ), True


def _connected(net: GasNetwork) -> bool:
    if net.n_nodes == 0:
        return False
    seen = [False] * net.n_nodes
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for _, v in net.incident[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return all(seen)


def validate(net: GasNetwork) -> ValidationReport:
    """Semantic checks; findings are reported, never raised."""
    found: list[Violation] = []
    if len(set(net.node_names)) != net.n_nodes:
        found.append(Violation("duplicate_node_name", "node names are not unique"))
    if len(set(net.edge_names)) != net.n_edges:
        found.append(Violation("duplicate_edge_name", "edge names are not unique"))
    for name, e in zip(net.edge_names, net.edges):
        if not (0 <= e.tail < net.n_nodes and 0 <= e.head < net.n_nodes):
            found.append(Violation("dangling_endpoint",
                                   f"edge {name!r} references a missing node"))
            continue
        if e.tail == e.head:
            found.append(Violation("self_loop", f"edge {name!r} is a self-loop"))
        if e.is_pipe and not e.kind.a > 0:
            found.append(Violation("nonpositive_friction",
                                   f"pipe {name!r} has a = {e.kind.a}"))
        if e.is_compressor and not e.kind.alpha > 0:
            found.append(Violation("nonpositive_ratio",
                                   f"compressor {name!r} has alpha = {e.kind.alpha}"))
    if not 0 <= net.reference < net.n_nodes:
        found.append(Violation("bad_reference", "reference node index out of range"))
    elif not net.psi_ref > 0:
        found.append(Violation("nonpositive_reference_pressure",
                               f"reference squared pressure is {net.psi_ref}"))
    if not any(v.code == "dangling_endpoint" for v in found) and not _connected(net):
        found.append(Violation("disconnected", "graph is not connected"))
    return ValidationReport(tuple(found))


def require_valid(net: GasNetwork):
    report = validate(net)
    if not report.ok:
        raise NetworkError("; ".join(v.message for v in report.violations))


def incidence_matrix(net: GasNetwork) -> np.ndarray:
    """Signed edge-node incidence: +1 at the tail, -1 at the head."""
    A = np.zeros((net.n_edges, net.n_nodes))
    for i, e in enumerate(net.edges):
        A[i, e.tail] = 1.0
        A[i, e.head] = -1.0
    return A


def injections_from_dict(net: GasNetwork, values: dict[str, float]) -> np.ndarray:
    q = np.zeros(net.n_nodes)
    for name, val in values.items():
        q[net.node_id(str(name))] = float(val)
    return q


def parse_scenario(text: str, net: GasNetwork) -> np.ndarray:
    """Injection vector from a scenario file; omitted nodes default to 0."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(
            f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    _require(isinstance(doc, dict), "top level must be an object")
    _require(doc.get("format_version") == FORMAT_VERSION,
             f"unsupported format_version {doc.get('format_version')!r}")
    _require(isinstance(doc.get("injections"), dict), "missing 'injections' map")
    return injections_from_dict(net, doc["injections"])


def load_scenario(path, net: GasNetwork) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), net)


def require_balanced(q: np.ndarray, eps: float = EPS_BAL):
    total = math.fsum(np.asarray(q, dtype=float).tolist())
    if abs(total) > eps:
        raise NetworkError(f"injections are unbalanced: sum(q) = {total:g}")


@dataclass(frozen=True)
class ResidualReport:
    """Per-equation residual magnitudes of a candidate flow state."""

    mass_by_node: np.ndarray
    weymouth_by_edge: np.ndarray      # zero on compressor slots
    ratio_by_edge: np.ndarray         # zero on pipe slots
    direction_by_edge: np.ndarray     # max(0, -phi) on compressors
    reference: float

    @property
    def mass(self) -> float:
        return float(np.max(np.abs(self.mass_by_node))) if self.mass_by_node.size else 0.0

    @property
    def max_violation(self) -> float:
        parts = [self.mass, self.reference]
        for arr in (self.weymouth_by_edge, self.ratio_by_edge, self.direction_by_edge):
            if arr.size:
                parts.append(float(np.max(arr)))
        return max(parts)

    def ok(self, eps: float) -> bool:
        return self.max_violation <= eps

    def to_dict(self, net: GasNetwork) -> dict:
        return {
            "mass": {n: float(v) for n, v in zip(net.node_names, self.mass_by_node)},
            "weymouth": {net.edge_names[i]: float(self.weymouth_by_edge[i])
                         for i in net.lossy_edges},
            "compressor_ratio": {net.edge_names[i]: float(self.ratio_by_edge[i])
                                 for i in net.compressor_edges},
            "compressor_direction": {net.edge_names[i]: float(self.direction_by_edge[i])
                                     for i in net.compressor_edges},
            "reference": self.reference,
            "max_violation": self.max_violation,
        }


def residuals(net: GasNetwork, q: np.ndarray, state: FlowState) -> ResidualReport:
    """Residuals of mass conservation, pipe drop law, and compressor model."""
    phi = np.asarray(state.phi, dtype=float)
    psi = np.asarray(state.psi, dtype=float)
    if phi.shape != (net.n_edges,) or psi.shape != (net.n_nodes,):
        raise NetworkError("state dimensions do not match the network")
    q = np.asarray(q, dtype=float)
    if q.shape != (net.n_nodes,):
        raise NetworkError("injection dimensions do not match the network")

    mass = -q.copy()
    weymouth = np.zeros(net.n_edges)
    ratio = np.zeros(net.n_edges)
    direction = np.zeros(net.n_edges)
    for i, e in enumerate(net.edges):
        mass[e.tail] += phi[i]
        mass[e.head] -= phi[i]
        dpsi = psi[e.tail] - psi[e.head]
        if e.is_pipe:
            weymouth[i] = abs(dpsi - e.kind.a * np.sign(phi[i]) * phi[i] ** 2)
        else:
            ratio[i] = abs(psi[e.head] - e.kind.alpha * psi[e.tail])
            direction[i] = max(0.0, -phi[i])
    return ResidualReport(
        mass_by_node=mass,
        weymouth_by_edge=weymouth,
        ratio_by_edge=ratio,
        direction_by_edge=direction,
        reference=abs(psi[net.reference] - net.psi_ref),
    )
