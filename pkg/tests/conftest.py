"""Shared fixtures and random-instance generators.

Generators build feasible instances by construction: compressors are placed
on tree branches oriented along the mass-forced flow, and the reference
squared pressure is chosen large enough to cover every possible drop, so
pressure positivity can never bind.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gfsolve.network import GasNetwork, build_network, load_network, load_scenario

DATA = Path(__file__).resolve().parents[1] / "src" / "gfsolve" / "data"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def belgian_net() -> GasNetwork:
    return load_network(DATA / "belgian22.json")


@pytest.fixture(scope="session")
def belgian_base_q(belgian_net):
    return load_scenario(DATA / "belgian22_base.json", belgian_net)


@pytest.fixture(scope="session")
def demo_net() -> GasNetwork:
    return load_network(DATA / "two_cycle_demo.json")


@pytest.fixture(scope="session")
def demo_base_q(demo_net):
    return load_scenario(DATA / "two_cycle_demo_base.json", demo_net)


@pytest.fixture()
def two_node_net():
    return build_network(["1", "2"], [("e1", "1", "2", "pipe", 4.0)], "1", 100.0)


@pytest.fixture()
def triangle_net():
    return build_network(
        ["1", "2", "3"],
        [("e1", "1", "2", "pipe", 1.0), ("e2", "2", "3", "pipe", 1.0),
         ("e3", "1", "3", "pipe", 1.0)],
        "1", 100.0)


def balanced_injections(rng, n, scale=1.0):
    q = rng.normal(0.0, scale, n)
    q[-1] -= q.sum()
    return q


def _tree_flows(parent, parent_dir, q):
    """Edge flows of a tree given parent pointers (independent mini-solver)."""
    n = len(q)
    order = sorted(range(n), key=lambda v: -_depth(parent, v))
    resid = np.array(q, dtype=float)
    flows = {}
    for v in order:
        if parent[v] < 0:
            continue
        # parent_dir > 0 means the edge points child -> parent, so positive
        # edge flow equals the subtree's net injection.
        flows[v] = resid[v] if parent_dir[v] > 0 else -resid[v]
        resid[parent[v]] += resid[v]
    return flows


def _depth(parent, v):
    d = 0
    while parent[v] >= 0:
        v = parent[v]
        d += 1
    return d


def random_tree(rng, n_max=50, compressors=True):
    """Random feasible tree instance (network, injections)."""
    n = int(rng.integers(2, n_max + 1))
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    # parent_dir > 0: edge points child -> parent; < 0: parent -> child
    parent_dir = [0] + [1 if rng.random() < 0.5 else -1 for _ in range(1, n)]
    q = balanced_injections(rng, n, scale=1.0)
    flows = _tree_flows(parent, parent_dir, q)

    n_comp = int(rng.integers(0, 3)) if compressors and n > 2 else 0
    comp_children = set(
        rng.choice(np.arange(1, n), size=min(n_comp, n - 1), replace=False).tolist())
    names = [f"n{i}" for i in range(n)]
    edges = []
    for child in range(1, n):
        par = parent[child]
        u, v = (names[child], names[par]) if parent_dir[child] > 0 \
            else (names[par], names[child])
        if child in comp_children:
            # Orient along the forced flow so the direction constraint holds.
            flow = flows[child]   # along the current (u, v) orientation
            if flow < 0:
                u, v = v, u
            edges.append((f"e{child}", u, v, "compressor",
                          float(rng.uniform(1.05, 1.6))))
        else:
            edges.append((f"e{child}", u, v, "pipe",
                          float(rng.uniform(0.01, 1.0))))
    # Upper-bound every possible drop so pressures stay positive.
    total = float(np.sum(np.abs(q)))
    psi_ref = 1.0 * n * total ** 2 + float(rng.uniform(50.0, 150.0))
    return build_network(names, edges, names[0], psi_ref), q


def random_single_cycle(rng, cycle_range=(3, 10), n_branches=3,
                        bridge_compressors=True, scale=1.0):
    """One cycle of pipes plus pendant branches, optionally with compressors."""
    k = int(rng.integers(cycle_range[0], cycle_range[1] + 1))
    names = [f"n{i}" for i in range(k)]
    edges = []
    frictions = []
    for i in range(k):
        u, v = names[i], names[(i + 1) % k]
        if rng.random() < 0.5:
            u, v = v, u
        a = float(rng.uniform(0.02, 0.3))
        frictions.append(a)
        edges.append((f"e{i}", u, v, "pipe", a))
    pend = []
    for j in range(int(rng.integers(0, n_branches + 1))):
        base = names[int(rng.integers(k))]   # attach to cycle nodes only
        child = f"n{len(names)}"
        names.append(child)
        pend.append((base, child, rng.random() < 0.35 and bridge_compressors))
        edges.append(None)   # placeholder, oriented after injections are drawn
    q = balanced_injections(rng, len(names), scale)
    # Orient pendant edges along their forced flow (net injection of the leaf).
    e_idx = k
    for base, child, is_comp in pend:
        leaf_q = q[int(child[1:])]
        u, v = (base, child) if leaf_q <= 0 else (child, base)
        if is_comp:
            edges[e_idx] = (f"e{e_idx}", u, v, "compressor",
                            float(rng.uniform(1.05, 1.5)))
        else:
            edges[e_idx] = (f"e{e_idx}", u, v, "pipe",
                            float(rng.uniform(0.02, 0.3)))
        e_idx += 1
    total = float(np.sum(np.abs(q)))
    psi_ref = 0.35 * len(edges) * total ** 2 + float(rng.uniform(50.0, 150.0))
    return build_network(names, edges, names[0], psi_ref), q


def random_cactus(rng, n_cycles=(1, 3), cycle_len=(3, 6), n_pendant=(2, 5),
                  compressors=True, scale=1.0):
    """Edge-disjoint cycles joined through nodes, pendants possibly compressed."""
    names = ["n0"]
    edges = []
    pend = []

    def new_node():
        names.append(f"n{len(names)}")
        return names[-1]

    attach = ["n0"]
    for _ in range(int(rng.integers(n_cycles[0], n_cycles[1] + 1))):
        base = attach[int(rng.integers(len(attach)))]
        k = int(rng.integers(cycle_len[0], cycle_len[1] + 1))
        cyc = [base] + [new_node() for _ in range(k - 1)]
        for i in range(k):
            u, v = cyc[i], cyc[(i + 1) % k]
            if rng.random() < 0.5:
                u, v = v, u
            edges.append((f"e{len(edges)}", u, v, "pipe",
                          float(rng.uniform(0.02, 0.3))))
        attach.extend(cyc[1:])
    for _ in range(int(rng.integers(n_pendant[0], n_pendant[1] + 1))):
        base = attach[int(rng.integers(len(attach)))]
        child = new_node()
        pend.append((base, child, compressors and rng.random() < 0.3))
        edges.append(None)
        attach.append(child)

    q = balanced_injections(rng, len(names), scale)
    # Pendant (bridge) flows equal the leaf injection; orient accordingly.
    filled = []
    for entry in edges:
        if entry is not None:
            filled.append(entry)
    e_idx = len(filled)
    for base, child, is_comp in pend:
        leaf_q = q[int(child[1:])]
        u, v = (base, child) if leaf_q <= 0 else (child, base)
        if is_comp:
            filled.append((f"e{e_idx}", u, v, "compressor",
                           float(rng.uniform(1.05, 1.5))))
        else:
            filled.append((f"e{e_idx}", u, v, "pipe",
                           float(rng.uniform(0.02, 0.3))))
        e_idx += 1
    total = float(np.sum(np.abs(q)))
    psi_ref = 0.35 * len(filled) * total ** 2 + float(rng.uniform(50.0, 150.0))
    return build_network(names, filled, "n0", psi_ref), q


def write_fixture(tmp_path, name: str, payload: dict) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2))
    return str(path)
