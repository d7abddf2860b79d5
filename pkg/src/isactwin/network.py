"""Network graph, antenna arrays, and OFDM resource allocation.

The topology is an undirected graph without self-loops over transmitter and
receiver nodes. Resource allocation assigns each transmitting user a set of
subcarriers and symbols (1-based indices, matching the usual resource-grid
numbering) plus per-element power factors under a total power budget.
Overlapping user allocations are allowed; interference handling is the
receiver's problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raytrace import Pose
from .scene import Material


class NetworkError(ValueError):
    """Graph or allocation constraint violation."""


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array along the terminal's local x-axis."""

    num_elements: int
    spacing: float  # meters
    boresight: float = 0.0  # azimuth offset within the terminal frame, radians

    def __post_init__(self):
        if self.num_elements < 1:
            raise NetworkError(f"num_elements must be >= 1, got {self.num_elements}")
        if self.spacing <= 0.0:
            raise NetworkError(f"spacing must be > 0, got {self.spacing}")


@dataclass(eq=False)
class Node:
    id: str
    is_tx: bool = False
    is_rx: bool = False
    virtual_scatterer: bool = False
    array: ArrayConfig | None = None
    pose: Pose | None = None
    reflection_coeff: float | None = None  # set for virtual scatterers


@dataclass(eq=False)
class NetworkGraph:
    """Immutable after construction; mutating operations return new graphs."""

    nodes: dict
    edges: frozenset  # canonical (min, max) id pairs

    @property
    def transmitters(self) -> set:
        return {n.id for n in self.nodes.values() if n.is_tx}

    @property
    def receivers(self) -> set:
        return {n.id for n in self.nodes.values() if n.is_rx}

    def neighbors(self, node_id: str) -> set:
        if node_id not in self.nodes:
            raise NetworkError(f"unknown node {node_id!r}")
        out = set()
        for a, b in self.edges:
            if a == node_id:
                out.add(b)
            elif b == node_id:
                out.add(a)
        return out

    def has_edge(self, a: str, b: str) -> bool:
        return (min(a, b), max(a, b)) in self.edges


def build_network(nodes, edges) -> NetworkGraph:
    """Assemble a graph: unique node ids, symmetric edge set, no self-loops."""
    node_map: dict = {}
    for node in nodes:
        if node.id in node_map:
            raise NetworkError(f"duplicate node id {node.id!r}")
        node_map[node.id] = node
    edge_set = set()
    for a, b in edges:
        if a == b:
            raise NetworkError(f"self-loop on node {a!r}")
        for end in (a, b):
            if end not in node_map:
                raise NetworkError(f"edge references unknown node {end!r}")
        edge_set.add((min(a, b), max(a, b)))
    return NetworkGraph(nodes=node_map, edges=frozenset(edge_set))


def incoming_edges(graph: NetworkGraph, v: str) -> set:
    """Transmitter nodes adjacent to receiver v (the set E_v)."""
    return {q for q in graph.neighbors(v) if graph.nodes[q].is_tx}


def add_virtual_scatterer(
    graph: NetworkGraph,
    position,
    reflection_profile: Material,
    receivers,
    node_id: str | None = None,
    bounds: tuple | None = None,
) -> NetworkGraph:
    """New graph with a dummy transmitter that echoes impinging waveforms.

    The scatterer node is flagged virtual_scatterer and linked to the given
    receivers; it re-emits what it hears, scaled by the reflection profile,
    instead of sending data of its own. If scene bounds are supplied the
    position must lie inside them.
    """
    pos = np.asarray(position, dtype=float).reshape(3)
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        if np.any(pos < lo - 1e-9) or np.any(pos > hi + 1e-9):
            raise NetworkError(f"scatterer position {pos.tolist()} outside scene bounds")
    if node_id is None:
        k = 0
        while f"scatterer{k}" in graph.nodes:
            k += 1
        node_id = f"scatterer{k}"
    elif node_id in graph.nodes:
        raise NetworkError(f"duplicate node id {node_id!r}")
    node = Node(
        id=node_id,
        is_tx=True,
        virtual_scatterer=True,
        pose=Pose(position=pos),
        reflection_coeff=reflection_profile.reflection_coeff,
    )
    nodes = dict(graph.nodes)
    nodes[node_id] = node
    edge_set = set(graph.edges)
    for r in receivers:
        if r not in nodes:
            raise NetworkError(f"unknown receiver {r!r}")
        edge_set.add((min(node_id, r), max(node_id, r)))
    return NetworkGraph(nodes=nodes, edges=frozenset(edge_set))


@dataclass(frozen=True)
class ResourceRequest:
    """One user's ask: subcarrier/symbol sets, a power budget, optional explicit powers."""

    user: str
    subcarriers: frozenset
    symbols: frozenset
    power_budget: float
    power: dict | None = None  # {(n, k): watts}; None means uniform split


@dataclass(eq=False)
class UserAllocation:
    user: str
    subcarriers: frozenset
    symbols: frozenset
    power_budget: float
    uniform_power: float = 0.0
    explicit_power: dict | None = None

    def occupies(self, n: int, k: int) -> bool:
        return n in self.subcarriers and k in self.symbols

    def power(self, n: int, k: int) -> float:
        """Power factor p_qnk; zero off the user's resource set."""
        if not self.occupies(n, k):
            return 0.0
        if self.explicit_power is not None:
            return self.explicit_power.get((n, k), 0.0)
        return self.uniform_power

    @property
    def resource_count(self) -> int:
        return len(self.subcarriers) * len(self.symbols)

    def total_power(self) -> float:
        if self.explicit_power is not None:
            return float(sum(self.explicit_power.values()))
        return self.uniform_power * self.resource_count


@dataclass(eq=False)
class ResourceAllocation:
    n_subcarriers: int
    n_symbols: int
    users: dict  # user id -> UserAllocation


def allocate_resources(requests, n_subcarriers: int, n_symbols: int) -> ResourceAllocation:
    """Validate requests against the grid and the power budgets.

    Default power policy splits the budget uniformly over the user's resource
    set. Explicit per-element powers must stay within the budget and on the
    user's own resource elements. User resource sets may overlap.
    """
    if n_subcarriers < 1 or n_symbols < 1:
        raise NetworkError("grid must have at least one subcarrier and one symbol")
    users: dict = {}
    for req in requests:
        if req.user in users:
            raise NetworkError(f"duplicate user {req.user!r}")
        subs = frozenset(int(n) for n in req.subcarriers)
        syms = frozenset(int(k) for k in req.symbols)
        if not subs or not syms:
            raise NetworkError(f"user {req.user!r}: empty resource set")
        bad_n = [n for n in subs if not 1 <= n <= n_subcarriers]
        bad_k = [k for k in syms if not 1 <= k <= n_symbols]
        if bad_n:
            raise NetworkError(f"user {req.user!r}: subcarrier {min(bad_n)} outside 1..{n_subcarriers}")
        if bad_k:
            raise NetworkError(f"user {req.user!r}: symbol {min(bad_k)} outside 1..{n_symbols}")
        if req.power_budget < 0.0:
            raise NetworkError(f"user {req.user!r}: negative power budget")
        alloc = UserAllocation(
            user=req.user,
            subcarriers=subs,
            symbols=syms,
            power_budget=req.power_budget,
        )
        if req.power is None:
            alloc.uniform_power = req.power_budget / (len(subs) * len(syms))
        else:
            for (n, k), p in req.power.items():
                if n not in subs or k not in syms:
                    raise NetworkError(f"user {req.user!r}: power assigned off-allocation at ({n}, {k})")
                if p < 0.0:
                    raise NetworkError(f"user {req.user!r}: negative power at ({n}, {k})")
            total = sum(req.power.values())
            if total > req.power_budget * (1.0 + 1e-9):
                raise NetworkError(
                    f"user {req.user!r}: total power {total} exceeds budget {req.power_budget}"
                )
            alloc.explicit_power = dict(req.power)
        users[req.user] = alloc
    return ResourceAllocation(n_subcarriers=n_subcarriers, n_symbols=n_symbols, users=users)
