"""Topology of induced scene graphs: pruning, connectivity, components, diameter, closure, export."""

from __future__ import annotations

import csv
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import GENRES, NUM_TPS
from .errors import ContractError, ValidationError
from .graphbuild import SparseGraph

# Fill colours for TP1..TP5; plain neighbours are gray.
TP_COLORS = ("#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00")
NEIGHBOR_COLOR = "#bdbdbd"


@dataclass(frozen=True)
class UndirectedGraph:
    """Simple undirected graph over scene indices.

    ``roles`` maps a node to the TPs (1-based) whose window contains it;
    nodes absent from ``roles`` are plain neighbours.
    """

    nodes: frozenset[int]
    edges: frozenset[tuple[int, int]]
    roles: Mapping[int, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        for a, b in self.edges:
            if a == b:
                raise ValidationError(f"self-edge on node {a}")
            if a > b:
                raise ValidationError(f"edge {(a, b)} is not stored as (low, high)")
            if a not in self.nodes or b not in self.nodes:
                raise ValidationError(f"edge {(a, b)} references a missing node")
        for node in self.roles:
            if node not in self.nodes:
                raise ValidationError(f"role assigned to missing node {node}")

    @classmethod
    def build(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]],
              roles: Mapping[int, Iterable[int]] | None = None) -> "UndirectedGraph":
        norm = frozenset((min(a, b), max(a, b)) for a, b in edges)
        roles = {int(k): frozenset(int(t) for t in v) for k, v in (roles or {}).items() if v}
        return cls(frozenset(int(n) for n in nodes), norm, roles)

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def subgraph(self, keep: Iterable[int]) -> "UndirectedGraph":
        keep = frozenset(keep) & self.nodes
        edges = frozenset(e for e in self.edges if e[0] in keep and e[1] in keep)
        roles = {n: r for n, r in self.roles.items() if n in keep}
        return UndirectedGraph(keep, edges, roles)

    def tp_nodes(self, tp: int) -> list[int]:
        return sorted(n for n, r in self.roles.items() if tp in r)


def _roles_from_windows(tp_scenes) -> dict[int, set[int]]:
    """Accept {tp: scenes} (1-based) or a sequence of five windows in TP order."""
    items = tp_scenes.items() if isinstance(tp_scenes, Mapping) else enumerate(tp_scenes, start=1)
    roles: dict[int, set[int]] = {}
    for tp, scenes in items:
        for s in scenes:
            roles.setdefault(int(s), set()).add(int(tp))
    return roles


def to_undirected(sparse: SparseGraph, tp_scenes=None) -> UndirectedGraph:
    """Edge {i, j} iff j is in P_i or i is in P_j."""
    edges = [(i, j) for i, nbrs in enumerate(sparse.neighbor_sets) for j in nbrs if i != j]
    roles = _roles_from_windows(tp_scenes) if tp_scenes is not None else {}
    return UndirectedGraph.build(range(sparse.n), edges, roles)


def prune_to_tp_neighborhood(graph: UndirectedGraph, tp_scenes=None) -> UndirectedGraph:
    """Keep TP nodes, their neighbours and every edge among the kept nodes.

    ``tp_scenes`` defaults to the graph's own role labels; when given, the
    roles are replaced by it.
    """
    if tp_scenes is not None:
        roles = _roles_from_windows(tp_scenes)
        missing = sorted(n for n in roles if n not in graph.nodes)
        if missing:
            raise ContractError(f"TP scenes {missing} are not in the graph")
        graph = UndirectedGraph.build(graph.nodes, graph.edges, roles)
    adj = graph.adjacency()
    keep = set(graph.roles)
    for node in graph.roles:
        keep |= adj[node]
    return graph.subgraph(keep)


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------

def node_connectivity(graph: UndirectedGraph, s: int, t: int) -> int:
    """Number of internally vertex-disjoint s-t paths (a direct edge counts as one).

    Equivalently the smallest vertex cut separating s and t once their direct
    edge is removed, plus one when they are adjacent.  Solved as unit-capacity
    max-flow with every other vertex split into an in/out pair.
    """
    if s == t:
        raise ContractError("node connectivity needs two distinct nodes")
    if s not in graph.nodes or t not in graph.nodes:
        raise ContractError(f"nodes {s}, {t} must both be in the graph")
    # vertex v -> ("in", v) -> ("out", v); s and t are not split
    def tail(v):
        return v if v in (s, t) else ("out", v)

    def head(v):
        return v if v in (s, t) else ("in", v)

    cap: dict = {}

    def arc(a, b):
        cap.setdefault(a, {})
        cap.setdefault(b, {})
        cap[a][b] = cap[a].get(b, 0) + 1
        cap[b].setdefault(a, 0)

    for v in graph.nodes:
        if v not in (s, t):
            arc(("in", v), ("out", v))
    for a, b in graph.edges:
        arc(tail(a), head(b))
        arc(tail(b), head(a))
    if s not in cap or t not in cap:
        return 0

    flow = 0
    while True:
        parent = {s: None}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for v, c in cap[u].items():
                if c > 0 and v not in parent:
                    parent[v] = u
                    queue.append(v)
        if t not in parent:
            return flow
        v = t
        while parent[v] is not None:
            u = parent[v]
            cap[u][v] -= 1
            cap[v][u] += 1
            v = u
        flow += 1


def _pair_mean(graph: UndirectedGraph, pairs: Iterable[tuple[int, int]]) -> float:
    values = [node_connectivity(graph, a, b) for a, b in pairs]
    return float(np.mean(values)) if values else 0.0


def avg_connectivity(graph: UndirectedGraph) -> float:
    """Mean node connectivity over all unordered node pairs."""
    if len(graph.nodes) < 2:
        raise ContractError("average connectivity needs at least two nodes")
    return _pair_mean(graph, itertools.combinations(sorted(graph.nodes), 2))


def _pairs_touching(graph: UndirectedGraph, members: Sequence[int]) -> list[tuple[int, int]]:
    member_set = set(members)
    return [(a, b) for a, b in itertools.combinations(sorted(graph.nodes), 2) if a in member_set or b in member_set]


def per_tp_connectivity(graph: UndirectedGraph, tp_scenes=None) -> list[float]:
    """For each TP, mean connectivity over node pairs involving a node of that TP."""
    if len(graph.nodes) < 2:
        raise ContractError("connectivity needs at least two nodes")
    if tp_scenes is not None:
        graph = UndirectedGraph.build(graph.nodes, graph.edges,
                                      {n: r for n, r in _roles_from_windows(tp_scenes).items() if n in graph.nodes})
    return [_pair_mean(graph, _pairs_touching(graph, graph.tp_nodes(tp))) for tp in range(1, NUM_TPS + 1)]


def tp_pairwise_connectivity(graph: UndirectedGraph, tp_scenes=None) -> np.ndarray:
    """5 x 5 matrix; entry (a, b) averages connectivity over node pairs drawn from TP a and TP b."""
    if tp_scenes is not None:
        graph = UndirectedGraph.build(graph.nodes, graph.edges,
                                      {n: r for n, r in _roles_from_windows(tp_scenes).items() if n in graph.nodes})
    members = [graph.tp_nodes(tp) for tp in range(1, NUM_TPS + 1)]
    out = np.zeros((NUM_TPS, NUM_TPS))
    cache: dict[tuple[int, int], int] = {}
    for a in range(NUM_TPS):
        for b in range(a, NUM_TPS):
            values = []
            for u in members[a]:
                for v in members[b]:
                    if u == v:
                        continue
                    key = (min(u, v), max(u, v))
                    if key not in cache:
                        cache[key] = node_connectivity(graph, *key)
                    values.append(cache[key])
            out[a, b] = out[b, a] = float(np.mean(values)) if values else 0.0
    return out


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def components(graph: UndirectedGraph) -> list[set[int]]:
    """Connected components, largest first (ties broken by smallest node)."""
    adj = graph.adjacency()
    seen: set[int] = set()
    found = []
    for start in sorted(graph.nodes):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        found.append(comp)
    return sorted(found, key=lambda c: (-len(c), min(c)))


def _bfs_depths(adj: Mapping[int, set[int]], source: int) -> dict[int, int]:
    depth = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


def diameter(graph: UndirectedGraph) -> int:
    """Longest shortest path inside the largest component."""
    if not graph.nodes:
        raise ContractError("diameter of an empty graph")
    largest = components(graph)[0]
    adj = graph.adjacency()
    return max(max(_bfs_depths(adj, v).values()) for v in largest)


def triadic_closure(graph: UndirectedGraph) -> float:
    """3 * triangles / connected triples; 0 when there are no connected triples."""
    adj = graph.adjacency()
    triples = sum(len(n) * (len(n) - 1) // 2 for n in adj.values())
    if triples == 0:
        return 0.0
    triangles = sum(len(adj[a] & adj[b]) for a, b in graph.edges) // 3
    return 3.0 * triangles / triples


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def graph_to_json(graph: UndirectedGraph) -> dict:
    return {
        "nodes": [{"id": n, "tps": sorted(graph.roles.get(n, ()))} for n in sorted(graph.nodes)],
        "edges": [list(e) for e in sorted(graph.edges)],
    }


def graph_from_json(doc: Mapping) -> UndirectedGraph:
    try:
        nodes = [int(n["id"]) for n in doc["nodes"]]
        roles = {int(n["id"]): n.get("tps", []) for n in doc["nodes"]}
        edges = [(int(a), int(b)) for a, b in doc["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed graph JSON: {exc}") from None
    return UndirectedGraph.build(nodes, edges, roles)


def graph_to_dot(graph: UndirectedGraph, name: str = "scenes") -> str:
    safe = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name) or "scenes"
    if safe[0].isdigit():
        safe = "g_" + safe
    lines = [f"graph {safe} {{", "  node [style=filled, shape=circle];"]
    for n in sorted(graph.nodes):
        tps = sorted(graph.roles.get(n, ()))
        color = TP_COLORS[tps[0] - 1] if tps else NEIGHBOR_COLOR
        label = f"{n}\\nTP{'/'.join(map(str, tps))}" if tps else str(n)
        lines.append(f'  {n} [label="{label}", fillcolor="{color}"];')
    for a, b in sorted(graph.edges):
        lines.append(f"  {a} -- {b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: UndirectedGraph, path, fmt: str = "dot", name: str = "scenes") -> Path:
    """Write ``graph`` as DOT (TP nodes coloured, neighbours gray) or JSON."""
    path = Path(path)
    if fmt == "dot":
        text = graph_to_dot(graph, name)
    elif fmt == "json":
        text = json.dumps(graph_to_json(graph), indent=1)
    else:
        raise ContractError(f"unknown graph format {fmt!r}; use 'dot' or 'json'")
    path.write_text(text)
    return path


def import_graph(path) -> UndirectedGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: malformed JSON") from None
    return graph_from_json(doc)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopologyReport:
    movie_id: str
    genre: str
    per_tp: tuple[float, ...]
    avg_connectivity: float
    tp_pairwise: tuple[tuple[float, ...], ...]
    components: int
    diameter: int
    triadic_closure: float

    CSV_FIELDS = ("movie_id", "genre", *(f"tp{t}_connectivity" for t in range(1, NUM_TPS + 1)),
                  "avg_connectivity", "components", "diameter", "triadic_closure")

    def csv_row(self) -> list:
        return [self.movie_id, self.genre, *self.per_tp, self.avg_connectivity,
                self.components, self.diameter, self.triadic_closure]

    def to_dict(self) -> dict:
        return {
            "movie_id": self.movie_id, "genre": self.genre, "per_tp": list(self.per_tp),
            "avg_connectivity": self.avg_connectivity, "tp_pairwise": [list(r) for r in self.tp_pairwise],
            "components": self.components, "diameter": self.diameter, "triadic_closure": self.triadic_closure,
        }


def analyze_graph(sparse: SparseGraph, tp_windows: Sequence[Sequence[int]], movie_id: str = "",
                  genre: str = "drama_other") -> tuple[TopologyReport, UndirectedGraph]:
    """Symmetrise, prune to the TP neighbourhood and compute every statistic."""
    pruned = prune_to_tp_neighborhood(to_undirected(sparse), tp_windows)
    pairwise = tp_pairwise_connectivity(pruned)
    single = len(pruned.nodes) < 2
    report = TopologyReport(
        movie_id=movie_id,
        genre=genre,
        per_tp=tuple([0.0] * NUM_TPS) if single else tuple(per_tp_connectivity(pruned)),
        avg_connectivity=0.0 if single else avg_connectivity(pruned),
        tp_pairwise=tuple(tuple(float(x) for x in row) for row in pairwise),
        components=len(components(pruned)),
        diameter=diameter(pruned),
        triadic_closure=triadic_closure(pruned),
    )
    return report, pruned


def write_report_csv(reports: Sequence[TopologyReport], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TopologyReport.CSV_FIELDS)
        for r in reports:
            writer.writerow(r.csv_row())
    return path


def genre_summary(reports: Sequence[TopologyReport]) -> dict[str, dict[str, float]]:
    """Mean of each statistic per genre, for the genres present."""
    out = {}
    for genre in GENRES:
        rows = [r for r in reports if r.genre == genre]
        if not rows:
            continue
        out[genre] = {
            "movies": len(rows),
            **{f"tp{t + 1}_connectivity": float(np.mean([r.per_tp[t] for r in rows])) for t in range(NUM_TPS)},
            "avg_connectivity": float(np.mean([r.avg_connectivity for r in rows])),
            "components": float(np.mean([r.components for r in rows])),
            "diameter": float(np.mean([r.diameter for r in rows])),
            "triadic_closure": float(np.mean([r.triadic_closure for r in rows])),
        }
    return out
