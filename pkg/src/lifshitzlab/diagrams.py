"""Even-block partitions, Feynman graphs, and power counting.

Moments of products of the random potential expand over partitions of the
doubled insertion-index set {1..n, n+2..2n+1} into blocks of even size; a
block {i, i+1} of consecutive indices is a gate (tadpole) and is removed by
the self-energy renormalization.

Each partition maps to a closed directed multigraph: two chains of n
vertices carry momentum lines p_1..p_{n+1} and p_{n+2}..p_{2n+2}, block
members are merged into single vertices, and the four chain endpoints merge
into one external vertex (the endpoint delta function is forced by the block
deltas).  Momentum conservation at the merged vertices reproduces the block
delta functions delta(sum_{i in S} p_i - p_{i+1}) exactly.

A spanning tree avoiding the two phase-carrying lines p_1, p_{n+2} splits
edges into k tree momenta and l loop momenta with k + l = 2n + 2; the
reduced system u_i = sum_j a_ij w_j determines the same affine subspace as
the block deltas (checked by exact rank over the rationals).

Power counting on a subgraph G' (a subset of lines): N vertices, I internal
lines, E external hooks, Lambda = I - N + 1 loops,

    div = 3 Lambda - 2 I,      l-div = Lambda - 4 I.

A graph is superficially convergent when every connected subgraph satisfies
div < -2 eps E, or div = 0 with l-div <= -eps.
"""

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction

from .density import DensitySpec
from .errors import CombinatorialBudgetError

__all__ = [
    "IndexSet",
    "Partition",
    "enumerate_partitions",
    "cumulant_coefficient",
    "FeynmanGraph",
    "build_feynman_graph",
    "spanning_tree_decomposition",
    "DeltaSystem",
    "divergence_degree",
    "classify_superficial_convergence",
    "CensusReport",
    "is_graph_F",
]

EXTERNAL = "ext"


@dataclass(frozen=True)
class IndexSet:
    """Doubled insertion indices {1..n_left, n_left+2 .. n_left+n_right+1}."""

    n_left: int
    n_right: int

    def __post_init__(self):
        if self.n_left < 0 or self.n_right < 0:
            raise ValueError("sizes must be >= 0")

    @property
    def members(self) -> tuple:
        left = range(1, self.n_left + 1)
        right = range(self.n_left + 2, self.n_left + self.n_right + 2)
        return tuple(left) + tuple(right)

    def __len__(self):
        return self.n_left + self.n_right


def _is_gate(block) -> bool:
    return len(block) == 2 and max(block) - min(block) == 1


@dataclass(frozen=True)
class Partition:
    """Partition of an index set into disjoint even-size blocks."""

    index_set: IndexSet
    blocks: frozenset  # of frozensets

    def __post_init__(self):
        members = set(self.index_set.members)
        seen = set()
        for b in self.blocks:
            if len(b) % 2:
                raise ValueError("blocks must have even size")
            if b & seen:
                raise ValueError("blocks must be disjoint")
            seen |= b
        if seen != members:
            raise ValueError("blocks must cover the index set")

    @property
    def is_pairing(self) -> bool:
        return all(len(b) == 2 for b in self.blocks)

    @property
    def has_gate(self) -> bool:
        return any(_is_gate(b) for b in self.blocks)

    def canonical_key(self):
        return tuple(sorted(tuple(sorted(b)) for b in self.blocks))

    def label(self) -> str:
        inner = ",".join("-".join(map(str, b)) for b in self.canonical_key())
        return f"n{self.index_set.n_left}.{self.index_set.n_right}:{inner}"


def _even_partitions(members):
    members = list(members)
    if not members:
        yield []
        return
    first, rest = members[0], members[1:]
    for size_minus_one in range(1, len(members), 2):
        for companions in itertools.combinations(rest, size_minus_one):
            block = frozenset((first, *companions))
            remaining = [m for m in rest if m not in block]
            for tail in _even_partitions(remaining):
                yield [block] + tail


def enumerate_partitions(index_set: IndexSet, pairings_only: bool = False,
                         gate_free: bool = False, limit: int = 16):
    """All even-block partitions, duplicate-free, in sorted canonical order."""
    members = index_set.members
    if len(members) > limit:
        raise CombinatorialBudgetError(
            f"index set of size {len(members)} exceeds the enumeration guard {limit}"
        )
    if pairings_only and len(members) % 2:
        raise ValueError("pairings need an even number of indices")
    out = []
    for blocks in _even_partitions(members):
        if pairings_only and any(len(b) != 2 for b in blocks):
            continue
        if gate_free and any(_is_gate(b) for b in blocks):
            continue
        out.append(Partition(index_set, frozenset(blocks)))
    out.sort(key=lambda p: p.canonical_key())
    return out


_CUMULANT_CACHE = {}


def cumulant_coefficient(block_size: int, density: DensitySpec = DensitySpec()) -> float:
    """Coefficient c_{2l} of the even-partition moment expansion.

    Defined recursively so that the single-site moments satisfy
    m_{2l} = sum over even partitions pi of 2l slots of prod_j c_{|S_j|};
    in particular c_2 = 1 for a unit-variance density.
    """
    if block_size % 2 or block_size <= 0:
        raise ValueError("block size must be a positive even integer")
    key = (block_size, density.family)
    if key in _CUMULANT_CACHE:
        return _CUMULANT_CACHE[key]
    if block_size == 2:
        val = density.moment(2)  # = 1 by the unit-variance assumption
    else:
        total = 0.0
        for blocks in _even_partitions(tuple(range(block_size))):
            if len(blocks) == 1:
                continue
            prod = 1.0
            for b in blocks:
                prod *= cumulant_coefficient(len(b), density)
            total += prod
        val = density.moment(block_size) - total
    _CUMULANT_CACHE[key] = val
    return val


def moment_from_partition_sum(order: int, density: DensitySpec = DensitySpec()) -> float:
    """Reconstruct m_{2l} from the partition sum (consistency oracle)."""
    total = 0.0
    for blocks in _even_partitions(tuple(range(order))):
        prod = 1.0
        for b in blocks:
            prod *= cumulant_coefficient(len(b), density)
        total += prod
    return total


@dataclass(frozen=True)
class FeynmanGraph:
    """Closed directed multigraph of a partition, with the external vertex merged."""

    n: int
    partition: Partition
    edges: dict = field(repr=False)  # edge id (1-based) -> (tail, head)
    special_edges: tuple = ()

    @property
    def edge_ids(self):
        return tuple(sorted(self.edges))

    @property
    def vertices(self):
        out = set()
        for t, h in self.edges.values():
            out.add(t)
            out.add(h)
        return out

    @property
    def zero_loops(self):
        """Edges whose endpoints coincide (gates)."""
        return tuple(e for e, (t, h) in sorted(self.edges.items()) if t == h)

    def degree(self, vertex) -> int:
        return sum((t == vertex) + (h == vertex) for t, h in self.edges.values())

    def delta_system(self) -> "DeltaSystem":
        """Block delta functions as integer coefficient vectors over p_1..p_{2n+2}."""
        dim = 2 * self.n + 2
        rows = []
        for block in sorted(self.partition.blocks, key=lambda b: min(b)):
            row = [0] * dim
            for i in sorted(block):
                row[i - 1] += 1
                row[i] -= 1
            rows.append(tuple(row))
        return DeltaSystem(dim=dim, constraints=tuple(rows))

    def endpoint_delta(self) -> tuple:
        """The forced constraint p_1 - p_{n+1} + p_{n+2} - p_{2n+2} = 0."""
        row = [0] * (2 * self.n + 2)
        row[0] = 1
        row[self.n] = -1
        row[self.n + 1] = 1
        row[2 * self.n + 1] = -1
        return tuple(row)

    def to_edge_list(self):
        """Exchange format: (edge id, tail label, head label, special flag)."""
        lab = lambda v: "ext" if v == EXTERNAL else "-".join(map(str, sorted(v)))
        return [(e, lab(t), lab(h), e in self.special_edges)
                for e, (t, h) in sorted(self.edges.items())]

    def label(self) -> str:
        if self.partition is not None:
            return self.partition.label()
        lab = lambda v: "ext" if v == EXTERNAL else "-".join(map(str, sorted(v)))
        edges = ";".join(f"{lab(t)}>{lab(h)}" for _, (t, h) in sorted(self.edges.items()))
        return f"adhoc[{edges}]"


def build_feynman_graph(partition: Partition) -> FeynmanGraph:
    """Graph of a partition of the doubled set {1..n, n+2..2n+1}."""
    iset = partition.index_set
    if iset.n_left != iset.n_right:
        raise ValueError("graphs are built over the doubled set with n_left == n_right")
    n = iset.n_left
    owner = {}
    for b in partition.blocks:
        for i in b:
            owner[i] = frozenset(b)
    vert = lambda i: owner[i]
    edges = {1: (EXTERNAL, vert(1))}
    for i in range(2, n + 1):
        edges[i] = (vert(i - 1), vert(i))
    edges[n + 1] = (vert(n), EXTERNAL)
    edges[n + 2] = (EXTERNAL, vert(n + 2))
    for i in range(n + 3, 2 * n + 2):
        edges[i] = (vert(i - 1), vert(i))
    edges[2 * n + 2] = (vert(2 * n + 1), EXTERNAL)
    return FeynmanGraph(n=n, partition=partition, edges=edges,
                        special_edges=(1, n + 2))


def _rank_exact(rows) -> int:
    """Rank over Q of integer rows (fraction-pivot Gaussian elimination)."""
    mat = [[Fraction(int(x)) for x in row] for row in rows]
    if not mat:
        return 0
    rank, cols = 0, len(mat[0])
    for col in range(cols):
        pivot = next((i for i in range(rank, len(mat)) if mat[i][col] != 0), None)
        if pivot is None:
            continue
        mat[rank], mat[pivot] = mat[pivot], mat[rank]
        pv = mat[rank][col]
        mat[rank] = [x / pv for x in mat[rank]]
        for i in range(len(mat)):
            if i != rank and mat[i][col] != 0:
                f = mat[i][col]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[rank])]
        rank += 1
        if rank == len(mat):
            break
    return rank


@dataclass(frozen=True)
class DeltaSystem:
    """Product of momentum delta functions as integer linear constraints."""

    dim: int
    constraints: tuple  # of integer coefficient tuples

    def rank(self) -> int:
        return _rank_exact(self.constraints)

    def equivalent(self, other: "DeltaSystem") -> bool:
        """Same affine subspace: equal row spaces, tested by exact rank."""
        if self.dim != other.dim:
            return False
        ra, rb = self.rank(), other.rank()
        rboth = _rank_exact(list(self.constraints) + list(other.constraints))
        return ra == rb == rboth

    def forces(self, row) -> bool:
        """True when `row` = 0 holds on the subspace (lies in the row space)."""
        return _rank_exact(list(self.constraints) + [tuple(row)]) == self.rank()

    def contains_constraint(self, row) -> bool:
        return tuple(row) in self.constraints


def spanning_tree_decomposition(graph: FeynmanGraph):
    """Tree/loop split avoiding the special edges, plus the a_ij matrix.

    Returns (tree_edge_ids, loop_edge_ids, a) with loop order starting at the
    special edges and a[i][j] in {-1, 0, +1} such that u_i = sum_j a_ij w_j
    reproduces the delta system (the sign is + when closing loop j traverses
    tree edge i along its orientation).
    """
    special = set(graph.special_edges)
    adj = {}
    for eid, (t, h) in graph.edges.items():
        if eid in special:
            continue
        adj.setdefault(t, []).append((eid, h, +1))
        adj.setdefault(h, []).append((eid, t, -1))
    for lst in adj.values():
        lst.sort()

    verts = graph.vertices
    if EXTERNAL in verts:
        root = EXTERNAL
    else:
        root = min(verts, key=lambda v: tuple(sorted(v)))
    parent = {}
    seen = {root}
    frontier = [root]
    tree = []
    while frontier:
        v = frontier.pop(0)
        for eid, w, orient in adj.get(v, []):
            if w not in seen:
                seen.add(w)
                parent[w] = (v, eid, orient)
                frontier.append(w)
                tree.append(eid)
    if seen != graph.vertices:
        raise ValueError("graph disconnected without its special edges")

    loops = [e for e in graph.edge_ids if e not in tree]
    loops = list(graph.special_edges) + [e for e in loops if e not in special]

    def signed_path_to_root(v):
        # orient = +1 when the tree edge points parent -> v; the walk goes
        # v -> parent, i.e. against the edge for orient = +1
        out = {}
        while v != root:
            p, eid, orient = parent[v]
            out[eid] = out.get(eid, 0) + orient
            v = p
        return out

    tree_index = {e: i for i, e in enumerate(tree)}
    a = [[0] * len(loops) for _ in tree]
    for j, eid in enumerate(loops):
        t, h = graph.edges[eid]
        # cycle: w_j from t to h, then tree path h -> t; walking x -> parent(x)
        # crosses edge (parent->x) against its orientation.
        coef = {}
        for e, o in signed_path_to_root(h).items():
            coef[e] = coef.get(e, 0) - o
        for e, o in signed_path_to_root(t).items():
            coef[e] = coef.get(e, 0) + o
        for e, cval in coef.items():
            if cval:
                a[tree_index[e]][j] = cval
    return tuple(tree), tuple(loops), tuple(tuple(r) for r in a)


def reduced_delta_system(graph: FeynmanGraph, tree, loops, a) -> DeltaSystem:
    """Constraints u_i - sum_j a_ij w_j = 0 as a DeltaSystem."""
    dim = 2 * graph.n + 2
    rows = []
    for i, te in enumerate(tree):
        row = [0] * dim
        row[te - 1] = 1
        for j, le in enumerate(loops):
            row[le - 1] -= a[i][j]
        rows.append(tuple(row))
    return DeltaSystem(dim=dim, constraints=tuple(rows))


def _subgraph_vertices(graph, edge_subset):
    verts = set()
    for e in edge_subset:
        t, h = graph.edges[e]
        verts.add(t)
        verts.add(h)
    return verts


def _is_connected(graph, edge_subset):
    verts = _subgraph_vertices(graph, edge_subset)
    if not verts:
        return False
    start = next(iter(verts))
    seen = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        for e in edge_subset:
            t, h = graph.edges[e]
            if t == v and h not in seen:
                seen.add(h)
                frontier.append(h)
            elif h == v and t not in seen:
                seen.add(t)
                frontier.append(t)
    return seen == verts


def subgraph_counts(graph: FeynmanGraph, edge_subset):
    """(N, I, E, Lambda) for a connected line subset; E counts external hooks."""
    verts = _subgraph_vertices(graph, edge_subset)
    n_v = len(verts)
    i_lines = len(edge_subset)
    hooks = 0
    for e in graph.edge_ids:
        if e in edge_subset:
            continue
        t, h = graph.edges[e]
        hooks += (t in verts) + (h in verts)
    lam = i_lines - n_v + 1
    return n_v, i_lines, hooks, lam


def divergence_degree(graph: FeynmanGraph, edge_subset=None):
    """(div, l-div) of a connected subgraph; defaults to the whole graph."""
    if edge_subset is None:
        edge_subset = frozenset(graph.edge_ids)
    edge_subset = frozenset(edge_subset)
    if not _is_connected(graph, edge_subset):
        raise ValueError("subgraph must be connected")
    _, i_lines, _, lam = subgraph_counts(graph, edge_subset)
    return 3 * lam - 2 * i_lines, lam - 4 * i_lines


def is_one_line_reducible(graph: FeynmanGraph, edge_subset) -> bool:
    """Removing some line increases the component count (stranded vertices count)."""
    edge_subset = frozenset(edge_subset)
    if len(edge_subset) <= 1:
        return False
    verts = _subgraph_vertices(graph, edge_subset)
    for e in edge_subset:
        rest = edge_subset - {e}
        start = next(iter(verts))
        seen = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for e2 in rest:
                t, h = graph.edges[e2]
                if t == v and h not in seen:
                    seen.add(h)
                    frontier.append(h)
                elif h == v and t not in seen:
                    seen.add(t)
                    frontier.append(t)
        if seen != verts:  # some original vertex got cut off
            return True
    return False


def is_graph_F(graph: FeynmanGraph, edge_subset) -> bool:
    """Two vertices joined by three parallel internal lines (no 0-loops)."""
    edge_subset = frozenset(edge_subset)
    if len(edge_subset) != 3:
        return False
    verts = _subgraph_vertices(graph, edge_subset)
    if len(verts) != 2:
        return False
    return all(graph.edges[e][0] != graph.edges[e][1] for e in edge_subset)


@dataclass(frozen=True)
class SubgraphRecord:
    edges: tuple
    n_vertices: int
    internal: int
    external: int
    loops: int
    div: int
    l_div: int
    clause: str  # "div<-2epsE" | "div=0,l-div<=-eps" | "fails"


@dataclass(frozen=True)
class CensusReport:
    graph_label: str
    eps: Fraction
    records: tuple
    complete: bool

    @property
    def superficially_convergent(self) -> bool:
        return self.complete and all(r.clause != "fails" for r in self.records)

    @property
    def divergent_records(self):
        return tuple(r for r in self.records if r.clause == "fails")

    def proper_div_nonnegative(self, graph: FeynmanGraph):
        """Proper (connected, not one-line-reducible) strict subgraphs with div >= 0."""
        full = frozenset(graph.edge_ids)
        return tuple(
            r for r in self.records
            if r.div >= 0 and frozenset(r.edges) != full
            and not is_one_line_reducible(graph, r.edges)
        )

    def to_json(self) -> str:
        payload = {
            "graph": self.graph_label,
            "eps": str(self.eps),
            "complete": self.complete,
            "superficially_convergent": self.superficially_convergent,
            "subgraphs": [
                {"edges": list(r.edges), "N": r.n_vertices, "I": r.internal,
                 "E": r.external, "Lambda": r.loops, "div": r.div,
                 "l_div": r.l_div, "clause": r.clause}
                for r in self.records
            ],
        }
        return json.dumps(payload, indent=1)


def classify_superficial_convergence(graph: FeynmanGraph, eps=Fraction(1, 10),
                                     budget: int = 10**6) -> CensusReport:
    """Enumerate all connected subgraphs with their power-counting verdicts."""
    eps = Fraction(eps)
    ids = graph.edge_ids
    records = []
    complete = True
    count = 0
    for r in range(1, len(ids) + 1):
        for subset in itertools.combinations(ids, r):
            count += 1
            if count > budget:
                complete = False
                break
            fs = frozenset(subset)
            if not _is_connected(graph, fs):
                continue
            n_v, i_lines, hooks, lam = subgraph_counts(graph, fs)
            div = 3 * lam - 2 * i_lines
            ldiv = lam - 4 * i_lines
            if Fraction(div) < -2 * eps * hooks:
                clause = "div<-2epsE"
            elif div == 0 and Fraction(ldiv) <= -eps:
                clause = "div=0,l-div<=-eps"
            else:
                clause = "fails"
            records.append(SubgraphRecord(
                edges=tuple(sorted(fs)), n_vertices=n_v, internal=i_lines,
                external=hooks, loops=lam, div=div, l_div=ldiv, clause=clause))
        if not complete:
            break
    return CensusReport(graph_label=graph.label(), eps=eps,
                        records=tuple(records), complete=complete)


def double_factorial_count(n_pairs: int) -> int:
    """(2n-1)!! pairings of 2n indices."""
    out = 1
    for k in range(2 * n_pairs - 1, 0, -2):
        out *= k
    return out
