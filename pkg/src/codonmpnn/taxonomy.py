"""NCBI taxonomy tree parsing and balanced tree partitioning.

The partitioner walks the tree depth first from the root, keeping whole
subtrees in the current cluster while they fit under ``ceil(n / k)`` nodes.
A subtree that does not fit starts over in the currently smallest cluster.
Leaves always stay with their parent, so clusters may exceed the ideal size.
"""

from __future__ import annotations

import io
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable

logger = logging.getLogger(__name__)

DEFAULT_K = 20000


class TaxonomyError(ValueError):
    pass


class ParseError(TaxonomyError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class OrphanNode(TaxonomyError):
    pass


class CycleDetected(TaxonomyError):
    pass


class InvalidK(TaxonomyError):
    pass


@dataclass
class TaxonNode:
    tax_id: int
    parent_id: int
    rank: str
    children: list[int] = field(default_factory=list)
    subtree_size: int = 1

    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class TaxonomyTree:
    nodes: dict[int, TaxonNode]
    root_id: int

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, tax_id: int) -> bool:
        return tax_id in self.nodes

    @property
    def root(self) -> TaxonNode:
        return self.nodes[self.root_id]

    def lineage(self, tax_id: int) -> list[int]:
        """Ids from ``tax_id`` up to and including the root."""
        out = [tax_id]
        while tax_id != self.root_id:
            tax_id = self.nodes[tax_id].parent_id
            out.append(tax_id)
        return out

    @classmethod
    def from_parents(cls, parents: dict[int, int], ranks: dict[int, str] | None = None) -> "TaxonomyTree":
        """Build a validated tree from a ``tax_id -> parent_id`` map."""
        ranks = ranks or {}
        nodes = {t: TaxonNode(t, p, ranks.get(t, "no rank")) for t, p in parents.items()}
        return _link(nodes)


def _split_line(line: str, line_number: int) -> list[str]:
    line = line.rstrip("\r\n")
    if line.endswith("\t|"):
        line = line[:-2]
    fields = line.split("\t|\t")
    if len(fields) < 3:
        raise ParseError(f"expected at least 3 fields, got {len(fields)}: {line!r}", line_number)
    return fields


def _link(nodes: dict[int, TaxonNode]) -> TaxonomyTree:
    if not nodes:
        raise ParseError("taxonomy is empty")
    roots = [t for t, node in nodes.items() if node.parent_id == t]
    if len(roots) > 1:
        raise ParseError(f"multiple roots: {sorted(roots)[:10]}")
    for t, node in nodes.items():
        if node.parent_id != t:
            if node.parent_id not in nodes:
                raise OrphanNode(f"node {t} has parent {node.parent_id} which is absent")
            nodes[node.parent_id].children.append(t)
    if not roots:
        raise CycleDetected("no root node (tax_id == parent_id); every node lies on a cycle")
    root_id = roots[0]
    for node in nodes.values():
        node.children.sort()

    # Pre-order from the root; nodes not reached sit on a parent cycle.
    order = []
    stack = [root_id]
    while stack:
        t = stack.pop()
        order.append(t)
        stack.extend(nodes[t].children)
    if len(order) != len(nodes):
        seen = set(order)
        stuck = sorted(t for t in nodes if t not in seen)
        raise CycleDetected(f"{len(stuck)} nodes unreachable from root, e.g. {stuck[:10]}")
    for t in reversed(order):
        node = nodes[t]
        node.subtree_size = 1 + sum(nodes[c].subtree_size for c in node.children)
    return TaxonomyTree(nodes, root_id)


def parse_taxdump(nodes_file: IO[bytes] | IO[str] | Iterable[bytes | str]) -> TaxonomyTree:
    """Parse an NCBI ``nodes.dmp`` stream into a :class:`TaxonomyTree`."""
    nodes: dict[int, TaxonNode] = {}
    for line_number, raw in enumerate(nodes_file, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        fields = _split_line(line, line_number)
        try:
            tax_id, parent_id = int(fields[0].strip()), int(fields[1].strip())
        except ValueError:
            raise ParseError(f"non-integer tax id in {line.rstrip()!r}", line_number) from None
        if tax_id <= 0 or parent_id <= 0:
            raise ParseError(f"tax ids must be positive: {tax_id}, {parent_id}", line_number)
        if tax_id in nodes:
            raise ParseError(f"duplicate tax_id {tax_id}", line_number)
        nodes[tax_id] = TaxonNode(tax_id, parent_id, fields[2].strip())
    return _link(nodes)


def read_taxdump(path: str | os.PathLike) -> TaxonomyTree:
    with open(path, "rb") as fh:
        return parse_taxdump(fh)


@dataclass
class ClusterAssignment:
    k: int
    labels: dict[int, int]

    @property
    def null_label(self) -> int:
        return self.k

    @property
    def n(self) -> int:
        return len(self.labels)

    def clusters(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k)]
        for t in sorted(self.labels):
            out[self.labels[t]].append(t)
        return out


def partition(tree: TaxonomyTree, k: int = DEFAULT_K) -> ClusterAssignment:
    """Balanced tree partitioning into ``k`` clusters.

    Iterative version of the recursive assignment so that deep trees do not
    exhaust the call stack. Children are visited in ascending tax_id order and
    the smallest cluster wins ties by lowest index.
    """
    if not isinstance(k, int) or k < 1:
        raise InvalidK(f"k must be a positive integer, got {k!r}")
    nodes = tree.nodes
    max_cluster_size = (tree.root.subtree_size + k - 1) // k
    sizes = [0] * k
    labels: dict[int, int] = {}

    def assign(tax_id: int, cluster_id: int) -> None:
        labels[tax_id] = cluster_id
        sizes[cluster_id] += 1
        stack.append([tax_id, cluster_id, 0])

    stack: list[list[int]] = []
    assign(tree.root_id, 0)
    while stack:
        frame = stack[-1]
        node = nodes[frame[0]]
        if frame[2] == len(node.children):
            stack.pop()
            continue
        child = nodes[node.children[frame[2]]]
        frame[2] += 1
        cluster_id = frame[1]
        if child.is_leaf() or sizes[cluster_id] + child.subtree_size <= max_cluster_size:
            assign(child.tax_id, cluster_id)
        else:
            assign(child.tax_id, sizes.index(min(sizes)))
    return ClusterAssignment(k, labels)


def lookup_label(assignment: ClusterAssignment, tax_id: int | None) -> int:
    """Cluster of ``tax_id``; the null label for ``None`` or unknown ids."""
    if tax_id is None:
        return assignment.null_label
    return assignment.labels.get(tax_id, assignment.null_label)


@dataclass(frozen=True)
class PartitionStats:
    sizes: list[int]
    max_size: int
    min_size: int
    mean_size: float
    empty_clusters: int

    def histogram(self) -> dict[int, int]:
        """Number of clusters per cluster size."""
        return dict(sorted(Counter(self.sizes).items()))

    def to_dict(self) -> dict:
        return {
            "k": len(self.sizes),
            "n": sum(self.sizes),
            "max": self.max_size,
            "min": self.min_size,
            "mean": self.mean_size,
            "empty_clusters": self.empty_clusters,
            "histogram": {str(s): c for s, c in self.histogram().items()},
        }


def partition_stats(assignment: ClusterAssignment) -> PartitionStats:
    sizes = [0] * assignment.k
    for c in assignment.labels.values():
        sizes[c] += 1
    return PartitionStats(
        sizes=sizes,
        max_size=max(sizes),
        min_size=min(sizes),
        mean_size=sum(sizes) / len(sizes),
        empty_clusters=sizes.count(0),
    )


def rank_grouping_stats(tree: TaxonomyTree, rank: str) -> dict:
    """Group nodes by their ancestor at ``rank`` (comparison statistic only).

    Returns counts of groups, singleton groups, and nodes with no ancestor at
    that rank.
    """
    groups: Counter = Counter()
    unassigned = 0
    memo: dict[int, int | None] = {}
    for t in tree.nodes:
        path = []
        cur = t
        found = None
        while True:
            if cur in memo:
                found = memo[cur]
                break
            path.append(cur)
            if tree.nodes[cur].rank == rank:
                found = cur
                break
            if cur == tree.root_id:
                break
            cur = tree.nodes[cur].parent_id
        for p in path:
            memo[p] = found
        if found is None:
            unassigned += 1
        else:
            groups[found] += 1
    sizes = sorted(groups.values())
    return {
        "rank": rank,
        "groups": len(groups),
        "singletons": sum(1 for s in sizes if s == 1),
        "unassigned": unassigned,
        "max": sizes[-1] if sizes else 0,
    }


def write_cluster_tsv(assignment: ClusterAssignment, out: str | os.PathLike | IO[str]) -> None:
    """Write ``tax_id<TAB>cluster_id`` rows sorted by tax_id after a ``#k= #n=`` header."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w") as fh:
            write_cluster_tsv(assignment, fh)
        return
    out.write(f"#k={assignment.k}\t#n={assignment.n}\n")
    for t in sorted(assignment.labels):
        out.write(f"{t}\t{assignment.labels[t]}\n")


def read_cluster_tsv(src: str | os.PathLike | IO[str]) -> ClusterAssignment:
    if isinstance(src, (str, os.PathLike)):
        with open(src) as fh:
            return read_cluster_tsv(fh)
    header = src.readline().strip()
    try:
        k_part, n_part = header.split("\t")
        k = int(k_part.removeprefix("#k="))
        n = int(n_part.removeprefix("#n="))
    except ValueError:
        raise ParseError(f"bad cluster map header {header!r}", 1) from None
    labels = {}
    for line_number, line in enumerate(src, start=2):
        if not line.strip():
            continue
        try:
            t, c = line.split("\t")
            labels[int(t)] = int(c)
        except ValueError:
            raise ParseError(f"bad cluster map row {line.rstrip()!r}", line_number) from None
        if not 0 <= labels[int(t)] < k:
            raise ParseError(f"cluster id out of range in {line.rstrip()!r}", line_number)
    if len(labels) != n:
        raise ParseError(f"header declares n={n} but found {len(labels)} rows")
    return ClusterAssignment(k, labels)


def format_taxdump(parents: dict[int, int], ranks: dict[int, str] | None = None) -> str:
    """Render a ``tax_id -> parent`` map in ``nodes.dmp`` layout (useful for fixtures)."""
    ranks = ranks or {}
    buf = io.StringIO()
    for t in sorted(parents):
        buf.write(f"{t}\t|\t{parents[t]}\t|\t{ranks.get(t, 'no rank')}\t|\n")
    return buf.getvalue()
