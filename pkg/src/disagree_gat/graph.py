"""Interaction graph assembly, splits, oversampling, class weights.

Each feature row becomes its own pair of nodes (parent and child) joined
by one directed parent->child edge.  Nodes are duplicated per sample on
purpose: the same comment carries different sentiment values for
different entities, so sharing nodes would mix samples.  A dedup mode
merging nodes by (comment_id, entity) exists for experimentation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Label
from .featurize import EMBED_DIM, EmbeddingTable, FeatureRow
from .nncore import RngStream

log = logging.getLogger(__name__)

ABLATION_VARIANTS = (
    "full",
    "no_parent_embed",
    "no_child_embed",
    "no_parent_sent",
    "no_child_sent",
)


class GraphError(ValueError):
    pass


class BadRatios(GraphError):
    pass


class EmptyTrainSet(GraphError):
    pass


@dataclass(eq=False)
class Node:
    node_id: int
    comment_id: str
    role: str  # parent | child
    embed: np.ndarray
    sentiment: float


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    sample_id: int


@dataclass(frozen=True)
class Sample:
    sample_id: int
    pair_id: str
    entity: str
    label: Label


@dataclass(eq=False)
class InteractionGraph:
    nodes: list[Node]
    edges: list[Edge]
    samples: list[Sample]
    in_neighbors: list[list[int]]  # node_id -> indices into edges

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def labels_array(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.samples], dtype=np.int64)

    def embed_array(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, EMBED_DIM))
        return np.stack([n.embed for n in self.nodes])

    def sentiment_array(self) -> np.ndarray:
        return np.array([n.sentiment for n in self.nodes], dtype=np.float64)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.array([e.src for e in self.edges], dtype=np.int64)
        dst = np.array([e.dst for e in self.edges], dtype=np.int64)
        return src, dst

    def sample_nodes(self) -> np.ndarray:
        """(n_samples, 2) array of (parent node, child node) per sample."""
        out = np.zeros((len(self.samples), 2), dtype=np.int64)
        for e in self.edges:
            out[e.sample_id, 0] = e.src
            out[e.sample_id, 1] = e.dst
        return out


def build_graph(rows: list[FeatureRow], table: EmbeddingTable, dedup: bool = False) -> InteractionGraph:
    """Two nodes and one edge per row; raises MissingId on unresolvable refs.

    With ``dedup=True`` nodes merge on (comment_id, entity); the role
    recorded for a merged node is its first occurrence's role.
    """
    nodes: list[Node] = []
    edges: list[Edge] = []
    samples: list[Sample] = []
    node_by_key: dict[tuple[str, str], int] = {}

    def make_node(comment_id: str, entity: str, role: str, embed, sentiment: float) -> int:
        if dedup:
            key = (comment_id, entity)
            existing = node_by_key.get(key)
            if existing is not None:
                return existing
        nid = len(nodes)
        nodes.append(
            Node(node_id=nid, comment_id=comment_id, role=role, embed=embed, sentiment=float(sentiment))
        )
        if dedup:
            node_by_key[(comment_id, entity)] = nid
        return nid

    for i, row in enumerate(rows):
        p_embed = table.get(row.parent_embedding_ref)
        c_embed = table.get(row.child_embedding_ref)
        src = make_node(row.parent_embedding_ref, row.entity, "parent", p_embed, row.sentiment_parent.value)
        dst = make_node(row.child_embedding_ref, row.entity, "child", c_embed, row.sentiment_child.value)
        if src == dst:
            raise GraphError(
                f"sample {i} ({row.pair_id!r}, {row.entity!r}): self-loop after dedup"
            )
        edges.append(Edge(src=src, dst=dst, sample_id=i))
        samples.append(Sample(sample_id=i, pair_id=row.pair_id, entity=row.entity, label=row.label))

    in_neighbors: list[list[int]] = [[] for _ in nodes]
    for ei, e in enumerate(edges):
        in_neighbors[e.dst].append(ei)
    return InteractionGraph(nodes=nodes, edges=edges, samples=samples, in_neighbors=in_neighbors)


@dataclass
class SplitMasks:
    train: set[int] = field(default_factory=set)
    val: set[int] = field(default_factory=set)
    test: set[int] = field(default_factory=set)


def split_masks(
    graph: InteractionGraph,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 42,
    group_by_pair: bool = False,
) -> SplitMasks:
    """Seeded shuffle, then floor-rounded 70/15/15 with remainder to test.

    ``group_by_pair`` keeps all samples of one pair_id in a single split
    (sizes then hold only approximately; quota boundaries are respected
    per whole group).
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios {ratios} do not sum to 1")
    if any(r < 0 for r in ratios):
        raise BadRatios(f"negative ratio in {ratios}")

    n = graph.n_samples
    # epsilon guards against 0.7*n landing just below an exact integer
    n_train = int(ratios[0] * n + 1e-9)
    n_val = int(ratios[1] * n + 1e-9)
    rng = RngStream(seed)

    if not group_by_pair:
        order = list(range(n))
        rng.shuffle(order)
        return SplitMasks(
            train=set(order[:n_train]),
            val=set(order[n_train : n_train + n_val]),
            test=set(order[n_train + n_val :]),
        )

    by_pair: dict[str, list[int]] = {}
    pair_order: list[str] = []
    for s in graph.samples:
        if s.pair_id not in by_pair:
            pair_order.append(s.pair_id)
        by_pair.setdefault(s.pair_id, []).append(s.sample_id)
    rng.shuffle(pair_order)
    masks = SplitMasks()
    filled = 0
    for pid in pair_order:
        ids = by_pair[pid]
        if filled < n_train:
            masks.train.update(ids)
        elif filled < n_train + n_val:
            masks.val.update(ids)
        else:
            masks.test.update(ids)
        filled += len(ids)
    return masks


def oversample_minority(train_ids, labels: np.ndarray, seed: int = 42) -> list[int]:
    """Raise every class to the majority count by seeded resampling.

    ``labels`` indexes class by sample_id.  The output starts with every
    original train id (ascending), followed by the resampled extras in
    class order; a class absent from the train set is reported and
    skipped.
    """
    base = sorted(train_ids)
    if not base:
        raise EmptyTrainSet("oversample_minority: empty train set")
    labels = np.asarray(labels, dtype=np.int64)
    members: dict[int, list[int]] = {int(c): [] for c in range(3)}
    for sid in base:
        members[int(labels[sid])].append(sid)
    counts = {c: len(ms) for c, ms in members.items()}
    majority = max(counts.values())
    rng = RngStream(seed)
    out = list(base)
    for c in range(3):
        ms = members[c]
        if not ms:
            log.warning("oversample_minority: class %d absent from train set", c)
            continue
        for _ in range(majority - len(ms)):
            out.append(ms[rng.randint(len(ms))])
    return out


def class_weights(labels_of_oversampled) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (3 * count_c); absent class -> 0."""
    labels = np.asarray(list(labels_of_oversampled), dtype=np.int64)
    if labels.size == 0:
        raise GraphError("class_weights: empty label multiset")
    n = labels.size
    w = np.zeros(3, dtype=np.float64)
    for c in range(3):
        count = int((labels == c).sum())
        if count == 0:
            log.warning("class_weights: class %d has zero count, weight set to 0", c)
            continue
        w[c] = n / (3.0 * count)
    return w


def apply_ablation(graph: InteractionGraph, variant: str) -> InteractionGraph:
    """Zero one feature block by node role, keeping every dimension."""
    if variant not in ABLATION_VARIANTS:
        raise GraphError(f"unknown ablation variant {variant!r}")
    if variant == "full":
        return graph
    role = "parent" if "parent" in variant else "child"
    zero_embed = variant.endswith("_embed")
    nodes = []
    for node in graph.nodes:
        if node.role == role:
            nodes.append(
                Node(
                    node_id=node.node_id,
                    comment_id=node.comment_id,
                    role=node.role,
                    embed=np.zeros_like(node.embed) if zero_embed else node.embed,
                    sentiment=node.sentiment if zero_embed else 0.0,
                )
            )
        else:
            nodes.append(node)
    return InteractionGraph(
        nodes=nodes, edges=graph.edges, samples=graph.samples, in_neighbors=graph.in_neighbors
    )


def synthetic_graph(
    parent_embeds: np.ndarray,
    parent_sents: np.ndarray,
    child_embeds: np.ndarray,
    child_sents: np.ndarray,
    labels: np.ndarray,
    entity: str = "E",
) -> InteractionGraph:
    """Build a graph straight from feature arrays (diagnostics, selfcheck).

    Row i becomes sample i with its own parent/child node pair, exactly
    like build_graph on one feature row per input row.
    """
    parent_embeds = np.asarray(parent_embeds, dtype=np.float64)
    child_embeds = np.asarray(child_embeds, dtype=np.float64)
    n = parent_embeds.shape[0]
    if not (
        child_embeds.shape[0] == n
        and len(parent_sents) == n
        and len(child_sents) == n
        and len(labels) == n
    ):
        raise GraphError("synthetic_graph: input lengths disagree")
    nodes: list[Node] = []
    edges: list[Edge] = []
    samples: list[Sample] = []
    for i in range(n):
        src = len(nodes)
        nodes.append(Node(src, f"s{i}_p", "parent", parent_embeds[i], float(parent_sents[i])))
        dst = len(nodes)
        nodes.append(Node(dst, f"s{i}_c", "child", child_embeds[i], float(child_sents[i])))
        edges.append(Edge(src=src, dst=dst, sample_id=i))
        samples.append(Sample(sample_id=i, pair_id=f"s{i}", entity=entity, label=Label(int(labels[i]))))
    in_neighbors: list[list[int]] = [[] for _ in nodes]
    for ei, e in enumerate(edges):
        in_neighbors[e.dst].append(ei)
    return InteractionGraph(nodes=nodes, edges=edges, samples=samples, in_neighbors=in_neighbors)


def dump_graph(graph: InteractionGraph, path) -> None:
    """Diagnostic JSONL dump: node records, then edges, then samples."""
    with open(path, "w", encoding="utf-8") as fh:
        for n in graph.nodes:
            fh.write(
                json.dumps(
                    {
                        "kind": "node",
                        "node_id": n.node_id,
                        "comment_id": n.comment_id,
                        "role": n.role,
                        "sentiment": n.sentiment,
                        "embed": n.embed.tolist(),
                    }
                )
                + "\n"
            )
        for e in graph.edges:
            fh.write(
                json.dumps({"kind": "edge", "src": e.src, "dst": e.dst, "sample_id": e.sample_id})
                + "\n"
            )
        for s in graph.samples:
            fh.write(
                json.dumps(
                    {
                        "kind": "sample",
                        "sample_id": s.sample_id,
                        "pair_id": s.pair_id,
                        "entity": s.entity,
                        "label": int(s.label),
                    }
                )
                + "\n"
            )


def load_graph_dump(path) -> InteractionGraph:
    nodes: list[Node] = []
    edges: list[Edge] = []
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "node":
                nodes.append(
                    Node(
                        node_id=rec["node_id"],
                        comment_id=rec["comment_id"],
                        role=rec["role"],
                        embed=np.asarray(rec["embed"], dtype=np.float64),
                        sentiment=float(rec["sentiment"]),
                    )
                )
            elif kind == "edge":
                edges.append(Edge(src=rec["src"], dst=rec["dst"], sample_id=rec["sample_id"]))
            elif kind == "sample":
                samples.append(
                    Sample(
                        sample_id=rec["sample_id"],
                        pair_id=rec["pair_id"],
                        entity=rec["entity"],
                        label=Label(rec["label"]),
                    )
                )
            else:
                raise GraphError(f"{path}: unknown record kind {kind!r}")
    in_neighbors: list[list[int]] = [[] for _ in nodes]
    for ei, e in enumerate(edges):
        in_neighbors[e.dst].append(ei)
    return InteractionGraph(nodes=nodes, edges=edges, samples=samples, in_neighbors=in_neighbors)
