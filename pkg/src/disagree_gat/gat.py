"""Two-layer multi-head graph attention model over the interaction graph.

Per head k, the raw attention for an edge j -> i is

    e_ij = ELU( a_k . [W1 h_i_embed || W2 h_i_sent || W3 h_j_embed || W4 h_j_sent] )

normalized by a softmax over i's in-neighborhood, and the node update
aggregates transformed SOURCE features:

    h'_i = ||_k ELU( sum_j alpha_ij [W1 h_j_embed || W2 h_j_sent] )

Nodes with no in-edges (parents) take their self-transform instead of an
empty sum, so both halves of the classifier input stay informative.
Layer 2 consumes layer 1's output as its embed subset and the original
sentiment scalar as its sentiment subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nncore as nc
from .graph import InteractionGraph
from .nncore import Parameter, RngStream, ShapeMismatch, Var


class SchemaMismatch(ValueError):
    """Checkpoint contents disagree with the declared configuration."""


CHECKPOINT_FORMAT = "disagree-gat-checkpoint-v1"


@dataclass(frozen=True)
class GATLayerConfig:
    heads: int = 8
    embed_out: int = 6  # per-head width of the embed message
    sent_out: int = 2   # per-head width of the sentiment message
    dropout: float = 0.5

    @property
    def total_out(self) -> int:
        return self.heads * (self.embed_out + self.sent_out)


@dataclass(frozen=True)
class ModelConfig:
    embed_in: int = 384
    layer1: GATLayerConfig = GATLayerConfig()
    layer2: GATLayerConfig = GATLayerConfig()
    layer2_sentiment: bool = True       # feed the raw scalar to layer 2
    append_raw_sentiment: bool = False  # widen classifier input with (s_p, s_c)
    n_classes: int = 3

    @property
    def classifier_in(self) -> int:
        return 2 * self.layer2.total_out + (2 if self.append_raw_sentiment else 0)


@dataclass(frozen=True)
class AttentionRecord:
    sample_id: int
    layer1: tuple[float, ...]  # per-head alpha on this sample's edge
    layer2: tuple[float, ...]
    combined: float


@dataclass
class _EdgeIndex:
    """Precomputed per-graph indexing for the attention ops."""

    src: np.ndarray
    dst: np.ndarray
    groups: np.ndarray      # dense softmax group per edge
    n_groups: int
    no_in_mask: np.ndarray  # (n_nodes,) 1.0 where in-degree == 0


def _index_edges(graph: InteractionGraph) -> _EdgeIndex:
    src, dst = graph.edge_arrays()
    no_in = np.ones(graph.n_nodes, dtype=np.float64)
    if dst.size:
        uniq = np.unique(dst)
        groups = np.searchsorted(uniq, dst)
        n_groups = int(uniq.size)
        no_in[uniq] = 0.0
    else:
        groups = np.zeros(0, dtype=np.int64)
        n_groups = 0
    return _EdgeIndex(src=src, dst=dst, groups=groups, n_groups=n_groups, no_in_mask=no_in)


@dataclass
class _Head:
    w1: Parameter
    w2: Parameter
    w3: Parameter
    w4: Parameter
    a: Parameter


class GATLayer:
    def __init__(self, name: str, config: GATLayerConfig, embed_in: int, sent_in: int, rng: RngStream):
        self.name = name
        self.config = config
        self.embed_in = embed_in
        self.sent_in = sent_in
        attn_len = 2 * (config.embed_out + config.sent_out)
        self.heads: list[_Head] = []
        for k in range(config.heads):
            self.heads.append(
                _Head(
                    w1=Parameter(nc.glorot_uniform((config.embed_out, embed_in), rng), f"{name}.h{k}.w1"),
                    w2=Parameter(nc.glorot_uniform((config.sent_out, sent_in), rng), f"{name}.h{k}.w2"),
                    w3=Parameter(nc.glorot_uniform((config.embed_out, embed_in), rng), f"{name}.h{k}.w3"),
                    w4=Parameter(nc.glorot_uniform((config.sent_out, sent_in), rng), f"{name}.h{k}.w4"),
                    a=Parameter(nc.glorot_uniform((attn_len,), rng), f"{name}.h{k}.a"),
                )
            )

    def parameters(self) -> list[Parameter]:
        out = []
        for h in self.heads:
            out.extend([h.w1, h.w2, h.w3, h.w4, h.a])
        return out

    def raw_attention(self, k: int, hi_embed, hi_sent, hj_embed, hj_sent) -> float:
        """Scalar e_ij for one (i, j) feature pair, outside the tape."""
        h = self.heads[k]
        cat = np.concatenate(
            [
                h.w1.value @ np.asarray(hi_embed, dtype=np.float64),
                h.w2.value @ np.asarray(hi_sent, dtype=np.float64),
                h.w3.value @ np.asarray(hj_embed, dtype=np.float64),
                h.w4.value @ np.asarray(hj_sent, dtype=np.float64),
            ]
        )
        return float(nc.elu_values(np.array(h.a.value @ cat)))

    def forward(
        self,
        embed: Var,
        sent: Var,
        ei: _EdgeIndex,
        training: bool = False,
        rng: Optional[RngStream] = None,
    ) -> tuple[Var, list[np.ndarray]]:
        """Returns (node features (n, total_out), per-head alphas in edge order).

        The recorded alphas are the softmax outputs, before dropout.
        """
        if embed.value.shape[1] != self.embed_in:
            raise ShapeMismatch(
                f"{self.name}: embed width {embed.value.shape[1]}, expected {self.embed_in}"
            )
        if sent.value.shape[1] != self.sent_in:
            raise ShapeMismatch(
                f"{self.name}: sentiment width {sent.value.shape[1]}, expected {self.sent_in}"
            )
        n = embed.value.shape[0]
        no_in = Var(ei.no_in_mask)
        head_outputs: list[Var] = []
        head_alphas: list[np.ndarray] = []
        for h in self.heads:
            ti = nc.linear(embed, h.w1)  # also the source message transform
            si = nc.linear(sent, h.w2)
            self_t = nc.concat_cols([ti, si])
            if ei.src.size:
                scores_in = nc.concat_cols(
                    [
                        nc.gather_rows(ti, ei.dst),
                        nc.gather_rows(si, ei.dst),
                        nc.gather_rows(nc.linear(embed, h.w3), ei.src),
                        nc.gather_rows(nc.linear(sent, h.w4), ei.src),
                    ]
                )
                e = nc.elu(nc.matvec(scores_in, h.a))
                alpha = nc.grouped_softmax(e, ei.groups, ei.n_groups)
                head_alphas.append(alpha.value.copy())
                alpha = nc.dropout(alpha, self.config.dropout, training, rng)
                msg = nc.concat_cols([nc.gather_rows(ti, ei.src), nc.gather_rows(si, ei.src)])
                agg = nc.segment_sum(nc.scale_rows(msg, alpha), ei.dst, n)
                combined = nc.add(agg, nc.scale_rows(self_t, no_in))
            else:
                head_alphas.append(np.zeros(0))
                combined = self_t
            head_outputs.append(nc.elu(combined))
        out = head_outputs[0] if len(head_outputs) == 1 else nc.concat_cols(head_outputs)
        return out, head_alphas


class DisagreeGAT:
    """Edge-classification model: two attention layers plus a linear head.

    Per sample the classifier reads [h2_parent || h2_child], optionally
    widened with the two raw sentiment scalars.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 42):
        self.config = config
        self.init_seed = int(seed)
        rng = RngStream(seed)
        self.layer1 = GATLayer("l1", config.layer1, config.embed_in, 1, rng)
        self.layer2 = GATLayer("l2", config.layer2, config.layer1.total_out, 1, rng)
        self.cls_w = Parameter(
            nc.glorot_uniform((config.n_classes, config.classifier_in), rng), "cls.w"
        )
        self.cls_b = Parameter(np.zeros(config.n_classes), "cls.b")

    def parameters(self) -> list[Parameter]:
        return self.layer1.parameters() + self.layer2.parameters() + [self.cls_w, self.cls_b]

    def forward(
        self,
        graph: InteractionGraph,
        training: bool = False,
        rng: Optional[RngStream] = None,
    ) -> tuple[Var, list[list[np.ndarray]]]:
        """Logits (n_samples, 3) plus per-layer per-head attention values."""
        ei = _index_edges(graph)
        embed = Var(graph.embed_array())
        sent = Var(graph.sentiment_array().reshape(-1, 1))
        h1, alphas1 = self.layer1.forward(embed, sent, ei, training, rng)
        sent2 = sent if self.config.layer2_sentiment else Var(np.zeros_like(sent.value))
        h2, alphas2 = self.layer2.forward(h1, sent2, ei, training, rng)
        sn = graph.sample_nodes()
        parts = [nc.gather_rows(h2, sn[:, 0]), nc.gather_rows(h2, sn[:, 1])]
        if self.config.append_raw_sentiment:
            parts.append(nc.gather_rows(sent, sn[:, 0]))
            parts.append(nc.gather_rows(sent, sn[:, 1]))
        logits = nc.add_bias(nc.linear(nc.concat_cols(parts), self.cls_w), self.cls_b)
        return logits, [alphas1, alphas2]

    def predict(self, graph: InteractionGraph, sample_ids=None) -> tuple[np.ndarray, np.ndarray]:
        """Argmax labels (ties to the lower class index) and probabilities."""
        logits, _ = self.forward(graph, training=False)
        probs = nc.softmax_values(logits.value)
        if sample_ids is not None:
            idx = np.asarray(sorted(sample_ids), dtype=np.int64)
            probs = probs[idx]
        labels = np.argmax(probs, axis=1)
        return labels, probs

    def extract_attention(self, graph: InteractionGraph) -> list[AttentionRecord]:
        """Inference-mode per-edge alphas: head means per layer, then the
        mean of the two layer means as ``combined``."""
        _, (alphas1, alphas2) = self.forward(graph, training=False)
        records = []
        for edge_pos, edge in enumerate(graph.edges):
            l1 = tuple(float(a[edge_pos]) for a in alphas1)
            l2 = tuple(float(a[edge_pos]) for a in alphas2)
            layer_means = [sum(l1) / len(l1), sum(l2) / len(l2)]
            records.append(
                AttentionRecord(
                    sample_id=edge.sample_id,
                    layer1=l1,
                    layer2=l2,
                    combined=sum(layer_means) / len(layer_means),
                )
            )
        return records

    def to_checkpoint(self, seed: Optional[int] = None) -> dict:
        """JSON-ready dict; float64 values as repr strings so the decimal
        round trip is bitwise exact."""
        cfg = self.config
        return {
            "format": CHECKPOINT_FORMAT,
            "seed": int(self.init_seed if seed is None else seed),
            "config": {
                "embed_in": cfg.embed_in,
                "n_classes": cfg.n_classes,
                "layer2_sentiment": cfg.layer2_sentiment,
                "append_raw_sentiment": cfg.append_raw_sentiment,
                "layer1": {
                    "heads": cfg.layer1.heads,
                    "embed_out": cfg.layer1.embed_out,
                    "sent_out": cfg.layer1.sent_out,
                    "dropout": cfg.layer1.dropout,
                },
                "layer2": {
                    "heads": cfg.layer2.heads,
                    "embed_out": cfg.layer2.embed_out,
                    "sent_out": cfg.layer2.sent_out,
                    "dropout": cfg.layer2.dropout,
                },
            },
            "params": {
                p.name: {
                    "shape": list(p.value.shape),
                    "values": [repr(float(v)) for v in p.value.reshape(-1)],
                }
                for p in self.parameters()
            },
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "DisagreeGAT":
        if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
            raise SchemaMismatch(f"not a {CHECKPOINT_FORMAT} checkpoint")
        try:
            cfg_block = data["config"]
            config = ModelConfig(
                embed_in=int(cfg_block["embed_in"]),
                n_classes=int(cfg_block["n_classes"]),
                layer2_sentiment=bool(cfg_block["layer2_sentiment"]),
                append_raw_sentiment=bool(cfg_block["append_raw_sentiment"]),
                layer1=GATLayerConfig(**cfg_block["layer1"]),
                layer2=GATLayerConfig(**cfg_block["layer2"]),
            )
            seed = int(data["seed"])
            params_block = data["params"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"malformed checkpoint: {exc}") from None
        model = cls(config, seed=seed)
        own = {p.name: p for p in model.parameters()}
        if set(own) != set(params_block):
            extra = sorted(set(params_block) - set(own))
            missing = sorted(set(own) - set(params_block))
            raise SchemaMismatch(f"parameter set mismatch: extra={extra}, missing={missing}")
        for name, p in own.items():
            rec = params_block[name]
            shape = tuple(rec["shape"])
            if shape != p.value.shape:
                raise SchemaMismatch(
                    f"shape mismatch for {name}: file {shape}, config wants {p.value.shape}"
                )
            values = np.array([float(s) for s in rec["values"]], dtype=np.float64)
            if values.size != p.value.size:
                raise SchemaMismatch(f"value count mismatch for {name}")
            p.value = values.reshape(shape)
        return model
