"""The propagation/transformation operator family.

A block is a two-slot sequence over {P, T} applied left to right, so the
string "TP+TP" means two blocks that each transform and then propagate.
P dispatches on the configured propagator kind; every slot owns its own
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .graph import CsrGraph, mean_norm_weights, sym_norm_weights, with_self_loops

LEAKY_SLOPE = 0.2


class PropagatorKind(Enum):
    GCN_LIKE = "gcn"
    SAGE_LIKE = "sage"
    GAT_LIKE = "gat"
    DENSE_ATTENTION = "dense"

    @classmethod
    def parse(cls, text: str) -> "PropagatorKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown propagator {text!r}; expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class OperatorSpec:
    """Block layout, e.g. blocks=(("T","P"),("T","P")) for "TP+TP"."""

    blocks: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not 1 <= len(self.blocks) <= 3:
            raise ConfigError(f"block count must be 1-3, got {len(self.blocks)}")
        self._check_slots()

    def _check_slots(self):
        for block in self.blocks:
            if len(block) != 2 or any(slot not in ("P", "T") for slot in block):
                raise ConfigError(f"each block needs exactly two P/T slots, got {block!r}")

    @classmethod
    def parse(cls, text: str) -> "OperatorSpec":
        parts = text.strip().upper().split("+")
        return cls(tuple(tuple(part) for part in parts))

    def __str__(self) -> str:
        return "+".join("".join(block) for block in self.blocks)


@dataclass(frozen=True)
class DeepOperatorSpec(OperatorSpec):
    """OperatorSpec without the 1-3 block bound, for depth diagnostics."""

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ConfigError("need at least one block")
        self._check_slots()


def repeat_blocks(pattern: tuple[str, str], depth: int) -> OperatorSpec:
    spec_cls = OperatorSpec if 1 <= depth <= 3 else DeepOperatorSpec
    return spec_cls(tuple(pattern for _ in range(depth)))


# ---------------------------------------------------------------------------
# slot parameters


def init_transform_params(rng: np.random.Generator, d: int) -> dict[str, Tensor]:
    return {"w": ad.glorot(rng, d, d)}


def init_propagator_params(kind: PropagatorKind, rng: np.random.Generator, d: int, heads: int) -> dict[str, Tensor]:
    if kind is PropagatorKind.GCN_LIKE:
        return {}
    if kind is PropagatorKind.SAGE_LIKE:
        return {"w_self": ad.glorot(rng, d, d), "w_neigh": ad.glorot(rng, d, d)}
    dh = _head_width(d, heads)
    params: dict[str, Tensor] = {}
    if kind is PropagatorKind.GAT_LIKE:
        for h in range(heads):
            params[f"head{h}.w"] = ad.glorot(rng, d, dh)
            params[f"head{h}.a_dst"] = ad.glorot(rng, dh, 1)
            params[f"head{h}.a_src"] = ad.glorot(rng, dh, 1)
        return params
    for h in range(heads):
        params[f"head{h}.w_q"] = ad.glorot(rng, d, dh)
        params[f"head{h}.w_k"] = ad.glorot(rng, d, dh)
        params[f"head{h}.w_v"] = ad.glorot(rng, d, dh)
    return params


def _head_width(d: int, heads: int) -> int:
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"heads must divide the hidden width, got width {d} and {heads} heads")
    return d // heads


# ---------------------------------------------------------------------------
# operators


def transform(
    h: Tensor,
    w: Tensor,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator,
) -> Tensor:
    """T slot: dropout(ReLU(h @ w)), shape-preserving."""
    if w.rows != w.cols:
        raise DimensionError(f"transform weight must be square, got {w.values.shape}")
    return ad.dropout(ad.relu(ad.matmul(h, w)), dropout_rate, training, rng)


def gcn_propagate(h: Tensor, g_norm: CsrGraph) -> Tensor:
    """Parameter-free symmetric-normalized propagation."""
    return ad.spmm(g_norm, h)


def sage_propagate(h: Tensor, g: CsrGraph, w_self: Tensor, w_neigh: Tensor) -> Tensor:
    """Self projection plus projected neighbor mean; empty neighborhoods
    contribute zero."""
    neigh = ad.spmm(mean_norm_weights(g), h)
    return ad.add(ad.matmul(h, w_self), ad.matmul(neigh, w_neigh))


def gat_propagate(
    h: Tensor,
    g: CsrGraph,
    heads: int,
    params: dict[str, Tensor],
    attn_dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head graph attention over N(i) plus a self-loop, heads concatenated.

    Per head: e_ij = LeakyReLU(a_dst . Wh_i + a_src . Wh_j), alpha = softmax
    over each destination's neighborhood, out_i = sum_j alpha_ij Wh_j.
    """
    _head_width(h.cols, heads)
    gl = with_self_loops(g)
    dst, src = gl.row_ids(), gl.col_indices
    outs = []
    for k in range(heads):
        hw = ad.matmul(h, params[f"head{k}.w"])
        s_dst = ad.matmul(hw, params[f"head{k}.a_dst"])
        s_src = ad.matmul(hw, params[f"head{k}.a_src"])
        e = ad.leaky_relu(
            ad.add(ad.gather_rows(s_dst, dst), ad.gather_rows(s_src, src)), LEAKY_SLOPE
        )
        alpha = ad.segment_softmax(e, gl.row_offsets)
        if training and attn_dropout > 0.0:
            alpha = ad.dropout(alpha, attn_dropout, training, rng)
        weighted = ad.scale_rows(ad.gather_rows(hw, src), alpha)
        outs.append(ad.segment_sum(weighted, gl.row_offsets))
    return ad.concat_cols(outs)


def dense_mha_propagate(h: Tensor, heads: int, params: dict[str, Tensor]) -> Tensor:
    """Global all-pairs multi-head self-attention; the graph is ignored."""
    dh = _head_width(h.cols, heads)
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for k in range(heads):
        q = ad.matmul(h, params[f"head{k}.w_q"])
        key = ad.matmul(h, params[f"head{k}.w_k"])
        v = ad.matmul(h, params[f"head{k}.w_v"])
        attn = ad.row_softmax(ad.scale_const(ad.matmul(q, ad.transpose(key)), scale))
        outs.append(ad.matmul(attn, v))
    return ad.concat_cols(outs)


def propagate(
    kind: PropagatorKind,
    h: Tensor,
    g: CsrGraph,
    params: dict[str, Tensor],
    heads: int,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator,
) -> Tensor:
    if kind is PropagatorKind.GCN_LIKE:
        return gcn_propagate(h, sym_norm_weights(g, add_self_loops=True))
    if kind is PropagatorKind.SAGE_LIKE:
        return sage_propagate(h, g, params["w_self"], params["w_neigh"])
    if kind is PropagatorKind.GAT_LIKE:
        return gat_propagate(h, g, heads, params, dropout_rate, training, rng)
    return dense_mha_propagate(h, heads, params)


def apply_operator_pair(
    block: tuple[str, str],
    h: Tensor,
    g: CsrGraph,
    kind: PropagatorKind,
    slot_params: list[dict[str, Tensor]],
    heads: int,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator,
) -> Tensor:
    """Apply the two slots of one block left to right."""
    if len(slot_params) != len(block):
        raise ConfigError(f"block {block!r} expects {len(block)} slot parameter sets, got {len(slot_params)}")
    for slot, params in zip(block, slot_params):
        if slot == "T":
            h = transform(h, params["w"], dropout_rate, training, rng)
        else:
            h = propagate(kind, h, g, params, heads, dropout_rate, training, rng)
    return h
