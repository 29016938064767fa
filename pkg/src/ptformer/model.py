"""GNNFormer: initial embedding, stacked PT-blocks with adaptive initial
residual and layer norm, gated FFN, topology fusion, prediction head.
Also the dense-attention transformer baseline and its single-graph-attention
variant used by the three-way comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import operators as ops
from .autodiff import Tensor
from .bundle import GraphBundle
from .errors import CapacityError, ConfigError, DimensionError, ParseError
from .graph import CsrGraph
from .operators import OperatorSpec, PropagatorKind

LN_EPS = 1e-5
DENSE_ATTENTION_NODE_GUARD = 5000


class FfnVariant(Enum):
    SWISHGLU = "swishglu"
    GEGLU = "geglu"
    REGLU = "reglu"
    NONE = "none"

    @classmethod
    def parse(cls, text: str) -> "FfnVariant":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown ffn variant {text!r}") from None


class ResidualMode(Enum):
    ADAPTIVE_INITIAL = "adaptive"
    PLAIN = "plain"
    NONE = "none"

    @classmethod
    def parse(cls, text: str) -> "ResidualMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown residual mode {text!r}") from None


_FFN_ACT = {FfnVariant.SWISHGLU: ad.swish, FfnVariant.GEGLU: ad.gelu, FfnVariant.REGLU: ad.relu}


@dataclass(frozen=True)
class ModelConfig:
    blocks: OperatorSpec = field(default_factory=lambda: OperatorSpec.parse("TP+TP"))
    propagator: PropagatorKind = PropagatorKind.GCN_LIKE
    ffn: FfnVariant = FfnVariant.SWISHGLU
    residual: ResidualMode = ResidualMode.ADAPTIVE_INITIAL
    d_prime: int = 64
    dropout: float = 0.5
    heads: int = 4

    def __post_init__(self):
        if self.d_prime <= 0:
            raise ConfigError(f"hidden width must be positive, got {self.d_prime}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.d_prime % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide hidden width ({self.d_prime})")
        if self.propagator is PropagatorKind.DENSE_ATTENTION:
            raise ConfigError("dense attention is only legal in the vanilla-GT baseline")


@dataclass(frozen=True)
class VanillaGtConfig:
    """The dense-attention transformer baseline (and its graph-attention
    variant when ``attention`` is GAT_LIKE)."""

    layers: int = 2
    d_prime: int = 64
    heads: int = 4
    dropout: float = 0.5
    attention: PropagatorKind = PropagatorKind.DENSE_ATTENTION

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"need at least one layer, got {self.layers}")
        if self.d_prime % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide hidden width ({self.d_prime})")
        if self.attention not in (PropagatorKind.DENSE_ATTENTION, PropagatorKind.GAT_LIKE):
            raise ConfigError("baseline attention must be dense or gat-like")


# ---------------------------------------------------------------------------
# parameters


@dataclass
class BlockParams:
    slots: list[dict[str, Tensor]]
    alpha: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class FfnParams:
    w1: Tensor
    w2: Tensor
    w3: Tensor
    beta: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class ModelParams:
    w0: Tensor
    blocks: list[BlockParams]
    ffn: FfnParams | None
    w4: Tensor
    gamma: Tensor
    w5: Tensor

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"w0": self.w0}
        for i, block in enumerate(self.blocks):
            for j, slot in enumerate(block.slots):
                for key, tensor in slot.items():
                    out[f"blocks.{i}.slots.{j}.{key}"] = tensor
            out[f"blocks.{i}.alpha"] = block.alpha
            out[f"blocks.{i}.ln_gain"] = block.ln_gain
            out[f"blocks.{i}.ln_bias"] = block.ln_bias
        if self.ffn is not None:
            out["ffn.w1"] = self.ffn.w1
            out["ffn.w2"] = self.ffn.w2
            out["ffn.w3"] = self.ffn.w3
            out["ffn.beta"] = self.ffn.beta
            out["ffn.ln_gain"] = self.ffn.ln_gain
            out["ffn.ln_bias"] = self.ffn.ln_bias
        out["w4"] = self.w4
        out["gamma"] = self.gamma
        out["w5"] = self.w5
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())


def is_decayed(name: str) -> bool:
    """Weight matrices get weight decay; mixing logits and LN affines do not."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("alpha", "beta", "gamma", "ln_gain", "ln_bias")


def _mix_logit() -> Tensor:
    # Logit 0 -> sigmoid 0.5: start as an even mix.
    return Tensor(np.zeros((1, 1)), requires_grad=True)


def _ln_affine(d: int) -> tuple[Tensor, Tensor]:
    return (
        Tensor(np.ones((1, d)), requires_grad=True),
        Tensor(np.zeros((1, d)), requires_grad=True),
    )


def init_model_params(
    config: ModelConfig, n_nodes: int, in_dim: int, n_classes: int, rng: np.random.Generator
) -> ModelParams:
    d = config.d_prime
    w0 = ad.glorot(rng, in_dim, d)
    blocks = []
    for block in config.blocks.blocks:
        slots = []
        for slot in block:
            if slot == "T":
                slots.append(ops.init_transform_params(rng, d))
            else:
                slots.append(ops.init_propagator_params(config.propagator, rng, d, config.heads))
        gain, bias = _ln_affine(d)
        blocks.append(BlockParams(slots, _mix_logit(), gain, bias))
    ffn = None
    if config.ffn is not FfnVariant.NONE:
        gain, bias = _ln_affine(d)
        ffn = FfnParams(
            ad.glorot(rng, d, d), ad.glorot(rng, d, d), ad.glorot(rng, d, d),
            _mix_logit(), gain, bias,
        )
    return ModelParams(
        w0=w0,
        blocks=blocks,
        ffn=ffn,
        w4=ad.glorot(rng, n_nodes, d),
        gamma=_mix_logit(),
        w5=ad.glorot(rng, d, n_classes),
    )


# ---------------------------------------------------------------------------
# forward pieces


def initial_embed(x: Tensor, w0: Tensor) -> Tensor:
    """ReLU(X @ W0); the H0 anchoring every initial residual."""
    if x.cols != w0.rows:
        raise DimensionError(f"initial_embed: feature width {x.cols} vs W0 rows {w0.rows}")
    return ad.relu(ad.matmul(x, w0))


def _residual_norm(
    out: Tensor, anchor: Tensor, mode: ResidualMode, logit: Tensor, gain: Tensor, bias: Tensor
) -> Tensor:
    if mode is ResidualMode.NONE:
        return ad.layer_norm(out, gain, bias, LN_EPS)
    return ad.layer_norm(ad.logit_mix(logit, anchor, out), gain, bias, LN_EPS)


def pt_block_forward(
    h_prev: Tensor,
    h0: Tensor,
    block: tuple[str, str],
    params: BlockParams,
    graph: CsrGraph,
    config: ModelConfig,
    training: bool,
    rng: np.random.Generator,
) -> Tensor:
    """LN(sigma(alpha) * anchor + (1 - sigma(alpha)) * f(h_prev, A))."""
    f_out = ops.apply_operator_pair(
        block, h_prev, graph, config.propagator, params.slots,
        config.heads, config.dropout, training, rng,
    )
    anchor = h0 if config.residual is ResidualMode.ADAPTIVE_INITIAL else h_prev
    return _residual_norm(f_out, anchor, config.residual, params.alpha, params.ln_gain, params.ln_bias)


def ffn_forward(
    h: Tensor,
    variant: FfnVariant,
    w1: Tensor,
    w2: Tensor,
    w3: Tensor,
    dropout: float,
    training: bool,
    rng: np.random.Generator,
) -> Tensor:
    """(act(h W1) * h W2) W3 with dropout after the gate product."""
    if variant is FfnVariant.NONE:
        raise ConfigError("ffn_forward called with variant none")
    gated = ad.mul(_FFN_ACT[variant](ad.matmul(h, w1)), ad.matmul(h, w2))
    return ad.matmul(ad.dropout(gated, dropout, training, rng), w3)


def ffn_residual(z_prime: Tensor, anchor: Tensor, params: FfnParams, mode: ResidualMode) -> Tensor:
    return _residual_norm(z_prime, anchor, mode, params.beta, params.ln_gain, params.ln_bias)


def topology_fuse(z: Tensor, graph: CsrGraph, w4: Tensor, gamma: Tensor) -> Tensor:
    """sigma(gamma) * z + (1 - sigma(gamma)) * (A @ W4)."""
    if w4.rows != graph.n:
        raise DimensionError(f"topology_fuse: W4 has {w4.rows} rows but graph has {graph.n} nodes")
    return ad.logit_mix(gamma, z, ad.spmm(graph, w4))


def predict(z: Tensor, w5: Tensor) -> Tensor:
    return ad.row_softmax(ad.matmul(z, w5))


def forward(
    bundle: GraphBundle,
    config: ModelConfig,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full pass: embed, PT-blocks, gated FFN, topology fusion, head."""
    if rng is None:
        rng = np.random.default_rng(0)
    graph = bundle.graph
    x = Tensor(bundle.features)
    h0 = ad.dropout(initial_embed(x, params.w0), config.dropout, training, rng)
    h = h0
    for block, block_params in zip(config.blocks.blocks, params.blocks):
        h = pt_block_forward(h, h0, block, block_params, graph, config, training, rng)
    z = h
    if config.ffn is not FfnVariant.NONE:
        z_prime = ffn_forward(
            z, config.ffn, params.ffn.w1, params.ffn.w2, params.ffn.w3,
            config.dropout, training, rng,
        )
        anchor = h0 if config.residual is ResidualMode.ADAPTIVE_INITIAL else z
        z = ffn_residual(z_prime, anchor, params.ffn, config.residual)
    z = topology_fuse(z, graph, params.w4, params.gamma)
    return predict(z, params.w5)


# ---------------------------------------------------------------------------
# vanilla GT baseline


@dataclass
class GtLayerParams:
    attn: dict[str, Tensor]
    w_a: Tensor
    w_b: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class VanillaGtParams:
    w_in: Tensor
    layers: list[GtLayerParams]
    w_out: Tensor

    def named(self) -> dict[str, Tensor]:
        out = {"w_in": self.w_in}
        for i, layer in enumerate(self.layers):
            for key, tensor in layer.attn.items():
                out[f"layers.{i}.attn.{key}"] = tensor
            out[f"layers.{i}.w_a"] = layer.w_a
            out[f"layers.{i}.w_b"] = layer.w_b
            out[f"layers.{i}.ln1_gain"] = layer.ln1_gain
            out[f"layers.{i}.ln1_bias"] = layer.ln1_bias
            out[f"layers.{i}.ln2_gain"] = layer.ln2_gain
            out[f"layers.{i}.ln2_bias"] = layer.ln2_bias
        out["w_out"] = self.w_out
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())


def init_vanilla_gt_params(
    config: VanillaGtConfig, in_dim: int, n_classes: int, rng: np.random.Generator
) -> VanillaGtParams:
    d = config.d_prime
    layers = []
    for _ in range(config.layers):
        attn = ops.init_propagator_params(config.attention, rng, d, config.heads)
        ln1 = _ln_affine(d)
        ln2 = _ln_affine(d)
        layers.append(
            GtLayerParams(attn, ad.glorot(rng, d, d), ad.glorot(rng, d, d), *ln1, *ln2)
        )
    return VanillaGtParams(ad.glorot(rng, in_dim, d), layers, ad.glorot(rng, d, n_classes))


def vanilla_gt_forward(
    bundle: GraphBundle,
    config: VanillaGtConfig,
    params: VanillaGtParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Linear -> [attention + residual + LN -> FFN + residual + LN] x L -> head.

    Plain (non-initial) residuals and a two-layer ReLU FFN. Dense attention
    is guarded: graphs beyond DENSE_ATTENTION_NODE_GUARD nodes are refused,
    mirroring quadratic-memory failure on large graphs.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n = bundle.n
    if config.attention is PropagatorKind.DENSE_ATTENTION and n > DENSE_ATTENTION_NODE_GUARD:
        raise CapacityError(
            f"dense attention on {n} nodes exceeds the {DENSE_ATTENTION_NODE_GUARD}-node guard"
        )
    h = ad.matmul(Tensor(bundle.features), params.w_in)
    for layer in params.layers:
        if config.attention is PropagatorKind.DENSE_ATTENTION:
            a = ops.dense_mha_propagate(h, config.heads, layer.attn)
        else:
            a = ops.gat_propagate(
                h, bundle.graph, config.heads, layer.attn, config.dropout, training, rng
            )
        a = ad.dropout(a, config.dropout, training, rng)
        h = ad.layer_norm(ad.add(h, a), layer.ln1_gain, layer.ln1_bias, LN_EPS)
        f = ad.relu(ad.matmul(h, layer.w_a))
        f = ad.matmul(ad.dropout(f, config.dropout, training, rng), layer.w_b)
        h = ad.layer_norm(ad.add(h, f), layer.ln2_gain, layer.ln2_bias, LN_EPS)
    return predict(h, params.w_out)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, config, params) -> None:
    """Write named parameter matrices as text plus a config echo."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    if isinstance(config, ModelConfig):
        lines = [
            f"blocks={config.blocks}",
            f"propagator={config.propagator.value}",
            f"ffn={config.ffn.value}",
            f"residual={config.residual.value}",
            f"d_prime={config.d_prime}",
            f"dropout={config.dropout}",
            f"heads={config.heads}",
        ]
    else:
        lines = [
            f"layers={config.layers}",
            f"d_prime={config.d_prime}",
            f"heads={config.heads}",
            f"dropout={config.dropout}",
            f"attention={config.attention.value}",
        ]
    (root / "config").write_text("\n".join(lines) + "\n")
    named = params.named() if hasattr(params, "named") else params
    for name, tensor in named.items():
        values = tensor.values if isinstance(tensor, Tensor) else tensor
        with open(root / f"{name}.txt", "w") as fh:
            for row in values:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_checkpoint_matrices(path) -> dict[str, np.ndarray]:
    root = Path(path)
    if not root.is_dir():
        raise ParseError(f"{root}: checkpoint directory not found")
    out = {}
    for file in sorted(root.glob("*.txt")):
        rows = []
        for lineno, line in enumerate(file.read_text().splitlines(), start=1):
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError:
                raise ParseError(f"{file}:{lineno}: non-numeric value") from None
        arr = np.array(rows)
        if arr.ndim != 2:
            raise ParseError(f"{file}: ragged matrix")
        out[file.stem] = arr
    return out


def restore_params(params, matrices: dict[str, np.ndarray]) -> None:
    """Load checkpoint matrices into an initialized parameter set, by name."""
    named = params.named()
    missing = set(named) - set(matrices)
    extra = set(matrices) - set(named)
    if missing or extra:
        raise ParseError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, tensor in named.items():
        if matrices[name].shape != tensor.values.shape:
            raise DimensionError(
                f"checkpoint {name}: shape {matrices[name].shape} vs expected {tensor.values.shape}"
            )
        tensor.values = matrices[name].copy()
