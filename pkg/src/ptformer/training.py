"""Loss, optimizer, early-stopped training loop, multi-seed evaluation,
and the ablation/depth experiment suites."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import model as modellib
from .autodiff import Tape, Tensor
from .bundle import GraphBundle
from .errors import CapacityError, ConfigError, DegenerateInputError, DivergenceError
from .model import (
    FfnVariant,
    ModelConfig,
    ResidualMode,
    VanillaGtConfig,
    init_model_params,
    init_vanilla_gt_params,
    is_decayed,
)
from .operators import repeat_blocks

log = logging.getLogger("ptformer")

ABLATION_VARIANTS = ("best", "w/o FFN", "FFN(GEGLU)", "FFN(ReGLU)", "w/o AIRes", "AIRes-Res")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 100
    seeds: tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {self.weight_decay}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigError(f"patience must be in [0, max_epochs], got {self.patience}")
        if not self.seeds:
            raise ConfigError("need at least one seed")


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    best_val_accuracy: float
    best_epoch: int
    epochs_run: int
    train_losses: list[float]
    train_accuracies: list[float]
    val_accuracies: list[float]
    best_params: dict[str, np.ndarray]


@dataclass
class RunResult:
    per_seed: list[SeedResult] = field(default_factory=list)
    failed_seeds: list[tuple[int, str]] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.test_accuracy for r in self.per_seed]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.per_seed else float("nan")

    @property
    def std(self) -> float:
        accs = self.accuracies
        return float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0


# ---------------------------------------------------------------------------
# loss and optimizer


def cross_entropy_loss(pred: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """-trace(Y_mask^T log Y_hat), i.e. the summed CE over masked nodes."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise DegenerateInputError("cross_entropy_loss: empty node mask")
    onehot = np.zeros(pred.values.shape)
    onehot[mask, np.asarray(labels)[mask]] = 1.0
    picked = ad.mul(ad.log_clamped(pred), Tensor(onehot))
    return ad.scale_const(ad.sum_all(picked), -1.0)


class AdamW:
    """AdamW with decoupled weight decay applied before the moment update.

    ``decay`` selects parameter names subject to decay; mixing logits and
    layer-norm affines are excluded by default.
    """

    def __init__(
        self,
        named_params: dict[str, Tensor],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay=None,
    ):
        self.params = dict(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay = is_decayed if decay is None else decay
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.values)
            elif not np.isfinite(g).all():
                raise DivergenceError(f"nonfinite gradient in parameter {name!r}")
            if self.weight_decay and self.decay(name):
                p.values -= self.lr * self.weight_decay * p.values
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(list(self.params.values()))


# ---------------------------------------------------------------------------
# training loop


def accuracy(pred_values: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    if idx.size == 0:
        raise DegenerateInputError("accuracy over an empty node set")
    return float((pred_values[idx].argmax(axis=1) == labels[idx]).mean())


def _forward(bundle, config, params, training, rng):
    if isinstance(config, VanillaGtConfig):
        return modellib.vanilla_gt_forward(bundle, config, params, training, rng)
    return modellib.forward(bundle, config, params, training, rng)


def _init_params(bundle, config, rng):
    if isinstance(config, VanillaGtConfig):
        return init_vanilla_gt_params(config, bundle.feat_dim, bundle.num_classes, rng)
    return init_model_params(config, bundle.n, bundle.feat_dim, bundle.num_classes, rng)


def train_one(
    bundle: GraphBundle,
    seed: int,
    model_config: ModelConfig | VanillaGtConfig,
    train_config: TrainConfig,
) -> SeedResult:
    """Train with early stopping; the returned test accuracy is taken at the
    epoch of best validation accuracy (ties resolve to the earliest)."""
    split = bundle.split(seed)
    rng = np.random.default_rng(seed)
    params = _init_params(bundle, model_config, rng)
    named = params.named()
    opt = AdamW(named, lr=train_config.lr, weight_decay=train_config.weight_decay)

    labels = bundle.labels
    best_val = -1.0
    best_epoch = 0
    best_test = 0.0
    best_snapshot: dict[str, np.ndarray] = {}
    losses: list[float] = []
    train_accs: list[float] = []
    val_accs: list[float] = []

    epoch = 0
    for epoch in range(1, train_config.max_epochs + 1):
        opt.zero_grad()
        with Tape() as tape:
            pred = _forward(bundle, model_config, params, True, rng)
            loss = cross_entropy_loss(pred, labels, split.train)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(f"nonfinite training loss at epoch {epoch}")
            tape.backward(loss)
        opt.step()

        eval_pred = _forward(bundle, model_config, params, False, rng).values
        train_acc = accuracy(eval_pred, labels, split.train)
        val_acc = accuracy(eval_pred, labels, split.val)
        test_acc = accuracy(eval_pred, labels, split.test)
        losses.append(loss_val)
        train_accs.append(train_acc)
        val_accs.append(val_acc)

        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_test = test_acc
            best_snapshot = {name: t.values.copy() for name, t in named.items()}
        if epoch - best_epoch >= train_config.patience:
            break

    return SeedResult(
        seed=seed,
        test_accuracy=best_test,
        best_val_accuracy=best_val,
        best_epoch=best_epoch,
        epochs_run=epoch,
        train_losses=losses,
        train_accuracies=train_accs,
        val_accuracies=val_accs,
        best_params=best_snapshot,
    )


def _train_one_star(args):
    return train_one(*args)


def run_multi_seed(
    bundle: GraphBundle,
    model_config: ModelConfig | VanillaGtConfig,
    train_config: TrainConfig,
    jobs: int = 1,
) -> RunResult:
    """Aggregate train_one across seeds; diverging seeds are recorded and
    excluded from the mean/std with a warning."""
    result = RunResult()
    seeds = list(train_config.seeds)
    if jobs > 1 and len(seeds) > 1:
        tasks = [(bundle, seed, model_config, train_config) for seed in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = []
            for seed, fut in zip(seeds, [pool.submit(_train_one_star, t) for t in tasks]):
                try:
                    outcomes.append(fut.result())
                except DivergenceError as e:
                    outcomes.append((seed, str(e)))
        for outcome in outcomes:
            if isinstance(outcome, SeedResult):
                result.per_seed.append(outcome)
            else:
                result.failed_seeds.append(outcome)
    else:
        for seed in seeds:
            try:
                result.per_seed.append(train_one(bundle, seed, model_config, train_config))
            except DivergenceError as e:
                result.failed_seeds.append((seed, str(e)))
    for seed, message in result.failed_seeds:
        warnings.warn(f"seed {seed} diverged and is excluded from aggregation: {message}", stacklevel=2)
    log.info(
        "multi-seed run: mean=%.4f std=%.4f over %d seeds (%d failed)",
        result.mean, result.std, len(result.per_seed), len(result.failed_seeds),
    )
    return result


# ---------------------------------------------------------------------------
# suites


def ablation_variant(base: ModelConfig, name: str) -> ModelConfig:
    if name == "best":
        return base
    if name == "w/o FFN":
        return replace(base, ffn=FfnVariant.NONE)
    if name == "FFN(GEGLU)":
        return replace(base, ffn=FfnVariant.GEGLU)
    if name == "FFN(ReGLU)":
        return replace(base, ffn=FfnVariant.REGLU)
    if name == "w/o AIRes":
        return replace(base, residual=ResidualMode.NONE)
    if name == "AIRes-Res":
        return replace(base, residual=ResidualMode.PLAIN)
    raise ConfigError(f"unknown ablation variant {name!r}")


def ablation_suite(
    bundle: GraphBundle, base_config: ModelConfig, train_config: TrainConfig, jobs: int = 1
) -> list[tuple[str, RunResult]]:
    """The six-variant ablation, all sharing the same seeds and splits."""
    rows = []
    for name in ABLATION_VARIANTS:
        log.info("ablation variant %s", name)
        config = ablation_variant(base_config, name)
        rows.append((name, run_multi_seed(bundle, config, train_config, jobs)))
    return rows


def depth_sweep(
    bundle: GraphBundle,
    model_config: ModelConfig,
    depths: list[int],
    train_config: TrainConfig,
    jobs: int = 1,
) -> list[tuple[str, int, RunResult]]:
    """Accuracy vs block count for the configured model and a no-residual
    GCN-like control stack (the over-smoothing victim)."""
    if not depths or any(d < 1 for d in depths):
        raise ConfigError(f"depths must be positive, got {depths}")
    pattern = model_config.blocks.blocks[0]
    rows = []
    for depth in depths:
        blocks = repeat_blocks(pattern, depth)
        log.info("depth %d", depth)
        deep = replace(model_config, blocks=blocks)
        control = replace(model_config, blocks=blocks, residual=ResidualMode.NONE, ffn=FfnVariant.NONE)
        rows.append(("gnnformer", depth, run_multi_seed(bundle, deep, train_config, jobs)))
        rows.append(("control", depth, run_multi_seed(bundle, control, train_config, jobs)))
    return rows


def baseline_comparison(
    bundle: GraphBundle,
    gnnformer_config: ModelConfig,
    train_config: TrainConfig,
    gt_layers: int = 2,
    jobs: int = 1,
) -> list[tuple[str, RunResult | CapacityError]]:
    """Three-way comparison: vanilla GT, variant GT (graph attention in
    place of dense MHA), and GNNFormer. A capacity failure of the dense
    baseline is reported as a row; the suite continues."""
    from .operators import PropagatorKind

    shared = dict(layers=gt_layers, d_prime=gnnformer_config.d_prime,
                  heads=gnnformer_config.heads, dropout=gnnformer_config.dropout)
    series: list[tuple[str, ModelConfig | VanillaGtConfig]] = [
        ("vanilla_gt", VanillaGtConfig(attention=PropagatorKind.DENSE_ATTENTION, **shared)),
        ("variant_gt", VanillaGtConfig(attention=PropagatorKind.GAT_LIKE, **shared)),
        ("gnnformer", gnnformer_config),
    ]
    rows: list[tuple[str, RunResult | CapacityError]] = []
    for name, config in series:
        log.info("baseline series %s", name)
        try:
            rows.append((name, run_multi_seed(bundle, config, train_config, jobs)))
        except CapacityError as e:
            log.warning("series %s skipped: %s", name, e)
            rows.append((name, e))
    return rows
