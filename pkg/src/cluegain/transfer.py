"""Pre-training on a complete source table and fine-tuning on a target.

Pre-training keeps only the hidden layers of both networks. Fine-tuning
wraps them in fresh input/output layers sized for the target schema and
retrains according to one of five strategies:

=================  ==========================================================
direct_reuse       every carried hidden layer frozen
warm_start         nothing frozen; carried layers only serve as initialization
append_layers      carried layers frozen, followed by new trainable layers
freeze_shallow     first half of the carried layers frozen
freeze_deep        last half of the carried layers frozen
=================  ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import nn
from .data import DataTable, RngStreams, normalize, schema_digest
from .errors import ConfigurationError, PreconditionError
from .gain import (
    PRETRAIN,
    GainHyperparams,
    GainModel,
    LossHistory,
    fit,
    impute_full,
    init_gain,
)

DIRECT_REUSE = "direct_reuse"
WARM_START = "warm_start"
APPEND_LAYERS = "append_layers"
FREEZE_SHALLOW = "freeze_shallow"
FREEZE_DEEP = "freeze_deep"
STRATEGIES = (DIRECT_REUSE, WARM_START, APPEND_LAYERS, FREEZE_SHALLOW, FREEZE_DEEP)

# numbering used in result tables (ClueGAIN1 .. ClueGAIN5)
STRATEGY_LABELS = {
    DIRECT_REUSE: "ClueGAIN1",
    WARM_START: "ClueGAIN2",
    APPEND_LAYERS: "ClueGAIN3",
    FREEZE_SHALLOW: "ClueGAIN4",
    FREEZE_DEEP: "ClueGAIN5",
}


@dataclass(frozen=True)
class TransferPlan:
    strategy: str = FREEZE_DEEP
    pretrain_hidden_count: int = 4
    append_hidden_count: int = 4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.pretrain_hidden_count < 1:
            raise ConfigurationError("pretrain_hidden_count must be positive")
        if self.strategy == APPEND_LAYERS and self.append_hidden_count < 1:
            raise ConfigurationError("append_layers needs append_hidden_count >= 1")

    def freeze_mask(self, n_hidden: int) -> List[bool]:
        half = n_hidden // 2
        if self.strategy in (DIRECT_REUSE, APPEND_LAYERS):
            return [True] * n_hidden
        if self.strategy == WARM_START:
            return [False] * n_hidden
        if self.strategy == FREEZE_SHALLOW:
            return [True] * half + [False] * (n_hidden - half)
        return [False] * (n_hidden - half) + [True] * half

    @property
    def label(self) -> str:
        return STRATEGY_LABELS[self.strategy]


@dataclass
class PretrainedBundle:
    generator_hidden: List[nn.Layer]
    discriminator_hidden: List[nn.Layer]
    source_digest: str = ""
    hyper: dict = field(default_factory=dict)
    history: Optional[LossHistory] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.generator_hidden or not self.discriminator_hidden:
            raise ConfigurationError("a bundle needs hidden layers for both networks")
        nn._check_chain(self.generator_hidden)
        nn._check_chain(self.discriminator_hidden)

    @property
    def hidden_count(self) -> int:
        return len(self.generator_hidden)

    def to_bytes(self) -> bytes:
        return nn.dump_layer_groups(
            {"generator": self.generator_hidden, "discriminator": self.discriminator_hidden},
            {"kind": "pretrained_bundle", "source_digest": self.source_digest, "hyper": self.hyper},
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PretrainedBundle":
        groups, meta = nn.load_layer_groups(blob)
        if meta.get("kind") != "pretrained_bundle":
            raise ConfigurationError("parameter file is not a pretrained bundle")
        return cls(groups["generator"], groups["discriminator"],
                   meta.get("source_digest", ""), meta.get("hyper", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PretrainedBundle":
        return cls.from_bytes(Path(path).read_bytes())


def first_missing_cell(table: DataTable):
    """(row, column name) of the first missing cell in row-major order, or None."""
    rows, cols = np.nonzero(table.mask == 0.0)
    if rows.size == 0:
        return None
    return int(rows[0]), table.column_names[int(cols[0])]


def pretrain(source: DataTable, hyper: GainHyperparams, seed: int) -> PretrainedBundle:
    """Train both networks on a complete, normalized source table.

    The generator minimizes reconstruction error over all cells of batches
    masked at ``hyper.pretrain_miss_rate``; the discriminator keeps its
    usual hint-based objective. Only the hidden layers are returned.
    """
    missing = first_missing_cell(source)
    if missing is not None:
        raise PreconditionError(
            f"source table must be complete; first missing cell at row {missing[0] + 1}, "
            f"column {missing[1]!r}"
        )
    streams = RngStreams.from_seed(seed)
    model = init_gain(source.column_kinds, hyper, streams)
    fit(model, source.values, None, streams, objective=PRETRAIN)
    return PretrainedBundle(
        nn.surgery_extract_hidden(model.generator),
        nn.surgery_extract_hidden(model.discriminator),
        schema_digest(source),
        hyper.to_dict(),
        model.history,
    )


def build_transfer_model(bundle: PretrainedBundle, column_kinds, plan: TransferPlan,
                         hyper: GainHyperparams, streams: RngStreams) -> GainModel:
    """Generator and discriminator for the target, assembled per ``plan``."""
    if bundle.hidden_count != plan.pretrain_hidden_count:
        raise ConfigurationError(
            f"bundle carries {bundle.hidden_count} hidden layers, plan expects "
            f"{plan.pretrain_hidden_count}"
        )
    d = len(column_kinds)
    freeze = plan.freeze_mask(bundle.hidden_count)
    nets = []
    for hidden in (bundle.generator_hidden, bundle.discriminator_hidden):
        append = []
        if plan.strategy == APPEND_LAYERS:
            width = hidden[-1].fan_out
            layer_rng = np.random.default_rng(streams.next_seed())
            append = [nn.init_layer(width, width, "relu", layer_rng)
                      for _ in range(plan.append_hidden_count)]
        nets.append(nn.surgery_rebuild(hidden, 2 * d, d, freeze, append, streams.next_seed()))
    return GainModel(nets[0], nets[1], hyper, tuple(column_kinds))


def finetune(bundle: PretrainedBundle, target: DataTable, target_mask, plan: TransferPlan,
             hyper: GainHyperparams, seed: int) -> GainModel:
    """Adapt a pretrained bundle to a normalized target table with GAIN's losses.

    Only the bundle and the target are used; no source rows are needed.
    """
    mask = target.mask if target_mask is None else np.asarray(target_mask, dtype=np.float64) * target.mask
    streams = RngStreams.from_seed(seed)
    model = build_transfer_model(bundle, target.column_kinds, plan, hyper, streams)
    return fit(model, target.values, mask, streams)


def run_cluegain(source: DataTable, target: DataTable, target_mask, plan: TransferPlan,
                 hyper: GainHyperparams, seed: int) -> np.ndarray:
    """Pretrain, fine-tune and impute; inputs and output are in original units."""
    source_n, _ = normalize(source)
    mask = target.mask if target_mask is None else np.asarray(target_mask, dtype=np.float64) * target.mask
    target_n, params = normalize(target.replace(mask=mask))
    bundle = pretrain(source_n, hyper, seed)
    model = finetune(bundle, target_n, mask, plan, hyper, seed)
    completed = impute_full(model, target_n, mask, RngStreams.from_seed(seed, 1).noise, params)
    # observed cells come straight from the input
    return np.where(mask == 1.0, target.values, completed)
