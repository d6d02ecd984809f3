"""GAIN: generator/discriminator imputation with the hint mechanism.

The generator sees the observed data (missing cells filled with small
uniform noise) next to the mask and proposes a value for every cell. The
discriminator sees the composite vector (observed values kept, generated
values elsewhere) next to a hint and guesses, cell by cell, which entries
were observed. All losses are sums over cells averaged over batch rows.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .data import (
    BINARY,
    DataTable,
    NormalizationParams,
    RngStreams,
    generate_mcar_mask,
    make_observed,
    sample_batch,
    sample_hint,
    sample_noise,
)
from .errors import ConfigurationError, InputError, TrainingError

EPS = 1e-8

# generator objective during ordinary (GAIN / fine-tuning) training
FINETUNE = "finetune"
# generator objective on a complete source: reconstruction of every cell
PRETRAIN = "pretrain"


@dataclass
class GainHyperparams:
    batch_size: int = 128
    hint_rate: float = 0.9
    alpha: float = 10.0
    learning_rate: float = 1e-3
    iterations: int = 3000
    noise_high: float = 0.01
    hidden_width: int = 10
    hidden_layers: int = 4
    pretrain_miss_rate: float = 0.5
    # "as_written" drops the (1 - x) log(1 - x*) half of the binary loss
    binary_loss: str = "as_written"

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0 or self.hidden_width < 1 or self.hidden_layers < 1:
            raise ConfigurationError("batch_size, hidden sizes must be positive and iterations >= 0")
        if not 0.0 <= self.hint_rate <= 1.0 or not 0.0 <= self.pretrain_miss_rate <= 1.0:
            raise ConfigurationError("hint_rate and pretrain_miss_rate must lie in [0, 1]")
        if self.alpha < 0 or self.learning_rate <= 0 or self.noise_high <= 0:
            raise ConfigurationError("alpha must be >= 0, learning_rate and noise_high > 0")
        if self.binary_loss not in ("as_written", "cross_entropy"):
            raise ConfigurationError(f"unknown binary_loss {self.binary_loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossHistory:
    d_loss: List[float] = field(default_factory=list)
    g_loss: List[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "d_loss", "g_loss"])
            for it, (dl, gl) in enumerate(zip(self.d_loss, self.g_loss)):
                writer.writerow([it, repr(dl), repr(gl)])


@dataclass
class GainModel:
    generator: nn.Network
    discriminator: nn.Network
    hyper: GainHyperparams
    column_kinds: Tuple[str, ...]
    history: LossHistory = field(default_factory=LossHistory)

    def __post_init__(self):
        d = len(self.column_kinds)
        if self.generator.output_dim != d or self.discriminator.output_dim != d:
            raise ConfigurationError("generator and discriminator must both output one value per column")
        if self.generator.input_dim != 2 * d or self.discriminator.input_dim != 2 * d:
            raise ConfigurationError("generator and discriminator take 2*d inputs")

    @property
    def n_cols(self) -> int:
        return len(self.column_kinds)


def network_layout(d: int, hyper: GainHyperparams) -> Tuple[List[int], List[str]]:
    """Widths and activations shared by generator and discriminator.

    Input layer 2d -> width, ``hidden_layers`` width -> width layers, and a
    sigmoid output layer width -> d.
    """
    widths = [2 * d] + [hyper.hidden_width] * (hyper.hidden_layers + 1) + [d]
    activations = ["relu"] * (hyper.hidden_layers + 1) + ["sigmoid"]
    return widths, activations


def init_gain(column_kinds: Sequence[str], hyper: GainHyperparams, streams: RngStreams) -> GainModel:
    widths, acts = network_layout(len(column_kinds), hyper)
    generator = nn.init_network(widths, acts, streams.next_seed())
    discriminator = nn.init_network(widths, acts, streams.next_seed())
    return GainModel(generator, discriminator, hyper, tuple(column_kinds))


# -- losses ----------------------------------------------------------------


def _rows(a) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=np.float64))


def _binary_columns(column_kinds: Sequence[str]) -> np.ndarray:
    return np.array([k == BINARY for k in column_kinds], dtype=bool)


def reconstruction_term(x, x_star, kind, binary_loss: str = "as_written"):
    """Per-cell reconstruction loss.

    Continuous cells use the squared error; binary cells use -x log x*
    (plus -(1 - x) log(1 - x*) when ``binary_loss == "cross_entropy"``).
    ``kind`` may be a single kind or one kind per trailing column.
    """
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    binary = _kind_flags(kind, x.shape)
    p = np.clip(x_star, EPS, 1.0 - EPS)
    bce = -x * np.log(p)
    if binary_loss == "cross_entropy":
        bce = bce - (1.0 - x) * np.log(1.0 - p)
    out = np.where(binary, bce, (x - x_star) ** 2)
    return float(out) if out.ndim == 0 else out


def _kind_flags(kind, shape) -> np.ndarray:
    if isinstance(kind, str):
        return np.full(shape, kind == BINARY)
    return np.broadcast_to(_binary_columns(kind), shape)


def _reconstruction_grad(x, x_star, binary, binary_loss) -> np.ndarray:
    p = np.clip(x_star, EPS, 1.0 - EPS)
    inside = (x_star > EPS) & (x_star < 1.0 - EPS)
    g_bin = -x / p
    if binary_loss == "cross_entropy":
        g_bin = g_bin + (1.0 - x) / (1.0 - p)
    return np.where(binary, g_bin * inside, 2.0 * (x_star - x))


def discriminator_loss(m, m_hat, b) -> float:
    """Log-likelihood of the discriminator on cells whose hint hides the mask.

    The discriminator maximizes this quantity (training minimizes its
    negation). Cells with ``b == 1`` are excluded.
    """
    return -_discriminator_objective(m, m_hat, b)[0]


def _discriminator_objective(m, m_hat, b) -> Tuple[float, np.ndarray]:
    """Value and gradient (w.r.t. m_hat) of the negated discriminator loss."""
    m, m_hat, b = _rows(m), _rows(m_hat), _rows(b)
    if not (m.shape == m_hat.shape == b.shape):
        raise InputError("m, m_hat and b must share a shape")
    n = m.shape[0]
    p = np.clip(m_hat, EPS, 1.0 - EPS)
    inside = (m_hat > EPS) & (m_hat < 1.0 - EPS)
    keep = 1.0 - b
    value = -np.sum(keep * (m * np.log(p) + (1.0 - m) * np.log(1.0 - p))) / n
    grad = -keep * (m / p - (1.0 - m) / (1.0 - p)) * inside / n
    return float(value), grad


def generator_finetune_loss(
    m, m_hat, x_tilde, x_bar, alpha: float, column_kinds: Sequence[str],
    b=None, binary_loss: str = "as_written",
) -> float:
    """Adversarial loss on missing cells plus alpha times reconstruction of observed cells.

    With ``b`` given, the adversarial sum is further restricted to cells whose
    hint is hidden.
    """
    return _generator_objective(m, m_hat, x_tilde, x_bar, alpha, column_kinds, b, binary_loss)[0]


def _generator_objective(m, m_hat, x_tilde, x_bar, alpha, column_kinds, b=None,
                         binary_loss="as_written"):
    """Value and gradients w.r.t. m_hat and x_bar of the fine-tuning generator loss."""
    m, m_hat, x_tilde, x_bar = _rows(m), _rows(m_hat), _rows(x_tilde), _rows(x_bar)
    if not (m.shape == m_hat.shape == x_tilde.shape == x_bar.shape):
        raise InputError("generator loss inputs must share a shape")
    n = m.shape[0]
    missing = 1.0 - m
    if b is not None:
        missing = missing * (1.0 - _rows(b))
    p = np.clip(m_hat, EPS, 1.0 - EPS)
    inside = (m_hat > EPS) & (m_hat < 1.0 - EPS)
    adv = -np.sum(missing * np.log(p)) / n
    grad_m_hat = -missing / p * inside / n
    binary = np.broadcast_to(_binary_columns(column_kinds), m.shape)
    recon_cells = reconstruction_term(x_tilde, x_bar, column_kinds, binary_loss)
    recon = np.sum(m * recon_cells) / n
    grad_x_bar = alpha * m * _reconstruction_grad(x_tilde, x_bar, binary, binary_loss) / n
    return float(adv + alpha * recon), grad_m_hat, grad_x_bar


def _pretrain_objective(x_true, x_bar, column_kinds, binary_loss="as_written"):
    """Reconstruction of every cell against the known true values."""
    x_true, x_bar = _rows(x_true), _rows(x_bar)
    n = x_true.shape[0]
    binary = np.broadcast_to(_binary_columns(column_kinds), x_true.shape)
    value = np.sum(reconstruction_term(x_true, x_bar, column_kinds, binary_loss)) / n
    grad = _reconstruction_grad(x_true, x_bar, binary, binary_loss) / n
    return float(value), grad


# -- imputation ------------------------------------------------------------


def _generator_input(x_tilde, m, z) -> np.ndarray:
    return np.concatenate([m * x_tilde + (1.0 - m) * z, m], axis=1)


def impute_batch(model: GainModel, x_tilde, m, z) -> Tuple[np.ndarray, np.ndarray]:
    """Generator output X-bar and composite X-hat for one batch.

    Observed cells of X-hat are copied from ``x_tilde`` bit for bit.
    """
    x_tilde, m, z = _rows(x_tilde), _rows(m), _rows(z)
    if not (x_tilde.shape == m.shape == z.shape) or x_tilde.shape[1] != model.n_cols:
        raise InputError(f"batch shapes {x_tilde.shape}, {m.shape}, {z.shape} do not fit the model")
    x_bar = nn.forward(model.generator, _generator_input(x_tilde, m, z))
    x_hat = np.where(m == 1.0, x_tilde, x_bar)
    return x_bar, x_hat


def impute_normalized(model: GainModel, x_tilde, mask, rng: np.random.Generator) -> np.ndarray:
    """Raw composite imputations in normalized units (no thresholding)."""
    x_tilde = _rows(x_tilde)
    z = sample_noise(x_tilde.shape, rng, model.hyper.noise_high)
    return impute_batch(model, x_tilde, mask, z)[1]


def impute_full(model: GainModel, table: DataTable, mask, rng: np.random.Generator,
                params: Optional[NormalizationParams] = None) -> np.ndarray:
    """Complete every row of a normalized table.

    The result is mapped back to original units with ``params`` (when
    given) and binary columns are thresholded at 0.5.
    """
    if tuple(table.column_kinds) != tuple(model.column_kinds):
        raise InputError(
            f"table has {table.n_cols} columns {table.column_kinds} but the model was built for "
            f"{model.n_cols} columns {model.column_kinds}"
        )
    mask = table.mask if mask is None else np.asarray(mask, dtype=np.float64) * table.mask
    x_hat = impute_normalized(model, make_observed(table, mask), mask, rng)
    if params is not None:
        x_hat = params.invert(x_hat)
    binary = _binary_columns(model.column_kinds)
    x_hat[:, binary] = (x_hat[:, binary] >= 0.5).astype(np.float64)
    return x_hat


# -- training --------------------------------------------------------------


def discriminator_gradients(model: GainModel, x_hat, hint, m, reveal) -> Tuple[float, nn.Gradients]:
    """Negated discriminator loss and its parameter gradients for one batch."""
    m_hat, cache = nn.forward_with_cache(model.discriminator, np.concatenate([x_hat, hint], axis=1))
    loss, grad = _discriminator_objective(m, m_hat, reveal)
    return loss, nn.gradients(model.discriminator, grad, cache)


def generator_gradients(model: GainModel, x_b, m_b, z, hint, objective: str = FINETUNE,
                        x_true=None) -> Tuple[float, nn.Gradients]:
    """Generator loss and its parameter gradients for one batch.

    The fine-tuning loss is differentiated through the discriminator (whose
    own gradients are discarded). ``x_true`` is required for the
    pre-training objective.
    """
    d = model.n_cols
    x_bar, g_cache = nn.forward_with_cache(model.generator, _generator_input(x_b, m_b, z))
    if objective == PRETRAIN:
        loss, grad_x_bar = _pretrain_objective(x_true, x_bar, model.column_kinds, model.hyper.binary_loss)
    else:
        x_hat = m_b * x_b + (1.0 - m_b) * x_bar
        m_hat, d_cache = nn.forward_with_cache(model.discriminator, np.concatenate([x_hat, hint], axis=1))
        loss, grad_m_hat, grad_x_bar = _generator_objective(
            m_b, m_hat, x_b, x_bar, model.hyper.alpha, model.column_kinds,
            binary_loss=model.hyper.binary_loss)
        grad_x_hat = nn.gradients(model.discriminator, grad_m_hat, d_cache).input[:, :d]
        grad_x_bar = grad_x_bar + (1.0 - m_b) * grad_x_hat
    return loss, nn.gradients(model.generator, grad_x_bar, g_cache)


def fit(model: GainModel, values: np.ndarray, mask: Optional[np.ndarray], streams: RngStreams,
        objective: str = FINETUNE) -> GainModel:
    """Alternating discriminator/generator Adam updates, in place on ``model``.

    With ``objective == PRETRAIN`` ``values`` must be complete; each batch is
    masked afresh at ``hyper.pretrain_miss_rate`` and the generator learns
    to reconstruct every cell. Otherwise ``mask`` marks observed cells and
    the generator minimizes the fine-tuning loss.
    """
    hyper = model.hyper
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if objective == FINETUNE:
        x_tilde_all = make_observed(values, mask)
        mask_all = np.asarray(mask, dtype=np.float64)
    elif objective != PRETRAIN:
        raise ConfigurationError(f"unknown objective {objective!r}")
    g_opt = nn.AdamState.for_network(model.generator, hyper.learning_rate)
    d_opt = nn.AdamState.for_network(model.discriminator, hyper.learning_rate)
    x_true = None

    for it in range(hyper.iterations):
        idx = sample_batch(n, hyper.batch_size, streams.batch)
        if objective == FINETUNE:
            x_b, m_b = x_tilde_all[idx], mask_all[idx]
        else:
            x_true = values[idx]
            m_b = generate_mcar_mask(x_true.shape, hyper.pretrain_miss_rate, streams.mask)
            x_b = x_true * m_b
        z = sample_noise(x_b.shape, streams.noise, hyper.noise_high)
        hint, reveal = sample_hint(m_b, hyper.hint_rate, streams.hint)

        x_bar = nn.forward(model.generator, _generator_input(x_b, m_b, z))
        x_hat = m_b * x_b + (1.0 - m_b) * x_bar
        d_loss, d_grads = discriminator_gradients(model, x_hat, hint, m_b, reveal)
        nn.adam_step(model.discriminator, d_grads, d_opt)

        g_loss, g_grads = generator_gradients(model, x_b, m_b, z, hint, objective, x_true)
        nn.adam_step(model.generator, g_grads, g_opt)

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise TrainingError(f"non-finite loss at iteration {it}: d_loss={d_loss}, g_loss={g_loss}")
        model.history.d_loss.append(d_loss)
        model.history.g_loss.append(g_loss)
    return model


def train_gain(table: DataTable, mask, hyper: GainHyperparams, seed: int) -> GainModel:
    """Train plain GAIN on a normalized table.

    ``mask`` (or ``table.mask`` when None) marks the observed cells the model
    may learn from.
    """
    mask = table.mask if mask is None else np.asarray(mask, dtype=np.float64) * table.mask
    if mask.shape != table.shape:
        raise InputError(f"mask shape {mask.shape} != table shape {table.shape}")
    streams = RngStreams.from_seed(seed)
    model = init_gain(table.column_kinds, hyper, streams)
    return fit(model, table.values, mask, streams)
