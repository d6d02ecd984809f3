"""Metrics and the repeated-trial protocol.

Each trial draws a fresh MCAR mask over a complete ground-truth table,
trains the configured imputer on the observed cells and scores it by RMSE
on the masked cells (normalized units). When the table carries labels, the
completed matrix also feeds a multinomial logistic regression scored by
cross-validated macro one-vs-rest AUROC.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata

from .data import DataTable, RngStreams, generate_mcar_mask, make_observed, normalize
from .errors import ConfigurationError, MetricError
from .gain import GainHyperparams, GainModel, impute_normalized, train_gain
from .transfer import STRATEGY_LABELS, PretrainedBundle, TransferPlan, finetune, pretrain

GAIN = "gain"


def rmse_missing(truth, imputed, mask) -> float:
    """Root mean squared error over cells where ``mask == 0``."""
    truth = np.asarray(truth, dtype=np.float64)
    imputed = np.asarray(imputed, dtype=np.float64)
    mask = np.asarray(mask)
    if truth.shape != imputed.shape or truth.shape != mask.shape:
        raise MetricError(f"shapes differ: {truth.shape}, {imputed.shape}, {mask.shape}")
    missing = mask == 0
    if not missing.any():
        raise MetricError("RMSE over missing cells is undefined: nothing is missing")
    diff = truth[missing] - imputed[missing]
    return float(np.sqrt(np.mean(diff * diff)))


# -- logistic regression ------------------------------------------------------


@dataclass
class LogisticRegression:
    weights: np.ndarray
    bias: np.ndarray
    center: np.ndarray
    scale: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    def predict_proba(self, features) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.center) / self.scale
        return softmax(x @ self.weights + self.bias, axis=1)

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)


def train_logreg(features, labels, l2: float = 1e-3, epochs: int = 300, seed: int = 0,
                 learning_rate: float = 0.5, batch_size: Optional[int] = None,
                 n_classes: Optional[int] = None) -> LogisticRegression:
    """Softmax regression fitted by gradient descent on cross-entropy + L2.

    Features are standardized internally. Weights start at zero, so with
    ``epochs == 0`` every class gets probability 1/K. Full-batch by
    default; ``batch_size`` switches to shuffled mini-batches drawn from
    ``seed``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("logistic regression features must be finite")
    k = int(n_classes or (y.max() + 1))
    if len(np.unique(y)) < 2:
        raise ConfigurationError("logistic regression needs at least two classes")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    x = (x - center) / scale
    n, p = x.shape
    onehot = np.eye(k)[y]
    w = np.zeros((p, k))
    b = np.zeros(k)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n) if batch_size else np.arange(n)
        step = batch_size or n
        for start in range(0, n, step):
            idx = order[start:start + step]
            probs = softmax(x[idx] @ w + b, axis=1)
            err = (probs - onehot[idx]) / len(idx)
            w -= learning_rate * (x[idx].T @ err + l2 * w)
            b -= learning_rate * err.sum(axis=0)
    return LogisticRegression(w, b, center, scale)


# -- AUROC --------------------------------------------------------------------


def auroc_binary(scores, positive) -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc_macro(scores, labels) -> float:
    """Macro average of one-vs-rest AUROC over classes present in ``labels``."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape[0] != labels.shape[0]:
        raise MetricError("one score row per label is required")
    present = np.unique(labels)
    if present.size < 2:
        raise MetricError("AUROC is undefined when only one class is present")
    if present.max() >= scores.shape[1]:
        raise MetricError(f"label {present.max()} has no score column")
    return float(np.mean([auroc_binary(scores[:, c], labels == c) for c in present]))


def stratified_folds(labels, n_folds: int, seed: int) -> List[np.ndarray]:
    """Test-index arrays for stratified k-fold splitting."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds: List[List[int]] = [[] for _ in range(n_folds)]
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        for i, row in enumerate(idx):
            folds[(offset + i) % n_folds].append(int(row))
        offset += len(idx)
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds if f]


def cross_validated_auroc(features, labels, n_folds: int = 5, seed: int = 0, **logreg) -> float:
    """Mean macro AUROC of logistic regression over stratified folds."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max() + 1)
    scores = []
    for test in stratified_folds(labels, n_folds, seed):
        train = np.setdiff1d(np.arange(labels.size), test)
        clf = train_logreg(features[train], labels[train], seed=seed, n_classes=k, **logreg)
        scores.append(auroc_macro(clf.predict_proba(features[test]), labels[test]))
    return float(np.mean(scores))


# -- trials -------------------------------------------------------------------


@dataclass
class TrialResult:
    rmse: float
    trial_seed: int
    strategy: str
    auroc: Optional[float] = None
    rmse_original: Optional[float] = None


@dataclass
class AggregateResult:
    strategy: str
    miss_rate: float
    metric: str
    mean: float
    std: float
    n_trials: int
    values: List[float] = field(default_factory=list, repr=False)

    @property
    def label(self) -> str:
        return model_label(self.strategy)


def model_label(strategy: str) -> str:
    return "GAIN" if strategy == GAIN else STRATEGY_LABELS[strategy]


def aggregate(values: Sequence[float]):
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    return mean, float(np.sqrt(np.mean((arr - mean) ** 2)))


def trial_seed(master_seed: int, trial: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(trial), *keys]).generate_state(1)[0])


# pretraining seeds live in their own key space so they never coincide with training seeds
PRETRAIN_KEY = 7


def pretrain_seed(master_seed: int, trial: int) -> int:
    return trial_seed(master_seed, trial, PRETRAIN_KEY)


def fit_imputer(strategy: str, table: DataTable, mask, hyper: GainHyperparams, seed: int,
                bundle: Optional[PretrainedBundle] = None,
                plan: Optional[TransferPlan] = None) -> GainModel:
    """Plain GAIN for ``strategy == "gain"``, otherwise fine-tuning of ``bundle``."""
    if strategy == GAIN:
        return train_gain(table, mask, hyper, seed)
    if bundle is None:
        raise ConfigurationError(f"strategy {strategy!r} needs a pretrained bundle")
    plan = plan or TransferPlan(strategy)
    return finetune(bundle, table, mask, plan, hyper, seed)


def run_trials(truth: DataTable, strategy: str, miss_rate: float, n_trials: int = 10,
               master_seed: int = 0, hyper: Optional[GainHyperparams] = None,
               source: Optional[DataTable] = None,
               bundle: Optional[PretrainedBundle] = None,
               bundle_cache: Optional[Dict[int, PretrainedBundle]] = None,
               plan: Optional[TransferPlan] = None,
               with_auroc: bool = False) -> Dict[str, AggregateResult]:
    """Repeat mask -> train -> impute -> score ``n_trials`` times.

    Trial ``t`` derives its mask and training seed from ``(master_seed, t)``
    only, so every strategy sees the same masks. For transfer strategies the
    bundle comes from ``bundle``, else from ``bundle_cache[t]``, else from
    pretraining on ``source`` (and is stored in the cache). Returns one
    aggregate per metric ("rmse", "rmse_original", and "auroc" when
    requested).
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be at least 1")
    if not truth.is_complete:
        raise ConfigurationError("ground-truth table must be complete to score imputations")
    if with_auroc and truth.labels is None:
        raise ConfigurationError("AUROC requested but the table has no labels")
    hyper = hyper or GainHyperparams()
    truth_n, params = normalize(truth)
    source_n = normalize(source)[0] if source is not None else None
    trials = []
    for t in range(n_trials):
        seed = trial_seed(master_seed, t)
        streams = RngStreams.from_seed(master_seed, t)
        mask = generate_mcar_mask(truth.shape, miss_rate, streams.mask)
        trial_bundle = None
        if strategy != GAIN:
            trial_bundle = bundle
            if trial_bundle is None:
                cache = bundle_cache if bundle_cache is not None else {}
                if t not in cache:
                    if source_n is None:
                        raise ConfigurationError("transfer strategies need a source table or a bundle")
                    cache[t] = pretrain(source_n, hyper, pretrain_seed(master_seed, t))
                trial_bundle = cache[t]
        model = fit_imputer(strategy, truth_n, mask, hyper, seed, trial_bundle, plan)
        x_hat = impute_normalized(model, make_observed(truth_n, mask), mask, streams.noise)
        result = TrialResult(
            rmse_missing(truth_n.values, x_hat, mask), seed, strategy,
            rmse_original=rmse_missing(truth.values, params.invert(x_hat), mask),
        )
        if with_auroc:
            features = x_hat.copy()
            binary = ~params.continuous
            features[:, binary] = (features[:, binary] >= 0.5).astype(np.float64)
            result.auroc = cross_validated_auroc(features, truth.labels, seed=seed)
        trials.append(result)

    metrics = {"rmse": [r.rmse for r in trials], "rmse_original": [r.rmse_original for r in trials]}
    if with_auroc:
        metrics["auroc"] = [r.auroc for r in trials]
    out = {}
    for name, values in metrics.items():
        mean, std = aggregate(values)
        out[name] = AggregateResult(strategy, miss_rate, name, mean, std, n_trials, list(values))
    return out


# -- reporting ------------------------------------------------------------------

RESULT_COLUMNS = ("strategy", "miss_rate", "metric", "mean", "std", "n_trials")


def results_csv(rows: Sequence[AggregateResult], comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in rows:
        writer.writerow([r.strategy, repr(r.miss_rate), r.metric, f"{r.mean:.10g}", f"{r.std:.10g}",
                         r.n_trials])
    return buf.getvalue()


def results_table(rows: Sequence[AggregateResult], metric: str = "rmse") -> str:
    """Models as rows, miss rates as columns, cells "mean (± std)"."""
    rows = [r for r in rows if r.metric == metric]
    rates = sorted({r.miss_rate for r in rows})
    models: List[str] = []
    for r in rows:
        if r.strategy not in models:
            models.append(r.strategy)
    cell = {(r.strategy, r.miss_rate): f"{r.mean:.4f} (± {r.std:.4f})" for r in rows}
    header = ["Model"] + [f"{rate:.0%}" for rate in rates]
    body = [[model_label(m)] + [cell.get((m, rate), "-") for rate in rates] for m in models]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    fmt = lambda line: "  ".join(s.ljust(w) for s, w in zip(line, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(line) for line in body])
