"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary (see conftest.py) and also when this file is run as a
script.
"""

import time

import numpy as np
import pytest
from scipy.special import expit

from cluegain import evaluation as ev
from cluegain import gain, nn, synthetic, transfer
from cluegain.data import (
    BINARY,
    CONTINUOUS,
    RngStreams,
    denormalize,
    generate_mcar_mask,
    make_observed,
    normalize,
    table_from_array,
)
from cluegain.similarity import measure_similarity

from conftest import central_difference, max_relative_error

RESULTS = []


def record(name, passed, detail):
    """``passed`` is True, False, or None for a skipped criterion."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"{status}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return passed


# -- gradient suite -------------------------------------------------------------


def _relu_margin(net, inputs):
    """Smallest |pre-activation| over the ReLU units of ``net`` on ``inputs``."""
    margin, a = np.inf, inputs
    for layer in net.layers:
        pre = a @ layer.weights + layer.bias
        if layer.activation == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
        a = np.maximum(pre, 0.0) if layer.activation == "relu" else expit(pre)
    return margin


def _random_micro_model(rng, margin=1e-3):
    """Random micro instance whose ReLU units all sit ``margin`` away from their kink.

    Central differences straddling a kink measure the kink, not the gradient.
    """
    while True:
        instance = _draw_micro_model(rng)
        model, x_b, m, z, h, _ = instance
        _, x_hat = gain.impute_batch(model, x_b, m, z)
        g_in = np.concatenate([m * x_b + (1 - m) * z, m], axis=1)
        d_in = np.concatenate([x_hat, h], axis=1)
        if min(_relu_margin(model.generator, g_in), _relu_margin(model.discriminator, d_in)) >= margin:
            return instance


def _draw_micro_model(rng):
    d = int(rng.integers(2, 5))
    width = int(rng.integers(2, 11))
    kinds = tuple(rng.choice([CONTINUOUS, BINARY], size=d))
    hyper = gain.GainHyperparams(hidden_width=width, hidden_layers=int(rng.integers(1, 3)),
                                 alpha=float(rng.uniform(0.5, 20)),
                                 binary_loss=str(rng.choice(["as_written", "cross_entropy"])))
    model = gain.init_gain(kinds, hyper, RngStreams.from_seed(int(rng.integers(1 << 30))))
    for net in (model.generator, model.discriminator):
        for layer in net.layers:
            # off-kink biases so ReLU stays differentiable at the probe points
            layer.bias[:] = rng.normal(scale=0.3, size=layer.fan_out)
    n = int(rng.integers(3, 8))
    x = rng.uniform(size=(n, d))
    for j, kind in enumerate(kinds):
        if kind == BINARY:
            x[:, j] = rng.integers(0, 2, size=n)
    m = generate_mcar_mask((n, d), 0.4, rng)
    m[0, 0], m[0, 1] = 1.0, 0.0
    z = rng.uniform(0, 0.01, size=(n, d))
    h, b = gain.sample_hint(m, 0.5, rng)
    return model, make_observed(x, m), m, z, h, b


def _d_objective(model, x_b, m, z, h, b):
    _, x_hat = gain.impute_batch(model, x_b, m, z)
    m_hat = nn.forward(model.discriminator, np.concatenate([x_hat, h], axis=1))
    return -gain.discriminator_loss(m, m_hat, b)


def _g_objective(model, x_b, m, z, h):
    x_bar, x_hat = gain.impute_batch(model, x_b, m, z)
    m_hat = nn.forward(model.discriminator, np.concatenate([x_hat, h], axis=1))
    return gain.generator_finetune_loss(m, m_hat, x_b, x_bar, model.hyper.alpha, model.column_kinds,
                                        binary_loss=model.hyper.binary_loss)


def test_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, nets = 0.0, 0
    for _ in range(24):
        model, x_b, m, z, h, b = _random_micro_model(rng)
        assert len(model.generator.layers) <= 4 and max(model.generator.widths[1:-1]) <= 10
        _, x_hat = gain.impute_batch(model, x_b, m, z)
        _, d_grads = gain.discriminator_gradients(model, x_hat, h, m, b)
        d_num = central_difference(lambda: _d_objective(model, x_b, m, z, h, b),
                                   model.discriminator.parameters)
        _, g_grads = gain.generator_gradients(model, x_b, m, z, h)
        g_num = central_difference(lambda: _g_objective(model, x_b, m, z, h), model.generator.parameters)
        worst = max(worst, max_relative_error(d_grads.as_flat(), d_num),
                    max_relative_error(g_grads.as_flat(), g_num))
        nets += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    record("Gradient suite", ok, f"{nets} micro-networks x 2 losses, max rel err {worst:.2e} "
           f"(< 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok


# -- invariant suite --------------------------------------------------------------


def _observed_preservation(rng):
    for case in range(1000):
        if case % 50 == 0:
            model = _random_micro_model(rng)[0]
        n, d = int(rng.integers(1, 9)), model.n_cols
        x = rng.uniform(size=(n, d))
        m = (rng.random((n, d)) < rng.uniform()).astype(float)
        x_tilde = make_observed(x, m)
        _, x_hat = gain.impute_batch(model, x_tilde, m, rng.uniform(0, 0.01, (n, d)))
        if not np.array_equal(x_hat[m == 1], x_tilde[m == 1]):
            return False
    return True


def _freezing_bit_exact():
    source, _ = normalize(synthetic.correlated_gaussian(60, 5, seed=0))
    target, _ = normalize(synthetic.correlated_gaussian(40, 4, seed=1))
    mask = generate_mcar_mask(target.shape, 0.5, np.random.default_rng(0))
    hyper = gain.GainHyperparams(iterations=5, batch_size=16)
    bundle = transfer.pretrain(source, hyper, seed=0)
    steps = gain.GainHyperparams(iterations=100, batch_size=16)
    for strategy in transfer.STRATEGIES:
        model = transfer.finetune(bundle, target, mask, transfer.TransferPlan(strategy), steps, seed=1)
        for net, hidden in ((model.generator, bundle.generator_hidden),
                            (model.discriminator, bundle.discriminator_hidden)):
            if len(model.history.g_loss) != 100:
                return False
            for k, frozen in enumerate(transfer.TransferPlan(strategy).freeze_mask(4)):
                layer = net.layers[1 + k]
                if layer.frozen != frozen:
                    return False
                if frozen and not (np.array_equal(layer.weights, hidden[k].weights)
                                   and np.array_equal(layer.bias, hidden[k].bias)):
                    return False
    return True


def _normalization_roundtrip(rng):
    worst = 0.0
    for _ in range(200):
        values = rng.uniform(-1e3, 1e3, size=(int(rng.integers(2, 30)), int(rng.integers(1, 6))))
        values[rng.random(values.shape) < 0.2] = np.nan
        values[0] = rng.uniform(-1e3, 1e3, values.shape[1])
        table = table_from_array(values)
        norm, params = normalize(table)
        back = denormalize(norm.values, params)
        obs = table.mask == 1
        worst = max(worst, float(np.max(np.abs(back[obs] - table.values[obs]))))
    return worst


def _rmse_mask_only(rng):
    for _ in range(200):
        shape = (int(rng.integers(1, 10)), int(rng.integers(1, 10)))
        truth, imputed = rng.normal(size=shape), rng.normal(size=shape)
        mask = (rng.random(shape) < 0.5).astype(float)
        mask.flat[0] = 0
        perturbed = np.where(mask == 1, rng.normal(size=shape) * 100, imputed)
        if ev.rmse_missing(truth, imputed, mask) != ev.rmse_missing(truth, perturbed, mask):
            return False
    return True


def _auroc_monotone(rng):
    transforms = (np.exp, lambda s: s ** 3 + 2 * s, lambda s: 5 * s + 1, np.arctan)
    for _ in range(200):
        k = int(rng.integers(2, 5))
        labels = rng.integers(0, k, size=30)
        labels[:k] = np.arange(k)
        scores = np.round(rng.normal(size=(30, k)), 2)
        base = ev.auroc_macro(scores, labels)
        for f in transforms:
            if abs(ev.auroc_macro(f(scores), labels) - base) > 1e-12:
                return False
    return True


def _mask_rates(rng):
    for rate in (0.1, 0.3, 0.5, 0.8, 0.9):
        mask = generate_mcar_mask((100, 100), rate, rng)
        sigma = np.sqrt(rate * (1 - rate) / mask.size)
        if abs((mask == 0).mean() - rate) >= 3 * sigma:
            return False
    return True


def test_invariant_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    roundtrip = _normalization_roundtrip(rng)
    checks = {
        "observed preservation x1000": _observed_preservation(rng),
        "freezing x100 steps, 5 strategies": _freezing_bit_exact(),
        f"normalization roundtrip {roundtrip:.1e}": roundtrip <= 1e-9,
        "RMSE mask-only": _rmse_mask_only(rng),
        "AUROC monotone invariance": _auroc_monotone(rng),
        "mask rate 3 sigma on 1e4 cells": _mask_rates(rng),
    }
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    failed = [name for name, passed in checks.items() if not passed]
    record("Invariant suite", ok, f"{len(checks) - len(failed)}/{len(checks)} checks "
           f"({'; '.join(failed) or 'all exact'}), {elapsed:.1f}s (< 60s)")
    assert ok


# -- synthetic transfer experiments -------------------------------------------------

SOURCE = dict(n=5000, d=20, seed=100)
TARGET = dict(n=400, d=20, seed=101)
MASTER_SEED = 0


@pytest.fixture(scope="module")
def transfer_setup():
    return (synthetic.correlated_gaussian(**SOURCE), synthetic.correlated_gaussian(**TARGET), {})


def _paired(setup, miss_rate):
    source, target, cache = setup
    base = ev.run_trials(target, ev.GAIN, miss_rate, 10, MASTER_SEED)["rmse"]
    clue = ev.run_trials(target, transfer.FREEZE_DEEP, miss_rate, 10, MASTER_SEED,
                         source=source, bundle_cache=cache)["rmse"]
    return base, clue


def test_synthetic_transfer(transfer_setup):
    start = time.perf_counter()
    base, clue = _paired(transfer_setup, 0.8)
    gap = 1 - clue.mean / base.mean
    elapsed = time.perf_counter() - start
    ok = gap >= 0.05 and elapsed < 600
    record("Synthetic transfer", ok, f"miss 0.8, 10 trials: GAIN {base.mean:.4f}±{base.std:.4f}, "
           f"ClueGAIN5 {clue.mean:.4f}±{clue.std:.4f}, relative gap {gap:.1%} (>= 5%), {elapsed:.0f}s")
    assert ok


def test_crossover(transfer_setup):
    low_base, low_clue = _paired(transfer_setup, 0.2)
    high_base, high_clue = _paired(transfer_setup, 0.9)
    within = abs(low_base.mean - low_clue.mean) / low_clue.mean
    wins = sum(c < g for c, g in zip(high_clue.values, high_base.values))
    ok = within <= 0.10 and wins >= 8
    record("Crossover", ok, f"miss 0.2: GAIN {low_base.mean:.4f} vs ClueGAIN5 {low_clue.mean:.4f} "
           f"({within:.1%} apart, <= 10%); miss 0.9: ClueGAIN5 better in {wins}/10 trials (>= 8)")
    assert ok


# -- similarity ranking ---------------------------------------------------------------


def test_similarity_ranking():
    start = time.perf_counter()
    hits, tops = 0, []
    for master in range(10):
        target = synthetic.correlated_gaussian(5000, 20, seed=1000 + master)
        candidates = [synthetic.correlated_gaussian(400, 20, seed=2000 + master),
                      synthetic.independent_uniform(400, 20, seed=3000 + master),
                      synthetic.skewed_mixture(400, 20, seed=4000 + master)]
        report = measure_similarity(target, candidates, 0.8, n_trials=2, master_seed=master,
                                    names=["A-sampled", "uniform", "skewed"])
        tops.append(report.top)
        hits += report.top == "A-sampled"
    elapsed = time.perf_counter() - start
    ok = hits >= 9 and elapsed < 900
    record("Similarity ranking", ok, f"A-sampled ranked first for {hits}/10 master seeds (>= 9); "
           f"tops {tops}; {elapsed:.0f}s (< 900s)")
    assert ok


# -- prediction harness -----------------------------------------------------------------


def test_prediction_harness():
    table = synthetic.separable_classes(600, 6, 3, seed=0)
    out = ev.run_trials(table, ev.GAIN, 0.3, 10, MASTER_SEED, with_auroc=True)["auroc"]
    ok = out.mean >= 0.95
    record("Prediction harness", ok, f"3-class separable data, miss 0.3: macro AUROC "
           f"{out.mean:.4f}±{out.std:.4f} over 10 trials (>= 0.95)")
    assert ok


def test_reference_scale_optional():
    record("Reference-scale (optional)", None, "external reference datasets are not available offline")
    pytest.skip("external reference datasets are not available offline")


if __name__ == "__main__":  # pragma: no cover
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
