"""Built-in verification suite: gradient checks, published-metric golden test, rule smoke tests."""

import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from .adjudicator import ExamMeasures, SourceFlags, adjudicate
from .constants import CLASS_INDEX, INIT_VARIANCE_FACTOR, N_CLASSES, NETWORK_GRAD_TOLERANCE, OP_GRAD_TOLERANCE
from .evalkit import published_report
from .logging_config import logger
from .model import ResNet1d, ResNetConfig
from .tensor_core import (
    FLOAT64,
    BatchNorm1d,
    BCELoss,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    OpContext,
    ReLU,
    Sigmoid,
    finite_difference_check,
)
from .training import plateau_scheduler

# Miniature network used by the end-to-end gradient check
GRADCHECK_CONFIG = ResNetConfig(
    n_blocks=2, kernel_length=5, input_leads=2, input_samples=32,
    base_filters=3, filter_growth=3, subsample=2, dropout_rate=0.2, n_classes=N_CLASSES,
)
NETWORK_FD_EPS = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float = 0.0


def _unary(op, *extra):
    def func(x):
        ctx = OpContext()
        out = op.forward(ctx, x, *extra)
        return out, lambda g: (op.backward(ctx, g),)
    return func


def _conv(stride):
    def func(x, w, b):
        ctx = OpContext()
        out = Conv1d.forward(ctx, x, w, b, stride)
        return out, lambda g: Conv1d.backward(ctx, g)
    return func


def _batchnorm(training):
    running_mean = np.array([0.1, -0.2, 0.3])
    running_var = np.array([1.5, 0.7, 1.1])

    def func(x, gamma, beta):
        ctx = OpContext(training=training)
        out, _, _ = BatchNorm1d.forward(ctx, x, gamma, beta, running_mean, running_var)
        return out, lambda g: BatchNorm1d.backward(ctx, g)
    return func


def _dropout(x):
    ctx = OpContext(training=True, rng=np.random.default_rng(11))
    out = Dropout.forward(ctx, x, 0.3)
    return out, lambda g: (Dropout.backward(ctx, g),)


def _dense(x, w, b):
    ctx = OpContext()
    out = Dense.forward(ctx, x, w, b)
    return out, lambda g: Dense.backward(ctx, g)


def _bce(probs, labels):
    ctx = OpContext()
    loss = BCELoss.forward(ctx, probs, labels)
    return loss, lambda g: (BCELoss.backward(ctx, g), None)


def op_gradient_cases(rng: np.random.Generator):
    """(name, func, inputs) for every differentiable op."""
    x = rng.standard_normal((2, 3, 12))
    w = rng.standard_normal((4, 3, 5)) * 0.5
    b = rng.standard_normal(4)
    return [
        ("conv1d stride 1", _conv(1), [x, w, b]),
        ("conv1d stride 3", _conv(3), [x, w, b]),
        ("conv1d even kernel", _conv(2), [x, rng.standard_normal((4, 3, 4)), b]),
        ("batchnorm1d train", _batchnorm(True), [x, rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]),
        ("batchnorm1d inference", _batchnorm(False), [x, rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]),
        ("relu", _unary(ReLU), [x]),
        ("dropout", _dropout, [x]),
        ("maxpool1d", _unary(MaxPool1d, 4), [rng.standard_normal((2, 3, 10))]),
        ("dense", _dense, [rng.standard_normal((3, 7)), rng.standard_normal((7, 6)), rng.standard_normal(6)]),
        ("sigmoid", _unary(Sigmoid), [rng.standard_normal((3, 6)) * 3]),
        ("bce loss", _bce, [rng.uniform(0.05, 0.95, (4, 6)), (rng.random((4, 6)) < 0.5).astype(FLOAT64)]),
    ]


def network_gradient_error(seed: int = 0, max_entries: int = 6) -> float:
    """Worst relative error of the miniature network's parameter gradients (float64)."""
    rng = np.random.default_rng(seed)
    model = ResNet1d.build(GRADCHECK_CONFIG, rng, dtype=FLOAT64)
    names = model.trainable_names()
    batch = rng.standard_normal((3, GRADCHECK_CONFIG.input_leads, GRADCHECK_CONFIG.input_samples))
    labels = (rng.random((3, N_CLASSES)) < 0.5).astype(FLOAT64)

    def func(*arrays):
        model.params.update(zip(names, arrays))
        loss, grads, _ = model.loss_and_grads(batch, labels, training=True, rng=np.random.default_rng(seed + 1))
        return loss, lambda g: [grads[name] * g for name in names]

    return finite_difference_check(func, [model.params[n] for n in names], eps=NETWORK_FD_EPS,
                                   seed=seed, max_entries=max_entries)


def adjudicator_smoke() -> int:
    """Number of rule examples whose decision differs from the expected one."""
    def flags(expert=(), glasgow=(), minnesota=()):
        def vector(names):
            return [i in {CLASS_INDEX[n] for n in names} for i in range(N_CLASSES)]
        return SourceFlags(vector(expert), vector(glasgow), vector(minnesota))

    cases = [
        (flags(["RBBB"], ["RBBB"]), ExamMeasures(qrs_ms=130), "RBBB", "1a"),
        (flags(minnesota=["LBBB"]), ExamMeasures(qrs_ms=130), "LBBB", "1b"),
        (flags(["ST"]), ExamMeasures(heart_rate=95), "ST", "2a"),
        (flags(["SB"]), ExamMeasures(heart_rate=45), "SB", "3a"),
        (flags(["AF"]), ExamMeasures(sdnn=700), "AF", "3b"),
        (flags(["AF"]), ExamMeasures(sdnn=600), "AF", "4"),
        (flags(glasgow=["LBBB"], minnesota=["LBBB"]), ExamMeasures(qrs_ms=130), "LBBB", "4"),
    ]
    return sum(adjudicate(f, m)[name][1] != rule for f, m, name, rule in cases)


def scheduler_conformance() -> int:
    """Number of scripted loss sequences on which the scheduler misbehaves."""
    failures = 0
    plateau = [1.0] * 8
    drops = [i for i in range(1, len(plateau) + 1) if plateau_scheduler(plateau[:i], 1e-3) != 1e-3]
    failures += drops != [8]
    decreasing = [1.0 - 0.05 * i for i in range(15)]
    failures += any(plateau_scheduler(decreasing[:i], 1e-3) != 1e-3 for i in range(1, 16))
    return int(failures)


def init_variance_factor(seed: int = 0) -> float:
    """Worst factor by which a stage's activation variance departs from 1 at init.

    Default architecture over 1024 samples, batch statistics, no dropout.
    """
    rng = np.random.default_rng(seed)
    model = ResNet1d.build(ResNetConfig(input_samples=1024, dropout_rate=0.0), rng)
    variances = [float(out.var()) for out in model.stage_outputs(rng.standard_normal((8, 12, 1024)))]
    return max(max(variances), 1.0 / min(variances))


def _timed(
name: str, limit: float, compute: Callable[[], float], passes: Callable[[float], bool]) -> CheckResult:
    started = time.perf_counter()
    value = float(compute())
    return CheckResult(name, bool(passes(value)), value, limit, time.perf_counter() - started)


def run_selfcheck(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, func, inputs in op_gradient_cases(rng):
        results.append(_timed(
            f"grad {name}", OP_GRAD_TOLERANCE,
            lambda: finite_difference_check(func, inputs, seed=seed), lambda v: v < OP_GRAD_TOLERANCE,
        ))
    results.append(_timed(
        "grad end-to-end network", NETWORK_GRAD_TOLERANCE,
        lambda: network_gradient_error(seed), lambda v: v < NETWORK_GRAD_TOLERANCE,
    ))
    results.append(_timed(
        "initial activation variance", INIT_VARIANCE_FACTOR,
        lambda: init_variance_factor(seed), lambda v: v < INIT_VARIANCE_FACTOR,
    ))

    golden = published_report()
    results.append(CheckResult(
        "published metrics from confusion matrices", bool(golden["ok"].all()),
        float(golden["abs_error"].max()), 0.001,
    ))
    results.append(_timed("adjudicator rule examples", 0, adjudicator_smoke, lambda v: v == 0))
    results.append(_timed("plateau scheduler script", 0, scheduler_conformance, lambda v: v == 0))

    for result in results:
        if not result.passed:
            logger.error(f"Self-check failed: {result.name} ({result.value:.3g} vs limit {result.limit:.3g})")
    return results


def results_table(results: List[CheckResult]) -> pd.DataFrame:
    frame = pd.DataFrame([vars(r) for r in results])
    frame["status"] = np.where(frame["passed"], "PASS", "FAIL")
    return frame[["name", "status", "value", "limit", "seconds"]]
