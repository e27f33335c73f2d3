"""Built-in release checks: membership functions, softmax, metrics, gradients.

``run_selftest(mutations=("softmax-scale",))`` swaps in a softmax that
applies a temperature in the forward pass but forgets it in the backward
pass; the gradient suite must catch it.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import UsageError
from .fuzzy import MembershipParams, membership_maps, sigmoid_membership, trapezoid_membership
from .gradcheck import check_gradients
from .metrics import compute_metrics, confusion_matrix
from .nn import Conv2d, LayerNorm, MultiHeadAttention
from .tensor import Tensor

MUTATIONS = ("softmax-scale",)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _membership_suite(rng) -> str:
    for _ in range(50):
        gray = rng.random((12, 12))
        a, b, c, d = np.sort(rng.uniform(-0.2, 1.2, 4))
        params = MembershipParams(alpha=float(rng.uniform(0.5, 40)), beta=float(rng.uniform(0, 1)),
                                  a=a, b=b, c=c, d=d)
        for m in membership_maps(gray, params)[:3]:
            if m.min() < 0 or m.max() > 1:
                raise AssertionError("membership value outside [0, 1]")
        if abs(sigmoid_membership(params.beta, params.alpha, params.beta) - 0.5) > 1e-12:
            raise AssertionError("sigmoid(beta) != 0.5")
    a, b, c, d = 0.1, 0.3, 0.7, 0.9
    grid = np.linspace(-0.5, 1.5, 10_001)
    got = trapezoid_membership(grid, a, b, c, d)
    for x, y in zip(grid, got):
        if x <= a:
            want = 0.0
        elif x <= b:
            want = (x - a) / (b - a)
        elif x <= c:
            want = 1.0
        elif x < d:
            want = (d - x) / (d - c)
        else:
            want = 0.0
        if y != want:
            raise AssertionError(f"trapezoid({x}) = {y}, expected {want}")
    return "50 random images, 10001-point trapezoid grid"


def _softmax_suite(rng) -> str:
    for _ in range(200):
        x = rng.normal(0, 5, int(rng.integers(1, 9)))
        got = T.softmax(Tensor(x)).data
        m = max(x)
        e = [math.exp(v - m) for v in x]
        want = [v / sum(e) for v in e]
        if np.max(np.abs(got - want)) > 1e-12 or abs(got.sum() - 1) > 1e-12:
            raise AssertionError(f"softmax differs from the oracle on a length-{len(x)} vector")
        shifted = T.softmax(Tensor(x + 100.0)).data
        if np.max(np.abs(shifted - got)) > 1e-12:
            raise AssertionError("softmax not shift invariant")
    return "200 random vectors against a scalar oracle"


def _metrics_suite(rng) -> str:
    if compute_metrics(np.array([[5, 1], [2, 4]])).acc != 0.75:
        raise AssertionError("[[5,1],[2,4]] accuracy != 0.75")
    labels = rng.integers(0, 3, 5000)
    preds = rng.integers(0, 3, 5000)
    cm = confusion_matrix(labels, preds, 3)
    tally = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(labels.tolist(), preds.tolist()):
        tally[t, p] += 1
    if not np.array_equal(cm, tally):
        raise AssertionError("confusion matrix differs from per-sample tally")
    if compute_metrics(cm).acc != np.trace(tally) / 5000:
        raise AssertionError("accuracy differs from tally")
    return "5000 random pairs tallied"


def _gradient_suite(rng) -> str:
    attn = MultiHeadAttention(8, 2, rng)
    ln = LayerNorm(8)
    conv = Conv2d(2, 3, 3, rng, padding=1)
    q = Tensor(rng.normal(size=(2, 3, 8)), requires_grad=True)
    src = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
    img = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = rng.normal(size=(3, 8))

    def loss():
        z = attn(ln(q), src)
        feat = T.tsum(T.mul(T.relu(conv(img)), T.relu(conv(img))))
        logits = T.matmul(T.reshape(T.tsum(z, axis=1), (2, 8)), Tensor(w.T))
        return T.cross_entropy(logits, np.array([0, 2])) + feat * 1e-3

    worst = check_gradients(loss, [q, src, attn.q.weight, attn.v.weight, ln.gain, conv.weight, img])
    if not worst < 1e-6:
        raise AssertionError(f"autodiff vs finite differences: worst relative error {worst:.2e}")
    return f"attention + layer norm + conv, worst rel. err {worst:.1e}"


SUITES = (
    ("membership", _membership_suite),
    ("softmax", _softmax_suite),
    ("metric-oracle", _metrics_suite),
    ("gradient-check", _gradient_suite),
)


def _scaled_softmax(x: Tensor, axis: int = -1) -> Tensor:
    # forward at temperature 1.5, backward as if the temperature were 1
    s = T._softmax_np(1.5 * x.data, axis)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return T._make(s, (x,), bw)


@contextlib.contextmanager
def _mutated(mutations):
    unknown = [m for m in mutations if m not in MUTATIONS]
    if unknown:
        raise UsageError(f"unknown mutation(s) {unknown}; available: {MUTATIONS}")
    original = T.softmax
    if "softmax-scale" in mutations:
        T.softmax = _scaled_softmax
    try:
        yield
    finally:
        T.softmax = original


def run_selftest(mutations=(), seed: int = 0) -> list[SuiteResult]:
    results = []
    with _mutated(tuple(mutations)):
        for name, suite in SUITES:
            rng = np.random.default_rng(seed)
            try:
                results.append(SuiteResult(name, True, suite(rng)))
            except AssertionError as exc:
                results.append(SuiteResult(name, False, str(exc)))
    return results


def format_report(results: list[SuiteResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}" for r in results]
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} suites passed")
    return "\n".join(lines)
