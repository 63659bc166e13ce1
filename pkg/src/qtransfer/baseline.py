"""Classical fully connected baselines sized to fixed parameter budgets."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .train import AdamState, TrainConfig, adam_step

log = logging.getLogger(__name__)

BUDGETS = {("A", 3): 49, ("A", 4): 185, ("B", 3): 11901, ("B", 4): 22001}
BUDGET_RTOL = 0.01

# Output of budget_search, frozen.  A halves the width every layer like the
# quantum register; B is the most uniform exact hit (smallest first-to-last
# hidden width spread).
CCNN_SHAPES = {
    ("A", 3): (8, 4, 2, 1),
    ("A", 4): (16, 8, 4, 2, 1),
    ("B", 3): (8, 116, 92, 1),
    ("B", 4): (16, 100, 100, 100, 1),
}


def count_params(widths) -> int:
    return sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))


def budget_search(n_in: int, n_hidden: int, budget: int, max_width: int = 300) -> list[tuple[int, ...]]:
    """Every non-increasing hidden-width tuple whose network hits ``budget`` exactly,
    most uniform first."""
    hits = []
    # the count is linear in the last hidden width, so solve for it directly
    for head in itertools.combinations_with_replacement(range(max_width, 0, -1), n_hidden - 1):
        prev = head[-1] if head else n_in
        fixed = count_params((n_in,) + head) + 1
        last, rem = divmod(budget - fixed, prev + 2)
        if rem == 0 and 1 <= last <= min(head[-1] if head else max_width, max_width):
            hits.append(head + (last,))
    return sorted(hits, key=lambda h: (h[0] - h[-1], h))


@dataclass(frozen=True)
class CcnnSpec:
    variant: str
    n: int
    widths: tuple[int, ...]
    budget: int

    @property
    def n_params(self) -> int:
        return count_params(self.widths)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def slices(self) -> list[tuple[slice, slice]]:
        """Flat-vector slices of (weights, bias) for each layer."""
        out, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            out.append((slice(pos, pos + a * b), slice(pos + a * b, pos + a * b + b)))
            pos += a * b + b
        return out

    def group_of_param(self) -> np.ndarray:
        owner = np.empty(self.n_params, dtype=int)
        for k, (w, b) in enumerate(self.slices()):
            owner[w] = k
            owner[b] = k
        return owner

    def freeze_mask(self, m: int) -> np.ndarray:
        """Trainable mask retraining the last ``m`` weight layers."""
        if not 0 <= m <= self.n_layers:
            raise ValueError(f"m must be in 0..{self.n_layers}, got {m}")
        return self.group_of_param() >= self.n_layers - m

    def to_dict(self) -> dict:
        return {"variant": self.variant, "n": self.n, "widths": list(self.widths), "budget": self.budget}


def build_ccnn(variant: str, n: int, out_width: int = 1) -> CcnnSpec:
    """``out_width > 1`` widens the output for multi-class code targets; the
    budget check applies to the single-output network."""
    key = (variant.upper().removeprefix("CCNN-"), n)
    if key not in CCNN_SHAPES:
        raise ValueError(f"no CCNN {variant} for n={n}")
    widths = CCNN_SHAPES[key]
    budget = BUDGETS[key]
    actual = count_params(widths)
    if abs(actual - budget) > BUDGET_RTOL * budget:
        raise AssertionError(f"CCNN-{key[0]} n={n}: {actual} params, budget {budget}")
    if actual != budget:
        log.warning("CCNN-%s n=%d uses %d parameters against a budget of %d", key[0], n, actual, budget)
    return CcnnSpec(key[0], n, widths[:-1] + (out_width,), budget)


def init_weights(spec: CcnnSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for (ws, _), a, b in zip(spec.slices(), spec.widths[:-1], spec.widths[1:]):
        lim = math.sqrt(6.0 / (a + b))
        theta[ws] = rng.uniform(-lim, lim, a * b)
    return theta


def _unpack(spec: CcnnSpec, theta):
    return [
        (theta[ws].reshape(b, a), theta[bs])
        for (ws, bs), a, b in zip(spec.slices(), spec.widths[:-1], spec.widths[1:])
    ]


def logits(spec: CcnnSpec, theta, x) -> np.ndarray:
    h = np.atleast_2d(np.asarray(x, dtype=float))
    layers = _unpack(spec, np.asarray(theta, dtype=float))
    for k, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
    return h


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss_and_grad(spec: CcnnSpec, theta, x, bits):
    """Batch-mean base-2 BCE of the sigmoid outputs, and its backprop gradient.

    Written in terms of logits, ``-[t log2 s(z) + (1-t) log2(1-s(z))] =
    (softplus(z) - t z) / ln 2``, so no clamping is needed.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    bits = np.asarray(bits, dtype=float).reshape(len(x), -1)
    layers = _unpack(spec, theta)
    acts = [x]
    h = x
    for k, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    z = acts[-1]
    batch, width = z.shape
    loss = float(np.mean(_softplus(z) - bits * z) / math.log(2))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    delta = (1 / (1 + np.exp(-z)) - bits) / (math.log(2) * batch * width)
    grad = np.zeros_like(theta)
    for k in range(len(layers) - 1, -1, -1):
        ws, bs = spec.slices()[k]
        grad[ws] = (delta.T @ acts[k]).ravel()
        grad[bs] = delta.sum(axis=0)
        if k:
            delta = (delta @ layers[k][0]) * (1 - acts[k] ** 2)
    return loss, grad


def ccnn_fit(spec: CcnnSpec, theta, x, bits, cfg: TrainConfig, m: int | None = None, epochs: int | None = None):
    """Adam on the BCE objective, retraining the last ``m`` layers (all by default)."""
    theta = np.array(theta, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    bits = np.asarray(bits, dtype=float).reshape(len(x), -1)
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    mask = spec.freeze_mask(spec.n_layers if m is None else m)
    epochs = cfg.epochs_for(n) if epochs is None else epochs
    batch = cfg.batch_for(n)
    history: list[float] = []
    if epochs == 0 or not mask.any():
        return theta, history
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.zeros(spec.n_params)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for b0 in range(0, n, batch):
            idx = order[b0 : b0 + batch]
            try:
                loss, grad = loss_and_grad(spec, theta, x[idx], bits[idx])
            except FloatingPointError:
                raise FloatingPointError(
                    f"loss became non-finite at epoch {epoch}; |theta|={np.linalg.norm(theta):.3g}"
                ) from None
            theta, opt = adam_step(theta, np.where(mask, grad, 0.0), opt, cfg, mask)
            total += loss * len(idx)
        history.append(total / n)
    return theta, history


def ccnn_classify(spec: CcnnSpec, theta, x, rule=None) -> np.ndarray:
    """Label from the output logits: a fitted linear rule if given, else sigmoid >= 1/2
    on the mean logit."""
    z = logits(spec, theta, x)
    if rule is not None:
        return rule.decide(z)
    return (z.mean(axis=1) >= 0).astype(int)
