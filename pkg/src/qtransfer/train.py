"""Loss, parameter-shift gradients, Adam and the QCNN training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import statevec as sv
from .ansatz import PROGRAMS, ModelSpec, Rot, encode, gate_matrices, program_unitary, run_gates, shift_generators

log = logging.getLogger(__name__)

P_CLAMP = 1e-12
# rough cap (in amplitudes) on the co-states carried through one reverse sweep
CHUNK_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs_large: int = 30
    epochs_small: int = 200
    # datasets at or below this size train full-batch with epochs_small
    small_threshold: int = 40
    seed: int = 0

    def epochs_for(self, n_samples: int) -> int:
        return self.epochs_small if n_samples <= self.small_threshold else self.epochs_large

    def batch_for(self, n_samples: int) -> int:
        return n_samples if n_samples <= self.small_threshold else self.batch_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FreezePlan:
    """``m`` retrained layers: the last ``m`` layers train, the first ``n - m`` are frozen."""

    m: int
    mask: np.ndarray = field(repr=False)

    @classmethod
    def for_model(cls, spec: ModelSpec, m: int) -> FreezePlan:
        if not 0 <= m <= spec.n_layers:
            raise ValueError(f"m must be in 0..{spec.n_layers}, got {m}")
        mask = spec.layer_of_param() >= spec.n_layers - m
        return cls(m, mask)

    @classmethod
    def all_trainable(cls, spec: ModelSpec) -> FreezePlan:
        return cls.for_model(spec, spec.n_layers)


def target_bits(labels, n_classes: int, length: int) -> np.ndarray:
    """Per-class bit targets for the measured qubits.

    Class ``c`` gets its binary index (most significant bit first, width
    ``ceil(log2 K)``) repeated cyclically to ``length`` bits.  For two classes
    every bit equals the label.
    """
    labels = np.asarray(labels, dtype=int)
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label outside 0..n_classes-1")
    width = max(1, math.ceil(math.log2(n_classes)))
    code = (labels[:, None] >> np.arange(width - 1, -1, -1)) & 1
    return code[:, np.arange(length) % width].astype(float)


def bce_loss(p, target) -> np.ndarray | float:
    """Mean over measured qubits of the base-2 binary cross-entropy."""
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)
    if p.shape != target.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {target.shape}")
    q = np.clip(p, P_CLAMP, 1 - P_CLAMP)
    loss = -np.mean(target * np.log2(q) + (1 - target) * np.log2(1 - q), axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def bce_grad_p(p, target) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.clip(p, P_CLAMP, 1 - P_CLAMP)
    inside = (p > P_CLAMP) & (p < 1 - P_CLAMP)
    g = -(target / q - (1 - target) / (1 - q)) / (p.shape[-1] * math.log(2))
    return g * inside


def measured_p0(spec: ModelSpec, state) -> np.ndarray:
    return sv.marginals_p0(state)[..., list(spec.measured)]


def _first_trainable_gate(spec: ModelSpec, mask) -> int:
    for k, g in enumerate(spec.gates):
        if mask[list(g.params)].any():
            return k
    return len(spec.gates)


def _shift_contract(spec: ModelSpec, params, final, weights, mask, start_gate: int):
    """Parameter-shift derivatives of ``sum_x weights[b, k, x] |out[b, x]|^2``.

    For a rotation step with generator ``Q`` (moved to the block output) the two
    shifted outputs are exactly ``(out -+ i S Q psi) / sqrt(2)``, where ``S`` is
    the rest of the circuit, so half their difference is
    ``Im <S^dag (w * out) | Q psi>``.  One reverse sweep carries the co-states
    ``S^dag (w * out)`` and the block-output states back gate by gate, and the
    4x4 cross moments on each gate's qubit pair give every step at once.
    Returns shape ``(B, K, P)``.
    """
    mats = gate_matrices(spec, params)
    n = spec.num_qubits
    B, K, dim = weights.shape
    out = np.zeros((B, K, spec.n_params))
    first = max(start_gate, _first_trainable_gate(spec, mask))
    chunk = max(1, CHUNK_AMPLITUDES // ((K + 1) * dim))
    gen_cache: dict[tuple, list] = {}
    for b0 in range(0, B, chunk):
        sl = slice(b0, b0 + chunk)
        psi = final[sl]
        lam = weights[sl] * psi[:, None, :]
        for k in range(len(spec.gates) - 1, first - 1, -1):
            g = spec.gates[k]
            qa, qb = g.qubits
            key = (g.kind,) + g.params
            if key not in gen_cache:
                gen_cache[key] = shift_generators(PROGRAMS[g.kind], params[list(g.params)])
            steps = [(g.params[local], coef, q) for local, coef, q in gen_cache[key] if mask[g.params[local]]]
            if steps:
                # (b, 4, rest) and (b, K, 4, rest) with the gate's pair leading
                ps = np.moveaxis(psi.reshape((-1,) + (2,) * n), (1 + qa, 1 + qb), (1, 2)).reshape(len(psi), 4, -1)
                ls = np.moveaxis(lam.reshape((-1, K) + (2,) * n), (2 + qa, 2 + qb), (2, 3)).reshape(len(psi), K, 4, -1)
                cross = ls.conj() @ np.swapaxes(ps, -1, -2)[:, None]  # (b, K, 4, 4): <lam_i | psi_j>
                qs = np.stack([q for _, _, q in steps])
                vals = np.einsum("rij,bkij->bkr", qs, cross).imag
                for r, (j, coef, _) in enumerate(steps):
                    out[sl, :, j] += coef * vals[:, :, r]
            inv = mats[k].conj().T
            psi = sv.apply_two(psi, qa, qb, inv)
            lam = sv.apply_two(lam, qa, qb, inv)
    return out


def marginal_jacobian(spec: ModelSpec, params, features, mask=None, start_state=None, start_gate: int = 0):
    """Measured-qubit probabilities and their parameter-shift Jacobian.

    Returns ``p`` of shape ``(B, T)`` and ``J`` of shape ``(B, T, P)`` where
    each rotation step contributes

        dp/dphi = (p(phi + pi/2) - p(phi - pi/2)) / 2

    summed over gate instances with the step's ``coef`` (chain rule for shared
    parameters).  The shifted circuits are not re-run; see
    :func:`_shift_contract`.  ``start_state``/``start_gate`` let callers resume
    from a cached state after frozen gates.
    """
    params = np.asarray(params, dtype=float)
    mask = np.ones(spec.n_params, bool) if mask is None else np.asarray(mask, bool)
    final = _forward_from(spec, params, features, start_state, start_gate)
    p = measured_p0(spec, final)
    table = sv.zero_bit_table(spec.num_qubits)[:, list(spec.measured)].T
    weights = np.broadcast_to(table, (len(final),) + table.shape)
    return p, _shift_contract(spec, params, final, weights, mask, start_gate)


def _forward_from(spec: ModelSpec, params, features, start_state, start_gate: int):
    psi = encode(features) if start_state is None else start_state
    if psi.ndim == 1:
        psi = psi[None]
    return run_gates(spec, gate_matrices(spec, params), psi, start_gate)


def reference_jacobian(spec: ModelSpec, params, features, mask=None):
    """Same quantity as :func:`marginal_jacobian`, by literally re-running the
    whole circuit with one rotation angle shifted at a time.  Slow."""
    params = np.asarray(params, dtype=float)
    mask = np.ones(spec.n_params, bool) if mask is None else np.asarray(mask, bool)
    x = np.atleast_2d(features)
    mats = gate_matrices(spec, params)
    psi0 = encode(x)
    p = measured_p0(spec, run_gates(spec, mats, psi0))
    jac = np.zeros(p.shape + (spec.n_params,))
    for k, g in enumerate(spec.gates):
        prog = PROGRAMS[g.kind]
        local = params[list(g.params)]
        for step_idx, step in enumerate(prog):
            if not isinstance(step, Rot) or not mask[g.params[step.param]]:
                continue
            vals = []
            for s in (math.pi / 2, -math.pi / 2):
                shifted = list(mats)
                shifted[k] = program_unitary(prog, local, shift=(step_idx, s))
                vals.append(measured_p0(spec, run_gates(spec, shifted, psi0)))
            jac[..., g.params[step.param]] += step.coef * 0.5 * (vals[0] - vals[1])
    return p, jac


def batch_loss(spec: ModelSpec, params, features, bits) -> float:
    p = measured_p0(spec, sv_forward(spec, params, features))
    return float(np.mean(bce_loss(p, bits)))


def sv_forward(spec: ModelSpec, params, features):
    return run_gates(spec, gate_matrices(spec, params), encode(np.atleast_2d(features)))


def gradients(spec: ModelSpec, params, features, bits, freeze: FreezePlan | None = None, start_state=None, start_gate=0):
    """Batch-mean loss and its parameter-shift gradient; frozen entries are exactly zero.

    The loss gradient only needs ``dL/dp . J``, so the reverse sweep carries one
    co-state per sample weighted by ``dL/dp`` instead of one per measured qubit.
    """
    params = np.asarray(params, dtype=float)
    mask = np.ones(spec.n_params, bool) if freeze is None else np.asarray(freeze.mask, bool)
    final = _forward_from(spec, params, features, start_state, start_gate)
    p = measured_p0(spec, final)
    bits = np.asarray(bits, dtype=float)
    loss = bce_loss(p, bits)
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError("non-finite loss")
    dl = bce_grad_p(p, bits)
    table = sv.zero_bit_table(spec.num_qubits)[:, list(spec.measured)]
    weights = (dl @ table.T)[:, None, :]
    grad = _shift_contract(spec, params, final, weights, mask, start_gate)[:, 0].sum(axis=0) / p.shape[0]
    return float(np.mean(loss)), np.where(mask, grad, 0.0)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig, mask=None):
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("shape mismatch in adam_step")
    mask = np.ones(params.shape, bool) if mask is None else np.asarray(mask, bool)
    t = state.t + 1
    m = np.where(mask, cfg.beta1 * state.m + (1 - cfg.beta1) * grads, state.m)
    v = np.where(mask, cfg.beta2 * state.v + (1 - cfg.beta2) * grads**2, state.v)
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    step = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    new = np.where(mask, params - step, params)
    return new, AdamState(m, v, t)


def init_params(n_params: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 2 * np.pi, n_params)


def fit(spec: ModelSpec, params, features, bits, cfg: TrainConfig, freeze: FreezePlan | None = None, epochs: int | None = None):
    """Mini-batch Adam on the BCE objective.

    Returns the final parameters and the per-epoch loss history (mean of the
    batch losses seen during the epoch).  Frozen gates at the front of the
    circuit are simulated once and cached.
    """
    params = np.array(params, dtype=float)
    x = np.atleast_2d(np.asarray(features, dtype=float))
    bits = np.asarray(bits, dtype=float)
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    freeze = freeze or FreezePlan.all_trainable(spec)
    epochs = cfg.epochs_for(n) if epochs is None else epochs
    batch = cfg.batch_for(n)
    history: list[float] = []
    if epochs == 0 or not freeze.mask.any():
        return params, history

    start = _first_trainable_gate(spec, freeze.mask)
    cached = run_gates(spec, gate_matrices(spec, params), encode(x), 0, start)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.zeros(spec.n_params)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for b0 in range(0, n, batch):
            idx = order[b0 : b0 + batch]
            try:
                loss, grad = gradients(spec, params, None, bits[idx], freeze, cached[idx], start)
            except FloatingPointError:
                raise FloatingPointError(
                    f"loss became non-finite at epoch {epoch}, batch {b0 // batch}; "
                    f"|params|={np.linalg.norm(params):.3g}"
                ) from None
            params, opt = adam_step(params, grad, opt, cfg, freeze.mask)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    return params, history
