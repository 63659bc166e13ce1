"""Fast internal consistency checks behind ``qtransfer selftest``."""

from __future__ import annotations

import numpy as np

from . import ansatz, baseline, readout, statevec as sv, train

PARAM_COUNTS = {("qcnn-n", 3): 45, ("qcnn-z", 3): 51, ("qcnn-g", 3): 63, ("qcnn-n", 4): 60, ("qcnn-z", 4): 68, ("qcnn-g", 4): 84}


def _random_unitary(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def check_param_counts():
    got = {k: ansatz.build_model(*k).n_params for k in PARAM_COUNTS}
    return got == PARAM_COUNTS, str(got)


def check_simulator(rng):
    n = 3
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    dense = psi.copy()
    worst = 0.0
    for _ in range(20):
        a, b = rng.choice(n, 2, replace=False)
        u = _random_unitary(rng, 4)
        psi = sv.apply_two(psi, int(a), int(b), u)
        dense = sv.embed_operator(u, (int(a), int(b)), n) @ dense
        worst = max(worst, np.max(np.abs(psi - dense)))
    return worst < 1e-12, f"max amplitude error {worst:.2e}"


def check_gradient(rng):
    spec = ansatz.build_model("qcnn-z", 3)
    params = rng.uniform(0, 2 * np.pi, spec.n_params)
    x = rng.uniform(0, np.pi, (2, spec.num_qubits))
    bits = train.target_bits(np.array([0, 1]), 2, len(spec.measured))
    _, g = train.gradients(spec, params, x, bits)
    d = rng.normal(size=spec.n_params)
    h = 1e-4
    fd = (train.batch_loss(spec, params + h * d, x, bits) - train.batch_loss(spec, params - h * d, x, bits)) / (2 * h)
    err = abs(g @ d - fd) / max(abs(fd), 1e-12)
    return err < 1e-5, f"directional relative error {err:.2e}"


def check_readout(rng):
    worst = 0.0
    for w in rng.normal(size=(200, 3)):
        u = readout.hyperplane_to_rotation(w)
        worst = max(worst, np.max(np.abs(readout.rotate_bloch(u, w / np.linalg.norm(w)) - [0, 0, 1])))
    return worst < 1e-8, f"max alignment error {worst:.2e}"


def check_baseline(rng):
    spec = baseline.build_ccnn("A", 3)
    theta = baseline.init_weights(spec, 0)
    x = rng.uniform(0, np.pi, (5, 8))
    bits = rng.integers(0, 2, (5, 1))
    _, g = baseline.loss_and_grad(spec, theta, x, bits)
    d = rng.normal(size=spec.n_params)
    h = 1e-4
    fd = (baseline.loss_and_grad(spec, theta + h * d, x, bits)[0] - baseline.loss_and_grad(spec, theta - h * d, x, bits)[0]) / (2 * h)
    err = abs(g @ d - fd) / max(abs(fd), 1e-12)
    ok = err < 1e-5 and spec.n_params == 49
    return ok, f"{spec.n_params} parameters, directional relative error {err:.2e}"


CHECKS = {
    "parameter counts": check_param_counts,
    "simulator oracle": check_simulator,
    "parameter shift": check_gradient,
    "readout rotation": check_readout,
    "classical backprop": check_baseline,
}


def run(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn() if fn is check_param_counts else fn(rng)
        out.append((name, bool(ok), detail))
    return out
