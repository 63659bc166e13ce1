"""Dense statevector simulation.

States are plain complex128 numpy arrays of shape ``(..., 2**n)``; any leading
axes are batch axes and every routine broadcasts over them.  Qubit 0 is the
most significant bit of the basis index, so for two qubits the amplitude of
``|q0 q1>`` sits at index ``2*q0 + q1``.

Two-qubit matrices passed to :func:`apply_two` use the same convention on the
pair: ``u[2*a + b, 2*a' + b']`` with ``a`` the bit of ``q_a`` and ``b`` the bit
of ``q_b``.

Rotations follow the half-angle convention ``R_P(theta) = exp(-i theta P / 2)``.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np

MAX_QUBITS = 16
NORM_ATOL = 1e-10
UNITARY_ATOL = 1e-8

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def pauli(label: str) -> np.ndarray:
    """Kronecker product of single-qubit Paulis, e.g. ``pauli("ZX")``."""
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


def pauli_rotation(label: str, theta: float) -> np.ndarray:
    """``exp(-i theta P / 2)`` for a Pauli string ``P``."""
    p = pauli(label)
    return np.cos(theta / 2) * np.eye(len(p)) - 1j * np.sin(theta / 2) * p


def rx(theta: float) -> np.ndarray:
    return pauli_rotation("X", theta)


def ry(theta: float) -> np.ndarray:
    return pauli_rotation("Y", theta)


def rz(theta: float) -> np.ndarray:
    return pauli_rotation("Z", theta)


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(len(u)), atol=atol, rtol=0
    )


def num_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim < 2 or 1 << n != dim:
        raise ValueError(f"state length {dim} is not a power of two")
    return n


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise ValueError(f"qubit {q} out of range for {n} qubits")


def init_state(num_qubits: int, batch: int | None = None) -> np.ndarray:
    """``|0...0>``, optionally replicated ``batch`` times along a leading axis."""
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise ValueError(f"num_qubits must be in 1..{MAX_QUBITS}, got {num_qubits}")
    shape = (1 << num_qubits,) if batch is None else (batch, 1 << num_qubits)
    state = np.zeros(shape, dtype=complex)
    state[..., 0] = 1.0
    return state


def product_state(factors: np.ndarray) -> np.ndarray:
    """Tensor product of single-qubit states.

    ``factors`` has shape ``(..., n, 2)``; factor ``i`` is placed on qubit ``i``.
    """
    factors = np.asarray(factors, dtype=complex)
    out = factors[..., 0, :]
    for i in range(1, factors.shape[-2]):
        out = (out[..., :, None] * factors[..., i, None, :]).reshape(out.shape[:-1] + (-1,))
    return out


def apply_single(state: np.ndarray, qubit: int, u: np.ndarray, check: bool = False) -> np.ndarray:
    n = num_qubits_of(state)
    _check_qubit(qubit, n)
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2) or (check and not is_unitary(u)):
        raise ValueError("expected a 2x2 unitary")
    lead = state.shape[:-1]
    s = state.reshape(lead + (1 << qubit, 2, 1 << (n - qubit - 1)))
    out = np.einsum("ij,...ajb->...aib", u, s)
    return out.reshape(state.shape)


def apply_two(
    state: np.ndarray, q_a: int, q_b: int, u: np.ndarray, check: bool = False
) -> np.ndarray:
    n = num_qubits_of(state)
    _check_qubit(q_a, n)
    _check_qubit(q_b, n)
    if q_a == q_b:
        raise ValueError("two-qubit gate needs distinct qubits")
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4) or (check and not is_unitary(u)):
        raise ValueError("expected a 4x4 unitary")
    lead = state.shape[:-1]
    k = len(lead)
    s = state.reshape(lead + (2,) * n)
    # move the pair to the last two axes, hit it with one matmul, move back
    t = np.moveaxis(s, (k + q_a, k + q_b), (-2, -1))
    shape = t.shape
    t = (t.reshape(-1, 4) @ u.T).reshape(shape)
    out = np.moveaxis(t, (-2, -1), (k + q_a, k + q_b))
    return np.ascontiguousarray(out).reshape(state.shape)


def apply_two_stack(state: np.ndarray, q_a: int, q_b: int, us: np.ndarray) -> np.ndarray:
    """Apply each of ``us`` (shape ``(R, 4, 4)``) to ``state``; result ``(R, *state.shape)``."""
    n = num_qubits_of(state)
    lead = state.shape[:-1]
    k = len(lead)
    s = state.reshape(lead + (2,) * n)
    t = np.moveaxis(s, (k + q_a, k + q_b), (-2, -1))
    shape = t.shape
    out = np.matmul(t.reshape(-1, 4), np.swapaxes(us, 1, 2)).reshape((len(us),) + shape)
    out = np.moveaxis(out, (-2, -1), (1 + k + q_a, 1 + k + q_b))
    return np.ascontiguousarray(out).reshape((len(us),) + state.shape)


@functools.lru_cache(maxsize=None)
def zero_bit_table(n: int) -> np.ndarray:
    """``table[i, q] = 1`` when qubit ``q`` reads 0 in basis state ``i``."""
    idx = np.arange(1 << n)[:, None]
    return (((idx >> (n - 1 - np.arange(n))) & 1) == 0).astype(float)


def marginals_p0(state: np.ndarray) -> np.ndarray:
    """Probability of reading ``|0>`` on every qubit; shape ``(..., n)``."""
    n = num_qubits_of(state)
    probs = state.real**2 + state.imag**2
    return probs @ zero_bit_table(n)


def marginal_p0(state: np.ndarray, qubit: int) -> np.ndarray | float:
    n = num_qubits_of(state)
    _check_qubit(qubit, n)
    probs = (state.real**2 + state.imag**2).reshape(
        state.shape[:-1] + (1 << qubit, 2, 1 << (n - qubit - 1))
    )
    p0 = probs[..., 0, :].sum(axis=(-1, -2))
    return float(p0) if np.ndim(p0) == 0 else p0


def reduced_density(state: np.ndarray, qubit: int) -> np.ndarray:
    """Single-qubit reduced density matrix, shape ``(..., 2, 2)``."""
    n = num_qubits_of(state)
    _check_qubit(qubit, n)
    s = state.reshape(state.shape[:-1] + (1 << qubit, 2, 1 << (n - qubit - 1)))
    return np.einsum("...aib,...ajb->...ij", s, s.conj())


def bloch_vector(state: np.ndarray, qubit: int) -> np.ndarray:
    """``(<X>, <Y>, <Z>)`` of one qubit; shape ``(..., 3)``."""
    rho = reduced_density(state, qubit)
    x = 2 * rho[..., 1, 0].real
    y = 2 * rho[..., 1, 0].imag
    z = (rho[..., 0, 0] - rho[..., 1, 1]).real
    return np.stack([x, y, z], axis=-1)


def norm_sq(state: np.ndarray) -> np.ndarray:
    return np.sum(state.real**2 + state.imag**2, axis=-1)


def embed_operator(u: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Full ``2**n`` matrix of ``u`` acting on ``qubits``.

    Built from Kronecker products after expanding ``u`` in the Pauli basis, so it
    shares no code with the reshape-based appliers.  Slow; small registers only.
    """
    k = len(qubits)
    u = np.asarray(u, dtype=complex)
    full = np.zeros((1 << n, 1 << n), dtype=complex)
    for labels in itertools.product("IXYZ", repeat=k):
        coeff = np.trace(pauli("".join(labels)).conj().T @ u) / (1 << k)
        if abs(coeff) < 1e-15:
            continue
        where = dict(zip(qubits, labels))
        term = np.ones((1, 1), dtype=complex)
        for q in range(n):
            term = np.kron(term, PAULI[where.get(q, "I")])
        full += coeff * term
    return full
