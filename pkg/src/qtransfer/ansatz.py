"""Two-qubit ansatz blocks and QCNN model assembly.

Every block is stored as a *program*: a time-ordered tuple of steps, each either
a fixed 4x4 gate or a Pauli rotation ``exp(-i phi P / 2)`` with
``phi = coef * theta[param]``.  Controlled rotations are split into two
commuting Pauli rotations with ``coef = +-1/2``; this keeps the two-point
parameter-shift rule exact for every step.

Wire 0 of a program is the first qubit of the pair it is placed on (the
control, for pooling blocks).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import statevec as sv


class Rot(NamedTuple):
    label: str
    param: int
    coef: float = 1.0


class Fixed(NamedTuple):
    name: str
    matrix: np.ndarray


CNOT_01 = sv.CNOT
# control on wire 1, target on wire 0
CNOT_10 = sv.CNOT[[0, 2, 1, 3]][:, [0, 2, 1, 3]]


def _euler(wire: int, first: int) -> list[Rot]:
    """Rz Ry Rz on one wire, i.e. the matrix Rz(t0) Ry(t1) Rz(t2)."""
    lab = {"Z": "ZI", "Y": "YI"} if wire == 0 else {"Z": "IZ", "Y": "IY"}
    return [Rot(lab["Z"], first + 2), Rot(lab["Y"], first + 1), Rot(lab["Z"], first)]


# General single-qubit layers around a three-CNOT entangling core; the core is
# the canonical XX+YY+ZZ interaction up to local gates, so the family covers
# SU(4) up to a global phase.
CONV_PROGRAM = tuple(
    _euler(0, 0)
    + _euler(1, 3)
    + [
        Fixed("CNOT_10", CNOT_10),
        Rot("ZI", 6),
        Rot("IY", 7),
        Fixed("CNOT_01", CNOT_01),
        Rot("IY", 8),
        Fixed("CNOT_10", CNOT_10),
    ]
    + _euler(0, 9)
    + _euler(1, 12)
)


def _controlled(axis: str, param: int, on: int) -> list[Rot]:
    # |1><1| = (I - Z)/2 and |0><0| = (I + Z)/2 on the control wire
    sign = -0.5 if on == 1 else 0.5
    return [Rot("I" + axis, param, 0.5), Rot("Z" + axis, param, sign)]


ZX_PROGRAM = tuple(_controlled("Z", 0, on=1) + _controlled("X", 1, on=0))

GEN_PROGRAM = tuple(
    _controlled("Z", 2, on=1)
    + _controlled("Y", 1, on=1)
    + _controlled("Z", 0, on=1)
    + _controlled("Z", 5, on=0)
    + _controlled("Y", 4, on=0)
    + _controlled("Z", 3, on=0)
)


def program_width(program) -> int:
    return 1 + max(s.param for s in program if isinstance(s, Rot))


def step_matrix(step, theta, delta: float = 0.0) -> np.ndarray:
    if isinstance(step, Fixed):
        return step.matrix
    return sv.pauli_rotation(step.label, step.coef * theta[step.param] + delta)


def program_unitary(program, theta, shift: tuple[int, float] | None = None) -> np.ndarray:
    """Multiply a program out.  ``shift=(k, d)`` adds ``d`` to the angle of step ``k``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (program_width(program),):
        raise ValueError(f"expected {program_width(program)} parameters, got {theta.shape}")
    u = np.eye(4, dtype=complex)
    for k, step in enumerate(program):
        d = shift[1] if shift is not None and shift[0] == k else 0.0
        u = step_matrix(step, theta, d) @ u
    return u


def shift_generators(program, theta) -> list[tuple[int, float, np.ndarray]]:
    """For each rotation step: ``(param, coef, Q)`` with ``Q = A P A^dagger``.

    ``A`` is the part of the program after the step, so shifting that step's
    angle by ``s`` turns the block output ``U psi`` into
    ``(cos(s/2) - i sin(s/2) Q) U psi``.
    """
    theta = np.asarray(theta, dtype=float)
    out = []
    after = np.eye(4, dtype=complex)
    for step in reversed(program):
        if isinstance(step, Rot):
            q = after @ sv.pauli(step.label) @ after.conj().T
            out.append((step.param, step.coef, q))
        after = after @ step_matrix(step, theta)
    out.reverse()
    return out


def conv_ansatz(theta) -> np.ndarray:
    return program_unitary(CONV_PROGRAM, theta)


def zx_pooling(theta) -> np.ndarray:
    return program_unitary(ZX_PROGRAM, theta)


def gen_pooling(theta) -> np.ndarray:
    return program_unitary(GEN_PROGRAM, theta)


class Variant(str, Enum):
    N = "qcnn-n"
    Z = "qcnn-z"
    G = "qcnn-g"

    @property
    def pool_program(self):
        return {Variant.N: None, Variant.Z: ZX_PROGRAM, Variant.G: GEN_PROGRAM}[self]

    @property
    def pool_width(self) -> int:
        prog = self.pool_program
        return 0 if prog is None else program_width(prog)


CONV_WIDTH = program_width(CONV_PROGRAM)

PROGRAMS = {"conv": CONV_PROGRAM, "zx": ZX_PROGRAM, "gen": GEN_PROGRAM}


@dataclass(frozen=True)
class GateSlot:
    kind: str  # key into PROGRAMS
    layer: int
    stage: str  # conv1 | conv2 | pool
    qubits: tuple[int, int]
    params: tuple[int, ...]  # global parameter index for each local one


@dataclass(frozen=True)
class LayerSpec:
    active: tuple[int, ...]
    conv1: tuple[tuple[int, int], ...]
    conv2: tuple[tuple[int, int], ...]
    pool: tuple[tuple[int, int], ...]  # (control, target); control is dropped
    offset: int
    width: int


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    n_layers: int
    num_qubits: int
    layers: tuple[LayerSpec, ...]
    gates: tuple[GateSlot, ...]
    survivor: int
    measured: tuple[int, ...]
    n_params: int
    shared: bool = True
    # for unshared specs: shared parameter index behind every parameter
    tie: tuple[int, ...] | None = None

    def layer_of_param(self) -> np.ndarray:
        owner = np.empty(self.n_params, dtype=int)
        for k, layer in enumerate(self.layers):
            owner[layer.offset : layer.offset + layer.width] = k
        return owner

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def build_model(variant, n: int, shared: bool = True, strict: bool = True) -> ModelSpec:
    """Wire up a ``2**n``-qubit QCNN.

    Layer over active qubits ``A``: conv on ``(A0,A1), (A2,A3), ...``, conv on the
    shifted ring ``(A1,A2), ..., (A_last,A0)``, then pooling on the first-sublayer
    pairs with the first qubit as control.  Controls leave the active set (also
    for the no-pooling variant).  ``strict=False`` admits other depths for tests.
    """
    variant = Variant(variant)
    if strict and n not in (3, 4):
        raise ValueError(f"n must be 3 or 4, got {n}")
    if n < 1:
        raise ValueError("n must be positive")
    num_qubits = 1 << n
    pool_kind = {Variant.N: None, Variant.Z: "zx", Variant.G: "gen"}[variant]
    pw = variant.pool_width

    active = tuple(range(num_qubits))
    layers, gates, tie = [], [], []
    shared_offset = 0
    offset = 0

    def take(width: int, shared_start: int) -> tuple[int, ...]:
        nonlocal offset
        idx = tuple(range(offset, offset + width))
        offset += width
        tie.extend(range(shared_start, shared_start + width))
        return idx

    for k in range(n):
        a = active
        conv1 = tuple((a[i], a[i + 1]) for i in range(0, len(a), 2))
        conv2 = tuple((a[i + 1], a[(i + 2) % len(a)]) for i in range(0, len(a), 2))
        pool = conv1
        start = offset
        if shared:
            conv_idx = take(CONV_WIDTH, shared_offset)
            pool_idx = take(pw, shared_offset + CONV_WIDTH)
        for stage, pairs in (("conv1", conv1), ("conv2", conv2)):
            for pair in pairs:
                idx = conv_idx if shared else take(CONV_WIDTH, shared_offset)
                gates.append(GateSlot("conv", k, stage, pair, idx))
        if pool_kind is not None:
            for pair in pool:
                idx = pool_idx if shared else take(pw, shared_offset + CONV_WIDTH)
                gates.append(GateSlot(pool_kind, k, "pool", pair, idx))
        layers.append(LayerSpec(a, conv1, conv2, pool, start, offset - start))
        shared_offset += CONV_WIDTH + pw
        active = tuple(t for _, t in pool)

    survivor = active[0]
    return ModelSpec(
        variant=variant,
        n_layers=n,
        num_qubits=num_qubits,
        layers=tuple(layers),
        gates=tuple(gates),
        survivor=survivor,
        measured=tuple(q for q in range(num_qubits) if q != survivor),
        n_params=offset,
        shared=shared,
        tie=None if shared else tuple(tie),
    )


def gate_matrices(spec: ModelSpec, params) -> list[np.ndarray]:
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {params.shape}")
    cache: dict[tuple[int, ...], np.ndarray] = {}
    out = []
    for g in spec.gates:
        key = (id(PROGRAMS[g.kind]),) + g.params
        if key not in cache:
            cache[key] = program_unitary(PROGRAMS[g.kind], params[list(g.params)])
        out.append(cache[key])
    return out


def encode(features) -> np.ndarray:
    """Angle encoding: ``Ry(x_i)|0>`` on qubit ``i``, batched over leading axes."""
    x = np.asarray(features, dtype=float)
    factors = np.stack([np.cos(x / 2), np.sin(x / 2)], axis=-1)
    return sv.product_state(factors)


def run_gates(spec: ModelSpec, mats, state, start: int = 0, stop: int | None = None):
    stop = len(spec.gates) if stop is None else stop
    for g, u in zip(spec.gates[start:stop], mats[start:stop]):
        state = sv.apply_two(state, g.qubits[0], g.qubits[1], u)
    return state


def forward(spec: ModelSpec, params, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != spec.num_qubits:
        raise ValueError(f"expected {spec.num_qubits} features, got {x.shape[-1]}")
    return run_gates(spec, gate_matrices(spec, params), encode(x))
