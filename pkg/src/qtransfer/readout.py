"""Survivor-qubit readout: Bloch vectors, a linear SVM, and the alignment rotation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import statevec as sv
from .ansatz import ModelSpec, forward

SVM_ITERATIONS = 5000
SVM_C = 1.0
ROTATION_ATOL = 1e-8


@dataclass(frozen=True, eq=False)
class DecisionRule:
    w: np.ndarray
    b: float
    rotation: np.ndarray | None  # 2x2 unitary taking w/|w| to +z; None off the Bloch sphere

    def __post_init__(self):
        if not np.linalg.norm(self.w) > 0:
            raise ValueError("decision normal must be nonzero")

    @classmethod
    def from_plane(cls, w, b: float) -> DecisionRule:
        w = np.asarray(w, dtype=float)
        return cls(w, float(b), hyperplane_to_rotation(w) if w.shape == (3,) else None)

    def decide(self, points) -> np.ndarray:
        """``1`` where ``w.r + b >= 0``; ties go to label 1."""
        return (np.asarray(points) @ self.w + self.b >= 0).astype(int)

    def to_dict(self) -> dict:
        out = {"w": self.w.tolist(), "b": self.b}
        if self.rotation is not None:
            axis, angle = rotation_axis_angle(self.w)
            out.update(axis=axis.tolist(), angle=angle)
        return out


def extract_bloch(spec: ModelSpec, params, features) -> np.ndarray:
    """Bloch vectors of the survivor qubit, shape ``(B, 3)``."""
    state = forward(spec, params, np.atleast_2d(features))
    return sv.bloch_vector(state, spec.survivor)


def fit_linear_svm(points, labels, c: float = SVM_C, iterations: int = SVM_ITERATIONS):
    """Soft-margin linear SVM by full-batch subgradient descent on the primal.

    Minimizes ``|w|^2 / 2 + c * sum(hinge)`` (the intercept is not regularized).
    ``labels`` are +-1, or 0/1 which are mapped to -1/+1.  Steps follow the
    Pegasos schedule ``1 / (lam t)`` with ``w`` projected back onto the ball of
    radius ``1/sqrt(lam)`` that contains the optimum; the best iterate by
    objective value is returned, so the result is fully deterministic.
    """
    x = np.asarray(points, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("points must be (N, d) with one label each")
    if set(np.unique(y)) <= {0.0, 1.0}:
        y = 2 * y - 1
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +-1 or 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("SVM needs both classes present")
    n, d = x.shape
    # scaled objective: lam/2 |w|^2 + mean hinge, lam = 1 / (c n)
    lam = 1.0 / (c * n)
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros(d)
    b = 0.0
    best = (np.inf, w.copy(), b)
    for t in range(1, iterations + 1):
        margin = y * (x @ w + b)
        viol = margin < 1
        obj = 0.5 * lam * w @ w + np.mean(np.maximum(0.0, 1 - margin))
        if obj < best[0]:
            best = (obj, w.copy(), b)
        gw = lam * w - (y[viol] @ x[viol]) / n
        gb = -np.sum(y[viol]) / n
        eta = 1.0 / (lam * t)
        w = w - eta * gw
        b = b - eta * gb
        norm = np.linalg.norm(w)
        if norm > radius:
            w *= radius / norm
    margin = y * (x @ w + b)
    obj = 0.5 * lam * w @ w + np.mean(np.maximum(0.0, 1 - margin))
    if obj < best[0]:
        best = (obj, w, b)
    _, w, b = best
    if not np.linalg.norm(w) > 0:
        # degenerate data (e.g. all points identical): fall back to the class-mean direction
        w = x[y > 0].mean(axis=0) - x[y < 0].mean(axis=0)
        if not np.linalg.norm(w) > 0:
            w = np.eye(d)[-1]
        b = -float(w @ x.mean(axis=0))
    return w, float(b)


def rotation_axis_angle(w) -> tuple[np.ndarray, float]:
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if not norm > 0:
        raise ValueError("zero normal has no direction")
    u = w / norm
    z = np.array([0.0, 0.0, 1.0])
    angle = float(np.arccos(np.clip(u @ z, -1.0, 1.0)))
    axis = np.cross(u, z)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        # parallel (identity) or anti-parallel (half turn about x)
        return np.array([1.0, 0.0, 0.0]), (0.0 if u[2] > 0 else np.pi)
    return axis / s, angle


def hyperplane_to_rotation(w) -> np.ndarray:
    """Single-qubit unitary whose conjugation turns the Bloch direction of ``w`` into ``+z``."""
    axis, angle = rotation_axis_angle(w)
    gen = axis[0] * sv.X + axis[1] * sv.Y + axis[2] * sv.Z
    return np.cos(angle / 2) * sv.I2 - 1j * np.sin(angle / 2) * gen


def rotate_bloch(u, r) -> np.ndarray:
    """Bloch vector(s) after ``rho -> u rho u^dagger``."""
    r = np.asarray(r, dtype=float)
    rho = 0.5 * (sv.I2 + r[..., 0, None, None] * sv.X + r[..., 1, None, None] * sv.Y + r[..., 2, None, None] * sv.Z)
    out = u @ rho @ u.conj().T
    return np.stack(
        [2 * out[..., 1, 0].real, 2 * out[..., 1, 0].imag, (out[..., 0, 0] - out[..., 1, 1]).real], axis=-1
    )


def fit_rule(points, labels, c: float = SVM_C) -> DecisionRule:
    w, b = fit_linear_svm(points, labels, c)
    return DecisionRule.from_plane(w, b)


def classify(spec: ModelSpec, params, rule: DecisionRule, features) -> np.ndarray:
    return rule.decide(extract_bloch(spec, params, features))


def classify_by_rotation(rule: DecisionRule, points) -> np.ndarray:
    """Rotate each Bloch vector by the alignment unitary and read ``p0 >= 1/2``.

    Agrees with :meth:`DecisionRule.decide` whenever ``b == 0``.
    """
    rz = rotate_bloch(rule.rotation, points)[..., 2]
    p0 = (1 + rz) / 2
    return (p0 >= 0.5).astype(int)
