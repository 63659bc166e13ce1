import numpy as np
import pytest

from qtransfer import ansatz as az
from qtransfer import readout
from qtransfer import statevec as sv


def test_extract_bloch_identity_circuit():
    spec = az.build_model("qcnn-g", 3)
    r = readout.extract_bloch(spec, np.zeros(spec.n_params), np.zeros((3, 8)))
    assert np.allclose(r, [0, 0, 1], atol=1e-14)


def test_extract_bloch_product_state_closed_form(rng):
    """Zero parameters make every conv block a SWAP and pooling the identity, so the
    survivor ends up holding one input qubit.  Its Bloch vector is (sin x, 0, cos x)."""
    spec = az.build_model("qcnn-z", 3)
    x = rng.uniform(0, np.pi, (5, 8))
    psi = az.forward(spec, np.zeros(spec.n_params), x)
    # locate the input qubit that lands on the survivor by tracking |1> on each wire
    src = [q for q in range(8) if sv.marginal_p0(az.forward(spec, np.zeros(spec.n_params), np.eye(8)[q] * np.pi), spec.survivor) < 0.5]
    assert len(src) == 1
    r = readout.extract_bloch(spec, np.zeros(spec.n_params), x)
    xi = x[:, src[0]]
    assert np.allclose(r, np.stack([np.sin(xi), np.zeros(5), np.cos(xi)], axis=1), atol=1e-12)
    assert np.all(np.linalg.norm(sv.bloch_vector(psi, 3), axis=-1) <= 1 + 1e-10)


def test_svm_symmetric_pair():
    w, b = readout.fit_linear_svm([[0, 0, 1], [0, 0, -1]], [1, -1])
    assert np.allclose(w / np.linalg.norm(w), [0, 0, 1], atol=1e-6)
    assert abs(b) < 1e-6


def test_svm_single_class_rejected():
    with pytest.raises(ValueError):
        readout.fit_linear_svm([[0, 0, 1], [0, 1, 0]], [1, 1])


def _separable(rng, n=20, gap=0.3):
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    pts = []
    labels = []
    while len(pts) < n:
        p = rng.uniform(-1, 1, 3)
        s = p @ normal
        if abs(s) > gap / 2:
            pts.append(p)
            labels.append(1 if s > 0 else -1)
    return np.array(pts), np.array(labels)


def test_svm_separable_hinge_vanishes(rng):
    # two tight, distant clusters: the hard-margin solution is also the C = 1 optimum
    y = np.repeat([1, -1], 10)
    x = y[:, None] * np.array([0.1, -0.2, 0.8]) + rng.normal(scale=0.05, size=(20, 3))
    w, b = readout.fit_linear_svm(x, y)
    # subgradient steps leave O(1e-5); libsvm's default tolerance leaves ~1e-3 here
    assert np.maximum(0, 1 - y * (x @ w + b)).sum() < 1e-3


def _grid_normals(k=60):
    phi = np.linspace(0, 2 * np.pi, 2 * k, endpoint=False)
    th = np.arccos(np.linspace(-1, 1, k))
    p, t = np.meshgrid(phi, th)
    return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)


@pytest.mark.parametrize("seed", range(3))
def test_svm_agrees_with_grid_margin_search(seed):
    rng = np.random.default_rng(seed)
    x, y = _separable(rng)
    best = (-np.inf, None, None)
    for u in _grid_normals():
        s = x @ u
        margin = (s[y > 0].min() - s[y < 0].max()) / 2
        if margin > best[0]:
            best = (margin, u, -(s[y > 0].min() + s[y < 0].max()) / 2)
    _, u, b0 = best
    w, b = readout.fit_linear_svm(x, y)
    assert np.array_equal(np.sign(x @ w + b), np.sign(x @ u + b0))


def test_rotation_special_cases():
    assert np.allclose(readout.hyperplane_to_rotation([0, 0, 1]), np.eye(2), atol=1e-15)
    u = readout.hyperplane_to_rotation([0, 0, -1])
    assert np.allclose(u, -1j * sv.X, atol=1e-15)  # exp(-i pi X / 2)
    plus = np.array([1, 1]) / np.sqrt(2)
    r = sv.bloch_vector(readout.hyperplane_to_rotation([1, 0, 0]) @ plus, 0)
    assert np.allclose(r, [0, 0, 1], atol=1e-10)
    with pytest.raises(ValueError):
        readout.hyperplane_to_rotation([0, 0, 0])


def test_rotation_aligns_1000_normals(rng):
    worst = 0.0
    for w in rng.normal(size=(1000, 3)) * rng.uniform(0.01, 10, (1000, 1)):
        u = readout.hyperplane_to_rotation(w)
        assert sv.is_unitary(u)
        worst = max(worst, np.max(np.abs(readout.rotate_bloch(u, w / np.linalg.norm(w)) - [0, 0, 1])))
    assert worst < 1e-8


def test_rotate_bloch_matches_statevector(rng):
    psi = rng.normal(size=2) + 1j * rng.normal(size=2)
    psi /= np.linalg.norm(psi)
    u = readout.hyperplane_to_rotation(rng.normal(size=3))
    assert np.allclose(readout.rotate_bloch(u, sv.bloch_vector(psi, 0)), sv.bloch_vector(u @ psi, 0), atol=1e-12)


def test_decide_examples():
    rule = readout.DecisionRule.from_plane([0, 0, 1], 0.0)
    assert rule.decide(np.array([[0, 0, 1]]))[0] == 1
    assert rule.decide(np.array([[1, 0, 0]]))[0] == 1  # on the plane: tie goes to 1
    assert rule.decide(np.array([[0, 0, -0.2]]))[0] == 0


def test_sign_rule_equals_rotate_then_measure(rng):
    agree = 0
    for _ in range(100):
        rule = readout.DecisionRule.from_plane(rng.normal(size=3), 0.0)
        r = rng.normal(size=3)
        r *= rng.uniform(0, 1) / np.linalg.norm(r)
        agree += rule.decide(r[None])[0] == readout.classify_by_rotation(rule, r[None])[0]
    assert agree == 100


def test_classify_scale_invariant(rng):
    pts = rng.uniform(-1, 1, (50, 3))
    rule = readout.DecisionRule.from_plane(rng.normal(size=3), 0.3)
    scaled = readout.DecisionRule.from_plane(rule.w * 7.5, rule.b * 7.5)
    assert np.array_equal(rule.decide(pts), scaled.decide(pts))


def test_classify_on_circuit(rng):
    spec = az.build_model("qcnn-z", 3)
    params = rng.uniform(0, 2 * np.pi, spec.n_params)
    x = rng.uniform(0, np.pi, (6, 8))
    rule = readout.DecisionRule.from_plane([0.2, -0.5, 1.0], 0.05)
    expected = rule.decide(readout.extract_bloch(spec, params, x))
    assert np.array_equal(readout.classify(spec, params, rule, x), expected)
    d = rule.to_dict()
    assert set(d) == {"w", "b", "axis", "angle"}


def test_rule_on_non_bloch_features_has_no_rotation():
    rule = readout.DecisionRule.from_plane([2.0], -1.0)
    assert rule.rotation is None and set(rule.to_dict()) == {"w", "b"}
    assert rule.decide(np.array([[0.0], [0.5], [1.0]])).tolist() == [0, 1, 1]
