import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from rwmp_lab.dft import HubbardOracle, euler_lagrange_solve, gauge_fix, invert_to_ks
from rwmp_lab.ml import (FunctionalRegressor, KohnShamInverter, Layer, MLModel, ModelFunctional, TrainingSample,
                         backward, banded_mask, cost, forward, functional_derivative_backprop, input_gradient,
                         load_model, samples_to_arrays, save_model, sgd_step, train)
from rwmp_lab.statevector import RandomStream


@pytest.fixture(scope="module")
def oracle():
    return HubbardOracle(2, 1.0, 4.0, 2)


def _dimer_set(oracle, deltas):
    V = np.array([[-d, d] for d in deltas])
    E = np.array([oracle.energy(v) for v in V])
    N = np.array([oracle.density(v) for v in V])
    return V, N, E


def _numeric_param_grad(model, X, Y, h=1e-6):
    theta = model.flat()
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (cost(model.set_flat(theta + e), X, Y).value - cost(model.set_flat(theta - e), X, Y).value) / (2 * h)
    return g


def _flat(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def test_zero_depth_affine_is_linear_map():
    m = MLModel.build(3, 2, hidden=(), rng=np.random.default_rng(1))
    m.layers[0].b = np.array([0.5, -1.0])
    X = np.random.default_rng(2).normal(size=(5, 3))
    np.testing.assert_allclose(forward(m, X), X @ m.layers[0].W.T + m.layers[0].b, rtol=0, atol=0)


@pytest.mark.parametrize("act", ["tanh", "softsign", "identity"])
def test_odd_activation_zero_in_zero_out(act):
    m = MLModel.build(4, 2, hidden=(6, 5), activation=act, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(forward(m, np.zeros(4)), 0.0)


def test_forward_deterministic():
    X = np.random.default_rng(3).normal(size=(4, 3))
    a = forward(MLModel.build(3, 1, (5,), rng=np.random.default_rng(7)), X)
    b = forward(MLModel.build(3, 1, (5,), rng=np.random.default_rng(7)), X)
    assert a.tobytes() == b.tobytes()


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(MLModel.build(3, 1), np.zeros(4))


def test_layer_shape_checks():
    with pytest.raises(ValueError):
        Layer(np.zeros((2, 3)), np.zeros(3), np.ones((2, 3)))
    with pytest.raises(ValueError):
        Layer(np.zeros((2, 3)), np.zeros(2), np.ones((2, 3)), activation="relu6")


def test_banded_mask_square():
    M = banded_mask(5, 5, 1)
    expected = (np.abs(np.subtract.outer(np.arange(5), np.arange(5))) <= 1).astype(float)
    np.testing.assert_array_equal(M, expected)


def test_mask_preserved_through_training():
    rng = np.random.default_rng(0)
    m = MLModel.build(6, 1, (6, 6), bandwidth=1, rng=rng)
    masks = [l.mask.copy() for l in m.layers]
    X = rng.normal(size=(20, 6))
    Y = np.sin(X).sum(axis=1, keepdims=True)
    trained, _ = train(m, X, Y, epochs=300, batch_size=5, momentum=0.9)
    for l, mask in zip(trained.layers, masks):
        np.testing.assert_array_equal(l.mask, mask)
        assert np.all(l.W[mask == 0] == 0.0)
    assert masks[0].sum() < masks[0].size


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    m = MLModel.build(3, 2, (4, 3), rng=rng)
    for l in m.layers:
        l.b = rng.normal(size=l.b.shape)
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    g = _flat(backward(m, X, Y))
    num = _numeric_param_grad(m, X, Y)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-6


def test_linear_backward_normal_equations():
    rng = np.random.default_rng(4)
    m = MLModel.build(3, 1, (), rng=rng)
    X, Y = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
    W, b = m.layers[0].W, m.layers[0].b
    r = X @ W.T + b - Y
    (gW, gb), = backward(m, X, Y)
    np.testing.assert_allclose(gW, 2 * r.T @ X, atol=1e-12)
    np.testing.assert_allclose(gb, 2 * r.sum(axis=0), atol=1e-12)


def test_zero_residual_zero_gradient():
    m = MLModel.build(3, 1, (4,), rng=np.random.default_rng(5))
    X = np.random.default_rng(6).normal(size=(5, 3))
    assert np.all(_flat(backward(m, X, forward(m, X))) == 0.0)


def test_cost_is_sum_of_squares():
    m = MLModel.build(2, 1, (3,))
    X, Y = np.ones((4, 2)), np.zeros((4, 1))
    rep = cost(m, X, Y)
    assert rep.value == float(np.sum(rep.residuals ** 2))


def test_sgd_quadratic_geometric():
    m = MLModel([Layer(np.array([[0.0]]), np.zeros(1), np.ones((1, 1)), "identity")])
    X, Y = np.array([[1.0], [2.0]]), np.array([[3.0], [6.0]])
    values = []
    for _ in range(30):
        m, rep, _ = sgd_step(m, X, Y, 0.02)
        values.append(rep.value)
    ratios = np.array(values[1:]) / np.array(values[:-1])
    A = np.hstack([X, np.ones((2, 1))])
    lam = np.linalg.eigvalsh(2 * A.T @ A).min()
    assert np.all(ratios < 1)
    assert ratios[-1] == pytest.approx((1 - 0.02 * lam) ** 2, rel=1e-4)


def test_sgd_batch_cost_strictly_decreases():
    rng = np.random.default_rng(0)
    m = MLModel.build(3, 1, (6,), rng=rng)
    X, Y = rng.normal(size=(40, 3)), np.cos(rng.normal(size=(40, 1)))
    stream = RandomStream(1)
    accepted = 0
    for _ in range(1000):
        idx = np.array([stream.choice(np.full(40, 1 / 40)) for _ in range(8)])
        before = cost(m, X[idx], Y[idx]).value
        m, rep, _ = sgd_step(m, X[idx], Y[idx], 0.5)
        if rep.eta > 0:
            accepted += 1
            assert rep.value < before
    assert accepted > 900


def test_sgd_zero_eta_unchanged():
    m = MLModel.build(2, 1, (3,))
    out, rep, _ = sgd_step(m, np.ones((2, 2)), np.zeros((2, 1)), 0.0)
    assert out is m and rep.eta == 0.0


def test_sgd_nan_aborts():
    m = MLModel.build(2, 1, (3,))
    with pytest.raises(FloatingPointError, match="non-finite"):
        sgd_step(m, np.ones((2, 2)), np.full((2, 1), np.nan), 0.1)


def test_sgd_negative_eta():
    with pytest.raises(ValueError):
        sgd_step(MLModel.build(2, 1), np.ones((1, 2)), np.zeros((1, 1)), -0.1)


def test_train_empty():
    with pytest.raises(ValueError):
        train(MLModel.build(2, 1), np.zeros((0, 2)), np.zeros((0, 1)))


def test_train_seeded_deterministic():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(12, 2)), rng.normal(size=(12, 1))
    a, _ = train(MLModel.build(2, 1, (4,)), X, Y, epochs=50, batch_size=4, rng=RandomStream(3))
    b, _ = train(MLModel.build(2, 1, (4,)), X, Y, epochs=50, batch_size=4, rng=RandomStream(3))
    assert a.flat().tobytes() == b.flat().tobytes()


def test_memorize_three_samples(oracle):
    V, _, E = _dimer_set(oracle, [0.0, 0.5, 1.0])
    reg = FunctionalRegressor(hidden_layers=1, width=8, epochs=20000, patience=4000).fit(V, E)
    assert np.max(np.abs(reg.predict(V) - E)) < 1e-8


def test_shuffled_labels_do_not_generalize(oracle):
    deltas = np.linspace(0, 2, 50)
    V, _, E = _dimer_set(oracle, deltas)
    test = np.arange(50) % 5 == 2
    good = FunctionalRegressor(hidden_layers=2, epochs=3000, patience=500).fit(V[~test], E[~test])
    shuffled = np.random.default_rng(0).permutation(E[~test])
    bad = FunctionalRegressor(hidden_layers=2, width=32, epochs=10000).fit(V[~test], shuffled)
    train_err = np.mean(np.abs(bad.predict(V[~test]) - shuffled))
    held_bad = np.mean(np.abs(bad.predict(V[test]) - E[test]))
    held_good = np.mean(np.abs(good.predict(V[test]) - E[test]))
    assert held_bad > 5 * train_err
    assert held_bad > 10 * held_good


def test_linear_model_derivative_is_weights():
    m = MLModel.build(3, 1, (), rng=np.random.default_rng(0))
    np.testing.assert_allclose(functional_derivative_backprop(m, [0.3, -1.0, 2.0]), m.layers[0].W[0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_input_gradient_matches_numeric(seed):
    rng = np.random.default_rng(seed)
    m = MLModel.build(3, 1, (5, 4), rng=rng)
    x = rng.normal(size=3)
    d = functional_derivative_backprop(m, x)
    h = 1e-6
    num = np.array([(forward(m, x + h * e)[0] - forward(m, x - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert np.linalg.norm(d - num) / np.linalg.norm(num) < 1e-5


def test_input_gradient_batch_shape():
    m = MLModel.build(3, 2, (4,))
    assert input_gradient(m, np.zeros((5, 3))).shape == (5, 2, 3)


def test_derivative_needs_scalar_output():
    with pytest.raises(ValueError):
        functional_derivative_backprop(MLModel.build(2, 2, signature="n[v]"), [0.0, 0.0])


def test_derivative_bad_block():
    m = MLModel.build(4, 1, signature="E[n,v]")
    assert functional_derivative_backprop(m, np.zeros(4), "v").shape == (2,)
    with pytest.raises(ValueError):
        functional_derivative_backprop(m, np.zeros(4), "vs")


def _density_samples(oracle, deltas):
    V, N, E = _dimer_set(oracle, deltas)
    return [TrainingSample(v=v, n=n, E=e) for v, n, e in zip(V, N, E)]


def test_f_of_n_stationarity(oracle):
    samples = _density_samples(oracle, np.linspace(-1.5, 1.5, 31))
    X, Y, _ = samples_to_arrays(samples, "F[n]")
    reg = FunctionalRegressor(signature="F[n]", epochs=8000).fit(X, Y[:, 0])
    model = reg.to_model()
    for d in (-0.8, 0.3, 1.0):
        v = np.array([-d, d])
        n = oracle.density(v)
        resid = gauge_fix(functional_derivative_backprop(model, n) + v)
        assert np.max(np.abs(resid)) < 2e-2


def test_argmin_invariant_under_energy_shift(oracle):
    samples = _density_samples(oracle, np.linspace(-1.5, 1.5, 21))
    X, Y, _ = samples_to_arrays(samples, "F[n]")
    a = FunctionalRegressor(signature="F[n]", epochs=2000).fit(X, Y[:, 0])
    b = FunctionalRegressor(signature="F[n]", epochs=2000).fit(X, Y[:, 0] + 3.0)
    np.testing.assert_allclose(b.predict(X) - a.predict(X), 3.0, atol=1e-10)
    v = np.array([-0.4, 0.4])
    ra = euler_lagrange_solve(ModelFunctional(a.to_model()), v, 2)
    rb = euler_lagrange_solve(ModelFunctional(b.to_model()), v, 2)
    np.testing.assert_allclose(ra.density, rb.density, atol=1e-9)
    assert rb.energy - ra.energy == pytest.approx(3.0, abs=1e-9)


def test_bifunctional_matched_pairs(oracle):
    samples = _density_samples(oracle, np.linspace(-1.5, 1.5, 41))
    X, Y, _ = samples_to_arrays(samples, "E[n,v]")
    test = np.arange(41) % 4 == 1
    reg = FunctionalRegressor(signature="E[n,v]", epochs=8000).fit(X[~test], Y[~test, 0])
    assert np.max(np.abs(reg.predict(X[test]) - Y[test, 0])) < 1e-2


def test_sample_features_density_target():
    s = TrainingSample(v=np.array([-0.5, 0.5]), n=np.array([1.2, 0.8]), E=-2.0)
    x, y = s.features("F[n]")
    np.testing.assert_array_equal(x, [1.2, 0.8])
    assert y[0] == pytest.approx(-2.0 - (-0.6 + 0.4))
    x, y = s.features("E[n,v]")
    np.testing.assert_array_equal(x, [1.2, 0.8, -0.5, 0.5])


def test_sample_missing_field():
    s = TrainingSample(v=np.zeros(2), E=-1.0)
    assert s.has("E[v]") and not s.has("F[n]")
    with pytest.raises(ValueError):
        s.features("vs[v]")


@pytest.mark.parametrize("kw", [dict(source="web"), dict(weight=-1.0)])
def test_sample_validation(kw):
    with pytest.raises(ValueError):
        TrainingSample(**kw)


def test_samples_to_arrays_empty():
    with pytest.raises(ValueError):
        samples_to_arrays([], "E[v]")


def test_model_json_round_trip(tmp_path):
    m = MLModel.build(4, 1, (6, 5), bandwidth=1, rng=np.random.default_rng(9), signature="F[n]")
    m.metadata = {"n_electrons": 2, "input_min": [0.1, 0.2, 0.3, 0.4]}
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.flat().tobytes() == m.flat().tobytes()
    assert back.signature == "F[n]" and back.metadata == m.metadata
    X = np.random.default_rng(1).normal(size=(3, 4))
    assert forward(back, X).tobytes() == forward(m, X).tobytes()


def test_regressor_to_model_matches_predict(oracle):
    V, _, E = _dimer_set(oracle, np.linspace(0, 2, 12))
    reg = FunctionalRegressor(epochs=500).fit(V, E)
    np.testing.assert_allclose(forward(reg.to_model(), V)[:, 0], reg.predict(V), atol=1e-12)


def test_regressor_derivative_matches_numeric(oracle):
    V, _, E = _dimer_set(oracle, np.linspace(0, 2, 12))
    reg = FunctionalRegressor(epochs=500).fit(V, E)
    x = np.array([[-0.3, 0.4]])
    h = 1e-6
    num = [(reg.predict(x + h * e) - reg.predict(x - h * e))[0] / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(reg.derivative(x)[0], num, rtol=1e-5, atol=1e-8)


def test_regressor_manifold_and_params(oracle):
    V, _, E = _dimer_set(oracle, np.linspace(0, 1, 6))
    reg = FunctionalRegressor(epochs=50).fit(V, E)
    np.testing.assert_array_equal(reg.in_manifold([[0.0, 0.0], [-3.0, 3.0]]), [True, False])
    twin = clone(reg)
    assert twin.get_params() == reg.get_params()
    with pytest.raises(ValueError):
        reg.predict(np.zeros((1, 3)))


def test_ks_inverter_transform(oracle):
    N = np.array([oracle.density(np.array([-d, d])) for d in (0.2, 0.9)])
    vs = KohnShamInverter().fit_transform(N)
    for n, v in zip(N, vs):
        np.testing.assert_allclose(v, invert_to_ks(n, 2).v_s)


def test_model_functional_requires_density_model():
    with pytest.raises(ValueError):
        ModelFunctional(MLModel.build(2, 1, signature="E[v]"))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_set_flat_round_trip(seed):
    m = MLModel.build(3, 2, (4,), bandwidth=1, rng=np.random.default_rng(seed))
    assert m.set_flat(m.flat()).flat().tobytes() == m.flat().tobytes()
    assert m.n_parameters == int(sum(l.mask.sum() + l.b.size for l in m.layers))
