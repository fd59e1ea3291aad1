import numpy as np
import pytest

from iatnet.basis import make_basis
from iatnet.iat import ANALYTIC, Discretized, IATLayerConfig, Sigma
from iatnet.net import (
    CKPT_HEADER,
    Affine,
    AdamState,
    Arch,
    ConfigError,
    IATActivation,
    Network,
    ScalarActivation,
    ShapeError,
    StaleTapeError,
    TrainConfig,
    TrainingDiverged,
    accuracy_sign,
    adam_step,
    grad_check,
    init_network,
    load_checkpoint,
    mse_grad,
    mse_loss,
    save_checkpoint,
    state_margin,
    stream,
    train,
)

FAMILIES = ["rect", "pwl", "pwq", "fourier", "pwl-w", "rect-w"]


def _inputs(net, n, seed=0, d_in=2):
    # keep finite differences away from pattern switches
    g = np.random.default_rng(seed)
    for _ in range(200):
        X = g.uniform(-1, 1, size=(n, d_in))
        if state_margin(net, X) > 1e-4:
            return X
    raise AssertionError("no non-degenerate inputs found")


# ---- rng / init


def test_streams_independent_and_repeatable():
    a = stream(3, "init").uniform(size=4)
    assert np.array_equal(a, stream(3, "init").uniform(size=4))
    assert not np.array_equal(a, stream(3, "labels").uniform(size=4))
    assert not np.array_equal(a, stream(4, "init").uniform(size=4))


def test_init_deterministic():
    arch = Arch(2, 1, 10, 3, "iat", "fourier", "pwq", mode="analytic")
    a, b = init_network(arch, 7), init_network(arch, 7)
    for (_, _, x), (_, _, y) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)
    c = init_network(arch, 8)
    assert not np.array_equal(a.layers[0].params["W"], c.layers[0].params["W"])


def test_init_distribution():
    net = init_network(Arch(16, 1, 64, 2, "relu"), 0)
    W = net.layers[0].params["W"]
    assert np.all(np.abs(W) <= 1 / 4) and np.max(np.abs(W)) > 0.2
    assert not np.any(net.layers[0].params["b"])


def test_init_same_weights_across_activation_kinds():
    a = init_network(Arch(2, 1, 6, 3, "relu"), 5)
    b = init_network(Arch(2, 1, 6, 3, "iat", "rect", "rect", mode="analytic"), 5)
    for (_, _, x), (_, _, y) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("kw", [dict(width=0), dict(depth=0), dict(activation="gelu"),
                                dict(mode="analytic", sigma="tanh"), dict(mode="disc", M=0)])
def test_bad_arch(kw):
    base = dict(d_in=2, d_out=1, width=4)
    base.update(kw)
    with pytest.raises(ConfigError):
        Arch(**base)


def test_layer_mismatch():
    with pytest.raises(ShapeError):
        Network([Affine(np.ones((3, 2)), np.zeros(3)), Affine(np.ones((1, 4)), np.zeros(1))])
    with pytest.raises(ShapeError):
        Affine(np.ones((3, 2)), np.zeros(2))


def test_arch_depth_one():
    net = init_network(Arch(3, 2, 5, 1), 0)
    assert len(net.layers) == 1 and isinstance(net.layers[0], Affine)


def test_iat_layer_dims():
    layer = IATActivation(IATLayerConfig(make_basis("fourier", 5, "input"), make_basis("pwl", 3, "output")))
    assert (layer.d_in, layer.d_out) == (5, 3)


# ---- forward


def test_forward_zero_weights():
    net = init_network(Arch(2, 1, 6, 3, "iat", mode="analytic"), 0)
    for _, _, p in net.parameters():
        p[...] = 0.0
    Y, _ = net.forward(np.random.default_rng(0).normal(size=(5, 2)))
    assert np.array_equal(Y, np.zeros((5, 1)))


def test_single_affine():
    W, b = np.array([[1.0, 2.0], [0.5, -1.0]]), np.array([0.1, -0.2])
    X = np.array([[1.0, 1.0], [2.0, -1.0]])
    Y, _ = Network([Affine(W, b)]).forward(X)
    np.testing.assert_allclose(Y, X @ W.T + b)


def test_forward_shape_error():
    net = init_network(Arch(3, 1, 4, 2, "relu"), 0)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        net.forward(np.zeros(3))


@pytest.mark.parametrize("mode", ["analytic", "disc"])
def test_rect_iat_equals_scalar_relu(mode):
    X = np.random.default_rng(1).uniform(-1, 1, (30, 2))
    T = np.sin(3 * X[:, :1])
    a = init_network(Arch(2, 1, 6, 3, "relu"), 3)
    b = init_network(Arch(2, 1, 6, 3, "iat", "rect", "rect", mode=mode, M=60), 3)
    Ya, ta = a.forward(X)
    Yb, tb = b.forward(X)
    assert np.max(np.abs(Ya - Yb)) < 1e-12
    ga, gb = a.backward(ta, mse_grad(Ya, T)), b.backward(tb, mse_grad(Yb, T))
    for x, y in zip(ga, gb):
        for k in x:
            assert np.max(np.abs(x[k] - y[k])) < 1e-12


# ---- backward


def test_backward_linear_regression():
    w = np.array([[0.3, -0.7]])
    net = Network([Affine(w, np.zeros(1))])
    x, y = np.array([[2.0, 1.0]]), np.array([[0.5]])
    Y, tape = net.forward(x)
    g = net.backward(tape, mse_grad(Y, y))[0]
    np.testing.assert_allclose(g["W"], 2 * (Y - y) * x)
    np.testing.assert_allclose(g["b"], 2 * (Y - y)[0])


def test_backward_zero_upstream():
    net = init_network(Arch(2, 1, 5, 3, "iat", mode="disc", M=40), 0)
    Y, tape = net.forward(np.ones((3, 2)))
    for g in net.backward(tape, np.zeros_like(Y)):
        for v in g.values():
            assert not np.any(v)


def test_stale_tape():
    net = init_network(Arch(2, 1, 4, 2, "relu"), 0)
    Y, tape = net.forward(np.ones((2, 2)))
    net.touch()
    with pytest.raises(StaleTapeError):
        net.backward(tape, np.ones_like(Y))
    other = init_network(Arch(2, 1, 4, 2, "relu"), 0)
    with pytest.raises(StaleTapeError):
        other.backward(net.forward(np.ones((2, 2)))[1], np.ones_like(Y))


def test_backward_shape_error():
    net = init_network(Arch(2, 1, 4, 2, "relu"), 0)
    Y, tape = net.forward(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        net.backward(tape, np.ones((3, 1)))


# ---- losses


def test_loss_and_accuracy_examples():
    Y = np.array([[0.3], [-1.0]])
    assert mse_loss(Y, Y) == 0.0 and accuracy_sign(Y, Y) == 1.0
    a, b = np.array([[1.0], [-1.0]]), np.array([[-1.0], [1.0]])
    assert accuracy_sign(a, b) == 0.0 and mse_loss(a, b) == 4.0
    assert accuracy_sign(np.array([[0.2], [-3.0]]), np.array([[1.0], [-1.0]])) == 1.0
    assert accuracy_sign(np.array([[0.0]]), np.array([[1.0]])) == 1.0
    with pytest.raises(ShapeError):
        mse_loss(np.zeros((2, 1)), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        accuracy_sign(np.zeros((2, 1)), np.zeros((3, 1)))


# ---- optimisers


def test_adam_zero_grad():
    p = [np.array([1.0, -2.0])]
    st = AdamState.zeros_like(p)
    adam_step(p, [np.zeros(2)], st, 0.1)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_first_steps():
    p = [np.array([0.0])]
    st = AdamState.zeros_like(p)
    adam_step(p, [np.array([1.0])], st, 0.01)
    assert p[0][0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)
    # constant gradient: bias-corrected moments stay exactly (1, 1)
    for _ in range(9):
        adam_step(p, [np.array([1.0])], st, 0.01)
    assert p[0][0] == pytest.approx(-0.1, rel=1e-7)


def test_adam_shape_check():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), 0.1)


# ---- gradient checks


def test_gradcheck_affine():
    net = init_network(Arch(3, 2, 4, 1), 0)
    X = np.random.default_rng(0).normal(size=(6, 3))
    assert grad_check(net, X, np.zeros((6, 2))) < 1e-9


def test_gradcheck_tanh():
    net = init_network(Arch(2, 1, 6, 3, "tanh"), 0)
    X = np.random.default_rng(0).normal(size=(6, 2))
    assert grad_check(net, X, np.ones((6, 1))) < 1e-7


@pytest.mark.parametrize("fam", FAMILIES)
@pytest.mark.parametrize("mode", ["analytic", "disc"])
def test_gradcheck_iat(fam, mode):
    net = init_network(Arch(2, 1, 4, 3, "iat", fam, "pwq" if fam != "rect" else "rect", mode=mode, M=48), 1)
    X = _inputs(net, 4)
    assert grad_check(net, X, np.full((4, 1), 0.3)) < 1e-5


@pytest.mark.parametrize("sigma", ["tanh", "sigmoid"])
def test_gradcheck_iat_smooth_sigma(sigma):
    net = init_network(Arch(2, 1, 5, 3, "iat", "pwl-w", "fourier", sigma, "disc", 40), 2)
    X = np.random.default_rng(2).normal(size=(5, 2))
    assert grad_check(net, X, np.ones((5, 1))) < 1e-7


@pytest.mark.parametrize("act", ["relu", "sigmoid"])
def test_gradcheck_scalar(act):
    net = init_network(Arch(2, 1, 6, 3, act), 3)
    X = _inputs(net, 6)
    assert grad_check(net, X, np.ones((6, 1))) < 1e-5


def test_gradcheck_standardize_training_mode():
    net = init_network(Arch(2, 1, 5, 3, "tanh", standardize=True), 4)
    X = np.random.default_rng(4).normal(size=(7, 2))
    assert grad_check(net, X, np.ones((7, 1)), training=True) < 1e-7
    assert grad_check(net, X, np.ones((7, 1)), training=False) < 1e-7


# ---- training


def _linear_task():
    X = np.random.default_rng(0).uniform(-1, 1, size=(64, 2))
    return X, X @ np.array([[0.8], [-1.3]]) + 0.25


def test_train_linear_adam():
    X, T = _linear_task()
    net = init_network(Arch(2, 1, 1, 1), 1)
    _, rep = train(net, (X, T), TrainConfig(lr=1e-2, epochs=500))
    assert rep.final_loss < 1e-10
    assert len(rep.loss_curve) == 500


def test_sgd_monotone_on_linear_model():
    X, T = _linear_task()
    net = init_network(Arch(2, 1, 1, 1), 2)
    _, rep = train(net, (X, T), TrainConfig(optimizer="sgd", lr=1e-3, epochs=100))
    assert np.all(np.diff(rep.loss_curve) <= 0)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr=0.0), dict(lr=-1.0), dict(optimizer="rmsprop"),
                                dict(batch_size=0), dict(loss="l1")])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_deterministic():
    X = np.random.default_rng(0).uniform(-1, 1, (40, 2))
    T = np.sin(3 * X[:, :1])
    arch = Arch(2, 1, 6, 3, "iat", "fourier", "pwq", mode="disc", M=60)
    curves = []
    for _ in range(2):
        _, rep = train(init_network(arch, 9), (X, T), TrainConfig(lr=1e-2, epochs=30, batch_size=16, seed=4))
        curves.append(rep.loss_curve)
    assert curves[0] == curves[1]


def test_train_divergence_reports_last_loss():
    X, T = _linear_task()
    net = init_network(Arch(2, 1, 1, 1), 0)
    with pytest.raises(TrainingDiverged) as info:
        train(net, (X, T * 1e3), TrainConfig(optimizer="sgd", lr=1e3, epochs=200))
    assert np.isfinite(info.value.last_finite_loss)
    assert "last finite loss" in str(info.value)


def test_train_with_frozen_patterns_keeps_patterns():
    X = np.random.default_rng(0).uniform(-1, 1, (30, 1))
    T = np.sin(2 * np.pi * X)
    pat_net = init_network(Arch(1, 1, 5, 3, "iat", "fourier", "pwq", mode="disc", M=50), 1)
    pats = pat_net.patterns(X)
    lin = init_network(pat_net.arch, 2)
    _, rep = train(lin, (X, T), TrainConfig(lr=1e-2, epochs=20), patterns=pats)
    assert len(rep.loss_curve) == 20
    with pytest.raises(ConfigError):
        train(lin, (X, T), TrainConfig(lr=1e-2, epochs=2, batch_size=4), patterns=pats)


def test_accuracy_reported_for_classification():
    from iatnet.bench import gen_memorize_task

    data = gen_memorize_task(4, 0)
    _, rep = train(init_network(Arch(2, 1, 4, 2, "relu"), 0), data, TrainConfig(epochs=3))
    assert rep.final_accuracy is not None and 0.0 <= rep.final_accuracy <= 1.0


# ---- checkpoints


@pytest.mark.parametrize("std", [False, True])
def test_checkpoint_round_trip(tmp_path, std):
    arch = Arch(2, 1, 5, 3, "iat", "pwl", "fourier", mode="analytic", standardize=std)
    net = init_network(arch, 3)
    X = np.random.default_rng(3).uniform(-1, 1, (10, 2))
    train(net, (X, np.ones((10, 1))), TrainConfig(lr=1e-2, epochs=3))
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    text = path.read_text().splitlines()
    assert text[0] == CKPT_HEADER and text[1].startswith("arch ")
    assert any(line.startswith("W ") for line in text)
    back = load_checkpoint(path)
    assert back.arch == arch
    assert np.array_equal(back(X), net(X))


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_text("hello\n")
    with pytest.raises(ConfigError):
        load_checkpoint(p)
    net = init_network(Arch(2, 1, 3, 2, "relu"), 0)
    save_checkpoint(net, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises((ConfigError, IndexError, ValueError)):
        load_checkpoint(p)


def test_patterns_reuse_matches_forward():
    net = init_network(Arch(2, 1, 6, 3, "iat", "fourier", "pwl", mode="analytic"), 0)
    X = np.random.default_rng(0).uniform(-1, 1, (8, 2))
    assert np.array_equal(net.forward(X, patterns=net.patterns(X))[0], net(X))


def test_scalar_nonrelu_has_no_pattern():
    layer = ScalarActivation("tanh", 3)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 3)), pattern=np.ones((1, 3), bool))
    assert ScalarActivation(Sigma.RELU, 3).has_pattern
    layer = IATActivation(IATLayerConfig(make_basis("pwl", 3, "input"), make_basis("pwl", 3, "output"),
                                         "tanh", Discretized(12)))
    assert not layer.has_pattern
    assert IATActivation(IATLayerConfig(make_basis("pwl", 3, "input"), make_basis("pwl", 3, "output"),
                                        "relu", ANALYTIC)).has_pattern
