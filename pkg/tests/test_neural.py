import math

import numpy as np
import pytest

from abdlearn.abduction import abduce_all
from abdlearn.circuits import compile_formula, semantic_loss
from abdlearn.logic import Outcome, SlotSchema
from abdlearn.neural import (
    AdamState,
    ArchSpec,
    HeadGroup,
    ModelError,
    NeuralModel,
    Prediction,
    adam_step,
    backward,
    forward,
    forward_batch,
    init,
    latent_probs,
    load_checkpoint,
    save_checkpoint,
)
from abdlearn.scenarios.arith import pair_add_theory

from oracles import finite_difference

DIGITS = SlotSchema.of([("d1", range(10)), ("d2", range(10))])


def small_model(seed=0, hidden=(6,), dim=5, latent=False):
    names = [("a", range(3)), ("b", range(3)), ("c", range(4))]
    if latent:
        names.append(("op", ("plus", "minus", "times")))
    schema = SlotSchema.of(names)
    arch = ArchSpec(
        (HeadGroup("pair", ("a", "b"), dim, hidden), HeadGroup("solo", ("c",), dim, hidden)),
        ("op",) if latent else (),
        output_scale=1.0,
    )
    return init(seed, schema, arch)


def inputs(model, rng, batch=None):
    shape = lambda g: ((batch,) if batch else ()) + (len(g.slots), g.input_dim)
    return {g.name: rng.normal(size=shape(g)) for g in model.arch.groups}


# -- construction -------------------------------------------------------------------


def test_fresh_model_is_near_uniform():
    arch = ArchSpec((HeadGroup("digits", ("d1", "d2"), 784, (128,)),))
    model = init(0, DIGITS, arch)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = {"digits": (rng.random((2, 784)) < 0.3).astype(float)}
        omega = forward(model, x).omega
        assert np.all(omega > 0.5 / 10) and np.all(omega < 2 / 10)


def test_latent_head_starts_exactly_uniform():
    model = small_model(latent=True)
    assert np.array_equal(latent_probs(model)["op"], np.full(3, 1 / 3))


def test_latent_logits_five_zero_zero():
    model = small_model(latent=True)
    model.params[-1][:] = (5.0, 0.0, 0.0)
    p = latent_probs(model)["op"]
    e5 = math.exp(5)
    assert np.allclose(p, [e5 / (e5 + 2), 1 / (e5 + 2), 1 / (e5 + 2)])
    assert np.allclose(p, [0.9867, 0.0067, 0.0067], atol=1e-4)


def test_same_seed_same_model():
    a, b = small_model(seed=4), small_model(seed=4)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    c = small_model(seed=5)
    assert not all(np.array_equal(p, q) for p, q in zip(a.params, c.params))


def test_mismatched_head_width_is_rejected():
    schema = SlotSchema.of([("a", range(3)), ("c", range(4))])
    with pytest.raises(ModelError):
        init(0, schema, ArchSpec((HeadGroup("g", ("a", "c"), 5),)))
    with pytest.raises(ModelError):
        init(0, schema, ArchSpec((HeadGroup("g", ("a",), 5, width=4), HeadGroup("h", ("c",), 5))))


def test_every_slot_needs_exactly_one_head():
    schema = SlotSchema.of([("a", range(3)), ("b", range(3))])
    with pytest.raises(ModelError):
        init(0, schema, ArchSpec((HeadGroup("g", ("a",), 5),)))
    with pytest.raises(ModelError):
        init(0, schema, ArchSpec((HeadGroup("g", ("a", "b"), 5),), ("a",)))


def test_bad_input_shape():
    model = small_model()
    with pytest.raises(ModelError):
        forward(model, {"pair": np.zeros((2, 4)), "solo": np.zeros((1, 5))})


# -- forward -------------------------------------------------------------------------


def test_identity_layer_keeps_the_one_hot_argmax():
    schema = SlotSchema.of([("a", range(4))])
    arch = ArchSpec((HeadGroup("g", ("a",), 4, ()),))
    model = NeuralModel(schema, arch, [np.eye(4), np.zeros(4)])
    for j in range(4):
        x = np.eye(4)[j][None]
        pred = forward(model, x)
        e = np.exp(np.eye(4)[j])
        assert np.allclose(pred.omega, e / e.sum())
        assert pred.argmax_indices == (j,)


def test_batch_rows_equal_single_forward():
    rng = np.random.default_rng(2)
    model = small_model(latent=True)
    x = inputs(model, rng, batch=4)
    omega = forward_batch(model, x)
    for b in range(4):
        single = forward(model, {k: v[b] for k, v in x.items()}).omega
        assert np.allclose(omega[b], single)
    # every head is a distribution
    for o, n in zip(model.schema.offsets, model.schema.sizes):
        assert np.allclose(omega[:, o : o + n].sum(axis=1), 1.0)


def test_prediction_argmax_takes_first_maximum():
    schema = SlotSchema.of([("a", range(3))])
    assert Prediction(schema, [0.4, 0.4, 0.2]).argmax_indices == (0,)


# -- backward -------------------------------------------------------------------------


def test_zero_upstream_zero_gradients():
    rng = np.random.default_rng(0)
    model = small_model(latent=True)
    grads = backward(model, inputs(model, rng), np.zeros(model.schema.k))
    assert all(not g.any() for g in grads)


def test_single_linear_layer_closed_form():
    schema = SlotSchema.of([("a", range(3))])
    arch = ArchSpec((HeadGroup("g", ("a",), 4, ()),))
    rng = np.random.default_rng(1)
    model = NeuralModel(schema, arch, [rng.normal(size=(4, 3)), rng.normal(size=3)])
    x = rng.normal(size=(1, 4))
    u = rng.normal(size=3)
    p = forward(model, x).omega
    jac = np.diag(p) - np.outer(p, p)
    dz = jac @ u
    gW, gb = backward(model, x, u)
    assert np.allclose(gW, np.outer(x[0], dz))
    assert np.allclose(gb, dz)


def test_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    model = small_model(latent=True)
    assert model.n_params <= 2000
    x = inputs(model, rng)
    u = rng.normal(size=model.schema.k)
    grads = backward(model, x, u)
    for pi, p in enumerate(model.params):
        def f(v, pi=pi):
            m = model.copy()
            m.params[pi] = v.reshape(p.shape)
            return float(forward(m, x).omega @ u)

        fd = finite_difference(f, p.ravel()).reshape(p.shape)
        assert np.allclose(grads[pi], fd, rtol=1e-3, atol=1e-7)


def test_end_to_end_semantic_loss_gradient():
    # loss(theta) = -ln WMC(phi, n_theta(x)); chain rule through backward()
    phi = abduce_all(pair_add_theory(), Outcome.of("sum(9)"))
    circuit = compile_formula(phi)
    arch = ArchSpec((HeadGroup("digits", ("d1", "d2"), 12, (16,)),), output_scale=1.0)
    model = init(7, DIGITS, arch)
    assert model.n_params <= 2000
    rng = np.random.default_rng(8)
    x = {"digits": rng.normal(size=(2, 12))}
    res = semantic_loss(circuit, forward(model, x).omega)
    grads = backward(model, x, res.gradient)
    for pi, p in enumerate(model.params):
        def f(v, pi=pi):
            m = model.copy()
            m.params[pi] = v.reshape(p.shape)
            return semantic_loss(circuit, forward(m, x).omega).loss

        idx = rng.choice(p.size, size=min(p.size, 40), replace=False)
        flat = p.ravel()
        for i in idx:
            e = np.zeros_like(flat)
            e[i] = 1e-6
            num = (f(flat + e) - f(flat - e)) / 2e-6
            assert num == pytest.approx(grads[pi].ravel()[i], rel=1e-3, abs=1e-7)


def test_batched_backward_is_the_sum_of_single_ones():
    rng = np.random.default_rng(4)
    model = small_model()
    x = inputs(model, rng, batch=3)
    up = rng.normal(size=(3, model.schema.k))
    omega, acts = forward_batch(model, x, keep=True)
    total = backward(model, x, up, acts=acts)
    parts = [backward(model, {k: v[b] for k, v in x.items()}, up[b]) for b in range(3)]
    for pi in range(len(total)):
        assert np.allclose(total[pi], sum(p[pi] for p in parts))


# -- Adam ---------------------------------------------------------------------------------


def test_zero_gradient_keeps_parameters():
    model = small_model()
    before = [p.copy() for p in model.params]
    state = AdamState.for_model(model, lr=0.1)
    adam_step(model, [np.zeros_like(p) for p in model.params], state)
    assert all(np.array_equal(a, b) for a, b in zip(before, model.params))
    assert state.t == 1 and model.step == 1


def test_first_step_moves_by_lr_against_the_sign():
    model = small_model()
    before = [p.copy() for p in model.params]
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=p.shape) for p in model.params]
    adam_step(model, grads, AdamState.for_model(model, lr=0.01))
    for a, b, g in zip(before, model.params, grads):
        assert np.allclose(b - a, -0.01 * np.sign(g), atol=1e-6)


def test_adam_descends_a_quadratic():
    model = small_model(latent=True)
    target = np.array([1.0, -2.0, 0.5])
    state = AdamState.for_model(model, lr=0.02)
    losses = []
    for _ in range(100):
        z = model.params[-1]
        losses.append(float(((z - target) ** 2).sum()))
        grads = [np.zeros_like(p) for p in model.params]
        grads[-1] = 2 * (z - target)
        adam_step(model, grads, state)
    assert all(losses[i + 10] < losses[i] for i in range(len(losses) - 10))


# -- checkpoints ------------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = small_model(latent=True)
    model.step = 17
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.step == 17 and back.schema == model.schema and back.arch == model.arch
    assert all(np.array_equal(a, b) for a, b in zip(back.params, model.params))
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_model(), path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(ModelError):
        load_checkpoint(path)
    (tmp_path / "x").write_bytes(b"not a model")
    with pytest.raises(ModelError):
        load_checkpoint(tmp_path / "x")
