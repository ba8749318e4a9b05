import numpy as np
import pytest

from conftest import model_gradient_error
from igbeat import igdist
from igbeat.autodiff import Tape
from igbeat.backbone import (
    VARIANTS,
    BackboneConfig,
    diag_ssm_scan,
    forward,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    sequence_loss,
    zoh_discretize,
)
from igbeat.autodiff import Tensor


def small(variant, seed=0, **kw):
    kw.setdefault("model_dim", 8)
    kw.setdefault("state_dim", 4)
    return init_params(BackboneConfig(variant, **kw), np.random.default_rng(seed))


def rr(n, seed=0):
    return 0.8 + 0.05 * np.random.default_rng(seed).standard_normal(n)


def test_unknown_variant():
    with pytest.raises(ValueError):
        BackboneConfig("transformer")


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shapes_and_alignment(variant):
    p = small(variant)
    x = rr(20)
    traj = forward(x, p)
    assert len(traj) == 19
    np.testing.assert_array_equal(traj.targets, x[1:])
    batch = forward(np.stack([x, rr(20, 1)]), p)
    assert len(batch) == 2
    np.testing.assert_allclose(batch[0].mu, traj.mu, rtol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_sequence_loss_equals_distribution_nll(variant):
    p = small(variant)
    x = rr(30)
    traj = forward(x, p)
    assert float(sequence_loss(x, p).value) == pytest.approx(igdist.nll_total(traj), rel=1e-10)


@pytest.mark.parametrize("variant", VARIANTS)
def test_init_predicts_plausible_rr(variant):
    traj = forward(rr(50), small(variant, model_dim=64, state_dim=32))
    assert np.all(traj.mu > 0.3)
    assert 0.5 < np.median(traj.mu) < 1.5


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradient_matches_finite_differences(variant):
    errs = model_gradient_error(variant, T=8, model_dim=5, state_dim=2, seed=3)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("variant", VARIANTS)
def test_causal(variant):
    p = small(variant)
    x = rr(25)
    mu0, lv0 = predict(x, p)
    y = x.copy()
    y[12] += 0.3
    mu1, lv1 = predict(y, p)
    np.testing.assert_array_equal(mu0.value[:12], mu1.value[:12])
    np.testing.assert_array_equal(lv0.value[:12], lv1.value[:12])
    assert not np.array_equal(mu0.value[12:], mu1.value[12:])


def test_logvar_clipped_at_inference_and_optional():
    p = small("gru")
    p["var.b2"].value[...] = 5.0
    _, lv = predict(rr(10), p)
    assert np.all(lv.value == 1.5)
    p2 = init_params(BackboneConfig("gru", model_dim=8, clip_at_inference=False), np.random.default_rng(0))
    p2.load_state(p.state())
    _, lv2 = predict(rr(10), p2)
    assert np.all(lv2.value > 1.5)


def test_mu_floor_holds_for_extreme_inputs():
    p = small("lstm")
    p["mean.b"].value[...] = -50.0
    mu, _ = predict(rr(10), p)
    # softplus(-50) is below half an ulp of 0.3, so the floor is met with equality in float64
    assert np.all(mu.value >= 0.3)
    p["mean.b"].value[...] = -20.0
    mu, _ = predict(rr(10), p)
    assert np.all(mu.value > 0.3)


def test_zoh_discretisation_closed_form():
    log_dt = Tensor(np.log([0.1, 0.5]))
    log_neg_a = Tensor(np.log([[1.0, 2.0], [3.0, 4.0]]))
    a_bar, b_bar = zoh_discretize(log_dt, log_neg_a)
    a = -np.array([[1.0, 2.0], [3.0, 4.0]])
    dt = np.array([[0.1], [0.5]])
    np.testing.assert_allclose(a_bar.value.reshape(2, 2), np.exp(dt * a), rtol=1e-12)
    np.testing.assert_allclose(b_bar.value.reshape(2, 2), (np.exp(dt * a) - 1) / a, rtol=1e-12)


def test_diag_scan_matches_loop():
    rng = np.random.default_rng(4)
    d, n, T = 2, 3, 6
    a_bar = rng.uniform(0.2, 0.9, d * n)
    b_bar = rng.uniform(0.1, 1.0, d * n)
    c = rng.normal(size=d * n)
    dsk = rng.normal(size=d)
    u = rng.normal(size=(T, 1, d))
    ys = diag_ssm_scan([Tensor(u[t]) for t in range(T)], Tensor(a_bar.reshape(d, n)), Tensor(b_bar.reshape(d, n)),
                     Tensor(c.reshape(d, n)), Tensor(dsk))
    s = np.zeros((d, n))
    for t in range(T):
        s = a_bar.reshape(d, n) * s + b_bar.reshape(d, n) * u[t, 0][:, None]
        expect = (c.reshape(d, n) * s).sum(1) + dsk * u[t, 0]
        np.testing.assert_allclose(ys[t].value[0], expect, rtol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_checkpoint_roundtrip(tmp_path, variant):
    p = small(variant)
    save_checkpoint(tmp_path / "c.json", p, extra={"fold": "s1"})
    q, extra = load_checkpoint(tmp_path / "c.json")
    assert extra["fold"] == "s1"
    assert q.config == p.config
    x = rr(15)
    np.testing.assert_array_equal(forward(x, q).mu, forward(x, p).mu)


def test_checkpoint_rejects_foreign_json(tmp_path):
    (tmp_path / "c.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.json")


def test_training_step_reduces_loss():
    from igbeat.autodiff import Adam

    p = small("gru")
    x = rr(40)
    opt = Adam(p.tensors(), lr=1e-2)
    first = None
    for _ in range(30):
        with Tape() as tape:
            loss = sequence_loss(x, p)
        tape.backward(loss)
        opt.step()
        first = first if first is not None else float(loss.value)
    assert float(sequence_loss(x, p).value) < first


@pytest.mark.parametrize("variant", ["gru", "lstm"])
def test_fused_scan_matches_stepwise_reference(variant):
    from igbeat import backbone as bb

    p = small(variant, gate_tmax=20.0)
    width = p["block.w_h"].shape[1]
    rng = np.random.default_rng(5)
    xp = rng.normal(size=(13, 3, width))
    scan, step = (bb.gru_scan, bb._gru) if variant == "gru" else (bb.lstm_scan, bb._lstm)
    w_seed = rng.normal(size=(13, 3, p.config.model_dim))

    xt = Tensor(xp.copy(), requires_grad=True)
    p.clear_grad()
    with Tape() as tape:
        loss = bb.ad.reduce_sum(bb.ad.reshape(scan(xt, p["block.w_h"]) * w_seed, (-1,)))
    tape.backward(loss)
    fused_gx, fused_gw = xt.grad.copy(), p["block.w_h"].grad.copy()

    xs = Tensor(xp.copy(), requires_grad=True)
    p.clear_grad()
    with Tape() as tape:
        outs = step(bb.ad.unstack(xs), p, 3)
        loss_ref = bb.ad.reduce_sum(bb.ad.reshape(bb.ad.stack(outs) * w_seed, (-1,)))
    tape.backward(loss_ref)
    assert float(loss.value) == pytest.approx(float(loss_ref.value), rel=1e-13)
    np.testing.assert_allclose(fused_gx, xs.grad, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(fused_gw, p["block.w_h"].grad, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("variant", ["gru", "lstm"])
def test_chrono_gate_init(variant):
    p = small(variant, model_dim=16, gate_tmax=50.0)
    b = p["block.b"].value
    d = 16
    if variant == "gru":
        # update rate 1/(1+T) for T in [1, 49]
        assert np.all(b[:d] <= 0) and np.all(b[:d] >= -np.log(49) - 1e-12)
    else:
        np.testing.assert_allclose(b[:d], -b[d:2 * d])
        assert np.all(b[d:2 * d] >= 0)
