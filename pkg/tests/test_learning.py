import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from widesense.datasets import GenCfg, generate
from widesense.errors import ConfigError, DataError, LabelError, ShapeError
from widesense.learning import (
    AdamState,
    Arch,
    ModelSpec,
    TrainCfg,
    adam_step,
    bce_loss,
    build_model,
    infer_modulation,
    infer_occupancy,
    masked_ce_loss,
    train_dlmc,
    train_dlwss,
)
from widesense.neuralcore import CustomPool, Dense, Network, Param, Sigmoid, numeric_grad, rel_error

TINY = {
    Arch.DLWSS: ModelSpec(Arch.DLWSS, input_len=10, bands=3, filters=(3, 2, 2), widths=(4, 3, 5)),
    Arch.WDLMC: ModelSpec(Arch.WDLMC, input_len=10, bands=3, filters=(3, 2, 2), widths=(4, 3, 5)),
    Arch.NDLMC_BASELINE: ModelSpec(Arch.NDLMC_BASELINE, input_len=8, bands=3, filters=(3, 3)),
    Arch.NDLMC_INCEPTION: ModelSpec(Arch.NDLMC_INCEPTION, input_len=8, bands=3, filters=(2, 2, 2, 1, 2, 2)),
}


def scalar_ce(z, k):
    z = np.asarray(z, dtype=float)
    m = z.max()
    return -(z[k] - m - math.log(sum(math.exp(v - m) for v in z)))


class TestBCE:
    def test_half_is_n_ln2(self):
        loss, _ = bce_loss(np.full(14, 0.5), np.array([1, 0] * 7))
        assert abs(loss - 14 * math.log(2)) < 1e-12

    def test_perfect_prediction(self):
        s = np.array([1, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1], float)
        loss, _ = bce_loss(s, s)
        assert loss <= 14 * -math.log1p(-1e-7) * (1 + 1e-9)

    @given(st.integers(0, 2**31))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(0.01, 0.99, 14)
        s = rng.integers(0, 2, 14).astype(float)
        _, g = bce_loss(p, s)
        assert rel_error(g, numeric_grad(lambda: bce_loss(p, s)[0], p, 1e-6)) < 1e-4

    def test_batch_is_mean_of_frames(self, rng):
        p = rng.uniform(0.1, 0.9, (3, 14))
        s = rng.integers(0, 2, (3, 14))
        assert bce_loss(p, s)[0] == pytest.approx(np.mean([bce_loss(p[i], s[i])[0] for i in range(3)]), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(np.zeros(3), np.zeros(4))


class TestMaskedCE:
    def test_all_masked_out(self, rng):
        loss, g = masked_ce_loss(rng.standard_normal((14, 8)), rng.integers(0, 8, 14), np.zeros(14))
        assert loss == 0.0 and not g.any()

    def test_saturated(self):
        z = np.zeros((14, 8))
        z[3, 5] = 30.0
        mask = np.zeros(14)
        mask[3] = 1
        k = np.zeros(14, int)
        k[3] = 5
        assert masked_ce_loss(z, k, mask)[0] < 1e-6

    @given(st.integers(0, 2**31))
    def test_sum_of_band_terms(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((14, 8)) * 5
        k = rng.integers(1, 8, 14)
        mask = rng.integers(0, 2, 14)
        ref = sum(scalar_ce(z[n], k[n]) for n in range(14) if mask[n])
        loss, g = masked_ce_loss(z, k, mask)
        assert abs(loss - ref) < 1e-12 * max(1.0, ref)
        assert not g[mask == 0].any()

    def test_label_range(self):
        with pytest.raises(LabelError):
            masked_ce_loss(np.zeros((2, 8)), np.array([0, 8]), np.ones(2))
        with pytest.raises(LabelError):
            masked_ce_loss(np.zeros((2, 8)), np.array([0, -1]), np.ones(2))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Param(np.array([1.0, -2.0]))
        st_ = AdamState()
        for _ in range(5):
            p.grad = np.zeros(2)
            adam_step([p], st_, TrainCfg())
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    @pytest.mark.parametrize("lr", [1e-3, 0.1, 0.5, 1.0])
    def test_first_step_on_square(self, lr):
        p = Param(np.array([1.0]))
        p.grad = 2 * p.data
        adam_step([p], AdamState(), TrainCfg(learning_rate=lr))
        assert abs(p.data[0]) < 1.0
        # bias-corrected first step is lr * g / (|g| + eps)
        assert p.data[0] == pytest.approx(1.0 - lr * 2 / (2 + 1e-7), abs=1e-15)

    def test_sgd_literal(self):
        p = Param(np.array([1.0, 3.0]))
        p.grad = np.array([0.5, -1.0])
        adam_step([p], AdamState(), TrainCfg(learning_rate=0.1, optimizer="sgd"))
        np.testing.assert_array_equal(p.data, [1.0 - 0.1 * 0.5, 3.0 + 0.1])

    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(beta1=1.0), dict(beta2=-0.1),
                                    dict(optimizer="rmsprop"), dict(batch_size=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainCfg(**kw)


@pytest.mark.parametrize("arch", list(Arch))
def test_end_to_end_gradients(arch):
    spec = TINY[arch]
    rng = np.random.default_rng(int(arch))
    net = build_model(spec, seed=int(arch), dtype=np.float64)
    for p in net.params():
        if p.data.ndim == 1:
            p.data[:] = rng.standard_normal(p.data.shape)
    x = rng.uniform(size=(2, 3, spec.input_len, 2))
    if arch == Arch.DLWSS:
        s = rng.integers(0, 2, (2, 3))
        f = lambda: bce_loss(net.forward(x), s)[0]  # noqa: E731
        _, g = bce_loss(net.forward(x), s)
    else:
        k = rng.integers(1, 8, (2, 3))
        mask = np.array([[1, 0, 1], [1, 1, 0]])
        f = lambda: masked_ce_loss(net.forward(x), k, mask)[0]  # noqa: E731
        _, g = masked_ce_loss(net.forward(x), k, mask)
    dx = net.backward(g, need_input_grad=True)
    grads = [p.grad.copy() for p in net.params()]
    assert rel_error(dx, numeric_grad(f, x, 1e-6)) < 1e-4
    for p, gp in zip(net.params(), grads):
        assert rel_error(gp, numeric_grad(f, p.data, 1e-6)) < 1e-4
    if arch != Arch.DLWSS:
        # masked-out bands receive exactly zero input gradient
        assert not dx[0, 1].any() and not dx[1, 2].any()


@pytest.fixture(scope="module")
def tiny_wss():
    return generate("DWSS", GenCfg(snrs=(20.0,)), 64, seed=11)


@pytest.fixture(scope="module")
def tiny_nmc():
    return generate("DNMC_IQ", GenCfg(snrs=(20.0,)), 64, seed=12)


# the detector memorizes quickly at a small step; the band classifier only sees
# five-sample local statistics, so it needs a larger step and many more epochs
OVERFIT_WSS = TrainCfg(learning_rate=1e-3, batch_size=8, max_epochs=60, patience=60, val_fraction=0.0)
OVERFIT_MC = TrainCfg(learning_rate=1e-2, batch_size=8, max_epochs=500, patience=500, val_fraction=0.0)


class TestTraining:
    def test_dlwss_overfit_and_smoothed_monotone(self, tiny_wss):
        spec = ModelSpec.preset(Arch.DLWSS, "desk")
        res = train_dlwss(tiny_wss, spec, OVERFIT_WSS)
        acc = np.mean(infer_occupancy(res.model, tiny_wss.x) == tiny_wss.s)
        assert acc >= 0.99
        losses = np.array([r["train_loss"] for r in res.history])
        ma = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(ma) <= 1e-9)

    def test_dlmc_overfit(self, tiny_nmc):
        spec = ModelSpec.preset(Arch.NDLMC_BASELINE, "desk")
        res = train_dlmc(tiny_nmc, spec, OVERFIT_MC)
        k = infer_modulation(res.model, tiny_nmc.x, tiny_nmc.s)
        busy = tiny_nmc.s > 0
        assert np.mean(k[busy] == tiny_nmc.k[busy]) >= 0.99

    def test_first_epoch_beats_untrained(self, tiny_wss):
        spec = ModelSpec.preset(Arch.DLWSS, "desk")
        cfg = TrainCfg(max_epochs=1, val_fraction=0.0, seed=4)
        untrained = build_model(spec, seed=int(np.random.SeedSequence(4).spawn(2)[0].generate_state(1)[0]))
        before = bce_loss(untrained.forward(tiny_wss.x), tiny_wss.s)[0]
        res = train_dlwss(tiny_wss, spec, cfg)
        assert bce_loss(res.model.forward(tiny_wss.x), tiny_wss.s)[0] < before

    def test_seeded_runs_are_bit_identical(self, tiny_nmc, tmp_path):
        spec = ModelSpec.preset(Arch.NDLMC_BASELINE, "desk")
        cfg = TrainCfg(max_epochs=3, batch_size=16, seed=9)
        a = train_dlmc(tiny_nmc, spec, cfg, history_path=tmp_path / "a.csv")
        b = train_dlmc(tiny_nmc, spec, cfg, history_path=tmp_path / "b.csv")
        assert a.model.to_bytes() == b.model.to_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,train_acc,val_acc"

    def test_all_vacant_does_not_move(self, tiny_nmc):
        ds = tiny_nmc.subset(np.arange(16))
        ds.s = np.zeros_like(ds.s)
        ds.k = np.zeros_like(ds.k)
        spec = ModelSpec.preset(Arch.NDLMC_BASELINE, "desk")
        init = build_model(spec, seed=3)
        before = init.to_bytes()
        res = train_dlmc(ds, spec, TrainCfg(max_epochs=2, batch_size=4), model=init)
        assert res.model.to_bytes() == before
        assert all(r["train_loss"] == 0.0 for r in res.history)

    def test_predicted_mask_mode_teaches_vacant(self, tiny_nmc):
        spec = ModelSpec.preset(Arch.NDLMC_BASELINE, "desk")
        res = train_dlmc(tiny_nmc, spec, OVERFIT_WSS.replace(max_epochs=30), mask_source="predicted",
                         predicted_mask=np.ones_like(tiny_nmc.s))
        k = infer_modulation(res.model, tiny_nmc.x, np.ones_like(tiny_nmc.s))
        assert np.mean(k[tiny_nmc.s == 0] == 0) > 0.9

    def test_errors(self, tiny_nmc, tiny_wss):
        with pytest.raises(DataError):
            train_dlwss(tiny_wss.subset(np.arange(0)), ModelSpec.preset(Arch.DLWSS, "desk"), TrainCfg())
        with pytest.raises(ConfigError):
            train_dlmc(tiny_nmc, ModelSpec.preset(Arch.DLWSS, "desk"), TrainCfg())
        with pytest.raises(ConfigError):
            train_dlmc(tiny_nmc, ModelSpec.preset(Arch.NDLMC_BASELINE, "desk"), TrainCfg(), mask_source="predicted")
        with pytest.raises(ShapeError):
            train_dlmc(tiny_wss, ModelSpec.preset(Arch.NDLMC_BASELINE, "desk"), TrainCfg())


class TestInference:
    def _fixed_dlwss(self, value):
        dense = Dense(1, 1, dtype=np.float64)
        dense.w.data[:] = 0
        dense.b.data[:] = value
        return Network([dense, Sigmoid()], squeeze_output=True)

    def test_threshold(self):
        x = np.zeros((14, 1, 1))
        assert infer_occupancy(self._fixed_dlwss(math.log(9)), x).tolist() == [1] * 14  # sigmoid 0.9
        assert infer_occupancy(self._fixed_dlwss(-math.log(9)), x).tolist() == [0] * 14  # sigmoid 0.1
        assert infer_occupancy(self._fixed_dlwss(0.0), x).tolist() == [1] * 14  # tie -> busy

    def test_output_length(self, tiny_wss):
        net = build_model(ModelSpec.preset(Arch.DLWSS, "desk"))
        assert infer_occupancy(net, tiny_wss.x[0]).shape == (14,)

    def test_vacant_forced_and_shift_invariance(self, rng):
        dense = Dense(8, 8, dtype=np.float64)
        dense.w.data[:] = np.eye(8)
        dense.b.data[:] = 0
        net = Network([dense, CustomPool()])
        z = rng.standard_normal((14, 1, 8))
        occ = np.array([1, 0] * 7)
        k = infer_modulation(net, z, occ)
        assert not k[occ == 0].any()
        np.testing.assert_array_equal(k[occ == 1], np.argmax(z[occ == 1, 0], axis=-1))
        np.testing.assert_array_equal(infer_modulation(net, z + 7.5, occ), k)

    def test_ties_go_low(self):
        dense = Dense(8, 8, dtype=np.float64)
        dense.w.data[:] = 0
        dense.b.data[:] = [0, 1, 3, 3, 0, 0, 0, 0]
        assert infer_modulation(Network([dense, CustomPool()]), np.zeros((1, 1, 8)), np.ones(1))[0] == 2

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            infer_modulation(Network([Dense(8, 8), CustomPool()]), np.zeros((14, 1, 8)), np.ones(13))
