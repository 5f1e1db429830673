import numpy as np
import pytest

from splatforge.adapter import (
    AdapterPipeline,
    AdapterTrainer,
    FrozenBlock,
    ZeroConv,
    block_adapter_forward,
    branch_exchange_backward,
    branch_exchange_forward,
    load_checkpoint,
    make_stand_in_inputs,
    save_checkpoint,
)
from splatforge.adapter.decoder import decode_views
from splatforge.assets import validate
from splatforge.errors import SchemaError, SplatforgeError
from splatforge.fixtures import orbit_cameras, sphere_asset, targets_from_asset

CH = 8


@pytest.fixture(scope="module")
def toy_setup():
    cams = orbit_cameras(np.deg2rad([0, 120, 240.0]),
                         np.array([15.0, 10.0, 20.0]), 2.4, 0.7, (24, 24))
    gt = sphere_asset(cams, seed=5, radius=0.55)
    targets = targets_from_asset(gt)
    inputs = make_stand_in_inputs(CH, 2, 6, 6, 3, seed=1)
    return cams, targets, inputs


class TestZeroInitIdentity:
    def test_wrapper_identity_exact(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        y, y_p, _ = block_adapter_forward(
            pipe.block1_g, None, pipe.zc["w1g_out"], inputs["x_g"], None,
            inputs["cond"])
        assert np.abs(y_p - y).max() <= 1e-12

    def test_wrapper_identity_with_skip(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        y, y_p, _ = block_adapter_forward(
            pipe.block2_g, pipe.zc["w2g_res"], pipe.zc["w2g_out"],
            inputs["x_g"], inputs["skip_g"], inputs["cond"])
        assert np.abs(y_p - y).max() <= 1e-12

    def test_exchange_identity_exact(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        za, zb, _ = branch_exchange_forward(
            pipe.zc["x1_ag"], pipe.zc["x1_ga"], inputs["x_g"], inputs["x_a"])
        assert np.array_equal(za, inputs["x_g"])
        assert np.array_equal(zb, inputs["x_a"])

    def test_full_stack_identity_on_frozen_outputs(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        # frozen-only composition of the geometry branch
        y1, _ = pipe.block1_g.forward(inputs["x_g"], None, inputs["cond"])
        y2, _ = pipe.block2_g.forward(y1, inputs["skip_g"], inputs["cond"])
        # adapter-stack intermediate at zero init must match bitwise
        _, y1_p, _ = block_adapter_forward(
            pipe.block1_g, None, pipe.zc["w1g_out"], inputs["x_g"], None,
            inputs["cond"])
        z1g, _, _ = branch_exchange_forward(
            pipe.zc["x1_ag"], pipe.zc["x1_ga"], y1_p, y1_p * 0)
        _, y2_p, _ = block_adapter_forward(
            pipe.block2_g, pipe.zc["w2g_res"], pipe.zc["w2g_out"], z1g,
            inputs["skip_g"], inputs["cond"])
        assert np.abs(y2_p - y2).max() <= 1e-12


class TestAlgebra:
    def test_linear_zero_conv_scaling(self, toy_setup):
        # zc_out = eps * identity with zc_res zero: Y' = (1 + eps) Y
        cams, targets, inputs = toy_setup
        block = FrozenBlock.create(CH, 0, 2, seed=11)
        zc = ZeroConv.create(CH, CH)
        eps = 0.125
        zc.weight[...] = eps * np.eye(CH)
        y, y_p, _ = block_adapter_forward(block, None, zc, inputs["x_g"],
                                          None, inputs["cond"])
        assert np.allclose(y_p, (1 + eps) * y, atol=1e-12)

    def test_exchange_linear_composition(self, toy_setup):
        cams, targets, inputs = toy_setup
        zc_ab = ZeroConv.create(CH, CH)
        zc_ab.weight[...] = np.eye(CH)
        zc_ba = ZeroConv.create(CH, CH)
        ya_p, yb_p, _ = branch_exchange_forward(zc_ab, zc_ba, inputs["x_g"],
                                                inputs["x_a"])
        assert np.allclose(yb_p, inputs["x_a"] + inputs["x_g"], atol=1e-12)
        assert np.array_equal(ya_p, inputs["x_g"])

    def test_exchange_symmetry(self, toy_setup):
        cams, targets, inputs = toy_setup
        rng = np.random.default_rng(0)
        zc1 = ZeroConv(weight=rng.normal(size=(CH, CH)), bias=rng.normal(size=CH))
        zc2 = ZeroConv(weight=rng.normal(size=(CH, CH)), bias=rng.normal(size=CH))
        a_p, b_p, _ = branch_exchange_forward(zc1, zc2, inputs["x_g"],
                                              inputs["x_a"])
        b_p2, a_p2, _ = branch_exchange_forward(zc2, zc1, inputs["x_a"],
                                                inputs["x_g"])
        assert np.array_equal(a_p, a_p2)
        assert np.array_equal(b_p, b_p2)

    def test_exchange_gradcheck(self, toy_setup):
        cams, targets, inputs = toy_setup
        rng = np.random.default_rng(1)
        zc_ab = ZeroConv(weight=rng.normal(size=(CH, CH)) * 0.1,
                         bias=rng.normal(size=CH) * 0.1)
        zc_ba = ZeroConv.create(CH, CH)
        ya = inputs["x_g"]
        yb = inputs["x_a"]

        def loss(zab):
            a_p, b_p, _ = branch_exchange_forward(zab, zc_ba, ya, yb)
            return float(np.sum(b_p**2))

        a_p, b_p, cache = branch_exchange_forward(zc_ab, zc_ba, ya, yb)
        _, _, grads = branch_exchange_backward(zc_ab, zc_ba, cache,
                                               np.zeros_like(a_p), 2.0 * b_p)
        h = 1e-6
        for idx in [(0, 0), (3, 5), (7, 7)]:
            z2 = ZeroConv(weight=zc_ab.weight.copy(), bias=zc_ab.bias.copy())
            z2.weight[idx] += h
            lp = loss(z2)
            z2.weight[idx] -= 2 * h
            lm = loss(z2)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grads["zc_ab_w"][idx]) < 1e-4 * max(1, abs(fd))

    def test_shape_mismatch_rejected(self, toy_setup):
        cams, targets, inputs = toy_setup
        zc = ZeroConv.create(CH, CH)
        with pytest.raises(SplatforgeError, match="spatial"):
            branch_exchange_forward(zc, zc, inputs["x_g"],
                                    inputs["x_a"][..., :3, :])


class TestDecoder:
    def test_zero_head_gives_canonical_asset(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        asset, _ = pipe.forward(inputs["x_g"], inputs["x_a"],
                                inputs["skip_g"], inputs["skip_a"],
                                inputs["cond"], cams)
        grid = asset.views[0]
        assert np.allclose(grid.opacity, 0.5)
        assert np.allclose(grid.color, 0.5)
        assert np.allclose(grid.metallic, 0.5)
        mid_scale = np.exp(0.5 * (np.log(1e-4) + np.log(0.5)))
        assert np.allclose(grid.scale, mid_scale)
        assert validate(asset).ok

    def test_upsample_factor_and_count(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        asset, _ = pipe.forward(inputs["x_g"], inputs["x_a"],
                                inputs["skip_g"], inputs["skip_a"],
                                inputs["cond"], cams)
        assert asset.grid_shape == (24, 24)
        assert asset.primitive_count == 3 * 24 * 24

    def test_resolution_mismatch_rejected(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        bad_cams = orbit_cameras(np.deg2rad([0, 120, 240.0]),
                                 np.array([15.0, 10.0, 20.0]), 2.4, 0.7,
                                 (32, 32))
        with pytest.raises(SplatforgeError, match="upsamples"):
            pipe.forward(inputs["x_g"], inputs["x_a"], inputs["skip_g"],
                         inputs["skip_a"], inputs["cond"], bad_cams)

    def test_random_parameters_always_valid(self, toy_setup):
        cams, targets, inputs = toy_setup
        rng = np.random.default_rng(0)
        # spec property: over random parameter draws the decoded asset
        # always satisfies the primitive invariants (range proof)
        for trial in range(200):
            pipe = AdapterPipeline.create(channels=CH, seed=3)
            for p in pipe.trainable_parameters().values():
                p[...] = rng.normal(0, 2.0, p.shape)
            asset, _ = pipe.forward(inputs["x_g"], inputs["x_a"],
                                    inputs["skip_g"], inputs["skip_a"],
                                    inputs["cond"], cams)
            report = validate(asset)
            assert report.ok, f"trial {trial}: {report}"


class TestTraining:
    def test_step0_equals_canonical_asset_loss(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        trainer = AdapterTrainer(pipe, targets, cams, inputs, seed=0)
        loss_pipeline = trainer.loss_only().total
        # canonical asset: decode the frozen branch outputs directly
        y1g, _ = pipe.block1_g.forward(inputs["x_g"], None, inputs["cond"])
        y2g, _ = pipe.block2_g.forward(y1g, inputs["skip_g"], inputs["cond"])
        y1a, _ = pipe.block1_a.forward(inputs["x_a"], None, inputs["cond"])
        y2a, _ = pipe.block2_a.forward(y1a, inputs["skip_a"], inputs["cond"])
        asset, _ = decode_views(pipe.decoder,
                                np.concatenate([y2g, y2a], axis=1), cams)
        ref = trainer._losses(asset, np.full(3, 0.5), 0, with_grads=False)[0]
        assert loss_pipeline == pytest.approx(ref.total, rel=1e-12)

    def test_theta_checksum_stable_across_steps(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        trainer = AdapterTrainer(pipe, targets, cams, inputs, seed=0)
        theta = pipe.frozen_checksum()
        for it in range(5):
            trainer.step(it)
        assert pipe.frozen_checksum() == theta

    def test_gradients_match_finite_differences(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        rng = np.random.default_rng(7)
        base = pipe.trainable_parameters()
        for p in base.values():
            p += rng.normal(0, 0.05, p.shape)
        trainer = AdapterTrainer(pipe, targets, cams, inputs, seed=0)
        bg = np.full(3, 0.5)
        asset, cache = pipe.forward(inputs["x_g"], inputs["x_a"],
                                    inputs["skip_g"], inputs["skip_a"],
                                    inputs["cond"], cams)
        _, render_grads = trainer._losses(asset, bg, 0)
        grads = pipe.backward(cache, render_grads)

        def loss_of(pipeline):
            a, _ = pipeline.forward(inputs["x_g"], inputs["x_a"],
                                    inputs["skip_g"], inputs["skip_a"],
                                    inputs["cond"], cams)
            t = AdapterTrainer(pipeline, targets, cams, inputs, seed=0)
            return t._losses(a, bg, 0, with_grads=False)[0].total

        h = 1e-6
        for name, idx in [("w1g_out_w", (2, 3)), ("x2_ga_w", (1, 6)),
                          ("dec_head_weight", (9, 1)), ("w2a_res_b", (4,))]:
            p2 = AdapterPipeline.create(channels=CH, seed=3)
            for k, p in p2.trainable_parameters().items():
                p[...] = base[k]
            p2.trainable_parameters()[name][idx] += h
            lp = loss_of(p2)
            p2.trainable_parameters()[name][idx] -= 2 * h
            lm = loss_of(p2)
            fd = (lp - lm) / (2 * h)
            an = grads[name][idx]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-9) < 1e-4, (name, idx)

    @pytest.mark.slow
    def test_500_step_baseline_halves_loss(self, toy_setup):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        trainer = AdapterTrainer(pipe, targets, cams, inputs, seed=0,
                                 learning_rate=2e-3)
        theta = pipe.frozen_checksum()
        history = trainer.run(500)
        assert history[-1].total <= 0.5 * history[0].total
        assert pipe.frozen_checksum() == theta

    def test_checkpoint_round_trip_and_checksum_guard(self, toy_setup,
                                                      tmp_path):
        cams, targets, inputs = toy_setup
        pipe = AdapterPipeline.create(channels=CH, seed=3)
        trainer = AdapterTrainer(pipe, targets, cams, inputs, seed=0)
        for it in range(3):
            trainer.step(it)
        save_checkpoint(tmp_path / "adapter.ckpt", pipe)

        fresh = AdapterPipeline.create(channels=CH, seed=3)
        load_checkpoint(tmp_path / "adapter.ckpt", fresh)
        for k, v in pipe.trainable_parameters().items():
            assert np.array_equal(fresh.trainable_parameters()[k], v)

        other = AdapterPipeline.create(channels=CH, seed=99)
        with pytest.raises(SchemaError, match="frozen"):
            load_checkpoint(tmp_path / "adapter.ckpt", other)
