import numpy as np
import pytest

from splatforge.errors import SchemaError, ShadingError
from splatforge.shading.brdf import sample_dfg
from splatforge.shading.deferred import ShadeInputs, shade_deferred
from splatforge.shading.environment import (
    EnvironmentLight,
    PrefilterParams,
    cube_sample,
    cube_sample_grad,
    cube_texel_dirs,
    equirect_sample,
    equirect_sample_grad,
    equirect_solid_angles,
    equirect_texel_dirs,
    load_light_cache,
    prefilter,
    rotate_environment,
    save_light_cache,
)
from splatforge.shading.montecarlo import mc_reference

FAST_PARAMS = PrefilterParams(cube_res=32, spec_samples=512, lut_samples=512)


def lowfreq_env(seed, h=16, w=32):
    rng = np.random.default_rng(seed)
    dirs = equirect_texel_dirs(h, w)
    base = 0.4 + 0.3 * dirs[..., 2] + 0.2 * np.maximum(dirs[..., 0], 0)
    tint = np.array([1.0, 0.9, 0.8]) + 0.2 * rng.random(3)
    return np.clip(base[..., None] * tint, 0.01, None)


@pytest.fixture(scope="module")
def unit_light():
    return prefilter(np.ones((16, 32, 3)), FAST_PARAMS)


@pytest.fixture(scope="module")
def gradient_light():
    return prefilter(lowfreq_env(5), FAST_PARAMS)


class TestSamplers:
    def test_equirect_sample_at_texel_centers(self):
        rng = np.random.default_rng(0)
        env = rng.uniform(0, 2, (8, 16, 3))
        dirs = equirect_texel_dirs(8, 16).reshape(-1, 3)
        got = equirect_sample(env, dirs)
        assert np.allclose(got, env.reshape(-1, 3), atol=1e-12)

    def test_equirect_solid_angles_sum_to_sphere(self):
        # midpoint quadrature of sin(theta): O(1/h^2) discretization error
        total = equirect_solid_angles(32, 64).sum()
        assert abs(total - 4 * np.pi) / (4 * np.pi) < 1e-3

    def test_equirect_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        env = rng.uniform(0, 2, (16, 32, 3))
        d = rng.normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        d = d[np.abs(d[:, 2]) < 0.9]  # stay away from the poles
        val, grad = equirect_sample_grad(env, d)
        h = 1e-7
        for i in range(len(d)):
            for k in range(3):
                dp = d[i].copy()
                dp[k] += h
                vp = equirect_sample(env, dp.reshape(1, 3))[0]
                dp[k] -= 2 * h
                vm = equirect_sample(env, dp.reshape(1, 3))[0]
                fd = (vp - vm) / (2 * h)
                if np.max(np.abs(fd)) < 1e-9:
                    continue
                assert np.max(np.abs(fd - grad[i, :, k])) < 2e-3 * max(
                    1.0, np.max(np.abs(fd)))

    def test_cube_sample_at_texel_centers(self):
        rng = np.random.default_rng(2)
        faces = rng.uniform(0, 1, (6, 8, 8, 3))
        dirs = cube_texel_dirs(8)
        got = cube_sample(faces, dirs.reshape(-1, 3)).reshape(6, 8, 8, 3)
        assert np.allclose(got, faces, atol=1e-12)

    def test_cube_gradient_matches_fd(self):
        rng = np.random.default_rng(3)
        faces = rng.uniform(0, 1, (6, 16, 16, 3))
        d = rng.normal(size=(30, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        # keep away from face seams where the clamped lookup has kinks
        face_mag = np.sort(np.abs(d), axis=-1)
        d = d[face_mag[:, 2] > 1.3 * face_mag[:, 1]]
        val, grad = cube_sample_grad(faces, d)
        h = 1e-7
        for i in range(len(d)):
            for k in range(3):
                dp = d[i].copy()
                dp[k] += h
                vp = cube_sample(faces, dp.reshape(1, 3))[0]
                dp[k] -= 2 * h
                vm = cube_sample(faces, dp.reshape(1, 3))[0]
                fd = (vp - vm) / (2 * h)
                if np.max(np.abs(fd)) < 1e-9:
                    continue
                assert np.max(np.abs(fd - grad[i, :, k])) < 2e-3 * max(
                    1.0, np.max(np.abs(fd)))


class TestPrefilter:
    def test_constant_env_constant_irradiance(self, unit_light):
        irr = unit_light.irradiance_map
        assert np.max(np.abs(irr - 1.0)) < 0.01

    def test_dfg_limits(self, unit_light):
        ab = sample_dfg(unit_light.dfg_lut, np.array([1.0]), np.array([0.0]))[0]
        assert abs(ab[0] - 1.0) < 0.02
        assert abs(ab[1]) < 0.02
        assert unit_light.dfg_lut.min() >= 0.0
        assert unit_light.dfg_lut.max() <= 1.1

    def test_bright_texel_concentrates_then_diffuses(self):
        env = np.full((16, 32, 3), 0.05)
        env[4, 10] = 60.0
        light = prefilter(env, FAST_PARAMS)
        peak_dir = equirect_texel_dirs(16, 32)[4, 10]
        orth = np.cross(peak_dir, [0.0, 0.0, 1.0])
        orth /= np.linalg.norm(orth)
        mid = peak_dir + orth
        mid /= np.linalg.norm(mid)
        sharp = cube_sample(light.specular_mips[0], peak_dir.reshape(1, 3))[0]
        sharp_off = cube_sample(light.specular_mips[0], mid.reshape(1, 3))[0]
        assert sharp[0] > 30.0 and sharp_off[0] < 1.0
        # roughest mip approaches the diffused limit: much flatter
        rough = cube_sample(light.specular_mips[-1], peak_dir.reshape(1, 3))[0]
        rough_off = cube_sample(light.specular_mips[-1], mid.reshape(1, 3))[0]
        assert rough[0] < sharp[0] * 0.2
        assert rough_off[0] > 5.0 * sharp_off[0]

    def test_rough_mip_matches_bruteforce_prefilter(self):
        # 8192-sample stochastic integration of the same kernel, one texel
        from splatforge.shading.brdf import ggx_sample_halfvector

        env = lowfreq_env(7)
        light = prefilter(env, FAST_PARAMS)
        k = 2
        r = light.mip_roughness[k]
        size = light.specular_mips[k].shape[1]
        dirs = cube_texel_dirs(size)
        target = dirs[3, size // 2, size // 3]
        mine = cube_sample(light.specular_mips[k], target.reshape(1, 3))[0]
        rng = np.random.default_rng(0)
        alpha = max(r * r, 1e-4)
        up = np.array([0.0, 0.0, 1.0]) if abs(target[2]) < 0.999 else np.array(
            [1.0, 0.0, 0.0])
        t1 = np.cross(up, target)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(target, t1)
        hl = ggx_sample_halfvector(rng.random((8192, 2)), alpha)
        hw = hl[:, 0, None] * t1 + hl[:, 1, None] * t2 + hl[:, 2, None] * target
        vh = hw @ target
        l = 2 * vh[:, None] * hw - target
        nl = l @ target
        keep = nl > 0
        li = equirect_sample(env, l[keep])
        ref = (li * nl[keep, None]).sum(0) / nl[keep].sum()
        assert np.max(np.abs(mine - ref)) / ref.max() < 0.05

    def test_invalid_texels_rejected_with_coordinates(self):
        env = np.ones((8, 16, 3))
        env[3, 7, 1] = np.nan
        with pytest.raises(ShadingError, match="row 3, col 7"):
            prefilter(env, FAST_PARAMS)
        env = np.ones((8, 16, 3))
        env[2, 5, 0] = -0.5
        with pytest.raises(ShadingError, match="row 2, col 5"):
            prefilter(env, FAST_PARAMS)

    def test_cache_round_trip(self, tmp_path, gradient_light):
        save_light_cache(tmp_path / "l.iblz", gradient_light)
        back = load_light_cache(tmp_path / "l.iblz")
        assert back.content_hash == gradient_light.content_hash
        assert np.array_equal(back.irradiance_map, gradient_light.irradiance_map)
        for a, b in zip(back.specular_mips, gradient_light.specular_mips):
            assert np.array_equal(a, b)

    def test_cache_rejects_tampering(self, tmp_path, gradient_light):
        save_light_cache(tmp_path / "l.iblz", gradient_light)
        raw = bytearray((tmp_path / "l.iblz").read_bytes())
        raw[-16] ^= 0xFF
        (tmp_path / "l.iblz").write_bytes(bytes(raw))
        with pytest.raises(SchemaError, match="hash"):
            load_light_cache(tmp_path / "l.iblz")


class TestShadeDeferred:
    def test_furnace(self, unit_light):
        rng = np.random.default_rng(0)
        nrm = rng.normal(size=(8, 8, 3))
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        inputs = ShadeInputs(
            normal=nrm, view_dir=nrm.copy(), albedo=np.ones((8, 8, 3)),
            metallic=np.zeros((8, 8)), roughness=rng.uniform(0.05, 1, (8, 8)),
            alpha=np.ones((8, 8)),
        )
        out, _ = shade_deferred(inputs, unit_light)
        assert np.max(np.abs(out - 1.0)) < 0.02

    def test_mirror_reflects_environment(self):
        env = np.full((16, 32, 3), 0.1)
        env[4, 10] = [50.0, 40.0, 30.0]
        light = prefilter(env, FAST_PARAMS)
        n = np.array([[[0.0, 0.0, 1.0]]])
        v = np.array([[[0.3, 0.2, 0.93]]])
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        inputs = ShadeInputs(
            normal=n, view_dir=v, albedo=np.ones((1, 1, 3)),
            metallic=np.ones((1, 1)), roughness=np.zeros((1, 1)),
            alpha=np.ones((1, 1)),
        )
        out, _ = shade_deferred(inputs, light)
        refl = 2 * np.einsum("hwc,hwc->hw", n, v)[..., None] * n - v
        direct = equirect_sample(env, refl.reshape(-1, 3))[0]
        assert np.max(np.abs(out[0, 0] - direct)) / direct.max() < 0.05

    def test_background_passthrough(self, unit_light):
        rng = np.random.default_rng(1)
        bg = rng.uniform(0, 1, (6, 6, 3))
        inputs = ShadeInputs(
            normal=np.zeros((6, 6, 3)), view_dir=np.zeros((6, 6, 3)),
            albedo=np.zeros((6, 6, 3)), metallic=np.zeros((6, 6)),
            roughness=np.zeros((6, 6)), alpha=np.zeros((6, 6)),
        )
        out, _ = shade_deferred(inputs, unit_light, background=bg)
        assert np.array_equal(out, bg)

    def test_non_unit_normal_cites_pixel(self, unit_light):
        nrm = np.zeros((4, 4, 3))
        nrm[..., 2] = 1.0
        nrm[2, 1] = [0.0, 0.0, 2.0]
        inputs = ShadeInputs(
            normal=nrm, view_dir=nrm.copy() * 0 + np.array([0, 0, 1.0]),
            albedo=np.ones((4, 4, 3)), metallic=np.zeros((4, 4)),
            roughness=np.full((4, 4), 0.5), alpha=np.ones((4, 4)),
        )
        with pytest.raises(ShadingError, match=r"\(2, 1\)"):
            shade_deferred(inputs, unit_light)

    def test_occlusion_monotonically_darkens_diffuse(self, gradient_light):
        rng = np.random.default_rng(2)
        nrm = rng.normal(size=(4, 4, 3))
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        base = dict(
            normal=nrm, view_dir=nrm.copy(), albedo=np.full((4, 4, 3), 0.8),
            metallic=np.zeros((4, 4)), roughness=np.full((4, 4), 0.6),
            alpha=np.ones((4, 4)),
        )
        prev = None
        for io in np.linspace(0, 1, 6):
            inputs = ShadeInputs(occlusion=np.full((4, 4), io), **base)
            out, _ = shade_deferred(inputs, gradient_light)
            if prev is not None:
                assert np.all(out <= prev + 1e-12)
            prev = out

    def test_linear_in_albedo_for_dielectric(self, gradient_light):
        rng = np.random.default_rng(3)
        nrm = rng.normal(size=(4, 4, 3))
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        a = np.full((4, 4, 3), 0.25)
        base = dict(
            normal=nrm, view_dir=nrm.copy(), metallic=np.zeros((4, 4)),
            roughness=np.full((4, 4), 0.4), alpha=np.ones((4, 4)),
        )
        out1, _ = shade_deferred(ShadeInputs(albedo=a, **base), gradient_light)
        out2, _ = shade_deferred(ShadeInputs(albedo=2 * a, **base), gradient_light)
        # specular part is albedo-independent at metallic 0: subtract it
        out0, _ = shade_deferred(ShadeInputs(albedo=0 * a, **base), gradient_light)
        assert np.allclose(out2 - out0, 2 * (out1 - out0), rtol=1e-9, atol=1e-12)

    def test_gradients_match_finite_differences(self, gradient_light):
        rng = np.random.default_rng(6)
        h_img = w_img = 5
        nrm = rng.normal(size=(h_img, w_img, 3))
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        view = nrm + 0.5 * rng.normal(size=(h_img, w_img, 3))
        view /= np.linalg.norm(view, axis=-1, keepdims=True)
        flip = np.einsum("hwc,hwc->hw", nrm, view) < 0.15
        view[flip] = nrm[flip]
        base = dict(
            normal=nrm, view_dir=view,
            albedo=rng.uniform(0.2, 0.9, (h_img, w_img, 3)),
            metallic=rng.uniform(0.1, 0.9, (h_img, w_img)),
            roughness=rng.uniform(0.1, 0.9, (h_img, w_img)),
            alpha=np.ones((h_img, w_img)),
        )
        _, grads = shade_deferred(ShadeInputs(**base), gradient_light,
                                  with_grads=True)
        up = rng.normal(size=(h_img, w_img, 3))
        applied = grads.apply(up)
        h = 1e-6
        checked = 0
        for name in ("albedo", "metallic", "roughness"):
            for idx in np.ndindex(base[name].shape):
                b2 = {k: v.copy() for k, v in base.items()}
                b2[name][idx] += h
                lp = float(np.sum(up * shade_deferred(ShadeInputs(**b2),
                                                      gradient_light)[0]))
                b2[name][idx] -= 2 * h
                lm = float(np.sum(up * shade_deferred(ShadeInputs(**b2),
                                                      gradient_light)[0]))
                fd = (lp - lm) / (2 * h)
                an = applied[name][idx]
                if max(abs(fd), abs(an)) < 1e-8:
                    continue
                rel = abs(fd - an) / max(abs(fd), abs(an))
                # lookup-table cell kinks break FD on a measure-zero set;
                # the acceptance suite checks 20 clean pixels at 1e-3
                if rel > 1e-3:
                    assert rel < 2e-2
                    continue
                checked += 1
        assert checked > 90


class TestMonteCarlo:
    def test_black_environment_is_exactly_zero(self):
        out = mc_reference([0, 0, 1], [0, 0, 1], [0.5, 0.5, 0.5], 0.3, 0.4,
                           np.zeros((8, 16, 3)), samples=256)
        assert np.array_equal(out, np.zeros(3))

    def test_estimator_consistency(self):
        env = lowfreq_env(9)
        n = np.array([0.0, 0.0, 1.0])
        v = np.array([0.4, 0.1, 0.91])
        v /= np.linalg.norm(v)
        ref = mc_reference(n, v, [0.7, 0.6, 0.5], 0.4, 0.5, env, samples=8192,
                           rng=np.random.default_rng(0))
        singles = np.array([
            mc_reference(n, v, [0.7, 0.6, 0.5], 0.4, 0.5, env, samples=1,
                         rng=np.random.default_rng(1000 + i))
            for i in range(10_000)
        ])
        mean = singles.mean(axis=0)
        sigma = singles.std(axis=0) / np.sqrt(len(singles))
        assert np.all(np.abs(mean - ref) < 3.5 * sigma + 1e-3)

    def test_agrees_with_split_sum_diffuse_config(self, gradient_light):
        env = gradient_light.radiance
        n = np.array([0.0, 0.0, 1.0])
        inp = ShadeInputs(
            normal=n.reshape(1, 1, 3), view_dir=n.reshape(1, 1, 3),
            albedo=np.full((1, 1, 3), 0.8), metallic=np.zeros((1, 1)),
            roughness=np.full((1, 1), 0.8), alpha=np.ones((1, 1)),
        )
        ss = shade_deferred(inp, gradient_light)[0][0, 0]
        mc = mc_reference(n, n, [0.8] * 3, 0.0, 0.8, env, samples=8192,
                          rng=np.random.default_rng(0))
        assert np.max(np.abs(ss - mc)) / mc.max() < 0.02


def test_rotate_environment_is_exact_roll():
    rng = np.random.default_rng(11)
    env = rng.uniform(0, 1, (8, 16, 3))
    rot = rotate_environment(env, 4)
    assert np.array_equal(rot[:, 4], env[:, 0])
    assert np.array_equal(rotate_environment(rot, -4), env)
