import numpy as np
import pytest

from splatforge.assets import (
    Bounds,
    Camera,
    PrimitiveGrid,
    SplatterAsset,
    load_gbuffer_set,
    load_splat,
    save_gbuffer_set,
    save_splat,
    validate,
)
from splatforge.assets.gbuffer_io import MANIFEST_NAME
from splatforge.assets.image_io import (
    read_exr,
    read_hdr,
    read_png,
    write_exr,
    write_hdr,
    write_png,
)
from splatforge.assets.ply_io import PROPERTIES
from splatforge.assets.types import GBufferTarget, look_at_camera
from splatforge.errors import AssetValidationError, SchemaError


def random_asset(seed, n_views=2, h=4, w=4):
    rng = np.random.default_rng(seed)
    views = []
    cams = []
    for v in range(n_views):
        views.append(PrimitiveGrid.from_flat(
            {
                "position": rng.uniform(-0.9, 0.9, (h * w, 3)).astype(np.float32),
                "rotation": (rng.normal(size=(h * w, 3)) * 0.5).astype(np.float32),
                "scale": rng.uniform(0.01, 0.4, (h * w, 2)).astype(np.float32),
                "opacity": rng.uniform(0, 1, h * w).astype(np.float32),
                "color": rng.uniform(0, 1, (h * w, 3)).astype(np.float32),
                "albedo": rng.uniform(0, 1, (h * w, 3)).astype(np.float32),
                "metallic": rng.uniform(0, 1, h * w).astype(np.float32),
                "roughness": rng.uniform(0, 1, h * w).astype(np.float32),
            },
            (h, w),
        ))
        cams.append(look_at_camera(
            eye=[np.cos(v), np.sin(v), 0.4], target=[0, 0, 0],
            fov_y=0.8, resolution=(w, h),
        ))
    return SplatterAsset(views=views, cameras=cams, bounds=Bounds([-1] * 3, [1] * 3))


class TestPlyRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path):
        asset = random_asset(1)
        path = tmp_path / "asset.ply"
        save_splat(asset, path)
        loaded = load_splat(path)
        assert len(loaded.views) == len(asset.views)
        for va, vb in zip(asset.views, loaded.views):
            for name in ("position", "rotation", "scale", "opacity", "color",
                         "albedo", "metallic", "roughness"):
                a32 = getattr(va, name).astype(np.float32)
                b32 = getattr(vb, name).astype(np.float32)
                assert a32.tobytes() == b32.tobytes()
        for ca, cb in zip(asset.cameras, loaded.cameras):
            assert np.allclose(ca.world_from_camera, cb.world_from_camera)
            assert ca.resolution == cb.resolution

    def test_missing_property_named(self, tmp_path):
        asset = random_asset(2)
        path = tmp_path / "asset.ply"
        save_splat(asset, path)
        raw = path.read_bytes()
        # drop the roughness property declaration and its column bytes
        head, _, body = raw.partition(b"end_header\n")
        head = head.replace(b"property float roughness\n", b"")
        rows = np.frombuffer(body, dtype="<f4").reshape(-1, len(PROPERTIES))
        body = np.ascontiguousarray(rows[:, :-1]).tobytes()
        path.write_bytes(head + b"end_header\n" + body)
        with pytest.raises(SchemaError, match="roughness"):
            load_splat(path)

    def test_nan_field_cites_element(self, tmp_path):
        asset = random_asset(3)
        path = tmp_path / "asset.ply"
        save_splat(asset, path)
        raw = bytearray(path.read_bytes())
        head, sep, body = bytes(raw).partition(b"end_header\n")
        rows = np.frombuffer(body, dtype="<f4").reshape(-1, len(PROPERTIES)).copy()
        rows[7, 0] = np.nan
        path.write_bytes(head + sep + rows.tobytes())
        with pytest.raises(SchemaError, match="primitive 7"):
            load_splat(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
        with pytest.raises(SchemaError):
            load_splat(path)

    def test_large_asset_parses_quickly(self, tmp_path):
        import time

        rng = np.random.default_rng(9)
        h = w = 256
        views = []
        cams = []
        for v in range(4):
            views.append(PrimitiveGrid.from_flat(
                {
                    "position": rng.uniform(-0.9, 0.9, (h * w, 3)),
                    "rotation": np.zeros((h * w, 3)),
                    "scale": np.full((h * w, 2), 0.01),
                    "opacity": np.full(h * w, 0.5),
                    "color": np.full((h * w, 3), 0.5),
                    "albedo": np.full((h * w, 3), 0.5),
                    "metallic": np.zeros(h * w),
                    "roughness": np.full(h * w, 0.5),
                },
                (h, w),
            ))
            cams.append(look_at_camera(eye=[2, v * 0.1, 0], target=[0, 0, 0],
                                       fov_y=0.8, resolution=(w, h)))
        asset = SplatterAsset(views=views, cameras=cams,
                              bounds=Bounds([-1] * 3, [1] * 3))
        path = tmp_path / "big.ply"
        save_splat(asset, path)
        t0 = time.perf_counter()
        loaded = load_splat(path)
        elapsed = time.perf_counter() - t0
        assert loaded.primitive_count == 4 * 256 * 256 == 262144
        assert elapsed < 1.0


class TestValidate:
    def test_opacity_out_of_range_cites_pixel(self):
        asset = random_asset(4)
        arr = np.array(asset.views[0].opacity)
        arr[2, 3] = 1.2
        views = list(asset.views)
        views[0] = PrimitiveGrid(
            position=asset.views[0].position,
            rotation=asset.views[0].rotation,
            scale=asset.views[0].scale,
            opacity=arr,
            color=asset.views[0].color,
            albedo=asset.views[0].albedo,
            metallic=asset.views[0].metallic,
            roughness=asset.views[0].roughness,
        )
        report = validate(asset.with_views(views))
        assert not report.ok
        hits = [v for v in report.violations if v.field == "opacity"]
        assert hits and hits[0].view == 0 and (hits[0].row, hits[0].col) == (2, 3)

    def test_zero_scale_flagged(self):
        asset = random_asset(5)
        arr = np.array(asset.views[1].scale)
        arr[0, 0, 0] = 0.0
        views = list(asset.views)
        g = asset.views[1]
        views[1] = PrimitiveGrid(position=g.position, rotation=g.rotation,
                                 scale=arr, opacity=g.opacity, color=g.color,
                                 albedo=g.albedo, metallic=g.metallic,
                                 roughness=g.roughness)
        report = validate(asset.with_views(views))
        assert any(v.field == "scale" for v in report.violations)

    def test_valid_asset_empty_report(self):
        report = validate(random_asset(6))
        assert report.ok and len(report) == 0

    def test_out_of_bounds_position_flagged(self):
        asset = random_asset(7)
        arr = np.array(asset.views[0].position)
        arr[1, 1] = [5.0, 0.0, 0.0]
        g = asset.views[0]
        views = list(asset.views)
        views[0] = PrimitiveGrid(position=arr, rotation=g.rotation, scale=g.scale,
                                 opacity=g.opacity, color=g.color, albedo=g.albedo,
                                 metallic=g.metallic, roughness=g.roughness)
        report = validate(asset.with_views(views))
        assert any(v.field == "position" and "bounds" in v.message
                   for v in report.violations)


class TestCamera:
    def test_non_orthonormal_rejected(self):
        m = np.eye(4)
        m[0, 1] = 0.1
        with pytest.raises(AssetValidationError):
            Camera(m, fov_y=0.8, resolution=(8, 8))

    def test_rays_unit_and_through_center(self):
        cam = look_at_camera(eye=[0, -2, 0], target=[0, 0, 0], fov_y=0.8,
                             resolution=(9, 9))
        rays = cam.pixel_rays()
        assert np.allclose(np.linalg.norm(rays, axis=-1), 1.0)
        assert np.allclose(rays[4, 4], [0, 1, 0], atol=1e-12)

    def test_project_inverts_rays(self):
        cam = look_at_camera(eye=[0.3, -2, 0.5], target=[0, 0.1, 0], fov_y=0.7,
                             resolution=(11, 7))
        rays = cam.pixel_rays()
        pts = cam.origin + 2.37 * rays
        pix, z = cam.project(pts)
        xs, ys = np.meshgrid(np.arange(11), np.arange(7))
        assert np.allclose(pix[..., 0], xs, atol=1e-9)
        assert np.allclose(pix[..., 1], ys, atol=1e-9)
        assert np.all(z > 0)


class TestImageIO:
    def test_exr_round_trip_float(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 10, (7, 5, 3)).astype(np.float32)
        write_exr(tmp_path / "t.exr", img)
        assert np.array_equal(read_exr(tmp_path / "t.exr"), img)

    def test_exr_round_trip_single_channel_and_half(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 4, (6, 9)).astype(np.float32)
        write_exr(tmp_path / "y.exr", img)
        assert np.array_equal(read_exr(tmp_path / "y.exr"), img)
        write_exr(tmp_path / "h.exr", img, half=True)
        assert np.allclose(read_exr(tmp_path / "h.exr"), img, rtol=1e-3)

    def test_hdr_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 50, (8, 16, 3))
        write_hdr(tmp_path / "e.hdr", img)
        back = read_hdr(tmp_path / "e.hdr")
        # RGBE shares one exponent per pixel: error bound is max channel / 256
        bound = img.max(axis=-1, keepdims=True) / 256.0 + 1e-9
        assert np.all(np.abs(back - img) <= bound)

    def test_png_applies_srgb_transfer(self, tmp_path):
        img = np.full((4, 4, 3), 0.2)
        write_png(tmp_path / "p.png", img)
        back = read_png(tmp_path / "p.png")
        assert np.allclose(back, img, atol=0.01)
        # raw bytes should hold the sRGB-encoded value, not the linear one
        raw = read_png(tmp_path / "p.png", srgb=False)
        assert abs(raw[0, 0, 0] - 0.2) > 0.2


class TestGBufferIO:
    def _targets(self, seed, res=8, n=3, with_occlusion=False):
        rng = np.random.default_rng(seed)
        targets, cams = [], []
        for v in range(n):
            alpha = (rng.uniform(0, 1, (res, res)) > 0.4).astype(np.float64)
            nrm = rng.normal(size=(res, res, 3))
            nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
            targets.append(GBufferTarget(
                rgb=rng.uniform(0, 1, (res, res, 3)),
                albedo=rng.uniform(0, 1, (res, res, 3)),
                alpha=alpha,
                normal=nrm,
                depth=rng.uniform(1, 3, (res, res)) * alpha,
                metallic=rng.uniform(0, 1, (res, res)),
                roughness=rng.uniform(0, 1, (res, res)),
                occlusion=rng.uniform(0, 1, (res, res)) if with_occlusion else None,
            ))
            cams.append(look_at_camera(eye=[np.cos(v), np.sin(v), 0.3],
                                       target=[0, 0, 0], fov_y=0.8,
                                       resolution=(res, res)))
        return targets, cams

    def test_round_trip_order_and_values(self, tmp_path):
        targets, cams = self._targets(0, n=8)
        save_gbuffer_set(tmp_path, targets, cams)
        loaded, lcams = load_gbuffer_set(tmp_path)
        assert len(loaded) == 8
        for a, b in zip(targets, loaded):
            assert a.shape == b.shape == (8, 8)
            assert np.allclose(a.rgb, b.rgb, atol=1e-6)
            assert np.allclose(a.metallic, b.metallic, atol=1e-6)
            assert np.allclose(a.roughness, b.roughness, atol=1e-6)
        for ca, cb in zip(cams, lcams):
            assert np.allclose(ca.world_from_camera, cb.world_from_camera)

    def test_occlusion_optional(self, tmp_path):
        targets, cams = self._targets(1, with_occlusion=True)
        save_gbuffer_set(tmp_path, targets, cams)
        loaded, _ = load_gbuffer_set(tmp_path)
        assert loaded[0].occlusion is not None
        # and absent when not written
        targets2, cams2 = self._targets(2)
        save_gbuffer_set(tmp_path / "no_occ", targets2, cams2)
        loaded2, _ = load_gbuffer_set(tmp_path / "no_occ")
        assert loaded2[0].occlusion is None

    def test_resolution_mismatch_rejected(self, tmp_path):
        targets, cams = self._targets(3)
        save_gbuffer_set(tmp_path, targets, cams)
        # overwrite one alpha with a smaller map
        write_exr(tmp_path / "view001.alpha.exr", np.zeros((4, 4)))
        with pytest.raises(SchemaError, match="alpha"):
            load_gbuffer_set(tmp_path)

    def test_missing_channel_rejected(self, tmp_path):
        targets, cams = self._targets(4)
        save_gbuffer_set(tmp_path, targets, cams)
        (tmp_path / "view000.normal.exr").unlink()
        with pytest.raises(SchemaError, match="normal"):
            load_gbuffer_set(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError, match=MANIFEST_NAME):
            load_gbuffer_set(tmp_path)
