import numpy as np
import pytest

from conftest import arrays_to_asset, make_gradcheck_scene, reference_render
from splatforge.assets.types import Bounds, PrimitiveGrid, SplatterAsset, look_at_camera
from splatforge.errors import RasterError
from splatforge.raster import PackedScene, rasterize


def test_single_disk_alpha_and_depth():
    cam = look_at_camera(eye=[0, -2, 0], target=[0, 0, 0], fov_y=0.8,
                         resolution=(33, 33), near=0.05, far=10)
    arrays = dict(
        position=np.array([[0.0, 0.0, 0.0]]),
        rotation=np.array([[-np.pi / 2, 0.0, 0.0]]),  # disk normal along +y
        scale=np.array([[2.0, 2.0]]),
        opacity=np.array([1.0]),
        color=np.array([[1.0, 0.0, 0.0]]),
        albedo=np.array([[0.5, 0.5, 0.5]]),
        metallic=np.array([0.2]),
        roughness=np.array([0.7]),
    )
    out = rasterize(arrays_to_asset(arrays, cam), cam, background=(0, 0, 0))
    assert out.alpha[16, 16] >= 0.99
    assert abs(out.depth[16, 16] - 2.0) < 0.05


def test_two_coaxial_disks_hand_blend():
    cam = look_at_camera(eye=[0, -3, 0], target=[0, 0, 0], fov_y=0.6,
                         resolution=(17, 17), near=0.05, far=10)
    arrays = dict(
        position=np.array([[0.0, -2.0, 0.0], [0.0, -1.0, 0.0]]),
        rotation=np.array([[-np.pi / 2, 0.0, 0.0]] * 2),
        scale=np.array([[1.5, 1.5]] * 2),
        opacity=np.array([0.5, 0.5]),
        color=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        albedo=np.array([[0.5] * 3] * 2),
        metallic=np.zeros(2),
        roughness=np.full(2, 0.5),
    )
    bg = np.array([0.2, 0.3, 0.4])
    out = rasterize(arrays_to_asset(arrays, cam), cam, background=bg)
    expected = 0.5 * np.array([1, 0, 0]) + 0.25 * np.array([0, 1, 0]) + 0.25 * bg
    assert np.allclose(out.rgb[8, 8], expected, atol=1e-12)


def test_empty_asset_background_only():
    cam = look_at_camera(eye=[0, -3, 0], target=[0, 0, 0], fov_y=0.6,
                         resolution=(9, 9))
    asset = SplatterAsset(views=[], cameras=[], bounds=Bounds([-1] * 3, [1] * 3))
    bg = (0.1, 0.5, 0.9)
    out = rasterize(asset, cam, background=bg)
    assert np.all(out.alpha == 0)
    assert np.allclose(out.rgb, np.asarray(bg))


def test_camera_behind_scene_is_all_background():
    cam = look_at_camera(eye=[0, -3, 0], target=[0, -6, 0], fov_y=0.6,
                         resolution=(9, 9))
    arrays = dict(
        position=np.array([[0.0, 0.0, 0.0]]),
        rotation=np.array([[-np.pi / 2, 0.0, 0.0]]),
        scale=np.array([[0.5, 0.5]]),
        opacity=np.array([1.0]),
        color=np.array([[1.0, 0.0, 0.0]]),
        albedo=np.array([[0.5] * 3]),
        metallic=np.array([0.0]),
        roughness=np.array([0.5]),
    )
    out = rasterize(arrays_to_asset(arrays, cam), cam, background=(0, 0, 0))
    assert np.all(out.alpha == 0)


def test_nonfinite_primitive_rejected():
    cam = look_at_camera(eye=[0, -3, 0], target=[0, 0, 0], fov_y=0.6,
                         resolution=(9, 9))
    arrays = dict(
        position=np.array([[np.nan, 0.0, 0.0]]),
        rotation=np.zeros((1, 3)),
        scale=np.array([[0.5, 0.5]]),
        opacity=np.array([1.0]),
        color=np.array([[1.0, 0.0, 0.0]]),
        albedo=np.array([[0.5] * 3]),
        metallic=np.array([0.0]),
        roughness=np.array([0.5]),
    )
    with pytest.raises(RasterError):
        rasterize(PackedScene.from_arrays(**arrays), cam)


@pytest.mark.parametrize("seed", [0, 7, 13])
def test_matches_bruteforce_oracle(seed):
    cam, arrays = make_gradcheck_scene(seed, n=10, res=12)
    bg = (0.3, 0.25, 0.2)
    out = rasterize(PackedScene.from_arrays(**arrays), cam, background=bg)
    ref = reference_render(arrays, cam, bg)
    for name in ("rgb", "albedo", "alpha", "metallic", "roughness", "depth",
                 "normal"):
        assert np.max(np.abs(getattr(out, name) - ref[name])) < 1e-6, name


def test_alpha_bounds_property():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 12
        cam = look_at_camera(eye=[0, -2.0, 0.4], target=[0, 0, 0], fov_y=0.8,
                             resolution=(16, 16), near=0.05, far=10)
        arrays = dict(
            position=rng.uniform(-0.5, 0.5, (n, 3)),
            rotation=rng.normal(size=(n, 3)),
            scale=rng.uniform(0.05, 0.8, (n, 2)),
            opacity=rng.uniform(0, 1, n),  # deliberately spans the full range
            color=rng.uniform(0, 1, (n, 3)),
            albedo=rng.uniform(0, 1, (n, 3)),
            metallic=rng.uniform(0, 1, n),
            roughness=rng.uniform(0, 1, n),
        )
        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        assert out.alpha.min() >= 0.0
        assert out.alpha.max() <= 1.0
        for name in ("rgb", "albedo", "depth", "normal"):
            assert np.all(np.isfinite(getattr(out, name)))


def test_deterministic_across_runs():
    cam, arrays = make_gradcheck_scene(2, n=12, res=24, reject=False)
    a = rasterize(PackedScene.from_arrays(**arrays), cam, background=(0.1, 0.2, 0.3))
    b = rasterize(PackedScene.from_arrays(**arrays), cam, background=(0.1, 0.2, 0.3))
    for name in ("rgb", "albedo", "alpha", "metallic", "roughness", "depth",
                 "normal"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
