import numpy as np

from conftest import make_gradcheck_scene
from splatforge.assets.types import look_at_camera
from splatforge.raster import (
    PackedScene,
    depth_distortion,
    normal_consistency,
    rasterize,
)

ATTRS = ("position", "rotation", "scale", "opacity")


def _coaxial_pair(front_opacity=1.0):
    cam = look_at_camera(eye=[0, -3, 0], target=[0, 0, 0], fov_y=0.2,
                         resolution=(1, 1), near=0.05, far=10)
    arrays = dict(
        position=np.array([[0.0, -2.0, 0.0], [0.0, -1.0, 0.0]]),
        rotation=np.array([[-np.pi / 2, 0.0, 0.0]] * 2),
        scale=np.array([[5.0, 5.0]] * 2),
        opacity=np.array([0.5, front_opacity]),
        color=np.array([[1.0, 0, 0], [0, 1.0, 0]]),
        albedo=np.array([[0.5] * 3] * 2),
        metallic=np.zeros(2),
        roughness=np.zeros(2),
    )
    return cam, arrays


def _plane_scene(rot_noise=0.0, seed=2):
    g = 9
    xs = np.linspace(-0.6, 0.6, g)
    py, px = np.meshgrid(xs, xs, indexing="ij")
    n = g * g
    rot = np.tile([-np.pi / 2, 0.0, 0.0], (n, 1))
    if rot_noise:
        rot = rot + np.random.default_rng(seed).normal(size=(n, 3)) * rot_noise
    arrays = dict(
        position=np.stack([px.ravel(), np.zeros(n), py.ravel()], axis=-1),
        rotation=rot,
        scale=np.full((n, 2), 0.12),
        opacity=np.full(n, 0.95),
        color=np.tile([0.5] * 3, (n, 1)),
        albedo=np.tile([0.5] * 3, (n, 1)),
        metallic=np.zeros(n),
        roughness=np.zeros(n),
    )
    cam = look_at_camera(eye=[0, -2.5, 0], target=[0, 0, 0], fov_y=0.6,
                         resolution=(24, 24), near=0.05, far=10)
    return cam, arrays


class TestDepthDistortion:
    def test_single_fragment_exactly_zero(self):
        cam, arrays = _coaxial_pair()
        arrays = {k: v[:1] for k, v in arrays.items()}
        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        value, _ = depth_distortion(out, with_grads=False)
        assert value == 0.0

    def test_two_fragment_closed_form(self):
        # weights 0.5 / 0.5 at depths 1 and 2: sum w_i w_j |z_i - z_j| = 0.5
        cam, arrays = _coaxial_pair(front_opacity=1.0)
        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        value, _ = depth_distortion(out, with_grads=False)
        assert abs(value - 0.5) < 1e-6

    def test_gradients_match_finite_differences(self):
        cam, arrays = make_gradcheck_scene(5, n=6, res=12)

        def value_of(a):
            out = rasterize(PackedScene.from_arrays(**a), cam)
            return depth_distortion(out, with_grads=False)[0]

        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        value, grads = depth_distortion(out)
        assert value > 0
        h = 1e-5
        for name in ATTRS:
            for idx in np.ndindex(arrays[name].shape):
                a2 = {k: v.copy() for k, v in arrays.items()}
                a2[name][idx] += h
                lp = value_of(a2)
                a2[name][idx] -= 2 * h
                lm = value_of(a2)
                fd = (lp - lm) / (2 * h)
                an = getattr(grads, name)[idx]
                if max(abs(fd), abs(an)) < 1e-8:
                    continue
                assert abs(fd - an) / max(abs(fd), abs(an)) < 1e-3, (name, idx)


class TestNormalConsistency:
    def test_axis_aligned_plane_head_on(self):
        cam, arrays = _plane_scene()
        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        value, _ = normal_consistency(out, with_grads=False)
        assert value < 1e-3

    def test_randomized_rotations_strictly_worse(self):
        cam, arrays = _plane_scene()
        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        aligned, _ = normal_consistency(out, with_grads=False)
        cam, noisy = _plane_scene(rot_noise=0.25)
        out2 = rasterize(PackedScene.from_arrays(**noisy), cam)
        perturbed, _ = normal_consistency(out2, with_grads=False)
        assert perturbed > aligned

    def test_background_only_is_zero(self):
        cam, arrays = _plane_scene()
        empty = {k: v[:0] for k, v in arrays.items()}
        out = rasterize(PackedScene.from_arrays(**empty), cam)
        value, grads = normal_consistency(out)
        assert value == 0.0
        assert np.all(grads.position == 0)

    def test_gradients_match_finite_differences(self):
        cam, arrays = make_gradcheck_scene(5, n=6, res=12)

        def value_of(a):
            out = rasterize(PackedScene.from_arrays(**a), cam)
            return normal_consistency(out, with_grads=False)[0]

        out = rasterize(PackedScene.from_arrays(**arrays), cam)
        value, grads = normal_consistency(out)
        h = 1e-5
        for name in ATTRS:
            for idx in np.ndindex(arrays[name].shape):
                a2 = {k: v.copy() for k, v in arrays.items()}
                a2[name][idx] += h
                lp = value_of(a2)
                a2[name][idx] -= 2 * h
                lm = value_of(a2)
                fd = (lp - lm) / (2 * h)
                an = getattr(grads, name)[idx]
                if max(abs(fd), abs(an)) < 1e-7:
                    continue
                assert abs(fd - an) / max(abs(fd), abs(an)) < 2e-3, (name, idx)
