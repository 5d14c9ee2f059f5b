import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endogen.images import read_manifest
from endogen.render import (
    Camera,
    FlyThroughPath,
    PathError,
    RenderParams,
    TransferFunction,
    export_dataset,
    fly_through,
    render_view,
    shade,
)
from endogen.volume import CtVolume, make_phantom

OPAQUE_WHITE = TransferFunction(((-2000.0, (1.0, 1.0, 1.0, 1.0)), (2000.0, (1.0, 1.0, 1.0, 1.0))))


def test_transfer_function_interpolates_and_clamps():
    tf = TransferFunction(((0.0, (0, 0, 0, 0)), (100.0, (1, 0.5, 0, 1))))
    np.testing.assert_allclose(tf(np.array([-50.0, 25.0, 100.0, 500.0])),
                               [[0, 0, 0, 0], [0.25, 0.125, 0, 0.25], [1, 0.5, 0, 1], [1, 0.5, 0, 1]])


@pytest.mark.parametrize("points", [(), ((0, (0, 0, 0, 2)),), ((1, (0, 0, 0, 0)), (1, (0, 0, 0, 0)))])
def test_transfer_function_validation(points):
    with pytest.raises(ValueError):
        TransferFunction(points)


@settings(max_examples=30)
@given(st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1),
       st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_camera_frame_is_orthonormal(forward, up):
    f, u = np.array(forward), np.array(up)
    if np.linalg.norm(np.cross(f / np.linalg.norm(f), u / np.linalg.norm(u))) < 1e-2:
        return
    cam = Camera((0, 0, 0), forward, up, image_size=(6, 4))
    f, u = np.array(cam.forward), np.array(cam.up)
    assert abs(np.linalg.norm(f) - 1) < 1e-12 and abs(np.linalg.norm(u) - 1) < 1e-12 and abs(f @ u) < 1e-12
    dirs = cam.ray_directions()
    assert dirs.shape == (6, 4, 3)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0)


def test_ray_directions_span_the_field_of_view():
    cam = Camera((0, 0, 0), (0, 0, 1), (0, 1, 0), vertical_fov=90, image_size=(2, 2))
    d = cam.ray_directions()
    # pixel centers sit at +-1/2 of the half-height tan(45deg) = 1; right = forward x up = -x
    np.testing.assert_allclose(d[0, 0] / d[0, 0, 2], [0.5, 0.5, 1.0])
    np.testing.assert_allclose(d[1, 1] / d[1, 1, 2], [-0.5, -0.5, 1.0])


def test_look_at_handles_parallel_up_hint():
    cam = Camera.look_at((0, 0, 0), (0, 5, 0), up_hint=(0, 1, 0))
    assert abs(np.dot(cam.forward, cam.up)) < 1e-12


def test_shade_formula():
    rp = RenderParams()
    rgb = np.array([[0.5, 0.4, 0.2]])
    grad = np.array([[0.0, 0.0, 3.0]])  # normal faces the camera for a ray along +z
    ray = np.array([[0.0, 0.0, 1.0]])
    att = 1 / (1 + (20 / 40) ** 2)
    expected = rgb * (0.1 + att * 0.7) + att * 0.2
    np.testing.assert_allclose(shade(rgb, grad, ray, np.array([20.0]), rp), expected)
    # back-facing gradients only get ambient light
    np.testing.assert_allclose(shade(rgb, -grad, ray, np.array([20.0]), rp), rgb * 0.1)


def _silhouette_radius(img):
    return math.sqrt(np.count_nonzero(img.max(axis=-1) > 0) / math.pi)


def test_sphere_silhouette_matches_perspective_projection():
    vol = make_phantom("sphere", (48, 48, 48), radius=10, hollow=False)
    cam = Camera((23.5, 23.5, -30.0), (0, 0, 1), (0, 1, 0), vertical_fov=70, image_size=(256, 256))
    img = render_view(vol, cam)
    d = 23.5 + 30.0
    analytic = math.tan(math.asin(10 / d)) / math.tan(math.radians(35)) * 128
    assert abs(_silhouette_radius(img) - analytic) < 1.0


def test_opaque_first_sample_is_the_shaded_sample_color():
    values = np.broadcast_to(np.arange(12.0)[:, None, None] * 10.0, (12, 12, 12)).copy()
    vol = CtVolume(values)
    cam = Camera((5.5, 5.5, -4.0), (0, 0, 1), (0, 1, 0), image_size=(1, 1))
    rp = RenderParams(step_size=0.5)
    pixel = render_view(vol, cam, OPAQUE_WHITE, rp)[0, 0]
    # center ray enters the z = 0 face after 4 mm; value gradient is (10, 0, 0), perpendicular to the ray
    att = 1 / (1 + (4.0 / 40) ** 2)
    ndl = 0.0
    expected = 1.0 * (0.1 + att * 0.7 * ndl) + att * 0.2 * ndl**20
    np.testing.assert_array_equal(pixel, np.full(3, expected))


def test_opaque_first_sample_lit_head_on():
    values = np.broadcast_to(np.arange(12.0)[None, None, :] * 10.0, (12, 12, 12)).copy()
    cam = Camera((5.5, 5.5, -4.0), (0, 0, 1), (0, 1, 0), image_size=(1, 1))
    pixel = render_view(CtVolume(values), cam, OPAQUE_WHITE, RenderParams())[0, 0]
    att = 1 / (1 + (4.0 / 40) ** 2)
    assert pixel.tolist() == [min(1.0, 0.1 + att * 0.7 + att * 0.2)] * 3


@pytest.mark.parametrize("eye", [(23.5, 23.5, -30.0), (5.0, 9.0, -20.0)])
def test_step_halving_on_sphere(eye):
    vol = make_phantom("sphere", (48, 48, 48), radius=10, hollow=False)
    cam = Camera.look_at(eye, (23.5, 23.5, 23.5), image_size=(96, 96))
    a = render_view(vol, cam, rp=RenderParams(step_size=0.5))
    b = render_view(vol, cam, rp=RenderParams(step_size=0.25))
    assert np.abs(a - b).max() < 0.02


def test_step_halving_inside_folded_tube():
    vol = make_phantom("tube", (32, 32, 64), radius=9, fold_amplitude=3, fold_period=16)
    cam = Camera.look_at((15.5, 15.5, 6), (15.5, 17, 30), image_size=(64, 64))
    a = render_view(vol, cam, rp=RenderParams(step_size=0.5))
    b = render_view(vol, cam, rp=RenderParams(step_size=0.25))
    assert np.abs(a - b).max() < 0.02


def test_segment_integration_reduces_step_dependence():
    vol = make_phantom("tube", (32, 32, 64), radius=9, fold_amplitude=3, fold_period=16)
    cam = Camera.look_at((15.5, 15.5, 6), (15.5, 17, 30), image_size=(32, 32))

    def halving_error(m):
        a = render_view(vol, cam, rp=RenderParams(step_size=0.5, substeps=m))
        return np.abs(a - render_view(vol, cam, rp=RenderParams(step_size=0.25, substeps=m))).max()

    assert halving_error(8) < 0.5 * halving_error(1)


def test_empty_rays_show_background():
    vol = make_phantom("sphere", (16, 16, 16), radius=3, hollow=False)
    cam = Camera((7.5, 7.5, -50), (1, 0, 0.0001), (0, 1, 0), image_size=(4, 4))
    img = render_view(vol, cam, rp=RenderParams(background=(0.2, 0.3, 0.4)))
    np.testing.assert_allclose(img, np.broadcast_to([0.2, 0.3, 0.4], img.shape))


def test_path_hits_keyframes_and_reverses():
    kf = (((0, 0, 0), (0, 0, 5)), ((1, 2, 3), (1, 2, 8)), ((2, 2, 6), (2, 2, 11)))
    path = FlyThroughPath(kf, samples_per_segment=4)
    pos, tgt = path.samples()
    assert len(pos) == 8
    np.testing.assert_allclose(pos[0], kf[0][0])
    np.testing.assert_allclose(pos[-1], kf[-1][0])
    np.testing.assert_allclose(tgt[-1], kf[-1][1])
    rpos, _ = path.reversed().samples()
    np.testing.assert_allclose(rpos, pos[::-1], atol=1e-12)


def test_path_validation():
    with pytest.raises(PathError):
        FlyThroughPath((((0, 0, 0), (0, 0, 1)),))
    with pytest.raises(PathError):
        FlyThroughPath((((0, 0, 0), (0, 0, 1)), ((0, 0, 0), (0, 0, 2))))


def test_fly_through_rejects_path_leaving_volume():
    vol = make_phantom("tube", (16, 16, 32))
    path = FlyThroughPath((((7.5, 7.5, 2), (7.5, 7.5, 10)), ((7.5, 7.5, 40), (7.5, 7.5, 50))), 3)
    with pytest.raises(PathError, match="sample 2"):
        fly_through(vol, path, image_size=(8, 8))


def test_export_dataset(tmp_path):
    frames = [np.full((4, 4, 3), v) for v in (0.0, 0.5, 1.0)]
    manifest = export_dataset(frames, tmp_path, source=["a", "b", "c"], prefix="v")
    entries = read_manifest(manifest)
    assert [e.filename for e in entries] == ["v_00000.png", "v_00001.png", "v_00002.png"]
    assert [e.source for e in entries] == ["a", "b", "c"]
    assert all((tmp_path / e.filename).exists() for e in entries)
