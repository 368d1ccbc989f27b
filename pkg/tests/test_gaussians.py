import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from leansplat import adcore as ad
from leansplat.adcore import Array
from leansplat.adcore.gradcheck import check_gradients
from leansplat.gaussians import (
    OPACITY,
    QUAT,
    SCALE,
    SH_C0,
    ActivationConfig,
    activate,
    compose_update,
    quat_multiply,
    quat_normalize,
    read_ply,
    sh_color,
    sh_color_raw,
    write_ply,
)


def raw_with(n=1, **blocks):
    raw = np.zeros((n, 24))
    raw[:, QUAT.start] = 1.0
    for sl, val in blocks.values():
        raw[:, sl] = val
    return Array(raw)


def test_center_on_axis_at_unit_depth():
    # pick d_near/d_far so sigmoid(0) -> depth 1
    cfg = ActivationConfig(d_near=0.5, d_far=1.5)
    g = activate(raw_with(), np.zeros((1, 2)), cfg)
    np.testing.assert_allclose(g.means.data, [[0.0, 0.0, 1.0]], atol=1e-15)


def test_identity_rotation_gives_diagonal_cov():
    s = np.array([0.1, 0.2, 0.3])
    g = activate(raw_with(scale=(SCALE, np.log(s))), np.zeros((1, 2)))
    np.testing.assert_allclose(g.covs.data[0], np.diag(s ** 2), rtol=1e-12, atol=1e-15)


def test_opacity_midpoint():
    g = activate(raw_with(3), np.zeros((3, 2)))
    np.testing.assert_array_equal(g.opacities.data, 0.5)


def test_scale_clamp():
    cfg = ActivationConfig(scene_extent=1.0)
    g = activate(raw_with(scale=(SCALE, [5.0, -30.0, 0.0])), np.zeros((1, 2)), cfg)
    np.testing.assert_allclose(np.diag(g.covs.data[0]), [0.25, 1e-12, 0.25], rtol=1e-9)


def test_means_follow_rays():
    rays = np.array([[0.2, -0.1]])
    raw = raw_with()
    raw.data[0, 1:4] = [0.01, 0.02, 0.03]
    g = activate(raw, rays)
    d = 0.5 + 2.5 * 0.5
    np.testing.assert_allclose(g.means.data[0], [0.2 * d + 0.01, -0.1 * d + 0.02, d + 0.03], rtol=1e-14)


def test_zero_quaternion_raises():
    raw = raw_with()
    raw.data[0, QUAT] = 0.0
    with pytest.raises(ValueError):
        activate(raw, np.zeros((1, 2)))


def test_bad_layout_raises():
    with pytest.raises(ValueError):
        activate(Array(np.zeros((2, 23))), np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (6, 24), elements=st.floats(-3, 3)))
def test_covariances_symmetric_psd(raw):
    raw[:, QUAT.start] += 4.0  # keep away from zero norm
    g = activate(Array(raw), np.zeros((6, 2)))
    c = g.covs.data
    np.testing.assert_allclose(c, np.swapaxes(c, 1, 2), atol=1e-15)
    assert np.linalg.eigvalsh(c).min() > -1e-15
    assert ((g.opacities.data > 0) & (g.opacities.data < 1)).all()


def test_activate_grad(rng):
    raw = Array(rng.normal(0, 0.5, size=(4, 24)), requires_grad=True)
    raw.data[:, QUAT.start] += 2.0
    rays = rng.uniform(-0.3, 0.3, size=(4, 2))

    def f():
        g = activate(raw, rays)
        return g.means.sum() + g.covs.sum() * 10.0 + g.opacities.sum() + g.sh.sum()

    assert check_gradients(f, [raw]) < 1e-6


# ----------------------------------------------------------------------
# compose
# ----------------------------------------------------------------------

def test_compose_identity_delta(rng):
    g = Array(rng.normal(size=(5, 24)))
    delta = np.zeros((5, 24))
    delta[:, QUAT.start] = 1.0
    np.testing.assert_array_equal(compose_update(g, Array(delta)).data, g.data)


def test_compose_identity_quaternion_takes_delta(rng):
    g = np.zeros((3, 24))
    g[:, QUAT.start] = 1.0
    dq = rng.normal(size=(3, 4))
    dq /= np.linalg.norm(dq, axis=1, keepdims=True)
    delta = np.zeros((3, 24))
    delta[:, QUAT] = dq
    np.testing.assert_allclose(compose_update(Array(g), Array(delta)).data[:, QUAT], dq, atol=1e-15)


def test_two_quarter_turns_make_half_turn():
    c = np.cos(np.pi / 4)
    q90 = Array([[c, 0.0, 0.0, c]])
    q180 = quat_multiply(q90, q90).data[0]
    # 180 degrees about z is (0,0,0,1) up to sign
    np.testing.assert_allclose(np.abs(q180), [0.0, 0.0, 0.0, 1.0], atol=1e-15)


def test_compose_shape_mismatch():
    with pytest.raises(ValueError):
        compose_update(Array(np.zeros((2, 24))), Array(np.zeros((3, 24))))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 4), elements=st.floats(-2, 2)),
       hnp.arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_composed_quaternions_stay_unit(a, b):
    a[:, 0] += 3.0
    b[:, 0] += 3.0
    q = quat_multiply(quat_normalize(Array(a)), quat_normalize(Array(b))).data
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)


# ----------------------------------------------------------------------
# SH
# ----------------------------------------------------------------------

def test_dc_only_is_isotropic(rng):
    sh = np.zeros((1, 3, 4))
    sh[0, :, 0] = [1 / SH_C0, 2.0, -1.0]
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    raw = sh_color_raw(Array(np.repeat(sh, 50, axis=0)), dirs).data
    np.testing.assert_array_equal(raw, np.broadcast_to(raw[0], raw.shape))
    np.testing.assert_allclose(raw[0], [1.0, 2 * SH_C0, -SH_C0], rtol=1e-15)


def test_zero_sh_is_mid_gray():
    out = sh_color(Array(np.zeros((2, 3, 4))), np.array([[0, 0, 1.0], [1.0, 0, 0]]))
    np.testing.assert_array_equal(out.data, 0.5)


def test_degree_one_odd_parity(rng):
    sh = np.zeros((10, 3, 4))
    sh[:, :, 1:] = rng.normal(size=(10, 3, 3))
    d = rng.normal(size=(10, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    a = sh_color_raw(Array(sh), d).data
    b = sh_color_raw(Array(sh), -d).data
    np.testing.assert_allclose(a, -b, atol=1e-15)


def test_sh_grad(rng):
    sh = Array(rng.normal(size=(3, 3, 4)), requires_grad=True)
    d = rng.normal(size=(3, 3))
    d = Array(d / np.linalg.norm(d, axis=1, keepdims=True), requires_grad=True)
    assert check_gradients(lambda: sh_color(sh, d), [sh, d]) < 1e-4


def test_ply_roundtrip(tmp_path, rng):
    means = rng.normal(size=(7, 3))
    opac = rng.uniform(size=7)
    write_ply(tmp_path / "g.ply", means, opac)
    data = read_ply(tmp_path / "g.ply")
    assert data.shape == (7, 4)
    np.testing.assert_allclose(data[:, :3], means, rtol=1e-6)
    np.testing.assert_allclose(data[:, 3], opac, rtol=1e-6)
    assert (tmp_path / "g.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")
