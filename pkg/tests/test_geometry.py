import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanetopo.errors import DataError
from lanetopo.geometry import (BezierLane, CameraModel, SinusoidalConfig,
                               angle_difference, bezier_eval, bezier_sample,
                               chamfer_distance, discrete_frechet,
                               endpoint_min_distance, fit_bezier,
                               project_to_image, sinusoidal_encode)


# independent oracle: de Casteljau subdivision
def de_casteljau(cp, t):
    b = np.array(cp, dtype=np.float64)
    for _ in range(3):
        b = (1 - t) * b[:-1] + t * b[1:]
    return b[0]


def random_lane(rng):
    cp = rng.uniform(-20, 20, size=(4, 3))
    cp[3, :2] = cp[0, :2] + rng.uniform(1, 10, 2)  # non-degenerate chord
    return BezierLane(cp)


# ----------------------------------------------------------------------
# Bezier evaluation and sampling
# ----------------------------------------------------------------------


def test_bezier_eval_straight_midpoint():
    lane = BezierLane(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float))
    np.testing.assert_allclose(bezier_eval(lane, 0.5), [1.5, 0, 0], atol=1e-15)


def test_bezier_eval_arc_midpoint():
    cp = np.array([[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]], dtype=float)
    np.testing.assert_allclose(bezier_eval(cp, 0.5), [0.5, 0.75, 0], atol=1e-15)
    np.testing.assert_allclose(bezier_eval(cp, 0.5), de_casteljau(cp, 0.5), atol=1e-15)


def test_bezier_eval_endpoints_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        lane = random_lane(rng)
        np.testing.assert_array_equal(bezier_eval(lane, 0.0), lane.control_points[0])
        np.testing.assert_array_equal(bezier_eval(lane, 1.0), lane.control_points[3])


def test_bezier_eval_rejects_bad_t():
    lane = random_lane(np.random.default_rng(1))
    with pytest.raises(DataError):
        bezier_eval(lane, -0.01)
    with pytest.raises(DataError):
        bezier_eval(lane, 1.01)


def test_bezier_matches_de_casteljau_1000_random():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        cp = rng.uniform(-50, 50, size=(4, 3))
        t = rng.random()
        worst = max(worst, np.abs(bezier_eval(cp, t) - de_casteljau(cp, t)).max())
    assert worst < 1e-12


def test_bezier_sample_endpoints_and_spacing():
    lane = BezierLane(np.array([[0, 0, 0], [10 / 3, 0, 0], [20 / 3, 0, 0], [10, 0, 0]]))
    pts = bezier_sample(lane, 11)
    np.testing.assert_array_equal(pts[0], lane.control_points[0])
    np.testing.assert_array_equal(pts[-1], lane.control_points[3])
    np.testing.assert_allclose(np.diff(pts[:, 0]), 1.0, atol=1e-9)
    assert bezier_sample(lane, 2).shape == (2, 3)
    with pytest.raises(DataError):
        bezier_sample(lane, 1)


def test_bezier_sample_matches_de_casteljau():
    rng = np.random.default_rng(3)
    cp = rng.uniform(-5, 5, size=(4, 3))
    pts = bezier_sample(cp, 11)
    for k in range(11):
        np.testing.assert_allclose(pts[k], de_casteljau(cp, k / 10), atol=1e-12)


def test_bezier_eval_inside_convex_hull():
    rng = np.random.default_rng(4)
    for _ in range(50):
        cp = rng.uniform(-10, 10, size=(4, 3))
        t = rng.random()
        p = bezier_eval(cp, t)
        # hull membership via linear program: p = sum w_i cp_i, w >= 0, sum w = 1
        from scipy.optimize import linprog
        res = linprog(np.zeros(4), A_eq=np.vstack([cp.T, np.ones(4)]),
                      b_eq=np.concatenate([p, [1.0]]), bounds=[(0, 1)] * 4,
                      method="highs")
        assert res.success


def test_fit_bezier_reconstructs_exact_cubics():
    rng = np.random.default_rng(5)
    for _ in range(10):
        cp = rng.uniform(-10, 10, size=(4, 3))
        pts = bezier_sample(cp, 20)
        fitted = fit_bezier(pts)
        np.testing.assert_allclose(fitted, cp, atol=1e-6)


# ----------------------------------------------------------------------
# pairwise relations
# ----------------------------------------------------------------------


def test_endpoint_min_distance_cases():
    a = BezierLane(np.array([[0, 0, 0], [0.3, 0, 0], [0.7, 0, 0], [1, 0, 0]], dtype=float))
    b = BezierLane(np.array([[3, 0, 0], [3.5, 0, 0], [4.5, 0, 0], [5, 0, 0]], dtype=float))
    assert endpoint_min_distance(a, a) == 0.0
    assert endpoint_min_distance(a, b) == pytest.approx(2.0, abs=1e-12)
    assert endpoint_min_distance(a, b) == endpoint_min_distance(b, a)


def test_endpoint_min_distance_matches_exhaustive():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a, b = random_lane(rng), random_lane(rng)
        brute = min(
            np.linalg.norm(pa[:2] - pb[:2])
            for pa in (a.start, a.end) for pb in (b.start, b.end)
        )
        assert endpoint_min_distance(a, b) == pytest.approx(brute, abs=1e-12)
        assert endpoint_min_distance(a, b) == endpoint_min_distance(b, a)


def test_angle_difference_canonical():
    def lane_dir(dx, dy):
        cp = np.zeros((4, 3))
        cp[3, 0], cp[3, 1] = dx, dy
        cp[1, :2] = cp[3, :2] / 3
        cp[2, :2] = 2 * cp[3, :2] / 3
        return BezierLane(cp)

    assert angle_difference(lane_dir(1, 0), lane_dir(2, 0)) == pytest.approx(0.0, abs=1e-12)
    assert angle_difference(lane_dir(1, 0), lane_dir(0, 1)) == pytest.approx(np.pi / 2, abs=1e-12)
    assert angle_difference(lane_dir(1, 0), lane_dir(-1, 0)) == pytest.approx(np.pi, abs=1e-12)


def test_angle_difference_symmetric_and_degenerate():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b = random_lane(rng), random_lane(rng)
        assert angle_difference(a, b) == angle_difference(b, a)
        assert 0.0 <= angle_difference(a, b) <= np.pi
    degenerate = np.zeros((4, 3))
    with pytest.raises(DataError):
        angle_difference(BezierLane(degenerate), a)


# ----------------------------------------------------------------------
# sinusoidal encoding
# ----------------------------------------------------------------------


def test_sinusoidal_zero_is_alternating():
    cfg = SinusoidalConfig(output_dim=8)
    np.testing.assert_allclose(sinusoidal_encode([0.0], cfg), [0, 1, 0, 1, 0, 1, 0, 1], atol=1e-15)


def test_sinusoidal_deterministic_and_distinguishable():
    cfg = SinusoidalConfig(output_dim=32)
    e1 = sinusoidal_encode([0.5], cfg)
    e2 = sinusoidal_encode([0.5], cfg)
    np.testing.assert_array_equal(e1, e2)
    e3 = sinusoidal_encode([5.0], cfg)
    cos_sim = e1 @ e3 / (np.linalg.norm(e1) * np.linalg.norm(e3))
    assert cos_sim < 0.999


def test_sinusoidal_concatenates_scalars():
    cfg = SinusoidalConfig(output_dim=8)
    enc = sinusoidal_encode([1.0, 2.0], cfg)
    assert enc.shape == (16,)
    np.testing.assert_array_equal(enc[:8], sinusoidal_encode([1.0], cfg))
    np.testing.assert_array_equal(enc[8:], sinusoidal_encode([2.0], cfg))


def test_sinusoidal_config_validation():
    with pytest.raises(DataError):
        SinusoidalConfig(output_dim=7)
    with pytest.raises(DataError):
        SinusoidalConfig(output_dim=8, temperature=0.0)


# ----------------------------------------------------------------------
# chamfer and Frechet
# ----------------------------------------------------------------------


def test_chamfer_basic():
    a = np.array([[0.0, 0.0]])
    b = np.array([[1.0, 0.0]])
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, b) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DataError):
        chamfer_distance(np.empty((0, 2)), b)


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(30):
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=(7, 3))
        fwd = np.mean([min(np.linalg.norm(p - q) for q in b) for p in a])
        bwd = np.mean([min(np.linalg.norm(q - p) for p in a) for q in b])
        assert chamfer_distance(a, b) == pytest.approx(0.5 * fwd + 0.5 * bwd, abs=1e-12)
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-15)


# independent memoized-recursion oracle for the Frechet DP
def frechet_oracle(p, q):
    import functools

    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        d = float(np.linalg.norm(p[i] - q[j]))
        if i == 0 and j == 0:
            return d
        if i == 0:
            return max(rec(0, j - 1), d)
        if j == 0:
            return max(rec(i - 1, 0), d)
        return max(min(rec(i - 1, j), rec(i - 1, j - 1), rec(i, j - 1)), d)

    return rec(len(p) - 1, len(q) - 1)


def test_frechet_identity_and_translation():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rng.normal(size=(8, 2))
        assert discrete_frechet(a, a) == 0.0
        d = rng.uniform(0.1, 3.0)
        shifted = a + np.array([0.0, d])
        assert discrete_frechet(a, shifted) == pytest.approx(d, abs=1e-12)


def test_frechet_matches_oracle():
    rng = np.random.default_rng(10)
    for _ in range(50):
        a = rng.normal(size=(rng.integers(1, 9), 2))
        b = rng.normal(size=(rng.integers(1, 9), 2))
        assert discrete_frechet(a, b) == pytest.approx(frechet_oracle(a, b), abs=1e-12)


def test_frechet_endpoint_lower_bound_and_hausdorff():
    rng = np.random.default_rng(11)
    for _ in range(30):
        a = rng.normal(size=(6, 2))
        b = rng.normal(size=(6, 2))
        f = discrete_frechet(a, b)
        assert f >= np.linalg.norm(a[0] - b[0]) - 1e-12
        assert f >= np.linalg.norm(a[-1] - b[-1]) - 1e-12
        d = np.linalg.norm(a[:, None] - b[None, :], axis=-1)
        hausdorff = max(d.min(axis=1).max(), d.min(axis=0).max())
        assert f >= hausdorff - 1e-12
    with pytest.raises(DataError):
        discrete_frechet(np.empty((0, 2)), b)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=8),
       st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=8))
def test_frechet_oracle_property(pa, pb):
    a, b = np.array(pa), np.array(pb)
    assert discrete_frechet(a, b) == pytest.approx(frechet_oracle(a, b), abs=1e-12)


# ----------------------------------------------------------------------
# camera projection
# ----------------------------------------------------------------------


def make_camera():
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    pos = np.array([0.0, 0.0, 1.5])
    intr = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
    return CameraModel(intr, rot, -rot @ pos, (640, 480))


def test_optical_axis_hits_principal_point():
    cam = make_camera()
    pix, valid = project_to_image(cam, np.array([[10.0, 0.0, 1.5]]))
    assert valid[0]
    np.testing.assert_allclose(pix[0], [320.0, 240.0], atol=1e-9)


def test_point_behind_camera_invalid():
    cam = make_camera()
    _, valid = project_to_image(cam, np.array([[-5.0, 0.0, 1.5]]))
    assert not valid[0]


def test_pinhole_offset_matches_hand_evaluation():
    cam = make_camera()
    # world (z0, -1, 1.5) is camera-frame (1, 0, z0): u = cx + fx/z0
    for z0 in (5.0, 10.0, 20.0):
        pix, valid = project_to_image(cam, np.array([[z0, -1.0, 1.5]]))
        assert valid[0]
        np.testing.assert_allclose(pix[0], [320.0 + 500.0 / z0, 240.0], atol=1e-9)


def test_camera_validation():
    with pytest.raises(DataError):
        CameraModel(np.eye(3), np.eye(3) * 2, np.zeros(3), (10, 10))
    bad_intr = np.array([[-1.0, 0, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(DataError):
        CameraModel(bad_intr, np.eye(3), np.zeros(3), (10, 10))


def test_out_of_bounds_pixel_invalid():
    cam = make_camera()
    _, valid = project_to_image(cam, np.array([[1.0, 30.0, 1.5]]))
    assert not valid[0]
