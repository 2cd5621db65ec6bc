import numpy as np
import pytest
from hypothesis import given, strategies as st

from occface import scene as S

angles = st.floats(-np.pi, np.pi, allow_nan=False)


@given(angles, angles, angles)
def test_rotation_is_proper_orthogonal(p, y, r):
    R = S.rotation_matrix(S.Pose(p, y, r, 1.0))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_rotation_composition_order():
    # yaw alone turns +z toward +x
    R = S.rotation_matrix(S.Pose(yaw=np.pi / 2))
    np.testing.assert_allclose(R @ [0, 0, 1], [1, 0, 0], atol=1e-15)
    # roll after pitch: Rz @ Rx
    p, r = 0.3, -0.7
    cx, sx, cz, sz = np.cos(p), np.sin(p), np.cos(r), np.sin(r)
    want = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]]) @ np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    np.testing.assert_allclose(S.rotation_matrix(S.Pose(pitch=p, roll=r)), want, atol=1e-15)


def test_projection_flips_y_and_translates():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 5]], float)
    uv = S.project_points(pts, S.Pose(f=10, tx=64, ty=32))
    np.testing.assert_allclose(uv, [[64, 32], [74, 32], [64, 22], [64, 32]])


def test_pose_validation():
    with pytest.raises(S.SceneError):
        S.Pose(f=0.0)
    with pytest.raises(S.SceneError):
        S.Pose(tx=np.inf)
    with pytest.raises(S.SceneError):
        S.Pose.from_array([1, 2, 3])
    p = S.Pose(0.1, 0.2, 0.3, 4.0, 5.0, 6.0)
    assert S.Pose.from_array(p.as_array()) == p


def test_sh_constants():
    b = S.sh_basis([0.0, 0.0, 1.0])
    assert b[0] == pytest.approx(0.28209479, abs=1e-7)
    assert b[2] == pytest.approx(0.48860251, abs=1e-7)
    assert b[6] == pytest.approx(2 * 0.31539157, abs=1e-7)
    b = S.sh_basis([1.0, 0.0, 0.0])
    assert b[3] == pytest.approx(0.48860251, abs=1e-7)
    assert b[8] == pytest.approx(0.54627422, abs=1e-7)
    n = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert S.sh_basis(n)[4] == pytest.approx(1.09254843 / 2, abs=1e-7)


def test_sh_monte_carlo_orthonormality():
    rng = np.random.default_rng(7)
    v = rng.standard_normal((100_000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    B = S.sh_basis(v)
    gram = 4 * np.pi * (B.T @ B) / len(v)
    assert np.abs(gram - np.eye(9)).max() < 2e-2


def test_sh_rejects_non_unit():
    with pytest.raises(S.SceneError):
        S.sh_basis([0.0, 0.0, 2.0])
    with pytest.raises(S.SceneError):
        S.sh_basis(np.zeros((3, 2)))


@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_neutral_illumination_reproduces_albedo(n, seed):
    rng = np.random.default_rng(seed)
    albedo = rng.uniform(0, 1, (n, 3))
    normals = rng.standard_normal((n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    for ch in (1, 3):
        out = S.shade(albedo, normals, S.neutral_illumination(ch))
        np.testing.assert_allclose(out, albedo, rtol=0, atol=1e-15)


def test_irradiance_mono_broadcast_and_color():
    B = S.sh_basis(np.array([[0, 0, 1.0], [0, 1.0, 0]]))
    g = np.arange(9, dtype=float)
    mono = S.irradiance(B, g)
    assert mono.shape == (2, 3)
    np.testing.assert_allclose(mono[:, 0], B @ g)
    np.testing.assert_array_equal(mono[:, 0], mono[:, 2])
    rgb = S.irradiance(B, np.concatenate([g, 2 * g, 3 * g]))
    np.testing.assert_allclose(rgb[:, 2], 3 * (B @ g))
    with pytest.raises(S.SceneError):
        S.as_illumination(np.zeros(10))


def test_vertex_normals_of_a_flat_quad():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [5, 5, 5]], float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    n = S.vertex_normals(v, tris)
    np.testing.assert_allclose(n[:4], np.tile([0, 0, 1.0], (4, 1)))
    np.testing.assert_allclose(n[4], [0, 0, 1.0])      # unreferenced vertex falls back to +z


@given(angles, angles, angles, st.floats(0.5, 50), st.floats(-100, 100), st.floats(-100, 100))
def test_camera_space_matches_reference_pipeline(p, y, r, f, tx, ty):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((30, 3))
    tris = rng.integers(0, 30, (40, 3))
    pose = S.Pose(p, y, r, f, tx, ty)
    screen, depth, sh = S.camera_space(v, tris, pose)
    R = S.rotation_matrix(pose)
    np.testing.assert_allclose(screen, S.project_points(v, pose), atol=1e-9)
    np.testing.assert_allclose(depth, -f * (v @ R[2]), atol=1e-9)
    normals = S.vertex_normals(v, tris) @ R.T
    np.testing.assert_allclose(sh, S.sh_basis(normals, check=False), atol=1e-12)


def test_yaw_quarter_turn_sends_x_to_minus_z():
    R = S.rotation_matrix(S.Pose(yaw=np.pi / 2))
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 0, -1], atol=1e-15)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)


def test_projection_matches_per_vertex_oracle(rng):
    v = rng.standard_normal((25, 3))
    pose = S.Pose(0.2, -0.4, 0.7, 12.0, 30.0, -5.0)
    R = S.rotation_matrix(pose)
    want = []
    for p in v:
        q = [sum(R[i, j] * p[j] for j in range(3)) for i in range(2)]
        want.append([pose.f * q[0] + pose.tx, -pose.f * q[1] + pose.ty])
    np.testing.assert_allclose(S.project_points(v, pose), want, rtol=1e-12, atol=1e-12)


def test_band_one_at_plus_z():
    b = S.sh_basis([0.0, 0.0, 1.0])
    np.testing.assert_allclose(b[1:4], [0.0, 0.4886025, 0.0], atol=1e-6)


def test_shade_matches_scalar_oracle(rng):
    n = 12
    albedo = rng.uniform(0, 1, (n, 3))
    normals = rng.standard_normal((n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    gamma = rng.normal(0, 0.5, 27)
    got = S.shade(albedo, normals, gamma)
    B = S.sh_basis(normals)
    want = np.zeros((n, 3))
    for i in range(n):
        for c in range(3):
            want[i, c] = albedo[i, c] * sum(gamma[9 * c + k] * B[i, k] for k in range(9))
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def icosphere(levels=2):
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
         (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(levels):
        mid = {}

        def m(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                mid[key] = len(verts) - 1
            return mid[key]

        f = [t for a, b, c in f for t in ((a, m(a, b), m(a, c)), (b, m(b, c), m(a, b)),
                                          (c, m(a, c), m(b, c)), (m(a, b), m(b, c), m(a, c)))]
    return np.array(verts), np.array(f)


def test_icosphere_normals_are_radial():
    v, f = icosphere(3)
    # orient every face outward
    nrm = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    inward = np.einsum("ij,ij->i", nrm, v[f].mean(axis=1)) < 0
    f[inward] = f[inward][:, ::-1]
    n = S.vertex_normals(v, f)
    assert np.abs(n - v).max() < 2e-2


def test_degenerate_triangle_adds_nothing():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [2, 2, 2]], float)
    base = S.vertex_normals(v, np.array([[0, 1, 2], [0, 2, 3]]))
    with_degenerate = S.vertex_normals(v, np.array([[0, 1, 2], [0, 2, 3], [0, 0, 4]]))
    np.testing.assert_array_equal(base[:4], with_degenerate[:4])
