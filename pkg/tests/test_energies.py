import numpy as np
import pytest
import torch

from handfit.camera import Intrinsics, Keypoints2D
from handfit.energies import (
    EnergyBreakdown,
    Weights,
    bone_angles,
    default_skeleton_prior,
    e_2d,
    e_beta,
    e_con,
    e_geo,
    e_joints3d,
    e_loc,
    e_ori,
    e_photo,
    e_pixel,
    e_regu,
    e_scale,
    e_skeleton,
    e_ssim,
    e_texture,
    e_total,
    load_skeleton_prior,
    smooth_l1,
    ssim,
)
from handfit.fitting import default_init
from handfit.hand_model import ALL_BONES, FINGER_BONES, MODEL_JOINT_OF, HandGeometry, forward_geometry, rodrigues
from handfit.renderer import RenderOutput, render
from handfit.toy_model import compose_local_rotation

from oracles import (
    e_joints3d_loop,
    e_loc_loop,
    e_ori_loop,
    e_pixel_loop,
    e_skeleton_loop,
    e_texture_loop,
    smooth_l1_scalar,
    ssim_naive,
)


def t64(x):
    return torch.tensor(np.asarray(x), dtype=torch.float64)


def kp(points, conf=None):
    conf = torch.ones(21, dtype=torch.float64) if conf is None else t64(conf)
    return Keypoints2D(points=t64(points), confidence=conf)


def random_kp(seed, scale=100.0, conf_range=(0.0, 1.0)):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, scale, (21, 2))
    conf = rng.uniform(*conf_range, 21)
    return kp(pts, conf), rng


class TestSmoothL1:
    def test_zero(self):
        assert float(smooth_l1(t64(0.0))) == 0.0

    def test_linear_branch(self):
        assert float(smooth_l1(t64(2.0))) == 1.5

    def test_continuity_at_delta(self):
        below = float(smooth_l1(t64(1.0 - 1e-12)))
        above = float(smooth_l1(t64(1.0 + 1e-12)))
        assert abs(below - above) < 1e-9
        # C1: derivative approaches 1 from both sides
        d_below = (float(smooth_l1(t64(1.0 - 1e-7))) - float(smooth_l1(t64(1.0 - 2e-7)))) / 1e-7
        d_above = (float(smooth_l1(t64(1.0 + 2e-7))) - float(smooth_l1(t64(1.0 + 1e-7)))) / 1e-7
        assert abs(d_below - d_above) < 1e-6

    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            smooth_l1(t64(1.0), delta=0.0)


class TestELoc:
    def test_fixed_point(self):
        pts = np.random.default_rng(0).uniform(0, 100, (21, 2))
        assert float(e_loc(kp(pts), t64(pts))) == 0.0

    def test_single_joint_two_pixels(self):
        pts = np.zeros((21, 2))
        pro = pts.copy()
        pro[5, 0] += 2.0
        # (1/21) * smooth_l1(2)/2 averaged over coords = 1.5 / 42
        assert float(e_loc(kp(pts), t64(pro))) == pytest.approx(1.5 / 42.0, abs=1e-15)

    def test_zero_confidence_gates_everything(self):
        det, rng = random_kp(1, conf_range=(0.0, 0.0))
        pro = t64(rng.uniform(0, 100, (21, 2)))
        assert float(e_loc(det, pro)) == 0.0

    def test_matches_loop_oracle(self):
        det, rng = random_kp(2)
        pro = t64(rng.uniform(0, 100, (21, 2)))
        want = e_loc_loop(det.points.numpy(), det.confidence.numpy(), pro.numpy())
        assert float(e_loc(det, pro)) == pytest.approx(want, rel=1e-14)

    def test_confidence_zero_joints_invariant(self):
        det, rng = random_kp(3)
        conf = det.confidence.clone()
        conf[[4, 9]] = 0.0
        det = Keypoints2D(points=det.points, confidence=conf)
        pro = t64(rng.uniform(0, 100, (21, 2)))
        moved = pro.clone()
        moved[[4, 9]] += 500.0
        assert float(e_loc(det, pro)) == pytest.approx(float(e_loc(det, moved)), abs=1e-15)


class TestEOri:
    def test_fixed_point(self):
        det, _ = random_kp(4)
        assert float(e_ori(det, det.points.clone())) == 0.0

    def test_antipodal_bone(self):
        pts = np.random.default_rng(5).uniform(0, 50, (21, 2))
        pro = pts.copy()
        a, b = 3, 4  # fingertip bone: joint 4 belongs to no other bone
        pro[b] = 2 * pts[a] - pts[b]  # reverse it about its root
        # only that bone contributes: ||v - (-v)||^2 = 4, / 20 bones
        assert float(e_ori(kp(pts), t64(pro))) == pytest.approx(4.0 / 20.0, rel=1e-12)

    def test_matches_loop_oracle(self):
        det, rng = random_kp(6)
        pro = t64(rng.uniform(0, 100, (21, 2)))
        want, _ = e_ori_loop(det.points.numpy(), det.confidence.numpy(), pro.numpy(), ALL_BONES)
        assert float(e_ori(det, pro)) == pytest.approx(want, rel=1e-13)

    def test_zero_length_detected_bone_skipped(self):
        pts = np.random.default_rng(7).uniform(0, 50, (21, 2))
        pts[1] = pts[0]  # palm bone 0->1 degenerate
        pro = np.random.default_rng(8).uniform(0, 50, (21, 2))
        val = float(e_ori(kp(pts), t64(pro)))
        assert np.isfinite(val)
        want, _ = e_ori_loop(pts, np.ones(21), pro, ALL_BONES)
        assert val == pytest.approx(want, rel=1e-13)

    def test_bone_length_invariance(self):
        det, rng = random_kp(9, conf_range=(1.0, 1.0))
        pro = t64(rng.uniform(0, 100, (21, 2)))
        _, contrib_before = e_ori_loop(det.points.numpy(), det.confidence.numpy(),
                                       pro.numpy(), ALL_BONES)
        bone_i = 7
        a, b = ALL_BONES[bone_i]
        mid = (det.points[a] + det.points[b]) / 2
        scaled = (det.points - mid) * 3.0 + mid
        _, contrib_after = e_ori_loop(scaled.numpy(), det.confidence.numpy(),
                                      pro.numpy(), ALL_BONES)
        assert contrib_after[bone_i] == pytest.approx(contrib_before[bone_i], abs=1e-9)


def test_e_geo_composition():
    det, rng = random_kp(10)
    pro = t64(rng.uniform(0, 100, (21, 2)))
    w_ori = 100.0
    want = float(e_loc(det, pro)) + w_ori * float(e_ori(det, pro))
    assert float(e_geo(det, pro, w_ori)) == pytest.approx(want, rel=1e-14)
    assert float(e_geo(det, det.points.clone(), w_ori)) == 0.0


def make_render(color, silhouette, depth=None):
    sil = t64(silhouette)
    if depth is None:
        depth = torch.where(sil > 0, torch.full_like(sil, 0.5),
                            torch.full_like(sil, float("inf")))
    return RenderOutput(color=t64(color), silhouette=sil, depth=depth)


class TestEPixel:
    def test_fixed_point(self):
        rng = np.random.default_rng(11)
        img = rng.uniform(0, 1, (16, 16, 3))
        sil = (rng.uniform(0, 1, (16, 16)) > 0.5).astype(float)
        out = make_render(img, sil)
        assert float(e_pixel(t64(img), out, t64(21.0))) == 0.0

    def test_single_pixel_example(self):
        img = np.zeros((10, 10, 3))
        ren = np.zeros((10, 10, 3))
        sil = np.ones((10, 10))
        img[3, 4, 0] = 0.3  # one silhouette pixel differs by (0.3, 0, 0)
        out = make_render(ren, sil)
        assert float(e_pixel(t64(img), out, t64(21.0))) == pytest.approx(21 * 0.3 / 100, rel=1e-14)

    def test_empty_silhouette_is_zero(self):
        img = np.random.default_rng(12).uniform(0, 1, (8, 8, 3))
        out = make_render(np.zeros((8, 8, 3)), np.zeros((8, 8)))
        assert float(e_pixel(t64(img), out, t64(21.0))) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(13)
        img = rng.uniform(0, 1, (12, 12, 3))
        ren = rng.uniform(0, 1, (12, 12, 3))
        sil = (rng.uniform(0, 1, (12, 12)) > 0.4).astype(float)
        out = make_render(ren, sil)
        want = e_pixel_loop(img, ren, sil, 17.5)
        assert float(e_pixel(t64(img), out, t64(17.5))) == pytest.approx(want, rel=1e-13)


class TestESSIM:
    def test_fixed_point_exact_zero(self):
        rng = np.random.default_rng(14)
        img = rng.uniform(0, 1, (16, 16, 3))
        sil = np.ones((16, 16))
        out = make_render(img, sil)
        assert float(e_ssim(t64(img), out)) == 0.0

    def test_negative_image_strongly_dissimilar(self):
        rng = np.random.default_rng(15)
        img = rng.uniform(0, 1, (16, 16, 3))
        out = make_render(1.0 - img, np.ones((16, 16)))
        val = float(e_ssim(t64(img), out))
        assert 0.5 < val <= 2.0

    def test_symmetry(self):
        rng = np.random.default_rng(16)
        a = t64(rng.uniform(0, 1, (14, 14, 3)))
        b = t64(rng.uniform(0, 1, (14, 14, 3)))
        assert float(ssim(a, b)) == pytest.approx(float(ssim(b, a)), abs=1e-12)

    def test_matches_naive_windows(self):
        rng = np.random.default_rng(17)
        a = rng.uniform(0, 1, (13, 13, 3))
        b = rng.uniform(0, 1, (13, 13, 3))
        want = ssim_naive(a, b)
        assert float(ssim(t64(a), t64(b))) == pytest.approx(want, rel=1e-10)

    def test_too_small_image_rejected(self):
        a = t64(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError, match="window"):
            ssim(a, a)


def test_e_photo_composition():
    rng = np.random.default_rng(18)
    img = t64(rng.uniform(0, 1, (16, 16, 3)))
    out = make_render(rng.uniform(0, 1, (16, 16, 3)), np.ones((16, 16)))
    want = float(e_pixel(img, out, t64(21.0))) + 0.2 * float(e_ssim(img, out))
    assert float(e_photo(img, out, t64(21.0), 0.2)) == pytest.approx(want, rel=1e-14)


class TestEBeta:
    def test_zero(self):
        assert float(e_beta(torch.zeros(10, dtype=torch.float64))) == 0.0

    def test_squared_form(self):
        b = torch.zeros(10, dtype=torch.float64)
        b[0] = 2.0
        assert float(e_beta(b)) == 4.0

    def test_matches_loop(self):
        rng = np.random.default_rng(19)
        b = rng.normal(size=10)
        assert float(e_beta(t64(b))) == pytest.approx(sum(v * v for v in b), rel=1e-14)


class TestETexture:
    def test_uniform_colors_zero(self):
        colors = torch.full((778, 3), 0.5, dtype=torch.float64)
        assert float(e_texture(colors, t64(21.0))) == 0.0

    def test_single_outlier_contributes_squared_distance(self):
        rng = np.random.default_rng(20)
        colors = 0.5 + 0.01 * rng.normal(size=(778, 3))
        mean0 = colors.mean(axis=0)
        sig0 = colors.std(axis=0)
        colors[0] = mean0 + np.array([3.5 * sig0[0], 0, 0])
        got = float(e_texture(t64(colors), t64(21.0)))
        want = e_texture_loop(colors, 21.0)
        assert got == pytest.approx(want, rel=1e-12)
        assert got > 0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(21)
        colors = np.clip(0.6 + 0.15 * rng.normal(size=(778, 3)), 0, 1)
        got = float(e_texture(t64(colors), t64(10.0)))
        want = e_texture_loop(colors, 10.0)
        assert got == pytest.approx(want, rel=1e-12)


class TestEScale:
    def _geometry(self, length):
        joints = torch.zeros(21, 3, dtype=torch.float64)
        joints[10, 0] = length
        return HandGeometry(vertices=torch.zeros(778, 3, dtype=torch.float64), joints21=joints)

    def test_target_length_exact_zero(self):
        assert float(e_scale(self._geometry(0.0282))) == 0.0

    def test_one_centimeter_off(self):
        assert float(e_scale(self._geometry(0.0382))) == pytest.approx(1e-4, rel=1e-12)

    def test_matches_hand_computation(self):
        rng = np.random.default_rng(22)
        joints = rng.normal(size=(21, 3)) * 0.02
        geo = HandGeometry(vertices=torch.zeros(778, 3, dtype=torch.float64), joints21=t64(joints))
        l = np.linalg.norm(joints[10] - joints[9])
        assert float(e_scale(geo)) == pytest.approx((l - 0.0282) ** 2, rel=1e-12)


class TestBoneAngles:
    def test_identity_pose_all_zero(self, model):
        angles, flags = bone_angles(torch.zeros(30, dtype=torch.float64), model)
        assert torch.equal(angles, torch.zeros(15, 3, dtype=torch.float64))
        assert not bool(flags.any())

    def test_pure_roll_rotation(self, model):
        from handfit.toy_model import axis_angle_from_matrix, theta_for_joint_rotations
        # rotate the index MCP (model joint 1, bone 5->6, prior row 3) by 30 deg roll
        frame = model.finger_bone_frames[3].numpy()
        R = compose_local_rotation(frame, 0.0, 0.0, 30.0)
        theta = theta_for_joint_rotations({1: axis_angle_from_matrix(R)},
                                          model.pca_pose_components.numpy())
        angles, flags = bone_angles(t64(theta), model)
        assert float(angles[3, 2]) == pytest.approx(30.0, abs=1e-9)
        assert float(angles[3, 0]) == pytest.approx(0.0, abs=1e-9)
        assert float(angles[3, 1]) == pytest.approx(0.0, abs=1e-9)
        mask = torch.ones(15, dtype=torch.bool)
        mask[3] = False
        assert float(angles[mask].abs().max()) < 1e-9

    def test_factor_recompose_round_trip(self, model):
        from handfit.toy_model import axis_angle_from_matrix, theta_for_joint_rotations
        rng = np.random.default_rng(23)
        targets = {}
        for mj, row in [(1, 3), (4, 6), (13, 0)]:
            az, pi_, ro = rng.uniform(-25, 25), rng.uniform(-60, 8), rng.uniform(-4, 4)
            R = compose_local_rotation(model.finger_bone_frames[row].numpy(), az, pi_, ro)
            targets[(mj, row)] = (az, pi_, ro, R)
        theta = theta_for_joint_rotations(
            {mj: axis_angle_from_matrix(R) for (mj, _), (_, _, _, R) in targets.items()},
            model.pca_pose_components.numpy())
        angles, _ = bone_angles(t64(theta), model)
        for (mj, row), (az, pi_, ro, R) in targets.items():
            got = angles[row].numpy()
            assert np.allclose(got, [az, pi_, ro], atol=1e-9)
            recomposed = compose_local_rotation(model.finger_bone_frames[row].numpy(), *got)
            assert np.max(np.abs(recomposed - R)) < 1e-9


class TestESkeleton:
    def test_zero_pose_feasible(self, model, prior):
        assert float(e_skeleton(torch.zeros(30, dtype=torch.float64), model, prior)) == 0.0

    def test_fifteen_degrees_over_max(self, model, prior):
        from handfit.toy_model import axis_angle_from_matrix, theta_for_joint_rotations
        # index MCP pitch max is 10 deg; set pitch = 25 -> penalty 15 / 15 bones = 1.0
        frame = model.finger_bone_frames[3].numpy()
        R = compose_local_rotation(frame, 0.0, 25.0, 0.0)
        theta = theta_for_joint_rotations({1: axis_angle_from_matrix(R)},
                                          model.pca_pose_components.numpy())
        assert float(e_skeleton(t64(theta), model, prior)) == pytest.approx(1.0, abs=1e-9)

    def test_matches_loop_oracle(self, model, prior):
        rng = np.random.default_rng(24)
        theta = t64(rng.normal(scale=0.4, size=30))
        angles, _ = bone_angles(theta, model)
        want = e_skeleton_loop(angles.numpy(), prior.ranges.numpy())
        assert float(e_skeleton(theta, model, prior)) == pytest.approx(want, rel=1e-12)

    def test_prior_table_matches_published_values(self, prior):
        r = prior.ranges.numpy()
        assert r[0].tolist() == [[-22.5, 33.75], [-22.5, 22.5], [0.0, 90.0]]   # thumb MCP
        assert r[2].tolist() == [[-5.0, 5.0], [-100.0, 20.0], [-5.0, 5.0]]     # thumb DIP
        assert r[12].tolist() == [[-10.0, 20.0], [-100.0, 10.0], [-20.0, 5.0]]  # pinky MCP
        assert r[6].tolist() == [[-10.0, 10.0], [-100.0, 10.0], [-5.0, 5.0]]   # middle MCP


class TestE2dAndCon:
    def test_e2d_mirrors_loc(self):
        det, rng = random_kp(25)
        est = t64(rng.uniform(0, 100, (21, 2)))
        assert float(e_2d(det, est)) == pytest.approx(
            e_loc_loop(det.points.numpy(), det.confidence.numpy(), est.numpy()), rel=1e-13)
        assert float(e_2d(det, det.points.clone())) == 0.0

    def test_con_half_pixel(self):
        pro = np.zeros((21, 2))
        est = pro.copy()
        est[0, 0] = 0.5
        want = (0.5 * 0.25) / 2.0 / 21.0  # quadratic branch, averaged over coords
        assert float(e_con(t64(pro), t64(est))) == pytest.approx(want, rel=1e-13)
        assert want == pytest.approx(0.002976190476190476)

    def test_con_symmetric(self):
        rng = np.random.default_rng(26)
        a = t64(rng.uniform(0, 100, (21, 2)))
        b = t64(rng.uniform(0, 100, (21, 2)))
        assert float(e_con(a, b)) == float(e_con(b, a))
        assert float(e_con(a, a.clone())) == 0.0


class TestEJoints3d:
    def test_fixed_point(self):
        j = t64(np.random.default_rng(27).normal(size=(21, 3)))
        assert float(e_joints3d(j, j.clone())) == 0.0

    def test_one_centimeter_z(self):
        j = torch.zeros(21, 3, dtype=torch.float64)
        g = j.clone()
        g[4, 2] = 0.01
        assert float(e_joints3d(j, g)) == pytest.approx(1e-4 / 21.0, rel=1e-13)

    def test_matches_loop(self):
        rng = np.random.default_rng(28)
        j = rng.normal(size=(21, 3))
        g = rng.normal(size=(21, 3))
        assert float(e_joints3d(t64(j), t64(g))) == pytest.approx(
            e_joints3d_loop(j, g), rel=1e-13)


class TestWeights:
    def test_published_defaults(self):
        w = Weights()
        assert (w.w_3d, w.w_2d, w.w_con) == (1.0, 0.001, 0.0002)
        assert (w.w_geo, w.w_photo, w.w_regu) == (0.001, 0.005, 0.01)
        assert (w.w_ori, w.w_ssim, w.w_c) == (100.0, 0.2, 0.5)
        assert (w.w_s, w.w_j, w.w_3dj) == (10000.0, 10.0, 100.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            Weights(w_geo=-0.1)


class TestETotal:
    def test_all_zero_terms(self, model, prior):
        det = kp(np.zeros((21, 2)))
        bd = e_total(weights=Weights(), detected=det, projected=torch.zeros(21, 2, dtype=torch.float64),
                     beta=torch.zeros(10, dtype=torch.float64))
        assert float(bd.total) == 0.0

    def test_recomposition_identity(self, model, prior, K64):
        state = default_init(trans_z=0.45)
        rng = np.random.default_rng(29)
        state.theta = t64(rng.normal(scale=0.2, size=30))
        state.beta = t64(rng.normal(scale=0.3, size=10))
        geo = forward_geometry(state.hand_params(), model)
        from handfit.camera import project
        projected = project(geo.joints21, K64)
        det, _ = random_kp(30, scale=64)
        image = t64(np.random.default_rng(31).uniform(0, 1, (64, 64, 3)))
        out = render(geo, state.appearance(), model.faces, K64)
        est = t64(np.random.default_rng(32).uniform(0, 64, (21, 2)))
        gt3 = geo.joints21.detach() + 0.01
        w = Weights()
        bd = e_total(weights=w, detected=det, projected=projected, estimated=est,
                     image=image, render_out=out, theta=state.theta, beta=state.beta,
                     colors=state.colors, geometry=geo, model=model, prior=prior,
                     gt_joints3d=gt3)
        geo_c = bd.loc + w.w_ori * bd.ori
        photo_c = bd.pixel + w.w_ssim * bd.ssim
        regu_c = bd.beta + w.w_c * bd.tex + w.w_s * bd.scale + w.w_j * bd.skel
        e3d_c = w.w_geo * geo_c + w.w_photo * photo_c + w.w_regu * regu_c
        total_c = w.w_3d * e3d_c + w.w_2d * bd.e2d + w.w_con * bd.con + w.w_3dj * bd.joints3d
        assert abs(float(bd.total - total_c)) < 1e-10
        assert abs(float(bd.geo - geo_c)) < 1e-10
        assert abs(float(bd.photo - photo_c)) < 1e-10
        assert abs(float(bd.regu - regu_c)) < 1e-10
        for name in ("loc", "ori", "pixel", "ssim", "beta", "tex", "scale", "skel",
                     "e2d", "con", "joints3d"):
            assert float(getattr(bd, name)) >= 0.0

    def test_hand_computed_sum_on_synthetic_fixture(self, model, prior):
        det, rng = random_kp(33)
        pro = t64(rng.uniform(0, 100, (21, 2)))
        theta = t64(rng.normal(scale=0.2, size=30))
        beta = t64(rng.normal(scale=0.3, size=10))
        colors = t64(np.clip(0.6 + 0.1 * rng.normal(size=(778, 3)), 0, 1))
        joints = t64(rng.normal(size=(21, 3)) * 0.05)
        geo = HandGeometry(vertices=torch.zeros(778, 3, dtype=torch.float64), joints21=joints)
        w = Weights()
        bd = e_total(weights=w, detected=det, projected=pro, theta=theta, beta=beta,
                     colors=colors, geometry=geo, model=model, prior=prior)
        con_sum = float(det.con_sum)
        angles, _ = bone_angles(theta, model)
        want = w.w_3d * (
            w.w_geo * (e_loc_loop(det.points.numpy(), det.confidence.numpy(), pro.numpy())
                       + w.w_ori * e_ori_loop(det.points.numpy(), det.confidence.numpy(),
                                              pro.numpy(), ALL_BONES)[0])
            + w.w_regu * (float(beta.dot(beta))
                          + w.w_c * e_texture_loop(colors.numpy(), con_sum)
                          + w.w_s * (np.linalg.norm((joints[10] - joints[9]).numpy()) - 0.0282) ** 2
                          + w.w_j * e_skeleton_loop(angles.numpy(), prior.ranges.numpy())))
        assert float(bd.total) == pytest.approx(want, rel=1e-12)

    def test_estimated_terms_gated(self, model, prior):
        det, rng = random_kp(34)
        pro = t64(rng.uniform(0, 100, (21, 2)))
        without = e_total(weights=Weights(), detected=det, projected=pro)
        assert float(without.e2d) == 0.0 and float(without.con) == 0.0
        est = t64(rng.uniform(0, 100, (21, 2)))
        with_est = e_total(weights=Weights(), detected=det, projected=pro, estimated=est)
        assert float(with_est.e2d) > 0.0 and float(with_est.con) > 0.0


def test_skeleton_prior_loader_rejects_bad_ranges(tmp_path):
    import json
    doc = {"bones": [{"bone": list(b), "azimuth": [-5, 5], "pitch": [-5, 5], "roll": [5, -5]}
                     for b in FINGER_BONES]}
    p = tmp_path / "prior.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="min < max"):
        load_skeleton_prior(p)


def test_energy_gradients_match_fd_per_term(model, prior):
    # light spot check here; the full 20-config sweep lives in the acceptance suite
    from handfit.gradcheck import run_gradcheck
    rows = run_gradcheck(model, prior, Weights(), size=48, seed=1, configs=1,
                         coords_per_block=3)
    for row in rows:
        assert row.passed, f"{row.term}/{row.block}: {row.max_rel_err:.2e} >= {row.tolerance}"
