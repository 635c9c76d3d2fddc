"""Independent reference implementations used to freeze expected values.

Everything here is deliberately naive (scalar loops, direct formulas,
quaternion algebra) and shares no code with the package under test.
"""

import numpy as np


def quat_rotation_matrix(axis_angle):
    """Axis-angle -> rotation matrix via unit quaternion."""
    v = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta == 0.0:
        return np.eye(3)
    axis = v / theta
    w = np.cos(theta / 2.0)
    x, y, z = np.sin(theta / 2.0) * axis
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matvec_loop(theta, components, mean):
    """Triple-loop mean + theta . components."""
    out = np.array(mean, dtype=np.float64, copy=True)
    for j in range(components.shape[1]):
        for i in range(theta.shape[0]):
            out[j] += theta[i] * components[i, j]
    return out


def lbs_loop(theta, beta, arrays):
    """Naive per-vertex linear blend skinning on the raw model arrays."""
    template = arrays["template_vertices"]
    v_shaped = template + np.einsum("vdk,k->vd", arrays["shape_basis"], beta)
    joints_rest = arrays["joint_regressor"] @ v_shaped

    full = arrays["pca_pose_mean"] + theta @ arrays["pca_pose_components"]
    rots = [quat_rotation_matrix(full[3 * j: 3 * j + 3]) for j in range(15)]
    feat = np.concatenate([(r - np.eye(3)).reshape(9) for r in rots])
    v_posed = v_shaped + np.einsum("vdk,k->vd", arrays["pose_basis"], feat)

    parents = arrays["kinematic_parents"]
    glob_r = [np.eye(3)]
    glob_t = [joints_rest[0]]
    for j in range(1, 16):
        p = int(parents[j])
        glob_r.append(glob_r[p] @ rots[j - 1])
        glob_t.append(glob_t[p] + glob_r[p] @ (joints_rest[j] - joints_rest[p]))

    verts = np.zeros_like(template)
    for v in range(template.shape[0]):
        acc = np.zeros(3)
        for j in range(16):
            w = arrays["skin_weights"][v, j]
            if w != 0.0:
                acc += w * (glob_r[j] @ (v_posed[v] - joints_rest[j]) + glob_t[j])
        verts[v] = acc
    return verts, np.array(glob_t)


def apply_global_loop(verts, s, R, T):
    out = np.zeros_like(verts)
    for i, v in enumerate(verts):
        out[i] = s * (v @ R) + T
    return out


def project_loop(points, fx, fy, cx, cy):
    out = np.zeros((len(points), 2))
    for i, (x, y, z) in enumerate(points):
        out[i] = (fx * x / z + cx, fy * y / z + cy)
    return out


def vertex_normals_loop(verts, faces):
    acc = np.zeros_like(verts)
    for f in faces:
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        n = np.cross(b - a, c - a)
        for vid in f:
            acc[vid] += n
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def shade_loop(colors, normals, lighting):
    la, lac, ld, ldc, ldir = (lighting[0], lighting[1:4], lighting[4],
                              lighting[5:8], lighting[8:11])
    n = ldir / np.linalg.norm(ldir)
    out = np.zeros_like(colors)
    for i in range(len(colors)):
        lam = max(0.0, float(normals[i] @ n))
        out[i] = np.clip(colors[i] * (la * lac + ld * ldc * lam), 0.0, 1.0)
    return out


def smooth_l1_scalar(r, delta=1.0):
    a = abs(r)
    return 0.5 * r * r / delta if a < delta else a - 0.5 * delta


def e_loc_loop(points_det, conf, points_pro):
    total = 0.0
    for i in range(21):
        per = (smooth_l1_scalar(points_det[i, 0] - points_pro[i, 0])
               + smooth_l1_scalar(points_det[i, 1] - points_pro[i, 1])) / 2.0
        total += conf[i] * per
    return total / 21.0


def e_ori_loop(points_det, conf, points_pro, bones):
    total = 0.0
    contributions = []
    for a, b in bones:
        vd = points_det[b] - points_det[a]
        vp = points_pro[b] - points_pro[a]
        nd, np_ = np.linalg.norm(vd), np.linalg.norm(vp)
        if nd <= 1e-12 or np_ <= 1e-12:
            contributions.append(0.0)
            continue
        d = vd / nd - vp / np_
        contributions.append(conf[a] * conf[b] * float(d @ d))
        total += contributions[-1]
    return total / len(bones), contributions


def e_pixel_loop(image, render_color, silhouette, con_sum):
    total, count = 0.0, 0
    h, w = silhouette.shape
    for y in range(h):
        for x in range(w):
            if silhouette[y, x] > 0:
                count += 1
                total += float(np.linalg.norm(image[y, x] - render_color[y, x]))
    return con_sum * total / count if count else 0.0


def e_texture_loop(colors, con_sum):
    mean = colors.mean(axis=0)
    std = colors.std(axis=0)
    total = 0.0
    for c in colors:
        inside = all(mean[k] - 2 * std[k] < c[k] < mean[k] + 2 * std[k] for k in range(3))
        if not inside:
            d = c - mean
            total += float(d @ d)
    return con_sum * total / len(colors)


def e_skeleton_loop(angles_deg, ranges_deg):
    total = 0.0
    for b in range(15):
        for k in range(3):
            a = angles_deg[b, k]
            lo, hi = ranges_deg[b, k]
            if a <= lo:
                total += lo - a
            elif a >= hi:
                total += a - hi
    return total / 15.0


def e_joints3d_loop(joints, gt):
    total = 0.0
    for j, g in zip(joints, gt):
        d = j - g
        total += float(d @ d)
    return total / len(joints)


def ssim_naive(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct per-window SSIM with an explicit gaussian, channels averaged."""
    half = (window - 1) / 2.0
    xs = np.arange(window) - half
    g1 = np.exp(-xs * xs / (2 * sigma * sigma))
    g1 /= g1.sum()
    g = np.outer(g1, g1)
    h, w, _ = a.shape
    vals = []
    for ch in range(3):
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                pa = a[y:y + window, x:x + window, ch]
                pb = b[y:y + window, x:x + window, ch]
                mu_a = float((g * pa).sum())
                mu_b = float((g * pb).sum())
                var_a = float((g * pa * pa).sum()) - mu_a * mu_a
                var_b = float((g * pb * pb).sum()) - mu_b * mu_b
                cov = float((g * pa * pb).sum()) - mu_a * mu_b
                c1, c2 = k1 * k1, k2 * k2
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                            / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(vals))


def adam_scalar_steps(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (np.sqrt(vh) + eps)
    return x


def fscore_bruteforce(pred, gt, thr_mm):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    close_p = 0
    for p in pred:
        if min(np.linalg.norm(p - q) for q in gt) * 1000.0 <= thr_mm:
            close_p += 1
    close_g = 0
    for q in gt:
        if min(np.linalg.norm(p - q) for p in pred) * 1000.0 <= thr_mm:
            close_g += 1
    precision = close_p / len(pred)
    recall = close_g / len(gt)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pck_auc_direct(errors_mm):
    ts = np.linspace(0.0, 50.0, 100)
    pck = np.array([(np.asarray(errors_mm) <= t).mean() for t in ts])
    area = 0.0
    for i in range(len(ts) - 1):
        area += 0.5 * (pck[i] + pck[i + 1]) * (ts[i + 1] - ts[i])
    return area / 50.0
