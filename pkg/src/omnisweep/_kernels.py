"""Compiled inner loops shared by the geometry and sweep modules.

Every parallel loop writes each output element from exactly one iteration,
so results do not depend on the thread count or schedule.
"""

import math
import warnings

import numpy as np
from numba import njit, prange, NumbaWarning

warnings.filterwarnings("ignore", category=NumbaWarning)

# layout of the packed intrinsics vector handed to the kernels
FX, FY, CX, CY, K1, K2, K3, K4, HALF_H, HALF_V, WIDTH, HEIGHT, THETA_MAX = range(13)
N_INTRINSICS = 13


@njit(cache=True, inline="always")
def _project_point(x, y, z, intr):
    rho = math.sqrt(x * x + y * y)
    theta = math.atan2(rho, z)
    if rho > 0.0:
        cphi = x / rho
        sphi = y / rho
    else:
        cphi = 1.0
        sphi = 0.0
    t2 = theta * theta
    poly = 1.0 + t2 * (intr[K1] + t2 * (intr[K2] + t2 * (intr[K3] + t2 * intr[K4])))
    r = intr[FX] * theta * poly
    u = intr[CX] + r * cphi
    v = intr[CY] + r * sphi * (intr[FY] / intr[FX])

    th = theta * cphi / intr[HALF_H]
    tv = theta * sphi / intr[HALF_V]
    ok = th * th + tv * tv <= 1.0 + 1e-12
    ok = ok and theta <= intr[THETA_MAX]
    ok = ok and u >= 0.0 and u < intr[WIDTH] and v >= 0.0 and v < intr[HEIGHT]
    return u, v, ok


@njit(cache=True)
def project_points(pts, intr, out_uv, out_ok):
    for i in range(pts.shape[0]):
        u, v, ok = _project_point(pts[i, 0], pts[i, 1], pts[i, 2], intr)
        out_uv[i, 0] = u
        out_uv[i, 1] = v
        out_ok[i] = ok


@njit(cache=True, inline="always")
def _sphere_to_feature(depth, dx, dy, dz, rot_t, trans, intr, stride):
    px = depth * dx - trans[0]
    py = depth * dy - trans[1]
    pz = depth * dz - trans[2]
    x = rot_t[0, 0] * px + rot_t[0, 1] * py + rot_t[0, 2] * pz
    y = rot_t[1, 0] * px + rot_t[1, 1] * py + rot_t[1, 2] * pz
    z = rot_t[2, 0] * px + rot_t[2, 1] * py + rot_t[2, 2] * pz
    u, v, ok = _project_point(x, y, z, intr)
    half = 0.5 * (stride - 1.0)
    return (u - half) / stride, (v - half) / stride, ok


@njit(cache=True, parallel=True)
def build_single_camera(dirs, depths, cam_index, rot_t, trans, intr, stride,
                        out_cam, out_x, out_y):
    n_d = depths.shape[0]
    n_h, n_w = dirs.shape[0], dirs.shape[1]
    for d in prange(n_d):
        depth = depths[d]
        for h in range(n_h):
            for w in range(n_w):
                sx, sy, ok = _sphere_to_feature(depth, dirs[h, w, 0], dirs[h, w, 1], dirs[h, w, 2],
                                                rot_t[cam_index], trans[cam_index],
                                                intr[cam_index], stride)
                if ok:
                    out_cam[d, h, w] = cam_index
                    out_x[d, h, w] = sx
                    out_y[d, h, w] = sy
                else:
                    out_cam[d, h, w] = -1
                    out_x[d, h, w] = 0.0
                    out_y[d, h, w] = 0.0


@njit(cache=True, parallel=True)
def build_group(dirs, depths, ranking, rot_t, trans, intr, stride,
                out_cam, out_x, out_y):
    """Resolve the per-group stitch while building: first valid camera in ranking order."""
    n_d = depths.shape[0]
    n_h, n_w = dirs.shape[0], dirs.shape[1]
    n_rank = ranking.shape[2]
    for d in prange(n_d):
        depth = depths[d]
        for h in range(n_h):
            for w in range(n_w):
                out_cam[d, h, w] = -1
                out_x[d, h, w] = 0.0
                out_y[d, h, w] = 0.0
                for k in range(n_rank):
                    c = ranking[h, w, k]
                    sx, sy, ok = _sphere_to_feature(depth, dirs[h, w, 0], dirs[h, w, 1], dirs[h, w, 2],
                                                    rot_t[c], trans[c], intr[c], stride)
                    if ok:
                        out_cam[d, h, w] = c
                        out_x[d, h, w] = sx
                        out_y[d, h, w] = sy
                        break


@njit(cache=True, parallel=True)
def stitch_plan(valid, ranking, out_plan):
    """valid: (6, D, H, W) per-camera validity; picks first valid camera in ranking."""
    n_d, n_h, n_w = valid.shape[1], valid.shape[2], valid.shape[3]
    n_rank = ranking.shape[2]
    for d in prange(n_d):
        for h in range(n_h):
            for w in range(n_w):
                out_plan[d, h, w] = -1
                for k in range(n_rank):
                    c = ranking[h, w, k]
                    if valid[c, d, h, w]:
                        out_plan[d, h, w] = c
                        break


@njit(cache=True, parallel=True)
def gather_bilinear(feats, dims, cam, src_x, src_y, out):
    """feats: (6, C, hmax, wmax); dims: (6, 2) as (h, w); out: (C, D, H, W)."""
    n_c = feats.shape[1]
    n_d, n_h, n_w = cam.shape
    for d in prange(n_d):
        for h in range(n_h):
            for w in range(n_w):
                c = cam[d, h, w]
                if c < 0:
                    for ch in range(n_c):
                        out[ch, d, h, w] = 0.0
                    continue
                fh = dims[c, 0]
                fw = dims[c, 1]
                x = src_x[d, h, w]
                y = src_y[d, h, w]
                x0f = math.floor(x)
                y0f = math.floor(y)
                ax = x - x0f
                ay = y - y0f
                x0 = min(max(int(x0f), 0), fw - 1)
                x1 = min(max(int(x0f) + 1, 0), fw - 1)
                y0 = min(max(int(y0f), 0), fh - 1)
                y1 = min(max(int(y0f) + 1, 0), fh - 1)
                w00 = (1.0 - ax) * (1.0 - ay)
                w01 = ax * (1.0 - ay)
                w10 = (1.0 - ax) * ay
                w11 = ax * ay
                for ch in range(n_c):
                    f = feats[c, ch]
                    out[ch, d, h, w] = (w00 * f[y0, x0] + w01 * f[y0, x1]
                                        + w10 * f[y1, x0] + w11 * f[y1, x1])


@njit(cache=True, parallel=True)
def stitch_spheres(spheres, plan, out):
    """spheres: (6, C, D, H, W) per-camera warps; plan: (D, H, W) winning camera."""
    n_c = spheres.shape[1]
    n_d, n_h, n_w = plan.shape
    for d in prange(n_d):
        for h in range(n_h):
            for w in range(n_w):
                c = plan[d, h, w]
                if c < 0:
                    for ch in range(n_c):
                        out[ch, d, h, w] = 0.0
                else:
                    for ch in range(n_c):
                        out[ch, d, h, w] = spheres[c, ch, d, h, w]


@njit(cache=True)
def value_noise(p, perm, values, octaves, out):
    """Multi-octave trilinear lattice noise with smoothstep fade, averaged in [0, 1]."""
    for i in range(p.shape[0]):
        total = 0.0
        amp_sum = 0.0
        amp = 1.0
        for o in range(octaves):
            scale = 2.0 ** o
            acc = 0.0
            qx = p[i, 0] * scale + 17.0 * o
            qy = p[i, 1] * scale + 17.0 * o
            qz = p[i, 2] * scale + 17.0 * o
            bx = math.floor(qx)
            by = math.floor(qy)
            bz = math.floor(qz)
            fx = qx - bx
            fy = qy - by
            fz = qz - bz
            fx = fx * fx * (3.0 - 2.0 * fx)
            fy = fy * fy * (3.0 - 2.0 * fy)
            fz = fz * fz * (3.0 - 2.0 * fz)
            ix = np.int64(bx)
            iy = np.int64(by)
            iz = np.int64(bz)
            for dx in range(2):
                wx = fx if dx else 1.0 - fx
                for dy in range(2):
                    wy = fy if dy else 1.0 - fy
                    for dz in range(2):
                        wz = fz if dz else 1.0 - fz
                        h = perm[(perm[(perm[(ix + dx) & 255] + iy + dy) & 255] + iz + dz) & 255]
                        acc += wx * wy * wz * values[h]
            total += amp * acc
            amp_sum += amp
            amp *= 0.5
        out[i] = total / amp_sum


def as_intrinsics(cameras):
    out = np.empty((len(cameras), N_INTRINSICS), dtype=np.float64)
    for i, cam in enumerate(cameras):
        out[i] = cam.intrinsics_vector()
    return out


@njit(cache=True, inline="always")
def _box(ii, y0, y1, x0, x1):
    return ii[y1 + 1, x1 + 1] - ii[y0, x1 + 1] - ii[y1 + 1, x0] + ii[y0, x0]


@njit(cache=True)
def _integral(img):
    h, w = img.shape
    ii = np.zeros((h + 1, w + 1))
    for y in range(h):
        run = 0.0
        for x in range(w):
            run += img[y, x]
            ii[y + 1, x + 1] = ii[y, x + 1] + run
    return ii


@njit(cache=True, parallel=True)
def ncc_volume(left, right, max_disp, radius, eps, out):
    """out[d, y, x] = NCC of left around (y, x) with right around (y, x - d).

    Windows are clipped at the top and bottom image rows; columns whose
    window leaves either image are NaN, as are pairs with variance product
    below ``eps``.
    """
    h, w = left.shape
    il = _integral(left)
    il2 = _integral(left * left)
    ir = _integral(right)
    ir2 = _integral(right * right)
    for d in prange(max_disp + 1):
        prod = np.zeros((h + 1, w + 1))
        for y in range(h):
            run = 0.0
            for x in range(w):
                if x >= d:
                    run += left[y, x] * right[y, x - d]
                prod[y + 1, x + 1] = prod[y, x + 1] + run
        for y in range(h):
            y0 = max(y - radius, 0)
            y1 = min(y + radius, h - 1)
            for x in range(w):
                x0 = x - radius
                x1 = x + radius
                if x0 - d < 0 or x1 > w - 1:
                    out[d, y, x] = np.nan
                    continue
                n = (y1 - y0 + 1) * (x1 - x0 + 1)
                ml = _box(il, y0, y1, x0, x1) / n
                mr = _box(ir, y0, y1, x0 - d, x1 - d) / n
                vl = max(_box(il2, y0, y1, x0, x1) / n - ml * ml, 0.0)
                vr = max(_box(ir2, y0, y1, x0 - d, x1 - d) / n - mr * mr, 0.0)
                den = math.sqrt(vl * vr)
                if den < eps:
                    out[d, y, x] = np.nan
                    continue
                # cross term sums left * right(shifted) over the window; prod is indexed by left column
                cov = _box(prod, y0, y1, x0, x1) / n - ml * mr
                out[d, y, x] = cov / den


@njit(cache=True, parallel=True)
def wta_subpixel(vol, min_score, right_reference, out):
    """Best disparity per pixel with parabola refinement; NaN if no finite score.

    With ``right_reference`` the volume is read as cost_R(y, x, d) = vol[d, y, x + d].
    """
    n_d, h, w = vol.shape
    for y in prange(h):
        for x in range(w):
            best = -1
            top = -np.inf
            for d in range(n_d):
                xs = x + d if right_reference else x
                if xs >= w:
                    break
                s = vol[d, y, xs]
                if s > top:  # NaN never compares greater
                    top = s
                    best = d
            if best < 0 or top < min_score:
                out[y, x] = np.nan
                continue
            offset = 0.0
            if 0 < best < n_d - 1:
                xl = x + best - 1 if right_reference else x
                xh = x + best + 1 if right_reference else x
                if xh < w:
                    lo = vol[best - 1, y, xl]
                    hi = vol[best + 1, y, xh]
                    denom = lo - 2.0 * top + hi
                    if math.isfinite(lo) and math.isfinite(hi) and denom < 0.0:
                        offset = min(max(0.5 * (lo - hi) / denom, -0.5), 0.5)
            out[y, x] = best + offset
