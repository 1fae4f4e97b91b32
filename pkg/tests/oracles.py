"""Slow reference implementations written with explicit scalar loops.

Nothing here imports from ``regmod``; each function restates a definition
voxel by voxel so that the vectorised code can be checked against it.
"""

import itertools
import math

import numpy as np


def _clamp(i, n):
    return min(max(i, 0), n - 1)


def sample(vol, point):
    """d-linear interpolation at one point, coordinates clamped to the grid."""
    dims = vol.shape
    c = [min(max(float(p), 0.0), n - 1.0) for p, n in zip(point, dims)]
    base = [min(int(math.floor(ci)), max(n - 2, 0)) for ci, n in zip(c, dims)]
    frac = [ci - bi for ci, bi in zip(c, base)]
    total = 0.0
    for corner in itertools.product((0, 1), repeat=len(dims)):
        w = 1.0
        idx = []
        for k, bit in enumerate(corner):
            w *= frac[k] if bit else 1.0 - frac[k]
            idx.append(_clamp(base[k] + bit, dims[k]))
        total += w * float(vol[tuple(idx)])
    return total


def warp(vol, u):
    out = np.empty(vol.shape)
    for x in np.ndindex(vol.shape):
        out[x] = sample(vol, [x[k] + u[(k,) + x] for k in range(vol.ndim)])
    return out


def compose(u1, u2):
    d = u1.shape[0]
    out = np.empty_like(u1)
    for x in np.ndindex(u1.shape[1:]):
        p = [x[k] + u1[(k,) + x] for k in range(d)]
        for c in range(d):
            out[(c,) + x] = u1[(c,) + x] + sample(u2[c], p)
    return out


def upsample(u, target):
    """Fine voxel j reads coarse position (j - 0.5) / 2; vectors doubled."""
    d = u.shape[0]
    out = np.empty((d,) + tuple(target))
    for j in np.ndindex(*target):
        p = [(jk - 0.5) / 2.0 for jk in j]
        for c in range(d):
            out[(c,) + j] = 2.0 * sample(u[c], p)
    return out


def downsample(vol):
    dims = vol.shape
    out_dims = tuple((n + 1) // 2 for n in dims)
    out = np.empty(out_dims)
    for i in np.ndindex(*out_dims):
        vals = []
        for off in itertools.product((0, 1), repeat=len(dims)):
            src = tuple(2 * ik + o for ik, o in zip(i, off))
            if all(s < n for s, n in zip(src, dims)):
                vals.append(float(vol[src]))
        out[i] = sum(vals) / len(vals)
    return out


def offsets(radius, ndim):
    return list(itertools.product(range(-radius, radius + 1), repeat=ndim))


def correlation(f_t, f_s, radius):
    n_ch = f_t.shape[0]
    dims = f_t.shape[1:]
    offs = offsets(radius, len(dims))
    out = np.empty((len(offs),) + dims)
    for x in np.ndindex(*dims):
        for k, o in enumerate(offs):
            y = tuple(_clamp(xi + oi, n) for xi, oi, n in zip(x, o, dims))
            acc = 0.0
            for c in range(n_ch):
                acc += float(f_t[(c,) + x]) * float(f_s[(c,) + y])
            out[(k,) + x] = acc / n_ch
    return out


def argmax_proposal(corr, radius):
    """Exhaustive argmax; ties go to the smaller norm, then lexicographic."""
    ndim = corr.ndim - 1
    offs = offsets(radius, ndim)
    out = np.empty((ndim,) + corr.shape[1:])
    for x in np.ndindex(*corr.shape[1:]):
        best = None
        for k, o in enumerate(offs):
            key = (-float(corr[(k,) + x]), sum(v * v for v in o), o)
            if best is None or key < best[0]:
                best = (key, o)
        for c in range(ndim):
            out[(c,) + x] = best[1][c]
    return out


def surface_points(mask, spacing):
    """Foreground voxels with a six-neighbour outside the mask or the grid."""
    dims = mask.shape
    pts = []
    for x in np.ndindex(*dims):
        if not mask[x]:
            continue
        boundary = False
        for k in range(len(dims)):
            for step in (-1, 1):
                y = list(x)
                y[k] += step
                if not 0 <= y[k] < dims[k] or not mask[tuple(y)]:
                    boundary = True
        if boundary:
            pts.append(tuple(float(xi) * s for xi, s in zip(x, spacing)))
    return pts


def nearest(src, dst):
    return [min(math.dist(p, q) for q in dst) for p in src]


def percentile_linear(values, q):
    vals = sorted(values)
    rank = q / 100.0 * (len(vals) - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, len(vals) - 1)
    return vals[lo] + (rank - lo) * (vals[hi] - vals[lo])


def surface_distances(mask_a, mask_b, spacing):
    pa = surface_points(mask_a, spacing)
    pb = surface_points(mask_b, spacing)
    pooled = nearest(pa, pb) + nearest(pb, pa)
    return percentile_linear(pooled, 95), sum(pooled) / len(pooled)


def nsd(mask_a, mask_b, tau, spacing):
    pa = surface_points(mask_a, spacing)
    pb = surface_points(mask_b, spacing)
    ab = nearest(pa, pb)
    ba = nearest(pb, pa)
    frac_a = sum(1 for v in ab if v <= tau) / len(ab)
    frac_b = sum(1 for v in ba if v <= tau) / len(ba)
    return 50.0 * (frac_a + frac_b)


def gaussian_dense(vol, sigma):
    """Direct sum over the full truncated product kernel, edges replicated."""
    r = int(math.ceil(3 * sigma))
    taps = [math.exp(-0.5 * (t / sigma) ** 2) for t in range(-r, r + 1)]
    norm = sum(taps)
    taps = [t / norm for t in taps]
    dims = vol.shape
    out = np.empty(dims)
    for x in np.ndindex(*dims):
        acc = 0.0
        for off in itertools.product(range(-r, r + 1), repeat=len(dims)):
            w = 1.0
            for o in off:
                w *= taps[o + r]
            y = tuple(_clamp(xi + o, n) for xi, o, n in zip(x, off, dims))
            acc += w * float(vol[y])
        out[x] = acc
    return out


def gradients(vol):
    dims = vol.shape
    out = np.empty((len(dims),) + dims)
    for k, n in enumerate(dims):
        for x in np.ndindex(*dims):
            lo = list(x)
            hi = list(x)
            if x[k] == 0:
                hi[k] += 1
                out[(k,) + x] = vol[tuple(hi)] - vol[x]
            elif x[k] == n - 1:
                lo[k] -= 1
                out[(k,) + x] = vol[x] - vol[tuple(lo)]
            else:
                lo[k] -= 1
                hi[k] += 1
                out[(k,) + x] = (vol[tuple(hi)] - vol[tuple(lo)]) / 2.0
    return out


def mind_pairs():
    six = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    pairs = []
    for i in range(6):
        for j in range(i + 1, 6):
            if sum((a - b) ** 2 for a, b in zip(six[i], six[j])) == 2:
                pairs.append((six[i], six[j]))
    return pairs


def mind(vol, radius, dilation, floor_frac=1e-6):
    """MIND-SSC by its definition; patch positions are clamped to the grid."""
    dims = vol.shape
    pairs = mind_pairs()
    mean = float(vol.mean())
    gvar = float(((vol - mean) ** 2).mean())
    floor = max(floor_frac * gvar, 1e-12)

    def at(p):
        return float(vol[tuple(_clamp(pi, n) for pi, n in zip(p, dims))])

    out = np.empty((len(pairs),) + dims)
    for x in np.ndindex(*dims):
        dist = []
        for o1, o2 in pairs:
            acc = 0.0
            count = 0
            for off in itertools.product(range(-radius, radius + 1), repeat=3):
                y = [_clamp(xi + oi, n) for xi, oi, n in zip(x, off, dims)]
                a = at([yi + dilation * oi for yi, oi in zip(y, o1)])
                b = at([yi + dilation * oi for yi, oi in zip(y, o2)])
                acc += (a - b) ** 2
                count += 1
            dist.append(acc / count)
        v = max(sum(dist) / len(dist), floor)
        for k, dk in enumerate(dist):
            out[(k,) + x] = math.exp(-dk / v)
    return out


def lncc_value(a, b, window, eps=1e-5):
    dims = a.shape
    h = window // 2
    total = 0.0
    for x in np.ndindex(*dims):
        ranges = [range(max(xi - h, 0), min(xi + h, n - 1) + 1)
                  for xi, n in zip(x, dims)]
        va, vb = [], []
        for y in itertools.product(*ranges):
            va.append(float(a[y]))
            vb.append(float(b[y]))
        n = len(va)
        ma = sum(va) / n
        mb = sum(vb) / n
        cross = sum(p * q for p, q in zip(va, vb)) / n - ma * mb
        var_a = sum(p * p for p in va) / n - ma * ma
        var_b = sum(q * q for q in vb) / n - mb * mb
        total += cross * cross / max(var_a * var_b, eps)
    return -total / a.size


def diffusion_value(u):
    d = u.shape[0]
    dims = u.shape[1:]
    acc = 0.0
    for c in range(d):
        for x in np.ndindex(*dims):
            for k in range(d):
                if x[k] + 1 < dims[k]:
                    y = list(x)
                    y[k] += 1
                    diff = float(u[(c,) + tuple(y)] - u[(c,) + x])
                    acc += diff * diff
    return acc / (int(np.prod(dims)) * d * d)


def jacobian(u):
    d = u.shape[0]
    grads = [gradients(u[c]) for c in range(d)]
    out = np.empty(u.shape[1:])
    for x in np.ndindex(*u.shape[1:]):
        m = np.eye(d)
        for i in range(d):
            for j in range(d):
                m[i, j] += grads[i][(j,) + x]
        out[x] = np.linalg.det(m)
    return out


def central_fd(fun, x, h=1e-6):
    """Full central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        plus = fun(x)
        flat[i] = keep - h
        minus = fun(x)
        flat[i] = keep
        gf[i] = (plus - minus) / (2 * h)
    return g
