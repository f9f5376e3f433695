"""Independent reference implementations used to cross-check the library.

Everything here is written the slow, obvious way (pure-Python loops, full
pairwise scans) and shares no code with the package.  Where a check is
declared "exact", the oracle derives the SELECTION or PARTITION on its own
and only the final arithmetic reduction may reuse numpy, so that bit-exact
comparison is well defined.
"""

from __future__ import annotations

import math

import numpy as np


# ----- inverse-distance weighting -----


def idw_direct(points, qx, qy, power=2.0, radius=100.0, k_max=16):
    """Direct-summation IDW over (id, x, y, elev) tuples.

    Coincident points (distance < 1e-6) short-circuit to their elevation;
    otherwise the k_max nearest within the radius, ties broken by id,
    contribute weights 1/d^power.
    """
    ranked = []
    for pid, x, y, elev in points:
        d = math.hypot(x - qx, y - qy)
        if d < 1e-6:
            return elev
        if d <= radius:
            ranked.append((d, pid, elev))
    ranked.sort(key=lambda t: (t[0], t[1]))
    ranked = ranked[:k_max]
    if not ranked:
        return None
    num = 0.0
    den = 0.0
    for d, _pid, elev in ranked:
        w = 1.0 / d**power
        num += w * elev
        den += w
    return num / den


# ----- DBSCAN reachability -----


def dbscan_brute(points, eps, min_pts):
    """Brute-force DBSCAN partition over 3-D points.

    Returns (clusters, noise) where clusters is a list of frozensets of
    point indices and noise is a frozenset.  Clusters are the connected
    components of core points under eps-adjacency; border points join the
    cluster of their nearest core (ties to the lowest core index).
    """
    n = len(points)
    dist = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = math.dist(points[i], points[j])
            dist[i][j] = d
            dist[j][i] = d

    neighbor_counts = [sum(1 for j in range(n) if dist[i][j] <= eps) for i in range(n)]
    cores = [i for i in range(n) if neighbor_counts[i] >= min_pts]
    core_set = set(cores)

    label = {}
    for start in cores:
        if start in label:
            continue
        queue = [start]
        label[start] = start
        while queue:
            i = queue.pop()
            for j in cores:
                if j not in label and dist[i][j] <= eps:
                    label[j] = start
                    queue.append(j)

    assignments = {}
    noise = set()
    for i in range(n):
        if i in core_set:
            assignments[i] = label[i]
            continue
        best = None
        for j in cores:
            if dist[i][j] <= eps:
                key = (dist[i][j], j)
                if best is None or key < best[0]:
                    best = (key, j)
        if best is None:
            noise.add(i)
        else:
            assignments[i] = label[best[1]]

    clusters = {}
    for i, root in assignments.items():
        clusters.setdefault(root, set()).add(i)
    ordered = sorted(clusters.values(), key=min)
    return [frozenset(c) for c in ordered], frozenset(noise)


# ----- Sobel magnitude -----


def sobel_direct(patch):
    """3x3 Sobel gradient magnitude with replicated edges, plain loops."""
    arr = [[float(v) for v in row] for row in np.asarray(patch, dtype=np.float64)]
    h = len(arr)
    w = len(arr[0])
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    ky = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]

    def at(r, c):
        return arr[min(max(r, 0), h - 1)][min(max(c, 0), w - 1)]

    out = np.zeros((h, w), dtype=np.float64)
    for r in range(h):
        for c in range(w):
            gx = 0.0
            gy = 0.0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    v = at(r + dr, c + dc)
                    gx += kx[dr + 1][dc + 1] * v
                    gy += ky[dr + 1][dc + 1] * v
            out[r, c] = math.hypot(gx, gy)
    return out


# ----- footprint and percentile -----


def footprint_pixels(width, height, gsd, origin_x, origin_y, x, y, diameter):
    """All (row, col) whose pixel center lies within the footprint disk.

    Membership uses squared distance so boundary ties resolve the same way
    regardless of how the distance is later reduced.
    """
    radius = diameter / 2.0
    hits = []
    for row in range(height):
        for col in range(width):
            cx = origin_x + (col + 0.5) * gsd
            cy = origin_y - (row + 0.5) * gsd
            if (cx - x) ** 2 + (cy - y) ** 2 <= radius * radius:
                hits.append((row, col))
    return hits


def percentile_direct(values, q):
    """Linear-interpolation percentile from first principles."""
    v = sorted(float(x) for x in values)
    n = len(v)
    if n == 1:
        return v[0]
    pos = (q / 100.0) * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return v[lo] + (v[hi] - v[lo]) * frac


# ----- error metrics -----


def mae_direct(pred, ref, pred_nodata=None, ref_nodata=None):
    total = 0.0
    count = 0
    for p, r in _paired(pred, ref, pred_nodata, ref_nodata):
        total += abs(p - r)
        count += 1
    return total / count


def rmse_direct(pred, ref, pred_nodata=None, ref_nodata=None):
    total = 0.0
    count = 0
    for p, r in _paired(pred, ref, pred_nodata, ref_nodata):
        total += (p - r) ** 2
        count += 1
    return math.sqrt(total / count)


def f1_direct(pred, ref, threshold=1.0, eta=1.25, floor=0.1, pred_nodata=None, ref_nodata=None):
    tp = fp = n_ref_above = 0
    for p, r in _paired(pred, ref, pred_nodata, ref_nodata):
        pf = max(p, floor)
        rf = max(r, floor)
        delta = max(pf / rf, rf / pf)
        if r > threshold:
            n_ref_above += 1
            if p > threshold and delta < eta:
                tp += 1
        elif p > threshold:
            fp += 1
    fn = n_ref_above - tp
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def _paired(pred, ref, pred_nodata, ref_nodata):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = float(pred[i, j])
            r = float(ref[i, j])
            if pred_nodata is not None and p == pred_nodata:
                continue
            if ref_nodata is not None and r == ref_nodata:
                continue
            yield p, r


# ----- SSIM -----


def gaussian_weights_direct(window, sigma):
    c = (window - 1) / 2.0
    line = [math.exp(-((i - c) ** 2) / (2.0 * sigma**2)) for i in range(window)]
    grid = [[a * b for b in line] for a in line]
    total = sum(sum(row) for row in grid)
    return [[v / total for v in row] for row in grid]


def ssim_direct(
    pred,
    ref,
    window=11,
    sigma=1.5,
    pred_nodata=None,
    ref_nodata=None,
):
    """Loop-based SSIM mean over interior windows, nodata windows skipped.

    The dynamic range comes from the reference's valid extremes, clamped to
    at least 1.  Per-window statistics are Gaussian-weighted.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    h, w = ref.shape
    half = window // 2
    weights = gaussian_weights_direct(window, sigma)

    valid = np.ones((h, w), dtype=bool)
    if pred_nodata is not None:
        valid &= pred != pred_nodata
    if ref_nodata is not None:
        valid &= ref != ref_nodata

    ref_valid = ref[valid]
    length = float(ref_valid.max() - ref_valid.min())
    length = max(length, 1.0)
    c1 = (0.01 * length) ** 2
    c2 = (0.03 * length) ** 2

    scores = []
    for r in range(half, h - half):
        for c in range(half, w - half):
            ok = True
            mx = my = xx = yy = xy = 0.0
            for dr in range(-half, half + 1):
                for dc in range(-half, half + 1):
                    if not valid[r + dr, c + dc]:
                        ok = False
                        break
                    wgt = weights[dr + half][dc + half]
                    a = float(pred[r + dr, c + dc])
                    b = float(ref[r + dr, c + dc])
                    mx += wgt * a
                    my += wgt * b
                    xx += wgt * a * a
                    yy += wgt * b * b
                    xy += wgt * a * b
                if not ok:
                    break
            if not ok:
                continue
            vx = xx - mx * mx
            vy = yy - my * my
            cov = xy - mx * my
            score = ((2 * mx * my + c1) * (2 * cov + c2)) / (
                (mx * mx + my * my + c1) * (vx + vy + c2)
            )
            scores.append(score)
    if not scores:
        raise ValueError("every window touches nodata")
    return sum(scores) / len(scores)
