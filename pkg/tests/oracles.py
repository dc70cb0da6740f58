"""Independent brute-force oracles the test suite checks the engine against.

Everything here is deliberately scalar Python over the math module, written
from the defining formulas rather than sharing any code path with the package.
"""

import math


def project_uv_scalar(x, y, z, width, height, fov_up, fov_down):
    """(u, v) from the projection formulas, one point at a time."""
    r = math.sqrt(x * x + y * y + z * z)
    fov = fov_up + fov_down
    u = math.floor(0.5 * (1.0 - math.atan2(y, x) / math.pi) * width)
    v = math.floor((1.0 - (math.asin(z / r) + fov_up) / fov) * height)
    return min(max(u, 0), width - 1), min(max(v, 0), height - 1)


def entropy_scalar(mean_probs):
    """-sum p ln p with 0 ln 0 = 0."""
    h = 0.0
    for p in mean_probs:
        if p > 0.0:
            h -= p * math.log(p)
    return h


def mean_prediction_scalar(pixel_ct):
    """pixel_ct: list over classes of list over T. Returns per-class means."""
    t_iters = len(pixel_ct[0])
    return [sum(row) / t_iters for row in pixel_ct]


def variance_scalar(pixel_ct):
    """Average over classes of the population variance across passes."""
    means = mean_prediction_scalar(pixel_ct)
    t_iters = len(pixel_ct[0])
    total = 0.0
    for c, row in enumerate(pixel_ct):
        total += sum((p - means[c]) ** 2 for p in row) / t_iters
    return total / len(pixel_ct)


def bald_scalar(pixel_ct):
    """Entropy of the mean minus the mean per-pass entropy."""
    t_iters = len(pixel_ct[0])
    h_mean = entropy_scalar(mean_prediction_scalar(pixel_ct))
    h_each = [entropy_scalar([row[t] for row in pixel_ct]) for t in range(t_iters)]
    return h_mean - sum(h_each) / t_iters


def certainty_scalar(pixel_ct):
    """min over classes of max over passes, complemented."""
    certainty = min(max(row) for row in pixel_ct)
    return 1.0 - certainty


def pixel_columns(tensor, u, v):
    """Class-by-pass nested lists for one pixel of an McProbTensor."""
    return [[float(tensor.probs[v, u, c, t]) for t in range(tensor.probs.shape[3])]
            for c in range(tensor.probs.shape[2])]


def miou_scalar(pred, target, valid, num_classes, ignore=-1):
    """Pixel-loop mIoU: per-class TP/(TP+FP+FN), zero-union classes skipped."""
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    h, w = len(pred), len(pred[0])
    for i in range(h):
        for j in range(w):
            if not valid[i][j] or target[i][j] == ignore:
                continue
            t, p = target[i][j], pred[i][j]
            if t == p:
                tp[t] += 1
            else:
                fp[p] += 1
                fn[t] += 1
    ious = []
    for c in range(num_classes):
        union = tp[c] + fp[c] + fn[c]
        if union > 0:
            ious.append(tp[c] / union)
    if not ious:
        raise ZeroDivisionError("all classes have zero union")
    return sum(ious) / len(ious)


def curve_crossing_scalar(points, level):
    """First n at which the piecewise-linear curve reaches level; None if never."""
    for i, (n, m) in enumerate(points):
        if m >= level:
            if i == 0:
                return float(n)
            n0, m0 = points[i - 1]
            return n0 + (level - m0) * (n - n0) / (m - m0)
    return None
