"""Independent reference implementations used to check the library.

Everything here is deliberately naive: explicit Python loops, fsum
accumulation, no shared code with the package internals beyond numpy
array access.
"""

import math

import numpy as np


def _unit(v):
    norm = math.sqrt(math.fsum(float(x) * float(x) for x in v))
    return [float(x) / norm for x in v]


def _cos(a_unit, b):
    b_unit = _unit(b)
    return math.fsum(x * y for x, y in zip(a_unit, b_unit))


def _softmax(logits):
    top = max(logits)
    exps = [math.exp(z - top) for z in logits]
    total = math.fsum(exps)
    return [e / total for e in exps]


def naive_score_visual(x, visual, temperature):
    xq = _unit(x)
    logits = []
    for class_protos in visual:
        s = math.fsum(_cos(xq, p) for p in class_protos)
        logits.append(s / temperature)
    return _softmax(logits)


def naive_score_text_max(x, textual, temperature):
    xq = _unit(x)
    logits = []
    for class_protos in textual:
        best = max(_cos(xq, p) for p in class_protos)
        logits.append(best / temperature)
    return _softmax(logits)


def naive_score_text_avg(x, textual, temperature):
    xq = _unit(x)
    logits = []
    for class_protos in textual:
        j = len(class_protos)
        s = math.fsum(_cos(xq, p) for p in class_protos)
        logits.append(s / (temperature * j))
    return _softmax(logits)


def naive_knn(train_features, train_labels, query, neighbors, class_count):
    """Exhaustive cosine-distance KNN with the documented tie rules."""
    q = _unit(query)
    dists = []
    for idx, row in enumerate(train_features):
        dists.append((1.0 - _cos(q, row), idx))
    dists.sort(key=lambda pair: (pair[0], pair[1]))
    votes = [0] * class_count
    for _, idx in dists[: min(neighbors, len(dists))]:
        votes[int(train_labels[idx])] += 1
    best = max(votes)
    return votes.index(best)  # smallest label among tied vote counts


def nearest_mean_assignments(points, means):
    """Brute-force nearest-centroid assignment by squared distance."""
    out = []
    for p in points:
        dists = [
            math.fsum((float(a) - float(b)) ** 2 for a, b in zip(p, mean)) for mean in means
        ]
        out.append(dists.index(min(dists)))
    return out


def finite_difference_grads(loss_fn, tensor, coords, h=1e-3):
    """Central differences of ``loss_fn`` at the given flat coordinates."""
    flat = tensor.reshape(-1)
    grads = {}
    for c in coords:
        original = flat[c]
        flat[c] = original + h
        up = loss_fn()
        flat[c] = original - h
        down = loss_fn()
        flat[c] = original
        grads[c] = (up - down) / (2.0 * h)
    return grads


def relative_error(a, b, floor=1e-12):
    return abs(a - b) / max(floor, abs(a) + abs(b))


def linearly_separable(features, labels, class_count):
    """LP feasibility check: every class separable one-vs-rest with margin.

    Uses scipy linprog; returns True when every class admits (w, b) with
    w.x + b >= 1 on the class and <= -1 off it.
    """
    from scipy.optimize import linprog

    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    for cls in range(class_count):
        sign = np.where(np.asarray(labels) == cls, 1.0, -1.0)
        # constraints: -sign_i * (w.x_i + b) <= -1
        a_ub = -sign[:, None] * np.hstack([x, np.ones((n, 1))])
        b_ub = -np.ones(n)
        res = linprog(
            c=np.zeros(d + 1),
            A_ub=a_ub,
            b_ub=b_ub,
            bounds=[(None, None)] * (d + 1),
            method="highs",
        )
        if not res.success:
            return False
    return True
