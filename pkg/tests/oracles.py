"""Independent reference implementations used as test oracles.

Nothing here imports from physgold.
"""

import math


def enumerate_paths(nx, ny, band=None):
    """Every monotone unit-step path from (0, 0) to (nx-1, ny-1) inside the band."""
    band = max(nx, ny) if band is None else band
    out = []

    def walk(i, j, acc):
        if abs(i - j) > band:
            return
        acc = acc + [(i, j)]
        if (i, j) == (nx - 1, ny - 1):
            out.append(acc)
            return
        if i + 1 < nx and j + 1 < ny:
            walk(i + 1, j + 1, acc)
        if i + 1 < nx:
            walk(i + 1, j, acc)
        if j + 1 < ny:
            walk(i, j + 1, acc)

    walk(0, 0, [])
    return out


def path_cost(x, y, path):
    total = 0.0
    for i, j in path:
        total = total + abs(x[i] - y[j])
    return total


def brute_force_dtw(x, y, band=None, rtol=1e-9):
    """(minimal cost, list of optimal paths) by exhaustive enumeration.

    Paths whose cost is within ``rtol`` of the minimum count as optimal, since
    summing in a different order can split mathematically equal costs.
    """
    paths = enumerate_paths(len(x), len(y), band)
    costs = [path_cost(x, y, p) for p in paths]
    best = min(costs)
    limit = best + rtol * (1 + abs(best))
    return best, [p for p, c in zip(paths, costs) if c <= limit]


def reference_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def reference_ewe(channels):
    """Weights from correlation with the leave-one-out mean, clipped at 0, normalized."""
    k = len(channels)
    n = len(channels[0])
    raw = []
    for idx in range(k):
        others = [sum(channels[m][t] for m in range(k) if m != idx) / (k - 1) for t in range(n)]
        raw.append(max(0.0, reference_pearson(channels[idx], others)))
    total = sum(raw)
    if total <= 0:
        return [1.0 / k] * k
    return [r / total for r in raw]


def central_differences(loss, params, h=1e-5):
    """Numerical gradient of ``loss()`` w.r.t. every entry of the arrays in ``params`` (mutated in place)."""
    import numpy as np

    grads = {}
    for key, arr in params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss()
            flat[k] = orig - h
            down = loss()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        grads[key] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    import numpy as np

    worst = 0.0
    for key in numeric:
        a, n = analytic[key], numeric[key]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst
