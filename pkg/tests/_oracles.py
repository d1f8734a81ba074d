"""Independent reference implementations used as test oracles."""

import numpy as np


def grid_objective(px, py, anchor_xy, dz, r):
    """Quartic multilateration objective on a mesh of points (no shared code with the solver)."""
    total = np.zeros(np.broadcast(px, py).shape)
    for (ax, ay), h, d in zip(anchor_xy, dz, r):
        f = (px - ax) ** 2 + (py - ay) ** 2 + h * h - d * d
        total += f * f
    return total


def grid_minimizer(anchor_xy, dz, r, bounds, coarse=0.05, fine=0.001, window=0.06, keep=4):
    """Two-level grid search: a full coarse grid over ``bounds`` (xmin, xmax, ymin, ymax),
    then a fine grid in a window around each of the ``keep`` best coarse cells.
    """
    xmin, xmax, ymin, ymax = bounds
    xs = np.arange(xmin, xmax + coarse / 2, coarse)
    ys = np.arange(ymin, ymax + coarse / 2, coarse)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vals = grid_objective(gx, gy, anchor_xy, dz, r).ravel()
    best_val, best_pt = np.inf, None
    for k in np.argsort(vals)[:keep]:
        cx, cy = gx.ravel()[k], gy.ravel()[k]
        fx = np.arange(cx - window, cx + window + fine / 2, fine)
        fy = np.arange(cy - window, cy + window + fine / 2, fine)
        mx, my = np.meshgrid(fx, fy, indexing="ij")
        v = grid_objective(mx, my, anchor_xy, dz, r)
        i = int(np.argmin(v))
        if v.ravel()[i] < best_val:
            best_val, best_pt = v.ravel()[i], (mx.ravel()[i], my.ravel()[i])
    return np.array(best_pt), best_val


def naive_forward(weights, biases, x):
    """Loop-based MLP forward pass (ReLU hidden layers, linear output)."""
    h = [float(v) for v in x]
    for layer, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(W.shape[1]):
            acc = float(b[j])
            for i in range(W.shape[0]):
                acc += h[i] * float(W[i, j])
            out.append(acc)
        h = out if layer == len(weights) - 1 else [max(v, 0.0) for v in out]
    return np.array(h)
