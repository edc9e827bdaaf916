"""Shared oracles for the test suite.

The finite-difference gradient checker only re-runs forward passes, so it
stays independent of the reverse-mode implementation it is used to verify.
"""

import numpy as np

from ovseg import tensor as T


def finite_difference_grads(build_loss, params, h=1e-5):
    """Central finite differences of a scalar loss w.r.t. each param tensor.

    ``build_loss`` must be a zero-argument callable that re-runs the forward
    pass from the current parameter values and returns a scalar Tensor.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = build_loss().item()
            flat[i] = orig - h
            lo = build_loss().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-3):
    """Worst-case relative error, with a floor so near-zero entries compare absolutely.

    Central differences at h=1e-5 carry roundoff noise around 1e-9 in
    absolute terms, so entries much smaller than ``floor`` are compared
    absolutely instead of relatively.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(build_loss, params, h=1e-5, tol=1e-4):
    """Backward vs central differences on every tensor in ``params``."""
    loss = build_loss()
    T.zero_grads(params)
    loss.backward()
    numeric = finite_difference_grads(build_loss, params, h=h)
    worst = 0.0
    for p, num in zip(params, numeric):
        assert p.grad is not None, "parameter received no gradient"
        worst = max(worst, max_rel_err(p.grad, num))
    assert worst <= tol, f"gradient mismatch: max relative error {worst:.3e} > {tol}"
    return worst


def brute_force_miou(preds, gts, num_classes):
    """Independent oracle: per-pixel python loops into per-class counts."""
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for p, g in zip(preds, gts):
        for pv, gv in zip(p.reshape(-1).tolist(), g.reshape(-1).tolist()):
            for c in range(1, num_classes + 1):
                if pv == c and gv == c:
                    tp[c - 1] += 1
                elif pv == c and gv != c:
                    fp[c - 1] += 1
                elif pv != c and gv == c:
                    fn[c - 1] += 1
    ious = []
    for c in range(num_classes):
        denom = tp[c] + fp[c] + fn[c]
        ious.append(1.0 if denom == 0 else tp[c] / denom)
    return ious, sum(ious) / num_classes
