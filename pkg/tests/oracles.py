"""Independent reference computations used by the unit and acceptance tests.

Each oracle takes a different route from the package code: scalar loops,
exact rationals, arbitrary-precision special functions or exhaustive search.
"""

import itertools
from fractions import Fraction

import mpmath
import numpy as np

from fairpar.nn import (
    AdapterParams,
    ClassifierParams,
    CELoss,
    MinMaxLoss,
    RandATLoss,
    init_adapter,
    init_classifier,
    loss_value,
)

mpmath.mp.dps = 40


# ---------------------------------------------------------------------------
# gradients


def random_case(rng):
    p = int(rng.integers(2, 7))
    C = int(rng.integers(2, 4))
    m = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    g = init_adapter(p, rng)
    d = init_classifier(p, C, rng, hidden=[(), (3,)][int(rng.integers(0, 2))])
    H = rng.standard_normal((m, p))
    y = rng.integers(0, C, m)
    alpha = rng.standard_normal(p)
    offsets = rng.uniform(-0.5, 0.5, (m, k))
    kind = int(rng.integers(0, 3))
    spec = [CELoss(), RandATLoss(alpha, offsets), MinMaxLoss(alpha, offsets, float(rng.uniform(0.05, 2.0)))][kind]
    return g, d, H, y, spec


def finite_difference(g, d, H, y, spec, step=1e-5):
    arrays = [a.copy() for a in g.arrays() + d.arrays()]
    n_adapter = len(g.arrays())
    out = []
    for a in arrays:
        ga = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + step
            fp = loss_value(AdapterParams.from_arrays(arrays[:n_adapter]), ClassifierParams.from_arrays(arrays[n_adapter:]), H, y, spec)
            a[idx] = orig - step
            fm = loss_value(AdapterParams.from_arrays(arrays[:n_adapter]), ClassifierParams.from_arrays(arrays[n_adapter:]), H, y, spec)
            a[idx] = orig
            ga[idx] = (fp - fm) / (2 * step)
        out.append(ga)
    return out


def grads_agree(analytic, numeric, rel=1e-4, abs_tol=1e-7):
    for a, f in zip(analytic, numeric):
        err = np.abs(a - f)
        scale = np.maximum(np.abs(a), np.abs(f))
        if not np.all((err <= abs_tol) | (err <= rel * scale)):
            return False
    return True


# ---------------------------------------------------------------------------
# scalar-loop forward passes


def straight_adapter(g, h):
    p, q = g.W_down.shape
    hidden = [max(0.0, sum(h[i] * g.W_down[i, j] for i in range(p)) + g.b_down[j]) for j in range(q)]
    return [sum(hidden[j] * g.W_up[j, i] for j in range(q)) + g.b_up[i] for i in range(p)]


def straight_logits(d, z):
    x = list(z)
    for li, (W, b) in enumerate(d.layers):
        x = [sum(x[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])]
        if li < len(d.layers) - 1:
            x = [max(0.0, v) for v in x]
    return x


def straight_ce(logits, y):
    m = max(logits)
    return m + float(mpmath.log(sum(mpmath.e ** (v - m) for v in logits))) - logits[y]


def randat_oracle(g, d, H, y, alpha, offsets):
    """Double loop over nodes and augmentations."""
    total = 0.0
    for i in range(len(H)):
        inner = 0.0
        for t in offsets[i]:
            h = [H[i][c] + t * alpha[c] for c in range(len(alpha))]
            inner += straight_ce(straight_logits(d, straight_adapter(g, h)), int(y[i]))
        total += inner / len(offsets[i])
    return total / len(H)


def minmax_oracle(g, d, H, y, alpha, offsets, lam):
    spread = 0.0
    ce = 0.0
    for i in range(len(H)):
        base = straight_adapter(g, list(H[i]))
        worst = 0.0
        for t in offsets[i]:
            moved = straight_adapter(g, [H[i][c] + t * alpha[c] for c in range(len(alpha))])
            worst = max(worst, sum((a - b) ** 2 for a, b in zip(base, moved)) ** 0.5)
        spread += worst
        ce += straight_ce(straight_logits(d, base), int(y[i]))
    return lam * spread / len(H) + ce / len(H)


# ---------------------------------------------------------------------------
# metrics by enumerating the joint probability table


def joint_table(preds, labels, sens):
    table = {}
    for a, b, c in zip(preds, labels, sens):
        key = (int(a), int(b), int(c))
        table[key] = table.get(key, 0) + 1
    return table


def _conditional(table, event, given):
    num = sum(v for k, v in table.items() if given(k) and event(k))
    den = sum(v for k, v in table.items() if given(k))
    return None if den == 0 else Fraction(num, den)


def dp_oracle(preds, sens):
    table = joint_table(preds, [0] * len(preds), sens)
    r0 = _conditional(table, lambda k: k[0] == 1, lambda k: k[2] == 0)
    r1 = _conditional(table, lambda k: k[0] == 1, lambda k: k[2] == 1)
    return None if r0 is None or r1 is None else abs(r0 - r1)


def eo_oracle(preds, labels, sens):
    table = joint_table(preds, labels, sens)
    r0 = _conditional(table, lambda k: k[0] == 1, lambda k: k[1] == 1 and k[2] == 0)
    r1 = _conditional(table, lambda k: k[0] == 1, lambda k: k[1] == 1 and k[2] == 1)
    return None if r0 is None or r1 is None else abs(r0 - r1)


def acc_f1_oracle(preds, labels, num_classes):
    table = joint_table(preds, labels, [0] * len(preds))
    n = len(preds)
    acc = Fraction(sum(v for k, v in table.items() if k[0] == k[1]), n)
    f1s = []
    for c in range(num_classes):
        tp = sum(v for k, v in table.items() if k[0] == c and k[1] == c)
        pred_c = sum(v for k, v in table.items() if k[0] == c)
        true_c = sum(v for k, v in table.items() if k[1] == c)
        precision = Fraction(tp, pred_c) if pred_c else Fraction(0)
        recall = Fraction(tp, true_c) if true_c else Fraction(0)
        f1s.append(Fraction(0) if precision + recall == 0 else 2 * precision * recall / (precision + recall))
    return acc, sum(f1s) / num_classes


# ---------------------------------------------------------------------------
# special functions


def phi_oracle(x):
    return float(mpmath.ncdf(mpmath.mpf(x)))


def phi_inv_oracle(p):
    p = mpmath.mpf(p)
    return float(mpmath.findroot(lambda x: mpmath.ncdf(x) - p, mpmath.sqrt(2) * mpmath.erfinv(2 * p - 1)))


def beta_quantile_oracle(alpha, a, b):
    """Bisection on the regularised incomplete beta function."""
    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    target = mpmath.mpf(alpha)
    for _ in range(200):
        mid = (lo + hi) / 2
        if mpmath.betainc(a, b, 0, mid, regularized=True) < target:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


# ---------------------------------------------------------------------------
# minimum enclosing ball by exhaustive support-set search


def _ball_through(points):
    p0 = points[0]
    if len(points) == 1:
        return p0.copy(), 0.0
    A = points[1:] - p0
    G = A @ A.T
    rhs = 0.5 * np.sum(A * A, axis=1)
    try:
        lam = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return None
    c = p0 + lam @ A
    return c, float(np.linalg.norm(c - p0))


def meb_oracle(points):
    """Smallest ball through some subset of at most ``dim + 1`` points that holds them all."""
    X = np.asarray(points, dtype=np.float64)
    best = None
    for size in range(1, X.shape[1] + 2):
        for subset in itertools.combinations(range(len(X)), size):
            ball = _ball_through(X[list(subset)])
            if ball is None:
                continue
            c, r = ball
            if np.all(np.linalg.norm(X - c, axis=1) <= r * (1 + 1e-9) + 1e-12):
                if best is None or r < best[1]:
                    best = (c, r)
    return best
