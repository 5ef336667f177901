"""Pure-Python versions of the enumeration kernels."""

import itertools


def _subset_terms(q, weights, values, probs, offsets, target):
    n = len(q)
    supports = [
        [(float(values[k]), float(probs[k])) for k in range(offsets[i], offsets[i + 1])]
        for i in range(n)
    ]
    for mask in range(1, 1 << n):
        p_sel = 1.0
        members = []
        for i in range(n):
            if mask >> i & 1:
                p_sel *= q[i]
                members.append(i)
            else:
                p_sel *= 1.0 - q[i]
        if p_sel == 0.0:
            continue
        w = [float(weights[i]) for i in members]
        wsum = sum(w)
        for combo in itertools.product(*(supports[i] for i in members)):
            p = p_sel
            acc = 0.0
            for wi, (v, pv) in zip(w, combo):
                p *= pv
                acc += wi * v
            d = acc / wsum - target
            yield p_sel, p, -d * d


def expected_quadratic_gain(q, weights, values, probs, offsets, target):
    """Sum over nonempty active sets of P(A, outcomes) * -(mean - target)^2.

    Returns ``(weighted_sum, P(A nonempty))``.
    """
    q = [float(v) for v in q]
    num = 0.0
    for _, p, z in _subset_terms(q, weights, values, probs, offsets, target):
        num += p * z
    p_empty = 1.0
    for v in q:
        p_empty *= 1.0 - v
    return num, 1.0 - p_empty


def py_expected_gain_generic(q, weights, values, probs, offsets, target, utility):
    q = [float(v) for v in q]
    num = 0.0
    for _, p, z in _subset_terms(q, weights, values, probs, offsets, target):
        num += p * utility(z)
    p_empty = 1.0
    for v in q:
        p_empty *= 1.0 - v
    return num, 1.0 - p_empty
