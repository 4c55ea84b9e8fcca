"""Independent oracles and numeric helpers shared by the tests.

Nothing here calls into the loss or mining code under test.
"""

import math
from fractions import Fraction

import numpy as np


def naive_norm(v):
    return math.sqrt(sum(float(x) * float(x) for x in v))


def naive_dist(a, b):
    return naive_norm([float(x) - float(y) for x, y in zip(a, b)])


def naive_normalize(v):
    n = naive_norm(v)
    return [float(x) / n for x in v]


def central_diff(fn, x, h=1e-5):
    """Central finite-difference gradient of scalar ``fn`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for t in range(flat.size):
        old = flat[t]
        flat[t] = old + h
        up = fn(x)
        flat[t] = old - h
        down = fn(x)
        flat[t] = old
        gf[t] = (up - down) / (2 * h)
    return g


def rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def random_batch(rng, n_ids, per_id, dim, spread=1.0):
    ids = np.repeat(np.arange(n_ids), per_id)
    rng.shuffle(ids)
    x = rng.normal(size=(len(ids), dim)) * spread
    return x, ids


# -- brute-force loss oracles (plain loops, raw features, no normalization) --

def _feat(x, normalize):
    rows = [list(map(float, r)) for r in x]
    return [naive_normalize(r) for r in rows] if normalize else rows


def oracle_triplet(x, triplets, alpha, normalize=False):
    f = _feat(x, normalize)
    terms = [max(naive_dist(f[a], f[p]) - naive_dist(f[a], f[b]) + alpha, 0.0) for a, p, b in triplets]
    return sum(terms) / len(terms)


def oracle_quadruplet(x, quads, alpha, beta, normalize=False):
    f = _feat(x, normalize)
    rel = [max(naive_dist(f[a], f[p]) - naive_dist(f[a], f[b]) + alpha, 0.0) for a, p, b, c in quads]
    ab = [max(naive_dist(f[a], f[p]) - naive_dist(f[c], f[b]) + beta, 0.0) for a, p, b, c in quads]
    return sum(rel) / len(rel) + sum(ab) / len(ab)


def oracle_quad_prime(x, quads, alpha, normalize=False):
    f = _feat(x, normalize)
    terms = [max(naive_dist(f[a], f[p]) - naive_dist(f[c], f[b]) + alpha, 0.0) for a, p, b, c in quads]
    return sum(terms) / len(terms)


def oracle_trihard(x, ids, alpha, normalize=False):
    f = _feat(x, normalize)
    n = len(f)
    total = 0.0
    for a in range(n):
        pos = [naive_dist(f[a], f[j]) for j in range(n) if j != a and ids[j] == ids[a]]
        neg = [naive_dist(f[a], f[j]) for j in range(n) if ids[j] != ids[a]]
        total += max(max(pos) - min(neg) + alpha, 0.0)
    return total / n


def oracle_msml(x, ids, alpha, normalize=False):
    f = _feat(x, normalize)
    n = len(f)
    pos = [naive_dist(f[i], f[j]) for i in range(n) for j in range(n) if i != j and ids[i] == ids[j]]
    neg = [naive_dist(f[i], f[j]) for i in range(n) for j in range(n) if ids[i] != ids[j]]
    return max(max(pos) - min(neg) + alpha, 0.0)


# -- evaluation oracles --

def oracle_first_hit_cmc(relevance, max_rank):
    out = []
    for i in range(1, max_rank + 1):
        hit = 0
        for flags in relevance:
            for r, f in enumerate(flags):
                if f:
                    if r + 1 <= i:
                        hit += 1
                    break
        out.append(hit / len(relevance))
    return out


def oracle_ap(flags):
    """Precision-at-k double loop in exact rationals."""
    total_rel = sum(1 for f in flags if f)
    acc = Fraction(0)
    for k in range(1, len(flags) + 1):
        if flags[k - 1]:
            rel_in_top = 0
            for t in range(k):
                if flags[t]:
                    rel_in_top += 1
            acc += Fraction(rel_in_top, k)
    return float(acc / total_rel)
