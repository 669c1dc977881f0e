"""Brute-force reference implementations, independent of the package code."""

import itertools
import math


def mi_bruteforce(xs, ys):
    """Mutual information (nats) from an explicit contingency table."""
    n = len(xs)
    table = {}
    for x, y in zip(xs, ys):
        table[(x, y)] = table.get((x, y), 0) + 1
    px = {v: sum(1 for x in xs if x == v) / n for v in (0, 1)}
    py = {v: sum(1 for y in ys if y == v) / n for v in (0, 1)}
    total = 0.0
    for (x, y), count in table.items():
        pxy = count / n
        total += pxy * math.log(pxy / (px[x] * py[y]))
    return total


def auc_mann_whitney(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                hits += 1.0
            elif p == q:
                hits += 0.5
    return hits / (len(pos) * len(neg))


def nb_posterior_enumerated(rows, labels, query, alpha=1.0):
    """Bayes rule with explicitly multiplied Bernoulli likelihoods."""
    d = len(query)
    joint = {}
    for c in (0, 1):
        members = [r for r, y in zip(rows, labels) if y == c]
        prior = len(members) / len(rows)
        likelihood = 1.0
        for j in range(d):
            p1 = (sum(r[j] for r in members) + alpha) / (len(members) + 2 * alpha)
            likelihood *= p1 if query[j] else 1.0 - p1
        joint[c] = prior * likelihood
    return joint[1] / (joint[0] + joint[1])


def all_binary_vectors(d):
    return list(itertools.product((0, 1), repeat=d))


def central_difference(f, point, h=1e-6):
    grad = []
    for j in range(len(point)):
        up = list(point)
        down = list(point)
        up[j] += h
        down[j] -= h
        grad.append((f(up) - f(down)) / (2 * h))
    return grad
