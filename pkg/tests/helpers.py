"""Shared synthetic-data builders for the test suite."""

import numpy as np
from scipy.special import expit

from alphatree import AlphaTree, Leaf, Node, SplitTest, make_dataset


def random_dataset(rng, n_min=80, n_max=400, b_range=(0.5, 3.0), plugin_prob=0.4):
    """Random clipped dataset plus a target estimate for induction runs.

    Scores are sigmoid(B * u) with |u| >= 1e-3 so no confidence collapses to
    zero, and smooth targets stay inside [0.05, 0.95] which keeps audacious
    leaf labels far away from float saturation of the sigmoid.
    """
    n = int(rng.integers(n_min, n_max + 1))
    B = float(rng.uniform(*b_range))
    u = rng.uniform(1e-3, 1.0, n) * np.where(rng.random(n) < 0.5, 1.0, -1.0)
    scores = expit(B * u)
    features, kinds = {}, {}
    for j in range(int(rng.integers(1, 5))):
        # round to force ties: exercises the midpoint threshold guard
        features[f"x{j}"] = np.round(rng.normal(0.0, 1.0, n), 3)
        kinds[f"x{j}"] = "numeric"
    for j in range(int(rng.integers(0, 3))):
        features[f"c{j}"] = rng.choice(np.array(list("abcd"), dtype=object), n)
        kinds[f"c{j}"] = "categorical"
    if rng.random() < plugin_prob:
        eta = np.round(rng.random(n))
    else:
        eta = rng.uniform(0.05, 0.95, n)
    labels = np.where(rng.random(n) < np.clip(eta, 0.05, 0.95), 1, -1)
    groups = rng.choice(np.array(["g0", "g1"], dtype=object), n)
    weights = rng.uniform(0.5, 2.0, n)
    ds = make_dataset(features, kinds, labels, groups, scores, B, weights=weights)
    return ds, eta


def saturated_dataset(rng, n_min=8, n_max=200):
    """Dataset whose rows all sit at the clipping endpoints.

    Returns (ds, eta, sat) where sat holds exact +-1.0 confidences to inject
    through the nlogit override; recomputing logit(expit(B))/B would miss the
    endpoints by an ulp for most B.
    """
    n = int(rng.integers(n_min, n_max + 1))
    B = float(rng.uniform(0.5, 3.0))
    hi, lo = float(expit(B)), float(expit(-B))
    sat = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    scores = np.where(sat > 0, hi, lo)
    if rng.random() < 0.3:
        eta = np.round(rng.random(n))
    else:
        eta = rng.uniform(0.05, 0.95, n)
    labels = np.where(rng.random(n) < np.clip(eta, 0.05, 0.95), 1, -1)
    weights = rng.uniform(0.5, 2.0, n)
    ds = make_dataset({"x": rng.normal(0.0, 1.0, n)}, {"x": "numeric"},
                      labels, ["g"] * n, scores, B, weights=weights)
    return ds, eta, sat


def random_tree(rng, max_depth=4, alpha_of=None):
    """Random alpha-tree over features x0, x1 (numeric) and c0 (categorical)."""
    if alpha_of is None:
        alpha_of = lambda r: float(r.uniform(-3.0, 3.0))
    counter = [0]

    def build(depth):
        if depth >= max_depth or (depth > 0 and rng.random() < 0.35):
            leaf = Leaf(counter[0], float(alpha_of(rng)))
            counter[0] += 1
            return leaf
        if rng.random() < 0.7:
            test = SplitTest(f"x{int(rng.integers(0, 2))}", "numeric",
                             float(np.round(rng.normal(0.0, 1.0), 2)), None)
        else:
            test = SplitTest("c0", "categorical", None, str(rng.choice(list("abc"))))
        return Node(test, build(depth + 1), build(depth + 1))

    return AlphaTree(build(0))


def probe_columns(rng, n):
    """Feature columns matching random_tree's tests."""
    return {
        "x0": rng.normal(0.0, 1.0, n),
        "x1": rng.normal(0.0, 1.0, n),
        "c0": rng.choice(np.array(list("abcd"), dtype=object), n),
    }
