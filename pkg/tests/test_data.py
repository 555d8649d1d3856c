"""Dataset assembly, weighted views, risk, and traces."""

import math

import numpy as np
import pytest
from scipy.special import expit

from alphatree import (
    DomainError,
    EmptyMeasureError,
    InfiniteRiskError,
    RunTrace,
    binary_entropy,
    clip_bounds,
    condition_on_group,
    condition_on_leaf,
    condition_positive,
    empirical_risk,
    evaluate_tree,
    full_view,
    leaf_weights,
    make_dataset,
    make_view,
    route_rows,
)

from helpers import probe_columns, random_dataset, random_tree

LOG2 = math.log(2.0)


def tiny_dataset():
    n = 6
    return make_dataset(
        {"x": np.arange(n, dtype=float)},
        {"x": "numeric"},
        np.array([1, -1, 1, -1, 1, -1]),
        ["a"] * 3 + ["b"] * 3,
        np.full(n, 0.6),
        1.0,
    )


def test_make_dataset_validation():
    n = 6
    feats = {"x": np.arange(n, dtype=float)}
    kinds = {"x": "numeric"}
    labels = np.array([1, -1, 1, -1, 1, -1])
    groups = ["a"] * 3 + ["b"] * 3
    scores = np.full(n, 0.6)
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, np.array([1, 0, 1, 0, 1, 0]), groups, scores, 1.0)
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, labels, groups, np.array([0.5] * 5 + [1.2]), 1.0)
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, labels, groups, scores, 1.0,
                     weights=np.array([1.0] * 5 + [-1.0]))
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, labels, groups, scores, 1.0, weights=np.zeros(n))
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, labels, groups, scores, 1.0,
                     target=np.array([0.5] * 5 + [1.5]))
    with pytest.raises(DomainError):
        make_dataset(feats, {"x": "real"}, labels, groups, scores, 1.0)
    with pytest.raises(DomainError):
        make_dataset(feats, kinds, labels[:2], groups, scores, 1.0)
    with pytest.raises(EmptyMeasureError):
        make_dataset({"x": np.array([])}, kinds, np.array([], dtype=int), [],
                     np.array([]), 1.0)


def test_make_dataset_clips_scores_on_ingest():
    ds = tiny_dataset()
    lo, hi = clip_bounds(1.0)
    raw = np.array([0.0, 0.1, 0.5, 0.9, 1.0, hi])
    ds2 = make_dataset({"x": np.arange(6, dtype=float)}, {"x": "numeric"},
                       ds.labels, ds.groups, raw, 1.0)
    assert ds2.scores[0] == lo
    assert ds2.scores[4] == hi
    assert ds2.scores[2] == 0.5
    assert np.all(ds2.scores >= lo) and np.all(ds2.scores <= hi)


def test_group_column_routable_but_not_a_feature():
    ds = tiny_dataset()
    assert "group" in ds.columns
    assert "group" not in ds.feature_names
    assert ds.kinds["group"] == "categorical"
    assert ds.modalities() == ("a", "b")


def test_default_weights_are_unit():
    ds = tiny_dataset()
    assert np.all(ds.weights == 1.0)


def test_full_view_normalizes_weights():
    rng = np.random.default_rng(2)
    ds, _ = random_dataset(rng)
    v = full_view(ds)
    assert v.n == ds.n
    assert v.weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(v.weights, ds.weights / ds.weights.sum(), atol=1e-15)


def test_make_view_renormalizes_and_rejects_empty():
    ds = tiny_dataset()
    v = make_view(ds, np.array([0, 2, 4]), raw_weights=np.array([1.0, 1.0, 2.0]))
    assert v.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert v.weights[2] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(EmptyMeasureError):
        make_view(ds, np.array([], dtype=int))


def test_view_pick_requires_base_alignment():
    ds = tiny_dataset()
    v = make_view(ds, np.array([0, 1]))
    with pytest.raises(DomainError):
        v.pick(np.zeros(3))
    assert np.array_equal(v.pick(np.arange(6)), [0, 1])


def test_condition_on_group_selects_rows():
    ds = tiny_dataset()
    va = condition_on_group(ds, "a")
    assert np.array_equal(va.indices, [0, 1, 2])
    with pytest.raises(EmptyMeasureError):
        condition_on_group(ds, "zzz")


def test_condition_positive_selects_positive_rows_of_group():
    ds = tiny_dataset()
    vp = condition_positive(ds, "a")
    assert np.array_equal(vp.indices, [0, 2])
    assert vp.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_route_rows_matches_pointwise_evaluation():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, max_depth=4)
    cols = probe_columns(rng, 50)
    ids = route_rows(tree, cols, 50)
    for i in range(50):
        x = {k: cols[k][i] for k in cols}
        lid, _ = evaluate_tree(tree, x)
        assert ids[i] == lid


def test_condition_on_leaf_and_leaf_weights_agree():
    rng = np.random.default_rng(4)
    n = 150
    cols = probe_columns(rng, n)
    ds = make_dataset(cols, {"x0": "numeric", "x1": "numeric", "c0": "categorical"},
                      np.where(rng.random(n) < 0.5, 1, -1), ["g"] * n,
                      rng.uniform(0.3, 0.7, n), 1.0,
                      weights=rng.uniform(0.5, 2.0, n))
    tree = random_tree(rng, max_depth=3)
    v = full_view(ds)
    masses = leaf_weights(v, tree)
    assert sum(masses.values()) == pytest.approx(1.0, abs=1e-12)
    total = 0
    for leaf in tree.leaves():
        if masses.get(leaf.leaf_id, 0.0) == 0.0:
            continue
        vl = condition_on_leaf(v, tree, leaf.leaf_id)
        total += vl.n
        # view weights renormalize; the leaf mass tracks the unnormalized share
        picked = v.pick(np.arange(ds.n))
        routed = route_rows(tree, {k: ds.columns[k] for k in ds.columns}, ds.n)
        assert np.all(routed[vl.indices] == leaf.leaf_id)
    assert total == ds.n


def test_binary_entropy_oracle_and_edges():
    assert binary_entropy(0.75) == pytest.approx(0.5623351446188083, abs=1e-15)
    assert binary_entropy(0.5) == pytest.approx(LOG2, abs=1e-15)
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    # tolerance band just outside [0, 1] comes from float noise upstream
    assert binary_entropy(-5e-13) == 0.0
    assert binary_entropy(1.0 + 5e-13) == 0.0
    with pytest.raises(DomainError):
        binary_entropy(1.5)
    with pytest.raises(DomainError):
        binary_entropy(-1e-6)


def test_binary_entropy_concave_symmetric():
    eta = np.linspace(0.0, 1.0, 41)
    h = np.array([binary_entropy(float(e)) for e in eta])
    np.testing.assert_allclose(h, h[::-1], atol=1e-14)
    assert np.argmax(h) == 20


def test_empirical_risk_constant_half():
    ds = tiny_dataset()
    v = full_view(ds)
    eta = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    assert empirical_risk(v, np.full(6, 0.5), eta) == pytest.approx(LOG2, abs=1e-12)


def test_empirical_risk_known_value():
    # single row, eta = 1, q = 1/e: risk is exactly 1
    ds = make_dataset({"x": np.zeros(1)}, {"x": "numeric"}, np.array([1]),
                      ["g"], np.array([0.5]), 2.0)
    v = full_view(ds)
    q = np.array([math.exp(-1.0)])
    assert empirical_risk(v, q, np.array([1.0])) == pytest.approx(1.0, abs=1e-12)


def test_empirical_risk_infinite_on_confident_mistake():
    ds = tiny_dataset()
    v = full_view(ds)
    q = np.array([0.0] + [0.5] * 5)
    with pytest.raises(InfiniteRiskError):
        empirical_risk(v, q, np.ones(6))
    # but a zero-probability event costs nothing when eta is zero too
    r = empirical_risk(v, np.array([1e-300] + [0.5] * 5), np.zeros(6))
    assert math.isfinite(r)


def test_empirical_risk_proper():
    # cross entropy is minimized only by the target itself
    rng = np.random.default_rng(9)
    ds, _ = random_dataset(rng, n_min=100, n_max=100)
    v = full_view(ds)
    eta = rng.uniform(0.1, 0.9, ds.n)
    base = empirical_risk(v, eta, eta)
    ideal = float(np.sum(v.weights * [binary_entropy(float(e)) for e in v.pick(eta)]))
    assert base == pytest.approx(ideal, abs=1e-10)
    for _ in range(20):
        q = np.clip(eta + rng.uniform(-0.08, 0.08, ds.n), 0.05, 0.95)
        assert empirical_risk(v, q, eta) >= base - 1e-12


def test_empirical_risk_tower_over_leaves():
    # total risk decomposes as the mass-weighted sum of per-leaf risks
    rng = np.random.default_rng(10)
    n = 200
    cols = probe_columns(rng, n)
    ds = make_dataset(cols, {"x0": "numeric", "x1": "numeric", "c0": "categorical"},
                      np.where(rng.random(n) < 0.5, 1, -1), ["g"] * n,
                      rng.uniform(0.3, 0.7, n), 1.0,
                      weights=rng.uniform(0.5, 2.0, n))
    eta = rng.uniform(0.05, 0.95, n)
    tree = random_tree(rng, max_depth=3)
    q = np.clip(rng.uniform(0.1, 0.9, ds.n), 0.1, 0.9)
    v = full_view(ds)
    total = empirical_risk(v, q, eta)
    masses = leaf_weights(v, tree)
    acc = 0.0
    for leaf_id, mass in masses.items():
        if mass == 0.0:
            continue
        vl = condition_on_leaf(v, tree, leaf_id)
        acc += mass * empirical_risk(vl, q, eta)
    assert acc == pytest.approx(total, abs=1e-12)


def test_run_trace_round_trip():
    tr = RunTrace()
    tr.add(0, "risk", 1.0)
    tr.add(0, "gap", 2.0)
    tr.add(1, "risk", 0.5, group="g0", event="split")
    assert tr.values("risk") == [1.0, 0.5]
    assert tr.values("gap") == [2.0]
    assert tr.last_iteration() == 1
    assert tr.rows[2].group == "g0"
    assert tr.rows[2].event == "split"


def test_run_trace_rejects_rewinding_iterations():
    tr = RunTrace()
    tr.add(3, "m", 1.0)
    with pytest.raises(ValueError):
        tr.add(2, "m", 1.0)
