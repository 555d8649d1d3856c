"""Top-down alpha-tree induction: alignment edges, leaf labels, split search,
the heaviest-leaf boosting loop, the balanced distribution, and weak-learning
diagnostics.

The alignment edge of a weighted region is E[(2*eta - 1) * nlogit(score)]:
how confidently-correct the black-box is there, in [-1, 1].  Leaves are
labeled from their edge (conservative) or from its signed parts (audacious);
splits minimize the weighted two-child entropy H((1+edge)/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .core import (
    A_MAX,
    EDGE_EPS,
    AlphaTree,
    DomainError,
    Leaf,
    Node,
    SplitTest,
    apply_alpha,
    nlogit,
)
from .data import RunTrace, View, binary_entropy, make_view

__all__ = [
    "UndefinedLeafError",
    "DegenerateLeafError",
    "LeafStats",
    "InductionConfig",
    "SplitCandidate",
    "WhaReport",
    "BalancedWeights",
    "edge",
    "edge_pos_neg",
    "leaf_alpha_conservative",
    "leaf_alpha_audacious",
    "leaf_entropy",
    "tree_entropy",
    "audacious_leaf_bound",
    "leaf_stats",
    "best_split",
    "topdown",
    "relabel_leaves",
    "balanced_weights",
    "wha_check",
    "decrease_certificate",
    "conservative_label_objective",
]

LOG2 = math.log(2.0)


class UndefinedLeafError(ValueError):
    """A leaf carries no alignment signal (both edge parts are zero)."""


class DegenerateLeafError(ValueError):
    """A leaf with |edge| = 1 cannot support the balanced distribution."""


@dataclass(frozen=True)
class LeafStats:
    """Per-leaf boosting bookkeeping under a training view."""

    leaf_id: int
    edge: float
    edge_pos: float
    edge_neg: float
    mass: float
    entropy: float
    count: int


@dataclass(frozen=True)
class InductionConfig:
    """Knobs of the induction loop.

    min_child_fraction is measured on the parent leaf's weight mass; the
    count rule applies jointly.  scoring picks the leaf-label rule.
    """

    max_iterations: int = 32
    min_child_fraction: float = 0.10
    min_child_count: int = 30
    scoring: str = "conservative"
    leaf_policy: str = "heaviest"
    entropy_improvement_tol: float = 1e-10
    alpha_cap: float = A_MAX

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not (0.0 < self.min_child_fraction < 0.5):
            raise ValueError("min_child_fraction must lie in (0, 0.5)")
        if self.min_child_count < 1:
            raise ValueError("min_child_count must be >= 1")
        if self.scoring not in ("conservative", "audacious"):
            raise ValueError(f"unknown scoring {self.scoring!r}")
        if self.leaf_policy != "heaviest":
            raise ValueError(f"unknown leaf policy {self.leaf_policy!r}")


@dataclass(frozen=True)
class SplitCandidate:
    """A scored axis-aligned split; rows passing the test go left."""

    feature: str
    kind: str
    threshold: float | None
    modality: str | None
    post_entropy: float
    parent_entropy: float
    mass_left: float
    mass_right: float

    @property
    def gain(self) -> float:
        return self.parent_entropy - self.post_entropy

    def test(self) -> SplitTest:
        return SplitTest(
            feature=self.feature,
            kind=self.kind,
            threshold=self.threshold,
            modality=self.modality,
        )


@dataclass(frozen=True)
class WhaReport:
    """Weak-learning witness of a candidate split at a leaf.

    gamma_witnessed is |E_balanced[Y * nlogit * h]|; condition_ii_value is
    edge * E[(1 - nlogit^2) * h] under the unbalanced leaf measure.
    """

    gamma_witnessed: float
    condition_ii_value: float
    edge: float

    def holds_at(self, gamma: float) -> bool:
        return self.gamma_witnessed >= gamma and self.condition_ii_value <= 0.0


@dataclass(frozen=True)
class BalancedWeights:
    """Product-measure weights over (row, label) pairs of a leaf view.

    positive[i] / negative[i] weight the (x_i, +1) / (x_i, -1) outcomes; the
    two arrays together sum to 1 up to float noise.
    """

    positive: np.ndarray
    negative: np.ndarray
    edge: float

    def total(self) -> float:
        return float(self.positive.sum() + self.negative.sum())


# ---------------------------------------------------------------------------
# edges and labels
# ---------------------------------------------------------------------------


def _nlogit_rows(v: View, scores, B: float, nlogit_values) -> np.ndarray:
    if nlogit_values is not None:
        return v.pick(np.asarray(nlogit_values, dtype=float))
    return nlogit(v.pick(scores), B)


def _eta_rows(v: View, eta_t) -> np.ndarray:
    eta = np.broadcast_to(np.asarray(eta_t, dtype=float), (v.base.n,))
    out = eta[v.indices]
    if np.any(out < 0) or np.any(out > 1):
        raise DomainError("target posterior must lie in [0, 1]")
    return out


def edge(v: View, eta_t, scores, B: float, nlogit_values=None) -> float:
    """Alignment edge E[(2*eta - 1) * nlogit(score)] under the view."""
    nl = _nlogit_rows(v, scores, B, nlogit_values)
    eta = _eta_rows(v, eta_t)
    e = float(np.dot(v.weights, (2.0 * eta - 1.0) * nl))
    return min(1.0, max(-1.0, e))


def edge_pos_neg(v: View, eta_t, scores, B: float, nlogit_values=None) -> tuple[float, float]:
    """Signed edge parts (e+, e-): expected aligned / misaligned |nlogit|."""
    nl = _nlogit_rows(v, scores, B, nlogit_values)
    eta = _eta_rows(v, eta_t)
    pos_part = np.maximum(nl, 0.0)
    neg_part = np.maximum(-nl, 0.0)
    e_pos = float(np.dot(v.weights, eta * pos_part + (1.0 - eta) * neg_part))
    e_neg = float(np.dot(v.weights, eta * neg_part + (1.0 - eta) * pos_part))
    return max(0.0, e_pos), max(0.0, e_neg)


def leaf_alpha_conservative(edge_value: float, B: float, alpha_cap: float = A_MAX) -> float:
    """Leaf label (1/B) * log((1+edge)/(1-edge)), clamped near |edge| = 1."""
    e = min(1.0, max(-1.0, float(edge_value)))
    if abs(e) >= 1.0 - EDGE_EPS:
        return math.copysign(alpha_cap, e)
    a = math.log((1.0 + e) / (1.0 - e)) / float(B)
    return min(alpha_cap, max(-alpha_cap, a))


def leaf_alpha_audacious(e_pos: float, e_neg: float, B: float, alpha_cap: float = A_MAX) -> float:
    """Leaf label (1/B) * log(e+/e-), clamped when either part vanishes."""
    e_pos = float(e_pos)
    e_neg = float(e_neg)
    if e_pos < 0 or e_neg < 0:
        raise DomainError("edge parts must be nonnegative")
    if e_pos < EDGE_EPS and e_neg < EDGE_EPS:
        raise UndefinedLeafError("leaf has no alignment signal (e+ = e- = 0)")
    if e_neg < EDGE_EPS:
        return alpha_cap
    if e_pos < EDGE_EPS:
        return -alpha_cap
    a = math.log(e_pos / e_neg) / float(B)
    return min(alpha_cap, max(-alpha_cap, a))


def leaf_entropy(edge_value: float) -> float:
    """Binary entropy of (1+edge)/2."""
    e = min(1.0, max(-1.0, float(edge_value)))
    return float(binary_entropy(0.5 * (1.0 + e)))


def audacious_leaf_bound(e_pos: float, e_neg: float) -> float:
    """Per-leaf risk bound of audacious labels; log 2 when the signal is 0.

    Equals log2 * (1 + (e+ + e-) * (H2(e+/(e+ + e-)) - 1)) with H2 the
    base-2 entropy; never exceeds the conservative leaf entropy.
    """
    e_pos = float(e_pos)
    e_neg = float(e_neg)
    if e_pos < 0 or e_neg < 0 or e_pos + e_neg > 1.0 + 1e-9:
        raise DomainError("edge parts must be nonnegative with sum <= 1")
    s = e_pos + e_neg
    if s == 0.0:
        return LOG2
    return LOG2 + s * (float(binary_entropy(e_pos / s)) - LOG2)


def conservative_label_objective(alpha: float, edge_value: float, B: float) -> float:
    """Per-leaf upper-hull objective log(1+exp(alpha*B)) - alpha*B*(1+edge)/2.

    The conservative label is its unique minimizer; exposed for diagnostics
    and tests.
    """
    t = float(alpha) * float(B)
    softplus = math.log1p(math.exp(-abs(t))) + max(t, 0.0)
    return softplus - t * (1.0 + float(edge_value)) / 2.0


# ---------------------------------------------------------------------------
# per-leaf statistics
# ---------------------------------------------------------------------------


def leaf_stats(
    v: View,
    tree: AlphaTree,
    eta_t,
    scores,
    B: float,
    nlogit_values=None,
    leaf_ids_rows: np.ndarray | None = None,
) -> dict[int, LeafStats]:
    """Edge, signed parts, mass, entropy, and count per reached leaf."""
    from .core import route_rows

    if leaf_ids_rows is None:
        leaf_ids_rows = route_rows(tree, v.base.columns, v.base.n)[v.indices]
    nl = _nlogit_rows(v, scores, B, nlogit_values)
    eta = _eta_rows(v, eta_t)
    w = v.weights
    y_signal = (2.0 * eta - 1.0) * nl
    pos_part = eta * np.maximum(nl, 0.0) + (1.0 - eta) * np.maximum(-nl, 0.0)
    neg_part = eta * np.maximum(-nl, 0.0) + (1.0 - eta) * np.maximum(nl, 0.0)

    out: dict[int, LeafStats] = {}
    for lid in np.unique(leaf_ids_rows):
        mask = leaf_ids_rows == lid
        mass = float(w[mask].sum())
        if mass <= 0.0:
            continue
        e = float(np.dot(w[mask], y_signal[mask])) / mass
        e = min(1.0, max(-1.0, e))
        ep = max(0.0, float(np.dot(w[mask], pos_part[mask])) / mass)
        en = max(0.0, float(np.dot(w[mask], neg_part[mask])) / mass)
        out[int(lid)] = LeafStats(
            leaf_id=int(lid),
            edge=e,
            edge_pos=ep,
            edge_neg=en,
            mass=mass,
            entropy=leaf_entropy(e),
            count=int(mask.sum()),
        )
    return out


def tree_entropy(tree: AlphaTree, v: View, eta_t, scores, B: float, nlogit_values=None) -> float:
    """Leaf-mass-weighted entropy; upper-bounds the wrapped log-loss risk."""
    stats = leaf_stats(v, tree, eta_t, scores, B, nlogit_values)
    return float(sum(st.mass * st.entropy for st in stats.values()))


def relabel_leaves(
    tree: AlphaTree,
    stats: Mapping[int, LeafStats],
    scoring: str,
    B: float,
    alpha_cap: float = A_MAX,
) -> AlphaTree:
    """Set every reached leaf's alpha from its current stats.

    Leaves with no mass under the training view keep their current alpha:
    there is no signal to relabel them, and this is what confines a
    per-group run to that group's sub-tree.
    """
    updates: dict[int, Leaf] = {}
    for leaf in tree.leaves():
        st = stats.get(leaf.leaf_id)
        if st is None:
            continue
        if scoring == "conservative":
            a = leaf_alpha_conservative(st.edge, B, alpha_cap)
        else:
            a = leaf_alpha_audacious(st.edge_pos, st.edge_neg, B, alpha_cap)
        updates[leaf.leaf_id] = Leaf(leaf.leaf_id, a, edge=st.edge, mass=st.mass)
    return tree.with_leaf_updates(updates)


# ---------------------------------------------------------------------------
# split search
# ---------------------------------------------------------------------------


def best_split(
    v_at_leaf: View,
    schema: Mapping[str, str] | None,
    eta_t,
    scores,
    B: float,
    cfg: InductionConfig,
    nlogit_values=None,
) -> SplitCandidate | None:
    """Best axis-aligned split of a leaf view, or None.

    Candidates are each observed categorical modality and each midpoint
    between consecutive distinct sorted numeric values; children must carry
    cfg.min_child_fraction of the leaf's mass AND cfg.min_child_count rows.
    The winner minimizes the mass-weighted two-child entropy and must beat
    the leaf's own entropy by more than cfg.entropy_improvement_tol.
    Ties resolve to the earliest feature in schema order, then the lowest
    threshold / first modality in sorted order.
    """
    if schema is None:
        schema = v_at_leaf.base.feature_kinds()
    nl = _nlogit_rows(v_at_leaf, scores, B, nlogit_values)
    eta = _eta_rows(v_at_leaf, eta_t)
    w = v_at_leaf.weights
    a = w * (2.0 * eta - 1.0) * nl
    total_w = float(w.sum())
    total_a = float(a.sum())
    parent_edge = min(1.0, max(-1.0, total_a / total_w))
    parent_h = leaf_entropy(parent_edge) * total_w
    min_mass = cfg.min_child_fraction * total_w

    best: SplitCandidate | None = None
    n = v_at_leaf.n
    for feature, kind in schema.items():
        col = v_at_leaf.base.columns.get(feature)
        if col is None:
            raise DomainError(f"schema feature {feature!r} not in dataset")
        values = col[v_at_leaf.indices]
        if kind == "numeric":
            order = np.argsort(values, kind="stable")
            sv = np.ascontiguousarray(values[order].astype(float))
            cumw = np.cumsum(w[order])
            cuma = np.cumsum(a[order])
            i, post = _kernels.numeric_split_scan(sv, cumw, cuma, min_mass, cfg.min_child_count)
            if i < 0:
                continue
            thr = 0.5 * (sv[i - 1] + sv[i])
            if thr >= sv[i]:
                # midpoint of adjacent floats can round up; keep the cut
                # strictly between the two runs
                thr = float(sv[i - 1])
            cand = SplitCandidate(
                feature=feature,
                kind="numeric",
                threshold=float(thr),
                modality=None,
                post_entropy=float(post),
                parent_entropy=parent_h,
                mass_left=float(cumw[i - 1]),
                mass_right=float(total_w - cumw[i - 1]),
            )
            if best is None or cand.post_entropy < best.post_entropy:
                best = cand
        elif kind == "categorical":
            for modality in sorted(set(values.tolist())):
                mask = values == modality
                cl = int(mask.sum())
                if cl < cfg.min_child_count or (n - cl) < cfg.min_child_count:
                    continue
                wl = float(w[mask].sum())
                wr = total_w - wl
                if wl < min_mass or wr < min_mass:
                    continue
                el = min(1.0, max(-1.0, float(a[mask].sum()) / wl))
                er = min(1.0, max(-1.0, float(total_a - a[mask].sum()) / wr))
                post = wl * leaf_entropy(el) + wr * leaf_entropy(er)
                cand = SplitCandidate(
                    feature=feature,
                    kind="categorical",
                    threshold=None,
                    modality=modality,
                    post_entropy=float(post),
                    parent_entropy=parent_h,
                    mass_left=wl,
                    mass_right=wr,
                )
                if best is None or cand.post_entropy < best.post_entropy:
                    best = cand
        else:
            raise DomainError(f"feature {feature!r} has unknown kind {kind!r}")

    if best is None:
        return None
    if best.parent_entropy - best.post_entropy <= cfg.entropy_improvement_tol:
        return None
    return best


# ---------------------------------------------------------------------------
# the induction loop
# ---------------------------------------------------------------------------


def _view_risk(v: View, q_view: np.ndarray, eta_view: np.ndarray) -> float:
    from scipy.special import xlogy

    terms = -(xlogy(eta_view, q_view) + xlogy(1.0 - eta_view, 1.0 - q_view))
    return float(np.dot(v.weights, terms))


def _leaf_view(v: View, leaf_ids_rows: np.ndarray, lid: int) -> View:
    mask = leaf_ids_rows == lid
    return make_view(v.base, v.indices[mask], raw_weights=v.weights[mask])


def topdown(
    v: View,
    eta_t,
    scores,
    B: float,
    tree0: AlphaTree,
    cfg: InductionConfig,
    *,
    schema: Mapping[str, str] | None = None,
    nlogit_values=None,
    trace: RunTrace | None = None,
    iteration_start: int = 0,
    risk_stop: float | None = None,
) -> tuple[AlphaTree, RunTrace]:
    """Heaviest-leaf top-down induction.

    Each iteration relabels every reached leaf, then splits the heaviest
    leaf that admits a size-feasible, entropy-improving split.  Stops when
    the budget runs out, no leaf can be split, or the view risk reaches
    risk_stop.  The per-iteration tree entropy sequence is non-increasing.
    """
    from .core import route_rows

    if trace is None:
        trace = RunTrace()
    if schema is None:
        schema = v.base.feature_kinds()

    scores_rows = v.pick(scores)
    eta_rows = _eta_rows(v, eta_t)
    tree = tree0

    def sync(tree: AlphaTree) -> tuple[AlphaTree, dict[int, LeafStats], np.ndarray]:
        leaf_ids_rows = route_rows(tree, v.base.columns, v.base.n)[v.indices]
        stats = leaf_stats(
            v, tree, eta_t, scores, B, nlogit_values, leaf_ids_rows=leaf_ids_rows
        )
        tree = relabel_leaves(tree, stats, cfg.scoring, B, cfg.alpha_cap)
        return tree, stats, leaf_ids_rows

    def emit(it: int, tree: AlphaTree, stats, leaf_ids_rows, event: str = "") -> float:
        h = float(sum(st.mass * st.entropy for st in stats.values()))
        lut = np.zeros(tree.max_leaf_id() + 1, dtype=float)
        for leaf in tree.leaves():
            lut[leaf.leaf_id] = leaf.alpha
        q_f = apply_alpha(scores_rows, lut[leaf_ids_rows])
        risk = _view_risk(v, q_f, eta_rows)
        trace.add(iteration_start + it, "tree_entropy", h, event=event)
        trace.add(iteration_start + it, "risk", risk)
        return risk

    tree, stats, leaf_ids_rows = sync(tree)
    risk = emit(0, tree, stats, leaf_ids_rows)
    if risk_stop is not None and risk <= risk_stop:
        return tree, trace

    for it in range(1, cfg.max_iterations + 1):
        chosen = None
        order = sorted(stats.values(), key=lambda st: (-st.mass, st.leaf_id))
        for st in order:
            if st.count < 2 * cfg.min_child_count:
                continue
            leaf_v = _leaf_view(v, leaf_ids_rows, st.leaf_id)
            cand = best_split(leaf_v, schema, eta_t, scores, B, cfg, nlogit_values)
            if cand is not None:
                chosen = (st, cand)
                break
        if chosen is None:
            break
        st, cand = chosen
        base_id = tree.max_leaf_id()
        subtree = Node(cand.test(), Leaf(base_id + 1, 1.0), Leaf(base_id + 2, 1.0))
        tree = tree.replace_leaf(st.leaf_id, subtree)
        tree, stats, leaf_ids_rows = sync(tree)
        risk = emit(it, tree, stats, leaf_ids_rows, event=f"split leaf={st.leaf_id} {cand.test().describe()}")
        if risk_stop is not None and risk <= risk_stop:
            break

    return tree, trace


# ---------------------------------------------------------------------------
# balanced distribution and weak-learning diagnostics
# ---------------------------------------------------------------------------


def balanced_weights(v_at_leaf: View, eta_t, scores, B: float, nlogit_values=None) -> BalancedWeights:
    """Reweighting of a leaf's (row, label) outcomes that centers the
    alignment signal: weight(x, y) scales by (1 - edge*y*nlogit)/(1 - edge^2).

    Total mass is 1 up to float noise.  Degenerate at |edge| = 1.
    """
    nl = _nlogit_rows(v_at_leaf, scores, B, nlogit_values)
    eta = _eta_rows(v_at_leaf, eta_t)
    w = v_at_leaf.weights
    e = float(np.dot(w, (2.0 * eta - 1.0) * nl))
    e = min(1.0, max(-1.0, e))
    if abs(e) >= 1.0 - 1e-15:
        raise DegenerateLeafError(f"balanced distribution undefined at edge {e!r}")
    denom = 1.0 - e * e
    positive = w * eta * (1.0 - e * nl) / denom
    negative = w * (1.0 - eta) * (1.0 + e * nl) / denom
    return BalancedWeights(positive=positive, negative=negative, edge=e)


def _indicator_rows(h, v: View) -> np.ndarray:
    """±1 per view row; +1 where the split test passes (left child)."""
    if isinstance(h, np.ndarray):
        arr = np.asarray(h, dtype=float)
        if arr.shape[0] != v.n:
            raise DomainError("indicator array must align with the view")
        if not np.all(np.isin(arr, (-1.0, 1.0))):
            raise DomainError("indicator values must be ±1")
        return arr
    test = h.test() if isinstance(h, SplitCandidate) else h
    values = v.base.columns[test.feature][v.indices]
    return np.where(test.passes_rows(values), 1.0, -1.0)


def wha_check(v_at_leaf: View, h, eta_t, scores, B: float, nlogit_values=None) -> WhaReport:
    """Measure a candidate's weak-learning witness at a leaf.

    h may be a SplitCandidate, a SplitTest, or a ±1 array over the view.
    """
    hv = _indicator_rows(h, v_at_leaf)
    nl = _nlogit_rows(v_at_leaf, scores, B, nlogit_values)
    bw = balanced_weights(v_at_leaf, eta_t, scores, B, nlogit_values)
    corr = float(np.sum(nl * hv * (bw.positive - bw.negative)))
    cond_ii = bw.edge * float(np.dot(v_at_leaf.weights, (1.0 - nl * nl) * hv))
    return WhaReport(gamma_witnessed=abs(corr), condition_ii_value=cond_ii, edge=bw.edge)


def decrease_certificate(pre_entropy: float, post_entropy: float, q_leaf: float, gamma: float) -> bool:
    """True iff the observed entropy decrease meets gamma^2 * q * (1-q)."""
    q = float(q_leaf)
    return (float(pre_entropy) - float(post_entropy)) >= (float(gamma) ** 2) * q * (1.0 - q) - 1e-9
