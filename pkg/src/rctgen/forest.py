"""Regression/probability forests whose splits incorporate missingness.

Every node evaluates, over candidate thresholds t (midpoints of sorted
unique observed values), three split families:

1. {x <= t or x missing} vs {x > t}
2. {x <= t} vs {x > t or x missing}
3. {x missing} vs {x observed}

and keeps the variance-impurity-minimizing valid split. Ties break toward
the lowest split-type index, then the lowest threshold. Masked values are
never read: routing and split search use the mask alone to decide where a
missing entry goes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import MaskedMatrix
from .errors import DegenerateSampleError, SpecError

PROB_CLIP = 0.01


@njit(cache=True)
def _best_split_col(v, miss, y, min_leaf):
    """Best MIA split on one column.

    Returns (found, split_type, threshold, sse_gain) where sse_gain is the
    reduction in total within-node sum of squared errors.
    """
    n = v.shape[0]
    s_tot = 0.0
    ss_tot = 0.0
    n_m = 0
    s_m = 0.0
    ss_m = 0.0
    for i in range(n):
        s_tot += y[i]
        ss_tot += y[i] * y[i]
        if miss[i]:
            n_m += 1
            s_m += y[i]
            ss_m += y[i] * y[i]
    n_o = n - n_m
    sse_parent = ss_tot - s_tot * s_tot / n

    # Sort observed rows by value.
    vo = np.empty(n_o)
    yo = np.empty(n_o)
    k = 0
    for i in range(n):
        if not miss[i]:
            vo[k] = v[i]
            yo[k] = y[i]
            k += 1
    order = np.argsort(vo, kind="mergesort")
    vs = vo[order]
    ys = yo[order]

    best_found = False
    best_type = 0
    best_thr = 0.0
    best_gain = 0.0

    # Types 1 and 2 in tie-break order: all type-1 candidates by ascending
    # threshold, then all type-2 candidates.
    for stype in (1, 2):
        cum_s = 0.0
        cum_ss = 0.0
        for i in range(n_o - 1):
            cum_s += ys[i]
            cum_ss += ys[i] * ys[i]
            if vs[i + 1] <= vs[i]:
                continue  # duplicate value, no boundary here
            thr = 0.5 * (vs[i] + vs[i + 1])
            k_left = i + 1
            if stype == 1:
                nl = k_left + n_m
                sl = cum_s + s_m
                ssl = cum_ss + ss_m
            else:
                nl = k_left
                sl = cum_s
                ssl = cum_ss
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sr = s_tot - sl
            ssr = ss_tot - ssl
            sse = (ssl - sl * sl / nl) + (ssr - sr * sr / nr)
            gain = sse_parent - sse
            if not best_found or gain > best_gain:
                best_found = True
                best_type = stype
                best_thr = thr
                best_gain = gain

    # Type 3: missing vs observed.
    if n_m >= min_leaf and n_o >= min_leaf:
        sse = (ss_m - s_m * s_m / n_m) + (
            (ss_tot - ss_m) - (s_tot - s_m) * (s_tot - s_m) / n_o
        )
        gain = sse_parent - sse
        if not best_found or gain > best_gain:
            best_found = True
            best_type = 3
            best_thr = np.nan
            best_gain = gain

    return best_found, best_type, best_thr, best_gain


@njit(cache=True)
def _grow_tree(values, mask, y, idx, mtry, min_leaf, max_depth, seed,
               feature, stype, thr, left, right, leaf_value):
    """Grow one tree in place over the rows listed in idx; returns node count."""
    np.random.seed(seed)
    p = values.shape[1]
    feat_pool = np.empty(p, dtype=np.int64)

    max_nodes = feature.shape[0]
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)

    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = idx.shape[0]
    stack_depth[0] = 0

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        top -= 1
        n_node = hi - lo

        s = 0.0
        for i in range(lo, hi):
            s += y[idx[i]]
        mean = s / n_node
        feature[node] = -1
        leaf_value[node] = mean
        if n_node < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        # Sample mtry distinct features (partial Fisher-Yates).
        for j in range(p):
            feat_pool[j] = j
        n_try = mtry if mtry < p else p
        for j in range(n_try):
            r = j + np.random.randint(0, p - j)
            tmp = feat_pool[j]
            feat_pool[j] = feat_pool[r]
            feat_pool[r] = tmp

        best_found = False
        best_feat = -1
        best_type = 0
        best_thr = 0.0
        best_gain = 0.0
        v = np.empty(n_node)
        mi = np.empty(n_node, dtype=np.bool_)
        yy = np.empty(n_node)
        for i in range(n_node):
            yy[i] = y[idx[lo + i]]
        for jj in range(n_try):
            j = feat_pool[jj]
            for i in range(n_node):
                row = idx[lo + i]
                v[i] = values[row, j]
                mi[i] = not mask[row, j]
            found, st, t, gain = _best_split_col(v, mi, yy, min_leaf)
            if found and (not best_found or gain > best_gain):
                best_found = True
                best_feat = j
                best_type = st
                best_thr = t
                best_gain = gain

        if not best_found or best_gain <= 0.0:
            continue

        # Partition idx[lo:hi] so left rows come first.
        tmp_idx = np.empty(n_node, dtype=idx.dtype)
        n_left = 0
        n_right = 0
        for i in range(n_node):
            row = idx[lo + i]
            is_miss = not mask[row, best_feat]
            if best_type == 3:
                go_left = is_miss
            elif is_miss:
                go_left = best_type == 1
            else:
                go_left = values[row, best_feat] <= best_thr
            if go_left:
                idx[lo + n_left] = row
                n_left += 1
            else:
                tmp_idx[n_right] = row
                n_right += 1
        for i in range(n_right):
            idx[lo + n_left + i] = tmp_idx[i]

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        stype[node] = best_type
        thr[node] = best_thr
        left[node] = lchild
        right[node] = rchild

        top += 1
        stack_node[top] = lchild
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = rchild
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        stack_depth[top] = depth + 1

    return n_nodes


@njit(cache=True)
def _predict_tree(feature, stype, thr, left, right, leaf_value, values, mask, out):
    n = values.shape[0]
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            j = feature[node]
            is_miss = not mask[i, j]
            if stype[node] == 3:
                go_left = is_miss
            elif is_miss:
                go_left = stype[node] == 1
            else:
                go_left = values[i, j] <= thr[node]
            node = left[node] if go_left else right[node]
        out[i] += leaf_value[node]


@dataclass(frozen=True)
class MiaForestParams:
    num_trees: int = 500
    min_leaf: int = 5
    mtry: int | None = None  # None = ceil(sqrt(p))
    subsample: float = 0.5
    max_depth: int | None = None

    def resolved_mtry(self, p: int) -> int:
        return self.mtry if self.mtry is not None else int(np.ceil(np.sqrt(p)))


@dataclass(frozen=True)
class MiaForest:
    trees: tuple
    params: MiaForestParams
    task: str  # "regression" or "probability"
    column_names: tuple[str, ...]
    inbag: tuple = ()  # per-tree training-row indices, for OOB prediction
    n_train: int = 0


def best_mia_split(xs_values, xs_mask, ys, min_leaf: int = 5):
    """Best MIA split on a single column, or None if no valid split exists.

    Returns (split_type, threshold, impurity_gain) with the gain expressed
    as the per-sample decrease in variance impurity; threshold is NaN for a
    type-3 (missing vs observed) split.
    """
    v = np.ascontiguousarray(np.asarray(xs_values, dtype=float))
    miss = ~np.ascontiguousarray(np.asarray(xs_mask, dtype=bool))
    y = np.ascontiguousarray(np.asarray(ys, dtype=float))
    if v.shape != y.shape or v.ndim != 1:
        raise SpecError("xs and ys must be equal-length vectors")
    if len(v) < 2 * min_leaf:
        return None
    found, st, thr, gain = _best_split_col(v, miss, y, min_leaf)
    if not found:
        return None
    return int(st), float(thr), float(gain) / len(v)


def fit_mia_forest(
    mm: MaskedMatrix,
    y: np.ndarray,
    params: MiaForestParams | None = None,
    task: str = "regression",
    rng: np.random.Generator | None = None,
) -> MiaForest:
    """Bagged MIA trees over row subsamples."""
    params = params or MiaForestParams()
    if task not in ("regression", "probability"):
        raise SpecError(f"unknown task {task!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    y = np.asarray(y, dtype=float)
    n, p = mm.values.shape
    if y.shape != (n,):
        raise SpecError("y must match the number of rows")
    if n < 2 * params.min_leaf:
        raise DegenerateSampleError(f"need at least {2 * params.min_leaf} rows, got {n}")
    if task == "probability" and not np.isin(y, (0.0, 1.0)).all():
        raise SpecError("probability task requires binary y")

    values = np.ascontiguousarray(mm.values)
    mask = np.ascontiguousarray(mm.mask)
    mtry = params.resolved_mtry(p)
    n_sub = max(2 * params.min_leaf, int(round(params.subsample * n)))
    max_depth = -1 if params.max_depth is None else params.max_depth

    trees = []
    inbag = []
    for _ in range(params.num_trees):
        idx = rng.choice(n, size=n_sub, replace=False).astype(np.int64)
        inbag.append(idx)
        seed = int(rng.integers(0, 2**31 - 1))
        max_nodes = 2 * n_sub + 1
        feature = np.empty(max_nodes, dtype=np.int64)
        stype = np.zeros(max_nodes, dtype=np.int8)
        thr = np.zeros(max_nodes)
        left = np.zeros(max_nodes, dtype=np.int64)
        right = np.zeros(max_nodes, dtype=np.int64)
        leaf_value = np.zeros(max_nodes)
        n_nodes = _grow_tree(
            values, mask, y, idx, mtry, params.min_leaf, max_depth, seed,
            feature, stype, thr, left, right, leaf_value,
        )
        trees.append(
            (
                feature[:n_nodes].copy(),
                stype[:n_nodes].copy(),
                thr[:n_nodes].copy(),
                left[:n_nodes].copy(),
                right[:n_nodes].copy(),
                leaf_value[:n_nodes].copy(),
            )
        )
    return MiaForest(tuple(trees), params, task, mm.column_names, tuple(inbag), n)


def forest_predict_matrix(f: MiaForest, mm: MaskedMatrix) -> np.ndarray:
    """Mean of per-tree leaf means for every row of a masked matrix."""
    values = np.ascontiguousarray(mm.values)
    mask = np.ascontiguousarray(mm.mask)
    out = np.zeros(mm.n_rows)
    for feature, stype, thr, left, right, leaf_value in f.trees:
        _predict_tree(feature, stype, thr, left, right, leaf_value, values, mask, out)
    out /= len(f.trees)
    if f.task == "probability":
        out = np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)
    return out


def forest_predict_oob(f: MiaForest, mm: MaskedMatrix) -> np.ndarray:
    """Out-of-bag predictions for the forest's own training matrix.

    Each row is averaged only over trees whose subsample excluded it, so
    training rows do not see their own outcome (the forest analogue of
    honest splitting).  Rows that are in-bag everywhere fall back to the
    all-tree average.
    """
    if not f.inbag or mm.n_rows != f.n_train:
        raise SpecError("OOB prediction requires the forest's training matrix")
    values = np.ascontiguousarray(mm.values)
    mask = np.ascontiguousarray(mm.mask)
    total = np.zeros(mm.n_rows)
    oob_sum = np.zeros(mm.n_rows)
    oob_count = np.zeros(mm.n_rows)
    tmp = np.zeros(mm.n_rows)
    for (feature, stype, thr, left, right, leaf_value), idx in zip(f.trees, f.inbag):
        tmp[:] = 0.0
        _predict_tree(feature, stype, thr, left, right, leaf_value, values, mask, tmp)
        total += tmp
        oob = np.ones(mm.n_rows, dtype=bool)
        oob[idx] = False
        oob_sum[oob] += tmp[oob]
        oob_count[oob] += 1.0
    out = np.where(oob_count > 0, oob_sum / np.maximum(oob_count, 1.0),
                   total / len(f.trees))
    if f.task == "probability":
        out = np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)
    return out


def forest_predict(f: MiaForest, row, mask=None) -> float:
    """Prediction for a single possibly incomplete row."""
    row = np.asarray(row, dtype=float)
    mask_row = np.ones(row.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    mm = MaskedMatrix(row[None, :], mask_row[None, :], f.column_names)
    return float(forest_predict_matrix(f, mm)[0])
