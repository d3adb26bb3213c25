"""Independent brute-force oracles shared by unit and acceptance tests."""
import numpy as np


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def exhaustive_root_split(X, y, min_leaf=1):
    """Every feature, every midpoint, plain Python Gini."""
    def g(labels):
        n = len(labels)
        return 1.0 - sum((labels.count(c) / n) ** 2 for c in set(labels))

    best = None
    n = len(y)
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f].tolist()))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            left = [int(y[i]) for i in range(n) if X[i, f] <= t]
            right = [int(y[i]) for i in range(n) if X[i, f] > t]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            imp = (len(left) * g(left) + len(right) * g(right)) / n
            if best is None or imp < best[2] - 1e-12:
                best = (f, t, imp)
    return best


def _midranks(values):
    values = np.asarray(values, dtype=float)
    ranks = np.empty(values.size)
    for v in np.unique(values):
        idx = np.flatnonzero(values == v)
        lo = np.sum(values < v)
        ranks[idx] = lo + (idx.size + 1) / 2
    return ranks


def kw_statistic(groups):
    """Tie-corrected H from explicit mid-ranks."""
    pooled = np.concatenate([np.asarray(g, dtype=float) for g in groups])
    return _kw_from_ranks(_midranks(pooled)[None, :], [len(g) for g in groups], pooled)[0]


def _kw_from_ranks(rank_rows, sizes, pooled):
    n = pooled.size
    _, t = np.unique(pooled, return_counts=True)
    corr = 1.0 - np.sum(t.astype(float) ** 3 - t) / (n ** 3 - n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    s = sum(rank_rows[:, bounds[i]:bounds[i + 1]].sum(axis=1) ** 2 / sizes[i] for i in range(len(sizes)))
    return (12.0 / (n * (n + 1)) * s - 3.0 * (n + 1)) / corr


def kw_permutation_p(groups, n_perm=100_000, seed=0, chunk=10_000):
    """Monte-Carlo permutation p-value P(H* >= H_obs) and its 99% half-width."""
    pooled = np.concatenate([np.asarray(g, dtype=float) for g in groups])
    sizes = [len(g) for g in groups]
    ranks = _midranks(pooled)
    h_obs = _kw_from_ranks(ranks[None, :], sizes, pooled)[0]
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        perm = np.argsort(rng.random((m, pooled.size)), axis=1)
        hits += int(np.sum(_kw_from_ranks(ranks[perm], sizes, pooled) >= h_obs - 1e-9))
        done += m
    p = hits / n_perm
    return p, 2.576 * np.sqrt(max(p * (1 - p), 1.0 / n_perm) / n_perm)
