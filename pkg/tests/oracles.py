"""Independent reference implementations used only by the tests."""
import itertools

import numpy as np


def qp_dual_oracle(K, y, C):
    """Exact SVM dual by enumerating every active set (at 0, free, at C).

    For each face the KKT system of the equality-constrained QP is solved
    directly; the feasible face point with the lowest objective is the
    global optimum because the objective is convex.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    Q = K * np.outer(y, y)
    best = None
    for states in itertools.product((0, 1, 2), repeat=n):
        st = np.asarray(states)
        a = np.where(st == 2, C, 0.0)
        F = np.flatnonzero(st == 1)
        if F.size:
            m = F.size
            M = np.zeros((m + 1, m + 1))
            M[:m, :m] = Q[np.ix_(F, F)]
            M[:m, m] = y[F]
            M[m, :m] = y[F]
            r = np.concatenate([1.0 - Q[F] @ a, [-(y @ a)]])
            try:
                sol = np.linalg.solve(M, r)
            except np.linalg.LinAlgError:
                continue
            a[F] = sol[:m]
        if np.any(a < -1e-12) or np.any(a > C + 1e-12) or abs(y @ a) > 1e-9:
            continue
        obj = 0.5 * a @ Q @ a - a.sum()
        if best is None or obj < best[0] - 1e-12:
            best = (obj, a.copy())
    return best[1]


def kkt_violation(K, y, alpha, C):
    """Largest LIBSVM-style violation m(alpha) - M(alpha) (<= 0 means optimal)."""
    y = np.asarray(y, dtype=float)
    grad = (K * np.outer(y, y)) @ alpha - 1.0
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return float(np.max(-y[up] * grad[up]) - np.min(-y[low] * grad[low]))


def mrf_energy(unary_p, edges, colocations, T, lam, labels, clamp=None):
    """Direct evaluation of the MRF objective from its ingredients.

    ``unary_p[i]`` is P(l_i = 1); the unary of label l is -log P(l).  Each
    undirected edge (i, j) costs ``lam * colocations / T`` when the labels
    disagree.  Clamped nodes pay nothing for their clamp value.
    """
    e = 0.0
    for i, lab in enumerate(labels):
        if clamp is not None and clamp[i] >= 0:
            e += 0.0 if lab == clamp[i] else 1e9
            continue
        p = unary_p[i] if lab == 1 else 1.0 - unary_p[i]
        e += -np.log(p)
    for (i, j), c in zip(edges, colocations):
        if labels[i] != labels[j]:
            e += lam * c / T
    return e


def brute_minimum(unary, edges, weights):
    """Minimum energy over all 2^n labelings with plain Python loops."""
    n = len(unary)
    best = np.inf
    for labels in itertools.product((0, 1), repeat=n):
        e = sum(unary[i][l] for i, l in enumerate(labels))
        e += sum(w for (i, j), w in zip(edges, weights) if labels[i] != labels[j])
        best = min(best, e)
    return best


def topk_lists(A, k):
    """Neighbour lists by full sort: higher affinity first, then smaller index."""
    n = A.shape[0]
    out = []
    for i in range(n):
        cand = sorted((j for j in range(n) if j != i), key=lambda j: (-A[i, j], j))
        out.append(set(cand[:min(k, n - 1)]))
    return out


def two_clusters(rng, n=100, separation=6.0, direction=(1.0, 1.0)):
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    a = rng.normal(size=(n, 2))
    b = rng.normal(size=(n, 2)) + separation * d
    return np.vstack([a, b]), np.r_[np.zeros(n, int), np.ones(n, int)]


def cluster_gap(S, labels):
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    return float(S[same & off].mean() - S[~same].mean())
