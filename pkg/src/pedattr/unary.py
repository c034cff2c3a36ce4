"""Per-attribute intersection-kernel SVMs with sigmoid calibration.

The dual is solved by SMO with maximal-violating-pair working set
selection on a precomputed Gram matrix.  Decision scores are mapped to
P(positive | u) by a two-parameter sigmoid fitted on held-out scores.
"""
from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .ingest import Sample

MODEL_VERSION = 1


class ConvergenceError(RuntimeError):
    def __init__(self, msg, iterations=None, gap=None):
        super().__init__(msg)
        self.iterations = iterations
        self.gap = gap


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    kkt_tol: float = 1e-5
    max_passes: int = 500
    calib_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not 0 < self.calib_eps < 0.5:
            raise ValueError("calib_eps must lie in (0, 0.5)")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


# -- kernel ------------------------------------------------------------------

def intersection_kernel(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.minimum(u, v).sum())


def intersection_kernel_matrix(A, B=None, dtype=np.float64, chunk_bytes=64 << 20) -> np.ndarray:
    """``K[i, j] = sum_k min(A[i, k], B[j, k])``, computed in row blocks."""
    A = np.asarray(A)
    B = A if B is None else np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    # columns that are zero on either side never contribute to min()
    keep = (A != 0).any(axis=0) & (B != 0).any(axis=0)
    A = np.ascontiguousarray(A[:, keep], dtype=dtype)
    B = np.ascontiguousarray(B[:, keep], dtype=dtype)
    K = np.zeros((A.shape[0], B.shape[0]), dtype=np.float64)
    if A.shape[1] == 0:
        return K
    step = max(1, chunk_bytes // max(1, B.size * A.itemsize))
    for i in range(0, A.shape[0], step):
        K[i:i + step] = np.minimum(A[i:i + step, None, :], B[None, :, :]).sum(axis=-1)
    return K


# -- SMO -----------------------------------------------------------------------

@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    gap: float
    iterations: int


def solve_dual(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-5,
               max_iter: int | None = None) -> DualSolution:
    """Minimise 0.5 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0, with Q = yy' * K."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    Q = K * np.outer(y, y)
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max_iter if max_iter is not None else 500 * max(n, 10)
    pos = y > 0
    it = 0
    gap = np.inf
    while True:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        s_up = np.where(up, score, -np.inf)
        s_low = np.where(low, score, np.inf)
        i = int(np.argmax(s_up))
        j = int(np.argmin(s_low))
        gap = s_up[i] - s_low[j]
        if gap < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not converge in {max_iter} iterations (KKT gap {gap:.3g})",
                iterations=it, gap=gap)
        it += 1
        Qi, Qj = Q[i], Q[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2 * Qi[j], 1e-12)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2 * Qi[j], 1e-12)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        G += Qi * (ni - ai) + Qj * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub = np.inf
        lb = -np.inf
        for t in range(n):
            at_upper = alpha[t] >= C
            at_lower = alpha[t] <= 0
            if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
                ub = min(ub, yG[t])
            else:
                lb = max(lb, yG[t])
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else 0.0
    return DualSolution(alpha, rho, float(max(gap, 0.0)), it)


# -- calibration ---------------------------------------------------------------

def fit_sigmoid(scores, labels, max_iter: int = 100) -> tuple[float, float]:
    """Platt sigmoid ``P(pos|f) = 1 / (1 + exp(A f + B))`` by damped Newton.

    Uses the smoothed targets ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)``.
    """
    f = np.asarray(scores, dtype=float)
    pos = np.asarray(labels) > 0
    n1 = int(pos.sum())
    n0 = pos.size - n1
    t = np.where(pos, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))

    def objective(A, B):
        z = A * f + B
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                     (t - 1) * z + np.log1p(np.exp(-np.abs(z))))))

    A, B = 0.0, float(np.log((n0 + 1.0) / (n1 + 1.0)))
    fval = objective(A, B)
    sigma = 1e-12
    for _ in range(max_iter):
        z = A * f + B
        ez = np.exp(-np.abs(z))
        p = np.where(z >= 0, ez / (1 + ez), 1 / (1 + ez))  # P(pos) = 1/(1+e^z)
        q = 1 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nval = objective(nA, nB)
            if nval < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nval
                break
            step /= 2
        else:
            break
    return float(A), float(B)


# -- model ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UnaryModel:
    attribute: str
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    calib_A: float
    calib_B: float
    C: float
    calib_eps: float = 1e-6
    support_index: np.ndarray | None = field(default=None, repr=False)
    kkt_gap: float = 0.0
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_from_kernel(self, K_sv: np.ndarray) -> np.ndarray:
        """Scores from a kernel block whose columns are the support vectors."""
        return K_sv @ self.dual_coefs + self.bias

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: model {self.dim}, input {X.shape[1]}")
        return self.decision_from_kernel(intersection_kernel_matrix(X, self.support_vectors))

    def proba_from_scores(self, scores) -> np.ndarray:
        z = self.calib_A * np.asarray(scores, dtype=float) + self.calib_B
        p = 0.5 * (1.0 - np.tanh(0.5 * z))  # 1 / (1 + e^z) without overflow
        return np.clip(p, self.calib_eps, 1.0 - self.calib_eps)


def predict_proba(model: UnaryModel, u) -> np.ndarray | float:
    """P(positive | u); a float for a single vector, an array for a matrix."""
    u = np.asarray(u, dtype=float)
    p = model.proba_from_scores(model.decision(u))
    return float(p[0]) if u.ndim == 1 else p


def _as_pm1(labels) -> np.ndarray:
    y = np.asarray(labels)
    return np.where(y > 0, 1.0, -1.0)


def train_iksvm(features, labels, cfg: TrainConfig = TrainConfig(), attribute: str = "",
                calibration=None, gram=None, calibration_kernel=None) -> UnaryModel:
    """Train one calibrated ikSVM.

    ``calibration`` is ``(X_verify, y_verify)``; alternatively pass
    ``calibration_kernel=(K_verify_train, y_verify)`` with a precomputed kernel
    block.  Without either, the sigmoid is fitted on the training scores.
    """
    X = np.asarray(features, dtype=float)
    y = _as_pm1(labels)
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    if (y > 0).all() or (y < 0).all():
        raise ValueError(f"attribute {attribute!r}: training data has a single class")
    K = intersection_kernel_matrix(X) if gram is None else np.asarray(gram, dtype=float)
    sol = solve_dual(K, y, cfg.C, cfg.kkt_tol, cfg.max_passes * max(len(y), 10))
    sv = np.flatnonzero(sol.alpha > 0)
    coefs = sol.alpha[sv] * y[sv]
    bias = -sol.rho

    if calibration_kernel is not None:
        Kv, yv = calibration_kernel
        scores = np.asarray(Kv)[:, sv] @ coefs + bias
        cal_y = _as_pm1(yv)
    elif calibration is not None:
        Xv, yv = calibration
        scores = intersection_kernel_matrix(np.asarray(Xv, float), X[sv]) @ coefs + bias
        cal_y = _as_pm1(yv)
    else:
        scores = K[:, sv] @ coefs + bias
        cal_y = y
    A, B = fit_sigmoid(scores, cal_y)
    return UnaryModel(attribute, X[sv].copy(), coefs, bias, A, B, cfg.C, cfg.calib_eps,
                      sv, sol.gap, sol.iterations)


def save_model(path, model: UnaryModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, version=MODEL_VERSION, attribute=model.attribute,
                 support_vectors=model.support_vectors, dual_coefs=model.dual_coefs,
                 bias=model.bias, calib_A=model.calib_A, calib_B=model.calib_B,
                 C=model.C, calib_eps=model.calib_eps)


def load_model(path) -> UnaryModel:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {int(z['version'])}")
        return UnaryModel(str(z["attribute"]), z["support_vectors"], z["dual_coefs"],
                          float(z["bias"]), float(z["calib_A"]), float(z["calib_B"]),
                          float(z["C"]), float(z["calib_eps"]))


# -- positive augmentation -----------------------------------------------------

@dataclass(frozen=True)
class Jitter:
    scale: tuple[float, float] = (0.9, 1.1)
    rotation: tuple[float, float] = (-10.0, 10.0)  # degrees


def jitter_image(image: np.ndarray, mask: np.ndarray | None, scale: float, angle: float):
    """Rotate by ``angle`` degrees and zoom by ``scale`` about the image centre."""
    if scale == 1.0 and angle == 0.0:
        return image.copy(), None if mask is None else mask.copy()
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    # maps output (row, col) to input (row, col)
    matrix = np.array([[c, s], [-s, c]]) / scale
    centre = (np.asarray(image.shape[:2], dtype=float) - 1) / 2
    offset = centre - matrix @ centre
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        warped = ndimage.affine_transform(image[..., ch].astype(float), matrix, offset,
                                          order=1, mode="nearest")
        out[..., ch] = np.clip(np.round(warped), 0, 255).astype(np.uint8)
    new_mask = None
    if mask is not None:
        new_mask = ndimage.affine_transform(mask.astype(np.uint8), matrix, offset,
                                            order=0, mode="nearest").astype(bool)
    return out, new_mask


def augment_positives(positives: Sequence[Sample], target_count: int,
                      jitter: Jitter = Jitter(), seed: int = 0) -> list[Sample]:
    positives = list(positives)
    if not positives:
        raise ValueError("no positive samples to augment")
    if target_count < len(positives):
        raise ValueError(f"target_count {target_count} is below the {len(positives)} positives")
    rng = np.random.default_rng(seed)
    out = list(positives)
    for j in range(target_count - len(positives)):
        src = positives[j % len(positives)]
        scale = float(rng.uniform(*jitter.scale))
        angle = float(rng.uniform(*jitter.rotation))
        image, mask = jitter_image(src.image, src.mask, scale, angle)
        out.append(dataclasses.replace(src, id=f"{src.id}#aug{j}", image=image, mask=mask))
    return out
