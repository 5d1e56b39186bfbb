"""Kernel SVM on a precomputed Gram matrix.

The dual is solved by SMO with second-order working-set selection. Two bias
conventions are available:

* ``"mean"`` (default): b = mean_i (y_i - sum_j a_j y_j K_ij), averaged over
  all training samples as in the decision function written out in full.
* ``"support"``: the equality-constraint multiplier of the dual, i.e. the
  usual free-support-vector average. The KKT audit always uses this one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .featuremap import FeatureMapSpec, check_params
from .qkernel import PSD_TOL, KernelMatrix, cross_kernel, embed, gram_matrix

log = logging.getLogger(__name__)

SMO_TOL = 1e-6
MAX_ITER = 100_000
TAU = 1e-12
SV_THRESHOLD = 1e-9
KKT_TOL = 1e-3
DEFAULT_C_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
MODEL_FORMAT = "qadv.svm"
MODEL_VERSION = 1


class SolverError(RuntimeError):
    """Raised when the dual cannot be solved; carries the partial result."""

    def __init__(self, message, alphas=None, report=None):
        super().__init__(message)
        self.alphas = alphas
        self.report = report


@dataclass
class FitReport:
    dual_objective: float
    n_support_vectors: int
    iterations: int
    converged: bool
    kkt_gap: float = 0.0
    solver_bias: float = 0.0


def _as_matrix(K) -> np.ndarray:
    return np.asarray(K.values if isinstance(K, KernelMatrix) else K, dtype=float)


def check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be a vector of +1/-1")
    return y


def dual_objective(alphas, K, y) -> float:
    K = _as_matrix(K)
    v = alphas * y
    return float(np.sum(alphas) - 0.5 * v @ K @ v)


def solve_dual(K, y, C: float, tol: float = SMO_TOL, max_iter: int = MAX_ITER,
               check_psd: bool = True) -> tuple[np.ndarray, FitReport]:
    """Maximise sum(a) - 1/2 sum a_i a_j y_i y_j K_ij s.t. y.a = 0, 0 <= a <= C."""
    K = _as_matrix(K)
    y = check_labels(y)
    m = y.shape[0]
    if K.shape != (m, m):
        raise ValueError(f"kernel shape {K.shape} does not match {m} labels")
    if C <= 0:
        raise ValueError("C must be positive")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both classes must be present")
    if check_psd:
        lam = np.linalg.eigvalsh((K + K.T) / 2).min()
        if lam < -PSD_TOL * max(1.0, np.abs(K).max()):
            raise ValueError(f"kernel matrix is not PSD (min eigenvalue {lam:.3g})")

    # The dual is unchanged by y -> -y, but the working-set heuristic is not.
    # Solving in a fixed orientation makes relabelled fits mirror exactly.
    sign = 1.0 if y[0] > 0 else -1.0
    y = sign * y
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(K).copy()
    alpha = np.zeros(m)
    G = -np.ones(m)  # gradient of 1/2 a'Qa - e'a
    it = 0
    gap = np.inf
    while it < max_iter:
        score = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        gmax = score[i]
        gmin = score[low].min()
        gap = gmax - gmin
        if gap < tol:
            break
        cand = np.flatnonzero(low & (score < gmax))
        b = gmax - score[cand]
        a = diag[i] + diag[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, TAU)
        j = int(cand[np.argmin(-(b * b) / a)])

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diag[i] + diag[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai_old) + Q[:, j] * (alpha[j] - aj_old)
        it += 1

    alpha = np.clip(alpha, 0.0, C)
    report = FitReport(
        dual_objective=dual_objective(alpha, K, y),
        n_support_vectors=int(np.sum(alpha > SV_THRESHOLD)),
        iterations=it,
        converged=bool(gap < tol),
        kkt_gap=float(gap),
        solver_bias=sign * _solver_bias(alpha, G, y, C),
    )
    if not report.converged:
        raise SolverError(f"SMO did not converge in {max_iter} iterations (gap {gap:.3g})",
                          alpha, report)
    return alpha, report


def _solver_bias(alpha, G, y, C) -> float:
    score = -y * G
    free = (alpha > SV_THRESHOLD) & (alpha < C - SV_THRESHOLD)
    if free.any():
        return float(score[free].mean())
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    hi = score[low].min() if low.any() else score[up].max()
    lo = score[up].max() if up.any() else hi
    return float((hi + lo) / 2)


def compute_bias(alphas, K, y) -> float:
    """All-sample average b = (1/M) sum_i (y_i - sum_j a_j y_j K_ij)."""
    K = _as_matrix(K)
    y = np.asarray(y, dtype=float)
    return float(np.mean(y - K @ (alphas * y)))


def hinge_loss(f_value: float, y: float) -> float:
    return max(0.0, 1.0 - y * f_value)


def kkt_violations(alphas, K, y, C, bias, tol: float = KKT_TOL) -> np.ndarray:
    """Indices of samples breaking the KKT conditions for decision bias ``bias``."""
    K = _as_matrix(K)
    margin = y * (K @ (alphas * y) + bias)
    at_zero = alphas <= SV_THRESHOLD
    at_c = alphas >= C - SV_THRESHOLD
    free = ~at_zero & ~at_c
    bad = (at_zero & (margin < 1 - tol)) | (at_c & (margin > 1 + tol)) \
        | (free & (np.abs(margin - 1) > tol))
    return np.flatnonzero(bad)


@dataclass
class SvmModel:
    alphas: np.ndarray
    bias: float
    C: float
    labels: np.ndarray
    X_train: np.ndarray
    spec: FeatureMapSpec
    params: np.ndarray
    bias_mode: str = "mean"
    report: FitReport | None = None
    preprocess: dict | None = None
    class_names: dict = field(default_factory=lambda: {"1": "+1", "-1": "-1"})

    @cached_property
    def train_states(self) -> np.ndarray:
        return embed(self.spec, self.params, self.X_train)

    def decision_values(self, X, shots=None) -> np.ndarray:
        """f(x) for every row of ``X`` (optionally from shot-sampled kernels)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if shots is None:
            psi = embed(self.spec, self.params, X)
            k = np.abs(self.train_states.conj() @ psi.T) ** 2
        else:
            k = cross_kernel(self.spec, self.params, self.X_train, X, shots=shots)
        return (self.alphas * self.labels) @ k + self.bias

    def decision(self, x) -> float:
        return float(self.decision_values(np.asarray(x)[None, :])[0])

    def predict(self, X, shots=None) -> np.ndarray:
        return predict_from_values(self.decision_values(X, shots=shots))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "alphas": [float(a) for a in self.alphas],
            "bias": float(self.bias),
            "C": float(self.C),
            "labels": [int(v) for v in self.labels],
            "X_train": [[float(v) for v in row] for row in self.X_train],
            "feature_map": self.spec.to_dict(),
            "params": [float(t) for t in self.params],
            "bias_mode": self.bias_mode,
            "report": None if self.report is None else vars(self.report),
            "preprocess": self.preprocess,
            "class_names": self.class_names,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvmModel":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
        spec = FeatureMapSpec.from_dict(doc["feature_map"])
        return cls(
            alphas=np.array(doc["alphas"], dtype=float),
            bias=float(doc["bias"]),
            C=float(doc["C"]),
            labels=np.array(doc["labels"], dtype=float),
            X_train=np.array(doc["X_train"], dtype=float).reshape(len(doc["labels"]), -1),
            spec=spec,
            params=check_params(spec, doc["params"]),
            bias_mode=doc.get("bias_mode", "mean"),
            report=FitReport(**doc["report"]) if doc.get("report") else None,
            preprocess=doc.get("preprocess"),
            class_names=doc.get("class_names") or {"1": "+1", "-1": "-1"},
        )


def predict_from_values(f) -> np.ndarray:
    """Sign with f >= 0 mapped to +1."""
    return np.where(np.asarray(f) >= 0, 1.0, -1.0)


def decision_function(model: SvmModel, k_row) -> float:
    k_row = np.asarray(k_row, dtype=float)
    if k_row.shape != model.alphas.shape:
        raise ValueError(f"k_row has length {k_row.size}, expected {model.alphas.size}")
    return float((model.alphas * model.labels) @ k_row + model.bias)


def w_norm_sq(model: SvmModel, K=None) -> float:
    """Squared feature-space norm of w = sum_i y_i a_i phi(x_i)."""
    if K is None:
        s = model.train_states
        K = np.abs(s.conj() @ s.T) ** 2
    v = model.alphas * model.labels
    return max(0.0, float(v @ _as_matrix(K) @ v))


def fit_kernel(K, y, C: float, bias_mode: str = "mean", **solver_kw) -> tuple[np.ndarray, float, FitReport]:
    alphas, report = solve_dual(K, y, C, **solver_kw)
    if bias_mode == "mean":
        bias = compute_bias(alphas, K, y)
    elif bias_mode == "support":
        bias = report.solver_bias
    else:
        raise ValueError(f"unknown bias mode {bias_mode!r}")
    return alphas, bias, report


def fit(spec: FeatureMapSpec, theta, X, y, C: float, bias_mode: str = "mean",
        K: KernelMatrix | np.ndarray | None = None, **solver_kw) -> SvmModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = check_labels(y)
    theta = check_params(spec, theta)
    if K is None:
        K = gram_matrix(spec, theta, X)
    alphas, bias, report = fit_kernel(K, y, C, bias_mode, **solver_kw)
    return SvmModel(alphas=alphas, bias=bias, C=float(C), labels=y, X_train=X, spec=spec,
                    params=theta, bias_mode=bias_mode, report=report)


def stratified_folds(y, n_folds: int, seed: int = 0) -> list[np.ndarray]:
    y = check_labels(y)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    for label in (1.0, -1.0):
        idx = np.flatnonzero(y == label)
        if idx.size < n_folds:
            raise ValueError(f"class {int(label):+d} has {idx.size} samples, fewer than {n_folds} folds")
        rng.shuffle(idx)
        for k, i in enumerate(idx):
            folds[k % n_folds].append(int(i))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def kfold_select_C(spec: FeatureMapSpec, theta, X, y, K_folds: int = 5,
                   C_grid=DEFAULT_C_GRID, seed: int = 0, bias_mode: str = "mean",
                   K: KernelMatrix | np.ndarray | None = None) -> tuple[float, dict]:
    """Pick C from ``C_grid`` by stratified K-fold accuracy; ties go to the smaller C."""
    y = check_labels(y)
    if K is None:
        K = gram_matrix(spec, theta, X)
    K = _as_matrix(K)
    folds = stratified_folds(y, K_folds, seed)
    scores = {}
    for C in sorted(float(c) for c in C_grid):
        accs = []
        for val in folds:
            tr = np.setdiff1d(np.arange(y.size), val)
            alphas, bias, _ = fit_kernel(K[np.ix_(tr, tr)], y[tr], C, bias_mode)
            f = K[np.ix_(val, tr)] @ (alphas * y[tr]) + bias
            accs.append(float(np.mean(predict_from_values(f) == y[val])))
        scores[C] = float(np.mean(accs))
    best = max(scores.values())
    best_C = min(c for c, s in scores.items() if s == best)
    return best_C, scores


def classification_metrics(y_true, y_pred, positive: float = 1.0) -> dict:
    """Accuracy, F1 for ``positive`` and a confusion matrix (rows true, columns predicted, order +1, -1)."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    order = (positive, -positive)
    confusion = [[int(np.sum((y_true == t) & (y_pred == p))) for p in order] for t in order]
    tp = confusion[0][0]
    fp = confusion[1][0]
    fn = confusion[0][1]
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    return {
        "n": int(y_true.size),
        "accuracy": float(np.mean(y_true == y_pred)) if y_true.size else 0.0,
        "f1": float(f1),
        "confusion": confusion,
        "confusion_order": [int(v) for v in order],
    }
