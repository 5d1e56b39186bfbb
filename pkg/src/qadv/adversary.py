"""Evasion attacks on a trained kernel SVM and adversarial data augmentation.

The main attack walks ``x <- x - eta * y * grad f(x)`` until the predicted
label flips. With the adaptive rate ``eta = |f| / ||grad f||^2`` each step is
the projection onto the local linearisation of the decision surface. Near
the surface that rate collapses, so below ``adaptive_floor`` the attack
switches to a constant rate for the rest of the run.

``attack_alt`` minimises ``max(0, 1 - y_target f / ||w||)^eps + mu ||x - x_adv||^2``
by plain gradient descent. ``y_target`` is the label opposite to the true one,
so the hinge term vanishes once the sample sits a unit margin on the wrong
side.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write_text, fmt
from .qkernel import GradientMode, decision_gradient
from .svm import SvmModel, w_norm_sq

log = logging.getLogger(__name__)


class EtaMode(str, enum.Enum):
    ADAPTIVE = "adaptive"
    CONSTANT = "constant"


class ZeroGradient(ArithmeticError):
    """Adaptive rate undefined; the caller should fall back to a constant rate."""


@dataclass(frozen=True)
class AttackConfig:
    max_iterations: int = 50
    eta_constant: float = 0.01
    eta_mode: EtaMode = EtaMode.ADAPTIVE
    adaptive_floor: float = 1e-4
    stop_margin: float = 0.0
    gradient_mode: GradientMode = GradientMode.EXACT_SHIFT

    def __post_init__(self):
        object.__setattr__(self, "eta_mode", EtaMode(self.eta_mode))
        object.__setattr__(self, "gradient_mode", GradientMode(self.gradient_mode))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.eta_constant <= 0 or self.adaptive_floor <= 0:
            raise ValueError("eta_constant and adaptive_floor must be positive")
        if self.stop_margin < 0:
            raise ValueError("stop_margin must be >= 0")


@dataclass(frozen=True)
class AltAttackConfig:
    epsilon: float = 3.0
    mu: float = 1.0
    budget: int = 5000
    step: float = 0.01
    gradient_mode: GradientMode = GradientMode.EXACT_SHIFT

    def __post_init__(self):
        if self.epsilon <= 0 or self.mu <= 0:
            raise ValueError("epsilon and mu must be positive")
        if self.budget < 1 or self.step <= 0:
            raise ValueError("budget must be >= 1 and step positive")


@dataclass
class AdversarialResult:
    x_original: np.ndarray
    x_adv: np.ndarray
    y_true: float
    success: bool
    iterations_used: int
    f_trace: list[float] = field(default_factory=list)
    sample_id: str = ""

    @property
    def perturbation_l2(self) -> float:
        return float(np.linalg.norm(self.x_original - self.x_adv))

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.x_original


def _flipped(f: float, y: float, margin: float = 0.0) -> bool:
    predicted = 1.0 if f >= 0 else -1.0
    return predicted != y and abs(f) >= margin


def adaptive_eta(f_value: float, grad) -> float:
    g2 = float(np.dot(grad, grad))
    if g2 == 0.0:
        raise ZeroGradient("gradient vanishes")
    return abs(f_value) / g2


def attack(model: SvmModel, x, y_true: float, cfg: AttackConfig = AttackConfig(),
           sample_id: str = "", grad_fn=None) -> AdversarialResult:
    """Iterate until the predicted label flips or the budget runs out.

    ``grad_fn(x)`` overrides the kernel gradient, so any object with a
    ``decision(x)`` method can be attacked.
    """
    if grad_fn is None:
        def grad_fn(v):
            return decision_gradient(model, v, cfg.gradient_mode)
    x0 = np.asarray(x, dtype=float).copy()
    x_adv = x0.copy()
    f = model.decision(x_adv)
    trace = [f]
    adaptive = cfg.eta_mode is EtaMode.ADAPTIVE
    t = 0
    while not _flipped(f, y_true, cfg.stop_margin) and t < cfg.max_iterations:
        grad = np.asarray(grad_fn(x_adv), dtype=float)
        eta = cfg.eta_constant
        if adaptive:
            try:
                eta = adaptive_eta(f, grad)
            except ZeroGradient:
                adaptive = False
                eta = cfg.eta_constant
            else:
                if eta < cfg.adaptive_floor:
                    adaptive = False
                    eta = cfg.eta_constant
        x_adv = x_adv - eta * y_true * grad
        f = model.decision(x_adv)
        trace.append(f)
        t += 1
    return AdversarialResult(x_original=x0, x_adv=x_adv, y_true=float(y_true),
                             success=_flipped(f, y_true, cfg.stop_margin),
                             iterations_used=t, f_trace=trace, sample_id=sample_id)


def alt_objective(model: SvmModel, x_adv, x, y_true: float, cfg: AltAttackConfig,
                  w_norm: float | None = None) -> float:
    """g1^eps + mu * g2 with g1 the hinge on the geometric margin towards the opposite label."""
    if w_norm is None:
        w_norm = math.sqrt(w_norm_sq(model))
    r = model.decision(x_adv) / w_norm if w_norm > 0 else 0.0
    g1 = max(0.0, 1.0 + y_true * r)
    g2 = float(np.sum((np.asarray(x, dtype=float) - np.asarray(x_adv, dtype=float)) ** 2))
    return g1 ** cfg.epsilon + cfg.mu * g2


def attack_alt(model: SvmModel, x, y_true: float, cfg: AltAttackConfig = AltAttackConfig(),
               sample_id: str = "", grad_fn=None, w_norm: float | None = None) -> AdversarialResult:
    """Gradient descent on :func:`alt_objective`; keeps the closest flipped iterate.

    ``grad_fn`` and ``w_norm`` play the same role as in :func:`attack` for
    models that are not kernel SVMs.
    """
    if grad_fn is None:
        def grad_fn(v):
            return decision_gradient(model, v, cfg.gradient_mode)
    x0 = np.asarray(x, dtype=float).copy()
    if w_norm is None:
        w_norm = math.sqrt(w_norm_sq(model))
    x_cur = x0.copy()
    f = model.decision(x_cur)
    trace = [f]
    if _flipped(f, y_true):
        return AdversarialResult(x0, x0.copy(), float(y_true), True, 0, trace, sample_id)
    best, best_dist, best_iter = None, np.inf, 0
    t = 0
    for t in range(1, cfg.budget):
        g1 = max(0.0, 1.0 + y_true * f / w_norm) if w_norm > 0 else 1.0
        grad = 2.0 * cfg.mu * (x_cur - x0)
        if g1 > 0:
            grad_f = np.asarray(grad_fn(x_cur), dtype=float)
            grad = grad + cfg.epsilon * g1 ** (cfg.epsilon - 1) * (y_true / w_norm) * grad_f
        step = cfg.step * grad
        if np.linalg.norm(step) < 1e-12:
            break
        x_cur = x_cur - step
        f = model.decision(x_cur)
        trace.append(f)
        if _flipped(f, y_true):
            dist = float(np.linalg.norm(x_cur - x0))
            if dist < best_dist:
                best, best_dist, best_iter = x_cur.copy(), dist, t
    success = best is not None
    return AdversarialResult(x_original=x0, x_adv=best if success else x_cur, y_true=float(y_true),
                             success=success, iterations_used=best_iter if success else t,
                             f_trace=trace, sample_id=sample_id)


def augment(train_X, train_y, adv_results, test_X, test_y, split: tuple[int, int], seed: int = 0):
    """Distribute successful adversarial samples between train and test, stratified by class.

    Adversarial samples keep their true labels. Returns
    ``(train_X', train_y', test_X', test_y', train_idx, test_idx)`` where the
    index arrays refer to positions in ``adv_results``.
    """
    if any(not r.success for r in adv_results):
        raise ValueError("augment expects successful adversarial results only")
    n_train, n_test = split
    total = len(adv_results)
    if n_train < 0 or n_test < 0 or n_train + n_test != total:
        raise ValueError(f"split {n_train}:{n_test} does not sum to {total} adversarial samples")
    labels = np.array([r.y_true for r in adv_results])
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    # Largest-remainder allocation of the train quota across classes.
    classes = [c for c in (1.0, -1.0) if np.any(labels == c)]
    counts = {c: int(np.sum(labels == c)) for c in classes}
    exact = {c: n_train * counts[c] / total for c in classes} if total else {}
    quota = {c: int(math.floor(exact[c])) for c in classes}
    rest = n_train - sum(quota.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - quota[c]), -c))[:rest]:
        quota[c] += 1
    for c in classes:
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        train_idx += idx[:quota[c]].tolist()
        test_idx += idx[quota[c]:].tolist()
    train_idx, test_idx = sorted(train_idx), sorted(test_idx)

    def stack(X, y, idx):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if not idx:
            return X.copy(), y.copy()
        extra = np.stack([adv_results[i].x_adv for i in idx])
        return np.vstack([X, extra]), np.concatenate([y, labels[idx]])

    tx, ty = stack(train_X, train_y, train_idx)
    sx, sy = stack(test_X, test_y, test_idx)
    return tx, ty, sx, sy, np.array(train_idx, dtype=np.intp), np.array(test_idx, dtype=np.intp)


ADV_CSV_HEADER = ("id", "y_true", "success", "iterations", "l2")


def results_to_csv(results: list[AdversarialResult]) -> str:
    """One row per sample: id, y_true, success, iterations, l2, then the adversarial vector."""
    if not results:
        return ",".join(ADV_CSV_HEADER) + "\n"
    d = results[0].x_adv.size
    header = list(ADV_CSV_HEADER) + [f"v{i}" for i in range(d)]
    lines = [",".join(header) + "\n"]
    for r in results:
        row = [r.sample_id, str(int(r.y_true)), str(int(r.success)), str(r.iterations_used),
               fmt(r.perturbation_l2)] + [fmt(v) for v in r.x_adv]
        lines.append(",".join(row) + "\n")
    return "".join(lines)


def save_results_csv(path, results: list[AdversarialResult]):
    return atomic_write_text(path, results_to_csv(results))


def read_results_csv(path) -> list[dict]:
    """Rows of an adversarial CSV as dicts with ``x_adv`` decoded to an array."""
    import csv
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            vec = np.array([float(rec[k]) for k in rec if k.startswith("v")])
            rows.append({
                "id": rec["id"],
                "y_true": float(rec["y_true"]),
                "success": rec["success"] == "1",
                "iterations": int(rec["iterations"]),
                "l2": float(rec["l2"]),
                "x_adv": vec,
            })
    return rows
