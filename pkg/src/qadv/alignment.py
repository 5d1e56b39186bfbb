"""Kernel alignment of the tunable feature-map angles.

Two objectives are supported. The default is the SVC loss: the maximised SVM
dual objective at fixed angles, which the outer loop minimises. The other
is the negative kernel-target alignment. Both are optimised by SPSA with
constant gains.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .featuremap import FeatureMapSpec, check_params
from .fileio import atomic_write_text, fmt
from .qkernel import GramCache, KernelMatrix, gram_matrix
from .svm import SolverError, check_labels, solve_dual

log = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    SVC_LOSS = "svc_loss"
    TARGET_ALIGNMENT = "target_alignment"


@dataclass(frozen=True)
class AlignmentConfig:
    iterations: int = 80
    learning_rate: float = 0.05
    perturbation: float = 0.05
    seed: int = 0
    loss_kind: LossKind = LossKind.SVC_LOSS
    C: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0 or self.perturbation <= 0:
            raise ValueError("learning_rate and perturbation must be positive")
        if self.C <= 0:
            raise ValueError("C must be positive")


@dataclass
class AlignmentTrace:
    """Per iteration: the lower of the two probe losses and the angles that produced it."""

    losses: list[float] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    final_theta: np.ndarray | None = None
    aborted: bool = False

    def __len__(self):
        return len(self.losses)

    def best(self) -> tuple[float, np.ndarray]:
        i = int(np.argmin(self.losses))
        return self.losses[i], self.thetas[i]

    def to_csv(self) -> str:
        lines = ["iteration,loss\n"]
        lines += [f"{t},{fmt(v)}\n" for t, v in enumerate(self.losses)]
        return "".join(lines)

    def timing_csv(self) -> str:
        lines = ["iteration,elapsed_seconds\n"]
        lines += [f"{t},{s:.6f}\n" for t, s in enumerate(self.seconds)]
        return "".join(lines)

    def save_csv(self, path):
        return atomic_write_text(path, self.to_csv())


def target_alignment(K, y) -> float:
    """y'Ky / (M ||K||_F), clamped below at 0."""
    values = np.asarray(K.values if isinstance(K, KernelMatrix) else K, dtype=float)
    y = np.asarray(y, dtype=float)
    m = y.size
    if m == 0:
        raise ValueError("alignment of an empty sample set")
    norm = np.linalg.norm(values)
    if norm == 0:
        return 0.0
    return max(0.0, float(y @ values @ y / (m * norm)))


def svc_loss(spec: FeatureMapSpec, theta, X, y, C: float = 1.0,
             cache: GramCache | None = None) -> float:
    theta = check_params(spec, theta)
    K = gram_matrix(spec, theta, X, cache=cache)
    try:
        _, report = solve_dual(K, y, C)
    except (SolverError, ValueError) as exc:
        raise SolverError(f"{exc} (theta={theta.tolist()})") from exc
    return report.dual_objective


def spsa_minimize(loss, theta0, cfg: AlignmentConfig) -> AlignmentTrace:
    """Constant-gain SPSA: theta <- theta - a * (L(theta+c d) - L(theta-c d)) / (2c) / d."""
    rng = np.random.default_rng(cfg.seed)
    theta = np.array(theta0, dtype=float)
    a, c = cfg.learning_rate, cfg.perturbation
    trace = AlignmentTrace()
    for t in range(cfg.iterations):
        start = time.perf_counter()
        delta = rng.choice((-1.0, 1.0), size=theta.shape)
        plus, minus = theta + c * delta, theta - c * delta
        l_plus, l_minus = float(loss(plus)), float(loss(minus))
        if not (math.isfinite(l_plus) and math.isfinite(l_minus)):
            log.warning("non-finite loss at iteration %d; stopping", t)
            trace.aborted = True
            break
        grad = (l_plus - l_minus) / (2 * c) / delta
        if l_plus <= l_minus:
            trace.losses.append(l_plus)
            trace.thetas.append(plus)
        else:
            trace.losses.append(l_minus)
            trace.thetas.append(minus)
        theta = theta - a * grad
        trace.seconds.append(time.perf_counter() - start)
        log.debug("spsa %d: loss %.6g", t, trace.losses[-1])
    trace.final_theta = theta
    return trace


def align(spec: FeatureMapSpec, X, y, cfg: AlignmentConfig, theta0=None,
          cache: GramCache | None = None) -> tuple[np.ndarray, AlignmentTrace]:
    """Optimise the feature-map angles; returns the best-seen angles and the trace.

    ``theta0`` defaults to uniform random angles in [0, 2 pi) drawn from ``cfg.seed``.
    """
    y = check_labels(y)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if theta0 is None:
        theta0 = np.random.default_rng([cfg.seed, 1]).uniform(0, 2 * np.pi, spec.param_dim)
    theta0 = check_params(spec, theta0)

    if cfg.loss_kind is LossKind.SVC_LOSS:
        def loss(theta):
            return svc_loss(spec, theta, X, y, cfg.C, cache=cache)
    else:
        def loss(theta):
            return -target_alignment(gram_matrix(spec, theta, X, cache=cache), y)

    trace = spsa_minimize(loss, theta0, cfg)
    if not trace.losses:
        return theta0, trace
    _, best = trace.best()
    return best, trace
