"""Fidelity kernels k(x1, x2) = |<phi(x2)|phi(x1)>|^2 on a feature map.

Gram matrices are built from a matrix of embedded states so each sample is
simulated once. Gradients of an SVM decision function with respect to its
input use the parameter-shift rule, which is exact here because every data
component drives a single Pauli rotation.
"""
from __future__ import annotations

import enum
import hashlib
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import _backend
from .featuremap import FeatureMapSpec, angle_matrix, bind, check_params, check_vector
from .fileio import atomic_write_bytes, atomic_write_text, fmt, pgm_bytes, sha256_array
from .qstate import ANGLE_FACTOR, run_circuit

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
SYM_TOL = 1e-10
FD_STEP = 1e-5
CACHE_ENV = "QADV_CACHE_DIR"


class GradientMode(str, enum.Enum):
    EXACT_SHIFT = "exact_shift"
    PAPER_SHIFT = "paper_shift"
    FINITE_DIFF = "finite_diff"


class KernelPropertyError(ValueError):
    pass


@dataclass(frozen=True)
class ShotConfig:
    shots: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class KernelMatrix:
    values: np.ndarray
    sample_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.sample_ids:
            self.sample_ids = list(range(self.values.shape[0]))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def property_report(self) -> dict:
        v = self.values
        return {
            "asymmetry": float(np.max(np.abs(v - v.T))) if v.size else 0.0,
            "diag_error": float(np.max(np.abs(np.diag(v) - 1.0))) if v.size else 0.0,
            "min_entry": float(v.min()),
            "max_entry": float(v.max()),
            "min_eigenvalue": float(np.linalg.eigvalsh((v + v.T) / 2).min()),
        }

    def check(self) -> dict:
        """Raise :class:`KernelPropertyError` unless the matrix is a valid fidelity Gram."""
        r = self.property_report()
        problems = []
        if r["asymmetry"] > SYM_TOL:
            problems.append(f"asymmetric by {r['asymmetry']:.3g}")
        if r["diag_error"] > SYM_TOL:
            problems.append(f"diagonal off by {r['diag_error']:.3g}")
        if r["min_entry"] < 0.0 or r["max_entry"] > 1.0:
            problems.append("entries outside [0, 1]")
        if r["min_eigenvalue"] < -PSD_TOL:
            problems.append(f"min eigenvalue {r['min_eigenvalue']:.3g}")
        if problems:
            raise KernelPropertyError("; ".join(problems))
        return r

    def to_csv(self) -> str:
        return "".join(",".join(fmt(v) for v in row) + "\n" for row in self.values)

    def save_csv(self, path) -> Path:
        return atomic_write_text(path, self.to_csv())

    def save_pgm(self, path) -> Path:
        return atomic_write_bytes(path, pgm_bytes(self.values, 0.0, 1.0))


def embed(spec: FeatureMapSpec, theta, X, backend: str | None = None) -> np.ndarray:
    """Statevectors of every row of ``X``: complex array (M, 2**n_qubits)."""
    angles = angle_matrix(spec, X, theta)
    tpl = spec.template
    return _backend.simulate_batch(spec.n_qubits, tpl.kinds, tpl.targets, tpl.controls, angles,
                                   backend=backend)


def _fidelities(states: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return np.clip(np.abs(states @ psi.conj()) ** 2, 0.0, 1.0)


def kernel_value(spec: FeatureMapSpec, theta, x1, x2) -> float:
    x1, x2 = check_vector(spec, x1), check_vector(spec, x2)
    s = embed(spec, theta, np.stack([x1, x2]))
    return float(min(1.0, max(0.0, abs(np.vdot(s[1], s[0])) ** 2)))


def qke_sample(spec: FeatureMapSpec, theta, x1, x2, cfg: ShotConfig) -> float:
    """Shot estimate of the kernel: run U(x1) then U(x2)^dagger, count all-zeros outcomes."""
    theta = check_params(spec, theta)
    circuit = bind(spec, x1, theta) + bind(spec, x2, theta).inverse()
    probs = run_circuit(circuit).probabilities()
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    rng = np.random.default_rng(cfg.seed)
    counts = rng.multinomial(cfg.shots, probs)
    return counts[0] / cfg.shots


def _sampled(k: np.ndarray, cfg: ShotConfig) -> np.ndarray:
    # Marginal of the all-zeros count is Binomial(shots, k); one stream per entry.
    out = np.empty_like(k)
    for idx in np.ndindex(*k.shape):
        rng = np.random.default_rng([cfg.seed, *idx])
        out[idx] = rng.binomial(cfg.shots, k[idx]) / cfg.shots
    return out


def _dataset_digest(X: np.ndarray) -> str:
    return sha256_array(np.asarray(X, dtype=float))


class GramCache:
    """On-disk Gram cache keyed by (spec, params, dataset); single writer, many readers."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @classmethod
    def from_env(cls) -> "GramCache | None":
        d = os.environ.get(CACHE_ENV)
        return cls(d) if d else None

    def key(self, spec: FeatureMapSpec, theta, X) -> str:
        h = hashlib.sha256()
        h.update(spec.digest().encode())
        h.update(sha256_array(np.asarray(theta, dtype=float)).encode())
        h.update(_dataset_digest(X).encode())
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"gram-{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return np.load(path, allow_pickle=False)
        except (OSError, ValueError):
            log.warning("ignoring unreadable cache entry %s", path)
            return None

    def put(self, key: str, values: np.ndarray) -> None:
        path = self._path(key)
        with FileLock(str(path) + ".lock"):
            if path.exists():
                return
            buf = io.BytesIO()
            np.save(buf, values, allow_pickle=False)
            atomic_write_bytes(path, buf.getvalue())


def _gram_rows(states: np.ndarray, rows, out: np.ndarray) -> None:
    for i in rows:
        out[i, i:] = _fidelities(states[i:], states[i])


def gram_from_states(states: np.ndarray, workers: int = 1) -> np.ndarray:
    m = states.shape[0]
    upper = np.zeros((m, m))
    if workers > 1 and m > 1:
        chunks = np.array_split(np.arange(m), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda r: _gram_rows(states, r, upper), chunks))
    else:
        _gram_rows(states, range(m), upper)
    return np.triu(upper) + np.triu(upper, 1).T


def gram_matrix(spec: FeatureMapSpec, theta, X, ids=None, workers: int = 1,
                cache: GramCache | None = None) -> KernelMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("gram_matrix needs at least one sample")
    theta = check_params(spec, theta)
    key = None
    if cache is not None:
        key = cache.key(spec, theta, X)
        hit = cache.get(key)
        if hit is not None:
            return KernelMatrix(hit, list(ids) if ids is not None else [])
    values = gram_from_states(embed(spec, theta, X), workers=workers)
    if cache is not None:
        cache.put(key, values)
    return KernelMatrix(values, list(ids) if ids is not None else [])


def cross_kernel(spec: FeatureMapSpec, theta, X_train, X_test,
                 shots: ShotConfig | None = None) -> np.ndarray:
    """Kernel values k(train_i, test_j) as an (M_train, M_test) array."""
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    if X_train.shape[0] == 0 or X_test.shape[0] == 0:
        raise ValueError("cross_kernel needs non-empty sample sets")
    s_train = embed(spec, theta, X_train)
    s_test = embed(spec, theta, X_test)
    k = np.clip(np.abs(s_train.conj() @ s_test.T) ** 2, 0.0, 1.0)
    if shots is not None:
        k = _sampled(k, shots)
    return k


def decision_gradient(model, x, mode: GradientMode | str = GradientMode.EXACT_SHIFT) -> np.ndarray:
    """Gradient of the model's decision function with respect to the input ``x``.

    ``EXACT_SHIFT`` is the two-term shift rule for half-angle rotations,
    ``PAPER_SHIFT`` uses shifts of pi/4 with no prefactor (sqrt(2) times the
    exact gradient under the half-angle convention), ``FINITE_DIFF`` is a
    central difference with step 1e-5.
    """
    mode = GradientMode(mode)
    if getattr(model, "alphas", None) is None:
        raise ValueError("model is not trained")
    spec, theta = model.spec, model.params
    x = check_vector(spec, x)
    sv = model.alphas > 0
    weights = (model.alphas * model.labels)[sv]
    train_states = model.train_states[sv]
    d = spec.data_dim

    if mode is GradientMode.FINITE_DIFF:
        shifted = np.repeat(x[None, :], 2 * d, axis=0)
        shifted[np.arange(d), np.arange(d)] += FD_STEP
        shifted[d + np.arange(d), np.arange(d)] -= FD_STEP
        k = np.abs(train_states.conj() @ embed(spec, theta, shifted).T) ** 2
        f = weights @ k
        return (f[:d] - f[d:]) / (2 * FD_STEP)

    if mode is GradientMode.EXACT_SHIFT:
        shift, scale = math.pi / (4 * ANGLE_FACTOR), ANGLE_FACTOR
    else:
        shift, scale = math.pi / 4, 1.0
    base = angle_matrix(spec, x[None, :], theta)[0]
    angles = np.repeat(base[None, :], 2 * d, axis=0)
    cols = spec.template.data_op
    angles[np.arange(d), cols] += shift
    angles[d + np.arange(d), cols] -= shift
    tpl = spec.template
    states = _backend.simulate_batch(spec.n_qubits, tpl.kinds, tpl.targets, tpl.controls, angles)
    k = np.abs(train_states.conj() @ states.T) ** 2
    f = weights @ k
    return scale * (f[:d] - f[d:])
