"""Pure numpy statevector kernels, used when the compiled extension is absent.

Mirrors the contract of ``qadv._kernels``.
"""
from __future__ import annotations

import numpy as np

RX, RZ, CNOT = 0, 1, 2


def apply_op(states: np.ndarray, n_qubits: int, kind: int, target: int,
             control: int, angles: np.ndarray) -> np.ndarray:
    """Apply one gate to a (B, 2**n) batch; ``angles`` has shape (B,). Returns a new array."""
    batch = states.shape[0]
    lo = 1 << target
    hi = (1 << n_qubits) // (2 * lo)
    view = states.reshape(batch, hi, 2, lo)
    if kind == RX:
        half = 0.5 * np.asarray(angles, dtype=float).reshape(batch, 1, 1)
        c, s = np.cos(half), -1j * np.sin(half)
        a, b = view[:, :, 0, :], view[:, :, 1, :]
        out = np.empty_like(view)
        out[:, :, 0, :] = c * a + s * b
        out[:, :, 1, :] = s * a + c * b
        return out.reshape(batch, -1)
    if kind == RZ:
        half = 0.5 * np.asarray(angles, dtype=float).reshape(batch, 1, 1)
        out = np.empty_like(view)
        out[:, :, 0, :] = view[:, :, 0, :] * np.exp(-1j * half)
        out[:, :, 1, :] = view[:, :, 1, :] * np.exp(1j * half)
        return out.reshape(batch, -1)
    if kind == CNOT:
        idx = np.arange(1 << n_qubits)
        perm = np.where(idx & (1 << control), idx ^ lo, idx)
        return states[:, perm]
    raise ValueError(f"unknown gate kind {kind}")


def simulate_batch(n_qubits, kinds, targets, controls, angles):
    angles = np.asarray(angles, dtype=float)
    batch = angles.shape[0]
    states = np.zeros((batch, 1 << n_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    for k in range(len(kinds)):
        states = apply_op(states, n_qubits, int(kinds[k]), int(targets[k]),
                          int(controls[k]), angles[:, k])
    return states
