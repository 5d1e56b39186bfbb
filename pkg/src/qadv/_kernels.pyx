# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled statevector kernels.

Same contract as :mod:`qadv._fallback`: ops are encoded as parallel arrays
(kind, target, control) and every row of ``angles`` is one circuit instance.
Kinds: 0 = RX, 1 = RZ, 2 = CNOT. Qubit 0 is the least-significant index bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()

cdef void _run_one(double complex* s, Py_ssize_t dim, const signed char[:] kinds,
                   const int[:] targets, const int[:] controls,
                   const double[:] angles) noexcept nogil:
    cdef Py_ssize_t k, i, j, n_ops = kinds.shape[0]
    cdef Py_ssize_t tmask, cmask
    cdef double c, sn, half
    cdef double complex a, b, ph0, ph1, tmp
    for i in range(dim):
        s[i] = 0
    s[0] = 1
    for k in range(n_ops):
        tmask = (<Py_ssize_t>1) << targets[k]
        if kinds[k] == 0:
            half = 0.5 * angles[k]
            c = cos(half)
            sn = sin(half)
            for i in range(dim):
                if i & tmask:
                    continue
                j = i | tmask
                a = s[i]
                b = s[j]
                # RX = [[c, -i s], [-i s, c]]
                s[i] = c * a + (-1j * sn) * b
                s[j] = (-1j * sn) * a + c * b
        elif kinds[k] == 1:
            half = 0.5 * angles[k]
            ph0 = cos(half) - 1j * sin(half)
            ph1 = cos(half) + 1j * sin(half)
            for i in range(dim):
                if i & tmask:
                    s[i] = s[i] * ph1
                else:
                    s[i] = s[i] * ph0
        else:
            cmask = (<Py_ssize_t>1) << controls[k]
            for i in range(dim):
                if (i & cmask) and not (i & tmask):
                    j = i | tmask
                    tmp = s[i]
                    s[i] = s[j]
                    s[j] = tmp


def simulate_batch(int n_qubits, const signed char[:] kinds, const int[:] targets,
                   const int[:] controls, const double[:, :] angles):
    """Run one circuit structure for every row of ``angles``; returns (B, 2**n)."""
    cdef Py_ssize_t dim = (<Py_ssize_t>1) << n_qubits
    cdef Py_ssize_t b, n_batch = angles.shape[0]
    out = np.empty((n_batch, dim), dtype=np.complex128)
    cdef double complex[:, ::1] view = out
    with nogil:
        for b in range(n_batch):
            _run_one(&view[b, 0], dim, kinds, targets, controls, angles[b])
    return out
