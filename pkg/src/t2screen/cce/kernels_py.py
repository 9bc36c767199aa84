"""Pure-numpy Hahn-echo propagation kernel (fallback for the compiled core).

For each cluster with conditional Hamiltonians H0, H1 (kHz) the Hahn-echo
coherence factor at total time t = 2*tau is

    L(t) = Tr[U0 U1 U0' U1'] / d,   U_m = exp(-2*pi*i*H_m*tau)

computed in the joint eigenbases: with M = V0' V1 and diagonal phase vectors
p_m = exp(-2*pi*i*w_m*tau),

    L = Tr[(P0 M P1 M') (P0* M P1* M')] / d.
"""

from __future__ import annotations

import numpy as np


def hahn_echo_batch(h0: np.ndarray, h1: np.ndarray, tau_ms: np.ndarray) -> np.ndarray:
    """Echo factors for a stack of clusters sharing one Hilbert dimension.

    h0, h1: (n, d, d) Hermitian, kHz. tau_ms: (T,) half-times in ms.
    Returns complex (n, T); L[:, tau=0] == 1.
    """
    h0 = np.ascontiguousarray(h0, dtype=complex)
    h1 = np.ascontiguousarray(h1, dtype=complex)
    n, d, _ = h0.shape
    tau = np.asarray(tau_ms, dtype=float)
    w0, v0 = np.linalg.eigh(h0)
    w1, v1 = np.linalg.eigh(h1)
    m = np.matmul(v0.conj().transpose(0, 2, 1), v1)  # (n, d, d)
    mh = m.conj().transpose(0, 2, 1)
    out = np.empty((n, len(tau)), dtype=complex)
    two_pi = 2.0 * np.pi
    for k, t in enumerate(tau):
        p0 = np.exp(-1j * two_pi * w0 * t)  # (n, d)
        p1 = np.exp(-1j * two_pi * w1 * t)
        x = p0[:, :, None] * m * p1[:, None, :]
        a = np.matmul(x, mh)
        y = p0.conj()[:, :, None] * m * p1.conj()[:, None, :]
        b = np.matmul(y, mh)
        out[:, k] = np.einsum("nij,nji->n", a, b) / d
    return out
