"""Exact-diagonalization reference: dense propagation of the whole bath.

Independent of the CCE path on purpose: Hamiltonians are assembled by a
separate kron routine and the Hahn sequence is applied literally with
scipy.linalg.expm step propagators, L(t) = Tr[(U0 U1) rho (U1 U0)^H] / Tr[rho]
with the fully mixed bath state. Used as the oracle for factorization tests.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..bath import SpinBath
from ..constants import P_EN_KHZ_A3, P_NN_KHZ_A3
from ..errors import DimensionCapError
from .engine import CoherenceCurve, _check_time_grid
from .hamiltonian import QubitSpec, spin_matrices

ORACLE_DIM_CAP = 256


def _site_operators(two_I_list: list[int]) -> list[np.ndarray]:
    """Per-site (3, D, D) spin operators in the full product space."""
    dims = [t + 1 for t in two_I_list]
    D = int(np.prod(dims))
    ops = []
    for k, two_I in enumerate(two_I_list):
        left = int(np.prod(dims[:k])) if k else 1
        right = int(np.prod(dims[k + 1 :])) if k + 1 < len(dims) else 1
        trio = []
        for comp in spin_matrices(two_I):
            trio.append(np.kron(np.kron(np.eye(left), comp), np.eye(right)))
        ops.append(np.stack(trio))
    assert all(o.shape[-1] == D for o in ops)
    return ops


def _dip_tensor(prefactor: float, g1: float, g2: float, rvec: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(rvec)
    rr = np.outer(rvec, rvec) / r**2
    return prefactor * g1 * g2 * (3.0 * rr - np.eye(3)) / r**3


def exact_oracle(
    qubit: QubitSpec, bath: SpinBath, b_field, times_ms, dim_cap: int = ORACLE_DIM_CAP
) -> CoherenceCurve:
    """Hahn-echo coherence from full-Hilbert-space propagation (all couplings)."""
    times = np.asarray(times_ms, dtype=float)
    _check_time_grid(times)
    two_I = [int(round(2 * s.isotope.spin_I)) for s in bath.spins]
    D = int(np.prod([t + 1 for t in two_I])) if two_I else 1
    if D > dim_cap:
        raise DimensionCapError(f"oracle dimension {D} exceeds cap {dim_cap}")
    if len(bath) == 0:
        return CoherenceCurve(times, np.ones_like(times), diagnostics={"oracle": True})

    b = np.asarray(b_field, dtype=float).reshape(3)
    b_hat = b / np.linalg.norm(b)
    m0, m1 = qubit.level_pair
    ops = _site_operators(two_I)
    qpos = np.asarray(qubit.position, dtype=float)

    h_bath = np.zeros((D, D), dtype=complex)
    h_hf_unit = np.zeros((D, D), dtype=complex)  # hyperfine per unit qubit m
    for k, s in enumerate(bath.spins):
        omega = s.isotope.gamma_khz_per_T * b
        hf = _dip_tensor(P_EN_KHZ_A3, 1.0, s.isotope.g_factor, s.position - qpos)
        arow = b_hat @ hf
        for ax in range(3):
            h_bath += omega[ax] * ops[k][ax]
            h_hf_unit += arow[ax] * ops[k][ax]
    for k in range(len(bath)):
        for l in range(k + 1, len(bath)):
            J = _dip_tensor(
                P_NN_KHZ_A3,
                bath.spins[k].isotope.g_factor,
                bath.spins[l].isotope.g_factor,
                bath.spins[l].position - bath.spins[k].position,
            )
            for a in range(3):
                for c in range(3):
                    h_bath += J[a, c] * (ops[k][a] @ ops[l][c])

    h0 = h_bath + m0 * h_hf_unit
    h1 = h_bath + m1 * h_hf_unit
    rho = np.eye(D) / D
    L = np.empty(len(times))
    for i, t in enumerate(times):
        tau = t / 2.0
        u0 = expm(-2j * np.pi * h0 * tau)
        u1 = expm(-2j * np.pi * h1 * tau)
        branch_a = u0 @ u1  # |1> start: evolve H1, flip, evolve H0
        branch_b = u1 @ u0  # |0> start
        L[i] = abs(np.trace(branch_a @ rho @ branch_b.conj().T))
    L[0] = 1.0
    return CoherenceCurve(times, np.clip(L, 0.0, 1.0), diagnostics={"oracle": True})
