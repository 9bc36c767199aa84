"""Spin operators and Hamiltonian assembly for conditional bath dynamics.

At high field the qubit enters only through its two hyperfine-shifted bath
Hamiltonians H0, H1 (secular approximation: no qubit spin flips). For qubit
level m and quantization axis b (the field direction), each bath spin k sees

    H(m) = sum_k (gamma_k * B + m * a_k) . I_k  +  sum_{k<l} I_k . J_kl . I_l

with a_k the hyperfine tensor row along b, gamma_k the nuclear Zeeman rate in
kHz/T, and J_kl the nuclear dipole tensor in kHz. All couplings are ordinary
frequencies; propagators are exp(-2*pi*i*H*t) with t in ms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..bath import BathSpin, SpinBath
from ..constants import GAMMA_E_MHZ_PER_T, P_EN_KHZ_A3, P_NN_KHZ_A3
from ..errors import DimensionCapError

CLUSTER_DIM_CAP = 4096
POINT_DIPOLE_MIN_R = 0.5  # A


@dataclass(frozen=True)
class QubitSpec:
    """Model spin defect: spin S with a chosen two-level subspace (m0, m1)."""

    spin_S: float = 1.0
    level_pair: tuple[float, float] = (0.0, 1.0)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma_e_mhz_per_t: float = GAMMA_E_MHZ_PER_T

    def __post_init__(self):
        m0, m1 = self.level_pair
        if m0 == m1:
            raise ValueError("qubit levels must differ")
        for m in (m0, m1):
            if abs(m) > self.spin_S + 1e-12:
                raise ValueError(f"level {m} outside spin-{self.spin_S} manifold")


@lru_cache(maxsize=None)
def spin_matrices(two_I: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Ix, Iy, Iz) for spin I = two_I/2, basis ordered m = I..-I."""
    I = two_I / 2.0
    d = two_I + 1
    m = I - np.arange(d)
    Iz = np.diag(m).astype(complex)
    # <m+1| I+ |m> = sqrt(I(I+1) - m(m+1))
    lowering = np.sqrt(I * (I + 1) - m[1:] * (m[1:] + 1))
    Ip = np.zeros((d, d), dtype=complex)
    Ip[np.arange(d - 1), np.arange(1, d)] = lowering
    Ix = (Ip + Ip.conj().T) / 2.0
    Iy = (Ip - Ip.conj().T) / 2.0j
    for M in (Ix, Iy, Iz):
        M.setflags(write=False)
    return Ix, Iy, Iz


def dipolar_geometry(r_vec: np.ndarray) -> np.ndarray:
    """(3 r^ r^T - 1) / |r|^3 in A^-3."""
    r = np.linalg.norm(r_vec)
    rhat = np.asarray(r_vec, dtype=float) / r
    return (3.0 * np.outer(rhat, rhat) - np.eye(3)) / r**3


def hyperfine_point_dipole(qubit: QubitSpec, spin: BathSpin) -> np.ndarray:
    """Point-dipole electron-nuclear hyperfine tensor, kHz (3x3, traceless)."""
    r_vec = spin.position - np.asarray(qubit.position, dtype=float)
    r = np.linalg.norm(r_vec)
    if r <= POINT_DIPOLE_MIN_R:
        raise ValueError(
            f"bath spin {r:.3f} A from the qubit: point-dipole approximation "
            f"invalid below {POINT_DIPOLE_MIN_R} A"
        )
    return P_EN_KHZ_A3 * spin.isotope.g_factor * dipolar_geometry(r_vec)


def nuclear_dipole(spin_a: BathSpin, spin_b: BathSpin) -> np.ndarray:
    """Nuclear dipole-dipole coupling tensor, kHz (3x3, traceless)."""
    r_vec = spin_b.position - spin_a.position
    if np.linalg.norm(r_vec) < 1e-9:
        raise ValueError("coincident bath spins")
    return (
        P_NN_KHZ_A3
        * spin_a.isotope.g_factor
        * spin_b.isotope.g_factor
        * dipolar_geometry(r_vec)
    )


def hyperfine_axis_row(qubit: QubitSpec, spin: BathSpin, b_hat: np.ndarray) -> np.ndarray:
    """Hyperfine field (3-vector, kHz) seen by the bath spin per unit qubit m."""
    return b_hat @ hyperfine_point_dipole(qubit, spin)


def _kron_embed(ops: np.ndarray, k: int, dims: list[int]) -> np.ndarray:
    """Embed single-spin operators (3, d_k, d_k) at slot k of a product space."""
    left = int(np.prod(dims[:k], dtype=np.int64))
    right = int(np.prod(dims[k + 1 :], dtype=np.int64))
    total = left * dims[k] * right
    out = np.empty((ops.shape[0], total, total), dtype=complex)
    for a in range(ops.shape[0]):
        out[a] = np.kron(np.kron(np.eye(left), ops[a]), np.eye(right))
    return out


def cluster_dimension(spins: list[BathSpin]) -> int:
    d = 1
    for s in spins:
        d *= int(round(2 * s.isotope.spin_I)) + 1
    return d


def conditional_hamiltonians(
    qubit: QubitSpec,
    spins: list[BathSpin],
    b_field: np.ndarray,
    dim_cap: int = CLUSTER_DIM_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """H0, H1 (kHz) for an arbitrary spin cluster; generic kron assembly."""
    d = cluster_dimension(spins)
    if d > dim_cap:
        raise DimensionCapError(f"cluster dimension {d} exceeds cap {dim_cap}")
    b_field = np.asarray(b_field, dtype=float).reshape(3)
    b_norm = np.linalg.norm(b_field)
    b_hat = b_field / b_norm if b_norm > 0 else np.array([0.0, 0.0, 1.0])
    m0, m1 = qubit.level_pair
    dims = [int(round(2 * s.isotope.spin_I)) + 1 for s in spins]
    h0 = np.zeros((d, d), dtype=complex)
    h1 = np.zeros((d, d), dtype=complex)
    embedded = []
    for k, s in enumerate(spins):
        ops = np.stack(spin_matrices(dims[k] - 1))
        ops_k = _kron_embed(ops, k, dims)
        embedded.append(ops_k)
        omega = s.isotope.gamma_khz_per_T * b_field
        a_row = hyperfine_axis_row(qubit, s, b_hat)
        for axis in range(3):
            h0 += (omega[axis] + m0 * a_row[axis]) * ops_k[axis]
            h1 += (omega[axis] + m1 * a_row[axis]) * ops_k[axis]
    for k in range(len(spins)):
        for l in range(k + 1, len(spins)):
            J = nuclear_dipole(spins[k], spins[l])
            for a in range(3):
                for b in range(3):
                    if J[a, b] == 0.0:
                        continue
                    term = J[a, b] * (embedded[k][a] @ embedded[l][b])
                    h0 += term
                    h1 += term
    return h0, h1


# -- batched builders for the hot path (singletons and pairs) ----------------


@dataclass(frozen=True)
class BathArrays:
    """Vectorized per-spin quantities for one bath realization."""

    positions: np.ndarray  # (N, 3), qubit at origin
    g: np.ndarray  # (N,)
    gamma: np.ndarray  # (N,) kHz/T
    two_I: np.ndarray  # (N,) int
    a_row: np.ndarray  # (N, 3) hyperfine field along b_hat per unit qubit m, kHz

    @classmethod
    def build(cls, qubit: QubitSpec, bath: SpinBath, b_field) -> "BathArrays":
        b_field = np.asarray(b_field, dtype=float).reshape(3)
        b_hat = b_field / np.linalg.norm(b_field)
        pos = bath.positions() - np.asarray(qubit.position, dtype=float)
        g = np.array([s.isotope.g_factor for s in bath.spins])
        gamma = np.array([s.isotope.gamma_khz_per_T for s in bath.spins])
        two_I = np.array(
            [int(round(2 * s.isotope.spin_I)) for s in bath.spins], dtype=int
        )
        if len(bath):
            r = np.linalg.norm(pos, axis=1)
            if r.min() <= POINT_DIPOLE_MIN_R:
                raise ValueError(
                    f"bath spin {r.min():.3f} A from the qubit: point-dipole "
                    f"approximation invalid below {POINT_DIPOLE_MIN_R} A"
                )
            rhat = pos / r[:, None]
            cosb = rhat @ b_hat
            a_row = (
                P_EN_KHZ_A3
                * g[:, None]
                * (3.0 * cosb[:, None] * rhat - b_hat)
                / (r**3)[:, None]
            )
        else:
            a_row = np.zeros((0, 3))
        return cls(pos, g, gamma, two_I, a_row)


def _pair_dipole_tensors(arrays: BathArrays, pair_indices: np.ndarray) -> np.ndarray:
    """(n, 3, 3) nuclear dipole tensors for index pairs, kHz."""
    ia, ib = pair_indices[:, 0], pair_indices[:, 1]
    rvec = arrays.positions[ib] - arrays.positions[ia]
    r = np.linalg.norm(rvec, axis=1)
    rhat = rvec / r[:, None]
    geom = 3.0 * rhat[:, :, None] * rhat[:, None, :] - np.eye(3)[None]
    return (
        P_NN_KHZ_A3 * (arrays.g[ia] * arrays.g[ib] / r**3)[:, None, None] * geom
    )


def batched_singletons(
    qubit: QubitSpec,
    arrays: BathArrays,
    indices: np.ndarray,
    b_field: np.ndarray,
    two_I: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked H0/H1 for all single-spin clusters of one spin quantum number."""
    b_field = np.asarray(b_field, dtype=float).reshape(3)
    m0, m1 = qubit.level_pair
    ops = np.stack(spin_matrices(two_I))  # (3, d, d)
    omega = arrays.gamma[indices, None] * b_field[None, :]
    a_row = arrays.a_row[indices]
    h0 = np.einsum("nu,uij->nij", omega + m0 * a_row, ops)
    h1 = np.einsum("nu,uij->nij", omega + m1 * a_row, ops)
    return h0, h1


def batched_pairs(
    qubit: QubitSpec,
    arrays: BathArrays,
    pair_indices: np.ndarray,
    b_field: np.ndarray,
    two_I_a: int,
    two_I_b: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked H0/H1 for two-spin clusters grouped by spin quantum numbers."""
    b_field = np.asarray(b_field, dtype=float).reshape(3)
    m0, m1 = qubit.level_pair
    ops_a = np.stack(spin_matrices(two_I_a))
    ops_b = np.stack(spin_matrices(two_I_b))
    da, db = two_I_a + 1, two_I_b + 1
    n = len(pair_indices)
    ia, ib = pair_indices[:, 0], pair_indices[:, 1]
    omega_a = arrays.gamma[ia, None] * b_field[None, :]
    omega_b = arrays.gamma[ib, None] * b_field[None, :]
    arow_a = arrays.a_row[ia]
    arow_b = arrays.a_row[ib]
    J = _pair_dipole_tensors(arrays, pair_indices)

    eye_a = np.eye(da)
    eye_b = np.eye(db)
    dip = np.einsum("nuv,uij,vkl->nikjl", J, ops_a, ops_b).reshape(n, da * db, da * db)

    def _assemble(m):
        wa = omega_a + m * arow_a
        wb = omega_b + m * arow_b
        single_a = np.einsum("nu,uij->nij", wa, ops_a)
        single_b = np.einsum("nu,uij->nij", wb, ops_b)
        h = np.einsum("nij,kl->nikjl", single_a, eye_b).reshape(n, da * db, da * db)
        h += np.einsum("ij,nkl->nikjl", eye_a, single_b).reshape(n, da * db, da * db)
        return h + dip

    return _assemble(m0), _assemble(m1)
