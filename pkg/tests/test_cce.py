import itertools

import numpy as np
import pytest

from t2screen.bath import BathSpin, SpinBath
from t2screen.cce import (
    CCEParams,
    QubitSpec,
    cce_coherence,
    element_decoupled_coherence,
    ensemble_average,
    enumerate_clusters,
    exact_oracle,
    hahn_echo_cluster,
    hyperfine_point_dipole,
    nuclear_dipole,
    time_grid,
)
from t2screen.cce import kernels, kernels_py
from t2screen.cce.engine import Cluster, CoherenceCurve
from t2screen.constants import P_EN_KHZ_A3, P_NN_KHZ_A3
from t2screen.errors import DimensionCapError, T2ScreenError
from t2screen.isotopes import default_registry

B5 = (0.0, 0.0, 5.0)


def iso(element, mass):
    return next(i for i in default_registry().lookup(element) if i.mass_number == mass)


C13 = iso("C", 13)
H1 = iso("H", 1)
F19 = iso("F", 19)
O17 = iso("O", 17)


def make_bath(spins, r_bath=50.0, seed=0):
    return SpinBath(tuple(spins), seed=seed, r_bath=r_bath)


# ---------------------------------------------------------------------------
# coupling tensors; prefactors re-derived by hand from the pinned constants


def test_prefactors_match_hand_derivation():
    # (mu0/4pi) g_e mu_B mu_N / h and (mu0/4pi) mu_N^2 / h in kHz*A^3
    assert P_EN_KHZ_A3 == pytest.approx(1.415480e4, rel=1e-5)
    assert P_NN_KHZ_A3 == pytest.approx(3.850007, rel=1e-5)


def test_hyperfine_axial_form():
    spin = BathSpin(C13, np.array([0.0, 0.0, 5.0]))
    A = hyperfine_point_dipole(QubitSpec(), spin)
    scale = P_EN_KHZ_A3 * C13.g_factor / 125.0
    assert np.allclose(A, scale * np.diag([-1.0, -1.0, 2.0]), atol=1e-12)
    assert A[2, 2] == pytest.approx(318.1599, rel=1e-5)  # 2 * 14155 * 1.4048 / 125


def test_hyperfine_traceless_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        r = rng.normal(size=3)
        r = r / np.linalg.norm(r) * rng.uniform(1.0, 20.0)
        A = hyperfine_point_dipole(QubitSpec(), BathSpin(C13, r))
        assert abs(np.trace(A)) < 1e-10 * np.abs(A).max()
        assert np.allclose(A, A.T)


def test_hyperfine_rejects_contact_distance():
    with pytest.raises(ValueError):
        hyperfine_point_dipole(QubitSpec(), BathSpin(C13, np.array([0.3, 0, 0])))


def test_nuclear_dipole_protons_2A():
    a = BathSpin(H1, np.array([0.0, 0.0, 0.0]))
    b = BathSpin(H1, np.array([0.0, 0.0, 2.0]))
    J = nuclear_dipole(a, b)
    assert J[2, 2] == pytest.approx(2 * 3.850007 * 5.58569468**2 / 8.0, rel=1e-6)
    assert J[2, 2] == pytest.approx(30.03, abs=0.01)


def test_nuclear_dipole_symmetry_and_scaling():
    rng = np.random.default_rng(2)
    p1 = rng.normal(size=3) * 3
    p2 = p1 + np.array([1.5, -2.0, 0.7])
    a, b = BathSpin(C13, p1), BathSpin(O17, p2)
    assert np.allclose(nuclear_dipole(a, b), nuclear_dipole(b, a))
    far = BathSpin(O17, p1 + 2 * (p2 - p1))
    assert np.allclose(nuclear_dipole(a, far), nuclear_dipole(a, b) / 8.0)


# ---------------------------------------------------------------------------
# cluster enumeration


def test_clusters_collinear_chain():
    spacing = 0.9 * 10.0
    spins = [BathSpin(C13, np.array([i * spacing, 0, 4.0])) for i in range(3)]
    clusters = enumerate_clusters(make_bath(spins), r_dipole=10.0, max_order=2)
    orders = {}
    for c in clusters:
        orders.setdefault(c.order, []).append(c.indices)
    assert orders[1] == [(0,), (1,), (2,)]
    assert orders[2] == [(0, 1), (1, 2)]  # chain ends are not adjacent


def test_clusters_empty_bath():
    assert enumerate_clusters(make_bath([]), 10.0, 2) == []


def test_pair_count_matches_brute_force():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-15, 15, size=(20, 3))
    spins = [BathSpin(C13, p) for p in pos]
    clusters = enumerate_clusters(make_bath(spins), r_dipole=8.0, max_order=2)
    pairs = [c for c in clusters if c.order == 2]
    expected = sum(
        1
        for i in range(20)
        for j in range(i + 1, 20)
        if np.linalg.norm(pos[i] - pos[j]) <= 8.0
    )
    assert len(pairs) == expected


def test_triplets_are_connected_and_complete():
    rng = np.random.default_rng(4)
    pos = rng.uniform(-8, 8, size=(10, 3))
    spins = [BathSpin(C13, p) for p in pos]
    r_dip = 6.0
    clusters = enumerate_clusters(make_bath(spins), r_dipole=r_dip, max_order=3)
    triplets = {c.indices for c in clusters if c.order == 3}
    adj = {
        (i, j)
        for i in range(10)
        for j in range(10)
        if i != j and np.linalg.norm(pos[i] - pos[j]) <= r_dip
    }

    def connected(t):
        edges = [(a, b) for a, b in itertools.combinations(t, 2) if (a, b) in adj]
        if len(edges) < 2:
            return len(edges) == 3
        nodes = set()
        for e in edges:
            nodes.update(e)
        return len(nodes) == 3

    expected = {
        t for t in itertools.combinations(range(10), 3) if connected(t)
    }
    assert triplets == expected


# ---------------------------------------------------------------------------
# propagation


def test_time_grid_must_start_at_zero():
    spins = [BathSpin(C13, np.array([0, 0, 5.0]))]
    with pytest.raises(T2ScreenError):
        hahn_echo_cluster(QubitSpec(), Cluster((0,)), make_bath(spins), B5,
                          np.array([0.1, 0.2]))


def test_singleton_secular_echo_refocuses_exactly():
    # spin on the field axis: conditional Hamiltonians commute, |L| = 1
    spins = [BathSpin(C13, np.array([0.0, 0.0, 4.0]))]
    L = hahn_echo_cluster(QubitSpec(), Cluster((0,)), make_bath(spins), B5,
                          time_grid(2.0, 41))
    assert np.allclose(np.abs(L), 1.0, atol=1e-12)


def test_singleton_high_field_near_refocus():
    spins = [BathSpin(C13, np.array([1.8, 1.2, 2.0]))]
    L = hahn_echo_cluster(QubitSpec(), Cluster((0,)), make_bath(spins), B5,
                          time_grid(2.0, 41))
    assert np.abs(L).min() > 0.99


def test_identical_conditional_hamiltonians_give_unity():
    rng = np.random.default_rng(5)
    h = rng.normal(size=(1, 4, 4)) + 1j * rng.normal(size=(1, 4, 4))
    h = (h + h.conj().transpose(0, 2, 1)) * 100
    L = kernels.hahn_echo_batch(h, h, np.linspace(0, 3, 17))
    assert np.allclose(L, 1.0, atol=1e-12)


def test_far_spin_cluster_is_inert():
    spins = [BathSpin(C13, np.array([0.0, 0.0, 49.0]))]
    L = hahn_echo_cluster(QubitSpec(), Cluster((0,)), make_bath(spins), B5,
                          time_grid(1.0, 21))
    assert np.allclose(np.abs(L), 1.0, atol=1e-9)


def test_pair_matches_exact_oracle():
    spins = [
        BathSpin(C13, np.array([1.8, 1.2, 2.0])),
        BathSpin(C13, np.array([-1.0, 2.5, 1.0])),
    ]
    bath = make_bath(spins)
    times = time_grid(2.0, 41)
    L = hahn_echo_cluster(QubitSpec(), Cluster((0, 1)), bath, B5, times)
    ref = exact_oracle(QubitSpec(), bath, B5, times)
    assert np.abs(np.abs(L) - ref.L).max() < 1e-10


def random_small_bath(rng, max_spins=6, species=(C13,)):
    n = int(rng.integers(2, max_spins + 1))
    while True:
        pos = rng.uniform(-8, 8, size=(n, 3))
        ok = all(np.linalg.norm(p) > 2.0 for p in pos) and all(
            np.linalg.norm(pos[i] - pos[j]) > 2.0
            for i in range(n)
            for j in range(i + 1, n)
        )
        if ok:
            break
    picks = [species[int(rng.integers(len(species)))] for _ in range(n)]
    return make_bath([BathSpin(s, p) for s, p in zip(picks, pos)])


def test_full_order_cce_equals_oracle():
    rng = np.random.default_rng(7)
    times = time_grid(2.0, 31)
    for _ in range(5):
        bath = random_small_bath(rng)
        params = CCEParams(r_dipole=1e3, max_order=len(bath), b_field=B5,
                           times_ms=times)
        cce = cce_coherence(QubitSpec(), bath, params)
        ref = exact_oracle(QubitSpec(), bath, B5, times)
        assert np.abs(cce.L - ref.L).max() < 1e-8


def test_full_order_cce_mixed_species():
    rng = np.random.default_rng(8)
    times = time_grid(1.0, 21)
    for _ in range(3):
        bath = random_small_bath(rng, max_spins=4, species=(C13, H1, O17))
        if np.prod([2 * s.isotope.spin_I + 1 for s in bath.spins]) > 256:
            continue
        params = CCEParams(r_dipole=1e3, max_order=len(bath), b_field=B5,
                           times_ms=times)
        cce = cce_coherence(QubitSpec(), bath, params)
        ref = exact_oracle(QubitSpec(), bath, B5, times)
        assert np.abs(cce.L - ref.L).max() < 1e-8


def test_oracle_dimension_cap():
    spins = [BathSpin(O17, np.array([0, 0, 3.0 + i])) for i in range(4)]
    with pytest.raises(DimensionCapError):
        exact_oracle(QubitSpec(), make_bath(spins), B5, time_grid(1.0, 11))


def test_empty_bath_is_coherent():
    params = CCEParams(r_dipole=10.0, max_order=2, b_field=B5,
                       times_ms=time_grid(1.0, 11))
    curve = cce_coherence(QubitSpec(), make_bath([]), params)
    assert np.allclose(curve.L, 1.0)


def test_underflow_guard_masks_pairs():
    rng = np.random.default_rng(9)
    pos = rng.uniform(-6, 6, size=(4, 3)) + np.array([0, 0, 8.0])
    bath = make_bath([BathSpin(C13, p) for p in pos])
    times = time_grid(1.0, 11)
    normal = cce_coherence(
        QubitSpec(), bath, CCEParams(r_dipole=50.0, max_order=2, b_field=B5,
                                     times_ms=times)
    )
    assert normal.diagnostics["underflow_clusters"] == 0
    # floor above |L|=1 forces every pair denominator to "underflow"
    masked = cce_coherence(
        QubitSpec(), bath,
        CCEParams(r_dipole=50.0, max_order=2, b_field=B5, times_ms=times,
                  underflow_floor=1.5),
    )
    n_pairs = masked.diagnostics["n_clusters_order2"]
    assert masked.diagnostics["underflow_clusters"] == n_pairs
    singles_only = cce_coherence(
        QubitSpec(), bath,
        CCEParams(r_dipole=50.0, max_order=1, b_field=B5, times_ms=times),
    )
    assert np.allclose(masked.L, singles_only.L, atol=1e-12)


# ---------------------------------------------------------------------------
# ensemble averaging


def test_average_of_identical_curves():
    t = time_grid(1.0, 11)
    c = CoherenceCurve(t, np.exp(-t**2))
    avg = ensemble_average([c] * 40)
    assert np.allclose(avg.L, c.L)
    assert avg.n_seeds == 40


def test_average_hand_value():
    t = time_grid(2.0, 3)  # [0, 1, 2]
    c1 = CoherenceCurve(t, np.exp(-((t / 1.0) ** 2)))
    c2 = CoherenceCurve(t, np.exp(-((t / 2.0) ** 2)))
    avg = ensemble_average([c1, c2])
    assert avg.L[1] == pytest.approx(0.5733401121, rel=1e-9)


def test_average_rejects_grid_mismatch():
    c1 = CoherenceCurve(time_grid(1.0, 11), np.ones(11))
    c2 = CoherenceCurve(time_grid(2.0, 11), np.ones(11))
    with pytest.raises(T2ScreenError):
        ensemble_average([c1, c2])


# ---------------------------------------------------------------------------
# kernels


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernel unavailable")
def test_kernel_parity_compiled_vs_python():
    rng = np.random.default_rng(10)
    for d in (2, 3, 4, 6, 12, 16, 36):
        h = rng.normal(size=(2, 5, d, d)) + 1j * rng.normal(size=(2, 5, d, d))
        h0 = np.ascontiguousarray((h[0] + h[0].conj().transpose(0, 2, 1)) * 40)
        h1 = np.ascontiguousarray((h[1] + h[1].conj().transpose(0, 2, 1)) * 40)
        for tau in (np.linspace(0, 0.6, 23), np.array([0.0, 0.07, 0.2, 0.21])):
            a = kernels_py.hahn_echo_batch(h0, h1, tau)
            b = kernels._kernels.hahn_echo_batch(h0, h1, np.ascontiguousarray(tau))
            assert np.abs(a - b).max() < 1e-10


def test_kernel_magnitude_bounded():
    rng = np.random.default_rng(11)
    h = rng.normal(size=(2, 8, 6, 6)) + 1j * rng.normal(size=(2, 8, 6, 6))
    h0 = (h[0] + h[0].conj().transpose(0, 2, 1)) * 300
    h1 = (h[1] + h[1].conj().transpose(0, 2, 1)) * 300
    L = kernels.hahn_echo_batch(h0, h1, np.linspace(0, 2, 41))
    assert np.abs(L).max() <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# physics invariants (reduced-size versions; full runs live in acceptance)


def _quick_t2(structure_name, r_bath, r_dipole, seeds, t_max, b=B5):
    from scipy.optimize import curve_fit

    from t2screen.bath import default_qubit_site, generate_bath
    from t2screen.crystal import parse_structure

    from conftest import structure_path

    s = parse_structure(structure_path(structure_name))
    qpos = s.cart_coords()[default_qubit_site(s)]
    times = time_grid(t_max, 101)
    curves = []
    for seed in range(seeds):
        bath = generate_bath(s, qpos, r_bath, seed)
        params = CCEParams(r_dipole=r_dipole, max_order=2, b_field=b, times_ms=times)
        curves.append(cce_coherence(QubitSpec(position=tuple(qpos)), bath, params))
    avg = ensemble_average(curves)
    p, _ = curve_fit(
        lambda t, T2, n: np.exp(-((t / T2) ** n)), avg.times_ms, avg.L,
        p0=(t_max / 3, 2.0), maxfev=20000,
    )
    return p[0]


@pytest.mark.slow
def test_high_field_insensitivity():
    t2_5t = _quick_t2("diamond", 30.0, 15.0, 12, 4.0, b=(0, 0, 5.0))
    t2_10t = _quick_t2("diamond", 30.0, 15.0, 12, 4.0, b=(0, 0, 10.0))
    assert abs(t2_10t - t2_5t) / t2_5t < 0.10


def test_heteronuclear_decoupling_quick():
    rng = np.random.default_rng(12)
    spins = []
    for _ in range(30):
        while True:
            p = rng.uniform(-20, 20, size=3)
            if np.linalg.norm(p) > 2.5 and all(
                np.linalg.norm(p - s.position) > 2.5 for s in spins
            ):
                break
        spins.append(BathSpin(H1 if rng.uniform() < 0.5 else F19, p))
    bath = make_bath(spins)
    times = time_grid(0.05, 41)
    params = CCEParams(r_dipole=25.0, max_order=2, b_field=B5, times_ms=times)
    full = cce_coherence(QubitSpec(), bath, params)
    prod = element_decoupled_coherence(QubitSpec(), bath, params)
    mask = full.L > 0.2
    assert np.abs(full.L[mask] - prod.L[mask]).max() < 0.05
