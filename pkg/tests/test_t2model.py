import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t2screen.crystal import parse_structure
from t2screen.t2model import (
    DEFAULT_PARAMS,
    Layer2DRecord,
    ModelParams,
    StackRecord,
    fit_alpha2d,
    fit_eta_hs,
    model_t2_structure,
    t2_2d_combine,
    t2_2d_isotope,
    t2_3d_combine,
    t2_3d_isotope,
    t2_heterostructure,
    t2_substrate_limit,
)

from conftest import structure_path

# hand-evaluated oracle values (exp/log arithmetic, independent of the
# power-operator implementation in the module)
DIAMOND_N13C = 8.0 / 3.567**3 * 1e24 * 0.0107
DIAMOND_T2_3D = np.exp(
    np.log(1.5e18) - 1.6 * np.log(1.4048236) - 1.1 * np.log(0.5) - np.log(DIAMOND_N13C)
)


def test_diamond_3d_value():
    t2 = t2_3d_isotope(1.4048236, 0.5, DIAMOND_N13C)
    assert t2 == pytest.approx(DIAMOND_T2_3D, rel=1e-12)
    assert t2 == pytest.approx(0.99e-3, rel=1e-3)  # 0.99 ms


def test_density_doubling_halves_t2():
    t1 = t2_3d_isotope(1.4, 0.5, 1e21)
    t2 = t2_3d_isotope(1.4, 0.5, 2e21)
    assert t2 == pytest.approx(t1 / 2.0, rel=1e-12)


def test_zero_g_rejected():
    with pytest.raises(ValueError):
        t2_3d_isotope(0.0, 0.5, 1e21)
    with pytest.raises(ValueError):
        t2_3d_isotope(1.0, 0.5, -1e21)


def test_combine_single_unchanged():
    assert t2_3d_combine([0.37]) == pytest.approx(0.37, rel=1e-12)


def test_combine_two_equal():
    assert t2_3d_combine([2.0, 2.0]) == pytest.approx(2.0 / np.sqrt(2.0), rel=1e-12)


def test_combine_hand_value():
    assert t2_3d_combine([1.0, 2.0, 4.0]) == pytest.approx(0.87287156, rel=1e-7)


def test_combine_empty_rejected():
    with pytest.raises(ValueError):
        t2_3d_combine([])


def test_2d_correction_exact_exponents():
    # oracle via exp/log with the exact exponents (2-2.84)/3 and -2.84/3
    corr = np.exp(
        np.log(0.94) + (2 - 2.84) / 3 * np.log(1e21) - 2.84 / 3 * np.log(6.2e-8)
    )
    t3d = 1e-3
    expected = corr * t3d
    assert t2_2d_isotope(1.4048236, 0.5, 1e21, 6.2e-8) == pytest.approx(
        expected * t2_3d_isotope(1.4048236, 0.5, 1e21) / t3d, rel=1e-12
    )
    assert corr == pytest.approx(8.247653, rel=1e-6)


def test_2d_reduces_to_3d_when_degenerate():
    params = ModelParams(alpha_2d=2.0, c_2d=1.0)
    # exponent of n is (2-2)/3 = 0; pick w so w^(-2/3) = 1
    t3d = t2_3d_isotope(1.1, 0.5, 5e20, params)
    t2d = t2_2d_isotope(1.1, 0.5, 5e20, 1.0, params)
    assert t2d == pytest.approx(t3d, rel=1e-12)


def test_display_exponents_regenerate_from_alpha():
    disp = DEFAULT_PARAMS.display_exponents()
    assert disp == {"n": -0.28, "w": -0.95, "combine": 1.06}
    assert DEFAULT_PARAMS.exp_n_2d == pytest.approx(-0.28, abs=1e-12)
    assert DEFAULT_PARAMS.exp_w_2d == pytest.approx(-2.84 / 3.0, rel=1e-12)
    assert DEFAULT_PARAMS.eta_2d == pytest.approx(3.0 / 2.84, rel=1e-12)


def test_heterostructure_substrate_only_limit():
    assert t2_substrate_limit(1.0) == pytest.approx(2.0 ** (1.0 / 1.35), rel=1e-9)
    assert t2_substrate_limit(1.0) == pytest.approx(1.6710336, rel=1e-6)
    # very clean layer approaches the substrate-only limit
    assert t2_heterostructure(1e9, 1.0) == pytest.approx(
        t2_substrate_limit(1.0), rel=1e-6
    )


def test_heterostructure_equal_inputs():
    assert t2_heterostructure(1.0, 1.0) == pytest.approx(1.5 ** (-1 / 1.35), rel=1e-9)
    assert t2_heterostructure(1.0, 1.0) == pytest.approx(0.7405630, rel=1e-6)


def test_heterostructure_host_limited_scaling():
    # layer-noise-dominated regime: T_HS ~ t2_2d^(1.06/1.35)
    lo, hi = 1e-6, 1e-5
    ratio = t2_heterostructure(hi, 1.0) / t2_heterostructure(lo, 1.0)
    expected = (hi / lo) ** ((3.0 / 2.84) / 1.35)
    assert ratio == pytest.approx(expected, rel=1e-3)


def test_heterostructure_rejects_nonpositive():
    with pytest.raises(ValueError):
        t2_heterostructure(-1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(
    n1=st.floats(1e19, 1e22),
    n2=st.floats(1e19, 1e22),
    bump=st.floats(1.01, 10.0),
)
def test_monotonic_in_density(n1, n2, bump):
    t_base = t2_3d_combine(
        [t2_3d_isotope(1.1, 0.5, n1), t2_3d_isotope(0.4, 2.5, n2)]
    )
    t_bumped = t2_3d_combine(
        [t2_3d_isotope(1.1, 0.5, n1 * bump), t2_3d_isotope(0.4, 2.5, n2)]
    )
    assert t_bumped < t_base


@settings(max_examples=40, deadline=None)
@given(
    contribs=st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=6),
)
def test_combination_bound(contribs):
    # range bounded so the strict inequality stays resolvable in float64
    combined = t2_3d_combine(contribs)
    assert combined < min(contribs)


def test_hs_below_single_source_limits():
    t_hs = t2_heterostructure(0.3, 0.9)
    only_layer = (0.3 ** (-DEFAULT_PARAMS.eta_2d)) ** (-1 / 1.35)
    only_sub = t2_substrate_limit(0.9)
    assert t_hs < min(only_layer, only_sub)


# ---------------------------------------------------------------------------
# structure-level reports


def test_structure_report_diamond():
    report = model_t2_structure(parse_structure(structure_path("diamond")))
    assert report.variant == "3D"
    assert report.combined_t2_s == pytest.approx(DIAMOND_T2_3D, rel=1e-6)


def test_structure_report_2d_uses_w():
    report = model_t2_structure(parse_structure(structure_path("ws2_monolayer")))
    assert report.variant == "2D"
    assert report.w_cm == pytest.approx(6.92e-8, rel=1e-6)
    assert report.combined_t2_s < min(report.per_isotope_s.values())


# ---------------------------------------------------------------------------
# exponent fits


def synthetic_layer_dataset(rng, alpha=2.84, c=0.94, noise=0.0, w_spread=True):
    params = ModelParams(alpha_2d=alpha, c_2d=c)
    records = []
    for _ in range(30):
        isotopes = []
        for _ in range(int(rng.integers(1, 4))):
            g = rng.uniform(0.1, 5.0) * rng.choice([-1, 1])
            spin = rng.choice([0.5, 1.0, 1.5, 2.5])
            n = 10 ** rng.uniform(19.0, 22.0)
            isotopes.append((g, spin, n))
        w = 10 ** rng.uniform(-7.6, -6.7) if w_spread else 7e-8
        contribs = [t2_2d_isotope(g, s, n, w, params) for g, s, n in isotopes]
        t2 = t2_2d_combine(contribs, params)
        if noise:
            t2 *= np.exp(rng.normal(0, noise))
        records.append(Layer2DRecord(tuple(isotopes), w, t2))
    return records


def test_fit_alpha_self_consistency():
    rng = np.random.default_rng(20)
    fit = fit_alpha2d(synthetic_layer_dataset(rng))
    assert fit.values["alpha_2d"] == pytest.approx(2.84, abs=0.01)
    assert fit.values["c_2d"] == pytest.approx(0.94, rel=0.02)


def test_fit_alpha_noisy_recovery():
    rng = np.random.default_rng(21)
    fit = fit_alpha2d(synthetic_layer_dataset(rng, noise=0.1))
    assert fit.values["alpha_2d"] == pytest.approx(2.84, abs=0.1)


def test_fit_alpha_warns_on_degenerate_w():
    rng = np.random.default_rng(22)
    with pytest.warns(UserWarning, match="identifiab"):
        fit_alpha2d(synthetic_layer_dataset(rng, w_spread=False))


def test_fit_alpha_needs_spread():
    rng = np.random.default_rng(23)
    records = [
        Layer2DRecord(((1.0, 0.5, 1e21),), 7e-8, 1.0e-3) for _ in range(12)
    ]
    with pytest.raises(ValueError):
        fit_alpha2d(records)


def synthetic_stack_dataset(rng, eta=1.35, noise=0.0, negligible_sub=False):
    params = ModelParams(eta_hs=eta)
    records = []
    for _ in range(25):
        t2d = 10 ** rng.uniform(-4.0, -1.0)
        tsub = 10 ** rng.uniform(-3.0, -0.5)
        if negligible_sub:
            tsub = 1e6
        ths = t2_heterostructure(t2d, tsub, params)
        if noise:
            ths *= np.exp(rng.normal(0, noise))
        records.append(StackRecord(t2d, tsub, ths))
    return records


def test_fit_eta_self_consistency():
    rng = np.random.default_rng(24)
    fit = fit_eta_hs(synthetic_stack_dataset(rng))
    assert fit.values["eta_hs"] == pytest.approx(1.35, abs=0.01)


def test_fit_eta_noisy_recovery():
    rng = np.random.default_rng(25)
    fit = fit_eta_hs(synthetic_stack_dataset(rng, noise=0.1))
    assert fit.values["eta_hs"] == pytest.approx(1.35, abs=0.1)


def test_fit_eta_warns_when_substrate_negligible():
    rng = np.random.default_rng(26)
    with pytest.warns(UserWarning, match="identifiab"):
        fit_eta_hs(synthetic_stack_dataset(rng, negligible_sub=True))
