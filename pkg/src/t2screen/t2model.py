"""Closed-form coherence-time models.

Per spinful isotope the bulk (3D) scaling law is

    T2_3D_i = A3D * |g_i|^p_g * I_i^p_I * n_i^p_n      [seconds]

combined across isotopes by T2^(-eta) = sum_i T2_i^(-eta). A thin layer gets
a dimensionality correction

    T2_2D_i = C2D * n_i^((2-alpha)/3) * w^(-alpha/3) * T2_3D_i

(n_i in cm^-3, w in cm) combined with exponent 3/alpha, and a layer-on-
substrate stack follows the rate-sum

    (1/T2_HS)^eta_HS = (1/T2_2D)^(3/alpha) + weight * (1/T2_sub)^(3/2)

with all times expressed in seconds (the powers make the units conventional,
not dimensionally consistent, so the second is pinned here). Exponents shown
in reports are rounded for display; arithmetic always uses the exact values
derived from alpha.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .crystal import CrystalStructure, SlabGeometry
from .isotopes import IsotopeRegistry, SpinDensityReport, spin_densities


@dataclass(frozen=True)
class ModelParams:
    a3d_s: float = 1.5e18
    p_g: float = -1.6
    p_I: float = -1.1
    p_n: float = -1.0
    eta_3d: float = 2.0
    alpha_2d: float = 2.84
    c_2d: float = 0.94
    eta_hs: float = 1.35
    substrate_weight: float = 0.5
    substrate_exponent: float = 1.5

    def __post_init__(self):
        if self.alpha_2d <= 0 or self.eta_hs <= 0:
            raise ValueError("alpha_2d and eta_hs must be positive")

    @property
    def exp_n_2d(self) -> float:
        """Exact density exponent of the 2D correction, (2 - alpha)/3."""
        return (2.0 - self.alpha_2d) / 3.0

    @property
    def exp_w_2d(self) -> float:
        """Exact thickness exponent of the 2D correction, -alpha/3."""
        return -self.alpha_2d / 3.0

    @property
    def eta_2d(self) -> float:
        """Combination exponent for 2D contributions, 3/alpha."""
        return 3.0 / self.alpha_2d

    def display_exponents(self) -> dict:
        """Rounded exponents as printed in reports."""
        return {
            "n": round(self.exp_n_2d, 2),
            "w": round(self.exp_w_2d, 2),
            "combine": round(self.eta_2d, 2),
        }


DEFAULT_PARAMS = ModelParams()


def t2_3d_isotope(g: float, spin_I: float, n_cm3: float, params: ModelParams = DEFAULT_PARAMS) -> float:
    """Single-isotope bulk coherence time, seconds."""
    if g == 0:
        raise ValueError("model diverges for g = 0")
    if spin_I <= 0 or n_cm3 <= 0:
        raise ValueError("spin and density must be positive")
    return params.a3d_s * abs(g) ** params.p_g * spin_I**params.p_I * n_cm3**params.p_n


def t2_combine(contributions, eta: float) -> float:
    """Power-mean combination T^(-eta) = sum T_i^(-eta), seconds."""
    contributions = list(contributions)
    if not contributions:
        raise ValueError("no contributions to combine")
    if any(t <= 0 for t in contributions):
        raise ValueError("contributions must be positive")
    return float(np.sum([t ** (-eta) for t in contributions]) ** (-1.0 / eta))


def t2_3d_combine(contributions, params: ModelParams = DEFAULT_PARAMS) -> float:
    return t2_combine(contributions, params.eta_3d)


def t2_2d_isotope(
    g: float, spin_I: float, n_cm3: float, w_cm: float,
    params: ModelParams = DEFAULT_PARAMS,
) -> float:
    """Single-isotope thin-layer coherence time, seconds."""
    if w_cm <= 0:
        raise ValueError("thickness must be positive")
    t3d = t2_3d_isotope(g, spin_I, n_cm3, params)
    return params.c_2d * n_cm3**params.exp_n_2d * w_cm**params.exp_w_2d * t3d


def t2_2d_combine(contributions, params: ModelParams = DEFAULT_PARAMS) -> float:
    return t2_combine(contributions, params.eta_2d)


def t2_heterostructure(
    t2_2d_s: float, t2_sub_s: float, params: ModelParams = DEFAULT_PARAMS
) -> float:
    """Layer-on-substrate coherence time from the rate-sum model, seconds."""
    if t2_2d_s <= 0 or t2_sub_s <= 0:
        raise ValueError("inputs must be positive (seconds)")
    rate = t2_2d_s ** (-params.eta_2d) + params.substrate_weight * t2_sub_s ** (
        -params.substrate_exponent
    )
    return float(rate ** (-1.0 / params.eta_hs))


def t2_substrate_limit(t2_sub_s: float, params: ModelParams = DEFAULT_PARAMS) -> float:
    """Limit of the stack model for a spin-free layer (t2_2d -> infinity)."""
    return float(
        (params.substrate_weight * t2_sub_s ** (-params.substrate_exponent))
        ** (-1.0 / params.eta_hs)
    )


# ---------------------------------------------------------------------------
# structure-level evaluation


@dataclass(frozen=True)
class ModelT2Report:
    variant: str  # 3D | 2D | HS
    combined_t2_s: float
    per_isotope_s: dict[str, float]
    densities_cm3: dict[str, float]
    w_cm: float | None
    t2_sub_s: float | None
    params: ModelParams
    density_convention: str

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "combined_t2_s": self.combined_t2_s,
            "combined_t2_ms": self.combined_t2_s * 1e3,
            "per_isotope_s": self.per_isotope_s,
            "densities_cm3": self.densities_cm3,
            "density_convention": self.density_convention,
            "params": {
                "a3d_s": self.params.a3d_s,
                "p_g": self.params.p_g,
                "p_I": self.params.p_I,
                "p_n": self.params.p_n,
                "eta_3d": self.params.eta_3d,
                "alpha_2d": self.params.alpha_2d,
                "c_2d": self.params.c_2d,
                "eta_hs": self.params.eta_hs,
            },
        }
        if self.variant in ("2D", "HS"):
            d["w_cm"] = self.w_cm
            d["display_exponents"] = self.params.display_exponents()
        if self.variant == "HS":
            d["t2_sub_s"] = self.t2_sub_s
        return d


def model_t2_structure(
    structure: CrystalStructure,
    params: ModelParams = DEFAULT_PARAMS,
    registry: IsotopeRegistry | None = None,
    slab: SlabGeometry | None = None,
    radius_table: dict[str, float] | None = None,
) -> ModelT2Report:
    """Evaluate the closed-form model for a 3D crystal or a 2D layer."""
    report: SpinDensityReport = spin_densities(
        structure, registry=registry, slab=slab, radius_table=radius_table
    )
    spinful = report.spinful()
    per_isotope: dict[str, float] = {}
    if structure.dimensionality == "2D":
        w = report.volume_cm3 / (structure.lattice.inplane_area * 1e-16)
        for iso, n in spinful:
            per_isotope[iso.name] = t2_2d_isotope(iso.g_factor, iso.spin_I, n, w, params)
        combined = t2_2d_combine(per_isotope.values(), params) if per_isotope else np.inf
        variant = "2D"
    else:
        w = None
        for iso, n in spinful:
            per_isotope[iso.name] = t2_3d_isotope(iso.g_factor, iso.spin_I, n, params)
        combined = t2_3d_combine(per_isotope.values(), params) if per_isotope else np.inf
        variant = "3D"
    return ModelT2Report(
        variant=variant,
        combined_t2_s=float(combined),
        per_isotope_s=per_isotope,
        densities_cm3=dict(report.densities),
        w_cm=w,
        t2_sub_s=None,
        params=params,
        density_convention=report.convention,
    )


def model_t2_heterostructure_report(
    host_report: ModelT2Report, substrate_report: ModelT2Report,
    params: ModelParams = DEFAULT_PARAMS,
) -> ModelT2Report:
    t2_hs = t2_heterostructure(
        host_report.combined_t2_s, substrate_report.combined_t2_s, params
    )
    return ModelT2Report(
        variant="HS",
        combined_t2_s=t2_hs,
        per_isotope_s=dict(host_report.per_isotope_s),
        densities_cm3=dict(host_report.densities_cm3),
        w_cm=host_report.w_cm,
        t2_sub_s=substrate_report.combined_t2_s,
        params=params,
        density_convention=host_report.density_convention,
    )


# ---------------------------------------------------------------------------
# exponent fitting against simulated datasets


@dataclass(frozen=True)
class Layer2DRecord:
    """One material for the alpha fit: isotope features plus the CCE answer."""

    isotopes: tuple[tuple[float, float, float], ...]  # (g, I, n_cm3)
    w_cm: float
    t2_s: float


@dataclass(frozen=True)
class StackRecord:
    t2_2d_s: float
    t2_sub_s: float
    t2_hs_s: float


@dataclass(frozen=True)
class ExponentFit:
    values: dict[str, float]
    rms_log_residual: float
    residuals: np.ndarray
    parity: list[tuple[float, float]]  # (model_t2_s, reference_t2_s)
    warnings: tuple[str, ...] = ()


def _model_t2_2d_from_features(rec: Layer2DRecord, params: ModelParams) -> float:
    contribs = [
        t2_2d_isotope(g, I, n, rec.w_cm, params) for g, I, n in rec.isotopes
    ]
    return t2_2d_combine(contribs, params)


def fit_alpha2d(
    dataset: list[Layer2DRecord], params: ModelParams = DEFAULT_PARAMS
) -> ExponentFit:
    """Fit (alpha_2d, C_2d) by least squares on log(model/reference)."""
    if len(dataset) < 10:
        raise ValueError("need at least 10 records to fit alpha")
    t2s = np.array([r.t2_s for r in dataset])
    if t2s.max() / t2s.min() < 10.0:
        raise ValueError("dataset must span at least one decade of T2")
    notes = []
    w_vals = np.array([r.w_cm for r in dataset])
    if w_vals.max() / w_vals.min() < 1.0 + 1e-6:
        notes.append(
            "thickness w is constant across the dataset: alpha and C are "
            "poorly identifiable (flat objective along the w degeneracy)"
        )

    def residuals(x):
        p = replace(params, alpha_2d=x[0], c_2d=x[1])
        model = np.array([_model_t2_2d_from_features(r, p) for r in dataset])
        return np.log(model / t2s)

    res = least_squares(residuals, x0=[2.5, 1.0], bounds=([0.1, 1e-3], [6.0, 1e3]))
    jtj = res.jac.T @ res.jac
    cond = np.linalg.cond(jtj)
    if cond > 1e8:
        notes.append(f"ill-conditioned fit (cond(JtJ) = {cond:.2e})")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    fitted = replace(params, alpha_2d=float(res.x[0]), c_2d=float(res.x[1]))
    model = np.array([_model_t2_2d_from_features(r, fitted) for r in dataset])
    return ExponentFit(
        values={"alpha_2d": float(res.x[0]), "c_2d": float(res.x[1])},
        rms_log_residual=float(np.sqrt(np.mean(res.fun**2))),
        residuals=res.fun,
        parity=list(zip(model.tolist(), t2s.tolist())),
        warnings=tuple(notes),
    )


def fit_eta_hs(
    dataset: list[StackRecord], params: ModelParams = DEFAULT_PARAMS
) -> ExponentFit:
    """Fit eta_HS with the rate-sum structure fixed."""
    if len(dataset) < 3:
        raise ValueError("need at least 3 records to fit eta")
    t2s = np.array([r.t2_hs_s for r in dataset])
    notes = []
    sub_share = np.array(
        [
            params.substrate_weight * r.t2_sub_s ** (-params.substrate_exponent)
            / (r.t2_2d_s ** (-params.eta_2d)
               + params.substrate_weight * r.t2_sub_s ** (-params.substrate_exponent))
            for r in dataset
        ]
    )
    if sub_share.max() < 0.05:
        notes.append(
            "substrate term is negligible in every record: eta_HS is poorly "
            "identifiable"
        )

    def residuals(x):
        p = replace(params, eta_hs=x[0])
        model = np.array(
            [t2_heterostructure(r.t2_2d_s, r.t2_sub_s, p) for r in dataset]
        )
        return np.log(model / t2s)

    res = least_squares(residuals, x0=[1.2], bounds=([0.2], [6.0]))
    for note in notes:
        warnings.warn(note, stacklevel=2)
    fitted = replace(params, eta_hs=float(res.x[0]))
    model = np.array([t2_heterostructure(r.t2_2d_s, r.t2_sub_s, fitted) for r in dataset])
    return ExponentFit(
        values={"eta_hs": float(res.x[0])},
        rms_log_residual=float(np.sqrt(np.mean(res.fun**2))),
        residuals=res.fun,
        parity=list(zip(model.tolist(), t2s.tolist())),
        warnings=tuple(notes),
    )
