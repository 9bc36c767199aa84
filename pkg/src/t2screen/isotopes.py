"""Nuclear isotope registry and spin-density computation.

The registry ships as a versioned plain-text table (one isotope per line)
including spin-0 isotopes so abundances sum to one per element. g-factors are
isotropic scalars. Abundances can be overridden per run to model isotopic
purification.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .constants import ANGSTROM3_CM3, NUCLEAR_KHZ_PER_T
from .crystal import CrystalStructure, SlabGeometry, slab_geometry
from .errors import MissingDataError

ABUNDANCE_SUM_TOL = 1e-6


@dataclass(frozen=True)
class IsotopeSpecies:
    element: str
    mass_number: int
    spin_I: float
    g_factor: float
    abundance: float

    def __post_init__(self):
        if self.spin_I < 0 or round(self.spin_I * 2) != self.spin_I * 2:
            raise ValueError(f"spin must be a non-negative multiple of 1/2, got {self.spin_I}")
        if not 0.0 <= self.abundance <= 1.0:
            raise ValueError(f"abundance outside [0, 1]: {self.abundance}")

    @property
    def name(self) -> str:
        return f"{self.mass_number}{self.element}"

    @property
    def gamma_khz_per_T(self) -> float:
        """Zeeman frequency per Tesla, kHz (signed)."""
        return self.g_factor * NUCLEAR_KHZ_PER_T


class IsotopeRegistry:
    """Immutable isotope table, shared read-only across workers."""

    def __init__(self, entries: list[IsotopeSpecies], version: str = "custom"):
        self.version = version
        self._by_element: dict[str, tuple[IsotopeSpecies, ...]] = {}
        grouped: dict[str, list[IsotopeSpecies]] = {}
        for iso in entries:
            grouped.setdefault(iso.element, []).append(iso)
        for element, isos in grouped.items():
            isos = sorted(isos, key=lambda x: x.mass_number)
            total = sum(i.abundance for i in isos)
            if abs(total - 1.0) > ABUNDANCE_SUM_TOL:
                raise ValueError(
                    f"abundances for {element} sum to {total:.8f}, expected 1"
                )
            self._by_element[element] = tuple(isos)

    @classmethod
    def load(cls, path=None) -> "IsotopeRegistry":
        if path is None:
            text = resources.files("t2screen.data").joinpath("isotopes.txt").read_text()
        else:
            text = Path(path).read_text()
        version = "unversioned"
        entries = []
        for ln in text.splitlines():
            ln = ln.strip()
            if ln.startswith("#"):
                if "version" in ln:
                    version = ln.split("version", 1)[1].strip().strip(",")
                continue
            if not ln:
                continue
            sym, mass, spin, g, ab = ln.split()
            entries.append(
                IsotopeSpecies(sym, int(mass), float(spin), float(g), float(ab))
            )
        return cls(entries, version=version)

    def elements(self) -> list[str]:
        return sorted(self._by_element)

    def lookup(self, element: str) -> list[IsotopeSpecies]:
        """All isotopes of an element, spin-0 included (abundances sum to 1)."""
        try:
            return list(self._by_element[element])
        except KeyError:
            raise MissingDataError(f"no isotope data for element {element!r}") from None

    def spinful(self, element: str) -> list[IsotopeSpecies]:
        return [i for i in self.lookup(element) if i.spin_I > 0]

    def with_abundances(self, overrides: dict[str, float]) -> "IsotopeRegistry":
        """New registry with isotope abundances replaced (isotope-engineering what-if).

        ``overrides`` maps isotope names like ``"13C"`` to new fractions; the
        remaining isotopes of the element are rescaled to keep the sum at 1.
        """
        entries = []
        for element, isos in self._by_element.items():
            named = {i.name: i for i in isos}
            changed = {n: v for n, v in overrides.items() if n in named}
            if not changed:
                entries.extend(isos)
                continue
            fixed = sum(changed.values())
            if fixed > 1.0 + ABUNDANCE_SUM_TOL:
                raise ValueError(f"override abundances for {element} exceed 1")
            rest = [i for i in isos if i.name not in changed]
            rest_total = sum(i.abundance for i in rest)
            scale = (1.0 - fixed) / rest_total if rest_total > 0 else 0.0
            for iso in isos:
                if iso.name in changed:
                    entries.append(replace(iso, abundance=changed[iso.name]))
                else:
                    entries.append(replace(iso, abundance=iso.abundance * scale))
        return IsotopeRegistry(entries, version=self.version + "+override")


_default_registry: IsotopeRegistry | None = None


def default_registry() -> IsotopeRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = IsotopeRegistry.load()
    return _default_registry


def lookup(element: str) -> list[IsotopeSpecies]:
    return default_registry().lookup(element)


@dataclass(frozen=True)
class SpinDensityReport:
    """Volumetric spin densities per spinful isotope, cm^-3.

    For 2D structures the reference volume is (cell area x layer thickness w),
    vacuum excluded; the convention tag records this for provenance.
    """

    densities: dict[str, float]  # isotope name -> n_i, cm^-3
    element_totals: dict[str, float]  # element -> total spinful density, cm^-3
    site_density: float  # all atoms, cm^-3
    volume_cm3: float  # reference volume per cell
    convention: str  # "cell" (3D) | "area*w" (2D)
    isotopes: dict[str, IsotopeSpecies]

    def spinful(self) -> list[tuple[IsotopeSpecies, float]]:
        return [(self.isotopes[name], n) for name, n in self.densities.items()]


def spin_densities(
    structure: CrystalStructure,
    registry: IsotopeRegistry | None = None,
    slab: SlabGeometry | None = None,
    radius_table: dict[str, float] | None = None,
) -> SpinDensityReport:
    """Nuclear spin density n_i per spinful isotope of ``structure``."""
    reg = registry if registry is not None else default_registry()
    if structure.dimensionality == "2D":
        if slab is None:
            slab = slab_geometry(structure, radius_table)
        area_cm2 = structure.lattice.inplane_area * 1e-16
        volume_cm3 = area_cm2 * slab.thickness_w_cm
        convention = "area*w"
    else:
        volume_cm3 = structure.lattice.volume * ANGSTROM3_CM3
        convention = "cell"
    densities: dict[str, float] = {}
    totals: dict[str, float] = {}
    isotopes: dict[str, IsotopeSpecies] = {}
    n_sites = 0
    for element, count in structure.composition().items():
        n_sites += count
        for iso in reg.lookup(element):
            if iso.spin_I <= 0 or iso.abundance <= 0:
                continue
            n_i = count / volume_cm3 * iso.abundance
            densities[iso.name] = n_i
            isotopes[iso.name] = iso
            totals[element] = totals.get(element, 0.0) + n_i
    return SpinDensityReport(
        densities=densities,
        element_totals=totals,
        site_density=n_sites / volume_cm3,
        volume_cm3=volume_cm3,
        convention=convention,
        isotopes=isotopes,
    )
