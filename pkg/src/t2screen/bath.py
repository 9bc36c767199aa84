"""Stochastic nuclear spin baths: isotope assignment, cutoffs, qubit placement.

Isotope draws use a counter-based hash RNG keyed on (seed, cell image, basis
index), so a bath is a pure function of (structure, qubit site, r_bath, seed)
and does not depend on supercell enumeration order or worker layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crystal import CrystalStructure, SupercellAtoms, supercell
from .elements import atomic_number
from .errors import OverlapError
from .isotopes import IsotopeRegistry, IsotopeSpecies, default_registry

STACK_MIN_DISTANCE = 0.3  # A; de-duplication guard when merging baths


@dataclass(frozen=True)
class BathSpin:
    isotope: IsotopeSpecies
    position: np.ndarray  # cartesian A, qubit at origin

    def __post_init__(self):
        if self.isotope.spin_I <= 0:
            raise ValueError("bath spins must have nonzero nuclear spin")
        pos = np.asarray(self.position, dtype=float).reshape(3).copy()
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class SpinBath:
    spins: tuple[BathSpin, ...]
    seed: int
    r_bath: float
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.spins)

    def positions(self) -> np.ndarray:
        if not self.spins:
            return np.zeros((0, 3))
        return np.array([s.position for s in self.spins])

    def species_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.spins:
            counts[s.isotope.name] = counts.get(s.isotope.name, 0) + 1
        return counts

    def restricted_to_element(self, element: str) -> "SpinBath":
        kept = tuple(s for s in self.spins if s.isotope.element == element)
        return SpinBath(kept, self.seed, self.r_bath, self.source_id)


# -- counter-based RNG -------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64."""
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, images: np.ndarray, basis_indices: np.ndarray) -> np.ndarray:
    """Deterministic uniforms in [0, 1), one per site identity."""
    with np.errstate(over="ignore"):
        k = _mix(np.full(len(basis_indices), np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        for column in (images[:, 0], images[:, 1], images[:, 2], basis_indices):
            k = _mix(k ^ column.astype(np.int64).view(np.uint64))
    return (k >> np.uint64(11)).astype(np.float64) * 2.0**-53


def default_qubit_site(structure: CrystalStructure) -> int:
    """Site index of the model defect: highest-Z element nearest the cell center.

    For 2D structures the reference point is the geometric center of the slab;
    for 3D, the cell center. Deterministic tie-break on site index.
    """
    cart = structure.cart_coords()
    numbers = np.array([atomic_number(e) for e in structure.elements()])
    z_max = numbers.max()
    candidates = np.nonzero(numbers == z_max)[0]
    if structure.dimensionality == "2D":
        k = structure.lattice.normal_axis
        axes = [i for i in range(3) if i != k]
        normal = structure.lattice.vectors[k] / np.linalg.norm(structure.lattice.vectors[k])
        center = structure.lattice.vectors[axes].sum(axis=0) / 2.0 + normal * np.mean(cart @ normal)
    else:
        center = structure.lattice.vectors.sum(axis=0) / 2.0
    dist = np.linalg.norm(cart[candidates] - center, axis=1)
    return int(candidates[np.argmin(dist)])


def generate_bath(
    structure: CrystalStructure,
    qubit_position,
    r_bath: float,
    seed: int,
    registry: IsotopeRegistry | None = None,
    vacate_qubit_site: bool = True,
) -> SpinBath:
    """Draw one concrete bath realization around the qubit.

    Every atomic site within ``r_bath`` of the qubit receives one isotope of
    its element, drawn from the natural-abundance distribution; spinless draws
    are discarded. The qubit's own site is vacated (the defect replaces the
    atom there).
    """
    reg = registry if registry is not None else default_registry()
    qubit_position = np.asarray(qubit_position, dtype=float).reshape(3)
    atoms: SupercellAtoms = supercell(structure, r_bath, qubit_position)
    u = site_uniforms(seed, atoms.images, atoms.basis_indices)

    positions = atoms.positions - qubit_position
    keep = np.ones(len(atoms), dtype=bool)
    if vacate_qubit_site:
        keep = np.linalg.norm(positions, axis=1) >= 1e-6

    elements = np.array(atoms.elements)
    picked: list[tuple[int, BathSpin]] = []
    for element in sorted(set(atoms.elements)):
        isos = reg.lookup(element)
        edges = np.cumsum([i.abundance for i in isos])
        sel = np.nonzero((elements == element) & keep)[0]
        draw = np.minimum(
            np.searchsorted(edges, u[sel], side="right"), len(isos) - 1
        )
        for k, iso in enumerate(isos):
            if iso.spin_I <= 0:
                continue
            for i in sel[draw == k]:
                picked.append((int(i), BathSpin(iso, positions[i])))
    picked.sort(key=lambda item: item[0])  # stable enumeration order
    return SpinBath(
        spins=tuple(spin for _, spin in picked),
        seed=seed,
        r_bath=r_bath,
        source_id=structure.metadata.source_id,
    )


def stack_baths(host_bath: SpinBath, substrate_bath: SpinBath) -> SpinBath:
    """Concatenate two baths expressed in the same frame, guarding overlaps."""
    combined = host_bath.spins + substrate_bath.spins
    if host_bath.spins and substrate_bath.spins:
        a = host_bath.positions()
        b = substrate_bath.positions()
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        dmin = float(np.sqrt(d2.min()))
        if dmin < STACK_MIN_DISTANCE:
            raise OverlapError(
                f"stacked baths have spins {dmin:.3f} A apart "
                f"(< {STACK_MIN_DISTANCE} A): mis-stacked geometry"
            )
    return SpinBath(
        spins=combined,
        seed=host_bath.seed,
        r_bath=max(host_bath.r_bath, substrate_bath.r_bath),
        source_id=host_bath.source_id or substrate_bath.source_id,
    )


# -- audit serialization -----------------------------------------------------


def write_bath_jsonl(bath: SpinBath, path):
    """One spin per line: {"isotope", "element", "position"}; header first."""
    path = Path(path)
    with path.open("w") as fh:
        header = {
            "seed": bath.seed,
            "r_bath": bath.r_bath,
            "source_id": bath.source_id,
            "n_spins": len(bath),
        }
        fh.write(json.dumps({"header": header}) + "\n")
        for s in bath.spins:
            fh.write(
                json.dumps(
                    {
                        "isotope": s.isotope.name,
                        "element": s.isotope.element,
                        "position": [round(x, 8) for x in s.position.tolist()],
                    }
                )
                + "\n"
            )


def read_bath_jsonl(path, registry: IsotopeRegistry | None = None) -> SpinBath:
    reg = registry if registry is not None else default_registry()
    path = Path(path)
    spins = []
    header = {}
    with path.open() as fh:
        for ln in fh:
            doc = json.loads(ln)
            if "header" in doc:
                header = doc["header"]
                continue
            element = doc["element"]
            iso = next(i for i in reg.lookup(element) if i.name == doc["isotope"])
            spins.append(BathSpin(iso, np.array(doc["position"])))
    return SpinBath(
        spins=tuple(spins),
        seed=int(header.get("seed", 0)),
        r_bath=float(header.get("r_bath", 0.0)),
        source_id=str(header.get("source_id", "")),
    )
