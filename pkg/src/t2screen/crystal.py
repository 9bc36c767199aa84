"""Crystal structures: data model, file ingestion, supercell tiling, slab geometry.

Structures are immutable after construction and safe to share across workers.
Three file formats are supported: a native structure-JSON (self-describing,
including 2D periodicity), a POSCAR-like plain-text format (3D unless the
comment line contains a ``2D`` token), and a minimal P1 CIF subset (always 3D;
cell parameters plus an atom_site loop, no symmetry expansion).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .elements import check_element
from .errors import (
    DegenerateLatticeError,
    MisconfigurationError,
    MissingDataError,
    ParseError,
)

DUPLICATE_TOL = 0.01  # A; structure-file precision
MIN_SITE_DISTANCE = 0.5  # A; distinct-atom sanity bound
SUPERCELL_HARD_CAP = 10**7


@dataclass(frozen=True)
class Lattice:
    """Periodic cell: row vectors in Angstrom plus per-axis periodicity flags."""

    vectors: np.ndarray
    periodic: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float).reshape(3, 3).copy()
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        n_periodic = sum(self.periodic)
        if n_periodic not in (2, 3):
            raise DegenerateLatticeError(
                f"need 2 or 3 periodic axes, got flags {self.periodic}"
            )
        if abs(self.volume) <= 1e-6:
            raise DegenerateLatticeError(
                f"degenerate lattice (volume {self.volume:.3e} A^3)"
            )
        if n_periodic == 2:
            k = self.normal_axis
            for i in range(3):
                if i != k and abs(vectors[k] @ vectors[i]) > 1e-8 * np.linalg.norm(
                    vectors[k]
                ) * np.linalg.norm(vectors[i]):
                    raise DegenerateLatticeError(
                        "out-of-plane vector must be orthogonal to in-plane vectors"
                    )
            if self.inplane_area <= 0:
                raise DegenerateLatticeError("non-positive in-plane area")

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.vectors))

    @property
    def normal_axis(self) -> int:
        """Index of the non-periodic axis (2D lattices only)."""
        if all(self.periodic):
            raise ValueError("3D lattice has no out-of-plane axis")
        return self.periodic.index(False)

    @property
    def inplane_area(self) -> float:
        i, j = [k for k in range(3) if k != self.normal_axis]
        return float(np.linalg.norm(np.cross(self.vectors[i], self.vectors[j])))


@dataclass(frozen=True)
class Site:
    element: str
    frac: np.ndarray

    def __post_init__(self):
        check_element(self.element)
        frac = np.asarray(self.frac, dtype=float).reshape(3) % 1.0
        frac[frac >= 1.0] = 0.0  # 0.9999999999 rounding back into [0,1)
        frac.setflags(write=False)
        object.__setattr__(self, "frac", frac)


@dataclass(frozen=True)
class StructureMetadata:
    band_gap_eV: float | None = None
    binding_energy_meV_per_A2: float | None = None
    hydrated: bool = False
    source_id: str = ""

    def to_dict(self) -> dict:
        return {
            "band_gap_eV": self.band_gap_eV,
            "binding_energy_meV_per_A2": self.binding_energy_meV_per_A2,
            "hydrated": self.hydrated,
            "source_id": self.source_id,
        }


@dataclass(frozen=True)
class SlabGeometry:
    """2D-layer extent: atomic z-range padded by one vdW radius per face."""

    thickness_w_cm: float
    z_min: float
    z_max: float
    top_species: str
    bottom_species: str

    def __post_init__(self):
        if self.thickness_w_cm <= 0:
            raise ValueError("thickness must be positive")
        if self.z_max < self.z_min:
            raise ValueError("z_max < z_min")


@dataclass(frozen=True)
class CrystalStructure:
    lattice: Lattice
    sites: tuple[Site, ...]
    dimensionality: str  # "2D" | "3D"
    metadata: StructureMetadata = field(default_factory=StructureMetadata)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise ParseError("structure has no sites")
        if self.dimensionality not in ("2D", "3D"):
            raise ParseError(f"dimensionality must be 2D or 3D, got {self.dimensionality!r}")
        n_periodic = sum(self.lattice.periodic)
        if (self.dimensionality == "3D") != (n_periodic == 3):
            raise ParseError(
                f"dimensionality {self.dimensionality} inconsistent with "
                f"periodicity flags {self.lattice.periodic}"
            )
        dmin = _min_site_distance(self.lattice, self.frac_coords())
        if dmin < MIN_SITE_DISTANCE:
            raise ParseError(
                f"sites closer than {MIN_SITE_DISTANCE} A (min distance {dmin:.3f} A)"
            )

    def frac_coords(self) -> np.ndarray:
        return np.array([s.frac for s in self.sites])

    def cart_coords(self) -> np.ndarray:
        return self.frac_coords() @ self.lattice.vectors

    def elements(self) -> list[str]:
        return [s.element for s in self.sites]

    def composition(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.sites:
            counts[s.element] = counts.get(s.element, 0) + 1
        return counts


@dataclass(frozen=True)
class SupercellAtoms:
    """Periodic images within a cutoff sphere, with stable per-site identities.

    ``images`` holds the integer cell offsets and ``basis_indices`` the index of
    the originating site in the unit cell; together they key the deterministic
    isotope assignment so bath realizations do not depend on enumeration order.
    """

    elements: tuple[str, ...]
    positions: np.ndarray  # (N, 3) cartesian A
    images: np.ndarray  # (N, 3) int cell offsets
    basis_indices: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return zip(self.elements, self.positions)


def _pairwise_image_shifts(lattice: Lattice) -> np.ndarray:
    rng = [(-1, 0, 1) if p else (0,) for p in lattice.periodic]
    return np.array([(i, j, k) for i in rng[0] for j in rng[1] for k in rng[2]], dtype=float)


def _min_site_distance(lattice: Lattice, frac: np.ndarray) -> float:
    if len(frac) == 1 and all(lattice.periodic):
        # lone site: nearest periodic self-image
        shifts = _pairwise_image_shifts(lattice)
        shifts = shifts[np.any(shifts != 0, axis=1)]
        return float(np.linalg.norm(shifts @ lattice.vectors, axis=1).min())
    cart = frac @ lattice.vectors
    shifts = _pairwise_image_shifts(lattice) @ lattice.vectors
    dmin = math.inf
    for shift in shifts:
        delta = cart[:, None, :] - (cart + shift)[None, :, :]
        dist = np.linalg.norm(delta, axis=-1)
        if np.allclose(shift, 0):
            np.fill_diagonal(dist, math.inf)
        dmin = min(dmin, float(dist.min()))
    return dmin


def _collapse_duplicates(lattice: Lattice, elements: list[str], frac: np.ndarray):
    """Drop sites that coincide with an earlier site under periodic images."""
    keep: list[int] = []
    kept_cart: list[np.ndarray] = []
    shifts = _pairwise_image_shifts(lattice) @ lattice.vectors
    cart = frac @ lattice.vectors
    for i in range(len(frac)):
        dup = False
        for j, cj in enumerate(kept_cart):
            d = np.linalg.norm(cart[i] - (cj + shifts), axis=1).min()
            if d < DUPLICATE_TOL:
                if elements[keep[j]] != elements[i]:
                    raise ParseError(
                        f"coincident sites with different elements: "
                        f"{elements[keep[j]]} / {elements[i]}"
                    )
                dup = True
                break
        if not dup:
            keep.append(i)
            kept_cart.append(cart[i])
    return [elements[i] for i in keep], frac[keep]


def _normalize_handedness(vectors: np.ndarray, frac: np.ndarray):
    if np.linalg.det(vectors) < 0:
        vectors = vectors.copy()
        vectors[2] = -vectors[2]
        frac = frac.copy()
        frac[:, 2] = -frac[:, 2]
    return vectors, frac


def _build(vectors, periodic, elements, frac, dimensionality, metadata) -> CrystalStructure:
    vectors = np.asarray(vectors, dtype=float)
    if np.abs(np.linalg.det(vectors)) <= 1e-6:
        raise DegenerateLatticeError(
            f"degenerate lattice (volume {np.linalg.det(vectors):.3e} A^3)"
        )
    frac = np.asarray(frac, dtype=float) % 1.0
    vectors, frac = _normalize_handedness(vectors, frac)
    lattice = Lattice(vectors, tuple(periodic))
    elements, frac = _collapse_duplicates(lattice, list(elements), frac)
    sites = tuple(Site(e, f) for e, f in zip(elements, frac))
    return CrystalStructure(lattice, sites, dimensionality, metadata)


# ---------------------------------------------------------------------------
# parsing / serialization


def parse_structure(path, fmt: str | None = None) -> CrystalStructure:
    """Read a structure file.

    ``fmt`` is one of ``structure-json``, ``poscar-like``, ``cif-subset``;
    when omitted it is inferred from the file extension (.json / .cif /
    anything else -> poscar-like).
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    if fmt is None:
        ext = path.suffix.lower()
        fmt = {"": "poscar-like", ".json": "structure-json", ".cif": "cif-subset"}.get(
            ext, "poscar-like"
        )
    text = path.read_text()
    if fmt == "structure-json":
        return structure_from_dict(_load_json(text, path))
    if fmt == "poscar-like":
        return _parse_poscar(text, path)
    if fmt == "cif-subset":
        return _parse_cif(text, path)
    raise ParseError(f"unknown format {fmt!r}")


def _load_json(text: str, path) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc


def structure_from_dict(doc: dict) -> CrystalStructure:
    try:
        lat = doc["lattice"]
        vectors = lat["vectors"]
        periodic = lat.get("periodic", [True, True, True])
        sites = doc["sites"]
        dim = doc.get("dimensionality") or ("3D" if all(periodic) else "2D")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"structure-json missing field: {exc}") from exc
    elements = []
    frac = []
    for i, s in enumerate(sites):
        try:
            elements.append(s["element"])
            frac.append(s["frac"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"site {i}: missing field {exc}") from exc
    md = doc.get("metadata", {})
    metadata = StructureMetadata(
        band_gap_eV=md.get("band_gap_eV"),
        binding_energy_meV_per_A2=md.get("binding_energy_meV_per_A2"),
        hydrated=bool(md.get("hydrated", False)),
        source_id=str(md.get("source_id", "")),
    )
    return _build(vectors, periodic, elements, frac, dim, metadata)


def structure_to_dict(structure: CrystalStructure) -> dict:
    return {
        "lattice": {
            "vectors": structure.lattice.vectors.tolist(),
            "periodic": list(structure.lattice.periodic),
        },
        "dimensionality": structure.dimensionality,
        "sites": [
            {"element": s.element, "frac": s.frac.tolist()} for s in structure.sites
        ],
        "metadata": structure.metadata.to_dict(),
    }


def write_structure(structure: CrystalStructure, path, fmt: str = "structure-json"):
    path = Path(path)
    if fmt == "structure-json":
        path.write_text(json.dumps(structure_to_dict(structure), indent=1))
    elif fmt == "poscar-like":
        path.write_text(_format_poscar(structure))
    else:
        raise ParseError(f"unsupported output format {fmt!r}")


def _parse_poscar(text: str, path) -> CrystalStructure:
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 8:
        raise ParseError(f"{path}: truncated POSCAR-like file")
    comment = lines[0]
    try:
        scale = float(lines[1])
        vectors = np.array([[float(x) for x in lines[2 + i].split()[:3]] for i in range(3)])
    except ValueError as exc:
        raise ParseError(f"{path}: bad lattice block ({exc})") from exc
    vectors = vectors * scale
    symbols = lines[5].split()
    try:
        counts = [int(x) for x in lines[6].split()]
    except ValueError as exc:
        raise ParseError(f"{path}: bad counts line {lines[6]!r}") from exc
    if len(symbols) != len(counts):
        raise ParseError(f"{path}: {len(symbols)} symbols vs {len(counts)} counts")
    mode = lines[7].strip().lower()
    if mode[:1] not in ("d", "c", "k"):
        raise ParseError(f"{path}: coordinate mode must be Direct or Cartesian, got {lines[7]!r}")
    cartesian = mode[:1] in ("c", "k")
    n_atoms = sum(counts)
    coord_lines = lines[8 : 8 + n_atoms]
    if len(coord_lines) < n_atoms:
        raise ParseError(f"{path}: expected {n_atoms} coordinate lines, found {len(coord_lines)}")
    coords = []
    for i, ln in enumerate(coord_lines):
        try:
            coords.append([float(x) for x in ln.split()[:3]])
        except ValueError as exc:
            raise ParseError(f"{path}: bad coordinate line {8 + i + 1}: {ln!r}") from exc
    coords = np.array(coords)
    if cartesian:
        coords = (coords * scale) @ np.linalg.inv(vectors)
    elements = [sym for sym, cnt in zip(symbols, counts) for _ in range(cnt)]
    is_2d = "2d" in comment.lower().split()
    periodic = (True, True, False) if is_2d else (True, True, True)
    return _build(vectors, periodic, elements, coords, "2D" if is_2d else "3D",
                  StructureMetadata(source_id=comment.strip()))


def _format_poscar(structure: CrystalStructure) -> str:
    comp = structure.composition()
    tag = " 2D" if structure.dimensionality == "2D" else ""
    out = [structure.metadata.source_id + tag, "1.0"]
    for v in structure.lattice.vectors:
        out.append("  " + "  ".join(f"{x:.10f}" for x in v))
    out.append("  " + "  ".join(comp))
    out.append("  " + "  ".join(str(n) for n in comp.values()))
    out.append("Direct")
    for el in comp:
        for s in structure.sites:
            if s.element == el:
                out.append("  " + "  ".join(f"{x:.10f}" for x in s.frac))
    return "\n".join(out) + "\n"


def _parse_cif(text: str, path) -> CrystalStructure:
    """Minimal P1 CIF: cell parameters + atom_site loop, no symmetry."""
    cell = {}
    lines = text.splitlines()
    for ln in lines:
        parts = ln.split()
        if len(parts) >= 2 and parts[0].startswith("_cell_"):
            try:
                cell[parts[0]] = float(parts[1].split("(")[0])
            except ValueError as exc:
                raise ParseError(f"{path}: bad cell value in {ln!r}") from exc
    needed = [
        "_cell_length_a", "_cell_length_b", "_cell_length_c",
        "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma",
    ]
    missing = [k for k in needed if k not in cell]
    if missing:
        raise ParseError(f"{path}: missing cell fields {missing}")
    vectors = _cell_from_parameters(
        cell["_cell_length_a"], cell["_cell_length_b"], cell["_cell_length_c"],
        cell["_cell_angle_alpha"], cell["_cell_angle_beta"], cell["_cell_angle_gamma"],
    )
    # locate the atom_site loop
    elements, frac = [], []
    i = 0
    while i < len(lines):
        if lines[i].strip().lower() == "loop_":
            headers = []
            j = i + 1
            while j < len(lines) and lines[j].strip().startswith("_"):
                headers.append(lines[j].strip().lower())
                j += 1
            if any(h.startswith("_atom_site_fract_x") for h in headers):
                cols = {h: k for k, h in enumerate(headers)}
                sym_col = cols.get("_atom_site_type_symbol", cols.get("_atom_site_label"))
                if sym_col is None:
                    raise ParseError(f"{path}: atom_site loop lacks a symbol/label column")
                while j < len(lines):
                    row = lines[j].split()
                    if not row or row[0].startswith(("_", "loop_", "data_", "#")):
                        break
                    if len(row) < len(headers):
                        raise ParseError(f"{path}: short atom_site row at line {j + 1}")
                    raw = row[sym_col]
                    sym = "".join(c for c in raw if c.isalpha())
                    sym = sym[:2].capitalize() if len(sym) > 1 and raw[:2].isalpha() else sym[:1].upper()
                    try:
                        xyz = [
                            float(row[cols[f"_atom_site_fract_{ax}"]].split("(")[0])
                            for ax in "xyz"
                        ]
                    except (KeyError, ValueError) as exc:
                        raise ParseError(f"{path}: bad atom_site row at line {j + 1}") from exc
                    # prefer the exact symbol if the raw token already is one
                    elements.append(raw if raw[0].isupper() and raw.isalpha() and len(raw) <= 2 else sym)
                    frac.append(xyz)
                    j += 1
            i = j
        else:
            i += 1
    if not elements:
        raise ParseError(f"{path}: no atom_site loop found")
    return _build(vectors, (True, True, True), elements, frac, "3D",
                  StructureMetadata(source_id=path.stem if hasattr(path, "stem") else ""))


def _cell_from_parameters(a, b, c, alpha, beta, gamma) -> np.ndarray:
    al, be, ga = (math.radians(x) for x in (alpha, beta, gamma))
    v1 = [a, 0.0, 0.0]
    v2 = [b * math.cos(ga), b * math.sin(ga), 0.0]
    cx = c * math.cos(be)
    cy = c * (math.cos(al) - math.cos(be) * math.cos(ga)) / math.sin(ga)
    cz2 = c * c - cx * cx - cy * cy
    if cz2 <= 0:
        raise DegenerateLatticeError("inconsistent cell angles")
    return np.array([v1, v2, [cx, cy, math.sqrt(cz2)]])


# ---------------------------------------------------------------------------
# supercell tiling


def supercell(
    structure: CrystalStructure,
    radius: float,
    center,
    hard_cap: int = SUPERCELL_HARD_CAP,
) -> SupercellAtoms:
    """All periodic images of all sites within ``radius`` of ``center``.

    2D structures are tiled only along their periodic axes.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float).reshape(3)
    A = structure.lattice.vectors
    inv_A = np.linalg.inv(A)
    f_center = center @ inv_A
    ranges = []
    for axis in range(3):
        if not structure.lattice.periodic[axis]:
            ranges.append(np.array([0]))
            continue
        margin = radius * float(np.linalg.norm(inv_A[:, axis]))
        lo = math.floor(f_center[axis] - margin - 1.0)
        hi = math.ceil(f_center[axis] + margin)
        ranges.append(np.arange(lo, hi + 1))
    n_boxes = len(ranges[0]) * len(ranges[1]) * len(ranges[2])
    n_sites = len(structure.sites)
    if n_boxes * n_sites > hard_cap:
        raise MisconfigurationError(
            f"supercell would enumerate {n_boxes * n_sites:.2e} sites "
            f"(cap {hard_cap:.0e}); radius {radius} A is likely misconfigured"
        )
    offsets = np.stack(
        np.meshgrid(ranges[0], ranges[1], ranges[2], indexing="ij"), axis=-1
    ).reshape(-1, 3)
    frac = structure.frac_coords()
    pos = (frac[None, :, :] + offsets[:, None, :].astype(float)) @ A  # (M, Nb, 3)
    dist2 = np.sum((pos - center) ** 2, axis=-1)
    keep = dist2 <= radius * radius
    box_idx, site_idx = np.nonzero(keep)
    elements = tuple(structure.sites[i].element for i in site_idx)
    return SupercellAtoms(
        elements=elements,
        positions=pos[keep],
        images=offsets[box_idx].astype(np.int64),
        basis_indices=site_idx.astype(np.int64),
    )


# ---------------------------------------------------------------------------
# slab geometry / vdW radii


def load_vdw_radii(path=None) -> dict[str, float]:
    if path is None:
        text = resources.files("t2screen.data").joinpath("vdw_radii.txt").read_text()
    else:
        text = Path(path).read_text()
    table = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        sym, r = ln.split()[:2]
        table[check_element(sym)] = float(r)
    return table


def _face_species(elements, z, z_ref, radii, tol=0.1) -> str:
    """Species defining a face: largest vdW radius among atoms at the face."""
    at_face = {elements[i] for i in range(len(elements)) if abs(z[i] - z_ref) <= tol}
    for el in at_face:
        if el not in radii:
            raise MissingDataError(f"no vdW radius for element {el}")
    return max(at_face, key=lambda el: radii[el])


def slab_geometry(structure: CrystalStructure, radius_table: dict[str, float] | None = None) -> SlabGeometry:
    """Thickness of a 2D layer: atomic z-extent plus one vdW radius per face."""
    if structure.dimensionality != "2D":
        raise ValueError("slab geometry is defined for 2D structures only")
    radii = radius_table if radius_table is not None else load_vdw_radii()
    k = structure.lattice.normal_axis
    normal = structure.lattice.vectors[k]
    normal = normal / np.linalg.norm(normal)
    z = structure.cart_coords() @ normal
    elements = structure.elements()
    for el in set(elements):
        if el not in radii:
            raise MissingDataError(f"no vdW radius for element {el}")
    z_min, z_max = float(z.min()), float(z.max())
    top = _face_species(elements, z, z_max, radii)
    bottom = _face_species(elements, z, z_min, radii)
    thickness_A = (z_max - z_min) + radii[top] + radii[bottom]
    return SlabGeometry(
        thickness_w_cm=thickness_A * 1e-8,
        z_min=z_min,
        z_max=z_max,
        top_species=top,
        bottom_species=bottom,
    )
