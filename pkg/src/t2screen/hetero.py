"""Lattice-commensurate heterostructures: surface cells, superlattice matching,
slab cleavage and vdW-gap stacking.

Matching enumerates integer superlattices of the two surface cells (Hermite
normal form, exhaustive up to max_area), planar-reduces each candidate and
accepts a pair when the substrate supercell can be reached from the layer
supercell with principal strains within tolerance. Strain is carried entirely
by the 2D layer; the substrate is rigid and interfaces are not relaxed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .crystal import (
    CrystalStructure,
    Lattice,
    Site,
    StructureMetadata,
    load_vdw_radii,
)
from .errors import MissingDataError, OverlapError, T2ScreenError

MIN_ATOM_DISTANCE = 0.5  # A
FACE_TOL = 0.1  # A; atoms within this of the extremal plane define the face


@dataclass(frozen=True)
class SurfaceCell:
    """In-plane 2x2 cell (rows = vectors, A) of a layer or a cleaved slab."""

    matrix: np.ndarray
    source: CrystalStructure
    miller: tuple[int, int, int] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(2, 2).copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if abs(np.linalg.det(m)) < 1e-9:
            raise T2ScreenError("degenerate surface cell")

    @property
    def area(self) -> float:
        return abs(float(np.linalg.det(self.matrix)))

    @classmethod
    def from_structure(cls, structure: CrystalStructure, miller=None) -> "SurfaceCell":
        if structure.dimensionality != "2D":
            raise T2ScreenError("surface cell requires a 2D structure or cleaved slab")
        k = structure.lattice.normal_axis
        axes = [i for i in range(3) if i != k]
        vecs = structure.lattice.vectors[axes]
        # project into the plane coordinate system (vectors are in-plane by
        # the 2D lattice invariant, so the 3D->2D projection is exact)
        e1 = vecs[0] / np.linalg.norm(vecs[0])
        normal = structure.lattice.vectors[k] / np.linalg.norm(structure.lattice.vectors[k])
        e2 = np.cross(normal, e1)
        m = np.array([[vecs[0] @ e1, vecs[0] @ e2], [vecs[1] @ e1, vecs[1] @ e2]])
        return cls(m, structure, miller)


@dataclass(frozen=True)
class MatchResult:
    m_2d: np.ndarray  # integer 2x2, det > 0
    m_sub: np.ndarray
    strain: tuple[float, float, float]  # (eps_xx, eps_yy, eps_xy) on the layer
    max_principal_strain: float
    area: float  # matched supercell area (substrate frame), A^2
    atom_count: int
    reduced_2d: np.ndarray  # reduced, strained layer supercell == reduced substrate
    reduced_sub: np.ndarray

    def sort_key(self):
        return (
            round(self.area, 6),
            round(self.max_principal_strain, 9),
            self.m_2d.flatten().tolist(),
            self.m_sub.flatten().tolist(),
        )


@dataclass(frozen=True)
class Heterostructure:
    structure: CrystalStructure
    interlayer_gap: float  # A, vertical separation of the facing atomic planes
    host_id: str
    substrate_id: str
    facet: tuple[int, int, int] | None
    match: MatchResult
    qubit_site_index: int  # host qubit site in the combined structure


# ---------------------------------------------------------------------------
# planar reduction and strain


def reduce_cell(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Planar (Lagrange) reduction of a 2x2 row-vector cell.

    Returns (reduced, T) with reduced = T @ matrix, T integer unimodular,
    |a| <= |b|, -|a|^2/2 < a.b <= |a|^2/2, and right-handed (det > 0).
    Boundary ties (|a.b| = |a|^2/2 exactly, e.g. hexagonal cells) are
    tolerance-guarded so float roundoff cannot ping-pong the loop.
    """
    m = np.asarray(matrix, dtype=float).reshape(2, 2)
    t = np.eye(2, dtype=np.int64)
    eps = 1e-12
    for _ in range(200):
        a, b = m[0], m[1]
        if a @ a > (b @ b) * (1.0 + eps):
            m = np.array([b, a])
            t = np.array([[0, 1], [1, 0]], dtype=np.int64) @ t
            continue
        ratio = (a @ b) / (a @ a)
        if abs(ratio) <= 0.5 + eps:
            break
        k = round(ratio)
        m = np.array([a, b - k * a])
        t = np.array([[1, 0], [-k, 1]], dtype=np.int64) @ t
    else:
        raise T2ScreenError("planar reduction did not converge")
    if np.linalg.det(m) < 0:
        m = np.array([m[0], -m[1]])
        t = np.array([[1, 0], [0, -1]], dtype=np.int64) @ t
    a, b = m[0], m[1]
    if a @ b <= -(a @ a) / 2.0 + eps * (a @ a):
        # move the -1/2 boundary representative to +1/2 (same lattice, same
        # handedness, same norms)
        m = np.array([a, b + a])
        t = np.array([[1, 0], [1, 1]], dtype=np.int64) @ t
    return m, t


def _hnf_matrices(n: int) -> list[np.ndarray]:
    """All Hermite-normal-form 2x2 integer matrices of determinant n."""
    out = []
    for i in range(1, n + 1):
        if n % i:
            continue
        m = n // i
        for j in range(m):
            out.append(np.array([[i, j], [0, m]], dtype=np.int64))
    return out


def strain_between(host_cell: np.ndarray, target_cell: np.ndarray):
    """Stretch mapping host -> target up to rotation (polar decomposition).

    Returns (U, principal_strains) with R @ U @ host^T = target^T.
    """
    f = target_cell.T @ np.linalg.inv(host_cell.T)
    u2 = f.T @ f
    vals, vecs = np.linalg.eigh(u2)
    u = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    principal = np.sqrt(vals) - 1.0
    return u, principal


def zur_mcgill_match(
    cell_2d: SurfaceCell,
    cell_sub: SurfaceCell,
    strain_tol: float = 0.05,
    max_area: float = 500.0,
) -> list[MatchResult]:
    """Commensurate superlattice pairs with layer strain within tolerance.

    Exhaustive over integer sublattices with supercell areas <= max_area;
    an empty list means no match within bounds (not an error).
    """
    area_h = cell_2d.area
    area_s = cell_sub.area
    n_h_max = int(max_area / area_h)
    n_s_max = int(max_area / area_s)
    area_band = (1.0 + strain_tol) ** 2 - 1.0 + 1e-9
    n_host_sites = len(cell_2d.source.sites)
    n_sub_sites = len(cell_sub.source.sites)

    results: dict[tuple, MatchResult] = {}
    for n_h in range(1, n_h_max + 1):
        for n_s in range(1, n_s_max + 1):
            ratio = (n_s * area_s) / (n_h * area_h)
            if abs(ratio - 1.0) > area_band:
                continue
            for m_h in _hnf_matrices(n_h):
                red_h, t_h = reduce_cell(m_h @ cell_2d.matrix)
                for m_s in _hnf_matrices(n_s):
                    red_s, t_s = reduce_cell(m_s @ cell_sub.matrix)
                    u, principal = strain_between(red_h, red_s)
                    max_strain = float(np.max(np.abs(principal)))
                    if max_strain > strain_tol:
                        continue
                    eps = u - np.eye(2)
                    strain = (float(eps[0, 0]), float(eps[1, 1]), float(2 * eps[0, 1]))
                    key = (
                        n_h,
                        n_s,
                        tuple(np.round(np.array(strain), 8)),
                        tuple(np.round(red_h.flatten(), 6)),
                        tuple(np.round(red_s.flatten(), 6)),
                    )
                    if key in results:
                        continue
                    results[key] = MatchResult(
                        m_2d=(t_h @ m_h).astype(np.int64),
                        m_sub=(t_s @ m_s).astype(np.int64),
                        strain=strain,
                        max_principal_strain=max_strain,
                        area=abs(float(np.linalg.det(red_s))),
                        atom_count=n_h * n_host_sites + n_s * n_sub_sites,
                        reduced_2d=red_h,
                        reduced_sub=red_s,
                    )
    out = sorted(results.values(), key=MatchResult.sort_key)
    # normalize determinant sign (reduction keeps det > 0 already)
    for r in out:
        assert np.linalg.det(r.m_2d) != 0 and np.linalg.det(r.m_sub) != 0
    return out


# ---------------------------------------------------------------------------
# slab cleavage


def _integer_plane_basis(hkl: tuple[int, int, int], vectors: np.ndarray):
    """Two shortest in-plane integer vectors and a completing integer vector."""
    h = np.array(hkl, dtype=np.int64)
    g = math.gcd(math.gcd(abs(int(h[0])), abs(int(h[1]))), abs(int(h[2])))
    if g == 0:
        raise T2ScreenError("Miller indices must not be (0,0,0)")
    h = h // g
    rng = range(-3 - int(np.max(np.abs(h))), 4 + int(np.max(np.abs(h))))
    in_plane = []
    completing = []
    for n in (np.array(v) for v in itertools.product(rng, rng, rng)):
        if not n.any():
            continue
        dot = int(n @ h)
        length = float(np.linalg.norm(n @ vectors))
        if dot == 0:
            in_plane.append((length, tuple(n)))
        elif dot == 1:
            completing.append((length, tuple(n)))
    in_plane.sort()
    v1 = np.array(in_plane[0][1])
    v2 = None
    for _, n in in_plane[1:]:
        n = np.array(n)
        if np.linalg.norm(np.cross(v1.astype(float), n.astype(float))) > 1e-9:
            v2 = n
            break
    if v2 is None or not completing:
        raise T2ScreenError(f"could not build a plane basis for {hkl}")
    completing.sort()
    v3 = np.array(completing[0][1])
    cell = np.array([v1, v2, v3], dtype=np.int64)
    if round(np.linalg.det(cell)) == -1:
        cell[1] = -cell[1]
    assert round(np.linalg.det(cell)) == 1
    return cell


def cleave(
    substrate: CrystalStructure,
    miller: tuple[int, int, int],
    slab_thickness: float,
    vacuum: float = 20.0,
) -> CrystalStructure:
    """Cut a 2D-periodic slab of >= slab_thickness along a crystal plane.

    The in-plane cell uses the shortest integer combinations of the *given*
    P1 cell vectors lying in the plane (for a conventional rock-salt cell and
    (001) this is the a x a square cell, not the primitive a/sqrt(2) cell).
    Stoichiometry is preserved per repeat; no reconstruction or relaxation.
    """
    if substrate.dimensionality != "3D":
        raise T2ScreenError("cleave expects a 3D structure")
    miller = tuple(int(x) for x in miller)
    if any(x != int(x) for x in miller):
        raise T2ScreenError("Miller indices must be integers")
    c_int = _integer_plane_basis(miller, substrate.lattice.vectors)
    new_vectors = c_int.astype(float) @ substrate.lattice.vectors
    # re-express sites in the new (equivalent) cell
    inv_c = np.linalg.inv(c_int.astype(float))
    frac_new = (substrate.frac_coords() @ inv_c) % 1.0

    normal = np.cross(new_vectors[0], new_vectors[1])
    normal = normal / np.linalg.norm(normal)
    h_repeat = abs(float(new_vectors[2] @ normal))
    n_repeat = int(math.ceil(slab_thickness / h_repeat - 1e-9))
    if n_repeat < 1 or slab_thickness < h_repeat - 1e-9:
        raise T2ScreenError(
            f"slab thickness {slab_thickness} A is below one structural repeat "
            f"({h_repeat:.3f} A)"
        )

    # rotate so the plane lies in xy and the normal along +z
    e1 = new_vectors[0] / np.linalg.norm(new_vectors[0])
    e3 = normal
    e2 = np.cross(e3, e1)
    rot = np.array([e1, e2, e3]).T  # cart @ rot -> plane frame

    a1 = new_vectors[0] @ rot
    a2 = new_vectors[1] @ rot
    a3_skew = new_vectors[2] @ rot
    height = n_repeat * h_repeat
    box_c = height + vacuum

    cart = frac_new @ new_vectors
    positions = []
    elements = []
    for rep in range(n_repeat):
        shift = rep * new_vectors[2]
        for i, site in enumerate(substrate.sites):
            p = (cart[i] + shift) @ rot
            positions.append(p)
            elements.append(site.element)
    positions = np.array(positions)
    z_min = positions[:, 2].min()
    positions[:, 2] += vacuum / 2.0 - z_min
    # wrap in-plane into the slab cell
    cell2 = np.array([a1[:2], a2[:2]])
    frac2 = positions[:, :2] @ np.linalg.inv(cell2) % 1.0
    xy = frac2 @ cell2

    lattice = Lattice(
        np.array([[a1[0], a1[1], 0.0], [a2[0], a2[1], 0.0], [0.0, 0.0, box_c]]),
        periodic=(True, True, False),
    )
    inv3 = np.linalg.inv(lattice.vectors)
    frac3 = np.hstack([xy, positions[:, 2:3]]) @ inv3
    sites = tuple(Site(e, f) for e, f in zip(elements, frac3))
    facet = "".join(str(x) for x in miller)
    md = substrate.metadata
    return CrystalStructure(
        lattice,
        sites,
        "2D",
        StructureMetadata(
            band_gap_eV=md.band_gap_eV,
            binding_energy_meV_per_A2=md.binding_energy_meV_per_A2,
            hydrated=md.hydrated,
            source_id=f"{md.source_id}({facet})x{n_repeat}",
        ),
    )


# ---------------------------------------------------------------------------
# stacking


def _face_info(structure: CrystalStructure, which: str, radii: dict[str, float]):
    """(z_extreme, species) of the top/bottom atomic plane of a 2D structure."""
    k = structure.lattice.normal_axis
    normal = structure.lattice.vectors[k]
    normal = normal / np.linalg.norm(normal)
    z = structure.cart_coords() @ normal
    z_ref = z.max() if which == "top" else z.min()
    face = {
        structure.sites[i].element
        for i in range(len(z))
        if abs(z[i] - z_ref) <= FACE_TOL
    }
    for el in face:
        if el not in radii:
            raise MissingDataError(f"no vdW radius for element {el}")
    species = max(face, key=lambda el: radii[el])
    return float(z_ref), species


def _fill_supercell(frac2: np.ndarray, z: np.ndarray, elements, m: np.ndarray):
    """Replicate 2D-fractional sites into the integer supercell m (det copies)."""
    n_copies = int(round(abs(np.linalg.det(m))))
    inv_m = np.linalg.inv(m.astype(float))
    lim = int(np.abs(m).max()) + 2
    offsets = []
    for i in range(-lim, lim + 1):
        for j in range(-lim, lim + 1):
            f = np.array([i, j], dtype=float) @ inv_m
            if -1e-9 <= f[0] < 1 - 1e-9 and -1e-9 <= f[1] < 1 - 1e-9:
                offsets.append((i, j))
    if len(offsets) != n_copies:
        raise T2ScreenError(
            f"supercell fill found {len(offsets)} offsets, expected {n_copies}"
        )
    frac_out = []
    z_out = []
    el_out = []
    for off in offsets:
        f = (frac2 + np.array(off, dtype=float)) @ inv_m
        frac_out.append(f % 1.0)
        z_out.append(z)
        el_out.extend(elements)
    return np.vstack(frac_out), np.concatenate(z_out), el_out


def _inplane_frac_and_z(structure: CrystalStructure):
    k = structure.lattice.normal_axis
    axes = [i for i in range(3) if i != k]
    frac = structure.frac_coords()
    normal = structure.lattice.vectors[k]
    z = structure.cart_coords() @ (normal / np.linalg.norm(normal))
    return frac[:, axes], z, structure.elements()


def stack(
    host: CrystalStructure,
    substrate_slab: CrystalStructure,
    match: MatchResult,
    radius_table: dict[str, float] | None = None,
    gap_override: float | None = None,
    vacuum: float = 20.0,
    facet: tuple[int, int, int] | None = None,
) -> Heterostructure:
    """Place the strained host layer over the substrate slab at the vdW gap.

    The final in-plane cell is the reduced substrate supercell; host fractional
    coordinates are re-expressed in it, which applies the match strain to the
    host. Lateral registry: host cell origin over substrate cell origin.
    """
    radii = radius_table if radius_table is not None else load_vdw_radii()
    z_sub_top, sub_species = _face_info(substrate_slab, "top", radii)
    z_host_bot, host_species = _face_info(host, "bottom", radii)
    gap = gap_override if gap_override is not None else radii[host_species] + radii[sub_species]

    # reduced supercells in their own frames
    host_cell = SurfaceCell.from_structure(host).matrix
    sub_cell = SurfaceCell.from_structure(substrate_slab).matrix
    red_h, t_h = reduce_cell(match.m_2d @ host_cell)
    red_s, t_s = reduce_cell(match.m_sub @ sub_cell)

    # canonical final frame: substrate reduced cell with a along +x
    a_len = np.linalg.norm(red_s[0])
    e1 = red_s[0] / a_len
    e2 = np.array([-e1[1], e1[0]])
    final_cell = np.array([[a_len, 0.0], [red_s[1] @ e1, red_s[1] @ e2]])

    frac_h, z_h, el_h = _inplane_frac_and_z(host)
    frac_s, z_s, el_s = _inplane_frac_and_z(substrate_slab)
    fh, zh, eh = _fill_supercell(frac_h, z_h, el_h, (t_h @ match.m_2d))
    fs, zs, es = _fill_supercell(frac_s, z_s, el_s, (t_s @ match.m_sub))

    z_host_shift = (z_sub_top + gap) - z_h.min()
    zh = zh + z_host_shift
    z_all = np.concatenate([zs, zh])
    z_floor = z_all.min()
    height = z_all.max() - z_floor
    box_c = height + vacuum

    lattice = Lattice(
        np.array(
            [
                [final_cell[0, 0], final_cell[0, 1], 0.0],
                [final_cell[1, 0], final_cell[1, 1], 0.0],
                [0.0, 0.0, box_c],
            ]
        ),
        periodic=(True, True, False),
    )
    sites = []
    host_start = len(es)
    for f2, z, el in zip(np.vstack([fs, fh]), np.concatenate([zs, zh]), es + eh):
        sites.append(Site(el, (f2[0], f2[1], (z - z_floor + vacuum / 2.0) / box_c)))

    # overlap guard before the structure invariant rejects it less legibly
    cart = np.array([s.frac for s in sites]) @ lattice.vectors
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            shift = i * lattice.vectors[0] + j * lattice.vectors[1]
            if i == 0 and j == 0:
                d, _ = cKDTree(cart).query(cart, k=2)
                dmin = float(d[:, 1].min())
            else:
                d, _ = cKDTree(cart + shift).query(cart, k=1)
                dmin = float(d.min())
            if dmin < MIN_ATOM_DISTANCE:
                raise OverlapError(
                    f"atoms {dmin:.3f} A apart after stacking (< {MIN_ATOM_DISTANCE} A)"
                )

    combined = CrystalStructure(
        lattice,
        tuple(sites),
        "2D",
        StructureMetadata(
            band_gap_eV=host.metadata.band_gap_eV,
            source_id=f"{host.metadata.source_id}_on_{substrate_slab.metadata.source_id}",
        ),
    )
    from .bath import default_qubit_site

    host_only_idx = default_qubit_site(
        CrystalStructure(
            lattice,
            tuple(sites[host_start:]),
            "2D",
            StructureMetadata(source_id="host-part"),
        )
    )
    return Heterostructure(
        structure=combined,
        interlayer_gap=float(gap),
        host_id=host.metadata.source_id,
        substrate_id=substrate_slab.metadata.source_id,
        facet=facet,
        match=match,
        qubit_site_index=host_start + host_only_idx,
    )


def apply_inplane_strain(structure: CrystalStructure, strain) -> CrystalStructure:
    """Deform the in-plane lattice vectors by (1 + strain).

    ``strain`` is a scalar (isotropic) or a symmetric 2x2 engineering tensor.
    Fractional coordinates are unchanged, so atoms follow affinely.
    """
    if structure.dimensionality != "2D":
        raise T2ScreenError("in-plane strain requires a 2D structure")
    if np.isscalar(strain):
        eps = np.eye(2) * float(strain)
    else:
        eps = np.asarray(strain, dtype=float).reshape(2, 2)
    k = structure.lattice.normal_axis
    axes = [i for i in range(3) if i != k]
    normal = structure.lattice.vectors[k] / np.linalg.norm(structure.lattice.vectors[k])
    e1 = structure.lattice.vectors[axes[0]]
    e1 = e1 - (e1 @ normal) * normal
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    basis = np.array([e1, e2])
    vectors = structure.lattice.vectors.copy()
    for ax in axes:
        v2 = basis @ vectors[ax]
        v2 = (np.eye(2) + eps) @ v2
        vectors[ax] = v2 @ basis
    lattice = Lattice(vectors, structure.lattice.periodic)
    return CrystalStructure(lattice, structure.sites, "2D", structure.metadata)
