#!/usr/bin/env python3
"""Regenerate the structure files shipped in t2screen/data/structures/.

Cells are standard textbook geometries (conventional cells, P1 site lists).
Space-group orbits for quartz and corundum are produced by closing the group
from generator operations and are validated by bond-length asserts below, so
a typo in a generator cannot silently ship a broken structure.

Run from the repository root:  python tools/make_structures.py
"""

from __future__ import annotations

import itertools
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from t2screen.crystal import (  # noqa: E402
    CrystalStructure,
    Lattice,
    Site,
    StructureMetadata,
    structure_to_dict,
    write_structure,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "t2screen" / "data" / "structures"


def hexagonal_cell(a: float, c: float) -> np.ndarray:
    return np.array([[a, 0, 0], [-a / 2, a * np.sqrt(3) / 2, 0], [0, 0, c]])


def orbit(ops: list[tuple[np.ndarray, np.ndarray]], frac, tol=1e-4) -> list[np.ndarray]:
    """Apply affine ops (R, t) to a representative and dedupe mod 1."""
    frac = np.asarray(frac, dtype=float)
    points: list[np.ndarray] = []
    for R, t in ops:
        p = (R @ frac + t) % 1.0
        if not any(np.linalg.norm((p - q + 0.5) % 1.0 - 0.5) < tol for q in points):
            points.append(p)
    return points


def close_group(generators, max_ops=200):
    """Close a set of affine symmetry operations under composition."""
    ops = [(np.eye(3), np.zeros(3))]
    changed = True
    while changed and len(ops) < max_ops:
        changed = False
        for (R1, t1), (R2, t2) in itertools.product(list(ops), generators):
            R = R2 @ R1
            t = (R2 @ t1 + t2) % 1.0
            if not any(
                np.allclose(R, Ro) and np.linalg.norm((t - to + 0.5) % 1 - 0.5) < 1e-8
                for Ro, to in ops
            ):
                ops.append((R, t))
                changed = True
    return ops


def min_distance(structure: CrystalStructure) -> float:
    cart = structure.cart_coords()
    shifts = [
        np.array(s) @ structure.lattice.vectors
        for s in itertools.product(
            *[(-1, 0, 1) if p else (0,) for p in structure.lattice.periodic]
        )
    ]
    best = np.inf
    for s in shifts:
        d = np.linalg.norm(cart[:, None] - (cart + s)[None, :], axis=-1)
        if np.allclose(s, 0):
            np.fill_diagonal(d, np.inf)
        best = min(best, d.min())
    return best


def bond_lengths(structure, el_a, el_b, cutoff):
    cart = structure.cart_coords()
    els = structure.elements()
    shifts = [
        np.array(s) @ structure.lattice.vectors
        for s in itertools.product(
            *[(-1, 0, 1) if p else (0,) for p in structure.lattice.periodic]
        )
    ]
    out = []
    for i, ei in enumerate(els):
        if ei != el_a:
            continue
        for j, ej in enumerate(els):
            if ej != el_b:
                continue
            for s in shifts:
                d = np.linalg.norm(cart[i] - cart[j] - s)
                if 1e-6 < d < cutoff:
                    out.append(d)
    return np.array(out)


def save(structure: CrystalStructure, name: str):
    OUT.mkdir(parents=True, exist_ok=True)
    write_structure(structure, OUT / f"{name}.json")
    comp = structure.composition()
    print(f"{name:24s} {structure.dimensionality}  atoms={sum(comp.values()):3d}  {comp}")


def make_diamond():
    a = 3.567
    fcc = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
    frac = fcc + [(x + 0.25, y + 0.25, z + 0.25) for x, y, z in fcc]
    s = CrystalStructure(
        Lattice(np.eye(3) * a),
        tuple(Site("C", f) for f in frac),
        "3D",
        StructureMetadata(band_gap_eV=5.47, source_id="diamond"),
    )
    bonds = bond_lengths(s, "C", "C", 1.7)
    assert len(bonds) and abs(bonds.min() - a * np.sqrt(3) / 4) < 1e-6
    save(s, "diamond")


def make_rocksalt(name, cation, a, gap):
    fcc = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
    sites = [Site(cation, f) for f in fcc]
    sites += [Site("O", (f[0] + 0.5, f[1], f[2])) for f in fcc]
    s = CrystalStructure(
        Lattice(np.eye(3) * a), tuple(sites), "3D",
        StructureMetadata(band_gap_eV=gap, source_id=name),
    )
    b = bond_lengths(s, cation, "O", a / 2 + 0.01)
    assert abs(b.min() - a / 2) < 1e-6
    save(s, name)


def make_fluorite():
    a = 5.411
    fcc = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
    sites = [Site("Ce", f) for f in fcc]
    for f in fcc:
        sites.append(Site("O", (f[0] + 0.25, f[1] + 0.25, f[2] + 0.25)))
        sites.append(Site("O", (f[0] + 0.75, f[1] + 0.75, f[2] + 0.75)))
    s = CrystalStructure(
        Lattice(np.eye(3) * a), tuple(sites), "3D",
        StructureMetadata(band_gap_eV=3.2, source_id="ceo2"),
    )
    b = bond_lengths(s, "Ce", "O", 2.5)
    assert abs(b.min() - a * np.sqrt(3) / 4) < 1e-6 and len(s.sites) == 12
    save(s, "ceo2")


def make_quartz():
    # alpha-quartz, threefold screw + twofold axis generate the 6 operations
    a, c = 4.9134, 5.4052
    g1 = (np.array([[0, -1, 0], [1, -1, 0], [0, 0, 1]]), np.array([0, 0, 2 / 3]))
    g2 = (np.array([[1, -1, 0], [0, -1, 0], [0, 0, -1]]), np.zeros(3))
    ops = close_group([g1, g2])
    assert len(ops) == 6, f"expected 6 ops, got {len(ops)}"
    si = orbit(ops, (0.4697, 0.0, 0.0))
    ox = orbit(ops, (0.4133, 0.2672, 0.1188))
    assert len(si) == 3 and len(ox) == 6, (len(si), len(ox))
    sites = [Site("Si", f) for f in si] + [Site("O", f) for f in ox]
    s = CrystalStructure(
        Lattice(hexagonal_cell(a, c)), tuple(sites), "3D",
        StructureMetadata(band_gap_eV=5.8, source_id="sio2-quartz"),
    )
    b = bond_lengths(s, "Si", "O", 1.7)
    assert len(b) == 12 and 1.55 < b.min() and b.max() < 1.65, (len(b), b.min(), b.max())
    save(s, "sio2_quartz")


def make_corundum():
    # R-3c hexagonal setting: close the group from 3+, 2-fold(c-glide), -1,
    # plus rhombohedral centering translations.
    a, c = 4.759, 12.991
    rot3 = (np.array([[0, -1, 0], [1, -1, 0], [0, 0, 1]]), np.zeros(3))
    two = (np.array([[0, 1, 0], [1, 0, 0], [0, 0, -1]]), np.array([0, 0, 0.5]))
    inv = (-np.eye(3), np.zeros(3))
    point = close_group([rot3, two, inv])
    assert len(point) == 12, len(point)
    ops = []
    for cen in (np.zeros(3), np.array([2 / 3, 1 / 3, 1 / 3]), np.array([1 / 3, 2 / 3, 2 / 3])):
        ops.extend([(R, (t + cen) % 1.0) for R, t in point])
    al = orbit(ops, (0.0, 0.0, 0.35216))
    ox = orbit(ops, (0.30624, 0.0, 0.25))
    assert len(al) == 12 and len(ox) == 18, (len(al), len(ox))
    sites = [Site("Al", f) for f in al] + [Site("O", f) for f in ox]
    s = CrystalStructure(
        Lattice(hexagonal_cell(a, c)), tuple(sites), "3D",
        StructureMetadata(band_gap_eV=8.8, source_id="al2o3-corundum"),
    )
    b = bond_lengths(s, "Al", "O", 2.1)
    assert 1.8 < b.min() < 1.93, b.min()
    save(s, "al2o3_corundum")


def make_ws2():
    a = 3.153
    dz_s = 3.14 / 2  # S planes sit +-1.57 A from the W plane
    vac = 18.0
    lat = Lattice(hexagonal_cell(a, vac), periodic=(True, True, False))
    sites = [
        Site("W", (0, 0, 0.5)),
        Site("S", (1 / 3, 2 / 3, 0.5 + dz_s / vac)),
        Site("S", (1 / 3, 2 / 3, 0.5 - dz_s / vac)),
    ]
    s = CrystalStructure(
        lat, tuple(sites), "2D",
        StructureMetadata(band_gap_eV=1.9, binding_energy_meV_per_A2=25.0, source_id="ws2-monolayer"),
    )
    b = bond_lengths(s, "W", "S", 2.6)
    assert len(b) == 6 and 2.3 < b.min() < 2.5, (len(b), b.min())
    save(s, "ws2_monolayer")


def _triangular_net():
    """Six sites of the anion close-packing net in the orthohexagonal cell."""
    return [(0.0, 0.0), (0.0, 1 / 3), (0.0, 2 / 3), (0.5, 1 / 6), (0.5, 0.5), (0.5, 5 / 6)]


def make_talc(hydrated: bool):
    """Idealized trioctahedral 2:1 layer: Si2O5 sheets sandwiching a Mg sheet.

    Orthohexagonal cell a=5.29, b=a*sqrt(3); anion planes are the A/B positions
    of close packing, Mg fills the C (octahedral) sites; OH groups sit at the
    tetrahedral ring centers with H pointing outward along the normal.
    """
    a = 5.29
    b = a * np.sqrt(3)
    vac = 24.0
    z0 = vac / 2  # Mg plane
    h_oct = 1.134  # anion plane offset
    z_si = h_oct + 1.62  # apical bond along the normal
    z_bas = z_si + 0.54  # basal plane: tetrahedron z-extent 1.62/3
    z_h = h_oct + 0.98

    shift = np.array([1 / 6, 1 / 6])
    A = [np.array(p) for p in _triangular_net()]
    B = [p + shift for p in A]
    C = [p + 2 * shift for p in A]

    def split(net):
        # three interpenetrating hexagonal sublattices (A/B/C classes) of the
        # net with primitive vectors e1=(0,1/3), e2=(1/2,1/6) in frac coords
        origin = np.asarray(net[0])
        sub = {0: [], 1: [], 2: []}
        for p in net:
            du = (p[0] - origin[0]) % 1.0
            dv = (p[1] - origin[1]) % 1.0
            n_c = round(2 * du) % 2
            m_c = round(3 * dv - 0.5 * n_c)
            sub[(m_c - n_c) % 3].append(np.asarray(p) % 1.0)
        return sub

    sub_a, sub_b = split(A), split(B)
    # lower sheet anions (A net): two sublattices are apical O, one is OH
    apical_lo = sub_a[0] + sub_a[1]
    oh_lo = sub_a[2]
    apical_hi = sub_b[0] + sub_b[1]
    oh_hi = sub_b[2]
    assert len(apical_lo) == 4 and len(oh_lo) == 2

    sites = []

    def add(el, xy, z):
        sites.append(Site(el, (xy[0], xy[1], (z0 + z) / vac)))

    for p in C:
        add("Mg", np.array(p), 0.0)
    for p, z, el in [(q, -h_oct, "O") for q in apical_lo] + [(q, +h_oct, "O") for q in apical_hi]:
        add(el, p, z)
    for p in oh_lo:
        add("O", p, -h_oct)
        if hydrated:
            add("H", p, -z_h)
    for p in oh_hi:
        add("O", p, +h_oct)
        if hydrated:
            add("H", p, +z_h)
    # tetrahedral sheets: Si directly below/above each apical O; basal O at
    # honeycomb bond midpoints
    for p in apical_lo:
        add("Si", p, -z_si)
    for p in apical_hi:
        add("Si", p, +z_si)

    def basal_midpoints(apical):
        frac = np.array(apical)
        cell = np.array([[a, 0.0], [0.0, b]])
        cart = frac @ cell
        mids = []
        shifts = [np.array([i, j]) @ cell for i in (-1, 0, 1) for j in (-1, 0, 1)]
        d_nn = a / np.sqrt(3)
        for i in range(len(cart)):
            for j in range(len(cart)):
                for s in shifts:
                    rj = cart[j] + s
                    d = np.linalg.norm(cart[i] - rj)
                    if abs(d - d_nn) < 0.05 and (i < j or np.linalg.norm(s) > 0):
                        m = ((cart[i] + rj) / 2) @ np.linalg.inv(cell) % 1.0
                        if not any(np.linalg.norm((m - q + 0.5) % 1 - 0.5) < 1e-4 for q in mids):
                            mids.append(m)
        return mids

    bas_lo = basal_midpoints(apical_lo)
    bas_hi = basal_midpoints(apical_hi)
    assert len(bas_lo) == 6 and len(bas_hi) == 6, (len(bas_lo), len(bas_hi))
    for p in bas_lo:
        add("O", p, -z_bas)
    for p in bas_hi:
        add("O", p, +z_bas)

    lat = Lattice(np.diag([a, b, vac]), periodic=(True, True, False))
    name = "talc_hydrated" if hydrated else "talc_dehydrated"
    md = StructureMetadata(
        band_gap_eV=5.3,
        binding_energy_meV_per_A2=25.0,
        hydrated=not hydrated,  # flag marks H-omitted models of hydrated parents
        source_id=name,
    )
    s = CrystalStructure(lat, tuple(sites), "2D", md)
    comp = s.composition()
    if hydrated:
        assert comp == {"Mg": 6, "O": 24, "H": 4, "Si": 8}, comp
    else:
        assert comp == {"Mg": 6, "O": 24, "Si": 8}, comp
    b_mgo = bond_lengths(s, "Mg", "O", 2.3)
    assert 1.9 < b_mgo.min() < 2.2, b_mgo.min()
    b_sio = bond_lengths(s, "Si", "O", 1.75)
    # each Si: 1 apical + 3 basal bonds
    assert len(b_sio) == 32, len(b_sio)
    save(s, name)


def main():
    make_diamond()
    make_rocksalt("cao", "Ca", 4.811, 7.0)
    make_rocksalt("mgo", "Mg", 4.212, 7.8)
    make_fluorite()
    make_quartz()
    make_corundum()
    make_ws2()
    make_talc(hydrated=True)
    make_talc(hydrated=False)


if __name__ == "__main__":
    main()
