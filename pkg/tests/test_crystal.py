import itertools

import numpy as np
import pytest

from t2screen.crystal import (
    CrystalStructure,
    Lattice,
    Site,
    StructureMetadata,
    load_vdw_radii,
    parse_structure,
    slab_geometry,
    structure_from_dict,
    structure_to_dict,
    supercell,
    write_structure,
)
from t2screen.errors import (
    DegenerateLatticeError,
    MisconfigurationError,
    MissingDataError,
    ParseError,
    UnknownElementError,
)

from conftest import structure_path

DIAMOND_A = 3.567
DIAMOND_VOLUME = DIAMOND_A**3  # 45.38468526 A^3, evaluated by hand


def test_parse_diamond_json():
    s = parse_structure(structure_path("diamond"))
    assert len(s.sites) == 8
    assert s.dimensionality == "3D"
    assert s.lattice.volume == pytest.approx(DIAMOND_VOLUME, rel=1e-10)


def test_zero_lattice_vector_is_degenerate():
    with pytest.raises(DegenerateLatticeError):
        Lattice(np.array([[0, 0, 0], [0, 1, 0], [0, 0, 1]]))


def test_ws2_declares_2d():
    s = parse_structure(structure_path("ws2_monolayer"))
    assert s.dimensionality == "2D"
    assert s.lattice.periodic == (True, True, False)


def test_unknown_element_rejected():
    with pytest.raises(UnknownElementError):
        Site("Xq", (0, 0, 0))


def test_dimensionality_must_match_periodicity():
    lat = Lattice(np.eye(3) * 4.0)
    with pytest.raises(ParseError):
        CrystalStructure(lat, (Site("C", (0, 0, 0)),), "2D")


def test_too_close_sites_rejected():
    lat = Lattice(np.eye(3) * 4.0)
    sites = (Site("C", (0, 0, 0)), Site("C", (0.05, 0, 0)))
    with pytest.raises(ParseError):
        CrystalStructure(lat, sites, "3D")


def test_duplicate_sites_collapse():
    doc = {
        "lattice": {"vectors": (np.eye(3) * 4.0).tolist()},
        "dimensionality": "3D",
        "sites": [
            {"element": "C", "frac": [0, 0, 0]},
            {"element": "C", "frac": [1e-6, 0, 0]},  # same site to file precision
            {"element": "C", "frac": [0.5, 0.5, 0.5]},
        ],
    }
    s = structure_from_dict(doc)
    assert len(s.sites) == 2


def test_handedness_normalized():
    doc = {
        "lattice": {"vectors": [[4, 0, 0], [0, 4, 0], [0, 0, -4]]},
        "dimensionality": "3D",
        "sites": [{"element": "C", "frac": [0.25, 0.25, 0.25]}],
    }
    s = structure_from_dict(doc)
    assert s.lattice.volume > 0


def test_json_round_trip_exact(tmp_path):
    src = parse_structure(structure_path("sio2_quartz"))
    out = tmp_path / "roundtrip.json"
    write_structure(src, out)
    back = parse_structure(out)
    assert np.allclose(back.lattice.vectors, src.lattice.vectors, atol=1e-10)
    assert back.elements() == src.elements()
    assert np.allclose(back.frac_coords(), src.frac_coords(), atol=1e-10)


def test_poscar_round_trip(tmp_path):
    src = parse_structure(structure_path("ws2_monolayer"))
    out = tmp_path / "POSCAR"
    write_structure(src, out, fmt="poscar-like")
    back = parse_structure(out, fmt="poscar-like")
    assert back.dimensionality == "2D"
    assert sorted(back.elements()) == sorted(src.elements())
    assert np.allclose(back.lattice.vectors, src.lattice.vectors, atol=1e-8)


def test_cif_subset(tmp_path):
    cif = tmp_path / "cubic.cif"
    cif.write_text(
        "data_test\n"
        "_cell_length_a 3.567\n"
        "_cell_length_b 3.567\n"
        "_cell_length_c 3.567\n"
        "_cell_angle_alpha 90\n"
        "_cell_angle_beta 90\n"
        "_cell_angle_gamma 90\n"
        "loop_\n"
        "_atom_site_type_symbol\n"
        "_atom_site_fract_x\n"
        "_atom_site_fract_y\n"
        "_atom_site_fract_z\n"
        "C 0.0 0.0 0.0\n"
        "C 0.25 0.25 0.25\n"
    )
    s = parse_structure(cif)
    assert len(s.sites) == 2
    assert s.lattice.volume == pytest.approx(DIAMOND_VOLUME, rel=1e-6)


def test_parse_errors_carry_context(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        parse_structure(bad)
    short = tmp_path / "POSCAR"
    short.write_text("comment\n1.0\n1 0 0\n")
    with pytest.raises(ParseError):
        parse_structure(short, fmt="poscar-like")


# ---------------------------------------------------------------------------
# supercell


def brute_force_count(structure, radius, center, n_tiles=6):
    """Oracle: enumerate a fixed large tiling and count atoms in the sphere."""
    count = 0
    vecs = structure.lattice.vectors
    rng = [
        range(-n_tiles, n_tiles + 1) if p else range(1)
        for p in structure.lattice.periodic
    ]
    for n in itertools.product(*rng):
        shift = np.array(n, dtype=float) @ vecs
        for site in structure.sites:
            pos = site.frac @ vecs + shift
            if np.linalg.norm(pos - center) <= radius:
                count += 1
    return count


def test_supercell_matches_brute_force():
    s = parse_structure(structure_path("diamond"))
    center = s.cart_coords()[0]
    for radius in (4.0, 7.5, 11.0):
        atoms = supercell(s, radius, center)
        assert len(atoms) == brute_force_count(s, radius, center)


def test_supercell_density_at_50A():
    s = parse_structure(structure_path("diamond"))
    center = s.cart_coords()[0]
    atoms = supercell(s, 50.0, center)
    rho = 8.0 / DIAMOND_VOLUME
    expected = 4.0 / 3.0 * np.pi * 50.0**3 * rho
    assert abs(len(atoms) - expected) / expected < 0.01


def test_supercell_tiny_radius_center_atom_only():
    s = parse_structure(structure_path("diamond"))
    center = s.cart_coords()[3]
    atoms = supercell(s, 0.1, center)
    assert len(atoms) == 1


def test_supercell_2d_never_tiles_out_of_plane():
    s = parse_structure(structure_path("ws2_monolayer"))
    center = s.cart_coords()[0]
    atoms = supercell(s, 50.0, center)
    z = atoms.positions[:, 2]
    assert np.all(np.abs(z - center[2]) <= 1.58)  # S planes at +-1.57 A
    assert np.all(atoms.images[:, 2] == 0)


def test_supercell_invariant_under_equivalent_cell():
    s = parse_structure(structure_path("diamond"))
    # re-express the same crystal in a sheared (unimodular) cell
    m = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    vectors = m @ s.lattice.vectors
    frac = (s.frac_coords() @ s.lattice.vectors) @ np.linalg.inv(vectors)
    doc = {
        "lattice": {"vectors": vectors.tolist()},
        "dimensionality": "3D",
        "sites": [
            {"element": e, "frac": f.tolist()}
            for e, f in zip(s.elements(), frac % 1.0)
        ],
    }
    s2 = structure_from_dict(doc)
    center = np.array([1.1, 0.3, -0.2])
    a = supercell(s, 12.0, center).positions
    b = supercell(s2, 12.0, center).positions
    key = lambda arr: np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    assert len(a) == len(b)
    assert np.allclose(a[key(a)], b[key(b)], atol=1e-8)


def test_supercell_monotone_in_radius():
    s = parse_structure(structure_path("sio2_quartz"))
    center = np.zeros(3)
    counts = [len(supercell(s, r, center)) for r in np.linspace(2, 20, 10)]
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_supercell_hard_cap():
    s = parse_structure(structure_path("diamond"))
    with pytest.raises(MisconfigurationError):
        supercell(s, 5000.0, np.zeros(3))


# ---------------------------------------------------------------------------
# slab geometry


def test_slab_geometry_single_sheet():
    lat = Lattice(np.diag([3.0, 3.0, 20.0]), periodic=(True, True, False))
    s = CrystalStructure(lat, (Site("C", (0, 0, 0.5)),), "2D")
    geom = slab_geometry(s, {"C": 1.7})
    assert geom.thickness_w_cm == pytest.approx(3.4e-8, rel=1e-12)
    assert geom.top_species == geom.bottom_species == "C"


def test_slab_geometry_ws2():
    s = parse_structure(structure_path("ws2_monolayer"))
    geom = slab_geometry(s)
    assert geom.thickness_w_cm == pytest.approx(6.92e-8, rel=1e-6)
    assert geom.top_species == "S"


def test_slab_geometry_rejects_3d():
    s = parse_structure(structure_path("diamond"))
    with pytest.raises(ValueError):
        slab_geometry(s)


def test_slab_geometry_missing_radius():
    lat = Lattice(np.diag([3.0, 3.0, 20.0]), periodic=(True, True, False))
    s = CrystalStructure(lat, (Site("C", (0, 0, 0.5)),), "2D")
    with pytest.raises(MissingDataError):
        slab_geometry(s, {"W": 2.1})


def test_vdw_table_values():
    radii = load_vdw_radii()
    assert radii["S"] == pytest.approx(1.89)
    assert radii["O"] == pytest.approx(1.50)
    assert radii["H"] == pytest.approx(1.20)
