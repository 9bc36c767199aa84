"""Batch screening: corpus ingestion, tiered runs, append-only result store.

Stage one filters and ranks bare monolayers; stage two builds lattice-matched
stacks between surviving hosts and substrate slabs and re-runs the coherence
calculation on the combined bath. Results land in a JSONL journal (one record
per line, written atomically by the parent process) so interrupted batches
resume without recomputation.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bath import default_qubit_site, generate_bath
from .cce import (
    CCEParams,
    QubitSpec,
    cce_coherence,
    ensemble_average,
    time_grid,
)
from .cce.engine import CoherenceCurve, DEFAULT_N_STEPS
from .crystal import CrystalStructure, parse_structure, write_structure
from .errors import InsufficientDecayError, T2ScreenError
from .fitkit import AutofitResult, WindowThresholds, autofit
from .hetero import SurfaceCell, cleave, stack, zur_mcgill_match
from .isotopes import default_registry
from .t2model import (
    ModelParams,
    model_t2_heterostructure_report,
    model_t2_structure,
)

THICKNESS_CONVENTION = "zextent+vdw"
DENSITY_CONVENTION_2D = "area*w"


class ComputeTimeout(T2ScreenError):
    pass


@dataclass(frozen=True)
class TierParams:
    r_bath: float
    r_dipole: float
    order: int = 2
    seeds: int = 40


@dataclass(frozen=True)
class ScreenConfig:
    corpus: str = ""
    out_dir: str = "screen_out"
    method: str = "cce"  # cce | model
    min_gap_eV: float = 0.5
    max_binding_meV_A2: float = 130.0
    exclude_hydrated: bool = True
    t2_threshold_ms: float = 1.0
    b_field: tuple[float, float, float] = (0.0, 0.0, 5.0)
    monolayer: TierParams = field(default_factory=lambda: TierParams(50.0, 15.0, 2, 40))
    hetero: TierParams = field(default_factory=lambda: TierParams(120.0, 30.0, 2, 40))
    workers: int = 1
    seed_base: int = 0
    n_steps: int = DEFAULT_N_STEPS
    max_rounds: int = 8
    timeout_s: float = 7200.0
    substrates: tuple[str, ...] = ()
    facets: tuple[tuple[int, int, int], ...] = ((0, 0, 1), (0, 1, 0), (1, 0, 0))
    slab_thickness: float = 22.0
    strain_tol: float = 0.05
    max_area: float = 500.0
    force: bool = False

    @classmethod
    def from_file(cls, path) -> "ScreenConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScreenConfig":
        kwargs = dict(doc)
        for tier_key in ("monolayer", "hetero"):
            if tier_key in kwargs and isinstance(kwargs[tier_key], dict):
                kwargs[tier_key] = TierParams(**kwargs[tier_key])
        if "b_field" in kwargs:
            kwargs["b_field"] = tuple(kwargs["b_field"])
        if "facets" in kwargs:
            kwargs["facets"] = tuple(tuple(f) for f in kwargs["facets"])
        if "substrates" in kwargs:
            kwargs["substrates"] = tuple(kwargs["substrates"])
        return cls(**kwargs)


def default_substrate_paths() -> list[Path]:
    """Shipped substrate cells (artifact-chosen default set, user-replaceable)."""
    from importlib import resources

    base = resources.files("t2screen.data").joinpath("structures")
    return [
        Path(str(base.joinpath(f"{name}.json")))
        for name in ("sio2_quartz", "ceo2", "cao", "mgo", "al2o3_corundum")
    ]


# ---------------------------------------------------------------------------
# result store


class ResultStore:
    """Append-only JSONL journal with a derived (id, method) index.

    Records are written as single lines with flush+fsync, so a crash can lose
    only in-flight materials, never corrupt completed ones.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._index: dict[tuple[str, str], dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn write from a crash; ignore the partial line
                self._index[(rec["id"], rec["method"])] = rec

    def append(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        with self.path.open("a") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._index[(record["id"], record["method"])] = record

    def get(self, material_id: str, method: str) -> dict | None:
        return self._index.get((material_id, method))

    def records(self) -> list[dict]:
        return sorted(self._index.values(), key=lambda r: (r["id"], r["method"]))

    def done(self, material_id: str, method: str) -> bool:
        rec = self.get(material_id, method)
        return rec is not None and rec.get("status") == "done"


# ---------------------------------------------------------------------------
# single-material computations


def _provenance(cfg_tier: TierParams, b_field, seed_base, qubit: QubitSpec, extra=None) -> dict:
    prov = {
        "code_version": __version__,
        "isotope_table": default_registry().version,
        "thickness_convention": THICKNESS_CONVENTION,
        "density_convention_2d": DENSITY_CONVENTION_2D,
        "bath_state": "fully-mixed",
        "ensemble": "isotope-placements",
        "qubit_level_pair": list(qubit.level_pair),
        "qubit_spin": qubit.spin_S,
        "b_field_T": list(b_field),
        "r_bath_A": cfg_tier.r_bath,
        "r_dipole_A": cfg_tier.r_dipole,
        "cce_order": cfg_tier.order,
        "n_seeds": cfg_tier.seeds,
        "seed_base": seed_base,
    }
    if extra:
        prov.update(extra)
    return prov


def _seed_curve(args) -> CoherenceCurve:
    qubit, bath, params = args
    return cce_coherence(qubit, bath, params)


@dataclass
class CCEOutcome:
    fit_t2_ms: float
    n_exponent: float
    rms_residual: float
    converged: bool
    rounds_used: int
    window_status: str
    curve: CoherenceCurve
    history: list[dict]


def compute_t2_cce(
    structure: CrystalStructure,
    tier: TierParams,
    b_field=(0.0, 0.0, 5.0),
    seed_base: int = 0,
    qubit_position=None,
    n_steps: int = DEFAULT_N_STEPS,
    max_rounds: int = 8,
    t_max0_ms: float | None = None,
    workers: int = 1,
    deadline: float | None = None,
    max_order: int | None = None,
    thresholds: WindowThresholds = WindowThresholds(),
) -> CCEOutcome:
    """Ensemble CCE + window-controlled stretched-exponential fit."""
    if qubit_position is None:
        site = default_qubit_site(structure)
        qubit_position = structure.cart_coords()[site]
    qubit = QubitSpec(position=tuple(np.asarray(qubit_position, dtype=float)))
    order = max_order if max_order is not None else tier.order

    baths = [
        generate_bath(structure, qubit_position, tier.r_bath, seed_base + k)
        for k in range(tier.seeds)
    ]

    if t_max0_ms is None:
        try:
            model = model_t2_structure(structure)
            t_max0_ms = float(np.clip(2.0 * model.combined_t2_s * 1e3, 1e-4, 1e5))
        except Exception:
            t_max0_ms = 1.0

    def evaluate(t_max: float) -> CoherenceCurve:
        if deadline is not None and time.monotonic() > deadline:
            raise ComputeTimeout("per-material time budget exhausted")
        times = time_grid(t_max, n_steps)
        params = CCEParams(
            r_dipole=tier.r_dipole, max_order=order, b_field=tuple(b_field),
            times_ms=times,
        )
        jobs = [(qubit, bath, params) for bath in baths]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                curves = list(pool.map(_seed_curve, jobs, chunksize=1))
        else:
            curves = [_seed_curve(j) for j in jobs]
        return ensemble_average(curves)

    result: AutofitResult = autofit(evaluate, t_max0_ms, max_rounds, thresholds)
    return CCEOutcome(
        fit_t2_ms=result.fit.t2_ms,
        n_exponent=result.fit.n_exponent,
        rms_residual=result.fit.rms_residual,
        converged=result.converged and result.fit.converged,
        rounds_used=result.rounds_used,
        window_status=result.curve.window_status,
        curve=result.curve,
        history=result.history,
    )


def write_curve_file(curve: CoherenceCurve, path, header: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines += [f"{t:.9g} {l:.9g}" for t, l in zip(curve.times_ms, curve.L)]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# screening stages


def _corpus_files(corpus: str) -> list[Path]:
    root = Path(corpus)
    if root.is_file():
        return [root]
    if not root.exists():
        raise T2ScreenError(f"corpus path {corpus} does not exist")
    files = [
        p for p in sorted(root.iterdir())
        if p.suffix.lower() in (".json", ".cif", ".poscar", ".vasp") or p.name.upper().startswith("POSCAR")
    ]
    if not files:
        raise T2ScreenError(f"no structure files found under {corpus}")
    return files


def _filter_reason(structure: CrystalStructure, cfg: ScreenConfig) -> str | None:
    md = structure.metadata
    if cfg.exclude_hydrated and md.hydrated:
        return "hydrated"
    if md.band_gap_eV is not None and md.band_gap_eV < cfg.min_gap_eV:
        return "low-gap"
    if (
        md.binding_energy_meV_per_A2 is not None
        and md.binding_energy_meV_per_A2 > cfg.max_binding_meV_A2
    ):
        return "high-binding"
    return None


def _material_id(path: Path, structure: CrystalStructure) -> str:
    return structure.metadata.source_id or path.stem


def _monolayer_worker(args: tuple) -> dict:
    path_str, cfg_dict = args
    cfg = ScreenConfig.from_dict(cfg_dict)
    path = Path(path_str)
    t0 = time.time()
    structure = parse_structure(path)
    material_id = _material_id(path, structure)
    record = {
        "id": material_id,
        "method": cfg.method,
        "status": "done",
        "elapsed_s": None,
    }
    try:
        if cfg.method == "model":
            report = model_t2_structure(structure)
            record.update(
                {
                    "t2_ms": report.combined_t2_s * 1e3,
                    "model_report": report.to_dict(),
                    "provenance": {
                        "code_version": __version__,
                        "isotope_table": default_registry().version,
                        "thickness_convention": THICKNESS_CONVENTION,
                        "density_convention_2d": DENSITY_CONVENTION_2D,
                    },
                }
            )
        else:
            deadline = time.monotonic() + cfg.timeout_s
            outcome = compute_t2_cce(
                structure,
                cfg.monolayer,
                b_field=cfg.b_field,
                seed_base=cfg.seed_base,
                n_steps=cfg.n_steps,
                max_rounds=cfg.max_rounds,
                deadline=deadline,
            )
            qubit_site = default_qubit_site(structure)
            record.update(
                {
                    "t2_ms": outcome.fit_t2_ms,
                    "n_exponent": outcome.n_exponent,
                    "rms_residual": outcome.rms_residual,
                    "converged": outcome.converged,
                    "rounds_used": outcome.rounds_used,
                    "window_status": outcome.window_status,
                    "window_history": outcome.history,
                    "provenance": _provenance(
                        cfg.monolayer,
                        cfg.b_field,
                        cfg.seed_base,
                        QubitSpec(),
                        {"qubit_site_element": structure.sites[qubit_site].element},
                    ),
                }
            )
            curve_file = Path(cfg.out_dir) / "curves" / f"{material_id}.dat"
            write_curve_file(
                outcome.curve, curve_file,
                {"id": material_id, "t2_ms": outcome.fit_t2_ms,
                 "n_seeds": outcome.curve.n_seeds, "method": "cce"},
            )
            record["curve_file"] = str(curve_file)
    except ComputeTimeout:
        record.update({"status": "failed", "reason": "timeout"})
    except Exception as exc:  # per-material failures never abort the batch
        record.update({"status": "failed", "reason": f"{type(exc).__name__}: {exc}"})
    record["elapsed_s"] = round(time.time() - t0, 3)
    return record


def screen_monolayers(cfg: ScreenConfig) -> ResultStore:
    """Stage one: filter the corpus and compute T2 per surviving monolayer."""
    store = ResultStore(Path(cfg.out_dir) / "results.jsonl")
    files = _corpus_files(cfg.corpus)
    jobs = []
    for path in files:
        structure = parse_structure(path)
        material_id = _material_id(path, structure)
        if not cfg.force and store.done(material_id, cfg.method):
            continue
        reason = _filter_reason(structure, cfg)
        if reason is not None:
            store.append(
                {"id": material_id, "method": cfg.method, "status": "skipped",
                 "reason": reason}
            )
            continue
        jobs.append((str(path), asdict(cfg)))

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for record in pool.map(_monolayer_worker, jobs, chunksize=1):
                store.append(record)
    else:
        for job in jobs:
            store.append(_monolayer_worker(job))
    return store


def _hetero_worker(args: tuple) -> dict:
    host_path, sub_path, facet, cfg_dict = args
    cfg = ScreenConfig.from_dict(cfg_dict)
    t0 = time.time()
    host = parse_structure(host_path)
    substrate = parse_structure(sub_path)
    facet = tuple(facet)
    material_id = (
        f"{_material_id(Path(host_path), host)}"
        f"@{_material_id(Path(sub_path), substrate)}"
        f"({''.join(str(x) for x in facet)})"
    )
    record = {"id": material_id, "method": cfg.method, "status": "done"}
    try:
        slab = cleave(substrate, facet, cfg.slab_thickness)
        matches = zur_mcgill_match(
            SurfaceCell.from_structure(host),
            SurfaceCell.from_structure(slab, facet),
            cfg.strain_tol,
            cfg.max_area,
        )
        if not matches:
            record.update({"status": "skipped", "reason": "no-match"})
            record["elapsed_s"] = round(time.time() - t0, 3)
            return record
        hs = stack(host, slab, matches[0], facet=facet)
        record["match"] = {
            "m_2d": hs.match.m_2d.tolist(),
            "m_sub": hs.match.m_sub.tolist(),
            "strain": list(hs.match.strain),
            "max_principal_strain": hs.match.max_principal_strain,
            "area_A2": hs.match.area,
            "atom_count": hs.match.atom_count,
            "interlayer_gap_A": hs.interlayer_gap,
        }
        if cfg.method == "model":
            host_report = model_t2_structure(host)
            sub_report = model_t2_structure(substrate)
            hs_report = model_t2_heterostructure_report(host_report, sub_report)
            record.update({"t2_ms": hs_report.combined_t2_s * 1e3,
                           "model_report": hs_report.to_dict()})
        else:
            deadline = time.monotonic() + cfg.timeout_s
            qubit_pos = hs.structure.cart_coords()[hs.qubit_site_index]
            outcome = compute_t2_cce(
                hs.structure,
                cfg.hetero,
                b_field=cfg.b_field,
                seed_base=cfg.seed_base,
                qubit_position=qubit_pos,
                n_steps=cfg.n_steps,
                max_rounds=cfg.max_rounds,
                deadline=deadline,
            )
            record.update(
                {
                    "t2_ms": outcome.fit_t2_ms,
                    "n_exponent": outcome.n_exponent,
                    "converged": outcome.converged,
                    "rounds_used": outcome.rounds_used,
                    "window_status": outcome.window_status,
                    "provenance": _provenance(
                        cfg.hetero, cfg.b_field, cfg.seed_base, QubitSpec(),
                        {"qubit_site_element": hs.structure.sites[hs.qubit_site_index].element,
                         "qubit_placement": "host-monolayer-site"},
                    ),
                }
            )
            curve_file = Path(cfg.out_dir) / "curves" / f"{material_id}.dat"
            write_curve_file(
                outcome.curve, curve_file,
                {"id": material_id, "t2_ms": outcome.fit_t2_ms, "method": "cce"},
            )
            record["curve_file"] = str(curve_file)
    except ComputeTimeout:
        record.update({"status": "failed", "reason": "timeout"})
    except Exception as exc:
        record.update({"status": "failed", "reason": f"{type(exc).__name__}: {exc}"})
    record["elapsed_s"] = round(time.time() - t0, 3)
    return record


def _substrate_reference_worker(args: tuple) -> dict:
    """Bare-substrate T2 on the bulk crystal (default placement, hetero tier)."""
    sub_path, cfg_dict = args
    cfg = ScreenConfig.from_dict(cfg_dict)
    t0 = time.time()
    substrate = parse_structure(sub_path)
    material_id = f"substrate:{_material_id(Path(sub_path), substrate)}"
    record = {"id": material_id, "method": cfg.method, "status": "done"}
    try:
        if cfg.method == "model":
            report = model_t2_structure(substrate)
            record.update({"t2_ms": report.combined_t2_s * 1e3,
                           "model_report": report.to_dict()})
        else:
            deadline = time.monotonic() + cfg.timeout_s
            outcome = compute_t2_cce(
                substrate, cfg.hetero, b_field=cfg.b_field, seed_base=cfg.seed_base,
                n_steps=cfg.n_steps, max_rounds=cfg.max_rounds, deadline=deadline,
            )
            record.update(
                {"t2_ms": outcome.fit_t2_ms, "n_exponent": outcome.n_exponent,
                 "converged": outcome.converged,
                 "window_status": outcome.window_status,
                 "provenance": _provenance(
                     cfg.hetero, cfg.b_field, cfg.seed_base, QubitSpec(),
                     {"qubit_placement": "bulk-default"}),
                 }
            )
    except ComputeTimeout:
        record.update({"status": "failed", "reason": "timeout"})
    except Exception as exc:
        record.update({"status": "failed", "reason": f"{type(exc).__name__}: {exc}"})
    record["elapsed_s"] = round(time.time() - t0, 3)
    return record


def screen_heterostructures(
    cfg: ScreenConfig,
    hosts: list[str],
    substrates: list[str] | None = None,
    include_substrate_references: bool = True,
) -> ResultStore:
    """Stage two: build and screen (host, substrate, facet) stacks."""
    if not hosts:
        raise T2ScreenError("host list is empty")
    subs = list(substrates) if substrates else [str(p) for p in default_substrate_paths()]
    store = ResultStore(Path(cfg.out_dir) / "results.jsonl")
    jobs = []
    if include_substrate_references:
        for sub in subs:
            sid = f"substrate:{_material_id(Path(sub), parse_structure(sub))}"
            if cfg.force or not store.done(sid, cfg.method):
                jobs.append(("ref", (sub, asdict(cfg))))
    for host in hosts:
        for sub in subs:
            for facet in cfg.facets:
                hid = _material_id(Path(host), parse_structure(host))
                sid = _material_id(Path(sub), parse_structure(sub))
                mid = f"{hid}@{sid}({''.join(str(x) for x in facet)})"
                if cfg.force or not store.done(mid, cfg.method):
                    jobs.append(("hs", (host, sub, facet, asdict(cfg))))

    def run_one(kind_args):
        kind, args = kind_args
        return _substrate_reference_worker(args) if kind == "ref" else _hetero_worker(args)

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_one, j) for j in jobs]
            for fut in futures:
                store.append(fut.result())
    else:
        for job in jobs:
            store.append(run_one(job))
    return store


# ---------------------------------------------------------------------------
# ranking / export


def rank_and_export(store: ResultStore, threshold_ms: float, out_dir) -> dict:
    """Descending-T2 table, pass counts, and model-vs-CCE parity data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = store.records()
    done = [r for r in records if r.get("status") == "done" and "t2_ms" in r]
    done.sort(key=lambda r: -r["t2_ms"])

    ranked_csv = out_dir / "ranked.csv"
    with ranked_csv.open("w") as fh:
        fh.write("rank,id,method,t2_ms,n_exponent,status\n")
        for rank, r in enumerate(done, start=1):
            fh.write(
                f"{rank},{r['id']},{r['method']},{r['t2_ms']:.6g},"
                f"{r.get('n_exponent', '')},{r['status']}\n"
            )

    by_id: dict[str, dict[str, float]] = {}
    for r in done:
        by_id.setdefault(r["id"], {})[r["method"]] = r["t2_ms"]
    parity_rows = [
        (mid, vals["model"], vals["cce"])
        for mid, vals in sorted(by_id.items())
        if "model" in vals and "cce" in vals
    ]
    parity_csv = out_dir / "parity.csv"
    with parity_csv.open("w") as fh:
        fh.write("id,model_t2_ms,cce_t2_ms\n")
        for mid, m, c in parity_rows:
            fh.write(f"{mid},{m:.6g},{c:.6g}\n")

    summary = {
        "n_records": len(records),
        "n_done": len(done),
        "n_failed": sum(1 for r in records if r.get("status") == "failed"),
        "n_skipped": sum(1 for r in records if r.get("status") == "skipped"),
        "n_above_threshold": sum(1 for r in done if r["t2_ms"] > threshold_ms),
        "threshold_ms": threshold_ms,
        "parity_rows": len(parity_rows),
        "top": [
            {"id": r["id"], "method": r["method"], "t2_ms": r["t2_ms"]}
            for r in done[:15]
        ],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


# ---------------------------------------------------------------------------
# convergence sweeps


def converge_sweep(
    structure: CrystalStructure,
    r_bath_values,
    r_dipole_values,
    orders,
    base_tier: TierParams,
    b_field=(0.0, 0.0, 5.0),
    seed_base: int = 0,
    n_steps: int = DEFAULT_N_STEPS,
    max_rounds: int = 8,
) -> list[dict]:
    """T2 over a (r_bath, r_dipole, order) grid for convergence checks."""
    rows = []
    for r_bath in r_bath_values:
        for r_dipole in r_dipole_values:
            for order in orders:
                tier = replace(base_tier, r_bath=r_bath, r_dipole=r_dipole, order=order)
                try:
                    outcome = compute_t2_cce(
                        structure, tier, b_field=b_field, seed_base=seed_base,
                        n_steps=n_steps, max_rounds=max_rounds,
                    )
                    rows.append(
                        {"r_bath": r_bath, "r_dipole": r_dipole, "order": order,
                         "t2_ms": outcome.fit_t2_ms, "n_exponent": outcome.n_exponent,
                         "status": "done"}
                    )
                except (T2ScreenError, InsufficientDecayError) as exc:
                    rows.append(
                        {"r_bath": r_bath, "r_dipole": r_dipole, "order": order,
                         "status": "failed", "reason": str(exc)}
                    )
    return rows
