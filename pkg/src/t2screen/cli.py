"""Command-line interface.

    t2screen t2 compute STRUCTURE      CCE + window-controlled fit, one material
    t2screen t2 model STRUCTURE        closed-form model report (JSON)
    t2screen screen monolayers         stage-one batch over a corpus
    t2screen screen hetero             stage-two batch over (host, substrate, facet)
    t2screen hetero build              build one lattice-matched stack
    t2screen fit-model                 fit model exponents to a simulated dataset
    t2screen converge STRUCTURE        r_bath / r_dipole / order sweep
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from .crystal import load_vdw_radii, parse_structure, write_structure
from .errors import T2ScreenError
from .hetero import SurfaceCell, cleave, stack, zur_mcgill_match
from .pipeline import (
    ResultStore,
    ScreenConfig,
    TierParams,
    compute_t2_cce,
    converge_sweep,
    default_substrate_paths,
    rank_and_export,
    screen_heterostructures,
    screen_monolayers,
    write_curve_file,
)
from .t2model import (
    Layer2DRecord,
    StackRecord,
    fit_alpha2d,
    fit_eta_hs,
    model_t2_structure,
)


@click.group()
def main():
    """Nuclear-spin-bath T2 screening for 2D materials and heterostructures."""


def _load_config(config_path, **overrides) -> ScreenConfig:
    cfg = ScreenConfig.from_file(config_path) if config_path else ScreenConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **clean) if clean else cfg


@main.group()
def t2():
    """Single-material coherence-time computations."""


@t2.command("compute")
@click.argument("structure_file", type=click.Path(exists=True))
@click.option("--r-bath", default=50.0, show_default=True, help="bath cutoff radius (A)")
@click.option("--r-dipole", default=15.0, show_default=True, help="cluster cutoff radius (A)")
@click.option("--order", default=2, show_default=True, help="CCE order")
@click.option("--seeds", default=40, show_default=True, help="bath realizations to average")
@click.option("--seed-base", default=0, show_default=True)
@click.option("--b-field", default=5.0, show_default=True, help="field along z (T)")
@click.option("--t-max0", type=float, default=None, help="initial window (ms); default from the model")
@click.option("--max-rounds", default=8, show_default=True)
@click.option("--workers", default=1, show_default=True, help="parallel seed evaluation")
@click.option("--out", type=click.Path(), default=None, help="write curve + fit JSON here")
def t2_compute(structure_file, r_bath, r_dipole, order, seeds, seed_base, b_field,
               t_max0, max_rounds, workers, out):
    """Hahn-echo T2 of one structure via cluster-factorized propagation."""
    structure = parse_structure(structure_file)
    tier = TierParams(r_bath=r_bath, r_dipole=r_dipole, order=order, seeds=seeds)
    outcome = compute_t2_cce(
        structure, tier, b_field=(0.0, 0.0, b_field), seed_base=seed_base,
        t_max0_ms=t_max0, max_rounds=max_rounds, workers=workers,
    )
    result = {
        "id": structure.metadata.source_id or Path(structure_file).stem,
        "t2_ms": outcome.fit_t2_ms,
        "n_exponent": outcome.n_exponent,
        "rms_residual": outcome.rms_residual,
        "converged": outcome.converged,
        "rounds_used": outcome.rounds_used,
        "window_status": outcome.window_status,
    }
    click.echo(json.dumps(result, indent=1))
    if out:
        write_curve_file(outcome.curve, out, result)


@t2.command("model")
@click.argument("structure_file", type=click.Path(exists=True))
@click.option("--substrate", type=click.Path(exists=True), default=None,
              help="3D substrate file: report the stacked-system model instead")
@click.option("--out", type=click.Path(), default=None, help="write the JSON report here")
def t2_model(structure_file, substrate, out):
    """Closed-form model T2 report for a structure (JSON to stdout)."""
    structure = parse_structure(structure_file)
    report = model_t2_structure(structure)
    if substrate:
        from .t2model import model_t2_heterostructure_report

        sub_report = model_t2_structure(parse_structure(substrate))
        report = model_t2_heterostructure_report(report, sub_report)
    doc = report.to_dict()
    click.echo(json.dumps(doc, indent=1))
    if out:
        Path(out).write_text(json.dumps(doc, indent=1))


@main.group()
def screen():
    """Batch screening stages."""


@screen.command("monolayers")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file (keys mirror ScreenConfig)")
@click.option("--corpus", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(["cce", "model"]), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--force", is_flag=True, default=False, help="recompute completed records")
@click.option("--include-hydrated", is_flag=True, default=False,
              help="do not skip hydrated-parent structural models")
def screen_monolayers_cmd(config_path, corpus, out_dir, method, workers, force,
                          include_hydrated):
    """Filter a corpus and compute T2 for every surviving monolayer."""
    cfg = _load_config(config_path, corpus=corpus, out_dir=out_dir, method=method,
                       workers=workers)
    if force:
        cfg = replace(cfg, force=True)
    if include_hydrated:
        cfg = replace(cfg, exclude_hydrated=False)
    store = screen_monolayers(cfg)
    summary = rank_and_export(store, cfg.t2_threshold_ms, cfg.out_dir)
    click.echo(json.dumps(summary, indent=1))
    sys.exit(0 if summary["n_failed"] == 0 else 2)


@screen.command("hetero")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--hosts", type=str, required=True,
              help="comma-separated host structure files")
@click.option("--substrates", type=str, default=None,
              help="comma-separated substrate files (default: shipped set)")
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(["cce", "model"]), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--no-substrate-refs", is_flag=True, default=False)
def screen_hetero_cmd(config_path, hosts, substrates, out_dir, method, workers,
                      no_substrate_refs):
    """Build and screen lattice-matched host/substrate stacks."""
    cfg = _load_config(config_path, out_dir=out_dir, method=method, workers=workers)
    host_list = [h.strip() for h in hosts.split(",") if h.strip()]
    sub_list = (
        [s.strip() for s in substrates.split(",") if s.strip()]
        if substrates else None
    )
    store = screen_heterostructures(
        cfg, host_list, sub_list,
        include_substrate_references=not no_substrate_refs,
    )
    summary = rank_and_export(store, cfg.t2_threshold_ms, cfg.out_dir)
    click.echo(json.dumps(summary, indent=1))
    sys.exit(0 if summary["n_failed"] == 0 else 2)


@main.group("hetero")
def hetero_group():
    """Heterostructure construction."""


@hetero_group.command("build")
@click.option("--host", type=click.Path(exists=True), required=True)
@click.option("--substrate", type=click.Path(exists=True), required=True)
@click.option("--miller", default="0,0,1", show_default=True)
@click.option("--slab-thickness", default=22.0, show_default=True)
@click.option("--strain-tol", default=0.05, show_default=True)
@click.option("--max-area", default=500.0, show_default=True)
@click.option("--gap", type=float, default=None, help="override the vdW interlayer gap (A)")
@click.option("--out", type=click.Path(), required=True, help="output structure JSON")
@click.option("--report", type=click.Path(), default=None, help="match report JSON")
def hetero_build(host, substrate, miller, slab_thickness, strain_tol, max_area,
                 gap, out, report):
    """Cleave, match and stack one heterostructure; write it as structure-JSON."""
    host_s = parse_structure(host)
    sub_s = parse_structure(substrate)
    facet = tuple(int(x) for x in miller.split(","))
    slab = cleave(sub_s, facet, slab_thickness)
    matches = zur_mcgill_match(
        SurfaceCell.from_structure(host_s),
        SurfaceCell.from_structure(slab, facet),
        strain_tol, max_area,
    )
    if not matches:
        raise click.ClickException("no commensurate match within bounds")
    hs = stack(host_s, slab, matches[0], gap_override=gap, facet=facet)
    write_structure(hs.structure, out)
    doc = {
        "host": hs.host_id,
        "substrate": hs.substrate_id,
        "facet": list(facet),
        "interlayer_gap_A": hs.interlayer_gap,
        "m_2d": hs.match.m_2d.tolist(),
        "m_sub": hs.match.m_sub.tolist(),
        "strain": list(hs.match.strain),
        "max_principal_strain": hs.match.max_principal_strain,
        "area_A2": hs.match.area,
        "atom_count": len(hs.structure.sites),
        "n_matches_found": len(matches),
        "qubit_site_index": hs.qubit_site_index,
    }
    click.echo(json.dumps(doc, indent=1))
    if report:
        Path(report).write_text(json.dumps(doc, indent=1))


@main.command("fit-model")
@click.option("--dataset", type=click.Path(exists=True), required=True,
              help="CSV dataset (see --which for the expected columns)")
@click.option("--which", type=click.Choice(["alpha2d", "eta-hs"]), required=True)
@click.option("--out", type=click.Path(), default=None)
def fit_model_cmd(dataset, which, out):
    """Fit model exponents to simulated T2 data.

    alpha2d expects rows: w_cm, t2_s, then (g, I, n_cm3) triples;
    eta-hs expects rows: t2_2d_s, t2_sub_s, t2_hs_s.
    """
    rows = []
    with open(dataset) as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            rows.append([float(x) for x in row])
    if which == "alpha2d":
        records = []
        for row in rows:
            w_cm, t2_s, *rest = row
            isotopes = tuple(
                (rest[i], rest[i + 1], rest[i + 2]) for i in range(0, len(rest), 3)
            )
            records.append(Layer2DRecord(isotopes=isotopes, w_cm=w_cm, t2_s=t2_s))
        fit = fit_alpha2d(records)
    else:
        records = [StackRecord(*row[:3]) for row in rows]
        fit = fit_eta_hs(records)
    doc = {
        "values": fit.values,
        "rms_log_residual": fit.rms_log_residual,
        "warnings": list(fit.warnings),
        "n_records": len(records),
    }
    click.echo(json.dumps(doc, indent=1))
    if out:
        Path(out).write_text(json.dumps(doc, indent=1))


@main.command("converge")
@click.argument("structure_file", type=click.Path(exists=True))
@click.option("--r-bath", default="40,50,60", show_default=True)
@click.option("--r-dipole", default="10,15,20", show_default=True)
@click.option("--orders", default="2", show_default=True)
@click.option("--seeds", default=10, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV output")
def converge_cmd(structure_file, r_bath, r_dipole, orders, seeds, out):
    """Convergence sweep over the three cutoff parameters."""
    structure = parse_structure(structure_file)
    tier = TierParams(r_bath=50.0, r_dipole=15.0, order=2, seeds=seeds)
    rows = converge_sweep(
        structure,
        [float(x) for x in r_bath.split(",")],
        [float(x) for x in r_dipole.split(",")],
        [int(x) for x in orders.split(",")],
        tier,
    )
    click.echo(json.dumps(rows, indent=1))
    if out:
        with open(out, "w") as fh:
            fh.write("r_bath,r_dipole,order,t2_ms,n_exponent,status\n")
            for r in rows:
                fh.write(
                    f"{r['r_bath']},{r['r_dipole']},{r['order']},"
                    f"{r.get('t2_ms', '')},{r.get('n_exponent', '')},{r['status']}\n"
                )


if __name__ == "__main__":
    main()
