"""Command-line pipeline: decompose, cluster, metrics, regress, synth, ami.

Every subcommand writes deterministic delimited-text outputs plus a
manifest.json capturing the configuration, its hash, seeds, tolerances, and
library versions, so a rerun with the same manifest reproduces the outputs
byte for byte. Fatal errors print a machine-readable JSON report to stderr
and exit nonzero; recoverable conditions (empty networks, per-model
regression failures) are reported and skipped.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import sklearn

import hodgeflow
from hodgeflow.cluster import (
    AMI_NORMALIZER,
    HARMONIC_METHOD_NOTE,
    EdgeClustering,
    ProviderGeo,
    adjusted_mutual_information,
    common_edges,
    geo_kmeans,
    harmonic_cluster,
    system_pair_clusters,
    write_ami_report,
    write_clusters,
)
from hodgeflow.complexes import antisymmetrize, betti, build_clique_complex, complex_summary
from hodgeflow.hodge import (
    SolverConvergenceError,
    decompose,
    harmonic_basis,
    write_decomposition,
)
from hodgeflow.ingest import (
    REGION_SCOPES,
    StaticGeocoder,
    assemble_networks,
    geocode,
    parse_crosswalk,
    parse_edges,
    parse_providers,
)
from hodgeflow.metrics import (
    metrics_table,
    read_region_metrics,
    region_metrics,
    write_group_summaries,
    write_histograms,
    write_region_metrics,
)
from hodgeflow.regress import PanelRow, fit_ols, format_model_table, wald_flow_test
from hodgeflow.synth import write_synthetic_inputs

WEAK_ROW_NORM = 1e-10  # mirrors the clustering module's weak-row cutoff


class FatalError(Exception):
    """Error that aborts a subcommand; rendered as JSON on stderr."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


def _require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise FatalError(f"missing required flag {flag}", flag=flag)
    p = Path(path)
    if not p.is_file():
        raise FatalError(f"input file not found: {p}", path=str(p), flag=flag)
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", str(text))


def _versions() -> dict:
    return {
        "hodgeflow": hodgeflow.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
    }


def _write_manifest(out: Path, command: str, config: dict, extra: dict | None = None) -> None:
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _warn(message: str) -> None:
    print(message, file=sys.stderr)


# ----------------------------------------------------------- shared ingestion


def _load_networks(args):
    edges_path = _require_file(args.edges, "--edges")
    providers_path = _require_file(args.providers, "--providers")
    parsed_edges = parse_edges(edges_path)
    parsed_providers = parse_providers(providers_path)
    for err in parsed_edges.errors:
        _warn(f"edge row rejected (line {err.line}): {err.message}")
    for err in parsed_providers.errors:
        _warn(f"provider row rejected (line {err.line}): {err.message}")
    crosswalk = None
    if args.crosswalk:
        crosswalk = parse_crosswalk(_require_file(args.crosswalk, "--crosswalk"))
    providers = parsed_providers.records
    cache_path = getattr(args, "geocode_cache", None) or os.environ.get("HODGEFLOW_CACHE")
    if cache_path and Path(cache_path).exists():
        filled = geocode(providers, StaticGeocoder({}), cache_path)
        providers = filled.providers
        if filled.failures:
            _warn(f"{filled.failures} provider address(es) not in the geocode cache")
    assembly = assemble_networks(
        parsed_edges.records,
        providers,
        region_scope=args.scope,
        crosswalk=crosswalk,
        excluded_taxonomies=frozenset(
            t for t in (args.exclude_taxonomies or "").split(",") if t
        ),
    )
    report = {
        "ingest": assembly.counts(),
        "rejected_edge_rows": len(parsed_edges.errors),
        "rejected_provider_rows": len(parsed_providers.errors),
    }
    return assembly, providers, report


def _run_jobs(jobs: int, keys, worker):
    """Run worker over keys in a bounded pool; results keyed for ordered writes."""
    if jobs <= 1:
        return {key: worker(key) for key in keys}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {key: pool.submit(worker, key) for key in keys}
        return {key: future.result() for key, future in futures.items()}


# ---------------------------------------------------------------- subcommands


def cmd_decompose(args) -> int:
    out = _out_dir(args)
    assembly, _, report = _load_networks(args)
    keys = sorted(assembly.networks)

    def worker(key):
        network = assembly.networks[key]
        support, flow = antisymmetrize(network)
        if not support:
            return None
        cx = build_clique_complex(support)
        decomposition = decompose(
            flow, cx, mode=args.mode, solver_tolerance=args.tol_solve
        )
        return cx, flow, decomposition

    try:
        results = _run_jobs(args.jobs, keys, worker)
    except SolverConvergenceError as err:
        raise FatalError(
            f"decomposition solver failed: {err}",
            iterations=err.iterations,
            residual=err.residual,
        ) from err

    metric_rows = []
    skipped = []
    for key in keys:
        region, year = key
        result = results[key]
        if result is None:
            skipped.append(f"{region}/{year}")
            _warn(f"region {region} year {year}: empty network, skipped")
            continue
        cx, flow, decomposition = result
        stem = f"{_safe_name(region)}_{year}"
        with open(out / f"{stem}_summary.txt", "w", encoding="utf-8", newline="") as handle:
            handle.write(complex_summary(cx, betti(cx)))
        write_decomposition(out / f"{stem}_decomposition.csv", cx, flow, decomposition)
        metric_rows.append(region_metrics(decomposition, flow, region, year))
    write_region_metrics(out / "metrics.csv", metric_rows)
    _write_manifest(
        out,
        "decompose",
        _config_of(args, "edges", "providers", "crosswalk", "scope", "mode",
                   "tol_solve", "tol_eigen", "jobs"),
        {"skipped": sorted(skipped), **report},
    )
    return 0


def _geo_map(providers) -> dict:
    geo = {}
    for p in providers:
        if p.latitude is not None and p.longitude is not None:
            geo[p.id] = ProviderGeo(p.id, p.latitude, p.longitude, p.system_id)
    return geo


def cmd_cluster(args) -> int:
    out = _out_dir(args)
    assembly, providers, report = _load_networks(args)
    geo = _geo_map(providers)
    keys = sorted(assembly.networks)

    def worker(key):
        region, year = key
        tag = f"{region}/{year}"
        notes = []
        network = assembly.networks[key]
        support, _ = antisymmetrize(network)
        if not support:
            notes.append(f"{tag}: empty network, skipped")
            return [], [], notes, None
        cx = build_clique_complex(support)
        edges_by_id = [cx.edge_endpoints(e) for e in range(cx.n1)]
        clusterings: list[EdgeClustering] = []

        basis = harmonic_basis(cx, mode=args.mode, eigen_tolerance=args.tol_eigen)
        if basis.dim == 0:
            notes.append(
                f"{tag}: no 1-dimensional holes (beta1 = 0), harmonic clustering skipped"
            )
        else:
            if basis.warning:
                notes.append(f"{tag}: {basis.warning}")
            n_strong = int(
                (np.linalg.norm(basis.vectors, axis=1) >= WEAK_ROW_NORM).sum()
            )
            k_harmonic = min(args.k, n_strong)
            if k_harmonic < args.k:
                notes.append(
                    f"{tag}: harmonic k reduced from {args.k} to {k_harmonic} "
                    f"({n_strong} edges carry harmonic signal)"
                )
            clusterings.append(harmonic_cluster(basis, k=k_harmonic, seed=args.seed))

        covered_geo = sum(1 for src, dst in edges_by_id if src in geo and dst in geo)
        if covered_geo >= 1:
            k_geo = min(args.k, covered_geo)
            if k_geo < args.k:
                notes.append(
                    f"{tag}: geo k reduced from {args.k} to {k_geo} "
                    f"({covered_geo} geocoded edges)"
                )
            clusterings.append(geo_kmeans(edges_by_id, geo, k=k_geo, seed=args.seed))
        else:
            notes.append(f"{tag}: no geocoded edges, geo clustering skipped")

        system_clusters = system_pair_clusters(edges_by_id, geo)
        if len(system_clusters.edge_indices):
            clusterings.append(system_clusters)
        else:
            notes.append(f"{tag}: no system ids, system clustering skipped")

        ami_rows = []
        for i in range(len(clusterings)):
            for j in range(i + 1, len(clusterings)):
                a, b = clusterings[i], clusterings[j]
                shared, _, _ = common_edges(a, b)
                if shared.size < 2:
                    notes.append(
                        f"{tag}: fewer than 2 common edges for "
                        f"{a.method} vs {b.method}, AMI skipped"
                    )
                    continue
                ami_rows.append(
                    {
                        "region": region,
                        "year": year,
                        "method_a": a.method,
                        "method_b": b.method,
                        "n_common": int(shared.size),
                        "ami": adjusted_mutual_information(a, b),
                    }
                )
        return clusterings, ami_rows, notes, edges_by_id

    results = _run_jobs(args.jobs, keys, worker)

    notes = []
    ami_rows = []
    for key in keys:
        region, year = key
        clusterings, key_ami, key_notes, edges_by_id = results[key]
        notes.extend(key_notes)
        ami_rows.extend(key_ami)
        for note in key_notes:
            if "skipped" in note:
                _warn(note)
        if clusterings:
            stem = f"{_safe_name(region)}_{year}"
            write_clusters(out / f"{stem}_clusters.csv", clusterings, edges_by_id)

    with open(out / "ami.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region", "year", "method_a", "method_b", "n_common", "ami"])
        for row in ami_rows:
            writer.writerow(
                [
                    row["region"],
                    row["year"],
                    row["method_a"],
                    row["method_b"],
                    row["n_common"],
                    repr(float(row["ami"])),
                ]
            )
    _write_manifest(
        out,
        "cluster",
        _config_of(args, "edges", "providers", "crosswalk", "scope", "mode",
                   "k", "seed", "tol_eigen", "jobs"),
        {
            "notes": sorted(notes),
            "method_notes": [
                HARMONIC_METHOD_NOTE,
                f"ami normalizer: {AMI_NORMALIZER} mean of entropies",
            ],
            **report,
        },
    )
    return 0


def cmd_metrics(args) -> int:
    out = _out_dir(args)
    metrics_path = _require_file(args.metrics_file, "--metrics-file")
    rows = read_region_metrics(metrics_path)
    if not rows:
        raise FatalError(f"metrics file has no rows: {metrics_path}", path=str(metrics_path))
    groups = None
    if args.groups:
        groups_path = _require_file(args.groups, "--groups")
        groups = {}
        with open(groups_path, encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            for record in reader:
                groups[record["region_id"]] = record["group"]
    summaries, histograms = metrics_table(rows, groups=groups, bin_width=args.bin_width)
    write_group_summaries(out / "summary.csv", summaries)
    write_histograms(out / "histogram.csv", histograms)
    _write_manifest(
        out,
        "metrics",
        _config_of(args, "metrics_file", "groups", "bin_width"),
        {"sd_convention": "population", "n_rows": len(rows)},
    )
    return 0


def _read_panel(path: Path, outcome: str, flow_cols: list[str], control_cols: list[str]):
    rows = []
    dropped = 0
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        fieldnames = reader.fieldnames or ()
        present_flows = [c for c in flow_cols if c in fieldnames]
        if present_flows and len(present_flows) < len(flow_cols):
            raise FatalError(
                f"panel file has only some flow column(s): {present_flows} of {flow_cols}",
                path=str(path),
            )
        has_flows = bool(present_flows)
        missing = [c for c in ["region", "year", outcome, *control_cols] if c not in fieldnames]
        if missing:
            raise FatalError(
                f"panel file is missing column(s): {missing}", path=str(path), columns=missing
            )
        for record in reader:
            try:
                flows = [float(record[c]) for c in flow_cols] if has_flows else [0.0, 0.0, 0.0]
            except ValueError:
                dropped += 1
                continue
            raw_outcome = (record[outcome] or "").strip()
            outcome_value = float(raw_outcome) if raw_outcome else None
            controls = {}
            usable = True
            for c in control_cols:
                raw = (record[c] or "").strip()
                if not raw:
                    usable = False
                    break
                controls[c] = float(raw)
            if not usable:
                dropped += 1
                continue
            rows.append(
                PanelRow(
                    region=record["region"],
                    year=int(record["year"]),
                    outcome=outcome_value,
                    gradient_per_edge=flows[0],
                    harmonic_per_edge=flows[1],
                    curl_per_edge=flows[2],
                    controls=controls,
                )
            )
    return rows, dropped, has_flows


def cmd_regress(args) -> int:
    out = _out_dir(args)
    panel_path = _require_file(args.panel, "--panel")
    outcomes = [c for c in args.outcomes.split(",") if c]
    if not outcomes:
        raise FatalError("no outcome columns given via --outcomes")
    control_cols = [c for c in (args.controls or "").split(",") if c]
    flow_cols = [c for c in args.flow_cols.split(",") if c]
    if len(flow_cols) != 3:
        raise FatalError(f"--flow-cols needs exactly 3 columns, got {flow_cols}")

    tables = []
    coefficient_rows = []
    failures = []
    for outcome in outcomes:
        try:
            rows, dropped, has_flows = _read_panel(panel_path, outcome, flow_cols, control_cols)
            result = fit_ols(rows, controls=tuple(control_cols), include_flows=has_flows)
            wald = wald_flow_test(result) if has_flows else None
        except FatalError:
            raise
        except Exception as err:  # per-model isolation
            failures.append({"outcome": outcome, "error": str(err)})
            _warn(f"model for outcome {outcome!r} failed: {err}")
            continue
        tables.append(format_model_table(result, wald, label=outcome))
        if dropped:
            _warn(f"outcome {outcome!r}: {dropped} row(s) dropped for missing regressors")
        for name in result.param_names:
            coefficient_rows.append(
                [
                    outcome,
                    name,
                    repr(result.coefficient(name)),
                    repr(result.std_error(name)),
                ]
            )
        coefficient_rows.append([outcome, "__r_squared__", repr(result.r_squared), ""])
        coefficient_rows.append([outcome, "__n__", str(result.n_obs), ""])
        if wald is not None:
            coefficient_rows.append(
                [outcome, "__wald__", repr(wald.f_statistic), repr(wald.p_value)]
            )

    with open(out / "regression.txt", "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(tables))
        if failures:
            handle.write("\nFailed models:\n")
            for failure in failures:
                handle.write(f"  {failure['outcome']}: {failure['error']}\n")
    with open(out / "coefficients.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["outcome", "param", "estimate", "std_error"])
        writer.writerows(coefficient_rows)
    _write_manifest(
        out,
        "regress",
        _config_of(args, "panel", "outcomes", "controls", "flow_cols"),
        {"failed_models": failures},
    )
    return 0 if len(failures) < len(outcomes) else 1


def cmd_synth(args) -> int:
    out = _out_dir(args)
    years = tuple(int(y) for y in args.years.split(","))
    written = write_synthetic_inputs(
        out,
        regions=args.regions,
        nodes=args.nodes,
        edge_probability=args.edge_prob,
        years=years,
        seed=args.seed,
        max_weight=args.max_weight,
    )
    _write_manifest(
        out,
        "synth",
        _config_of(args, "regions", "nodes", "edge_prob", "years", "seed", "max_weight"),
        {"n_edge_rows": written["n_edge_rows"]},
    )
    return 0


def _read_cluster_file(path: Path, method: str | None):
    by_method: dict[str, dict[int, int]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        needed = {"edge_index", "label", "method"}
        missing = needed - set(reader.fieldnames or ())
        if missing:
            raise FatalError(
                f"cluster file is missing column(s): {sorted(missing)}", path=str(path)
            )
        for record in reader:
            by_method.setdefault(record["method"], {})[int(record["edge_index"])] = int(
                record["label"]
            )
    if not by_method:
        raise FatalError(f"cluster file has no rows: {path}", path=str(path))
    if method is None:
        if len(by_method) > 1:
            raise FatalError(
                f"cluster file {path} holds methods {sorted(by_method)}; pick one with "
                "--method-a/--method-b"
            )
        method = next(iter(by_method))
    if method not in by_method:
        raise FatalError(f"method {method!r} not present in {path}", path=str(path))
    assignments = by_method[method]
    indices = np.array(sorted(assignments))
    labels = np.array([assignments[i] for i in indices])
    dense = {label: i for i, label in enumerate(sorted(set(labels.tolist())))}
    labels = np.array([dense[label] for label in labels])
    return EdgeClustering(
        labels=labels, k=len(dense), method=method, edge_indices=indices
    )


def cmd_ami(args) -> int:
    a = _read_cluster_file(_require_file(args.a, "--a"), args.method_a)
    b = _read_cluster_file(_require_file(args.b, "--b"), args.method_b)
    shared, _, _ = common_edges(a, b)
    if shared.size < 2:
        raise FatalError(
            f"need at least 2 edges in common, got {shared.size}",
            n_common=int(shared.size),
        )
    value = adjusted_mutual_information(a, b)
    row = {
        "method_a": a.method,
        "method_b": b.method,
        "n_common": int(shared.size),
        "ami": value,
    }
    print(f"{a.method},{b.method},{shared.size},{value!r}")
    if args.out:
        out = _out_dir(args)
        write_ami_report(out / "ami.csv", [row])
        _write_manifest(out, "ami", _config_of(args, "a", "b", "method_a", "method_b"), row)
    return 0


# --------------------------------------------------------------------- parser


def _config_of(args, *names) -> dict:
    return {name: getattr(args, name) for name in names}


def _add_ingest_flags(sub):
    sub.add_argument("--edges", required=True, help="edge-list CSV (from_id,to_id,weight,year)")
    sub.add_argument("--providers", required=True, help="provider CSV")
    sub.add_argument("--crosswalk", help="region crosswalk CSV (zip_or_fips,region_id,scope)")
    sub.add_argument("--scope", choices=REGION_SCOPES, default="hsa")
    sub.add_argument(
        "--exclude-taxonomies", default="", help="comma-separated taxonomy deny list"
    )
    sub.add_argument(
        "--geocode-cache",
        help="geocode cache file (default: HODGEFLOW_CACHE environment variable)",
    )
    sub.add_argument("--jobs", type=int, default=1, help="worker pool size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hodgeflow",
        description="Decompose directed flow networks into gradient, curl, and harmonic parts.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("decompose", help="per-region flow decomposition and metrics")
    _add_ingest_flags(p)
    p.add_argument("--mode", choices=("normalized", "unnormalized"), default="normalized")
    p.add_argument("--tol-solve", type=float, default=1e-10, dest="tol_solve")
    p.add_argument("--tol-eigen", type=float, default=1e-8, dest="tol_eigen")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("cluster", help="harmonic, geographic, and system clusterings + AMI")
    _add_ingest_flags(p)
    p.add_argument("--mode", choices=("normalized", "unnormalized"), default="normalized")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol-eigen", type=float, default=1e-8, dest="tol_eigen")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("metrics", help="summaries and histograms of region metrics")
    p.add_argument("--metrics-file", required=True, dest="metrics_file")
    p.add_argument("--groups", help="CSV mapping region_id to group")
    p.add_argument("--bin-width", type=float, default=0.05, dest="bin_width")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("regress", help="outcome regressions with clustered errors")
    p.add_argument("--panel", required=True)
    p.add_argument("--outcomes", required=True, help="comma-separated outcome columns")
    p.add_argument("--controls", default="", help="comma-separated control columns")
    p.add_argument(
        "--flow-cols",
        default="g_bar,h_bar,r_bar",
        dest="flow_cols",
        help="columns holding the gradient, harmonic, curl measures (in that order)",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("synth", help="write a synthetic edges/providers dataset")
    p.add_argument("--regions", type=int, default=2)
    p.add_argument("--nodes", type=int, default=12)
    p.add_argument("--edge-prob", type=float, default=0.35, dest="edge_prob")
    p.add_argument("--years", default="2017")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-weight", type=int, default=20, dest="max_weight")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ami", help="adjusted mutual information of two cluster files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--method-a", dest="method_a")
    p.add_argument("--method-b", dest="method_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ami)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FatalError as err:
        report = {"error": str(err)}
        report.update(err.details)
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
