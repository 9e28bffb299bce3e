"""Network-level flow composition measures per region and year.

Each decomposed network is reduced to signed component sums over its edges
plus per-edge magnitudes: the absolute value of each component sum divided
by the edge count. Net flow is the sum of the raw edge flows, which equals
the sum of the three component sums by linearity. Batch aggregation emits
group means, population standard deviations, and histogram bin counts for
external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from hodgeflow.complexes import EdgeFlow
from hodgeflow.hodge import HodgeDecomposition

__all__ = [
    "RegionMetrics",
    "GroupSummary",
    "HistogramBin",
    "region_metrics",
    "metrics_from_sums",
    "metrics_table",
    "write_region_metrics",
    "read_region_metrics",
    "write_group_summaries",
    "write_histograms",
]

MEASURES = ("gradient_per_edge", "harmonic_per_edge", "curl_per_edge")

METRICS_COLUMNS = [
    "region", "year", "E", "c",
    "g_sum", "h_sum", "r_sum",
    "g_bar", "h_bar", "r_bar",
]


@dataclass(frozen=True)
class RegionMetrics:
    """Flow composition of one region-year network."""

    region: str
    year: int
    n_edges: int
    net_flow: float
    gradient_sum: float
    harmonic_sum: float
    curl_sum: float
    gradient_per_edge: float
    harmonic_per_edge: float
    curl_per_edge: float


@dataclass(frozen=True)
class GroupSummary:
    group: str
    measure: str
    mean: float
    sd: float
    count: int


@dataclass(frozen=True)
class HistogramBin:
    group: str
    measure: str
    lower: float
    upper: float
    count: int


def metrics_from_sums(
    region: str,
    year: int,
    n_edges: int,
    gradient_sum: float,
    harmonic_sum: float,
    curl_sum: float,
) -> RegionMetrics:
    """Metrics from precomputed component sums; per-edge values take the
    absolute value after summation."""
    if n_edges < 1:
        raise ValueError(f"empty network: region {region!r} year {year} has no edges")
    gradient_sum = float(gradient_sum)
    harmonic_sum = float(harmonic_sum)
    curl_sum = float(curl_sum)
    return RegionMetrics(
        region=region,
        year=year,
        n_edges=int(n_edges),
        net_flow=gradient_sum + harmonic_sum + curl_sum,
        gradient_sum=gradient_sum,
        harmonic_sum=harmonic_sum,
        curl_sum=curl_sum,
        gradient_per_edge=abs(gradient_sum) / n_edges,
        harmonic_per_edge=abs(harmonic_sum) / n_edges,
        curl_per_edge=abs(curl_sum) / n_edges,
    )


def region_metrics(
    decomposition: HodgeDecomposition, flow: EdgeFlow, region: str, year: int
) -> RegionMetrics:
    """Reduce one decomposition to network-level composition measures."""
    n_edges = len(flow)
    if n_edges < 1:
        raise ValueError(f"empty network: region {region!r} year {year} has no edges")
    return metrics_from_sums(
        region=region,
        year=year,
        n_edges=n_edges,
        gradient_sum=float(decomposition.gradient.values.sum()),
        harmonic_sum=float(decomposition.harmonic.values.sum()),
        curl_sum=float(decomposition.curl.values.sum()),
    )


def metrics_table(
    batch: Sequence[RegionMetrics],
    groups: Mapping[str, str] | None = None,
    bin_width: float = 0.05,
) -> tuple[list[GroupSummary], list[HistogramBin]]:
    """Group means, population SDs, and histogram bin counts per measure.

    ``groups`` maps region id to an aggregation group (default: everything
    into "all"; unmapped regions fall into "other"). Histogram bins share a
    common [0, max] range per measure so groups are comparable.
    """
    if not batch:
        raise ValueError("metrics batch is empty")
    if bin_width <= 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    group_of = (lambda region: groups.get(region, "other")) if groups else (lambda region: "all")

    by_group: dict[str, list[RegionMetrics]] = {}
    for row in batch:
        by_group.setdefault(group_of(row.region), []).append(row)

    summaries: list[GroupSummary] = []
    histograms: list[HistogramBin] = []
    edges_per_measure = {}
    for measure in MEASURES:
        top = max(getattr(row, measure) for row in batch)
        n_bins = max(1, int(np.ceil(top / bin_width))) if top > 0 else 1
        edges_per_measure[measure] = np.arange(n_bins + 1) * bin_width

    for group in sorted(by_group):
        rows = by_group[group]
        for measure in MEASURES:
            values = np.array([getattr(row, measure) for row in rows])
            summaries.append(
                GroupSummary(
                    group=group,
                    measure=measure,
                    mean=float(values.mean()),
                    sd=float(values.std()),  # population SD
                    count=len(values),
                )
            )
            bin_edges = edges_per_measure[measure]
            counts, _ = np.histogram(values, bins=bin_edges)
            for b, count in enumerate(counts):
                histograms.append(
                    HistogramBin(
                        group=group,
                        measure=measure,
                        lower=float(bin_edges[b]),
                        upper=float(bin_edges[b + 1]),
                        count=int(count),
                    )
                )
    return summaries, histograms


# -------------------------------------------------------------------- file I/O


def _handle(destination):
    if hasattr(destination, "write"):
        return destination, False
    return open(destination, "w", encoding="utf-8", newline=""), True


def write_region_metrics(destination, rows: Iterable[RegionMetrics]) -> None:
    """One row per region-year with the standard metric columns."""
    handle, owned = _handle(destination)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.region,
                    row.year,
                    row.n_edges,
                    repr(row.net_flow),
                    repr(row.gradient_sum),
                    repr(row.harmonic_sum),
                    repr(row.curl_sum),
                    repr(row.gradient_per_edge),
                    repr(row.harmonic_per_edge),
                    repr(row.curl_per_edge),
                ]
            )
    finally:
        if owned:
            handle.close()


def read_region_metrics(path) -> list[RegionMetrics]:
    """Read back a region metrics file written by ``write_region_metrics``."""
    rows: list[RegionMetrics] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(METRICS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"metrics file is missing column(s): {sorted(missing)}")
        for record in reader:
            rows.append(
                RegionMetrics(
                    region=record["region"],
                    year=int(record["year"]),
                    n_edges=int(record["E"]),
                    net_flow=float(record["c"]),
                    gradient_sum=float(record["g_sum"]),
                    harmonic_sum=float(record["h_sum"]),
                    curl_sum=float(record["r_sum"]),
                    gradient_per_edge=float(record["g_bar"]),
                    harmonic_per_edge=float(record["h_bar"]),
                    curl_per_edge=float(record["r_bar"]),
                )
            )
    return rows


def write_group_summaries(destination, summaries: Iterable[GroupSummary]) -> None:
    handle, owned = _handle(destination)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group", "measure", "mean", "sd", "count"])
        for s in summaries:
            writer.writerow([s.group, s.measure, repr(s.mean), repr(s.sd), s.count])
    finally:
        if owned:
            handle.close()


def write_histograms(destination, bins: Iterable[HistogramBin]) -> None:
    handle, owned = _handle(destination)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group", "measure", "lower", "upper", "count"])
        for b in bins:
            writer.writerow([b.group, b.measure, repr(b.lower), repr(b.upper), b.count])
    finally:
        if owned:
            handle.close()
