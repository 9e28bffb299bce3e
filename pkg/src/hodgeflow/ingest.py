"""File ingestion: edge lists, provider tables, crosswalks, and geocoding.

All inputs are UTF-8 CSV with a header row. Malformed rows never abort a
parse; they are collected with line numbers into the result's error list.
Network assembly filters edges in a fixed precedence order (unknown
endpoint, filtered provider, self-arc, cross-region) so every input row is
accounted for exactly once, and emits one FlowNetwork per region-year,
including zero-arc networks for regions whose edges were all dropped.

Geocoding goes through a pluggable callable behind an append-only file
cache; no vendor client is bundled. A static table geocoder is provided for
offline use and tests.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from hodgeflow.complexes import FlowNetwork

__all__ = [
    "EdgeRecord",
    "ProviderRecord",
    "RowError",
    "ParsedEdges",
    "ParsedProviders",
    "AssemblyResult",
    "GeocodeResult",
    "GeocodeTransportError",
    "StaticGeocoder",
    "REGION_SCOPES",
    "parse_edges",
    "parse_providers",
    "parse_crosswalk",
    "assemble_networks",
    "geocode",
    "read_geocode_cache",
]

logger = logging.getLogger(__name__)

REGION_SCOPES = ("hsa", "metro", "state")

EDGE_COLUMNS = ("from_id", "to_id", "weight", "year")
PROVIDER_COLUMNS = ("id", "address", "region_id", "lat", "lon", "system_id", "taxonomy", "entity_type")
CROSSWALK_COLUMNS = ("zip_or_fips", "region_id", "scope")


@dataclass(frozen=True)
class EdgeRecord:
    from_id: str
    to_id: str
    weight: float
    year: int


@dataclass(frozen=True)
class ProviderRecord:
    id: str
    address: str = ""
    region_id: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    system_id: str | None = None
    taxonomy: str | None = None
    entity_type: str = "individual"  # "individual" | "organizational"


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class ParsedEdges:
    records: list[EdgeRecord]
    errors: list[RowError]


@dataclass(frozen=True)
class ParsedProviders:
    records: list[ProviderRecord]
    errors: list[RowError]


@dataclass
class AssemblyResult:
    networks: dict  # (region, year) -> FlowNetwork
    retained: int = 0
    dropped_unknown_endpoint: int = 0
    dropped_filtered_provider: int = 0
    dropped_self_arc: int = 0
    dropped_cross_region: int = 0

    @property
    def total_accounted(self) -> int:
        return (
            self.retained
            + self.dropped_unknown_endpoint
            + self.dropped_filtered_provider
            + self.dropped_self_arc
            + self.dropped_cross_region
        )

    def counts(self) -> dict:
        return {
            "retained": self.retained,
            "dropped_unknown_endpoint": self.dropped_unknown_endpoint,
            "dropped_filtered_provider": self.dropped_filtered_provider,
            "dropped_self_arc": self.dropped_self_arc,
            "dropped_cross_region": self.dropped_cross_region,
        }


def _require_columns(fieldnames, required, what: str) -> None:
    missing = [c for c in required if c not in (fieldnames or ())]
    if missing:
        raise ValueError(f"{what} file is missing required column(s): {missing}")


def parse_edges(path) -> ParsedEdges:
    """Read an edge-list CSV; invalid rows go to the error report."""
    records: list[EdgeRecord] = []
    errors: list[RowError] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader.fieldnames, EDGE_COLUMNS, "edge")
        for row in reader:
            line = reader.line_num
            from_id = (row.get("from_id") or "").strip()
            to_id = (row.get("to_id") or "").strip()
            if not from_id or not to_id:
                errors.append(RowError(line, "empty node id"))
                continue
            try:
                weight = float(row["weight"])
            except (TypeError, ValueError):
                errors.append(RowError(line, f"non-numeric weight {row.get('weight')!r}"))
                continue
            if weight < 0:
                errors.append(RowError(line, f"negative weight {weight}"))
                continue
            try:
                year = int(row["year"])
            except (TypeError, ValueError):
                errors.append(RowError(line, f"non-integer year {row.get('year')!r}"))
                continue
            records.append(EdgeRecord(from_id, to_id, weight, year))
    return ParsedEdges(records, errors)


def _optional_float(raw, line: int, name: str, errors: list[RowError], low: float, high: float):
    text = (raw or "").strip()
    if not text:
        return None, True
    try:
        value = float(text)
    except ValueError:
        errors.append(RowError(line, f"non-numeric {name} {raw!r}"))
        return None, False
    if not low <= value <= high:
        errors.append(RowError(line, f"{name} {value} out of range [{low}, {high}]"))
        return None, False
    return value, True


def parse_providers(path) -> ParsedProviders:
    """Read a provider CSV; blank optional fields become None."""
    records: list[ProviderRecord] = []
    errors: list[RowError] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader.fieldnames, PROVIDER_COLUMNS, "provider")
        for row in reader:
            line = reader.line_num
            provider_id = (row.get("id") or "").strip()
            if not provider_id:
                errors.append(RowError(line, "empty provider id"))
                continue
            lat, ok_lat = _optional_float(row.get("lat"), line, "lat", errors, -90.0, 90.0)
            lon, ok_lon = _optional_float(row.get("lon"), line, "lon", errors, -180.0, 180.0)
            if not (ok_lat and ok_lon):
                continue
            entity = (row.get("entity_type") or "individual").strip().lower()
            if entity in ("1", "individual"):
                entity = "individual"
            elif entity in ("2", "organizational", "organization"):
                entity = "organizational"
            else:
                errors.append(RowError(line, f"unknown entity_type {row.get('entity_type')!r}"))
                continue
            records.append(
                ProviderRecord(
                    id=provider_id,
                    address=(row.get("address") or "").strip(),
                    region_id=(row.get("region_id") or "").strip() or None,
                    latitude=lat,
                    longitude=lon,
                    system_id=(row.get("system_id") or "").strip() or None,
                    taxonomy=(row.get("taxonomy") or "").strip() or None,
                    entity_type=entity,
                )
            )
    return ParsedProviders(records, errors)


def parse_crosswalk(path) -> dict:
    """Read a region crosswalk CSV into a {(source_key, scope): region_id} map."""
    mapping: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader.fieldnames, CROSSWALK_COLUMNS, "crosswalk")
        for row in reader:
            key = (row.get("zip_or_fips") or "").strip()
            region = (row.get("region_id") or "").strip()
            scope = (row.get("scope") or "").strip().lower()
            if key and region and scope:
                mapping[(key, scope)] = region
    return mapping


def assemble_networks(
    edges: Sequence[EdgeRecord],
    providers: Sequence[ProviderRecord],
    region_scope: str = "hsa",
    crosswalk: Mapping | None = None,
    excluded_taxonomies: frozenset = frozenset(),
) -> AssemblyResult:
    """Group edges into per-region-year flow networks with exact accounting.

    A provider participates when it is an individual, its taxonomy is not on
    the exclusion list, and its region resolves at the requested scope (the
    crosswalk maps the provider's native region id to coarser scopes). Each
    edge is dropped, in precedence order, when an endpoint is unknown, an
    endpoint's provider is filtered, it is a self-arc, or its endpoints'
    regions differ. Regions touched by any resolvable endpoint appear in the
    output even when all of their edges were dropped.
    """
    if region_scope not in REGION_SCOPES:
        raise ValueError(f"region scope must be one of {REGION_SCOPES}, got {region_scope!r}")

    provider_of = {p.id: p for p in providers}

    def region_at_scope(provider: ProviderRecord) -> str | None:
        if provider.region_id is None:
            return None
        if region_scope == "hsa":
            return provider.region_id
        if crosswalk is None:
            return None
        return crosswalk.get((provider.region_id, region_scope))

    def filtered(provider: ProviderRecord) -> bool:
        return (
            provider.entity_type != "individual"
            or (provider.taxonomy is not None and provider.taxonomy in excluded_taxonomies)
            or region_at_scope(provider) is None
        )

    result = AssemblyResult(networks={})
    arcs: dict[tuple[str, int], list] = {}
    nodes: dict[tuple[str, int], set] = {}

    for edge in edges:
        src = provider_of.get(edge.from_id)
        dst = provider_of.get(edge.to_id)
        if src is None or dst is None:
            result.dropped_unknown_endpoint += 1
            continue
        if filtered(src) or filtered(dst):
            result.dropped_filtered_provider += 1
            continue
        src_region, dst_region = region_at_scope(src), region_at_scope(dst)
        nodes.setdefault((src_region, edge.year), set()).add(src.id)
        nodes.setdefault((dst_region, edge.year), set()).add(dst.id)
        if edge.from_id == edge.to_id:
            result.dropped_self_arc += 1
            continue
        if src_region != dst_region:
            result.dropped_cross_region += 1
            continue
        arcs.setdefault((src_region, edge.year), []).append(
            (edge.from_id, edge.to_id, edge.weight)
        )
        result.retained += 1

    for key in sorted(nodes):
        region, year = key
        result.networks[key] = FlowNetwork(
            arcs=tuple(arcs.get(key, ())),
            region=region,
            year=year,
            nodes=frozenset(nodes[key]),
        )
    if result.dropped_self_arc:
        logger.warning("dropped %d self-arc edge row(s)", result.dropped_self_arc)
    return result


# ------------------------------------------------------------------- geocoding


class GeocodeTransportError(RuntimeError):
    """Transient transport failure raised by a geocoder backend."""


@dataclass(frozen=True)
class StaticGeocoder:
    """Exact-match lookup table standing in for an external geocoding service."""

    table: Mapping[str, tuple]

    def __call__(self, address: str):
        hit = self.table.get(address)
        if hit is None:
            return None
        lat, lon, *rest = hit
        confidence = float(rest[0]) if rest else 1.0
        return float(lat), float(lon), confidence


@dataclass
class GeocodeResult:
    providers: list[ProviderRecord]
    resolved: int = 0
    cache_hits: int = 0
    failures: int = 0
    already_coded: int = 0


def read_geocode_cache(path) -> dict:
    """Load an append-only address cache; later entries win."""
    cache: dict[str, tuple[float, float, float]] = {}
    cache_path = Path(path)
    if not cache_path.exists():
        return cache
    with open(cache_path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return cache
        for row in reader:
            if len(row) >= 4:
                cache[row[0]] = (float(row[1]), float(row[2]), float(row[3]))
    return cache


def _append_cache(path, address: str, lat: float, lon: float, confidence: float) -> None:
    cache_path = Path(path)
    new_file = not cache_path.exists()
    with open(cache_path, "a", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if new_file:
            writer.writerow(["address", "lat", "lon", "confidence"])
        writer.writerow([address, repr(float(lat)), repr(float(lon)), repr(float(confidence))])


def geocode(
    providers: Sequence[ProviderRecord],
    geocoder: Callable[[str], tuple | None],
    cache_path,
    max_retries: int = 3,
) -> GeocodeResult:
    """Fill missing provider coordinates via the cache, then the geocoder.

    Addresses resolved by the geocoder are appended to the cache. A lookup
    miss leaves the provider uncoded and is counted; transient transport
    errors are retried and surfaced with the retry count once exhausted.
    """
    cache = read_geocode_cache(cache_path)
    result = GeocodeResult(providers=[])
    for provider in providers:
        if provider.latitude is not None and provider.longitude is not None:
            result.providers.append(provider)
            result.already_coded += 1
            continue
        address = provider.address
        if address in cache:
            lat, lon, _ = cache[address]
            result.providers.append(replace(provider, latitude=lat, longitude=lon))
            result.cache_hits += 1
            continue
        hit = None
        for attempt in range(max_retries + 1):
            try:
                hit = geocoder(address)
                break
            except GeocodeTransportError as err:
                if attempt == max_retries:
                    raise GeocodeTransportError(
                        f"geocoding {address!r} failed after {max_retries} retries: {err}"
                    ) from err
        if hit is None:
            result.providers.append(provider)
            result.failures += 1
            continue
        lat, lon, confidence = (float(v) for v in hit)
        _append_cache(cache_path, address, lat, lon, confidence)
        cache[address] = (lat, lon, confidence)
        result.providers.append(replace(provider, latitude=lat, longitude=lon))
        result.resolved += 1
    return result
