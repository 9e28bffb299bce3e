"""CSV ingestion, network assembly accounting, and the cached geocoder."""

import pytest

from hodgeflow.ingest import (
    EdgeRecord,
    GeocodeTransportError,
    ProviderRecord,
    StaticGeocoder,
    assemble_networks,
    geocode,
    parse_crosswalk,
    parse_edges,
    parse_providers,
    read_geocode_cache,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ----------------------------------------------------------------- parse_edges


def test_parse_single_edge(tmp_path):
    path = _write(tmp_path / "e.csv", "from_id,to_id,weight,year\na,b,12,2017\n")
    parsed = parse_edges(path)
    assert parsed.records == [EdgeRecord("a", "b", 12.0, 2017)]
    assert parsed.errors == []


def test_negative_weight_rejected_with_line(tmp_path):
    path = _write(
        tmp_path / "e.csv",
        "from_id,to_id,weight,year\na,b,-3,2017\nc,d,4,2017\n",
    )
    parsed = parse_edges(path)
    assert len(parsed.records) == 1
    assert parsed.records[0].from_id == "c"
    assert len(parsed.errors) == 1
    assert parsed.errors[0].line == 2
    assert "negative" in parsed.errors[0].message


def test_header_only_file_is_empty_not_error(tmp_path):
    path = _write(tmp_path / "e.csv", "from_id,to_id,weight,year\n")
    parsed = parse_edges(path)
    assert parsed.records == []
    assert parsed.errors == []


def test_missing_column_is_fatal(tmp_path):
    path = _write(tmp_path / "e.csv", "from_id,to_id,year\na,b,2017\n")
    with pytest.raises(ValueError, match="weight"):
        parse_edges(path)


def test_malformed_rows_collected(tmp_path):
    path = _write(
        tmp_path / "e.csv",
        "from_id,to_id,weight,year\n,b,1,2017\na,b,x,2017\na,b,1,soon\na,b,1,2017\n",
    )
    parsed = parse_edges(path)
    assert len(parsed.records) == 1
    assert [e.line for e in parsed.errors] == [2, 3, 4]


def test_duplicates_preserved_in_parse(tmp_path):
    path = _write(
        tmp_path / "e.csv", "from_id,to_id,weight,year\na,b,1,2017\na,b,2,2017\n"
    )
    parsed = parse_edges(path)
    assert len(parsed.records) == 2


# -------------------------------------------------------------- parse_providers


PROVIDER_HEADER = "id,address,region_id,lat,lon,system_id,taxonomy,entity_type\n"


def test_parse_provider_fields(tmp_path):
    path = _write(
        tmp_path / "p.csv",
        PROVIDER_HEADER + 'p1,"1 Main St, Springfield",R1,44.9,-93.2,S1,primary_care,individual\n'
        "p2,2 Oak Ave,R2,,,,,2\n",
    )
    parsed = parse_providers(path)
    assert parsed.errors == []
    first, second = parsed.records
    assert first.address == "1 Main St, Springfield"
    assert first.latitude == 44.9
    assert second.latitude is None
    assert second.entity_type == "organizational"


def test_bad_latitude_reported(tmp_path):
    path = _write(tmp_path / "p.csv", PROVIDER_HEADER + "p1,x,R1,95.0,-93.2,,,individual\n")
    parsed = parse_providers(path)
    assert parsed.records == []
    assert "out of range" in parsed.errors[0].message


# ----------------------------------------------------------- assemble_networks


def _providers():
    return [
        ProviderRecord("a", region_id="R1"),
        ProviderRecord("b", region_id="R1"),
        ProviderRecord("c", region_id="R2"),
        ProviderRecord("org", region_id="R1", entity_type="organizational"),
        ProviderRecord("rad", region_id="R1", taxonomy="radiology"),
    ]


def test_same_region_edge_retained():
    result = assemble_networks([EdgeRecord("a", "b", 5.0, 2017)], _providers())
    assert result.retained == 1
    net = result.networks[("R1", 2017)]
    assert net.arcs == (("a", "b", 5.0),)


def test_cross_region_edge_dropped_but_networks_emitted():
    result = assemble_networks([EdgeRecord("a", "c", 5.0, 2017)], _providers())
    assert result.dropped_cross_region == 1
    assert result.networks[("R1", 2017)].n_arcs == 0
    assert result.networks[("R2", 2017)].n_arcs == 0


def test_organizational_provider_filtered():
    result = assemble_networks([EdgeRecord("a", "org", 5.0, 2017)], _providers())
    assert result.dropped_filtered_provider == 1
    assert result.retained == 0


def test_excluded_taxonomy_filtered():
    result = assemble_networks(
        [EdgeRecord("a", "rad", 5.0, 2017)],
        _providers(),
        excluded_taxonomies=frozenset({"radiology"}),
    )
    assert result.dropped_filtered_provider == 1


def test_unknown_endpoint_dropped():
    result = assemble_networks([EdgeRecord("a", "ghost", 5.0, 2017)], _providers())
    assert result.dropped_unknown_endpoint == 1


def test_self_arc_dropped_and_counted():
    result = assemble_networks([EdgeRecord("a", "a", 5.0, 2017)], _providers())
    assert result.dropped_self_arc == 1
    assert result.networks[("R1", 2017)].n_arcs == 0


def test_edge_conservation_accounting():
    edges = [
        EdgeRecord("a", "b", 1.0, 2017),
        EdgeRecord("a", "c", 1.0, 2017),
        EdgeRecord("a", "ghost", 1.0, 2017),
        EdgeRecord("a", "org", 1.0, 2017),
        EdgeRecord("b", "b", 1.0, 2017),
        EdgeRecord("b", "a", 2.0, 2016),
    ]
    result = assemble_networks(edges, _providers())
    assert result.total_accounted == len(edges)
    assert result.retained == 2
    assert set(result.networks) == {("R1", 2017), ("R2", 2017), ("R1", 2016)}


def test_metro_scope_uses_crosswalk():
    crosswalk = {("R1", "metro"): "M1", ("R2", "metro"): "M1"}
    result = assemble_networks(
        [EdgeRecord("a", "c", 5.0, 2017)], _providers(), region_scope="metro", crosswalk=crosswalk
    )
    assert result.retained == 1
    assert set(result.networks) == {("M1", 2017)}


def test_scope_without_crosswalk_filters_everyone():
    result = assemble_networks(
        [EdgeRecord("a", "b", 5.0, 2017)], _providers(), region_scope="state", crosswalk={}
    )
    assert result.dropped_filtered_provider == 1


def test_assembly_idempotent():
    edges = [EdgeRecord("a", "b", 1.0, 2017), EdgeRecord("b", "a", 3.0, 2017)]
    first = assemble_networks(edges, _providers())
    second = assemble_networks(edges, _providers())
    assert first.networks == second.networks
    assert first.counts() == second.counts()


def test_bad_scope_rejected():
    with pytest.raises(ValueError, match="scope"):
        assemble_networks([], [], region_scope="country")


def test_crosswalk_parsing(tmp_path):
    path = _write(
        tmp_path / "x.csv",
        "zip_or_fips,region_id,scope\nR1,M1,metro\nR1,MN,state\n",
    )
    mapping = parse_crosswalk(path)
    assert mapping[("R1", "metro")] == "M1"
    assert mapping[("R1", "state")] == "MN"


# -------------------------------------------------------------------- geocode


def test_stub_geocoder_resolves_known_address(tmp_path):
    cache = tmp_path / "cache.csv"
    stub = StaticGeocoder({"X St": (44.98, -93.27)})
    providers = [ProviderRecord("p1", address="X St")]
    result = geocode(providers, stub, cache)
    assert result.resolved == 1
    assert result.providers[0].latitude == 44.98
    assert result.providers[0].longitude == -93.27


def test_cache_hit_skips_geocoder(tmp_path):
    cache = tmp_path / "cache.csv"
    calls = []

    def counting(address):
        calls.append(address)
        return (1.0, 2.0, 0.9)

    providers = [ProviderRecord("p1", address="X St")]
    geocode(providers, counting, cache)
    assert calls == ["X St"]
    again = geocode(providers, counting, cache)
    assert calls == ["X St"]  # no second external call
    assert again.cache_hits == 1


def test_unresolvable_address_counted(tmp_path):
    result = geocode(
        [ProviderRecord("p1", address="nowhere")], StaticGeocoder({}), tmp_path / "c.csv"
    )
    assert result.failures == 1
    assert result.providers[0].latitude is None


def test_cache_roundtrip_exact(tmp_path):
    cache = tmp_path / "cache.csv"
    stub = StaticGeocoder({"A": (44.123456789, -93.987654321, 0.5), "B": (1.0, 2.0)})
    geocode(
        [ProviderRecord("p1", address="A"), ProviderRecord("p2", address="B")], stub, cache
    )
    loaded = read_geocode_cache(cache)
    assert loaded["A"] == (44.123456789, -93.987654321, 0.5)
    assert loaded["B"] == (1.0, 2.0, 1.0)


def test_transport_error_retried_then_surfaced(tmp_path):
    attempts = []

    def flaky(address):
        attempts.append(address)
        raise GeocodeTransportError("connection reset")

    with pytest.raises(GeocodeTransportError, match="after 2 retries"):
        geocode(
            [ProviderRecord("p1", address="X")], flaky, tmp_path / "c.csv", max_retries=2
        )
    assert len(attempts) == 3


def test_transport_error_recovers_within_retries(tmp_path):
    state = {"count": 0}

    def flaky_then_ok(address):
        state["count"] += 1
        if state["count"] < 3:
            raise GeocodeTransportError("timeout")
        return (5.0, 6.0, 1.0)

    result = geocode(
        [ProviderRecord("p1", address="X")], flaky_then_ok, tmp_path / "c.csv", max_retries=3
    )
    assert result.resolved == 1
    assert result.providers[0].latitude == 5.0


def test_already_coded_provider_untouched(tmp_path):
    providers = [ProviderRecord("p1", address="X", latitude=1.0, longitude=2.0)]
    result = geocode(providers, StaticGeocoder({}), tmp_path / "c.csv")
    assert result.already_coded == 1
    assert result.providers[0].latitude == 1.0
