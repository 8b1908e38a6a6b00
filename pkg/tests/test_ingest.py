import dataclasses
import math

import numpy as np
import pytest

from uavsim.channel import Region, SpatialPoint
from uavsim.ingest import (Projection, RawBsRecord, RawTrafficRow, SyntheticSpec, haar_dwt,
                           haar_idwt, dwt_congestion_detect, hourly_city_series, load_scenario,
                           measured_ratio, parse_dataset, project_and_partition,
                           read_records_csv, robust_sigma, save_scenario, synthesize_labels,
                           synthetic_scenario, true_demand, ue_rates, voronoi_regions,
                           write_records_csv)
from uavsim.simulation import run_simulation


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture
def two_row(tmp_path):
    bs = write(tmp_path, "bs.csv", "id,longitude,latitude\n1,120.15,30.28\n2,120.16,30.29\n")
    tr = write(tmp_path, "tr.csv", "id,hour,users,packets,bytes\n1,0,5,10,1000\n2,0,3,4,500\n")
    return bs, tr


def test_well_formed_fixture(two_row):
    parsed = parse_dataset(*two_row)
    assert [b.bs_id for b in parsed.bs] == [1, 2]
    assert parsed.traffic == [RawTrafficRow(1, 0, 5, 10, 1000.0), RawTrafficRow(2, 0, 3, 4, 500.0)]
    assert parsed.dropped == {"bs": 0, "traffic": 0, "unknown_bs": 0}


def test_negative_bytes_dropped(tmp_path, two_row):
    tr = write(tmp_path, "tr2.csv", "id,hour,users,packets,bytes\n1,0,5,10,1000\n1,1,5,10,-4\n")
    parsed = parse_dataset(two_row[0], tr)
    assert len(parsed.traffic) == 1
    assert parsed.dropped["traffic"] == 1


def test_duplicate_hours_summed_with_warning(tmp_path, two_row):
    tr = write(tmp_path, "tr3.csv", "id,hour,users,packets,bytes\n1,0,5,10,1000\n1,0,1,2,24\n")
    with pytest.warns(UserWarning, match="duplicate"):
        parsed = parse_dataset(two_row[0], tr)
    assert parsed.traffic == [RawTrafficRow(1, 0, 6, 12, 1024.0)]


def test_missing_fields_and_unknown_bs(tmp_path, two_row):
    tr = write(tmp_path, "tr4.csv", "id,hour,users,packets,bytes\n1,0,5,,1000\n9,0,1,1,1\n"
                                    "2,1,1,1,8\n")
    parsed = parse_dataset(two_row[0], tr)
    assert parsed.dropped == {"bs": 0, "traffic": 1, "unknown_bs": 1}


def test_byte_scale(two_row):
    parsed = parse_dataset(*two_row, byte_scale=1000.0)
    assert parsed.traffic[0].bytes == 1e6


def test_unreadable_or_empty_inputs(tmp_path, two_row):
    with pytest.raises(ValueError, match="cannot read"):
        parse_dataset(str(tmp_path / "nope.csv"), two_row[1])
    empty = write(tmp_path, "e.csv", "id,hour,users,packets,bytes\n")
    with pytest.raises(ValueError, match="no valid traffic rows"):
        parse_dataset(two_row[0], empty)
    bad = write(tmp_path, "b.csv", "id,lon,lat\n1,2,3\n")
    with pytest.raises(ValueError, match="missing columns"):
        parse_dataset(bad, two_row[1])


def test_repo_fixture(fixture_path):
    parsed = parse_dataset(fixture_path("bs.csv"), fixture_path("traffic.csv"))
    assert len(parsed.bs) == 3
    assert len(parsed.traffic) == 144
    assert parsed.dropped["traffic"] == 2


def test_projection_round_trip_and_scale():
    proj = Projection(120.15, 30.28)
    x, y = proj.forward(120.16, 30.29)
    lon, lat = proj.inverse(x, y)
    assert abs(lon - 120.16) < 1e-12 and abs(lat - 30.29) < 1e-12
    # one hundredth of a degree of latitude is about 1.11 km
    assert y == pytest.approx(1111.95, rel=1e-3)


def test_voronoi_matches_brute_force():
    rng = np.random.default_rng(0)
    world = Region.from_bounds(0, 0, 500, 400, 10)
    pos = {i: SpatialPoint(*rng.uniform(0, 400, 2)) for i in range(7)}
    regions = voronoi_regions(world, pos)
    for (r, c), center in zip(zip(*world.indices()), world.centers()):
        d = {i: math.hypot(center[0] - p.x, center[1] - p.y) for i, p in pos.items()}
        owner = min(d, key=lambda i: (d[i], i))
        assert regions[owner].mask[r, c]
    total = sum(reg.mask.astype(int) for reg in regions.values())
    assert np.all(total == 1)


def test_two_bs_boundary_is_bisector():
    bs = [RawBsRecord(1, 120.150, 30.28), RawBsRecord(2, 120.160, 30.28)]
    part = project_and_partition(bs, cell_m=10.0, margin_m=200.0)
    mid = 0.5 * (part.positions[1].x + part.positions[2].x)
    r1 = part.regions[1]
    xs = r1.centers()[:, 0]
    assert xs.max() <= mid + 10 and abs(xs.max() - mid) <= 10


def test_one_bs_owns_everything():
    part = project_and_partition([RawBsRecord(1, 10.0, 50.0)], margin_m=100.0)
    assert np.array_equal(part.regions[1].mask, part.service_map.mask)


def test_duplicate_positions_are_shifted():
    bs = [RawBsRecord(1, 10.0, 50.0), RawBsRecord(2, 10.0, 50.0)]
    with pytest.warns(UserWarning, match="1 cm"):
        part = project_and_partition(bs, margin_m=100.0)
    assert part.positions[2].x - part.positions[1].x == pytest.approx(0.01)


def test_labels_conserve_bits_and_stay_inside():
    bs = [RawBsRecord(1, 120.150, 30.28), RawBsRecord(2, 120.156, 30.283)]
    part = project_and_partition(bs, margin_m=300.0)
    traffic = [RawTrafficRow(1, 0, 10, 1000, 123457.0), RawTrafficRow(1, 3, 10, 7, 99.0),
               RawTrafficRow(2, 1, 4, 333, 5e6)]
    streams = synthesize_labels(traffic, part.regions, seed=9)
    for row in traffic:
        s = streams[row.bs_id].window(row.hour * 3600, (row.hour + 1) * 3600)
        assert len(s) == row.packets
        assert s.rate_bps.sum() == row.bytes * 8
    for bs_id, s in streams.items():
        assert part.regions[bs_id].contains(s.locations).all()
    again = synthesize_labels(traffic, part.regions, seed=9)
    assert all(np.array_equal(again[k].x, streams[k].x) for k in streams)


def test_bytes_without_packets_skipped():
    part = project_and_partition([RawBsRecord(1, 10.0, 50.0)], margin_m=100.0)
    with pytest.warns(UserWarning, match="skipped"):
        streams = synthesize_labels([RawTrafficRow(1, 0, 1, 0, 50.0)], part.regions, seed=0)
    assert len(streams[1]) == 0


def test_records_csv_round_trip(tmp_path):
    part = project_and_partition([RawBsRecord(1, 10.0, 50.0)], margin_m=100.0)
    streams = synthesize_labels([RawTrafficRow(1, 0, 1, 50, 1234.0)], part.regions, seed=0)
    write_records_csv(streams, tmp_path / "r.csv")
    back = read_records_csv(tmp_path / "r.csv")
    for col in ("time_s", "x", "y", "rate_bps"):
        assert np.array_equal(getattr(back[1], col), getattr(streams[1], col))


def test_haar_reconstruction_and_hand_values():
    x = np.array([4.0, 2.0, 5.0, 5.0, 1.0])
    a, d, n = haar_dwt(x, 2)
    s = math.sqrt(2)
    assert np.allclose(d[0], [2 / s, 0, 0])
    assert np.allclose(haar_idwt(a, d, n), x, atol=1e-12)


def test_constant_series_has_no_flags():
    assert dwt_congestion_detect(np.full(48, 7.0)) == []


def test_spike_on_daily_sinusoid():
    h = np.arange(96)
    x = 100 + 40 * np.sin(2 * np.pi * h / 24)
    x[37] += 200
    assert dwt_congestion_detect(x) == [37]
    assert dwt_congestion_detect(x, threshold_sigmas=math.inf) == []


def test_short_series_rejected():
    with pytest.raises(ValueError, match="too short"):
        dwt_congestion_detect([1.0, 2.0, 3.0], levels=2)


def test_robust_sigma_of_normal_sample():
    rng = np.random.default_rng(0)
    assert robust_sigma(rng.normal(0, 2.0, 20000)) == pytest.approx(2.0, rel=0.03)


def test_city_series_sums_bs():
    rows = [RawTrafficRow(1, 0, 1, 1, 5.0), RawTrafficRow(2, 0, 1, 1, 6.0),
            RawTrafficRow(1, 2, 1, 1, 1.0)]
    assert hourly_city_series(rows).tolist() == [11.0, 0.0, 1.0]


def test_synthetic_rates_and_ratio():
    spec = SyntheticSpec(n_bs=1, map_size_m=1000.0, fleet_size=0, ratio=1.0, seed=2)
    hot, other = ue_rates(spec)
    assert hot == other == spec.mean_rate_bps
    sc = synthetic_scenario(spec)
    assert measured_ratio(sc, 0) == pytest.approx(1.0, rel=0.1)
    sc3 = synthetic_scenario(spec, ratio=3.0)
    assert measured_ratio(sc3, 0) == pytest.approx(3.0, rel=0.1)


def test_synthetic_empty_fleet_and_reproducibility():
    spec = SyntheticSpec(n_bs=2, map_size_m=800.0, fleet_size=0, horizon_s=900.0, seed=3)
    a, b = synthetic_scenario(spec), synthetic_scenario(spec)
    assert a.fleet == [] and a.validate() is a
    for x, y in zip(a.base_stations, b.base_stations):
        assert np.array_equal(x.records.rate_bps, y.records.rate_bps)
    big = synthetic_scenario(spec, fleet_size=5)
    small = synthetic_scenario(spec, fleet_size=3)
    assert big.fleet[:3] == small.fleet


def test_true_demand_counts_rates_inside():
    spec = SyntheticSpec(n_bs=1, map_size_m=600.0, fleet_size=0, horizon_s=300.0)
    sc = synthetic_scenario(spec)
    whole = sc.base_stations[0].region
    assert true_demand(sc, 0, whole, 10.0) == pytest.approx(
        10 * sc.truth["bs"][0]["ue_rate_bps"].sum())


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(ratio=0.5)
    with pytest.raises(ValueError):
        SyntheticSpec(ratio=10.0)
    with pytest.raises(ValueError):
        SyntheticSpec(fleet_size=-1)


def test_scenario_files_round_trip(tmp_path):
    spec = SyntheticSpec(n_bs=2, map_size_m=800.0, fleet_size=2, horizon_s=900.0, seed=1)
    sc = synthetic_scenario(spec)
    save_scenario(sc, tmp_path / "sc")
    back = load_scenario(tmp_path / "sc")
    assert back.fleet == sc.fleet
    for x, y in zip(back.base_stations, sc.base_stations):
        assert np.array_equal(x.region.mask, y.region.mask)
        assert np.array_equal(x.records.time_s, y.records.time_s)
        assert x.capacity_bps == y.capacity_bps
    a = run_simulation(sc, "closest")[0]
    b = run_simulation(back, "closest")[0]
    assert a.to_json() == b.to_json()


def test_load_missing_scenario(tmp_path):
    with pytest.raises(ValueError, match="cannot read"):
        load_scenario(tmp_path / "none")
