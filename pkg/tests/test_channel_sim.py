from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cabinloc.channel_sim import (
    PROFILES, CirBuffer, Dataset, EnvironmentProfile, RangingSample, generate_dataset, get_profile,
    simulate_ranging, split_counts, substream, synthesize_cir,
)
from cabinloc.geometry import Anchor, Point3, generate_cabin
from cabinloc.johnson import JohnsonSuParams, fit_johnson_su, sample_johnson_su
from cabinloc.ranging import first_path_power, multipath_metric

AIRCRAFT = get_profile("aircraft")
ORIGIN = Anchor(0, Point3(0.0, 0.0, 0.0))


def _at(d):
    return Point3(d, 0.0, 0.0)


# -- Johnson sampling examples -------------------------------------------------------

def test_johnson_standard_median(rng):
    x = sample_johnson_su(JohnsonSuParams(0, 1, 0, 1), rng, 100_000)
    assert abs(np.median(x)) < 0.02
    assert abs(stats.skew(x[np.abs(x) < 20])) < 0.05


def test_johnson_location_shift(rng):
    x = sample_johnson_su(JohnsonSuParams(0, 1, 5, 1), rng, 100_000)
    assert np.median(x) == pytest.approx(5.0, abs=0.02)


def test_johnson_mean_within_three_standard_errors(rng):
    p = JohnsonSuParams(1, 2, 0, 0.3)
    x = sample_johnson_su(p, rng, 100_000)
    assert abs(x.mean() - p.mean()) < 3 * np.sqrt(p.variance() / x.size)


def test_johnson_round_trip_spec_params():
    p = JohnsonSuParams(0.5, 1.5, 0.1, 0.2)
    fit = fit_johnson_su(sample_johnson_su(p, np.random.default_rng(1), 100_000))
    for name in ("gamma", "delta", "xi", "lam"):
        assert abs(getattr(fit, name) - getattr(p, name)) <= max(0.05 * abs(getattr(p, name)), 0.02)


# -- profiles ---------------------------------------------------------------------------

def test_profiles_present_and_aliases():
    assert set(PROFILES) == {"outdoor", "indoor_office", "aircraft_cabin"}
    assert get_profile("aircraft") is PROFILES["aircraft_cabin"]
    assert get_profile("indoor").name == "indoor_office"
    with pytest.raises(KeyError):
        get_profile("mars")


def test_profile_validation():
    with pytest.raises(ValueError):
        replace(AIRCRAFT, multipath_richness=1.5)
    with pytest.raises(ValueError):
        replace(AIRCRAFT, preamble_count=0)


def test_profile_json_round_trip(tmp_path):
    AIRCRAFT.save(tmp_path / "p.json")
    assert EnvironmentProfile.load(tmp_path / "p.json") == AIRCRAFT


# -- CIR ----------------------------------------------------------------------------------

def test_cir_buffer_invariants():
    with pytest.raises(ValueError):
        CirBuffer(np.zeros(4), 0)
    with pytest.raises(ValueError):
        CirBuffer(np.array([1.0, -1.0]), 0)
    with pytest.raises(ValueError):
        CirBuffer(np.array([1.0, 1.0]), 2)
    buf = CirBuffer(np.array([0.0, 1.0]), 1)
    with pytest.raises(ValueError):
        buf.taps[0] = 3.0


def test_zero_richness_single_tap(rng):
    prof = replace(AIRCRAFT, multipath_richness=0.0)
    for d in (1.0, 5.0, 15.0):
        cir = synthesize_cir(d, prof, rng)
        assert np.count_nonzero(cir.taps) == 1
        assert multipath_metric(cir) == 1.0


def test_cir_deterministic():
    a = synthesize_cir(6.0, AIRCRAFT, substream(3, 9))
    b = synthesize_cir(6.0, AIRCRAFT, substream(3, 9))
    assert a == b


def test_multipath_trend_with_distance():
    # literal formula: more and stronger echoes at long range pull the metric down
    near = [multipath_metric(synthesize_cir(2.0, AIRCRAFT, substream(1, 0, k))) for k in range(1000)]
    far = [multipath_metric(synthesize_cir(10.0, AIRCRAFT, substream(1, 1, k))) for k in range(1000)]
    assert np.mean(far) < np.mean(near)


def test_richer_profile_has_more_multipath(rng):
    cabin = np.mean([multipath_metric(synthesize_cir(8.0, AIRCRAFT, rng)) for _ in range(300)])
    out = np.mean([multipath_metric(synthesize_cir(8.0, get_profile("outdoor"), rng)) for _ in range(300)])
    assert cabin < out


# -- ranging samples ------------------------------------------------------------------------

def test_noiseless_limit(rng):
    prof = replace(AIRCRAFT, noise=JohnsonSuParams(0.0, 1.0, 0.0, 1e-9), nlos_bias_per_meter=0.0)
    for d in (0.5, 4.0, 12.0):
        s = simulate_ranging(ORIGIN, _at(d), prof, rng)
        assert s.measured_range == pytest.approx(d, abs=1e-6)


def test_diagnostics_consistent(rng):
    for d in (0.5, 3.0, 9.0, 20.0):
        s = simulate_ranging(ORIGIN, _at(d), AIRCRAFT, rng)
        fp = s.cir.first_path_index
        assert (s.f1, s.f2, s.f3) == tuple(s.cir.taps[fp:fp + 3])
        recomputed = first_path_power(s.f1, s.f2, s.f3, s.preamble_count, AIRCRAFT.power_constant_a)
        assert abs(recomputed - s.first_path_power) < 0.1
        assert s.true_range == pytest.approx(d, abs=1e-12)


def test_power_decreases_with_distance(rng):
    p2 = np.mean([simulate_ranging(ORIGIN, _at(2.0), AIRCRAFT, rng).first_path_power for _ in range(300)])
    p20 = np.mean([simulate_ranging(ORIGIN, _at(20.0), AIRCRAFT, rng).first_path_power for _ in range(300)])
    assert p20 < p2


def test_aircraft_calibration_at_ten_meters():
    rng = np.random.default_rng(2024)
    err = [abs(simulate_ranging(ORIGIN, _at(10.0), AIRCRAFT, rng).error) for _ in range(10_000)]
    assert np.mean(err) == pytest.approx(0.604, rel=0.30)


def test_error_distribution_recovers_noise_plus_bias():
    rng = np.random.default_rng(99)
    d = 6.0
    err = np.array([simulate_ranging(ORIGIN, _at(d), AIRCRAFT, rng).error for _ in range(10_000)])
    fit = fit_johnson_su(err)
    expected = AIRCRAFT.noise.shifted(AIRCRAFT.nlos_bias_per_meter * d)
    for name in ("gamma", "delta", "xi", "lam"):
        assert getattr(fit, name) == pytest.approx(getattr(expected, name), rel=0.10), name


def test_sample_dict_round_trip(rng):
    s = simulate_ranging(ORIGIN, _at(3.0), AIRCRAFT, rng, tag_position_id="1A/seat")
    assert RangingSample.from_dict(s.to_dict(), "1A/seat") == s
    assert set(s.to_dict()) >= {"anchor_id", "measured_range", "true_range", "f1", "f2", "f3",
                                "preamble_count", "first_path_power", "cir"}


# -- datasets --------------------------------------------------------------------------------

@pytest.mark.parametrize("reps,expected", [(10, (7, 3)), (1, (1, 0)), (4, (3, 1)), (20, (14, 6))])
def test_split_counts(reps, expected):
    assert split_counts(reps) == expected


def test_default_dataset_size():
    lay = generate_cabin()
    ds = generate_dataset(lay, AIRCRAFT, repetitions=1, seed=0)
    assert len(ds) == 324
    assert len(generate_cabin().seats) * 2 * 10 == 3240


def test_seven_three_split(small_dataset):
    by_pos = {}
    for r in small_dataset:
        by_pos.setdefault(r.position_id, []).append(r.split)
    assert len(by_pos) == len(small_dataset.layout.seats) * 2
    for splits in by_pos.values():
        assert splits.count("train") == 7 and splits.count("test") == 3


def test_seeds_share_truth_but_not_noise(small_layout):
    a = generate_dataset(small_layout, AIRCRAFT, 2, seed=1)
    b = generate_dataset(small_layout, AIRCRAFT, 2, seed=2)
    ta = [s.true_range for r in a for s in r.samples]
    tb = [s.true_range for r in b for s in r.samples]
    assert ta == tb
    assert [s.measured_range for r in a for s in r.samples] != [s.measured_range for r in b for s in r.samples]


def test_dataset_bit_reproducible(small_layout, tmp_path):
    generate_dataset(small_layout, AIRCRAFT, 3, seed=5).to_jsonl(tmp_path / "a.jsonl")
    generate_dataset(small_layout, AIRCRAFT, 3, seed=5).to_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_jsonl_round_trip(small_dataset, tmp_path):
    path = tmp_path / "d.jsonl"
    small_dataset.to_jsonl(path)
    back = Dataset.from_jsonl(path, small_dataset.layout)
    assert back.records == small_dataset.records


def test_jsonl_rejects_malformed(small_layout, tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"seat": "1A", "placement": "seat"}\n')
    with pytest.raises(ValueError, match="malformed"):
        Dataset.from_jsonl(path, small_layout)


def test_substreams_independent():
    a = substream(7, 0, 1, 2).standard_normal(4)
    b = substream(7, 0, 1, 3).standard_normal(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, substream(7, 0, 1, 2).standard_normal(4))
