import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlforecast.dataset import (
    DuplicateTimestampError,
    LoadError,
    MalformedHeaderError,
    ScalerFitError,
    ScalerParams,
    SplitError,
    SplitSpec,
    SynthConfig,
    SynthConfigError,
    TimeSeriesDataset,
    chronological_split,
    fit_scaler,
    impute,
    inverse_scale,
    load_csv,
    make_windows,
    merge,
    save_csv,
    scale,
    synthesize,
)

D0 = dt.date(2020, 1, 1)


def _ds(values, names=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"f{j}" for j in range(values.shape[1])]
    dates = [D0 + dt.timedelta(days=k) for k in range(values.shape[0])]
    return TimeSeriesDataset(dates, values, names)


def brute_force_windows(values, B, j):
    """Target indices t whose rows t-B..t-1 and target cell are all observed."""
    out = []
    for t in range(len(values)):
        if t - B < 0:
            continue
        block = values[t - B : t]
        if np.isnan(block).any() or np.isnan(values[t, j]):
            continue
        out.append(t)
    return out


# loading


def test_load_small_file(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,s.PM10,s.NO2\n2020-01-01,1,2\n2020-01-02,3,NA\n2020-01-03,5,6\n")
    ds = load_csv(p)
    assert len(ds) == 3 and ds.n_features == 2
    assert ds.feature_names == ("s.PM10", "s.NO2")
    assert np.isnan(ds.values[1, 1])
    assert ds.values[2, 0] == 5.0


def test_load_missing_tokens(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,x\n2020-01-01,nan\n2020-01-02,\n2020-01-03,NaN\n2020-01-04,oops\n2020-01-05,1.5\n")
    ds = load_csv(p)
    assert np.isnan(ds.values[:4, 0]).all() and ds.values[4, 0] == 1.5


def test_load_41_columns(tmp_path):
    names = [f"st{k // 5}.p{k % 5}" for k in range(41)]
    p = tmp_path / "wide.csv"
    lines = ["date," + ",".join(names)]
    for d in range(4):
        lines.append(f"2020-01-0{d + 1}," + ",".join(str(d + k) for k in range(41)))
    p.write_text("\n".join(lines) + "\n")
    assert load_csv(p).n_features == 41


def test_load_sorts_and_fills_missing_days(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,x\n2020-01-04,4\n2020-01-01,1\n")
    ds = load_csv(p)
    assert ds.dates[0] == D0 and len(ds) == 4
    assert np.isnan(ds.values[1:3, 0]).all()


def test_load_schema_selects_columns(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,a,b,c\n2020-01-01,1,2,3\n")
    ds = load_csv(p, schema=["c", "a"])
    assert ds.feature_names == ("c", "a")
    np.testing.assert_array_equal(ds.values, [[3.0, 1.0]])
    with pytest.raises(MalformedHeaderError):
        load_csv(p, schema=["z"])


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("when,x\n2020-01-01,1\n")
    with pytest.raises(MalformedHeaderError):
        load_csv(bad)
    dup = tmp_path / "dup.csv"
    dup.write_text("date,x\n2020-01-01,1\n2020-01-01,2\n")
    with pytest.raises(DuplicateTimestampError):
        load_csv(dup)
    assert not issubclass(DuplicateTimestampError, MalformedHeaderError)
    assert issubclass(MalformedHeaderError, LoadError)


def test_csv_round_trip(tmp_path):
    ds = _ds([[1.0, np.nan], [0.1 + 0.2, 3.0]], ["a", "b"])
    save_csv(ds, tmp_path / "o.csv")
    back = load_csv(tmp_path / "o.csv")
    assert back.dates == ds.dates
    np.testing.assert_array_equal(back.values, ds.values)


def test_dataset_rejects_non_daily():
    with pytest.raises(ValueError):
        TimeSeriesDataset([D0, D0 + dt.timedelta(days=2)], [[1.0], [2.0]], ["x"])


def test_dataset_values_read_only():
    ds = _ds([1.0, 2.0])
    with pytest.raises(ValueError):
        ds.values[0, 0] = 5.0


def test_merge_aligns_dates():
    a = _ds([1.0, 2.0], ["a"])
    b = TimeSeriesDataset([D0 + dt.timedelta(days=1)], [[9.0]], ["b"])
    m = merge([a, b])
    assert m.feature_names == ("a", "b")
    assert np.isnan(m.values[0, 1]) and m.values[1, 1] == 9.0


# imputation


def test_impute_single_gap():
    out = impute(_ds([1.0, np.nan, 3.0]), max_gap=1)
    np.testing.assert_array_equal(out.values[:, 0], [1.0, 1.0, 3.0])


def test_impute_gap_too_long():
    out = impute(_ds([1.0, np.nan, np.nan, 4.0]), max_gap=1)
    assert np.isnan(out.values[1:3, 0]).all()


def test_impute_leading_gap_untouched():
    out = impute(_ds([np.nan, np.nan, 2.0, np.nan]), max_gap=3)
    assert np.isnan(out.values[:2, 0]).all()
    assert out.values[3, 0] == 2.0


def test_impute_default_gap_is_three():
    out = impute(_ds([1.0, np.nan, np.nan, np.nan, 5.0, np.nan, np.nan, np.nan, np.nan, 9.0]))
    np.testing.assert_array_equal(out.values[:5, 0], [1, 1, 1, 1, 5])
    assert np.isnan(out.values[5:9, 0]).all()


# scaling


def test_fit_scaler_min_max():
    p = fit_scaler(_ds([[10.0, 1.0], [20.0, np.nan], [30.0, -4.0]], ["a", "b"]))
    assert p.x_min == (10.0, -4.0) and p.x_max == (30.0, 1.0)


def test_fit_scaler_constant_feature_named():
    with pytest.raises(ScalerFitError, match="'flat'"):
        fit_scaler(_ds([[1.0, 2.0], [2.0, 2.0]], ["ok", "flat"]))


def test_scale_examples():
    p = ScalerParams(("x",), (10.0,), (30.0,))
    assert scale(10.0, "x", p) == 0.0
    assert scale(30.0, "x", p) == 1.0
    assert scale(20.0, "x", p) == 0.5
    assert scale(35.0, "x", p) == 1.25
    assert inverse_scale(1.25, "x", p) == pytest.approx(35.0, abs=1e-12)
    with pytest.raises(KeyError):
        scale(1.0, "y", p)


def test_scale_custom_range():
    p = ScalerParams(("x",), (0.0,), (4.0,), r_min=-1.0, r_max=1.0)
    assert scale(0.0, "x", p) == -1.0 and scale(4.0, "x", p) == 1.0 and scale(2.0, "x", p) == 0.0


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-1e4, 1e4),
    st.floats(-1e3, 1e3),
    st.floats(1e-2, 1e3),
)
def test_scale_round_trip(x, lo, width):
    p = ScalerParams(("x",), (lo,), (lo + width,))
    assert abs(inverse_scale(scale(x, "x", p), "x", p) - x) <= 1e-12 * max(1.0, abs(x), abs(lo), width)


def test_scaler_dict_round_trip():
    p = ScalerParams(("a", "b"), (0.1, -3.0), (0.7, 9.5), 0.0, 1.0)
    assert ScalerParams.from_dict(p.to_dict()) == p


def test_leakage_guard():
    # a huge value in the later part of the series must not move the fitted range
    values = np.concatenate([np.linspace(1.0, 2.0, 70), [1000.0] * 30])
    ds = _ds(values)
    p = fit_scaler(ds.until(ds.dates[69]))
    assert p.x_max == (2.0,)


# windows


def test_windows_fig4_pattern():
    ds = _ds(np.arange(1.0, 11.0))
    w = make_windows(ds, 6, "f0")
    assert len(w) == 4
    np.testing.assert_array_equal(w[0].inputs[:, 0], [1, 2, 3, 4, 5, 6])
    assert w[0].target == 7.0
    np.testing.assert_array_equal(w[-1].inputs[:, 0], [4, 5, 6, 7, 8, 9])
    assert w[-1].target == 10.0 and w[-1].target_date == ds.dates[9]


def test_windows_n_equals_b():
    assert make_windows(_ds(np.arange(6.0)), 6, "f0") == []


def test_windows_missing_row_three():
    values = np.arange(1.0, 9.0)
    values[2] = np.nan  # row 3 (1-based)
    w = make_windows(_ds(values), 6, "f0")
    assert [s.target_date for s in w] == [_ds(values).dates[t] for t in brute_force_windows(values[:, None], 6, 0)]
    assert len(w) == 0


def test_windows_missing_only_in_non_target_column():
    values = np.column_stack([np.arange(10.0), np.arange(10.0)])
    values[9, 1] = np.nan  # target row, other column: target itself is fine
    assert len(make_windows(_ds(values), 3, "f0")) == 7


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.integers(1, 30), st.floats(0.0, 0.2), st.integers(0, 2**32))
def test_windows_match_brute_force(N, B, p_miss, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(N, 2))
    values[rng.random(size=(N, 2)) < p_miss] = np.nan
    ds = _ds(values)
    got = [s.target_date for s in make_windows(ds, B, "f1")]
    assert got == [ds.dates[t] for t in brute_force_windows(values, B, 1)]
    if p_miss == 0.0:
        assert len(got) == max(N - B, 0)


# splits


def test_split_100():
    tr, va, te = chronological_split(list(range(100)))
    assert (len(tr), len(va), len(te)) == (70, 25, 5)


def test_split_4650():
    tr, va, te = chronological_split(list(range(4650)), SplitSpec(0.70, 0.25, 0.05))
    assert (len(tr), len(va), len(te)) == (3255, 1162, 233)


def test_split_ordering_after_windowing():
    ds = _ds(np.random.default_rng(0).normal(size=4656))
    tr, va, te = chronological_split(make_windows(ds, 6, "f0"))
    assert max(s.target_date for s in tr) < min(s.target_date for s in va)
    assert max(s.target_date for s in va) < min(s.target_date for s in te)


def test_split_errors():
    with pytest.raises(SplitError):
        chronological_split(list(range(3)))
    with pytest.raises(SplitError):
        SplitSpec(0.7, 0.3, 0.0)
    with pytest.raises(SplitError):
        SplitSpec(0.7, 0.25, 0.1)


# synthesis


def _corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def test_synth_full_coupling_identical():
    out = synthesize(SynthConfig(stations=2, coupling=1.0, noise_sd=0.0, days=300, seed=3))
    a, b = out["station0"], out["station1"]
    np.testing.assert_array_equal(a.values, b.values)


def test_synth_zero_coupling_uncorrelated():
    out = synthesize(SynthConfig(stations=2, coupling=0.0, days=2000, seasonal_amplitude=0.0, seed=1))
    a, b = out["station0"].column("station0.PM10"), out["station1"].column("station1.PM10")
    assert abs(_corr(a, b)) < 0.1


def test_synth_strong_coupling_correlated():
    out = synthesize(SynthConfig(stations=2, coupling=0.8, noise_sd=0.05, days=2000, seed=2))
    a, b = out["station0"].column("station0.PM10"), out["station1"].column("station1.PM10")
    assert _corr(a, b) > 0.5


def test_synth_deterministic_and_positive():
    cfg = SynthConfig(stations=3, features_per_station=4, days=500, seed=11)
    a, b = synthesize(cfg), synthesize(cfg)
    for k in a:
        assert a[k].values.tobytes() == b[k].values.tobytes()
        assert np.all(a[k].values > 0)
    assert a["station2"].feature_names == tuple(f"station2.{p}" for p in cfg.pollutant_names)


def test_synth_config_errors():
    with pytest.raises(SynthConfigError):
        SynthConfig(coupling=1.5)
    with pytest.raises(SynthConfigError):
        SynthConfig(days=0)


def test_synth_config_from_dict():
    cfg = SynthConfig.from_dict({"stations": ["a", "b"], "features_per_station": 2, "days": 40, "coupling": 0.5,
                                 "noise_sd": 0.2, "seasonal_amplitude": 0.3, "seed": 4})
    assert cfg.station_names == ("a", "b") and cfg.days == 40
    assert set(synthesize(cfg)) == {"a", "b"}
