"""Load a CSV with gaps, impute, window and scale it."""

import tempfile
from pathlib import Path

from tlforecast.dataset import (
    chronological_split,
    fit_scaler,
    impute,
    load_csv,
    make_windows,
    scale_samples,
)

csv_text = """date,taipa.PM10,taipa.NO2
2020-01-01,41,22
2020-01-02,NA,25
2020-01-03,38,24
2020-01-05,52,30
2020-01-06,47,NA
2020-01-07,44,27
2020-01-08,40,26
2020-01-09,39,21
2020-01-10,45,23
2020-01-11,50,28
2020-01-12,55,31
2020-01-13,49,29
2020-01-14,46,25
"""
path = Path(tempfile.mkdtemp()) / "taipa.csv"
path.write_text(csv_text)

# 2020-01-04 is absent from the file; it comes back as a missing row
ds = load_csv(path)
print(len(ds), "days,", ds.n_features, "features")
print(ds.values[:6])

# short gaps are forward-filled
filled = impute(ds, max_gap=1)
print(filled.values[:6])

samples = make_windows(filled, 3, "taipa.PM10")
print(len(samples), "windows; first target", samples[0].target_date, samples[0].target)

train, val, test = chronological_split(samples)
print("split sizes", len(train), len(val), len(test))

# the scaler only sees rows up to the last training target
scaler = fit_scaler(filled.until(train[-1].target_date))
print("x_min", scaler.x_min, "x_max", scaler.x_max)
scaled = scale_samples(val, scaler, filled.feature_names, "taipa.PM10")
print("first validation window, scaled:")
print(scaled[0].inputs, "->", round(scaled[0].target, 4))
