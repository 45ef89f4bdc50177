"""
Synthetic confounded irradiance and the persistence baseline
============================================================

The generator draws a shared latent weather factor plus cloud events that
hit every auxiliary site first and the target site ``delta`` steps later.
Here we look at that structure directly and at how badly a naive
"tomorrow looks like now" forecast does around cloud edges.
"""

import numpy as np

from solarcast.data import NormStats, SyntheticConfig, build_windows, chronological_split, generate_synthetic
from solarcast.metrics import corr, persistence_forecast, rmse

cfg = SyntheticConfig(n_nodes=8, days=20, seed=0)
panel, truth = generate_synthetic(cfg)
print(panel.values.shape)  # (nodes, steps); row 0 is the target site
print(panel.node_ids[:3], "period", panel.sampling_period, "s")

# a cloud over the auxiliary sites reaches the target delta steps later
target_clear = 1.0 - truth.cloud[0]
aux_clear = 1.0 - truth.cloud[1]
lags = np.arange(13)
xcorr = [np.dot(target_clear[k:], aux_clear[: len(aux_clear) - k]) for k in lags]
print("cross-correlation peaks at lag", lags[np.argmax(xcorr)], "(delta =", cfg.delta, ")")

# chronological 70/20/10 split, statistics from the training part only
T, h = 24, 12
train, val, test = chronological_split(panel, min_length=T + h)
stats = NormStats.from_panel(train)
ds = build_windows(test, T, h, stats, True, cfg.daylight_slots())
print(len(ds), "daylight test windows of shape", ds.X.shape[1:])

# persistence: the last observed target value, h steps ahead
y_hat = stats.denormalize_target(persistence_forecast(ds.X, h))
y = stats.denormalize_target(ds.y)
print("persistence RMSE %.1f W/m^2, CORR %.3f" % (rmse(y_hat, y), corr(y_hat, y)))

# much of that error is the diurnal ramp itself; subtract the error on a
# cloud-free twin (same seed, no clouds) to isolate what the clouds cost
quiet = dict(n_nodes=8, days=20, seed=0, noise=0.0, latent_noise=0.0)
cloudy, cloudy_truth = generate_synthetic(SyntheticConfig(**quiet))
clear, _ = generate_synthetic(SyntheticConfig(**quiet, clouds_per_day=0.0))
unit = NormStats(np.zeros(8), np.ones(8))


def persistence_error(p):
    w = build_windows(p, T, h, unit, True, cfg.daylight_slots())
    return w, np.abs(persistence_forecast(w.X, h) - w.y)


w, err = persistence_error(cloudy)
_, base = persistence_error(clear)
excess = err - base
flips = cloudy_truth.cloud[0][w.end_index] != cloudy_truth.cloud[0][w.end_index + h]
print("extra |error| when the cloud state flips within the horizon %.1f, otherwise %.1f"
      % (excess[flips].mean(), np.abs(excess[~flips]).mean()))
