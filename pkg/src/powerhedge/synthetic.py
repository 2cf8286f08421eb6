"""Seeded synthetic market data for tests and demos.

Price and load are driven by a shared latent path (daily and weekly
sinusoids plus a slow AR(1) component), so they carry exactly the
correlation structure the bivariate model is built to exploit, and the
periodic structure makes load highly predictable from history.  Forward
quotes are written at a discount to the realized month mean, giving a
risk-tolerant hedger a reason to hold more than the expected load.

Everything is deterministic given the seed; the three CSVs round-trip
through the strict parsers in marketdata.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .backtest import initiation_date
from .marketdata import peak_mask


@dataclass(frozen=True)
class SyntheticParams:
    """Generator knobs; defaults give a GB-flavoured hourly series."""

    price_mean: float = 52.0
    price_coupling: float = 7.0
    price_noise_sd: float = 2.5
    spike_rate: float = 0.002
    spike_scale: float = 30.0
    load_mean_mw: float = 31000.0
    load_coupling_mw: float = 2600.0
    load_noise_sd_mw: float = 300.0
    daily_amp: float = 1.0
    weekly_amp: float = 0.6
    ar_tau_hours: float = 36.0
    ar_sd: float = 0.7
    forward_discount: float = 0.04
    demand_wiggle_mw: float = 150.0


DEFAULT_MONTHS = ("2016-01", "2016-02", "2016-03", "2016-04", "2016-05", "2016-06")


def _seasonal_path(n_hours, rng, params):
    t = np.arange(n_hours, dtype=float)
    phase_day = rng.uniform(0.0, 2.0 * np.pi)
    phase_week = rng.uniform(0.0, 2.0 * np.pi)
    path = params.daily_amp * np.sin(2.0 * np.pi * t / 24.0 + phase_day)
    path += params.weekly_amp * np.sin(2.0 * np.pi * t / 168.0 + phase_week)
    return path


def _ar_path(n_hours, rng, params):
    rho = np.exp(-1.0 / params.ar_tau_hours)
    shocks = rng.standard_normal(n_hours) * params.ar_sd * np.sqrt(1.0 - rho * rho)
    if n_hours:
        shocks[0] = rng.standard_normal() * params.ar_sd  # stationary start
    return signal.lfilter([1.0], [1.0, -rho], shocks)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def generate_study(
    out_dir,
    seed=0,
    start="2015-09-01",
    months=DEFAULT_MONTHS,
    params=None,
    zero_spread_months=(),
    zero_spread_price=45.0,
):
    """Write spot.csv, demand.csv, and forwards.csv under ``out_dir``.

    The hourly grid spans ``start`` through the end of the last delivery
    month, so the default leaves room for a 3-month training window before
    the first initiation date.  Months listed in ``zero_spread_months``
    get a constant delivery-month price equal to both forward quotes, which
    zeroes every strategy's payoff there.  Returns the data paths.
    """
    params = params or SyntheticParams()
    months = tuple(months)
    if not months:
        raise ValueError("need at least one delivery month")
    rng = np.random.default_rng(seed)

    t0 = np.datetime64(start, "m")
    t_end = (np.datetime64(months[-1], "M") + 1).astype("datetime64[m]")
    n = int((t_end - t0) / np.timedelta64(60, "m"))
    if n <= 0:
        raise ValueError(f"start {start} not before end of {months[-1]}")
    ts = t0 + np.arange(n) * np.timedelta64(60, "m")

    seasonal = _seasonal_path(n, rng, params)
    latent = seasonal + _ar_path(n, rng, params)
    price = params.price_mean + params.price_coupling * latent
    price += rng.standard_normal(n) * params.price_noise_sd
    spikes = rng.random(n) < params.spike_rate
    price += spikes * rng.exponential(params.spike_scale, n)
    np.clip(price, 1.0, None, out=price)

    load = params.load_mean_mw + params.load_coupling_mw * latent
    load += rng.standard_normal(n) * params.load_noise_sd_mw
    np.clip(load, 1000.0, None, out=load)

    # quotes discount the EX-ANTE expected month mean (seasonal shape plus
    # the spike premium; the AR part has mean zero), so realized spreads
    # are genuinely random and beating the comparator is probabilistic,
    # not an artifact of quoting off the realized path
    spike_premium = params.spike_rate * params.spike_scale
    quotes = []
    for month in months:
        m_start = np.datetime64(month, "M").astype("datetime64[m]")
        m_end = (np.datetime64(month, "M") + 1).astype("datetime64[m]")
        sel = (ts >= m_start) & (ts < m_end)
        if month in zero_spread_months:
            price[sel] = zero_spread_price
            base = peak = zero_spread_price
        else:
            is_peak = peak_mask(ts[sel])
            exp_all = params.price_mean + params.price_coupling * float(seasonal[sel].mean()) + spike_premium
            exp_peak = params.price_mean + params.price_coupling * float(seasonal[sel][is_peak].mean()) + spike_premium
            base = (1.0 - params.forward_discount) * exp_all
            peak = max((1.0 - params.forward_discount) * exp_peak, base * 1.001)
        quotes.append((month, initiation_date(month).isoformat(), f"{base:.6f}", f"{peak:.6f}"))

    # two half-hour readings symmetric about each hourly load, so the
    # hourly averages recover the load series (up to float rounding)
    wiggle = rng.uniform(-params.demand_wiggle_mw, params.demand_wiggle_mw, n)
    demand_ts = np.empty(2 * n, dtype="datetime64[m]")
    demand_ts[0::2] = ts
    demand_ts[1::2] = ts + np.timedelta64(30, "m")
    demand_vals = np.empty(2 * n)
    demand_vals[0::2] = load + wiggle
    demand_vals[1::2] = load - wiggle

    os.makedirs(out_dir, exist_ok=True)
    spot_path = os.path.join(out_dir, "spot.csv")
    demand_path = os.path.join(out_dir, "demand.csv")
    forwards_path = os.path.join(out_dir, "forwards.csv")
    _write_csv(spot_path, ("timestamp", "price_gbp_mwh"),
               ((str(t), f"{p:.6f}") for t, p in zip(ts, price)))
    _write_csv(demand_path, ("timestamp", "demand_mw"),
               ((str(t), f"{v:.6f}") for t, v in zip(demand_ts, demand_vals)))
    _write_csv(forwards_path, ("delivery_month", "quote_date", "base_close", "peak_close"), quotes)
    return {"spot_csv": spot_path, "demand_csv": demand_path, "forwards_csv": forwards_path, "out_dir": out_dir}


def write_study_config(path, data_paths, out_dir, **settings):
    """Write a runnable config file for a generated study.

    ``settings`` override the study defaults (window, sparsity, seed, ...);
    study_start/study_end default to the generator's standard six months.
    """
    values = {
        "study_start": DEFAULT_MONTHS[0],
        "study_end": DEFAULT_MONTHS[-1],
        "spot_csv": data_paths["spot_csv"],
        "demand_csv": data_paths["demand_csv"],
        "forwards_csv": data_paths["forwards_csv"],
        "out_dir": out_dir,
    }
    values.update(settings)
    lines = [f"{key} = {value}" for key, value in values.items()]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
