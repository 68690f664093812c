//! Same-as-yesterday forecasts, per-interval Gaussian error statistics and
//! the quantile bounds that turn chance constraints into box constraints.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Profile, Scenario};

const DAY_S: u32 = 86_400;

/// Forecast error statistics (error = forecast - actual), one entry per
/// scheduling interval of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mu_kw: Vec<f64>,
    pub sigma_kw: Vec<f64>,
}

impl ErrorStats {
    pub fn zero(intervals_per_day: usize) -> Self {
        ErrorStats {
            mu_kw: vec![0.0; intervals_per_day],
            sigma_kw: vec![0.0; intervals_per_day],
        }
    }

    pub fn len(&self) -> usize {
        self.mu_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_kw.is_empty()
    }

    pub fn check(&self, delta_tau_s: u32) -> Result<()> {
        if !DAY_S.is_multiple_of(delta_tau_s) {
            return Err(Error::Forecast(format!(
                "{delta_tau_s} s does not divide a day"
            )));
        }
        let n = (DAY_S / delta_tau_s) as usize;
        if self.mu_kw.len() != n || self.sigma_kw.len() != n {
            return Err(Error::Forecast(format!(
                "expected {n} intervals per day, got {}/{}",
                self.mu_kw.len(),
                self.sigma_kw.len()
            )));
        }
        if self.mu_kw.iter().any(|v| !v.is_finite())
            || self.sigma_kw.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Forecast("mu must be finite and sigma >= 0".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Forecast(e.to_string());
        wr.write_record(["interval_of_day", "mu_kw", "sigma_kw"])
            .map_err(err)?;
        for (i, (m, s)) in self.mu_kw.iter().zip(&self.sigma_kw).enumerate() {
            wr.write_record([i.to_string(), m.to_string(), s.to_string()])
                .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Forecast(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let bad = |m: String| Error::Parse {
                context: format!("error stats line {}", line + 2),
                message: m,
            };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| bad(format!("missing column {k}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(e.to_string()))
            };
            let idx = field(0)? as usize;
            if idx != mu.len() {
                return Err(bad(format!("expected interval {}, got {idx}", mu.len())));
            }
            mu.push(field(1)?);
            sigma.push(field(2)?);
        }
        Ok(ErrorStats {
            mu_kw: mu,
            sigma_kw: sigma,
        })
    }
}

/// Forecast for day `day` (0-based within `history`): the previous day's
/// samples, shifted by 24 h.
pub fn same_as_yesterday(history: &Profile, day: usize) -> Result<Profile> {
    if day == 0 {
        return Err(Error::Forecast("day 0 has no previous day".into()));
    }
    if !DAY_S.is_multiple_of(history.resolution_s) {
        return Err(Error::Forecast(format!(
            "resolution {} s does not divide a day",
            history.resolution_s
        )));
    }
    let spd = (DAY_S / history.resolution_s) as usize;
    let from = (day - 1) * spd;
    if from + spd > history.values.len() {
        return Err(Error::Forecast(format!(
            "history of {} samples does not contain day {}",
            history.values.len(),
            day - 1
        )));
    }
    Ok(Profile {
        id: history.id.clone(),
        start: history.start + Duration::seconds(day as i64 * DAY_S as i64),
        resolution_s: history.resolution_s,
        values: history.values[from..from + spd].to_vec(),
    })
}

/// Per interval-of-day mean and unbiased standard deviation of
/// `forecast - actual` over aligned series.
pub fn fit_error_stats(actual: &Profile, forecast: &Profile) -> Result<ErrorStats> {
    if actual.start != forecast.start
        || actual.resolution_s != forecast.resolution_s
        || actual.values.len() != forecast.values.len()
    {
        return Err(Error::Forecast("actual and forecast series are misaligned".into()));
    }
    let res = actual.resolution_s;
    if !DAY_S.is_multiple_of(res) {
        return Err(Error::Forecast(format!("resolution {res} s does not divide a day")));
    }
    let spd = (DAY_S / res) as usize;
    let n = actual.values.len();
    if !n.is_multiple_of(spd) || n / spd < 2 {
        return Err(Error::Forecast(format!(
            "need at least two whole days of {spd} samples, got {n}"
        )));
    }
    let offset = (actual.start_second_of_day() / res) as usize;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::with_capacity(n / spd); spd];
    for (i, (f, a)) in forecast.values.iter().zip(&actual.values).enumerate() {
        buckets[(offset + i) % spd].push(f - a);
    }
    let mut stats = ErrorStats::zero(spd);
    for (k, b) in buckets.iter_mut().enumerate() {
        // Sorting makes the result independent of day order bit for bit.
        b.sort_by(f64::total_cmp);
        let m = b.len() as f64;
        let mean = b.iter().sum::<f64>() / m;
        let mut dev: Vec<f64> = b.iter().map(|e| (e - mean) * (e - mean)).collect();
        dev.sort_by(f64::total_cmp);
        stats.mu_kw[k] = mean;
        stats.sigma_kw[k] = (dev.iter().sum::<f64>() / (m - 1.0)).sqrt();
    }
    Ok(stats)
}

/// Back-test of the same-as-yesterday model over a multi-day history: every
/// day from the second on is forecast from its predecessor.
pub fn backtest_same_as_yesterday(history: &Profile) -> Result<ErrorStats> {
    let spd = (DAY_S / history.resolution_s) as usize;
    let days = history.values.len() / spd;
    if days < 3 {
        return Err(Error::Forecast("back-test needs at least three days".into()));
    }
    let actual = Profile {
        id: history.id.clone(),
        start: history.start + Duration::seconds(DAY_S as i64),
        resolution_s: history.resolution_s,
        values: history.values[spd..days * spd].to_vec(),
    };
    let forecast = Profile {
        values: history.values[..(days - 1) * spd].to_vec(),
        ..actual.clone()
    };
    fit_error_stats(&actual, &forecast)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Quantile of the standard normal distribution (Wichura, AS 241).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Forecast(format!("probability {p} outside (0, 1)")));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_46,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_87,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        poly(&C, r - 1.6) / poly(&D, r - 1.6)
    } else {
        poly(&E, r - 5.0) / poly(&F, r - 5.0)
    };
    Ok(if q < 0.0 { -z } else { z })
}

/// Forecast means per scheduling interval for every load and generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub start: NaiveDateTime,
    pub delta_tau_s: u32,
    pub generation: BTreeMap<String, Vec<f64>>,
    pub load: BTreeMap<String, Vec<f64>>,
}

impl Forecasts {
    /// Forecast window of `horizon` intervals beginning `first_interval`
    /// scheduling intervals after the scenario start.
    pub fn from_scenario(scenario: &Scenario, first_interval: usize, horizon: usize) -> Result<Self> {
        let dtau = scenario.params.delta_tau_s;
        let start = scenario.start() + Duration::seconds(first_interval as i64 * dtau as i64);
        let mut generation = BTreeMap::new();
        let mut load = BTreeMap::new();
        for g in scenario.generators() {
            let p = scenario.profile(&g.profile)?;
            generation.insert(g.id.clone(), p.window_means(start, dtau, horizon)?);
        }
        for l in scenario.loads() {
            let p = scenario.profile(&l.profile)?;
            load.insert(l.id.clone(), p.window_means(start, dtau, horizon)?);
        }
        Ok(Forecasts {
            start,
            delta_tau_s: dtau,
            generation,
            load,
        })
    }

    pub fn horizon(&self) -> usize {
        self.generation
            .values()
            .chain(self.load.values())
            .map(Vec::len)
            .next()
            .unwrap_or(0)
    }

    fn interval_of_day(&self, k: usize, per_day: usize) -> usize {
        let sod = self.start.num_seconds_from_midnight() as usize;
        ((sod + k * self.delta_tau_s as usize) % DAY_S as usize) / self.delta_tau_s as usize
            % per_day
    }
}

/// Error statistics declared in the scenario; assets without any are taken
/// as perfectly forecast.
pub fn scenario_error_stats(scenario: &Scenario) -> BTreeMap<String, ErrorStats> {
    let per_day = (DAY_S / scenario.params.delta_tau_s.max(1)) as usize;
    let mut out = BTreeMap::new();
    for g in scenario.generators() {
        out.insert(
            g.id.clone(),
            g.forecast_error.clone().unwrap_or_else(|| ErrorStats::zero(per_day)),
        );
    }
    for l in scenario.loads() {
        out.insert(
            l.id.clone(),
            l.forecast_error.clone().unwrap_or_else(|| ErrorStats::zero(per_day)),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeBounds {
    pub confidence: f64,
    pub start: NaiveDateTime,
    pub delta_tau_s: u32,
    /// Upper bound of usable generation per asset and interval (kW).
    pub generation: BTreeMap<String, Vec<f64>>,
    /// Intrinsic load to be covered per asset and interval (kW).
    pub load: BTreeMap<String, Vec<f64>>,
}

impl ConservativeBounds {
    pub fn horizon(&self) -> usize {
        self.generation
            .values()
            .chain(self.load.values())
            .map(Vec::len)
            .next()
            .unwrap_or(0)
    }
}

pub fn conservative_bounds(
    forecasts: &Forecasts,
    stats: &BTreeMap<String, ErrorStats>,
    confidence: f64,
) -> Result<ConservativeBounds> {
    let z = inverse_normal_cdf(confidence)?;
    let lookup = |id: &str| -> Result<&ErrorStats> {
        let s = stats
            .get(id)
            .ok_or_else(|| Error::Forecast(format!("missing error statistics for {id}")))?;
        s.check(forecasts.delta_tau_s)?;
        Ok(s)
    };
    let mut generation = BTreeMap::new();
    for (id, fc) in &forecasts.generation {
        let s = lookup(id)?;
        let v = fc
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let i = forecasts.interval_of_day(k, s.len());
                (g - s.mu_kw[i] - s.sigma_kw[i] * z).max(0.0)
            })
            .collect();
        generation.insert(id.clone(), v);
    }
    let mut load = BTreeMap::new();
    for (id, fc) in &forecasts.load {
        let s = lookup(id)?;
        let v = fc
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let i = forecasts.interval_of_day(k, s.len());
                (l + s.mu_kw[i] + s.sigma_kw[i] * z).max(0.0)
            })
            .collect();
        load.insert(id.clone(), v);
    }
    Ok(ConservativeBounds {
        confidence,
        start: forecasts.start,
        delta_tau_s: forecasts.delta_tau_s,
        generation,
        load,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> NaiveDateTime {
        NaiveDateTime::parse_from_str("2024-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    fn daily(values: Vec<f64>) -> Profile {
        let res = DAY_S / 2;
        Profile {
            id: "x".into(),
            start: t0(),
            resolution_s: res,
            values,
        }
    }

    #[test]
    fn yesterday_is_tomorrow() {
        let h = daily(vec![1.0, 2.0, 3.0, 4.0]);
        let f = same_as_yesterday(&h, 1).unwrap();
        assert_eq!(f.values, vec![1.0, 2.0]);
        assert_eq!(f.start, t0() + Duration::days(1));
        assert!(same_as_yesterday(&h, 0).is_err());
        assert!(same_as_yesterday(&h, 3).is_err());
    }

    #[test]
    fn perfect_forecast_has_zero_error() {
        let a = daily(vec![1.0, 2.0, 3.0, 4.0]);
        let s = fit_error_stats(&a, &a).unwrap();
        assert_eq!(s.mu_kw, vec![0.0, 0.0]);
        assert_eq!(s.sigma_kw, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_errors_give_root_two() {
        let a = daily(vec![0.0, 0.0, 0.0, 0.0]);
        let f = daily(vec![1.0, 0.0, -1.0, 0.0]);
        let s = fit_error_stats(&a, &f).unwrap();
        assert_eq!(s.mu_kw[0], 0.0);
        assert!((s.sigma_kw[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_bias_is_the_mean() {
        let a = daily(vec![1.0, 2.0, 3.0, 4.0]);
        let f = daily(vec![3.0, 4.0, 5.0, 6.0]);
        let s = fit_error_stats(&a, &f).unwrap();
        assert_eq!(s.mu_kw, vec![2.0, 2.0]);
        assert_eq!(s.sigma_kw, vec![0.0, 0.0]);
    }

    #[test]
    fn single_day_is_rejected() {
        let a = daily(vec![1.0, 2.0]);
        assert!(fit_error_stats(&a, &a).is_err());
    }

    #[test]
    fn stats_csv_round_trip() {
        let s = ErrorStats {
            mu_kw: vec![0.5, -1.25],
            sigma_kw: vec![0.0, 2.0],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("interval_of_day,mu_kw,sigma_kw\n"));
        assert_eq!(ErrorStats::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn median_is_zero() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
    }
}
