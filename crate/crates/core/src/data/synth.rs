use std::f64::consts::TAU;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{slots_per_day, FarmSeries};
use crate::error::{Error, Result};

const CUT_IN: f64 = 3.0;
const RATED_SPEED: f64 = 12.0;
const MAX_DELAY: usize = 12;

/// Parameters of the synthetic farm.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub turbines: usize,
    pub steps: usize,
    /// Number of exogenous columns; the first two are wind speed and temperature.
    pub exo: usize,
    pub seed: u64,
    pub start: NaiveDateTime,
    pub cadence_secs: i64,
    pub rated_kw: f64,
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            turbines: 8,
            steps: 20_000,
            exo: 2,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2021, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            cadence_secs: 600,
            rated_kw: 1500.0,
            missing_rate: 0.01,
        }
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

/// Generates a farm whose turbines share a delayed, gusty wind field.
///
/// Farm wind = base level + seasonal and diurnal sinusoids + a persistent
/// AR(1) gust. Each turbine sees it with its own lag and gain plus local
/// AR(1) turbulence, and converts it through a cubic curve saturating at
/// rated power. A fraction of cells is removed so imputation is exercised.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FarmSeries> {
    if cfg.turbines < 2 || cfg.steps < 2000 || cfg.exo < 1 {
        return Err(Error::Contract(format!(
            "synthetic farm needs N ≥ 2, T ≥ 2000 and C ≥ 1, got N={}, T={}, C={}",
            cfg.turbines, cfg.steps, cfg.exo
        )));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) || cfg.rated_kw <= 0.0 {
        return Err(Error::Contract("missing rate must lie in [0, 1) and rated power be positive".into()));
    }
    slots_per_day(cfg.cadence_secs)?;
    let (t_len, n, c) = (cfg.steps, cfg.turbines, cfg.exo);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let timestamps: Vec<NaiveDateTime> = (0..t_len)
        .map(|k| cfg.start + Duration::seconds(cfg.cadence_secs * k as i64))
        .collect();

    // phase angles, with MAX_DELAY steps of history ahead of the first timestamp
    let total = t_len + MAX_DELAY;
    let step_days = cfg.cadence_secs as f64 / 86_400.0;
    // days since the Unix epoch, so sinusoids follow the wall clock
    let day0 = cfg.start.and_utc().timestamp() as f64 / 86_400.0;
    let phase = |k: usize| {
        let day = day0 + (k as f64 - MAX_DELAY as f64) * step_days;
        let diurnal = TAU * day.rem_euclid(1.0) - 2.0;
        let seasonal = TAU * day.rem_euclid(365.0) / 365.0;
        (diurnal, seasonal)
    };

    let gust_noise = normal(0.35);
    let mut gust = 0.0;
    let farm: Vec<f64> = (0..total)
        .map(|k| {
            gust = 0.97 * gust + gust_noise.sample(&mut rng);
            let (d, s) = phase(k);
            7.5 + 1.5 * s.sin() + 3.5 * d.sin() + gust
        })
        .collect();

    let gain_dist = normal(0.05);
    let delays: Vec<usize> = (0..n).map(|_| rng.random_range(0..=MAX_DELAY)).collect();
    let gains: Vec<f64> = (0..n).map(|_| 1.0 + gain_dist.sample(&mut rng)).collect();

    let local_noise = normal(0.25);
    let obs_noise = normal(cfg.rated_kw * 40.0 / 1500.0);
    let anemometer = normal(0.3);
    let thermo = normal(0.5);
    let vane = normal(15.0);
    let aux = normal(1.0);

    let mut power = vec![0.0; t_len * n];
    let mut exo = vec![0.0; t_len * n * c];
    let mut local = vec![0.0; n];
    let mut direction = vec![270.0; n];
    for t in 0..t_len {
        let (d, s) = phase(t + MAX_DELAY);
        let temp_base = 10.0 + 8.0 * s.sin() + 5.0 * d.sin();
        for i in 0..n {
            local[i] = 0.9 * local[i] + local_noise.sample(&mut rng);
            let wind = (farm[t + MAX_DELAY - delays[i]] * gains[i] + local[i]).max(0.0);
            let curve = ((wind.powi(3) - CUT_IN.powi(3)) / (RATED_SPEED.powi(3) - CUT_IN.powi(3)))
                .clamp(0.0, 1.0);
            power[t * n + i] =
                (cfg.rated_kw * curve + obs_noise.sample(&mut rng)).clamp(0.0, cfg.rated_kw);
            let row = &mut exo[(t * n + i) * c..(t * n + i + 1) * c];
            row[0] = (wind + anemometer.sample(&mut rng)).max(0.0);
            if c > 1 {
                row[1] = temp_base + thermo.sample(&mut rng);
            }
            if c > 2 {
                direction[i] = (direction[i] + 0.1 * vane.sample(&mut rng)).rem_euclid(360.0);
                row[2] = direction[i];
            }
            for v in row.iter_mut().skip(3) {
                *v = aux.sample(&mut rng);
            }
        }
    }

    let mut missing = vec![false; t_len * n * (c + 1)];
    for (cell, flag) in missing.iter_mut().enumerate() {
        if rng.random::<f64>() < cfg.missing_rate {
            *flag = true;
            let (ti, ch) = (cell / (c + 1), cell % (c + 1));
            if ch == 0 {
                power[ti] = f64::NAN;
            } else {
                exo[ti * c + ch - 1] = f64::NAN;
            }
        }
    }

    let mut exo_names: Vec<String> = ["wind_speed", "temperature", "wind_direction"]
        .iter()
        .take(c)
        .map(|s| s.to_string())
        .collect();
    exo_names.extend((3..c).map(|k| format!("aux_{}", k - 2)));

    Ok(FarmSeries {
        timestamps,
        cadence_secs: cfg.cadence_secs,
        turbines: (1..=n).map(|i| format!("WT{i:02}")).collect(),
        exo_names,
        target_kw: power.clone(),
        power,
        exo,
        missing,
        scaling: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fill_missing;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            turbines: 4,
            steps: 3000,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = generate_synthetic(&small(7)).unwrap();
        let b = generate_synthetic(&small(7)).unwrap();
        let c = generate_synthetic(&small(8)).unwrap();
        assert_eq!(a.missing, b.missing);
        assert_eq!(format!("{:?}", a.power), format!("{:?}", b.power));
        assert_ne!(format!("{:?}", a.power), format!("{:?}", c.power));
    }

    #[test]
    fn power_within_rating_and_masked_fraction() {
        let fs = generate_synthetic(&small(0)).unwrap();
        assert!(fs.power.iter().filter(|v| !v.is_nan()).all(|&v| (0.0..=1500.0).contains(&v)));
        let frac = fs.missing_count() as f64 / fs.missing.len() as f64;
        assert!((0.005..0.015).contains(&frac), "{frac}");
        assert!(fs.power.iter().zip(fs.missing.iter().step_by(3)).all(|(v, &m)| v.is_nan() == m));
    }

    #[test]
    fn turbines_are_spatially_correlated() {
        let fs = fill_missing(&generate_synthetic(&small(0)).unwrap()).unwrap();
        let n = fs.n_turbines();
        let col = |i: usize| fs.power.iter().skip(i).step_by(n).copied().collect::<Vec<_>>();
        let corr = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        for i in 1..n {
            assert!(corr(&col(0), &col(i)) > 0.5);
        }
    }

    #[test]
    fn rejects_undersized_farms() {
        assert!(generate_synthetic(&SynthConfig { turbines: 1, ..small(0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { steps: 1999, ..small(0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { exo: 0, ..small(0) }).is_err());
    }

    #[test]
    fn extra_columns_are_named() {
        let fs = generate_synthetic(&SynthConfig { exo: 5, ..small(0) }).unwrap();
        assert_eq!(fs.exo_names, ["wind_speed", "temperature", "wind_direction", "aux_1", "aux_2"]);
    }
}
