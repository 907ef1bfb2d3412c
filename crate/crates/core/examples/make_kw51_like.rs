//! Writes a synthetic hourly monitoring export with the KW51 column layout:
//! steel temperature `tBD31A`, relative humidity `rhBD31A` and fourteen
//! natural frequencies `mode1..mode14`. Modes share a latent stiffness factor
//! that is stronger on cold, humid hours, so pairwise correlations are higher
//! there. Gaps: scattered missing cells, a few multi-hour outages and one
//! leading missing frequency.
//!
//! cargo run --example make_kw51_like -- crates/core/tests/data/kw51_synthetic.csv

use std::f64::consts::{PI, TAU};
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BASE_HZ: [f64; 14] = [
    1.88, 2.71, 3.99, 4.03, 4.45, 5.19, 6.07, 6.29, 6.68, 7.33, 7.76, 8.01, 8.94, 9.58,
];

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn main() -> std::io::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "kw51_synthetic.csv".to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let start = NaiveDate::from_ymd_opt(2018, 10, 2)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let end = NaiveDate::from_ymd_opt(2019, 7, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let hours = (end - start).num_hours() as usize;

    // Outages: whole rows absent.
    let outages: Vec<(usize, usize)> = (0..6)
        .map(|_| (rng.random_range(100..hours - 100), rng.random_range(2..12)))
        .collect();

    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write!(out, "timestamp,tBD31A,rhBD31A")?;
    for k in 1..=14 {
        write!(out, ",mode{k}")?;
    }
    writeln!(out)?;

    let mut daily_amp = 0.0;
    let mut day_offset = 0.0;
    for i in 0..hours {
        let t = start + Duration::hours(i as i64);
        let day = i as f64 / 24.0;
        let hour = (i % 24) as f64;
        if i % 24 == 0 {
            daily_amp = rng.random_range(1.0..6.0);
            day_offset = 2.5 * rng.sample::<f64, _>(StandardNormal);
        }
        // Coldest around mid January (day ~105 after 2 October).
        let seasonal = 9.0 - 11.0 * ((day - 14.0) * TAU / 365.0).sin();
        let temp = seasonal + day_offset - daily_amp * (PI * hour / 12.0 + 0.3).sin()
            + 0.4 * rng.sample::<f64, _>(StandardNormal);
        let rh = (88.0 - 1.6 * (temp - 5.0) + 4.0 * rng.sample::<f64, _>(StandardNormal))
            .clamp(25.0, 100.0);

        if outages.iter().any(|&(s, len)| i >= s && i < s + len) {
            continue;
        }

        let cold_wet = logistic((2.0 - temp) / 2.5) * logistic((rh - 80.0) / 6.0);
        let loading = 0.25 + 0.9 * cold_wet;
        let common: f64 = rng.sample(StandardNormal);
        let mut fields = vec![
            t.format("%Y-%m-%d %H:%M:%S").to_string(),
            format!("{temp:.3}"),
            format!("{rh:.2}"),
        ];
        for (k, &f0) in BASE_HZ.iter().enumerate() {
            let own: f64 = rng.sample(StandardNormal);
            let scale = 0.002 * f0;
            let freq = f0 * (1.0 - 0.0012 * temp) + scale * (loading * common + 0.5 * own);
            let missing = (i == 0 && k == 2) || rng.random_bool(0.004);
            fields.push(if missing {
                String::new()
            } else {
                format!("{freq:.5}")
            });
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
