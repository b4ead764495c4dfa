//! Synthetic datasets for experiments and tests.
//!
//! `splom` draws five correlated real attributes on `[0, 1]`: a logistic
//! normal, a correlated copy of it, a noisy quadratic, a bimodal mixture and a
//! skewed half-normal. `checkins` draws month, day-of-week, hour and a point
//! around a few hot spots on the [`brightkite_like`] grid.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::oracle::ColumnStore;
use crate::schema::{brightkite_like, AttributeKind, AttributeSpec, Measure, RawValue, Schema};

pub const SPLOM_ATTRIBUTES: [&str; 5] = ["a0", "a1", "a2", "a3", "a4"];

pub fn splom_schema(bins: usize) -> Result<Schema> {
    Schema::new(
        SPLOM_ATTRIBUTES
            .iter()
            .map(|n| AttributeSpec::numeric(n, AttributeKind::BinnedContinuous, bins, 0.0, 1.0))
            .collect(),
        Measure::Count,
    )
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `rows` records of five values on `[0, 1]`.
pub fn splom_rows(rows: usize, seed: u64) -> Vec<[f64; 5]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    (0..rows)
        .map(|_| {
            let z0: f64 = std.sample(&mut rng);
            let z1: f64 = std.sample(&mut rng);
            let a0 = logistic(1.2 * z0);
            let a1 = logistic(0.9 * z0 + 0.5 * z1);
            let a2 = a0 * a0 + 0.08 * std.sample(&mut rng);
            let a3 = if rng.random::<f64>() < 0.4 {
                0.25 + 0.08 * std.sample(&mut rng)
            } else {
                0.7 + 0.1 * std.sample(&mut rng)
            };
            let a4 = (z1.abs() / 3.0).powf(1.5);
            [a0, a1, a2, a3, a4].map(|v| v.clamp(0.0, 1.0))
        })
        .collect()
}

/// Bins `rows` of [`splom_rows`] into a store with `bins` bins per attribute.
pub fn splom_store(rows: usize, bins: usize, seed: u64) -> Result<ColumnStore> {
    let schema = splom_schema(bins)?;
    let mut store = ColumnStore::new(&schema);
    for r in splom_rows(rows, seed) {
        let mut binned = Vec::with_capacity(5);
        for (spec, v) in schema.attributes().iter().zip(r) {
            binned.push(
                spec.bin_value(RawValue::Number(v))
                    .map_err(|e| Error::InvalidState(format!("synthetic value rejected: {e:?}")))?,
            );
        }
        store.push(&binned, None)?;
    }
    Ok(store)
}

/// Check-in-like records: month, day of week, hour, lon, lat.
pub fn checkin_rows(rows: usize, seed: u64) -> Vec<(u32, u32, u32, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spots = [
        (-73.99, 40.73, 0.02),
        (-73.97, 40.76, 0.015),
        (-73.95, 40.68, 0.03),
        (-73.85, 40.75, 0.04),
    ];
    let hour_peak = Normal::new(18.0, 4.0).expect("valid normal");
    let jitter = Normal::new(0.0, 1.0).expect("valid normal");
    (0..rows)
        .map(|_| {
            let month = rng.random_range(0..12);
            let dow = if rng.random::<f64>() < 0.6 {
                rng.random_range(0..5)
            } else {
                rng.random_range(5..7)
            };
            let hour = (hour_peak.sample(&mut rng) as i64).rem_euclid(24) as u32;
            let (lon, lat): (f64, f64) = if rng.random::<f64>() < 0.8 {
                let (x, y, s) = spots[rng.random_range(0..spots.len())];
                (x + s * jitter.sample(&mut rng), y + s * jitter.sample(&mut rng))
            } else {
                (rng.random_range(-74.3..-73.7), rng.random_range(40.5..40.9))
            };
            (month, dow, hour, lon.clamp(-74.3, -73.7), lat.clamp(40.5, 40.9))
        })
        .collect()
}

/// A store over [`brightkite_like`] filled with [`checkin_rows`].
pub fn checkin_store(rows: usize, seed: u64) -> Result<ColumnStore> {
    let schema = brightkite_like();
    let mut store = ColumnStore::new(&schema);
    for (month, dow, hour, lon, lat) in checkin_rows(rows, seed) {
        let a = schema.attributes();
        let cells = [
            a[0].bin_value(RawValue::Number(month as f64)),
            a[1].bin_value(RawValue::Number(dow as f64)),
            a[2].bin_value(RawValue::Number(hour as f64)),
            a[3].bin_value(RawValue::Point(lon, lat)),
        ];
        let bins = cells
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidState(format!("synthetic value rejected: {e:?}")))?;
        store.push(&bins, None)?;
    }
    Ok(store)
}

/// Writes SPLOM rows as CSV with header `a0,...,a4`.
pub fn write_splom_csv(path: impl AsRef<Path>, rows: &[[f64; 5]]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(SPLOM_ATTRIBUTES)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes check-in rows as CSV with the columns [`brightkite_like`] expects.
pub fn write_checkin_csv(path: impl AsRef<Path>, rows: &[(u32, u32, u32, f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let cols = brightkite_like()
        .attributes()
        .iter()
        .flat_map(|a| a.columns.clone())
        .collect::<Vec<_>>()
        .join(",");
    let mut text = format!("{cols}\n");
    for (m, d, h, x, y) in rows {
        text.push_str(&format!("{m},{d},{h},{x},{y}\n"));
    }
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
