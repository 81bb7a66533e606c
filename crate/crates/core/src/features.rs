//! Spectral feature extraction over CAN identifier occurrence cycles.
//!
//! A log is cut into fixed-size frame windows. Within a window, the
//! occurrence count of every distinct identifier (in ascending
//! identifier order) forms the occurrence-cycle series. The series is
//! zero-padded to a power of two, transformed with an FFT, and nine
//! statistics of the magnitude spectrum become the feature vector:
//!
//! ```text
//! min, max, mean, std, skewness, kurtosis, shannon, sampen, permen
//! ```
//!
//! Features are min-max normalized to the unit interval before any
//! model sees them; the fitted [`NormState`] travels with the dataset
//! so later batches (and adversarial crafting) stay in the same box.

use crate::error::Error;
use crate::textfmt::sig6;
use crate::types::{CanLog, TrafficClass};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Number of features per window.
pub const FEATURE_DIM: usize = 9;

/// Feature names in column order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "min",
    "max",
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "shannon",
    "sampen",
    "permen",
];

/// Exact header of the feature CSV format.
pub const FEATURE_CSV_HEADER: &str =
    "min,max,mean,std,skewness,kurtosis,shannon,sampen,permen,label";

/// One labeled feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Feature values in [`FEATURE_NAMES`] order.
    pub values: [f64; FEATURE_DIM],
    /// Ground-truth label of the window the row came from.
    pub label: TrafficClass,
}

/// Identifier occurrence counts for one window, ordered by ascending
/// CAN identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSeries {
    /// Occurrence count per distinct identifier seen in the window.
    pub counts: Vec<f64>,
    /// Majority class of the window's frames (ties resolve to the
    /// earlier class in canonical order).
    pub label: TrafficClass,
}

/// Tunables of the entropy features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    /// Histogram bin count for Shannon entropy.
    pub shannon_bins: usize,
    /// Template length for sample entropy.
    pub sampen_m: usize,
    /// Tolerance factor for sample entropy; the tolerance is this
    /// factor times the series' population standard deviation.
    pub sampen_r: f64,
    /// Ordinal pattern length for permutation entropy.
    pub perm_order: usize,
    /// Lag between pattern elements for permutation entropy.
    pub perm_delay: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            shannon_bins: 10,
            sampen_m: 2,
            sampen_r: 0.2,
            perm_order: 3,
            perm_delay: 1,
        }
    }
}

impl FeatureParams {
    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<(), Error> {
        if self.shannon_bins < 2 {
            return Err(Error::InvalidInput("shannon_bins must be at least 2".into()));
        }
        if self.sampen_m == 0 {
            return Err(Error::InvalidInput("sampen_m must be at least 1".into()));
        }
        if !(self.sampen_r > 0.0) || !self.sampen_r.is_finite() {
            return Err(Error::InvalidInput("sampen_r must be positive".into()));
        }
        if !(2..=10).contains(&self.perm_order) {
            return Err(Error::InvalidInput("perm_order must lie in 2..=10".into()));
        }
        if self.perm_delay == 0 {
            return Err(Error::InvalidInput("perm_delay must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cuts a log into occurrence-cycle series.
///
/// Windows start every `stride` frames; a trailing partial window is
/// dropped. A log shorter than one window yields an empty vector.
pub fn window_cycles(
    log: &CanLog,
    window_frames: usize,
    stride: usize,
) -> Result<Vec<CycleSeries>, Error> {
    if window_frames == 0 {
        return Err(Error::InvalidInput("window_frames must be positive".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".into()));
    }
    let n = log.frames.len();
    let mut series = Vec::new();
    let mut start = 0;
    while start + window_frames <= n {
        let window = &log.frames[start..start + window_frames];
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        let mut class_votes = [0usize; TrafficClass::ALL.len()];
        for frame in window {
            *counts.entry(frame.can_id).or_insert(0) += 1;
            let idx = TrafficClass::ALL
                .iter()
                .position(|c| *c == frame.class)
                .expect("class in canonical list");
            class_votes[idx] += 1;
        }
        let majority = class_votes
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| TrafficClass::ALL[i])
            .expect("non-empty votes");
        series.push(CycleSeries {
            counts: counts.values().map(|&c| c as f64).collect(),
            label: majority,
        });
        start += stride;
    }
    Ok(series)
}

/// Magnitude spectrum of a real series, zero-padded to a power of two.
///
/// Returns the `padded/2 + 1` magnitudes of the non-redundant half
/// spectrum, bin 0 (the mean component) first. In builds with debug
/// assertions the routine cross-checks spectral energy against the
/// series' energy (Parseval identity) at relative tolerance 1e-9.
pub fn fft_magnitude(series: &[f64]) -> Result<Vec<f64>, Error> {
    if series.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "series of length {} is too short for a spectrum",
            series.len()
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    let padded = series.len().next_power_of_two();
    let mut buffer: Vec<Complex<f64>> = series
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buffer);
    let magnitudes: Vec<f64> = buffer[..=padded / 2].iter().map(|c| c.norm()).collect();

    #[cfg(debug_assertions)]
    {
        // Parseval: sum |X_k|^2 over the full spectrum equals N * sum x^2.
        // Interior half-spectrum bins appear twice in the full spectrum.
        let mut spectral = magnitudes[0] * magnitudes[0];
        spectral += magnitudes[padded / 2] * magnitudes[padded / 2];
        for m in &magnitudes[1..padded / 2] {
            spectral += 2.0 * m * m;
        }
        let energy: f64 = series.iter().map(|x| x * x).sum::<f64>() * padded as f64;
        let scale = energy.abs().max(1.0);
        debug_assert!(
            (spectral - energy).abs() <= 1e-9 * scale,
            "spectral energy {spectral} drifts from series energy {energy}"
        );
    }

    Ok(magnitudes)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn central_moment(values: &[f64], mu: f64, k: u32) -> f64 {
    values.iter().map(|x| (x - mu).powi(k as i32)).sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let mu = mean(values);
    central_moment(values, mu, 2).sqrt()
}

/// Shannon entropy (base 2) of an equal-width histogram over the value
/// range. A constant series has zero entropy by convention.
pub fn shannon_entropy(values: &[f64], bins: usize) -> f64 {
    debug_assert!(!values.is_empty());
    debug_assert!(bins >= 2);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let width = hi - lo;
    let mut histogram = vec![0u64; bins];
    for &x in values {
        let idx = (((x - lo) / width) * bins as f64) as usize;
        histogram[idx.min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    -histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Sample entropy: -ln(A/B) where B counts template pairs of length
/// `m` within Chebyshev tolerance `r_factor * std` and A counts the
/// same pairs extended to length `m + 1`.
///
/// Pairs run over i < j with both templates drawn from the first
/// `len - m` start positions, so every counted template has an
/// extension. Degenerate cases (too-short series, A = 0, or B = 0)
/// clamp to 0.
pub fn sample_entropy(values: &[f64], m: usize, r_factor: f64) -> f64 {
    debug_assert!(m >= 1);
    debug_assert!(r_factor > 0.0);
    let n = values.len();
    if n < m + 2 {
        return 0.0;
    }
    let r = r_factor * population_std(values);
    let starts = n - m;
    let mut b = 0u64;
    let mut a = 0u64;
    for i in 0..starts {
        for j in (i + 1)..starts {
            let mut dist_m = 0.0f64;
            for k in 0..m {
                dist_m = dist_m.max((values[i + k] - values[j + k]).abs());
            }
            if dist_m <= r {
                b += 1;
                let dist_m1 = dist_m.max((values[i + m] - values[j + m]).abs());
                if dist_m1 <= r {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        return 0.0;
    }
    -((a as f64 / b as f64).ln())
}

fn ordinal_pattern(window: &[(usize, f64)]) -> Vec<u8> {
    // Ranks by value; equal values rank the earlier index lower.
    let mut order: Vec<usize> = (0..window.len()).collect();
    order.sort_by(|&a, &b| {
        window[a]
            .1
            .partial_cmp(&window[b].1)
            .expect("finite values")
            .then(window[a].0.cmp(&window[b].0))
    });
    order.iter().map(|&i| i as u8).collect()
}

/// Permutation entropy of ordinal patterns, normalized by the maximum
/// `log2(order!)` so the result lies in the unit interval. A monotone
/// or constant series scores 0.
pub fn permutation_entropy(values: &[f64], order: usize, delay: usize) -> f64 {
    debug_assert!((2..=10).contains(&order));
    debug_assert!(delay >= 1);
    let span = (order - 1) * delay;
    if values.len() <= span {
        return 0.0;
    }
    let n_windows = values.len() - span;
    let mut census: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for t in 0..n_windows {
        let window: Vec<(usize, f64)> = (0..order).map(|k| (k, values[t + k * delay])).collect();
        *census.entry(ordinal_pattern(&window)).or_insert(0) += 1;
    }
    if census.len() < 2 {
        return 0.0;
    }
    let n = n_windows as f64;
    let entropy: f64 = -census
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    let factorial: f64 = (2..=order).map(|k| k as f64).product();
    entropy / factorial.log2()
}

/// Computes the nine features of a magnitude spectrum.
pub fn extract_features(spectrum: &[f64], params: &FeatureParams) -> Result<[f64; FEATURE_DIM], Error> {
    params.validate()?;
    if spectrum.is_empty() {
        return Err(Error::EmptyInput("spectrum has no bins"));
    }
    if spectrum.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("spectrum contains non-finite values".into()));
    }
    let lo = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mu = mean(spectrum);
    let var = central_moment(spectrum, mu, 2);
    let std = var.sqrt();
    // Skewness and excess kurtosis of a constant series are 0.
    let (skewness, kurtosis) = if std > 0.0 {
        (
            central_moment(spectrum, mu, 3) / (std * std * std),
            central_moment(spectrum, mu, 4) / (var * var) - 3.0,
        )
    } else {
        (0.0, 0.0)
    };
    Ok([
        lo,
        hi,
        mu,
        std,
        skewness,
        kurtosis,
        shannon_entropy(spectrum, params.shannon_bins),
        sample_entropy(spectrum, params.sampen_m, params.sampen_r),
        permutation_entropy(spectrum, params.perm_order, params.perm_delay),
    ])
}

/// Per-feature min-max normalization state fitted on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    /// Fitted per-feature minima.
    pub min: [f64; FEATURE_DIM],
    /// Fitted per-feature maxima.
    pub max: [f64; FEATURE_DIM],
}

impl NormState {
    /// Fits normalization bounds on a set of rows.
    pub fn fit(rows: &[FeatureVector]) -> Result<Self, Error> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("cannot fit normalization on no rows"));
        }
        let mut min = [f64::INFINITY; FEATURE_DIM];
        let mut max = [f64::NEG_INFINITY; FEATURE_DIM];
        for row in rows {
            for (i, &v) in row.values.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(NormState { min, max })
    }

    /// Maps a raw feature vector into the unit box. Out-of-range values
    /// clip to [0, 1]; a feature with zero fitted range maps to 0.
    pub fn apply(&self, values: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            let range = self.max[i] - self.min[i];
            out[i] = if range > 0.0 {
                ((values[i] - self.min[i]) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }
}

/// A labeled feature dataset with its class list and, once normalized,
/// the normalization state that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// Feature rows.
    pub rows: Vec<FeatureVector>,
    /// Ordered class list; every row label appears here. Models index
    /// classes by position in this list.
    pub class_names: Vec<TrafficClass>,
    /// Normalization applied to `rows`, if any.
    pub norm: Option<NormState>,
}

impl LabeledDataset {
    /// Builds a dataset, deriving the class list from the labels
    /// present (in canonical class order).
    pub fn from_rows(rows: Vec<FeatureVector>) -> Result<Self, Error> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("dataset has no rows"));
        }
        let class_names: Vec<TrafficClass> = TrafficClass::ALL
            .iter()
            .copied()
            .filter(|c| rows.iter().any(|r| r.label == *c))
            .collect();
        Ok(LabeledDataset {
            rows,
            class_names,
            norm: None,
        })
    }

    /// Builds a dataset with an explicit class list.
    pub fn with_classes(
        rows: Vec<FeatureVector>,
        class_names: Vec<TrafficClass>,
    ) -> Result<Self, Error> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("dataset has no rows"));
        }
        for row in &rows {
            if !class_names.contains(&row.label) {
                return Err(Error::ClassMismatch(format!(
                    "row label {} missing from class list",
                    row.label
                )));
            }
        }
        Ok(LabeledDataset {
            rows,
            class_names,
            norm: None,
        })
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// True when the dataset holds no rows.
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of a class in this dataset's ordering.
    pub fn class_index(&self, class: TrafficClass) -> Option<usize> {
        self.class_names.iter().position(|c| *c == class)
    }

    /// Row count per class, in class-list order.
    pub fn class_counts(&self) -> Vec<usize> {
        self.class_names
            .iter()
            .map(|c| self.rows.iter().filter(|r| r.label == *c).count())
            .collect()
    }

    /// Copies the feature values into a plain matrix.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.to_vec()).collect()
    }

    /// Copies the feature values of one class into a plain matrix.
    pub fn matrix_of_class(&self, class: TrafficClass) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .filter(|r| r.label == class)
            .map(|r| r.values.to_vec())
            .collect()
    }

    /// Splits off a stratified held-out part.
    ///
    /// Per class, `round(fraction * count)` rows go to the second
    /// returned dataset. Row order within each part follows the parent.
    /// Both parts keep the parent's class list and normalization state.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Self, Self), Error> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!(
                "split fraction {fraction} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held = vec![false; self.rows.len()];
        for &class in &self.class_names {
            let mut indices: Vec<usize> = (0..self.rows.len())
                .filter(|&i| self.rows[i].label == class)
                .collect();
            let take = ((indices.len() as f64) * fraction).round() as usize;
            indices.shuffle(&mut rng);
            for &i in indices.iter().take(take) {
                held[i] = true;
            }
        }
        let pick = |want: bool| -> Vec<FeatureVector> {
            self.rows
                .iter()
                .zip(held.iter())
                .filter(|(_, &h)| h == want)
                .map(|(r, _)| r.clone())
                .collect()
        };
        let make = |rows: Vec<FeatureVector>| LabeledDataset {
            rows,
            class_names: self.class_names.clone(),
            norm: self.norm.clone(),
        };
        Ok((make(pick(false)), make(pick(true))))
    }
}

/// Fits min-max normalization on `ds` and returns the normalized copy
/// with its [`NormState`] attached.
pub fn normalize(ds: &LabeledDataset) -> Result<LabeledDataset, Error> {
    let norm = NormState::fit(&ds.rows)?;
    Ok(apply_norm(ds, &norm))
}

/// Applies an existing normalization state to a dataset.
pub fn apply_norm(ds: &LabeledDataset, norm: &NormState) -> LabeledDataset {
    let rows = ds
        .rows
        .iter()
        .map(|r| FeatureVector {
            values: norm.apply(&r.values),
            label: r.label,
        })
        .collect();
    LabeledDataset {
        rows,
        class_names: ds.class_names.clone(),
        norm: Some(norm.clone()),
    }
}

/// Runs the full window-spectrum-features pipeline over a set of logs.
///
/// Rows appear in log order, then window order. Logs shorter than one
/// window contribute nothing; producing zero rows overall is an error.
pub fn build_dataset(
    logs: &[CanLog],
    window_frames: usize,
    stride: usize,
    params: &FeatureParams,
) -> Result<LabeledDataset, Error> {
    params.validate()?;
    let mut rows = Vec::new();
    for log in logs {
        for series in window_cycles(log, window_frames, stride)? {
            if series.counts.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "window in {} has fewer than two distinct identifiers",
                    log.source
                )));
            }
            let spectrum = fft_magnitude(&series.counts)?;
            rows.push(FeatureVector {
                values: extract_features(&spectrum, params)?,
                label: series.label,
            });
        }
    }
    LabeledDataset::from_rows(rows)
}

/// Serializes a dataset as CSV with the fixed header and six
/// significant digits per value.
pub fn write_feature_csv(ds: &LabeledDataset) -> String {
    let mut out = String::with_capacity(ds.rows.len() * 64 + 64);
    out.push_str(FEATURE_CSV_HEADER);
    out.push('\n');
    for row in &ds.rows {
        for v in &row.values {
            let _ = write!(out, "{},", sig6(*v));
        }
        let _ = writeln!(out, "{}", row.label);
    }
    out
}

/// Parses a feature CSV produced by [`write_feature_csv`].
pub fn parse_feature_csv(text: &str) -> Result<LabeledDataset, Error> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == FEATURE_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            })
        }
        None => return Err(Error::EmptyInput("feature CSV is empty")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURE_DIM + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", FEATURE_DIM + 1, fields.len()),
            });
        }
        let mut values = [0.0f64; FEATURE_DIM];
        for (k, field) in fields[..FEATURE_DIM].iter().enumerate() {
            values[k] = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad value {field:?}"),
            })?;
            if !values[k].is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite value {field:?}"),
                });
            }
        }
        let label = TrafficClass::parse(fields[FEATURE_DIM]).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        rows.push(FeatureVector { values, label });
    }
    LabeledDataset::from_rows(rows)
}

/// Writes a feature CSV file.
pub fn save_feature_csv(ds: &LabeledDataset, path: &Path) -> Result<(), Error> {
    std::fs::write(path, write_feature_csv(ds))?;
    Ok(())
}
