//! Two-sample drift detection with permutation testing.
//!
//! A candidate window of feature rows is compared against a benign
//! reference sample with either the biased MMD estimate under a
//! Gaussian kernel or the energy distance. Significance comes from a
//! permutation test over the pooled rows; the kernel bandwidth (for
//! MMD) is resolved once on the pooled sample and held fixed across
//! permutations so every permuted statistic lives on the same scale.

use crate::error::Error;
use crate::seeding::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which two-sample statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    /// Biased maximum-mean-discrepancy with a Gaussian kernel.
    Mmd,
    /// Energy distance (V-statistic over all pairs).
    Energy,
}

impl StatKind {
    /// Stable lowercase name.
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Mmd => "mmd",
            StatKind::Energy => "energy",
        }
    }

    /// Parses a statistic name.
    pub fn parse(text: &str) -> Option<StatKind> {
        match text {
            "mmd" => Some(StatKind::Mmd),
            "energy" => Some(StatKind::Energy),
            _ => None,
        }
    }
}

/// Gaussian kernel bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of positive pairwise distances in the pooled sample.
    Median,
    /// A fixed bandwidth, must be positive.
    Fixed(f64),
}

/// Kernel configuration for the MMD statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    /// Bandwidth rule.
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Median,
        }
    }
}

/// Full detector configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Statistic to compute.
    pub kind: StatKind,
    /// Kernel settings (ignored by the energy distance).
    pub kernel: KernelSpec,
    /// Permutations for the null distribution.
    pub n_permutations: usize,
    /// Significance level.
    pub alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: StatKind::Mmd,
            kernel: KernelSpec::default(),
            n_permutations: 1000,
            alpha: 0.05,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) -> Result<(), Error> {
        if self.n_permutations == 0 {
            return Err(Error::InvalidInput(
                "permutation count must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Bandwidth::Fixed(s) = self.kernel.bandwidth {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "fixed bandwidth must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one two-sample test.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionVerdict {
    /// Statistic used.
    pub kind: StatKind,
    /// Observed statistic value.
    pub statistic: f64,
    /// Permutation p-value with the add-one correction.
    pub p_value: f64,
    /// Significance level used.
    pub alpha: f64,
    /// True when `p_value < alpha`.
    pub reject_h0: bool,
    /// Reference sample size.
    pub n: usize,
    /// Candidate sample size.
    pub m: usize,
    /// Permutations run.
    pub n_permutations: usize,
    /// Resolved Gaussian bandwidth (MMD only).
    pub bandwidth: Option<f64>,
}

fn validate_sample(name: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<(), Error> {
    if rows.is_empty() {
        return Err(Error::EmptyInput(name));
    }
    for row in rows {
        if row.len() != dim {
            return Err(Error::InvalidInput(format!(
                "{name} rows have inconsistent dimension ({} vs {dim})",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} contains a non-finite value")));
        }
    }
    Ok(())
}

fn validate_pair(x1: &[Vec<f64>], x2: &[Vec<f64>]) -> Result<usize, Error> {
    if x1.is_empty() {
        return Err(Error::EmptyInput("reference sample"));
    }
    let dim = x1[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("rows must have at least one column".into()));
    }
    validate_sample("reference sample", x1, dim)?;
    validate_sample("candidate sample", x2, dim)?;
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Median of the positive pairwise Euclidean distances. Falls back to
/// 1.0 when every pair coincides, so the kernel stays well-defined.
pub fn median_heuristic(rows: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::with_capacity(rows.len() * (rows.len().saturating_sub(1)) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d = sq_dist(&rows[i], &rows[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        (dists[mid - 1] + dists[mid]) / 2.0
    }
}

fn resolve_bandwidth(kernel: &KernelSpec, pooled: &[Vec<f64>]) -> f64 {
    match kernel.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_heuristic(pooled),
    }
}

/// Biased MMD estimate: the square root of the clamped V-statistic
/// `mean k11 + mean k22 - 2 mean k12` over all ordered pairs, with
/// the Gaussian kernel `exp(-d^2 / (2 sigma^2))`.
pub fn mmd_biased(x1: &[Vec<f64>], x2: &[Vec<f64>], kernel: &KernelSpec) -> Result<f64, Error> {
    validate_pair(x1, x2)?;
    if let Bandwidth::Fixed(s) = kernel.bandwidth {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "fixed bandwidth must be positive, got {s}"
            )));
        }
    }
    let pooled: Vec<Vec<f64>> = x1.iter().chain(x2.iter()).cloned().collect();
    let sigma = resolve_bandwidth(kernel, &pooled);
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp();
    let mean_over = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut total = 0.0;
        for ra in a {
            for rb in b {
                total += k(ra, rb);
            }
        }
        total / (a.len() * b.len()) as f64
    };
    let v = mean_over(x1, x1) + mean_over(x2, x2) - 2.0 * mean_over(x1, x2);
    Ok(v.max(0.0).sqrt())
}

/// Energy distance V-statistic:
/// `2 mean d(x1, x2) - mean d(x1, x1) - mean d(x2, x2)`
/// with means over all ordered pairs (self-pairs included).
pub fn energy_distance(x1: &[Vec<f64>], x2: &[Vec<f64>]) -> Result<f64, Error> {
    validate_pair(x1, x2)?;
    let mean_over = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut total = 0.0;
        for ra in a {
            for rb in b {
                total += sq_dist(ra, rb).sqrt();
            }
        }
        total / (a.len() * b.len()) as f64
    };
    Ok(2.0 * mean_over(x1, x2) - mean_over(x1, x1) - mean_over(x2, x2))
}

/// Pairwise matrix over the pooled rows: kernel values for MMD,
/// Euclidean distances for the energy statistic.
struct PooledMatrix {
    values: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
    size: usize,
}

impl PooledMatrix {
    fn build(kind: StatKind, pooled: &[Vec<f64>], sigma: f64) -> PooledMatrix {
        let size = pooled.len();
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            for j in i..size {
                let d2 = sq_dist(&pooled[i], &pooled[j]);
                let v = match kind {
                    StatKind::Mmd => (-d2 / (2.0 * sigma * sigma)).exp(),
                    StatKind::Energy => d2.sqrt(),
                };
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        let row_sums: Vec<f64> = (0..size)
            .map(|i| values[i * size..(i + 1) * size].iter().sum())
            .collect();
        let total = row_sums.iter().sum();
        PooledMatrix {
            values,
            row_sums,
            total,
            size,
        }
    }

    /// Statistic for the split that assigns `assignment[..n]` to the
    /// reference side. Only the within-reference sum is accumulated;
    /// the cross and within-candidate sums follow from row sums.
    fn statistic(&self, kind: StatKind, assignment: &[usize], n: usize) -> f64 {
        let m = self.size - n;
        let mut s11 = 0.0;
        let mut r1 = 0.0;
        for a in 0..n {
            let ia = assignment[a];
            r1 += self.row_sums[ia];
            s11 += self.values[ia * self.size + ia];
            let row = &self.values[ia * self.size..(ia + 1) * self.size];
            for &ib in &assignment[a + 1..n] {
                s11 += 2.0 * row[ib];
            }
        }
        let s12 = r1 - s11;
        let s22 = self.total - 2.0 * r1 + s11;
        let (n, m) = (n as f64, m as f64);
        match kind {
            StatKind::Mmd => (s11 / (n * n) + s22 / (m * m) - 2.0 * s12 / (n * m))
                .max(0.0)
                .sqrt(),
            StatKind::Energy => 2.0 * s12 / (n * m) - s11 / (n * n) - s22 / (m * m),
        }
    }
}

/// Permutation two-sample test of `candidate` against `reference`.
///
/// The pooled pairwise matrix is computed once; each permutation
/// reuses it under a fresh index split. Permutation `p` draws from a
/// generator seeded by `derive(seed, "perm/p")`, so verdicts do not
/// depend on evaluation order. The p-value uses the add-one
/// correction `(1 + #{permuted >= observed}) / (1 + P)`.
pub fn two_sample_test(
    reference: &[Vec<f64>],
    candidate: &[Vec<f64>],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<DetectionVerdict, Error> {
    cfg.validate()?;
    validate_pair(reference, candidate)?;
    let n = reference.len();
    let m = candidate.len();
    let pooled: Vec<Vec<f64>> = reference.iter().chain(candidate.iter()).cloned().collect();
    let sigma = resolve_bandwidth(&cfg.kernel, &pooled);
    let matrix = PooledMatrix::build(cfg.kind, &pooled, sigma);

    let identity: Vec<usize> = (0..n + m).collect();
    let observed = matrix.statistic(cfg.kind, &identity, n);

    let mut scratch = identity;
    let mut at_least = 0usize;
    for p in 0..cfg.n_permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("perm/{p}")));
        scratch.shuffle(&mut rng);
        if matrix.statistic(cfg.kind, &scratch, n) >= observed {
            at_least += 1;
        }
    }
    let p_value = (1 + at_least) as f64 / (1 + cfg.n_permutations) as f64;
    Ok(DetectionVerdict {
        kind: cfg.kind,
        statistic: observed,
        p_value,
        alpha: cfg.alpha,
        reject_h0: p_value < cfg.alpha,
        n,
        m,
        n_permutations: cfg.n_permutations,
        bandwidth: match cfg.kind {
            StatKind::Mmd => Some(sigma),
            StatKind::Energy => None,
        },
    })
}

/// One probed sample size in a detectability scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeProbe {
    /// Rows per side.
    pub size: usize,
    /// Trials run (zero when skipped).
    pub trials: usize,
    /// Fraction of trials that rejected the null.
    pub rejection_fraction: f64,
    /// True when a pool was too small for this size.
    pub skipped: bool,
}

/// Result of scanning candidate sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeScan {
    /// Probes in ascending size order.
    pub probes: Vec<SizeProbe>,
    /// Smallest probed size whose rejection fraction met the
    /// threshold, if any.
    pub minimal_detected: Option<usize>,
    /// Rejection-fraction threshold used.
    pub threshold: f64,
}

/// Scans sample sizes for the smallest one at which the detector
/// reliably separates adversarial rows from benign ones.
///
/// Per size and trial, disjoint subsamples of `size` rows are drawn
/// without replacement from each pool. Sizes larger than either pool
/// are recorded as skipped rather than failing the scan.
pub fn min_sample_size(
    benign: &[Vec<f64>],
    adversarial: &[Vec<f64>],
    sizes: &[usize],
    trials: usize,
    threshold: f64,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<SizeScan, Error> {
    cfg.validate()?;
    validate_pair(benign, adversarial)?;
    if sizes.is_empty() {
        return Err(Error::EmptyInput("no sizes to probe"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidInput("probe sizes must be positive".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trial count must be positive".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut ordered: Vec<usize> = sizes.to_vec();
    ordered.sort_unstable();
    ordered.dedup();

    let mut probes = Vec::with_capacity(ordered.len());
    let mut minimal_detected = None;
    for &size in &ordered {
        if size > benign.len() || size > adversarial.len() {
            probes.push(SizeProbe {
                size,
                trials: 0,
                rejection_fraction: 0.0,
                skipped: true,
            });
            continue;
        }
        let mut rejections = 0usize;
        for t in 0..trials {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("size/{size}/trial/{t}/draw")));
            let reference = sample_rows(benign, size, &mut rng);
            let cand = sample_rows(adversarial, size, &mut rng);
            let verdict = two_sample_test(
                &reference,
                &cand,
                cfg,
                derive_seed(seed, &format!("size/{size}/trial/{t}/test")),
            )?;
            if verdict.reject_h0 {
                rejections += 1;
            }
        }
        let fraction = rejections as f64 / trials as f64;
        if minimal_detected.is_none() && fraction >= threshold {
            minimal_detected = Some(size);
        }
        probes.push(SizeProbe {
            size,
            trials,
            rejection_fraction: fraction,
            skipped: false,
        });
    }
    Ok(SizeScan {
        probes,
        minimal_detected,
        threshold,
    })
}

fn sample_rows(pool: &[Vec<f64>], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    rand::seq::index::sample(rng, pool.len(), size)
        .iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Acceptance fraction at one contamination level.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePoint {
    /// Benign share of the candidate sample.
    pub proportion: f64,
    /// Fraction of trials where the null was accepted.
    pub acceptance: f64,
}

/// Sweeps candidate contamination levels: a candidate of `size` rows
/// holds `floor(p * size)` benign rows (drawn disjointly from the
/// reference) and adversarial rows for the rest. Higher benign
/// proportions should be accepted more often.
pub fn mixture_test(
    benign: &[Vec<f64>],
    adversarial: &[Vec<f64>],
    proportions: &[f64],
    size: usize,
    trials: usize,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<Vec<MixturePoint>, Error> {
    cfg.validate()?;
    validate_pair(benign, adversarial)?;
    if proportions.is_empty() {
        return Err(Error::EmptyInput("no mixture proportions"));
    }
    if size < 2 {
        return Err(Error::InvalidInput("candidate size must be at least 2".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trial count must be positive".into()));
    }
    for &p in proportions {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "mixture proportion must lie in [0, 1], got {p}"
            )));
        }
    }
    let max_benign = proportions
        .iter()
        .map(|&p| (p * size as f64).floor() as usize)
        .max()
        .expect("non-empty proportions");
    if benign.len() < size + max_benign {
        return Err(Error::InvalidInput(format!(
            "benign pool of {} cannot supply a {size}-row reference plus {max_benign} disjoint candidate rows",
            benign.len()
        )));
    }
    if adversarial.len() < size {
        return Err(Error::InvalidInput(format!(
            "adversarial pool of {} cannot supply {size} candidate rows",
            adversarial.len()
        )));
    }

    let mut points = Vec::with_capacity(proportions.len());
    for (pi, &p) in proportions.iter().enumerate() {
        let n_benign = (p * size as f64).floor() as usize;
        let n_adv = size - n_benign;
        let mut accepts = 0usize;
        for t in 0..trials {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mix/{pi}/trial/{t}/draw")));
            // One shuffle supplies the reference and the candidate's
            // benign part from disjoint index ranges.
            let picked = rand::seq::index::sample(&mut rng, benign.len(), size + n_benign);
            let reference: Vec<Vec<f64>> =
                (0..size).map(|i| benign[picked.index(i)].clone()).collect();
            let mut candidate: Vec<Vec<f64>> = (size..size + n_benign)
                .map(|i| benign[picked.index(i)].clone())
                .collect();
            candidate.extend(sample_rows(adversarial, n_adv, &mut rng));
            let verdict = two_sample_test(
                &reference,
                &candidate,
                cfg,
                derive_seed(seed, &format!("mix/{pi}/trial/{t}/test")),
            )?;
            if !verdict.reject_h0 {
                accepts += 1;
            }
        }
        points.push(MixturePoint {
            proportion: p,
            acceptance: accepts as f64 / trials as f64,
        });
    }
    Ok(points)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, Error> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "rank correlation needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "rank correlation needs at least two points".into(),
        ));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks averaged across the tie run.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, Error> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput(
            "rank correlation undefined for a constant sequence".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn blob(n: usize, center: f64, spread: f64, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| (center + rng.gen_range(-spread..spread)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect()
    }

    fn fixed_mmd(sigma: f64) -> KernelSpec {
        KernelSpec {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    #[test]
    fn mmd_matches_a_hand_case() {
        // x1 = {0, 1}, x2 = {2, 3}, sigma = 1.
        let x1 = vec![vec![0.0], vec![1.0]];
        let x2 = vec![vec![2.0], vec![3.0]];
        let k = |d: f64| (-d * d / 2.0f64).exp();
        let k11 = (2.0 + 2.0 * k(1.0)) / 4.0;
        let k22 = (2.0 + 2.0 * k(1.0)) / 4.0;
        let k12 = (k(2.0) + k(3.0) + k(1.0) + k(2.0)) / 4.0;
        let expected = (k11 + k22 - 2.0 * k12).sqrt();
        let got = mmd_biased(&x1, &x2, &fixed_mmd(1.0)).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-15);
    }

    #[test]
    fn energy_matches_hand_cases() {
        // Two coincident points per side, unit separation: 2*1 - 0 - 0.
        let x1 = vec![vec![0.0], vec![0.0]];
        let x2 = vec![vec![1.0], vec![1.0]];
        assert_relative_eq!(energy_distance(&x1, &x2).unwrap(), 2.0, epsilon = 1e-15);
        // Singletons at distance 2.
        let x1 = vec![vec![0.0, 0.0]];
        let x2 = vec![vec![0.0, 2.0]];
        assert_relative_eq!(energy_distance(&x1, &x2).unwrap(), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_samples_score_zero() {
        let x = blob(20, 0.5, 0.2, 3, 1);
        assert_relative_eq!(
            mmd_biased(&x, &x, &KernelSpec::default()).unwrap(),
            0.0,
            epsilon = 1e-7
        );
        assert!(energy_distance(&x, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn median_heuristic_matches_hand_case() {
        // Points 0, 1, 3: distances {1, 2, 3}, median 2.
        let rows = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert_eq!(median_heuristic(&rows), 2.0);
        // Even count: 0, 1, 2 -> distances {1, 1, 2}, median 1.
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(median_heuristic(&rows), 1.0);
        // Coincident points fall back to 1.
        let rows = vec![vec![0.7], vec![0.7]];
        assert_eq!(median_heuristic(&rows), 1.0);
    }

    #[test]
    fn permutation_statistic_agrees_with_direct_functions() {
        let x1 = blob(15, 0.3, 0.2, 4, 2);
        let x2 = blob(12, 0.6, 0.2, 4, 3);
        for (kind, direct) in [
            (
                StatKind::Mmd,
                mmd_biased(&x1, &x2, &fixed_mmd(0.8)).unwrap(),
            ),
            (StatKind::Energy, energy_distance(&x1, &x2).unwrap()),
        ] {
            let cfg = DetectorConfig {
                kind,
                kernel: fixed_mmd(0.8),
                n_permutations: 10,
                alpha: 0.05,
            };
            let verdict = two_sample_test(&x1, &x2, &cfg, 4).unwrap();
            assert_relative_eq!(verdict.statistic, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn separated_blobs_reject_the_null() {
        let x1 = blob(40, 0.2, 0.1, 5, 5);
        let x2 = blob(40, 0.8, 0.1, 5, 6);
        for kind in [StatKind::Mmd, StatKind::Energy] {
            let cfg = DetectorConfig {
                kind,
                n_permutations: 200,
                ..DetectorConfig::default()
            };
            let verdict = two_sample_test(&x1, &x2, &cfg, 7).unwrap();
            assert!(verdict.reject_h0, "{kind:?}: p = {}", verdict.p_value);
            assert_relative_eq!(verdict.p_value, 1.0 / 201.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_distribution_usually_accepts() {
        let x1 = blob(40, 0.5, 0.2, 5, 8);
        let x2 = blob(40, 0.5, 0.2, 5, 9);
        let cfg = DetectorConfig {
            n_permutations: 200,
            ..DetectorConfig::default()
        };
        let verdict = two_sample_test(&x1, &x2, &cfg, 10).unwrap();
        assert!(!verdict.reject_h0, "p = {}", verdict.p_value);
    }

    #[test]
    fn p_value_stays_in_the_add_one_range() {
        let x1 = blob(10, 0.4, 0.2, 3, 11);
        let x2 = blob(10, 0.5, 0.2, 3, 12);
        let cfg = DetectorConfig {
            n_permutations: 50,
            ..DetectorConfig::default()
        };
        let verdict = two_sample_test(&x1, &x2, &cfg, 13).unwrap();
        assert!(verdict.p_value >= 1.0 / 51.0);
        assert!(verdict.p_value <= 1.0);
    }

    #[test]
    fn verdicts_are_deterministic_per_seed() {
        let x1 = blob(20, 0.45, 0.2, 4, 14);
        let x2 = blob(20, 0.55, 0.2, 4, 15);
        let cfg = DetectorConfig {
            n_permutations: 100,
            ..DetectorConfig::default()
        };
        let a = two_sample_test(&x1, &x2, &cfg, 16).unwrap();
        let b = two_sample_test(&x1, &x2, &cfg, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mmd_grows_with_separation_under_a_fixed_kernel() {
        let base: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 30.0 * 0.4]).collect();
        let kernel = fixed_mmd(0.5);
        let mut last = 0.0;
        for shift in [0.1, 0.2, 0.4, 0.6] {
            let shifted: Vec<Vec<f64>> =
                base.iter().map(|r| vec![r[0] + shift]).collect();
            let v = mmd_biased(&base, &shifted, &kernel).unwrap();
            assert!(v > last, "shift {shift}: {v} <= {last}");
            last = v;
        }
    }

    #[test]
    fn size_scan_finds_a_detectable_size_and_skips_oversized_probes() {
        let benign = blob(60, 0.3, 0.1, 4, 17);
        let adversarial = blob(60, 0.7, 0.1, 4, 18);
        let cfg = DetectorConfig {
            n_permutations: 100,
            ..DetectorConfig::default()
        };
        let scan =
            min_sample_size(&benign, &adversarial, &[20, 40, 500], 5, 0.9, &cfg, 19).unwrap();
        assert_eq!(scan.probes.len(), 3);
        assert_eq!(scan.minimal_detected, Some(20));
        assert!(scan.probes[0].rejection_fraction >= 0.9);
        let oversized = &scan.probes[2];
        assert!(oversized.skipped);
        assert_eq!(oversized.trials, 0);
    }

    #[test]
    fn mixture_acceptance_rises_with_benign_share() {
        let benign = blob(120, 0.3, 0.1, 4, 20);
        let adversarial = blob(60, 0.8, 0.1, 4, 21);
        let cfg = DetectorConfig {
            n_permutations: 100,
            ..DetectorConfig::default()
        };
        let points =
            mixture_test(&benign, &adversarial, &[0.0, 1.0], 30, 6, &cfg, 22).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].acceptance, 0.0);
        assert!(points[1].acceptance > 0.5, "{}", points[1].acceptance);
    }

    #[test]
    fn mixture_validates_pool_sizes() {
        let benign = blob(30, 0.3, 0.1, 4, 23);
        let adversarial = blob(30, 0.8, 0.1, 4, 24);
        let cfg = DetectorConfig::default();
        // size 20 with p=1 needs 40 disjoint benign rows.
        assert!(mixture_test(&benign, &adversarial, &[1.0], 20, 2, &cfg, 0).is_err());
    }

    #[test]
    fn spearman_matches_hand_cases() {
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap(),
            1.0
        );
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 5.0, 3.0]).unwrap(),
            -1.0
        );
        // Monotone in ranks even though nonlinear in values.
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 10.0, 100.0, 1000.0]).unwrap(),
            1.0
        );
        // Tied pair averages ranks: x = (1, 2, 2, 4) vs strictly
        // increasing y. Hand value: r_x = (1, 2.5, 2.5, 4),
        // r_y = (1, 2, 3, 4), rho = 0.9486832980505138.
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            0.9486832980505138,
            epsilon = 1e-12
        );
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn inputs_are_validated() {
        let good = blob(5, 0.5, 0.1, 3, 25);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(mmd_biased(&empty, &good, &KernelSpec::default()).is_err());
        assert!(energy_distance(&good, &empty).is_err());
        let ragged = vec![vec![0.1, 0.2], vec![0.3]];
        assert!(energy_distance(&ragged, &good).is_err());
        let mismatched = vec![vec![0.1, 0.2]];
        assert!(mmd_biased(&good, &mismatched, &KernelSpec::default()).is_err());
        let bad_alpha = DetectorConfig {
            alpha: 1.5,
            ..DetectorConfig::default()
        };
        assert!(two_sample_test(&good, &good, &bad_alpha, 0).is_err());
        let no_perms = DetectorConfig {
            n_permutations: 0,
            ..DetectorConfig::default()
        };
        assert!(two_sample_test(&good, &good, &no_perms, 0).is_err());
    }
}
