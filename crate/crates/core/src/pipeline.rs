//! Monte-Carlo detection counts, the fidelity estimators, ensemble
//! characterization over Haar-random inputs and critical-point sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{addition_unitary, p_addition, p_product, product_unitary, BlockKind};
use crate::error::{Error, Result};
use crate::mesh::{preset, projection_settings, projector_matrix, PresetName};
use crate::noise::{simulate_block_partial, simulate_preset_partial, NoisyOutcome, OverlapSpec};
use crate::qubit::{field_inv, FieldResult, QubitDensity, RiemannPoint};

/// Source repetition rate used when none is given (Hz).
pub const DEFAULT_REP_RATE: f64 = 7.6e7;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_BINS: usize = 20;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Coincidences between the two output detectors and one herald channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRecord {
    /// Coincidences with the output detector that projects onto the target.
    pub c0: u64,
    /// Coincidences with the orthogonal output detector.
    pub c1: u64,
    pub singles0: u64,
    pub singles1: u64,
    pub singles_herald: u64,
    /// Source repetition rate (Hz).
    pub rep_rate: f64,
    /// Exposure time (s).
    pub exposure: f64,
    pub channel: String,
}

impl CountRecord {
    fn validate(&self) -> Result<()> {
        if !(self.rep_rate > 0.0 && self.exposure > 0.0) {
            return Err(Error::Parameter(format!(
                "rep_rate {} and exposure {} must be positive",
                self.rep_rate, self.exposure
            )));
        }
        Ok(())
    }
}

/// Uncorrelated background detections producing accidental coincidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accidentals {
    /// Source repetition rate (Hz).
    pub rep_rate: f64,
    /// Background singles rate on every detector (Hz).
    pub background_rate: f64,
}

impl Default for Accidentals {
    fn default() -> Self {
        Accidentals {
            rep_rate: DEFAULT_REP_RATE,
            background_rate: 0.0,
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("probability clamped")
        .sample(rng)
}

/// Probability that the projection onto `target` fires on its first port.
pub fn projection_probability(rho: &QubitDensity, target: &RiemannPoint) -> f64 {
    let (theta, phi) = projection_settings(target);
    let p = projector_matrix(theta, phi);
    let out: Matrix2<C64> = p * rho.matrix() * p.adjoint();
    out[(0, 0)].re.clamp(0.0, 1.0)
}

/// Draws the counts of one branch over `shots` source pulses.
///
/// Each pulse heralds the branch with `probability`; the output photon then
/// lands on detector 0 with the projection probability onto `target`.
/// Accidental coincidences are an independent Poisson stream with mean
/// `⟨N_x⟩⟨N_y⟩/(f·T)`, built from the expected singles.
pub fn sample_counts<R: Rng + ?Sized>(
    probability: f64,
    rho: &QubitDensity,
    target: &RiemannPoint,
    shots: u64,
    accidentals: Option<&Accidentals>,
    channel: &str,
    rng: &mut R,
) -> Result<CountRecord> {
    if shots == 0 {
        return Err(Error::Parameter("shots must be positive".into()));
    }
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Parameter(format!("probability {probability} outside [0, 1]")));
    }
    let acc = accidentals.copied().unwrap_or_default();
    if acc.rep_rate.is_nan() || acc.rep_rate <= 0.0 || acc.background_rate < 0.0 {
        return Err(Error::Parameter("invalid accidental model".into()));
    }
    let f0 = projection_probability(rho, target);
    let p0 = probability * f0;
    let p1 = probability * (1.0 - f0);
    let true0 = binomial(shots, p0, rng);
    let rest = 1.0 - p0;
    let true1 = if rest > 0.0 {
        binomial(shots - true0, p1 / rest, rng)
    } else {
        0
    };
    let exposure = shots as f64 / acc.rep_rate;
    let bg = acc.background_rate * exposure;
    let (mean0, mean1, mean_y) = (
        shots as f64 * p0 + bg,
        shots as f64 * p1 + bg,
        shots as f64 * probability + bg,
    );
    let (acc0, acc1) = if acc.background_rate > 0.0 {
        (
            poisson(mean0 * mean_y / shots as f64, rng),
            poisson(mean1 * mean_y / shots as f64, rng),
        )
    } else {
        (0, 0)
    };
    let singles0 = true0 + poisson(bg, rng);
    let singles1 = true1 + poisson(bg, rng);
    let singles_herald = true0 + true1 + poisson(bg, rng);
    Ok(CountRecord {
        c0: true0 + acc0,
        c1: true1 + acc1,
        singles0,
        singles1,
        singles_herald,
        rep_rate: acc.rep_rate,
        exposure,
        channel: channel.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub value: f64,
    pub sigma: f64,
    /// Set when a corrected count went negative and was clamped to zero.
    pub clamped: bool,
}

/// `F_M = C_0/(C_0+C_1)` with Poisson error `√(C_0C_1/(C_0+C_1)³)`.
pub fn fidelity_measured(rec: &CountRecord) -> Result<FidelityEstimate> {
    let (a, b) = (rec.c0 as f64, rec.c1 as f64);
    let n = a + b;
    if n == 0.0 {
        return Err(Error::NoCoincidences);
    }
    Ok(FidelityEstimate {
        value: a / n,
        sigma: (a * b / (n * n * n)).sqrt(),
        clamped: false,
    })
}

/// Accidental coincidences `N_x N_y/(f T)`.
pub fn accidental_estimate(nx: f64, ny: f64, rep_rate: f64, exposure: f64) -> Result<f64> {
    if !(rep_rate > 0.0 && exposure > 0.0) {
        return Err(Error::Parameter("rep_rate and exposure must be positive".into()));
    }
    Ok(nx * ny / (rep_rate * exposure))
}

/// `F_C` after subtracting the estimated accidentals from both
/// coincidence counts. Negative corrected counts are clamped to zero and
/// the estimate flagged.
pub fn fidelity_corrected(rec: &CountRecord) -> Result<FidelityEstimate> {
    rec.validate()?;
    let est0 = accidental_estimate(
        rec.singles0 as f64,
        rec.singles_herald as f64,
        rec.rep_rate,
        rec.exposure,
    )?;
    let est1 = accidental_estimate(
        rec.singles1 as f64,
        rec.singles_herald as f64,
        rec.rep_rate,
        rec.exposure,
    )?;
    let raw0 = rec.c0 as f64 - est0;
    let raw1 = rec.c1 as f64 - est1;
    let clamped = raw0 < 0.0 || raw1 < 0.0;
    let (a, b) = (raw0.max(0.0), raw1.max(0.0));
    let n = a + b;
    if n <= 0.0 {
        return Err(Error::NoCoincidences);
    }
    let rel = |x: u64| if x > 0 { 1.0 / x as f64 } else { 0.0 };
    let var_a = rec.c0 as f64 + est0 * est0 * (rel(rec.singles0) + rel(rec.singles_herald));
    let var_b = rec.c1 as f64 + est1 * est1 * (rel(rec.singles1) + rel(rec.singles_herald));
    let sigma = ((b * b * var_a + a * a * var_b) / n.powi(4)).sqrt();
    Ok(FidelityEstimate {
        value: a / n,
        sigma,
        clamped,
    })
}

/// Parametric bootstrap error: all counts redrawn as Poisson variables
/// around the observed values.
pub fn bootstrap_sigma<R: Rng + ?Sized>(
    rec: &CountRecord,
    corrected: bool,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    rec.validate()?;
    if resamples < 2 {
        return Err(Error::Parameter("bootstrap needs at least two resamples".into()));
    }
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let r = CountRecord {
            c0: poisson(rec.c0 as f64, rng),
            c1: poisson(rec.c1 as f64, rng),
            singles0: poisson(rec.singles0 as f64, rng),
            singles1: poisson(rec.singles1 as f64, rng),
            singles_herald: poisson(rec.singles_herald as f64, rng),
            ..rec.clone()
        };
        let est = if corrected {
            fidelity_corrected(&r)
        } else {
            fidelity_measured(&r)
        };
        if let Ok(e) = est {
            values.push(e.value);
        }
    }
    if values.len() < 2 {
        return Err(Error::NoCoincidences);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// What to characterize: the four-mode blocks or a six-mode mesh preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Inversion,
    Block(BlockKind),
    Preset(PresetName),
}

impl Operation {
    pub fn photons(&self) -> usize {
        match self {
            Operation::Inversion => 1,
            Operation::Block(_) => 2,
            Operation::Preset(p) => preset(*p).photons(),
        }
    }

    /// Every branch with its target value.
    pub fn simulate(&self, zs: &[RiemannPoint], spec: &OverlapSpec) -> Result<Vec<(NoisyOutcome, FieldResult)>> {
        let gram = spec.gram_matrix(self.photons())?;
        match self {
            Operation::Inversion => {
                let p = preset(PresetName::Inversion);
                let out = simulate_preset_partial(&p, zs, &gram)?;
                Ok(out.into_iter().map(|o| (o, field_inv(&zs[0]))).collect())
            }
            Operation::Block(kind) => {
                let block = match kind {
                    BlockKind::Product => product_unitary([0.0; 4]),
                    BlockKind::Addition => addition_unitary([0.0; 4]),
                };
                let out = simulate_block_partial(&block, &zs[0], &zs[1], &gram)?;
                Ok(out
                    .into_iter()
                    .map(|o| {
                        let t = o.branch[0].apply(&zs[0], &zs[1]);
                        (o, t)
                    })
                    .collect())
            }
            Operation::Preset(name) => {
                let p = preset(*name);
                let out = simulate_preset_partial(&p, zs, &gram)?;
                out.into_iter()
                    .map(|o| {
                        let t = p.expected(&o.branch, zs)?;
                        Ok((o, t))
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Inversion => f.write_str("inversion"),
            Operation::Block(BlockKind::Product) => f.write_str("product"),
            Operation::Block(BlockKind::Addition) => f.write_str("addition"),
            Operation::Preset(p) => write!(f, "preset:{p}"),
        }
    }
}

impl FromStr for Operation {
    type Err = Error;

    /// `inversion`, `product`, `addition`, or `preset:<name>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inversion" => Ok(Operation::Inversion),
            "product" => Ok(Operation::Block(BlockKind::Product)),
            "addition" => Ok(Operation::Block(BlockKind::Addition)),
            other => match other.strip_prefix("preset:") {
                Some(name) => Ok(Operation::Preset(name.parse()?)),
                None => Err(Error::UnknownPreset(s.to_string())),
            },
        }
    }
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeConfig {
    pub operation: Operation,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Source pulses per sample; `None` feeds exact probabilities to the
    /// estimators.
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub overlap: OverlapSpec,
    #[serde(default)]
    pub accidentals: Option<Accidentals>,
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Also report a bootstrap error for every finite-shot estimate.
    #[serde(default)]
    pub bootstrap: bool,
}

impl CharacterizeConfig {
    pub fn new(operation: Operation, seed: u64) -> Self {
        CharacterizeConfig {
            operation,
            samples: DEFAULT_SAMPLES,
            shots: None,
            overlap: OverlapSpec::identical(),
            accidentals: None,
            seed,
            bins: DEFAULT_BINS,
            bootstrap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSample {
    pub branch: String,
    pub target: FieldResult,
    pub probability: f64,
    /// Observed herald rate; equals `probability` in analytic mode.
    pub success_rate: f64,
    /// Exact fidelity of the simulated output with the target.
    pub fidelity: Option<f64>,
    pub measured: Option<FidelityEstimate>,
    pub corrected: Option<FidelityEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<CountRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub inputs: Vec<RiemannPoint>,
    pub branches: Vec<BranchSample>,
}

/// Equal-width bins on `[lo, hi]`; both mass vectors sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub observed: Vec<f64>,
    pub theory: Vec<f64>,
}

fn bin_masses(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut mass = vec![0.0; bins];
    if values.is_empty() {
        return mass;
    }
    let w = (hi - lo) / bins as f64;
    for v in values {
        let k = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
        mass[k] += 1.0;
    }
    let n = values.len() as f64;
    mass.iter_mut().for_each(|m| *m /= n);
    mass
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

fn mean_estimate(values: &[f64]) -> Option<MeanEstimate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(MeanEstimate {
        mean,
        std_error: (var / n).sqrt(),
        count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSummary {
    pub branch: String,
    pub fidelity: Option<MeanEstimate>,
    pub measured: Option<MeanEstimate>,
    pub corrected: Option<MeanEstimate>,
    pub mean_probability: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub config: CharacterizeConfig,
    pub samples: Vec<SampleRecord>,
    pub branches: Vec<BranchSummary>,
}

impl EnsembleReport {
    pub fn branch(&self, name: &str) -> Option<&BranchSummary> {
        self.branches.iter().find(|b| b.branch == name)
    }
}

fn branch_name(o: &NoisyOutcome) -> String {
    if o.branch.is_empty() {
        "deterministic".into()
    } else {
        o.branch.iter().map(|l| l.symbol()).collect::<Vec<_>>().join(",")
    }
}

fn run_sample(cfg: &CharacterizeConfig, index: usize) -> Result<SampleRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let zs: Vec<RiemannPoint> = (0..cfg.operation.photons())
        .map(|_| RiemannPoint::sample_haar(&mut rng))
        .collect();
    let outcomes = cfg.operation.simulate(&zs, &cfg.overlap)?;
    let mut branches = Vec::with_capacity(outcomes.len());
    for (o, target) in outcomes {
        let name = branch_name(&o);
        let tp = target.point();
        let fidelity = tp.and_then(|t| o.fidelity(&t));
        let mut sample = BranchSample {
            branch: name.clone(),
            target,
            probability: o.probability,
            success_rate: o.probability,
            fidelity,
            measured: None,
            corrected: None,
            bootstrap_sigma: None,
            counts: None,
        };
        match (cfg.shots, &o.rho, tp) {
            (None, _, _) => {
                let exact = fidelity.map(|f| FidelityEstimate {
                    value: f,
                    sigma: 0.0,
                    clamped: false,
                });
                sample.measured = exact;
                sample.corrected = exact;
            }
            (Some(shots), Some(rho), Some(t)) => {
                let rec = sample_counts(o.probability, rho, &t, shots, cfg.accidentals.as_ref(), &name, &mut rng)?;
                sample.success_rate = (rec.c0 + rec.c1) as f64 / shots as f64;
                sample.measured = fidelity_measured(&rec).ok();
                sample.corrected = fidelity_corrected(&rec).ok();
                if cfg.bootstrap {
                    sample.bootstrap_sigma =
                        bootstrap_sigma(&rec, cfg.accidentals.is_some(), BOOTSTRAP_RESAMPLES, &mut rng).ok();
                }
                sample.counts = Some(rec);
            }
            (Some(_), _, _) => sample.success_rate = 0.0,
        }
        branches.push(sample);
    }
    Ok(SampleRecord {
        index,
        inputs: zs,
        branches,
    })
}

/// Haar-random inputs through the operation, one independent ChaCha stream
/// per sample derived from the master seed.
pub fn characterize(cfg: &CharacterizeConfig) -> Result<EnsembleReport> {
    if cfg.samples == 0 || cfg.bins == 0 {
        return Err(Error::Parameter("samples and bins must be positive".into()));
    }
    if cfg.shots == Some(0) {
        return Err(Error::Parameter("shots must be positive".into()));
    }
    cfg.overlap.gram_matrix(cfg.operation.photons())?;
    let samples: Vec<SampleRecord> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| run_sample(cfg, i))
        .collect::<Result<_>>()?;
    let names: Vec<String> = samples[0].branches.iter().map(|b| b.branch.clone()).collect();
    let branches = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<&BranchSample> = samples.iter().map(|s| &s.branches[k]).collect();
            let exact: Vec<f64> = col.iter().filter_map(|b| b.fidelity).collect();
            let measured: Vec<f64> = col.iter().filter_map(|b| b.measured.map(|e| e.value)).collect();
            let corrected: Vec<f64> = col.iter().filter_map(|b| b.corrected.map(|e| e.value)).collect();
            let probs: Vec<f64> = col.iter().map(|b| b.probability).collect();
            let rates: Vec<f64> = col.iter().map(|b| b.success_rate).collect();
            let hi = probs.iter().chain(&rates).cloned().fold(0.0f64, f64::max);
            let hi = if hi > 0.0 { hi } else { 1.0 };
            BranchSummary {
                branch: name.clone(),
                fidelity: mean_estimate(&exact),
                measured: mean_estimate(&measured),
                corrected: mean_estimate(&corrected),
                mean_probability: probs.iter().sum::<f64>() / probs.len() as f64,
                histogram: Histogram {
                    lo: 0.0,
                    hi,
                    observed: bin_masses(&rates, 0.0, hi, cfg.bins),
                    theory: bin_masses(&probs, 0.0, hi, cfg.bins),
                },
            }
        })
        .collect();
    Ok(EnsembleReport {
        config: cfg.clone(),
        samples,
        branches,
    })
}

/// Real sweep grid `lo..=hi` with `points` values per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lo: -2.0,
            hi: 2.0,
            points: 101,
        }
    }
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 || self.hi.is_nan() || self.lo.is_nan() || self.hi <= self.lo {
            return Err(Error::Parameter("grid needs hi > lo and at least two points".into()));
        }
        let n = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub y: f64,
    pub probability: f64,
}

fn reciprocal(y: f64) -> RiemannPoint {
    field_inv(&RiemannPoint::real(y))
        .point()
        .expect("inverse of a real point")
}

/// Success probability around the critical point of a block: the product
/// on `(z1, 1/z2)` (either branch), the addition on `(1/z1, 1/z2)` (S branch).
pub fn sweep_critical(op: BlockKind, grid: &Grid) -> Result<Vec<SweepPoint>> {
    let axis = grid.values()?;
    Ok(axis
        .iter()
        .flat_map(|&x| axis.iter().map(move |&y| (x, y)))
        .map(|(x, y)| {
            let probability = match op {
                BlockKind::Product => p_product(&RiemannPoint::real(x), &reciprocal(y)),
                BlockKind::Addition => p_addition(&reciprocal(x), &reciprocal(y)).0,
            };
            SweepPoint { x, y, probability }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "x,y,probability")?;
    for p in points {
        writeln!(w, "{:?},{:?},{:?}", p.x, p.y, p.probability)?;
    }
    Ok(())
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::blocks::BranchLabel;
    use crate::qubit::fidelity_mixed;
    use crate::testutil::overlap;
    use proptest::prelude::*;

    fn noisy_product(seed: u64, c: f64) -> (NoisyOutcome, RiemannPoint) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (z1, z2) = (RiemannPoint::sample_haar(&mut rng), RiemannPoint::sample_haar(&mut rng));
        let o = crate::noise::product_density(&z1, &z2, c, BranchLabel::Plus).unwrap();
        let t = BranchLabel::Plus.apply(&z1, &z2).point().unwrap();
        (o, t)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn counts_are_reproducible(seed in any::<u64>(), c in overlap()) {
            let (o, t) = noisy_product(seed, c);
            let acc = Accidentals { rep_rate: DEFAULT_REP_RATE, background_rate: 1e5 };
            let draw = || {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                sample_counts(o.probability, &o.rho.unwrap(), &t, 10_000, Some(&acc), "+", &mut rng).unwrap()
            };
            prop_assert_eq!(draw(), draw());
        }

        #[test]
        fn corrected_fidelity_stays_in_unit_interval(c0 in 0u64..1000, c1 in 0u64..1000, s0 in 0u64..100_000, s1 in 0u64..100_000, sy in 0u64..100_000) {
            let rec = CountRecord { c0, c1, singles0: s0, singles1: s1, singles_herald: sy, rep_rate: 1e6, exposure: 1.0, channel: "S".into() };
            if let Ok(f) = fidelity_corrected(&rec) {
                prop_assert!((0.0..=1.0).contains(&f.value));
            }
        }
    }

    #[test]
    fn measured_fidelity_converges() {
        for seed in 0..10 {
            let (o, t) = noisy_product(seed, 0.6 + 0.04 * seed as f64);
            let rho = o.rho.unwrap();
            let truth = fidelity_mixed(&rho, &t);
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
            let rec = sample_counts(o.probability, &rho, &t, 1_000_000, None, "+", &mut rng).unwrap();
            let f = fidelity_measured(&rec).unwrap();
            let n = (rec.c0 + rec.c1) as f64;
            assert!((f.value - truth).abs() <= 3.0 * (truth * (1.0 - truth) / n).sqrt());
        }
    }

    #[test]
    fn accidental_subtraction_is_unbiased() {
        let (o, t) = noisy_product(77, 0.8);
        let rho = o.rho.unwrap();
        let truth = fidelity_mixed(&rho, &t);
        let acc = Accidentals {
            rep_rate: DEFAULT_REP_RATE,
            background_rate: 2e6,
        };
        let values: Vec<f64> = (0..200)
            .map(|k| {
                let mut rng = ChaCha20Rng::seed_from_u64(5000 + k);
                let rec = sample_counts(o.probability, &rho, &t, 200_000, Some(&acc), "+", &mut rng).unwrap();
                fidelity_corrected(&rec).unwrap().value
            })
            .collect();
        let m = mean_estimate(&values).unwrap();
        assert!(
            (m.mean - truth).abs() <= 3.0 * m.std_error,
            "{} vs {truth} ± {}",
            m.mean,
            m.std_error
        );
    }

    #[test]
    fn success_rate_matches_probability() {
        let mut cfg = CharacterizeConfig::new(Operation::Block(BlockKind::Addition), 8);
        cfg.samples = 50;
        cfg.shots = Some(100_000);
        let rep = characterize(&cfg).unwrap();
        for s in &rep.samples {
            for b in &s.branches {
                let p = b.probability;
                let sigma = (p * (1.0 - p) / 100_000.0).sqrt();
                assert!(
                    (b.success_rate - p).abs() <= 3.0 * sigma.max(1e-5),
                    "{} vs {p}",
                    b.success_rate
                );
            }
        }
    }

    /// CDF of `P±` for Haar inputs. With `u, v ~ U(−1, 1)` the probability
    /// is `(1 + uv)/4`, and `w = uv` has density `−ln|w|/2`.
    fn product_probability_cdf(p: f64) -> f64 {
        let w = (4.0 * p - 1.0).clamp(-1.0, 1.0);
        if w == 0.0 {
            return 0.5;
        }
        let a = w.abs();
        0.5 + w.signum() * (a - a * a.ln()) / 2.0
    }

    #[test]
    fn product_probability_histogram_matches_haar_push_forward() {
        let mut cfg = CharacterizeConfig::new(Operation::Block(BlockKind::Product), 42);
        cfg.samples = 2000;
        let rep = characterize(&cfg).unwrap();
        let mut ps: Vec<f64> = rep.samples.iter().map(|s| s.branches[0].probability).collect();
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let d = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let f = product_probability_cdf(p);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
        let h = &rep.branches[0].histogram;
        assert!((h.observed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
