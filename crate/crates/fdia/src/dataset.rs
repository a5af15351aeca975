//! Labeled dataset synthesis: load-scaled power-flow scenarios with
//! measurement noise, scale and distribution attacks, split bookkeeping,
//! the train-fitted standard scaler, and bit-exact persistence.

use crate::grid::{AdmittanceMatrix, Grid};
use crate::ingest::write_grid_json;
use crate::powerflow::{compute_injections, solve_ac_power_flow, PfOptions};
use crate::{FdiaError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const CHANNELS: usize = 2;
const SPLIT_MAGIC: &[u8; 4] = b"FDIA";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Scale,
    Distribution,
}

impl AttackKind {
    pub fn code(self) -> u8 {
        match self {
            AttackKind::None => 0,
            AttackKind::Scale => 1,
            AttackKind::Distribution => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(AttackKind::None),
            1 => Ok(AttackKind::Scale),
            2 => Ok(AttackKind::Distribution),
            other => Err(FdiaError::Format(format!("unknown attack kind {other}"))),
        }
    }
}

/// One scenario: per-bus (P, Q) injections stored interleaved
/// `[p_0, q_0, p_1, q_1, ...]`, matching the on-disk record layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: bool,
    pub attack_kind: AttackKind,
    pub scenario_seed: u64,
    /// Set when a distribution attack hit a zero-variance channel and
    /// degenerated to the plain mean.
    pub degenerate: bool,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.features.len() / CHANNELS
    }
}

/// Per-(bus, channel) standardization statistics, fitted on train only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Scaler {
    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&z, (&m, &s))| (z - m) / s)
            .collect()
    }

    pub fn unapply(&self, standardized: &[f64]) -> Vec<f64> {
        standardized
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&z, (&m, &s))| z * s + m)
            .collect()
    }

    /// Digest over the scaler bytes, referenced by model checkpoints.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.mean.iter().chain(&self.std) {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(self.epsilon.to_le_bytes());
        hex(&hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub total: usize,
    /// train / validation / test fractions.
    pub split_fractions: [f64; 3],
    /// Fraction of each split that is attacked (half A_s, half A_d;
    /// odd attacked counts give A_d the extra sample).
    pub attack_fraction: f64,
    pub load_scale_lo: f64,
    pub load_scale_hi: f64,
    /// Relative Gaussian noise level on each measurement.
    pub noise_level: f64,
    pub scale_attack_lo: f64,
    pub scale_attack_hi: f64,
    /// Fraction of buses an attack touches (seeded random subset when < 1).
    pub attack_bus_fraction: f64,
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            total: 36000,
            split_fractions: [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
            attack_fraction: 0.5,
            load_scale_lo: 0.8,
            load_scale_hi: 1.2,
            noise_level: 0.01,
            scale_attack_lo: 0.9,
            scale_attack_hi: 1.1,
            attack_bus_fraction: 1.0,
            master_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total < 6 {
            return Err(FdiaError::Config(format!(
                "total sample count {} is too small to split",
                self.total
            )));
        }
        let frac_sum: f64 = self.split_fractions.iter().sum();
        if (frac_sum - 1.0).abs() > 1e-9 {
            return Err(FdiaError::Config(format!(
                "split fractions sum to {frac_sum}, expected 1"
            )));
        }
        if self.load_scale_lo > self.load_scale_hi
            || self.scale_attack_lo > self.scale_attack_hi
        {
            return Err(FdiaError::Config("bounds must be ordered lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_fraction)
            || !(0.0..=1.0).contains(&self.attack_bus_fraction)
        {
            return Err(FdiaError::Config("fractions must lie in [0, 1]".into()));
        }
        if self.noise_level < 0.0 {
            return Err(FdiaError::Config("noise level must be nonnegative".into()));
        }
        Ok(())
    }

    /// Split sizes: first two rounded, the last absorbs the remainder.
    pub fn split_counts(&self) -> [usize; 3] {
        let train = (self.total as f64 * self.split_fractions[0]).round() as usize;
        let val = (self.total as f64 * self.split_fractions[1]).round() as usize;
        [train, val, self.total - train - val]
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub n: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub scaler: Scaler,
    pub config: GenConfig,
    pub grid_fingerprint: String,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "validation" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Domain-separated seed derivation so parallel generation is reproducible
/// independent of worker count or platform.
pub fn derive_seed(master: u64, index: u64, domain: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.update(domain.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn grid_fingerprint(grid: &Grid) -> String {
    let mut hasher = Sha256::new();
    hasher.update(write_grid_json(grid).as_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const MAX_SCENARIO_RETRIES: u64 = 8;

/// One clean scenario: scale each bus's load P/Q and generation P by a
/// per-bus uniform factor, solve power flow, measure injections, add
/// relative Gaussian noise. Divergent draws are retried with a derived seed.
pub fn generate_scenario(
    grid: &Grid,
    ybus: &AdmittanceMatrix,
    scenario_seed: u64,
    config: &GenConfig,
) -> Result<Sample> {
    let n = grid.n();
    let mut last_err = None;
    for attempt in 0..MAX_SCENARIO_RETRIES {
        let seed = if attempt == 0 {
            scenario_seed
        } else {
            derive_seed(scenario_seed, attempt, "retry")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<f64> = (0..n)
            .map(|_| {
                if config.load_scale_lo == config.load_scale_hi {
                    config.load_scale_lo
                } else {
                    rng.gen_range(config.load_scale_lo..config.load_scale_hi)
                }
            })
            .collect();
        let mut scenario = grid.clone();
        for bus in &mut scenario.buses {
            bus.p_load *= factors[bus.ordinal];
            bus.q_load *= factors[bus.ordinal];
        }
        for gen in &mut scenario.gens {
            gen.p_gen *= factors[gen.bus];
        }
        match solve_ac_power_flow(&scenario, ybus, PfOptions::default()) {
            Ok(sol) => {
                let (p, q) = compute_injections(&sol.v, &sol.theta, ybus)?;
                let mut features = Vec::with_capacity(n * CHANNELS);
                for i in 0..n {
                    features.push(p[i]);
                    features.push(q[i]);
                }
                if config.noise_level > 0.0 {
                    for z in features.iter_mut() {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *z += config.noise_level * z.abs() * g;
                    }
                }
                return Ok(Sample {
                    features,
                    label: false,
                    attack_kind: AttackKind::None,
                    scenario_seed,
                    degenerate: false,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(FdiaError::Generation(format!(
        "scenario seed {scenario_seed} diverged {MAX_SCENARIO_RETRIES} times, last error: {}",
        last_err.unwrap()
    )))
}

/// Seeded random bus subset for partial attacks; all buses when the
/// fraction is 1.
fn attacked_buses(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if fraction >= 1.0 {
        return vec![true; n];
    }
    (0..n).map(|_| rng.gen::<f64>() < fraction).collect()
}

/// Scale attack: multiply each targeted measurement by an independent
/// uniform factor.
pub fn apply_scale_attack(sample: &Sample, attack_seed: u64, config: &GenConfig) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(attack_seed);
    let n = sample.n();
    let targets = attacked_buses(n, config.attack_bus_fraction, &mut rng);
    let mut features = sample.features.clone();
    for bus in 0..n {
        for ch in 0..CHANNELS {
            let u = if config.scale_attack_lo == config.scale_attack_hi {
                config.scale_attack_lo
            } else {
                rng.gen_range(config.scale_attack_lo..config.scale_attack_hi)
            };
            if targets[bus] {
                features[bus * CHANNELS + ch] *= u;
            }
        }
    }
    Sample {
        features,
        label: true,
        attack_kind: AttackKind::Scale,
        scenario_seed: sample.scenario_seed,
        degenerate: false,
    }
}

/// Distribution attack: per channel, replace targeted entries with draws
/// from a Gaussian matching that channel's empirical mean and variance.
pub fn apply_distribution_attack(sample: &Sample, attack_seed: u64, config: &GenConfig) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(attack_seed);
    let n = sample.n();
    let targets = attacked_buses(n, config.attack_bus_fraction, &mut rng);
    let mut features = sample.features.clone();
    let mut degenerate = false;
    for ch in 0..CHANNELS {
        let values: Vec<f64> = (0..n).map(|b| sample.features[b * CHANNELS + ch]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for bus in 0..n {
            let draw = if std > 0.0 {
                let g: f64 = StandardNormal.sample(&mut rng);
                mean + std * g
            } else {
                degenerate = true;
                mean
            };
            if targets[bus] {
                features[bus * CHANNELS + ch] = draw;
            }
        }
    }
    Sample {
        features,
        label: true,
        attack_kind: AttackKind::Distribution,
        scenario_seed: sample.scenario_seed,
        degenerate,
    }
}

/// Attack plan for one split: which positions are clean / A_d / A_s before
/// the within-split shuffle.
fn split_plan(count: usize, attack_fraction: f64) -> Vec<AttackKind> {
    let attacked = (count as f64 * attack_fraction).round() as usize;
    let a_s = attacked / 2;
    let a_d = attacked - a_s;
    let mut plan = vec![AttackKind::None; count - attacked];
    plan.extend(std::iter::repeat_n(AttackKind::Distribution, a_d));
    plan.extend(std::iter::repeat_n(AttackKind::Scale, a_s));
    plan
}

/// Generate the full dataset. Each sample is a pure function of
/// (grid, config, global index), so parallel generation is byte-identical
/// to serial generation.
pub fn generate_dataset(grid: &Grid, config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    grid.validate()?;
    let ybus = crate::grid::build_ybus(grid)?;
    // fail early on disconnected grids
    crate::grid::build_weighted_adjacency(grid)?;
    let counts = config.split_counts();
    let mut kinds: Vec<AttackKind> = Vec::with_capacity(config.total);
    for &c in &counts {
        kinds.extend(split_plan(c, config.attack_fraction));
    }

    let samples: Vec<Result<Sample>> = (0..config.total)
        .into_par_iter()
        .map(|index| {
            let scenario_seed = derive_seed(config.master_seed, index as u64, "scenario");
            let clean = generate_scenario(grid, &ybus, scenario_seed, config)?;
            let attack_seed = derive_seed(config.master_seed, index as u64, "attack");
            Ok(match kinds[index] {
                AttackKind::None => clean,
                AttackKind::Scale => apply_scale_attack(&clean, attack_seed, config),
                AttackKind::Distribution => apply_distribution_attack(&clean, attack_seed, config),
            })
        })
        .collect();
    let mut samples = samples.into_iter().collect::<Result<Vec<Sample>>>()?;

    let test = shuffle_split(
        samples.split_off(counts[0] + counts[1]),
        config.master_seed,
        "shuffle-test",
    );
    let validation = shuffle_split(
        samples.split_off(counts[0]),
        config.master_seed,
        "shuffle-validation",
    );
    let train = shuffle_split(samples, config.master_seed, "shuffle-train");

    let scaler = fit_scaler(&train, grid.n())?;
    Ok(Dataset {
        n: grid.n(),
        train,
        validation,
        test,
        scaler,
        config: config.clone(),
        grid_fingerprint: grid_fingerprint(grid),
    })
}

fn shuffle_split(mut samples: Vec<Sample>, master_seed: u64, domain: &str) -> Vec<Sample> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 0, domain));
    samples.shuffle(&mut rng);
    samples
}

/// Per-(bus, channel) mean and guarded standard deviation over the train
/// split.
pub fn fit_scaler(train: &[Sample], n: usize) -> Result<Scaler> {
    if train.is_empty() {
        return Err(FdiaError::Config("cannot fit scaler on empty train split".into()));
    }
    let width = n * CHANNELS;
    let count = train.len() as f64;
    let mut mean = vec![0.0; width];
    for s in train {
        for (m, &z) in mean.iter_mut().zip(&s.features) {
            *m += z;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let epsilon = 1e-8;
    let mut std = vec![0.0; width];
    for s in train {
        for ((v, &z), &m) in std.iter_mut().zip(&s.features).zip(&mean) {
            *v += (z - m) * (z - m);
        }
    }
    for v in std.iter_mut() {
        *v = (*v / count).sqrt().max(epsilon);
    }
    Ok(Scaler { mean, std, epsilon })
}

// --- persistence ---

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitCounts {
    pub total: usize,
    pub clean: usize,
    pub scale: usize,
    pub distribution: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n: usize,
    pub grid_fingerprint: String,
    pub config: GenConfig,
    pub counts: std::collections::BTreeMap<String, SplitCounts>,
    pub scaler: Scaler,
}

fn count_split(samples: &[Sample]) -> SplitCounts {
    SplitCounts {
        total: samples.len(),
        clean: samples.iter().filter(|s| s.attack_kind == AttackKind::None).count(),
        scale: samples.iter().filter(|s| s.attack_kind == AttackKind::Scale).count(),
        distribution: samples
            .iter()
            .filter(|s| s.attack_kind == AttackKind::Distribution)
            .count(),
    }
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut counts = std::collections::BTreeMap::new();
    for name in ["train", "validation", "test"] {
        counts.insert(name.to_string(), count_split(dataset.split(name).unwrap()));
    }
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        n: dataset.n,
        grid_fingerprint: dataset.grid_fingerprint.clone(),
        config: dataset.config.clone(),
        counts,
        scaler: dataset.scaler.clone(),
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    for name in ["train", "validation", "test"] {
        write_split(
            &dir.join(format!("{name}.bin")),
            dataset.n,
            dataset.split(name).unwrap(),
        )?;
    }
    Ok(())
}

/// Split file: magic `FDIA`, u32 version, u32 n, u32 channels, u64 count,
/// `count` records of n*channels little-endian f32 features (bus-major),
/// then `count` u8 labels, then `count` u8 attack kinds. Features are
/// stored unstandardized.
pub fn write_split(path: &Path, n: usize, samples: &[Sample]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(SPLIT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.n() != n {
            return Err(FdiaError::Dimension(format!(
                "sample has {} buses, split expects {n}",
                s.n()
            )));
        }
        for &z in &s.features {
            buf.extend_from_slice(&(z as f32).to_le_bytes());
        }
    }
    for s in samples {
        buf.push(s.label as u8);
    }
    for s in samples {
        buf.push(s.attack_kind.code());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<(usize, Vec<Sample>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > bytes.len() {
            return Err(FdiaError::Format(format!(
                "truncated split file {}",
                path.display()
            )));
        }
        let slice = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(slice)
    };
    if take(&mut pos, 4)? != SPLIT_MAGIC {
        return Err(FdiaError::Format(format!(
            "{} is not a dataset split file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FdiaError::Format(format!(
            "unsupported split format version {version}"
        )));
    }
    let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if channels != CHANNELS {
        return Err(FdiaError::Format(format!(
            "expected {CHANNELS} channels, file has {channels}"
        )));
    }
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = take(&mut pos, n * CHANNELS * 4)?;
        let feats: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        features.push(feats);
    }
    let labels = take(&mut pos, count)?.to_vec();
    let kinds = take(&mut pos, count)?.to_vec();
    let mut samples = Vec::with_capacity(count);
    for ((feats, label), kind) in features.into_iter().zip(labels).zip(kinds) {
        let attack_kind = AttackKind::from_code(kind)?;
        let label = label != 0;
        if label != (attack_kind != AttackKind::None) {
            return Err(FdiaError::Format(
                "label and attack kind disagree in split file".into(),
            ));
        }
        samples.push(Sample {
            features: feats,
            label,
            attack_kind,
            scenario_seed: 0,
            degenerate: false,
        });
    }
    Ok((n, samples))
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let mut splits = Vec::new();
    for name in ["train", "validation", "test"] {
        let (n, samples) = read_split(&dir.join(format!("{name}.bin")))?;
        if n != meta.n {
            return Err(FdiaError::Format(format!(
                "split {name} has n={n}, meta says {}",
                meta.n
            )));
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let dataset = Dataset {
        n: meta.n,
        train,
        validation,
        test,
        scaler: meta.scaler.clone(),
        config: meta.config.clone(),
        grid_fingerprint: meta.grid_fingerprint.clone(),
    };
    Ok((dataset, meta))
}
