//! Labeled-sample manifests, deterministic train/test splits, and a seeded
//! synthetic traffic generator.
//!
//! The generator ships class-frequency profiles that stand in for real
//! captures: benign traffic with an even, printable-leaning spread, and
//! malicious profiles dominated by null bytes, control characters, or 0xFF
//! runs. The shipped numbers are artifact calibrations of those qualitative
//! shapes, not measured traffic statistics.

use crate::byteclass::ByteClass;
use crate::label::{Family, Label};
use crate::pcap::PayloadChunk;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// One labeled sample: a pcap or raw `.bin` file plus its ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub path: String,
    pub label: Label,
    pub family: Family,
    pub source: String,
}

impl SampleRecord {
    /// label benign ⇔ family benign.
    pub fn is_consistent(&self) -> bool {
        self.family.implied_label() == self.label
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest line {line}: {message}")]
    InvalidLabel { line: usize, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    path: String,
    label: String,
    family: String,
    source: String,
}

/// Parse a JSON Lines manifest: one record per line with keys
/// `path,label,family,source`; unknown keys are rejected.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>, ManifestError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label: Label = raw.label.parse().map_err(|message| ManifestError::InvalidLabel {
            line: line_no,
            message,
        })?;
        let family: Family = raw.family.parse().map_err(|message| ManifestError::InvalidLabel {
            line: line_no,
            message,
        })?;
        let record = SampleRecord {
            path: raw.path,
            label,
            family,
            source: raw.source,
        };
        if !record.is_consistent() {
            return Err(ManifestError::InvalidLabel {
                line: line_no,
                message: format!(
                    "label {} inconsistent with family {} (benign label iff benign family)",
                    record.label, record.family
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>, ManifestError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(records: &[SampleRecord], path: &Path) -> Result<(), ManifestError> {
    std::fs::write(path, manifest_to_string(records))?;
    Ok(())
}

/// Append records to an existing (or new) manifest file.
pub fn append_manifest(records: &[SampleRecord], path: &Path) -> Result<(), ManifestError> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(manifest_to_string(records).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("need at least 2 records (and 2 per present class) to split, got {0}")]
    TooFewRecords(usize),
    #[error("split requires both classes in the input; only {0} present")]
    MissingClass(Label),
    #[error("train_fraction must lie strictly between 0 and 1")]
    InvalidFraction,
}

/// Deterministic index split: seeded shuffle, cut at
/// `floor(train_fraction * n)`, then minimal swaps so each side keeps at
/// least one sample of every class present in the input.
pub fn split_indices(labels: &[Label], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SplitError::InvalidFraction);
    }
    let n = labels.len();
    if n < 2 {
        return Err(SplitError::TooFewRecords(n));
    }
    for class in [Label::Benign, Label::Malicious] {
        if !labels.contains(&class) {
            let present = if class == Label::Benign { Label::Malicious } else { Label::Benign };
            return Err(SplitError::MissingClass(present));
        }
        // One per side needs two overall.
        if labels.iter().filter(|&&l| l == class).count() < 2 {
            return Err(SplitError::TooFewRecords(n));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let cut = ((spec.train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    if cut < 2 || n - cut < 2 {
        // A side of one element cannot hold both classes.
        return Err(SplitError::TooFewRecords(n));
    }
    let (mut train, mut test): (Vec<usize>, Vec<usize>) =
        (order[..cut].to_vec(), order[cut..].to_vec());

    for class in [Label::Benign, Label::Malicious] {
        ensure_class(&mut train, &mut test, labels, class);
        ensure_class(&mut test, &mut train, labels, class);
    }
    Ok((train, test))
}

/// If `side` lacks `class`, swap its first over-represented element with the
/// first `class` element of `other`. Guarded by the >=2-per-class check.
fn ensure_class(side: &mut [usize], other: &mut [usize], labels: &[Label], class: Label) {
    if side.iter().any(|&i| labels[i] == class) {
        return;
    }
    let take = other
        .iter()
        .position(|&i| labels[i] == class)
        .expect("class present in input but missing from both sides");
    // Every element of `side` is the other class, so any is a valid donor.
    std::mem::swap(&mut side[0], &mut other[take]);
}

/// Split sample records into train and test subsets.
pub fn split(
    records: &[SampleRecord],
    spec: &SplitSpec,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>), SplitError> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = split_indices(&labels, spec)?;
    Ok((
        train_idx.into_iter().map(|i| records[i].clone()).collect(),
        test_idx.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

/// Target byte-class mix for synthetic chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthProfile {
    pub name: String,
    /// Target frequencies in class index order (null, printable, control,
    /// extended, full); must sum to 1.
    pub frequencies: [f64; 5],
    /// Per-class relative perturbation bound applied per chunk.
    pub jitter: f64,
    /// Family tag written to manifests for chunks of this profile.
    pub family: Family,
}

impl SynthProfile {
    pub fn label(&self) -> Label {
        self.family.implied_label()
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.frequencies.iter().any(|&f| f < 0.0 || !f.is_finite()) {
            return Err(SynthError::BadProfile("negative or non-finite frequency"));
        }
        let sum: f64 = self.frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadProfile("frequencies do not sum to 1"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(SynthError::BadProfile("jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("bad synthesis profile: {0}")]
    BadProfile(&'static str),
    #[error("bad synthesis request: {0}")]
    InvalidParams(&'static str),
}

/// splitmix64 finalizer; decorrelates per-chunk seeds so generation can be
/// parallelized per chunk without changing output.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_byte(class: ByteClass, rng: &mut ChaCha8Rng) -> u8 {
    match class {
        ByteClass::Null => 0x00,
        ByteClass::Printable => 0x20 + rng.random_range(0..95u8),
        ByteClass::Control => {
            let i = rng.random_range(0..32u8);
            if i < 31 {
                0x01 + i
            } else {
                0x7F
            }
        }
        ByteClass::Extended => 0x80 + rng.random_range(0..127u8),
        ByteClass::Full => 0xFF,
        ByteClass::Padding => unreachable!("padding is never synthesized"),
    }
}

/// Generate `count` chunks of `chunk_len` bytes. Per chunk, the profile's
/// frequencies are perturbed within the jitter bound and renormalized, then
/// each byte's class is drawn from that categorical and its value uniformly
/// within the class range. Deterministic per (profile, seed).
pub fn synth_chunks(
    profile: &SynthProfile,
    count: usize,
    chunk_len: usize,
    seed: u64,
) -> Result<Vec<PayloadChunk>, SynthError> {
    profile.validate()?;
    if count < 1 {
        return Err(SynthError::InvalidParams("count must be >= 1"));
    }
    if chunk_len < 100 {
        return Err(SynthError::InvalidParams(
            "chunk_len must be >= 100 so empirical frequencies are meaningful",
        ));
    }
    let mut chunks = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let mut freqs = profile.frequencies;
        if profile.jitter > 0.0 {
            for f in &mut freqs {
                *f *= 1.0 + rng.random_range(-profile.jitter..=profile.jitter);
            }
        }
        let sum: f64 = freqs.iter().sum();
        for f in &mut freqs {
            *f /= sum;
        }
        let mut bytes = Vec::with_capacity(chunk_len);
        for _ in 0..chunk_len {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = ByteClass::Full;
            for (ci, &f) in freqs.iter().enumerate() {
                acc += f;
                if r < acc {
                    chosen = ByteClass::DATA_CLASSES[ci];
                    break;
                }
            }
            bytes.push(draw_byte(chosen, &mut rng));
        }
        chunks.push(PayloadChunk {
            bytes,
            source_id: format!("synth:{}", profile.name),
            seq_no: i as u64,
            ts: 0.0,
        });
    }
    Ok(chunks)
}

/// The shipped profiles: `benign`, `nullheavy`, `ddos`, `whiteheavy`.
pub fn builtin_profiles() -> Vec<SynthProfile> {
    vec![
        SynthProfile {
            name: "benign".into(),
            frequencies: [0.10, 0.55, 0.15, 0.15, 0.05],
            jitter: 0.05,
            family: Family::Benign,
        },
        SynthProfile {
            name: "nullheavy".into(),
            frequencies: [0.45, 0.25, 0.10, 0.15, 0.05],
            jitter: 0.05,
            family: Family::Backdoor,
        },
        SynthProfile {
            name: "ddos".into(),
            frequencies: [0.10, 0.20, 0.55, 0.10, 0.05],
            jitter: 0.05,
            family: Family::Ddos,
        },
        SynthProfile {
            name: "whiteheavy".into(),
            frequencies: [0.10, 0.30, 0.10, 0.15, 0.35],
            jitter: 0.05,
            family: Family::Trojan,
        },
    ]
}

pub fn find_profile(name: &str) -> Option<SynthProfile> {
    builtin_profiles().into_iter().find(|p| p.name == name)
}
