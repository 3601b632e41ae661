//! Dataset generation and the line-oriented `FSD1` file format.
//!
//! ```text
//! FSD1 1
//! {header json}
//! {record json}        one line per record
//! ```
//!
//! Records hold the full scene, the force and the label; image tensors are regenerated
//! on load by the encoder.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{encode_sample, EncodeOptions, EncodedSample};
use crate::physics::{simulate, SimConfig};
use crate::quantize::{build_vocabulary, extract_sequence, VelocitySequence};
use crate::scene::{
    generate_scene, sample_force, BandConfig, Category, ForceApplication, MagnitudeBand,
    SceneGenConfig, SceneSpec,
};
use crate::{seed, Error, Result};

pub const DATASET_MAGIC: &str = "FSD1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scene_index: u32,
    pub split: Split,
    pub scene: SceneSpec,
    pub force: ForceApplication,
    pub label: VelocitySequence,
}

impl Record {
    pub fn target_category(&self) -> Result<Category> {
        Ok(self.scene.body(self.force.body_id)?.category)
    }

    pub fn encode(&self, options: &EncodeOptions) -> Result<EncodedSample> {
        encode_sample(&self.scene, &self.force, &self.label, options)
    }

    /// Re-simulates the record and extracts its label.
    pub fn resimulate(&self, sim: &SimConfig) -> Result<VelocitySequence> {
        let trace = simulate(&self.scene, &self.force, sim)?;
        extract_sequence(&trace, &build_vocabulary(), sim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub scenes: usize,
    pub forces_per_body: usize,
    pub seed: u64,
    /// Probability that a sampled direction is repeated in every magnitude band.
    pub p_band: f64,
    /// Scene-level split probabilities for train and val; the rest is test.
    pub split_fractions: (f64, f64),
    /// Every movable category must appear in both the train and test splits.
    pub holdout_ready: bool,
    pub scene: SceneGenConfig,
    pub bands: BandConfig,
    pub sim: SimConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            forces_per_body: 2,
            seed: 0,
            p_band: 0.2,
            split_fractions: (0.7, 0.1),
            holdout_ready: false,
            scene: SceneGenConfig::default(),
            bands: BandConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.bands.validate()?;
        self.sim.validate()?;
        let (a, b) = self.split_fractions;
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
            return Err(Error::Config("split fractions must be non-negative and sum to at most 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_band) {
            return Err(Error::Config("p_band must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenCounts {
    pub records: usize,
    pub scenes_generated: usize,
    pub scenes_failed: usize,
    pub forces_unplaceable: usize,
    pub not_converged: usize,
    pub per_split: BTreeMap<String, usize>,
    pub stop_labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub magic: String,
    pub version: u32,
    pub seed: u64,
    pub config: GenConfig,
    pub counts: GenCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

struct SceneOutput {
    records: Vec<Record>,
    failed: bool,
    unplaceable: usize,
    not_converged: usize,
}

fn generate_one(index: usize, cfg: &GenConfig) -> SceneOutput {
    let scene_seed = seed::derive(cfg.seed, index as u64);
    let mut out = SceneOutput {
        records: Vec::new(),
        failed: false,
        unplaceable: 0,
        not_converged: 0,
    };
    let Ok(scene) = generate_scene(scene_seed, &cfg.scene) else {
        out.failed = true;
        return out;
    };
    let mut rng = seed::rng(seed::derive(scene_seed, u64::MAX));
    let r: f64 = rng.random();
    let split = if r < cfg.split_fractions.0 {
        Split::Train
    } else if r < cfg.split_fractions.0 + cfg.split_fractions.1 {
        Split::Val
    } else {
        Split::Test
    };
    let vocab = build_vocabulary();
    for body in scene.bodies.iter().filter(|b| !b.is_static) {
        for k in 0..cfg.forces_per_body {
            let force_seed = seed::derive(seed::derive(scene_seed, body.id as u64 + 1), k as u64);
            let Ok(force) = sample_force(&scene, body.id, force_seed, &cfg.bands) else {
                out.unplaceable += 1;
                continue;
            };
            let mut forces = vec![force.clone()];
            if rng.random::<f64>() < cfg.p_band {
                for (bi, band) in MagnitudeBand::ALL.into_iter().enumerate() {
                    if band != force.magnitude_band {
                        forces.push(force.with_band(band, seed::derive(force_seed, bi as u64), &cfg.bands));
                    }
                }
            }
            for f in forces {
                let label = simulate(&scene, &f, &cfg.sim)
                    .and_then(|t| extract_sequence(&t, &vocab, &cfg.sim));
                match label {
                    Ok(label) => out.records.push(Record {
                        scene_index: index as u32,
                        split,
                        scene: scene.clone(),
                        force: f,
                        label,
                    }),
                    Err(_) => out.not_converged += 1,
                }
            }
        }
    }
    out
}

/// Generates scenes, forces and labels; identical configs yield identical datasets.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let outputs: Vec<SceneOutput> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| generate_one(i, cfg))
        .collect();
    let mut counts = GenCounts::default();
    let mut records = Vec::new();
    for o in outputs {
        counts.scenes_failed += usize::from(o.failed);
        counts.scenes_generated += usize::from(!o.failed);
        counts.forces_unplaceable += o.unplaceable;
        counts.not_converged += o.not_converged;
        records.extend(o.records);
    }
    if records.is_empty() {
        return Err(Error::Generation("every record was excluded".into()));
    }
    for r in &records {
        *counts.per_split.entry(r.split.name().to_string()).or_default() += 1;
        counts.stop_labels += usize::from(r.label == VelocitySequence::stop());
    }
    counts.records = records.len();
    let dataset = Dataset {
        header: DatasetHeader {
            magic: DATASET_MAGIC.into(),
            version: DATASET_VERSION,
            seed: cfg.seed,
            config: cfg.clone(),
            counts,
        },
        records,
    };
    if cfg.holdout_ready {
        for cat in Category::MOVABLE {
            for split in [Split::Train, Split::Test] {
                let present = dataset
                    .records
                    .iter()
                    .any(|r| r.split == split && r.target_category().ok() == Some(cat));
                if !present {
                    return Err(Error::Generation(format!(
                        "no {} records in the {} split; increase --scenes",
                        cat.name(),
                        split.name()
                    )));
                }
            }
        }
    }
    Ok(dataset)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATASET_MAGIC} {DATASET_VERSION}")?;
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(DATASET_MAGIC) {
            return Err(Error::Format(format!("missing {DATASET_MAGIC} magic")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("missing dataset version".into()))?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing dataset header".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.counts.records);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
            records.push(rec);
        }
        if records.len() != header.counts.records {
            return Err(Error::Format(format!(
                "header declares {} records, file has {}",
                header.counts.records,
                records.len()
            )));
        }
        Ok(Dataset { header, records })
    }

    pub fn load(path: &std::path::Path) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Dataset::read_from(std::io::BufReader::new(f))
    }
}

/// Encodes records in parallel, preserving order.
pub fn encode_records(records: &[&Record], options: &EncodeOptions) -> Result<Vec<EncodedSample>> {
    records.par_iter().map(|r| r.encode(options)).collect()
}
