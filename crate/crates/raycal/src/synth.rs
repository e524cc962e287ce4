//! Synthetic measurement generation: a reference corridor scene with
//! known material parameters, uniformly sampled transmitter positions
//! and ray-traced impulse responses written as a jsonl dataset plus a
//! manifest and a ground-truth checkpoint.

use crate::ad::Tape;
use crate::calib::{prepare_traced, predict_taps, DatasetRecord};
use crate::field::WaveformConfig;
use crate::geom::{v3, MaterialSpec, Scene, Vec3};
use crate::params::{logit, MaterialModelKind, ModelConfig, ParamModel, PatternModelKind};
use crate::tracer::{trace_all, TraceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Axis-aligned box; transmitters are drawn uniformly from it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RegionBox {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let u = |lo: f64, hi: f64, r: &mut ChaCha8Rng| lo + (hi - lo) * r.gen::<f64>();
        v3(
            u(self.min[0], self.max[0], rng),
            u(self.min[1], self.max[1], rng),
            u(self.min[2], self.max[2], rng),
        )
    }
}

fn default_lobe_mix() -> f64 {
    0.8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub positions: usize,
    pub seed: u64,
    pub waveform: WaveformConfig,
    pub trace: TraceConfig,
    pub tx_region: RegionBox,
    pub rx: [f64; 3],
    /// Energy split between the specular and backscatter lobes.
    #[serde(default = "default_lobe_mix")]
    pub lobe_mix: f64,
    /// Draw random diffuse phases per record instead of zeros.
    #[serde(default)]
    pub random_phases: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            positions: 256,
            seed: 42,
            waveform: WaveformConfig {
                carrier_hz: 3.438e9,
                subcarriers: 64,
                spacing_hz: 50e6 / 64.0,
            },
            trace: TraceConfig {
                max_order: 3,
                sbr_rays: 0,
                diffuse_samples: 24,
                seed: 42,
                exhaustive: true,
            },
            tx_region: RegionBox {
                min: [1.0, -1.2, 0.5],
                max: [17.0, 1.2, 2.5],
            },
            rx: [18.0, 0.0, 1.5],
            lobe_mix: 0.8,
            random_phases: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene: {0}")]
    Scene(#[from] crate::geom::SceneError),
    #[error("dataset: {0}")]
    Data(String),
}

/// Reference corridor: 19 m x 3 m x 3 m shoebox with floor, ceiling
/// and wall materials at the published reference values.
pub fn corridor_scene() -> Scene {
    let (lx, ly, lz) = (19.0, 1.5, 3.0);
    let vertices = vec![
        v3(0.0, -ly, 0.0),
        v3(lx, -ly, 0.0),
        v3(lx, ly, 0.0),
        v3(0.0, ly, 0.0),
        v3(0.0, -ly, lz),
        v3(lx, -ly, lz),
        v3(lx, ly, lz),
        v3(0.0, ly, lz),
    ];
    // 0 floor, 1 walls, 2 ceiling
    let tris = vec![
        ([0, 1, 2], 0),
        ([0, 2, 3], 0),
        ([4, 6, 5], 2),
        ([4, 7, 6], 2),
        ([0, 5, 1], 1), // y = -ly
        ([0, 4, 5], 1),
        ([3, 2, 6], 1), // y = +ly
        ([3, 6, 7], 1),
        ([0, 3, 7], 1), // x = 0
        ([0, 7, 4], 1),
        ([1, 5, 6], 1), // x = lx
        ([1, 6, 2], 1),
    ];
    let materials = vec![
        MaterialSpec::Fixed {
            name: "floor".into(),
            eps_r: 5.24,
            sigma: 0.121,
            scattering: 0.3,
            xpd: 0.2,
        },
        MaterialSpec::Fixed {
            name: "walls".into(),
            eps_r: 2.73,
            sigma: 0.027,
            scattering: 0.5,
            xpd: 0.4,
        },
        MaterialSpec::Fixed {
            name: "ceiling".into(),
            eps_r: 1.48,
            sigma: 0.004,
            scattering: 0.8,
            xpd: 0.3,
        },
    ];
    Scene::new(vertices, tris, materials).expect("reference scene is valid")
}

/// Ground-truth model over the given scene: fixed materials from the
/// scene specs, isotropic antennas and the reference lobe mix.
pub fn truth_model(scene: &Scene, cfg: &SynthConfig) -> ParamModel {
    let model_cfg = ModelConfig {
        materials: MaterialModelKind::Scene,
        pattern: PatternModelKind::Backscatter {
            alpha_r: 5,
            alpha_s: 8,
        },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ParamModel::init(scene, &model_cfg, &mut rng);
    model.store.set("scat/lobe_mix", logit(cfg.lobe_mix));
    model
}

fn fmt_float(x: f64) -> String {
    // 17 significant digits: enough to reproduce any f64 exactly
    format!("{:.16e}", x)
}

fn record_line(r: &DatasetRecord) -> String {
    let taps: Vec<String> = r
        .cir
        .iter()
        .map(|t| format!("[{},{}]", fmt_float(t[0]), fmt_float(t[1])))
        .collect();
    format!(
        "{{\"id\":{},\"tx\":[{},{},{}],\"rx\":{},\"cir\":[{}]}}",
        r.id,
        fmt_float(r.tx[0]),
        fmt_float(r.tx[1]),
        fmt_float(r.tx[2]),
        r.rx,
        taps.join(",")
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub waveform: WaveformConfig,
    pub records: usize,
    /// Record ids with no propagation paths; their CIRs are all-zero.
    pub empty_records: Vec<usize>,
    pub scene_file: String,
    pub truth_checkpoint: String,
}

pub struct GeneratedDataset {
    pub records: Vec<DatasetRecord>,
    pub manifest: Manifest,
}

/// Traces every sampled transmitter and synthesizes its CIR from the
/// ground-truth model. Deterministic for a fixed config.
pub fn generate(scene: &Scene, cfg: &SynthConfig) -> Result<GeneratedDataset, SynthError> {
    if cfg.positions == 0 {
        return Err(SynthError::Data("positions must be >= 1".into()));
    }
    cfg.waveform.validate().map_err(SynthError::Data)?;
    let truth = truth_model(scene, cfg);
    let rx = v3(cfg.rx[0], cfg.rx[1], cfg.rx[2]);

    // sample all positions up front so record i never depends on the
    // parallel schedule
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let txs: Vec<Vec3> = (0..cfg.positions)
        .map(|_| cfg.tx_region.sample(&mut rng))
        .collect();

    let records: Vec<(DatasetRecord, bool)> = txs
        .par_iter()
        .enumerate()
        .map(|(id, &tx)| {
            let paths = trace_all(scene, tx, rx, &cfg.trace);
            let empty = paths.paths.is_empty();
            let traced = prepare_traced(paths, &cfg.waveform);
            let chi: Vec<(f64, f64)> = if cfg.random_phases {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ (id as u64) << 20);
                (0..traced.paths.paths.len())
                    .map(|_| {
                        (
                            r.gen::<f64>() * std::f64::consts::TAU,
                            r.gen::<f64>() * std::f64::consts::TAU,
                        )
                    })
                    .collect()
            } else {
                vec![(0.0, 0.0); traced.paths.paths.len()]
            };
            let tape = Tape::new();
            let realized = truth.realize(&tape);
            let taps = predict_taps(&tape, &realized, &traced, &cfg.waveform, &chi);
            let cir: Vec<[f64; 2]> = taps
                .iter()
                .map(|c| {
                    let (re, im) = c.value();
                    [re, im]
                })
                .collect();
            (
                DatasetRecord {
                    id,
                    tx: [tx.x, tx.y, tx.z],
                    rx: 0,
                    cir,
                },
                empty,
            )
        })
        .collect();

    let empty_records: Vec<usize> = records
        .iter()
        .filter(|(_, e)| *e)
        .map(|(r, _)| r.id)
        .collect();
    if !empty_records.is_empty() {
        eprintln!(
            "warning: {} record(s) have no propagation paths (kept as zero CIRs)",
            empty_records.len()
        );
    }

    let cfg_json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(cfg_json.as_bytes());
    let config_sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();

    Ok(GeneratedDataset {
        records: records.into_iter().map(|(r, _)| r).collect(),
        manifest: Manifest {
            version: 1,
            seed: cfg.seed,
            config_sha256,
            waveform: cfg.waveform.clone(),
            records: cfg.positions,
            empty_records,
            scene_file: "scene.json".into(),
            truth_checkpoint: "truth.json".into(),
        },
    })
}

/// Writes dataset.jsonl, manifest.json, scene.json and truth.json into
/// `dir` (created if absent).
pub fn write_dataset(
    dir: &Path,
    scene: &Scene,
    cfg: &SynthConfig,
    data: &GeneratedDataset,
) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("dataset.jsonl"))?);
    for r in &data.records {
        writeln!(f, "{}", record_line(r))?;
    }
    f.flush()?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&data.manifest).expect("manifest serializes"),
    )?;
    std::fs::write(dir.join("scene.json"), scene.to_json())?;
    let truth = truth_model(scene, cfg);
    truth
        .to_checkpoint()
        .save(&dir.join("truth.json"))
        .map_err(|e| SynthError::Data(e.to_string()))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, SynthError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| SynthError::Data(format!("line {}: {e}", i + 1)))?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(SynthError::Data("dataset is empty".into()));
    }
    Ok(out)
}

/// Deterministic train/val/test split: the held-out total and the
/// validation count take the floor of their fractions; the test split
/// takes the remainder of the holdout.
pub fn split<T>(items: Vec<T>, train: f64, val: f64) -> (Vec<T>, Vec<T>, Vec<T>) {
    assert!(train >= 0.0 && val >= 0.0 && train + val <= 1.0);
    let n = items.len();
    // the epsilon guards exact multiples against float noise,
    // e.g. 10 * (1 - 0.8) = 1.9999999999999996
    let n_holdout = (n as f64 * (1.0 - train) + 1e-9).floor() as usize;
    let n_train = n - n_holdout;
    let n_val = ((n as f64 * val + 1e-9).floor() as usize).min(n_holdout);
    let mut it = items.into_iter();
    let a: Vec<T> = it.by_ref().take(n_train).collect();
    let b: Vec<T> = it.by_ref().take(n_val).collect();
    let c: Vec<T> = it.collect();
    (a, b, c)
}
