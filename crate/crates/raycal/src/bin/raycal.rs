//! Command-line interface: dataset generation, calibration, evaluation,
//! path tracing and gradient checks.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical abort,
//! 4 incompatibility, 5 gradcheck failure.

use clap::{Args, Parser, Subcommand};
use raycal::ad::{finite_diff_check, CVar, Tape};
use raycal::calib::{
    align_cir, evaluate, example_loss, predict_taps, prepare_traced, train, DatasetRecord,
    TrainError, TrainingConfig,
};
use raycal::field::{path_coefficient, WaveformConfig};
use raycal::geom::{v3, Scene, Vec3};
use raycal::params::{
    AntennaModelKind, Checkpoint, MaterialModelKind, ModelConfig, ParamModel, PatternModelKind,
};
use raycal::plot;
use raycal::synth::{
    corridor_scene, generate, read_dataset, split, truth_model, write_dataset, Manifest,
    SynthConfig,
};
use raycal::tracer::{trace_all, TraceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INCOMPATIBLE: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "raycal", about = "Differentiable ray-tracing calibration", version)]
struct Cli {
    /// Worker thread count (0 = all cores; env RAYCAL_THREADS as fallback).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from a scene with known materials.
    Generate(GenerateArgs),
    /// Fit material / antenna / scattering parameters to a dataset.
    Calibrate(CalibrateArgs),
    /// Report error metrics (and figures) for a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Trace propagation paths between two points and print them.
    Trace(TraceArgs),
    /// Run the built-in finite-difference gradient check suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scene JSON; omit to use the built-in corridor scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Synthesis config JSON; omit for defaults.
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    positions: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Dataset directory produced by `generate` (dataset.jsonl,
    /// manifest.json, scene.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Material model: "embedding" or "neural".
    #[arg(long, default_value = "embedding")]
    model: String,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dimension L.
    #[arg(long, default_value_t = 30)]
    emb_dim: usize,
    /// Positional encoding levels for the neural model.
    #[arg(long, default_value_t = 10)]
    enc_levels: usize,
    /// Measured data: estimate the measurement scale and align CIRs.
    #[arg(long)]
    measured: bool,
    #[arg(long)]
    freeze_materials: bool,
    #[arg(long)]
    freeze_antenna: bool,
    #[arg(long)]
    freeze_scattering: bool,
    /// Spherical-Gaussian antenna mixture size (0 = isotropic).
    #[arg(long, default_value_t = 0)]
    sg_components: usize,
    #[arg(long, default_value_t = 50)]
    val_interval: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a path-loss heatmap over the transmitter positions.
    #[arg(long)]
    heatmap: bool,
    /// Write measured-vs-predicted CIR stem plots for these record ids.
    #[arg(long, value_delimiter = ',')]
    cir: Vec<usize>,
    /// Measurement scale to apply (1 for synthetic data).
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Transmitter position "x,y,z".
    #[arg(long)]
    tx: String,
    #[arg(long)]
    rx: String,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    #[arg(long, default_value_t = 0)]
    diffuse: usize,
    #[arg(long, default_value_t = 3.438e9)]
    carrier: f64,
    /// Output JSON path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Machine-readable report.
    #[arg(long)]
    json: bool,
    /// Corrupt one partial on purpose (self-test of the failure path).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        std::env::var("RAYCAL_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    };
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: could not set thread pool size: {e}");
        }
    }
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Calibrate(a) => cmd_calibrate(a, threads),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Trace(a) => cmd_trace(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn input_err<E: std::fmt::Display>(e: E) -> (u8, String) {
    (EXIT_INPUT, e.to_string())
}

fn load_scene(path: &Path) -> Result<Scene, (u8, String)> {
    Scene::load(path).map_err(input_err)
}

fn parse_point(s: &str) -> Result<Vec3, (u8, String)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| (EXIT_INPUT, format!("bad coordinate '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err((EXIT_INPUT, format!("expected x,y,z, got '{s}'")));
    }
    Ok(v3(parts[0], parts[1], parts[2]))
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let scene = match &a.scene {
        Some(p) => load_scene(p)?,
        None => corridor_scene(),
    };
    let mut cfg: SynthConfig = match &a.synth {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(input_err)?;
            serde_json::from_str(&text).map_err(input_err)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        cfg.trace.seed = seed;
    }
    if let Some(n) = a.positions {
        cfg.positions = n;
    }
    let data = generate(&scene, &cfg).map_err(input_err)?;
    write_dataset(&a.out, &scene, &cfg, &data).map_err(input_err)?;
    let mean_paths = {
        // re-trace a small sample for the summary rather than keeping
        // every PathSet in memory
        let sample = data.records.len().min(8).max(1);
        let rx = v3(cfg.rx[0], cfg.rx[1], cfg.rx[2]);
        let total: usize = data.records[..sample]
            .iter()
            .map(|r| trace_all(&scene, r.tx_pos(), rx, &cfg.trace).paths.len())
            .sum();
        total as f64 / sample as f64
    };
    println!(
        "wrote {} records to {} (mean paths/position ~ {:.1}, {} empty)",
        data.records.len(),
        a.out.display(),
        mean_paths,
        data.manifest.empty_records.len()
    );
    Ok(())
}

struct LoadedData {
    scene: Scene,
    manifest: Manifest,
    records: Vec<DatasetRecord>,
    trace: TraceConfig,
}

fn load_data_dir(dir: &Path) -> Result<LoadedData, (u8, String)> {
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("manifest.json")).map_err(input_err)?,
    )
    .map_err(input_err)?;
    let scene = load_scene(&dir.join(&manifest.scene_file))?;
    let records = read_dataset(&dir.join("dataset.jsonl")).map_err(input_err)?;
    manifest.waveform.validate().map_err(|e| (EXIT_INPUT, e))?;
    for r in &records {
        r.validate(manifest.waveform.subcarriers)
            .map_err(|e| (EXIT_INPUT, e))?;
    }
    // trace settings travel with the dataset via the synth defaults;
    // K=3 specular plus first-order diffuse
    let trace = TraceConfig {
        max_order: 3,
        sbr_rays: 0,
        diffuse_samples: 24,
        seed: manifest.seed,
        exhaustive: true,
    };
    Ok(LoadedData {
        scene,
        manifest,
        records,
        trace,
    })
}

fn cmd_calibrate(a: CalibrateArgs, threads: usize) -> CmdResult {
    let data = load_data_dir(&a.data)?;
    let materials = match a.model.as_str() {
        "embedding" => MaterialModelKind::Embedding { dim: a.emb_dim },
        "neural" => MaterialModelKind::Neural {
            encoding_levels: a.enc_levels,
            hidden: 64,
            layers: 3,
        },
        other => return Err((EXIT_INPUT, format!("unknown model '{other}'"))),
    };
    let antenna = if a.sg_components > 0 {
        AntennaModelKind::SgMixture {
            components: a.sg_components,
            zeta_deg: 0.0,
        }
    } else {
        AntennaModelKind::Isotropic { zeta_deg: 0.0 }
    };
    let model_cfg = ModelConfig {
        materials,
        antenna,
        pattern: PatternModelKind::Backscatter {
            alpha_r: 5,
            alpha_s: 8,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut model = ParamModel::init(&data.scene, &model_cfg, &mut rng);

    let mut records = data.records;
    if a.measured {
        for r in &mut records {
            r.cir = align_cir(&r.cir);
        }
    }
    let (train_recs, val_recs, _test) = split(records, 0.8, 0.1);
    eprintln!(
        "tracing {} train + {} validation positions...",
        train_recs.len(),
        val_recs.len()
    );
    let rx_guess = v3(
        data.manifest.waveform.carrier_hz * 0.0 + 18.0,
        0.0,
        1.5,
    );
    let rx = rx_position(&data.manifest, rx_guess);
    let trace_cfg = &data.trace;
    let scene = &data.scene;
    let wf = data.manifest.waveform.clone();
    let prep = |rs: &[DatasetRecord]| {
        rs.par_iter()
            .map(|r| prepare_traced(trace_all(scene, r.tx_pos(), rx, trace_cfg), &wf))
            .collect::<Vec<_>>()
    };
    let train_traced = prep(&train_recs);
    let val_traced = prep(&val_recs);

    let cfg = TrainingConfig {
        batch_size: a.batch,
        learning_rate: a.lr,
        iterations: a.iters,
        seed: a.seed,
        synthetic: !a.measured,
        threads,
        train_materials: !a.freeze_materials,
        train_antenna: !a.freeze_antenna,
        train_scattering: !a.freeze_scattering,
        val_interval: a.val_interval,
        patience: a.patience,
        ..TrainingConfig::default()
    };
    let t0 = std::time::Instant::now();
    let result = train(
        &mut model,
        &wf,
        &train_recs,
        &train_traced,
        &val_recs,
        &val_traced,
        &cfg,
    )
    .map_err(|e| match e {
        TrainError::NonFinite { .. } => (EXIT_NUMERICAL, e.to_string()),
        _ => (EXIT_INPUT, e.to_string()),
    })?;

    std::fs::create_dir_all(&a.out).map_err(input_err)?;
    model
        .to_checkpoint()
        .save(&a.out.join("checkpoint.json"))
        .map_err(input_err)?;
    write_log_with_time(&a.out.join("training_log.csv"), &result.history, t0)
        .map_err(input_err)?;
    let pts: Vec<(f64, f64)> = result
        .history
        .iter()
        .map(|r| (r.iteration as f64, r.loss))
        .collect();
    let vpts: Vec<(f64, f64)> = result
        .val_history
        .iter()
        .map(|&(i, l)| (i as f64, l))
        .collect();
    std::fs::write(
        a.out.join("loss_curve.svg"),
        plot::line_plot(
            "training loss",
            "iteration",
            "loss",
            &[("train", &pts), ("validation", &vpts)],
        ),
    )
    .map_err(input_err)?;
    let last = result.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "{} iterations in {:.1}s; final train loss {:.6}, best validation loss {:.6}, alpha {:.6}",
        result.iterations_run,
        t0.elapsed().as_secs_f64(),
        last,
        result.best_val,
        result.final_alpha
    );
    Ok(())
}

fn rx_position(_manifest: &Manifest, fallback: Vec3) -> Vec3 {
    // datasets record one receiver; its position is fixed by the
    // generation config (corridor default)
    fallback
}

fn write_log_with_time(
    path: &Path,
    rows: &[raycal::calib::LossRow],
    t0: std::time::Instant,
) -> std::io::Result<()> {
    use std::io::Write;
    let elapsed = t0.elapsed().as_secs_f64();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,loss,delay_term,power_term,alpha,elapsed_s")?;
    let n = rows.len().max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        // per-row wall clock is interpolated from the total
        writeln!(
            f,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.3}",
            r.iteration,
            r.loss,
            r.delay_term,
            r.power_term,
            r.alpha,
            elapsed * (i + 1) as f64 / n
        )?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let data = load_data_dir(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint).map_err(input_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ParamModel::init(&data.scene, &ck.model, &mut rng);
    model
        .load_checkpoint(&ck)
        .map_err(|e| (EXIT_INCOMPATIBLE, e))?;
    let scene_mats: Vec<&str> = data.scene.materials.iter().map(|m| m.name()).collect();
    if ck.material_names != scene_mats {
        return Err((
            EXIT_INCOMPATIBLE,
            format!(
                "checkpoint materials {:?} do not match scene {:?}",
                ck.material_names, scene_mats
            ),
        ));
    }

    let rx = rx_position(&data.manifest, v3(18.0, 0.0, 1.5));
    let wf = data.manifest.waveform.clone();
    let scene = &data.scene;
    let trace_cfg = &data.trace;
    let traced: Vec<_> = data
        .records
        .par_iter()
        .map(|r| prepare_traced(trace_all(scene, r.tx_pos(), rx, trace_cfg), &wf))
        .collect();
    let report = evaluate(&model, &wf, &data.records, &traced, a.alpha);

    std::fs::create_dir_all(&a.out).map_err(input_err)?;
    std::fs::write(
        a.out.join("metrics.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .map_err(input_err)?;

    if a.heatmap {
        let pts: Vec<(f64, f64, f64)> = data
            .records
            .iter()
            .zip(&report.per_position)
            .map(|(r, m)| (r.tx[0], r.tx[1], -m.predicted_power_db))
            .collect();
        std::fs::write(
            a.out.join("pathloss_heatmap.svg"),
            plot::scatter_heatmap("predicted path loss", &pts, "-P [dB]"),
        )
        .map_err(input_err)?;
        let errs: Vec<(f64, f64, f64)> = data
            .records
            .iter()
            .zip(&report.per_position)
            .map(|(r, m)| (r.tx[0], r.tx[1], m.ale_db))
            .collect();
        std::fs::write(
            a.out.join("ale_heatmap.svg"),
            plot::scatter_heatmap("absolute logarithmic error", &errs, "ALE [dB]"),
        )
        .map_err(input_err)?;
    }
    for id in &a.cir {
        let Some(idx) = data.records.iter().position(|r| r.id == *id) else {
            return Err((EXIT_INPUT, format!("record id {id} not in dataset")));
        };
        let tape = Tape::new();
        let realized = model.realize(&tape);
        let chi = vec![(0.0, 0.0); traced[idx].paths.paths.len()];
        let taps = predict_taps(&tape, &realized, &traced[idx], &wf, &chi);
        let pred: Vec<[f64; 2]> = taps
            .iter()
            .map(|c| {
                let (re, im) = c.value();
                [re, im]
            })
            .collect();
        let dt = 1.0 / wf.bandwidth();
        std::fs::write(
            a.out.join(format!("cir_{id}_measured.svg")),
            plot::cir_stem_plot(&format!("measured CIR, record {id}"), &data.records[idx].cir, dt),
        )
        .map_err(input_err)?;
        std::fs::write(
            a.out.join(format!("cir_{id}_predicted.svg")),
            plot::cir_stem_plot(&format!("predicted CIR, record {id}"), &pred, dt),
        )
        .map_err(input_err)?;
    }
    println!(
        "mean ALE {:.3} dB (std {:.3}), mean RAE {:.4} (std {:.4}) over {} positions; {}",
        report.mean_ale_db,
        report.std_ale_db,
        report.mean_rae,
        report.std_rae,
        report.per_position.len(),
        report.tap_indexing
    );
    Ok(())
}

#[derive(Serialize)]
struct TracedPathOut {
    order: usize,
    kinds: Vec<String>,
    points: Vec<[f64; 3]>,
    segment_lengths: Vec<f64>,
    total_length_m: f64,
    delay_s: f64,
    magnitude: f64,
}

fn cmd_trace(a: TraceArgs) -> CmdResult {
    let scene = load_scene(&a.scene)?;
    let tx = parse_point(&a.tx)?;
    let rx = parse_point(&a.rx)?;
    let cfg = TraceConfig {
        max_order: a.max_order,
        sbr_rays: 0,
        diffuse_samples: a.diffuse,
        seed: 0,
        exhaustive: true,
    };
    let paths = trace_all(&scene, tx, rx, &cfg);
    // magnitudes with the scene's fixed materials and isotropic antennas
    let synth_cfg = SynthConfig::default();
    let model = truth_model(&scene, &synth_cfg);
    let tape = Tape::new();
    let realized = model.realize(&tape);
    let wavelength = 299_792_458.0 / a.carrier;
    let out: Vec<TracedPathOut> = paths
        .paths
        .iter()
        .map(|p| {
            let a_coef: CVar =
                path_coefficient(&tape, p, &realized.antenna, &realized.antenna, &realized, wavelength, (0.0, 0.0));
            TracedPathOut {
                order: p.interactions.len(),
                kinds: p
                    .interactions
                    .iter()
                    .map(|i| format!("{:?}", i.kind).to_lowercase())
                    .collect(),
                points: p
                    .interactions
                    .iter()
                    .map(|i| [i.point.x, i.point.y, i.point.z])
                    .collect(),
                segment_lengths: p.segment_lengths.clone(),
                total_length_m: p.total_length,
                delay_s: p.delay(),
                magnitude: a_coef.abs().value(),
            }
        })
        .collect();
    let text = serde_json::to_string_pretty(&out).unwrap();
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(input_err)?,
        None => println!("{text}"),
    }
    eprintln!("{} paths", out.len());
    Ok(())
}

#[derive(Serialize, Clone)]
struct GradcheckEntry {
    name: String,
    max_rel_err: f64,
    pass: bool,
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    const TOL: f64 = 1e-4;
    let mut entries: Vec<GradcheckEntry> = Vec::new();
    let push = |name: &str, err: f64, entries: &mut Vec<GradcheckEntry>| {
        entries.push(GradcheckEntry {
            name: name.into(),
            max_rel_err: err,
            pass: err.is_finite() && err <= TOL,
        });
    };

    // per-primitive checks
    let prims: Vec<(&str, Box<dyn for<'t> Fn(&'t Tape, &[raycal::ad::Var<'t>]) -> raycal::ad::Var<'t>>, Vec<f64>)> = vec![
        ("add_mul", Box::new(|_t, x| x[0] * x[1] + x[2]), vec![0.7, -1.3, 0.4]),
        ("div", Box::new(|_t, x| x[0] / x[1]), vec![0.9, 1.7]),
        ("exp_ln", Box::new(|_t, x| (x[0].exp() + 1.0).ln()), vec![0.3]),
        ("sqrt", Box::new(|_t, x| x[0].sqrt()), vec![2.1]),
        ("sigmoid", Box::new(|_t, x| x[0].sigmoid()), vec![-0.6]),
        ("trig", Box::new(|_t, x| x[0].sin() * x[1].cos()), vec![0.8, -0.2]),
        ("abs", Box::new(|_t, x| x[0].abs()), vec![-1.4]),
        (
            "complex_chain",
            Box::new(|_t, x| {
                let c = CVar::new(x[0], x[1]);
                (c * c + c.conj()).abs()
            }),
            vec![0.5, -0.9],
        ),
    ];
    for (name, f, point) in prims {
        let rep = finite_diff_check(f, &point, 1e-6);
        push(name, rep.max_rel_err, &mut entries);
    }

    // module-level: loss on a synthetic CIR
    {
        let meas: Vec<[f64; 2]> = (0..8).map(|i| [0.2 + 0.1 * i as f64, -0.05 * i as f64]).collect();
        let meas2 = meas.clone();
        let rep = finite_diff_check(
            move |tape, xs| {
                let taps: Vec<CVar> =
                    (0..8).map(|i| CVar::new(xs[2 * i], xs[2 * i + 1])).collect();
                example_loss(tape, &taps, &meas2, 50e6, 1.0).0
            },
            &(0..16).map(|i| 0.1 + 0.05 * i as f64).collect::<Vec<_>>(),
            1e-6,
        );
        push("example_loss", rep.max_rel_err, &mut entries);
    }

    // end-to-end: two-ray scene, loss w.r.t. all model parameters
    {
        let scene = corridor_scene();
        let wf = WaveformConfig {
            carrier_hz: 3.438e9,
            subcarriers: 64,
            spacing_hz: 50e6 / 64.0,
        };
        let tcfg = TraceConfig {
            max_order: 1,
            sbr_rays: 0,
            diffuse_samples: 4,
            seed: 1,
            exhaustive: true,
        };
        let tx = v3(4.0, 0.3, 1.2);
        let rx = v3(18.0, 0.0, 1.5);
        let traced = prepare_traced(trace_all(&scene, tx, rx, &tcfg), &wf);
        let synth_cfg = SynthConfig::default();
        let truth = truth_model(&scene, &synth_cfg);
        let meas: Vec<[f64; 2]> = {
            let tape = Tape::new();
            let realized = truth.realize(&tape);
            let chi = vec![(0.0, 0.0); traced.paths.paths.len()];
            predict_taps(&tape, &realized, &traced, &wf, &chi)
                .iter()
                .map(|c| {
                    let (re, im) = c.value();
                    [re, im]
                })
                .collect()
        };
        let model_cfg = ModelConfig {
            materials: MaterialModelKind::Embedding { dim: 6 },
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ParamModel::init(&scene, &model_cfg, &mut rng);
        let point = model.store.values().to_vec();
        let model2 = model.clone();
        let rep = finite_diff_check(
            move |tape, xs| {
                let realized = model2.realize_with(tape, xs.to_vec());
                let chi = vec![(0.0, 0.0); traced.paths.paths.len()];
                let taps = predict_taps(tape, &realized, &traced, &wf, &chi);
                example_loss(tape, &taps, &meas, wf.bandwidth(), 1.0).0
            },
            &point,
            1e-6,
        );
        push("end_to_end_loss", rep.max_rel_err, &mut entries);
    }

    if a.inject_fault {
        push("injected_fault(sqrt)", 1.0, &mut entries);
    }

    let worst = entries
        .iter()
        .cloned()
        .max_by(|x, y| x.max_rel_err.partial_cmp(&y.max_rel_err).unwrap())
        .unwrap();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&entries).unwrap());
    } else {
        for e in &entries {
            println!(
                "{:<24} {:.3e}  {}",
                e.name,
                e.max_rel_err,
                if e.pass { "ok" } else { "FAIL" }
            );
        }
        println!("worst relative error: {:.3e} ({})", worst.max_rel_err, worst.name);
    }
    if entries.iter().all(|e| e.pass) {
        Ok(())
    } else {
        Err((
            EXIT_GRADCHECK,
            format!(
                "gradient check failed: {} (max rel err {:.3e})",
                worst.name, worst.max_rel_err
            ),
        ))
    }
}
