//! End-to-end acceptance suite. Each test prints a single
//! "criterion N: PASS/FAIL" line with the measured numbers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raycal::ad::{finite_diff_check, CVar, Tape};
use raycal::calib::{
    channel_gain, estimate_scale_batch, evaluate, example_loss, predict_taps, prepare_traced,
    train, DatasetRecord, ScalingState, TracedRecord, TrainingConfig,
};
use raycal::field::{
    cfr, cir_natural, complex_permittivity, fresnel, path_coefficient, AntennaVars, GainVars,
    MaterialResolver, MaterialVars, PatternVars, WaveformConfig, IDENTITY_ORIENTATION,
    VACUUM_PERMITTIVITY,
};
use raycal::geom::{v3, MaterialSpec, Scene, Vec3};
use raycal::params::{
    logit, AntennaModelKind, MaterialModelKind, ModelConfig, ParamModel, PatternModelKind,
};
use raycal::quad::{integrate_hemisphere, integrate_sphere};
use raycal::synth::{corridor_scene, generate, split, write_dataset, SynthConfig};
use raycal::tracer::{trace_all, TraceConfig};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::Instant;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const WF: WaveformConfig = WaveformConfig {
    carrier_hz: 3.438e9,
    subcarriers: 64,
    spacing_hz: 50e6 / 64.0,
};

fn report(criterion: usize, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn trace_records(
    scene: &Scene,
    records: &[DatasetRecord],
    rx: &[Vec3],
    cfg: &TraceConfig,
    wf: &WaveformConfig,
) -> Vec<TracedRecord> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| prepare_traced(trace_all(scene, r.tx_pos(), rx[r.rx], cfg), wf))
        .collect()
}

fn cir_of<'a>(model: &ParamModel, traced: &TracedRecord, wf: &WaveformConfig) -> Vec<[f64; 2]> {
    let tape = Tape::new();
    let realized = model.realize(&tape);
    let chi = vec![(0.0, 0.0); traced.paths.paths.len()];
    predict_taps(&tape, &realized, traced, wf, &chi)
        .iter()
        .map(|c| {
            let (re, im) = c.value();
            [re, im]
        })
        .collect()
}

// -------------------------------------------------------------------
// 1. Synthetic material recovery on the shipped corridor scene

#[test]
fn criterion_1_material_recovery() {
    let t0 = Instant::now();
    let scene = corridor_scene();
    let cfg = SynthConfig::default(); // 256 positions, K=3 + diffuse, chi=0
    let data = generate(&scene, &cfg).unwrap();
    let rx = [v3(cfg.rx[0], cfg.rx[1], cfg.rx[2])];
    let (train_recs, val_recs, _) = split(data.records, 0.8, 0.1);
    let train_traced = trace_records(&scene, &train_recs, &rx, &cfg.trace, &cfg.waveform);
    let val_traced = trace_records(&scene, &val_recs, &rx, &cfg.trace, &cfg.waveform);

    let model_cfg = ModelConfig {
        materials: MaterialModelKind::Embedding { dim: 30 },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = ParamModel::init(&scene, &model_cfg, &mut rng);
    let tcfg = TrainingConfig {
        iterations: 1500, // well under the 5000-iteration budget
        batch_size: 32,
        learning_rate: 0.01,
        val_interval: 100,
        patience: 20,
        seed: 9,
        ..TrainingConfig::default()
    };
    train(
        &mut model,
        &cfg.waveform,
        &train_recs,
        &train_traced,
        &val_recs,
        &val_traced,
        &tcfg,
    )
    .unwrap();

    let truth = [
        ("floor", 5.24, 0.121, 0.3, 0.2),
        ("walls", 2.73, 0.027, 0.5, 0.4),
        ("ceiling", 1.48, 0.004, 0.8, 0.3),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (name, te, ts, t_s, t_k) in truth {
        let (e, s, sc, kx) = model.material_values(name).unwrap();
        let (de, ds) = ((e - te).abs() / te, (s - ts).abs() / ts);
        let (dsc, dkx) = ((sc - t_s).abs(), (kx - t_k).abs());
        pass &= de <= 0.05 && ds <= 0.15 && dsc <= 0.05 && dkx <= 0.05;
        detail.push_str(&format!(
            "{name}: eps {:.1}% sigma {:.1}% S {:.3} Kx {:.3}; ",
            de * 100.0,
            ds * 100.0,
            dsc,
            dkx
        ));
    }
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    pass &= mins <= 30.0;
    report(1, pass, &format!("{detail}{mins:.1} min"));
}

// -------------------------------------------------------------------
// 2. Antenna gain and scattering pattern recovery

#[test]
fn criterion_2_antenna_and_pattern_recovery() {
    let scene = corridor_scene();
    let model_cfg = ModelConfig {
        materials: MaterialModelKind::Scene,
        antenna: AntennaModelKind::SgMixture {
            components: 3,
            zeta_deg: 0.0,
        },
        pattern: PatternModelKind::HemiGaussian,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut truth = ParamModel::init(&scene, &model_cfg, &mut rng);
    // a moderately anisotropic 3-lobe mixture and a 3-term pattern
    let set = |m: &mut ParamModel, n: &str, v: f64| m.store.set(n, v);
    set(&mut truth, "ant/w/0", 0.7);
    set(&mut truth, "ant/w/1", 0.0);
    set(&mut truth, "ant/w/2", -0.4);
    set(&mut truth, "ant/lam/0", 1.2f64.ln());
    set(&mut truth, "ant/lam/1", 2.2f64.ln());
    set(&mut truth, "ant/lam/2", 0.8f64.ln());
    for (i, mu) in [[1.0, 0.2, 0.1], [-0.5, 0.7, 0.3], [0.1, -0.9, 0.4]]
        .iter()
        .enumerate()
    {
        set(&mut truth, &format!("ant/mu/{i}/x"), mu[0]);
        set(&mut truth, &format!("ant/mu/{i}/y"), mu[1]);
        set(&mut truth, &format!("ant/mu/{i}/z"), mu[2]);
    }
    set(&mut truth, "ant/eff", logit(0.85));
    set(&mut truth, "scat/hg_w/0", 0.4);
    set(&mut truth, "scat/hg_w/1", 0.9);
    set(&mut truth, "scat/hg_w/2", -0.2);
    set(&mut truth, "scat/hg_lam2", 5.0f64.ln());
    set(&mut truth, "scat/hg_lam3", 10.0f64.ln());

    // two receivers for angular diversity
    let rx = [v3(18.0, 0.0, 1.5), v3(1.0, -0.9, 2.4)];
    let tcfg = TraceConfig {
        max_order: 2,
        sbr_rays: 0,
        diffuse_samples: 16,
        seed: 4,
        exhaustive: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 144;
    let mut records = Vec::with_capacity(n);
    for id in 0..n {
        let tx = v3(
            1.0 + 16.0 * rng.gen::<f64>(),
            -1.2 + 2.4 * rng.gen::<f64>(),
            0.5 + 2.0 * rng.gen::<f64>(),
        );
        records.push(DatasetRecord {
            id,
            tx: [tx.x, tx.y, tx.z],
            rx: id % 2,
            cir: Vec::new(),
        });
    }
    let traced = trace_records(&scene, &records, &rx, &tcfg, &WF);
    for (r, t) in records.iter_mut().zip(&traced) {
        r.cir = cir_of(&truth, t, &WF);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut model = ParamModel::init(&scene, &model_cfg, &mut rng);
    let (train_recs, val_recs, _) = split(records, 0.9, 0.1);
    let (train_traced, val_rest) = {
        let mut it = traced.into_iter();
        let a: Vec<_> = it.by_ref().take(train_recs.len()).collect();
        let b: Vec<_> = it.take(val_recs.len()).collect();
        (a, b)
    };
    let tcfg_train = TrainingConfig {
        iterations: 1600,
        batch_size: 16,
        learning_rate: 0.01,
        val_interval: 100,
        patience: 20,
        seed: 31,
        ..TrainingConfig::default()
    };
    train(
        &mut model,
        &WF,
        &train_recs,
        &train_traced,
        &val_recs,
        &val_rest,
        &tcfg_train,
    )
    .unwrap();

    // gain comparison on a 64x128 spherical grid
    let tape_t = Tape::new();
    let tape_l = Tape::new();
    let rt = truth.realize(&tape_t);
    let rl = model.realize(&tape_l);
    let mut db_err = 0.0;
    let mut count = 0usize;
    for i in 0..64 {
        let theta = PI * (i as f64 + 0.5) / 64.0;
        for j in 0..128 {
            let phi = 2.0 * PI * j as f64 / 128.0;
            let d = v3(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            );
            let gt = rt.antenna.gain.eval_f64(d);
            let gl = rl.antenna.gain.eval_f64(d);
            db_err += (10.0 * (gt / gl).log10()).abs();
            count += 1;
        }
    }
    let mean_db = db_err / count as f64;

    // scattering pattern at a 40-degree incidence over the hemisphere
    let n_hat = v3(0.0, 0.0, 1.0);
    let th_i = 40f64.to_radians();
    let k_i = v3(th_i.sin(), 0.0, -th_i.cos());
    let mut peak = 0f64;
    let mut terr = 0.0;
    let mut tcount = 0usize;
    for i in 0..48 {
        let theta = 0.5 * PI * (i as f64 + 0.5) / 48.0;
        for j in 0..96 {
            let phi = 2.0 * PI * j as f64 / 96.0;
            let k_s = v3(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            );
            let ft = rt.pattern.eval_f64(k_i, k_s, n_hat);
            let fl = rl.pattern.eval_f64(k_i, k_s, n_hat);
            peak = peak.max(ft);
            terr += (ft - fl).abs();
            tcount += 1;
        }
    }
    let mean_pat = terr / tcount as f64;
    let pass = mean_db <= 0.5 && mean_pat <= 0.05 * peak;
    report(
        2,
        pass,
        &format!(
            "gain mean abs err {mean_db:.3} dB (<= 0.5); pattern mean abs err {:.2}% of peak (<= 5%)",
            100.0 * mean_pat / peak
        ),
    );
}

// -------------------------------------------------------------------
// 3. Gradient correctness across parameter families

struct Uniform<'t> {
    mat: MaterialVars<'t>,
}
impl<'t> MaterialResolver<'t> for Uniform<'t> {
    fn resolve(&self, _id: usize, _p: Vec3) -> MaterialVars<'t> {
        self.mat.clone()
    }
}

fn ground_scene(kind: MaterialSpec) -> Scene {
    let half = 60.0;
    Scene::new(
        vec![
            v3(-half, -half, 0.0),
            v3(half, -half, 0.0),
            v3(half, half, 0.0),
            v3(-half, half, 0.0),
        ],
        vec![([0, 1, 2], 0), ([0, 2, 3], 0)],
        vec![kind],
    )
    .unwrap()
}

fn loss_gradcheck(scene: &Scene, model_cfg: &ModelConfig, seed: u64, trace: &TraceConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ParamModel::init(scene, model_cfg, &mut rng);
    // measurements come from an independently initialized model so the
    // loss is away from the kinks of the symmetric-error terms
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed + 1000);
    let target = ParamModel::init(scene, model_cfg, &mut rng2);
    let tx = v3(4.0, 0.3, 1.2);
    let rx = v3(14.0, -0.2, 1.5);
    let traced = prepare_traced(trace_all(scene, tx, rx, trace), &WF);
    assert!(!traced.paths.paths.is_empty());
    let meas = cir_of(&target, &traced, &WF);
    let point = model.store.values().to_vec();
    let model2 = model.clone();
    let rep = finite_diff_check(
        move |tape, xs| {
            let realized = model2.realize_with(tape, xs.to_vec());
            let chi = vec![(0.0, 0.0); traced.paths.paths.len()];
            let taps = predict_taps(tape, &realized, &traced, &WF, &chi);
            example_loss(tape, &taps, &meas, WF.bandwidth(), 1.0).0
        },
        &point,
        // large enough that central differences stay above roundoff
        // even where the true gradient is ~1e-8
        1e-4,
    );
    rep.max_rel_err
}

#[test]
fn criterion_3_gradient_correctness() {
    let t0 = Instant::now();
    let corridor = corridor_scene();
    let two_ray = ground_scene(MaterialSpec::Embedding { name: "g".into() });
    let flat_trace = TraceConfig {
        max_order: 1,
        sbr_rays: 0,
        diffuse_samples: 4,
        seed: 1,
        exhaustive: true,
    };

    let mut worst: f64 = 0.0;
    // primitives
    let prim = finite_diff_check(
        |_t, x| {
            let c = CVar::new(x[0], x[1]);
            ((c * c + c.conj()).abs() + x[2].exp().ln() + x[3].sqrt()
                + x[4].sigmoid() * x[5].sin() * x[6].cos())
            .abs()
        },
        &[0.5, -0.9, 0.3, 2.1, -0.6, 0.8, -0.2],
        1e-6,
    );
    worst = worst.max(prim.max_rel_err);

    // materials (embedding) on the two-ray scene
    let emb_cfg = ModelConfig {
        materials: MaterialModelKind::Embedding { dim: 4 },
        ..ModelConfig::default()
    };
    worst = worst.max(loss_gradcheck(&two_ray, &emb_cfg, 7, &flat_trace));

    // materials + SG antenna params on the corridor
    let sg_cfg = ModelConfig {
        materials: MaterialModelKind::Scene,
        antenna: AntennaModelKind::SgMixture {
            components: 2,
            zeta_deg: 0.0,
        },
        pattern: PatternModelKind::HemiGaussian,
    };
    worst = worst.max(loss_gradcheck(&corridor, &sg_cfg, 8, &flat_trace));

    // neural network weights on the two-ray scene
    let nn_scene = ground_scene(MaterialSpec::Neural { name: "g".into() });
    let nn_cfg = ModelConfig {
        materials: MaterialModelKind::Neural {
            encoding_levels: 2,
            hidden: 8,
            layers: 2,
        },
        ..ModelConfig::default()
    };
    worst = worst.max(loss_gradcheck(&nn_scene, &nn_cfg, 10, &flat_trace));

    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs <= 60.0;
    report(
        3,
        pass,
        &format!("max relative error {worst:.3e} (<= 1e-4) in {secs:.1} s"),
    );
}

// -------------------------------------------------------------------
// 4. Normalization suite

#[test]
fn criterion_4_normalizations() {
    let t0 = Instant::now();
    let scene = corridor_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    // antenna integral = 4 pi eta_rad over 100 random SG mixtures
    let mut worst_ant: f64 = 0.0;
    for _ in 0..100 {
        let cfg = ModelConfig {
            antenna: AntennaModelKind::SgMixture {
                components: 3,
                zeta_deg: 0.0,
            },
            ..ModelConfig::default()
        };
        let mut model = ParamModel::init(&scene, &cfg, &mut rng);
        for i in 0..3 {
            let w = rng.gen_range(-1.5..1.5);
            model.store.set(&format!("ant/w/{i}"), w);
            let lam = rng.gen_range(0.2f64.ln()..8f64.ln());
            model.store.set(&format!("ant/lam/{i}"), lam);
            for l in ["x", "y", "z"] {
                model
                    .store
                    .set(&format!("ant/mu/{i}/{l}"), rng.gen_range(-1.0..1.0));
            }
        }
        let eff_raw = rng.gen_range(-2.0..2.0);
        model.store.set("ant/eff", eff_raw);
        let eff = raycal::params::sigmoid(eff_raw);
        let tape = Tape::new();
        let r = model.realize(&tape);
        let integral = integrate_sphere(192, 384, |d| r.antenna.gain.eval_f64(d));
        worst_ant = worst_ant.max((integral / (4.0 * PI * eff) - 1.0).abs());
    }

    // hemispherical-Gaussian pattern integral within 5% of 1
    let mut worst_hg: f64 = 0.0;
    let n_hat = v3(0.0, 0.0, 1.0);
    for _ in 0..100 {
        let tape = Tape::new();
        let w_raw: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let exps: Vec<f64> = w_raw.iter().map(|x| x.exp()).collect();
        let total: f64 = exps.iter().sum();
        let pattern = PatternVars::HemiGaussian {
            weights: [
                tape.var(exps[0] / total),
                tape.var(exps[1] / total),
                tape.var(exps[2] / total),
            ],
            lam2: tape.var(rng.gen_range(3f64.ln()..50f64.ln()).exp()),
            lam3: tape.var(rng.gen_range(3f64.ln()..50f64.ln()).exp()),
        };
        let th_i = rng.gen_range(0f64..75f64.to_radians());
        let k_i = v3(th_i.sin(), 0.0, -th_i.cos());
        let integral = integrate_hemisphere(96, 96, n_hat, |d| pattern.eval_f64(k_i, d, n_hat));
        worst_hg = worst_hg.max((integral - 1.0).abs());
    }

    // backscatter pattern integral within 0.5% under its quadrature norm
    let mut worst_bs: f64 = 0.0;
    for _ in 0..40 {
        let tape = Tape::new();
        let pattern = PatternVars::Backscatter {
            alpha_r: rng.gen_range(1..8),
            alpha_s: rng.gen_range(1..10),
            lobe_mix: tape.var(rng.gen::<f64>()),
        };
        let th_i = rng.gen_range(0f64..80f64.to_radians());
        let k_i = v3(th_i.sin(), 0.0, -th_i.cos());
        let integral = integrate_hemisphere(96, 96, n_hat, |d| pattern.eval_f64(k_i, d, n_hat));
        worst_bs = worst_bs.max((integral - 1.0).abs());
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_ant <= 0.01 && worst_hg <= 0.05 && worst_bs <= 0.005 && secs <= 60.0;
    report(
        4,
        pass,
        &format!(
            "antenna {:.2}% (<=1%), hemi-Gaussian {:.2}% (<=5%), backscatter {:.3}% (<=0.5%) in {secs:.1} s",
            100.0 * worst_ant,
            100.0 * worst_hg,
            100.0 * worst_bs
        ),
    );
}

// -------------------------------------------------------------------
// 5. Physics oracles

fn isotropic<'t>() -> AntennaVars<'t> {
    AntennaVars {
        gain: GainVars::Isotropic,
        zeta: 0.0,
        orientation: IDENTITY_ORIENTATION,
    }
}

fn fixed_material<'t>(tape: &'t Tape, eps: f64, sig: f64, s: f64, kx: f64) -> MaterialVars<'t> {
    MaterialVars {
        eps_r: tape.var(eps),
        sigma: tape.var(sig),
        scattering: tape.var(s),
        xpd: tape.var(kx),
        pattern: PatternVars::Backscatter {
            alpha_r: 5,
            alpha_s: 8,
            lobe_mix: tape.var(0.8),
        },
    }
}

fn two_ray_oracle(d: f64, h: f64, eps_r: f64, sigma: f64, carrier: f64, freq: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / carrier;
    let l_ref = (d * d + 4.0 * h * h).sqrt();
    let cos_theta = h / ((d / 2.0f64).powi(2) + h * h).sqrt();
    let sin2 = 1.0 - cos_theta * cos_theta;
    let eta = Complex64::new(eps_r, -sigma / (VACUUM_PERMITTIVITY * 2.0 * PI * carrier));
    let w = (eta - sin2).sqrt();
    let r_par = (eta * cos_theta - w) / (eta * cos_theta + w);
    let k = 2.0 * PI * freq / SPEED_OF_LIGHT;
    let los = Complex64::from_polar(1.0 / d, -k * d);
    let refl = Complex64::from_polar(1.0 / l_ref, -k * l_ref) * r_par;
    (lambda / (4.0 * PI)) * (los + refl).norm()
}

#[test]
fn criterion_5_physics_oracles() {
    let mut detail = String::new();
    let mut pass = true;

    // Friis free-space amplitude
    {
        let scene = ground_scene(MaterialSpec::Fixed {
            name: "g".into(),
            eps_r: 4.0,
            sigma: 0.0,
            scattering: 0.0,
            xpd: 0.0,
        });
        let cfg = TraceConfig {
            max_order: 0,
            sbr_rays: 0,
            diffuse_samples: 0,
            seed: 0,
            exhaustive: true,
        };
        let d = 37.0;
        let ps = trace_all(&scene, v3(0.0, 0.0, 5.0), v3(d, 0.0, 5.0), &cfg);
        let tape = Tape::new();
        let resolver = Uniform {
            mat: fixed_material(&tape, 4.0, 0.0, 0.0, 0.0),
        };
        let a = path_coefficient(
            &tape,
            &ps.paths[0],
            &isotropic(),
            &isotropic(),
            &resolver,
            WF.wavelength(),
            (0.0, 0.0),
        );
        let expected = WF.wavelength() / (4.0 * PI * d);
        let err = (a.abs().value() - expected).abs() / expected;
        pass &= err <= 1e-9;
        detail.push_str(&format!("Friis {err:.1e}; "));
    }

    // two-ray closed form across subcarriers
    {
        let scene = ground_scene(MaterialSpec::Fixed {
            name: "g".into(),
            eps_r: 4.0,
            sigma: 0.05,
            scattering: 0.0,
            xpd: 0.0,
        });
        let cfg = TraceConfig {
            max_order: 1,
            sbr_rays: 0,
            diffuse_samples: 0,
            seed: 0,
            exhaustive: true,
        };
        let (h, d) = (2.0, 30.0);
        let ps = trace_all(&scene, v3(0.0, 0.0, h), v3(d, 0.0, h), &cfg);
        let mut worst: f64 = 0.0;
        for n_off in [-20i64, -3, 0, 9, 31] {
            let freq = WF.carrier_hz + n_off as f64 * WF.spacing_hz;
            let tape = Tape::new();
            let resolver = Uniform {
                mat: fixed_material(&tape, 4.0, 0.05, 0.0, 0.0),
            };
            let mut h_val = Complex64::new(0.0, 0.0);
            for p in &ps.paths {
                let a = path_coefficient(
                    &tape,
                    p,
                    &isotropic(),
                    &isotropic(),
                    &resolver,
                    WF.wavelength(),
                    (0.0, 0.0),
                );
                let (ar, ai) = a.value();
                h_val += Complex64::new(ar, ai)
                    * Complex64::from_polar(1.0, -2.0 * PI * freq * p.delay());
            }
            let oracle = two_ray_oracle(d, h, 4.0, 0.05, WF.carrier_hz, freq);
            worst = worst.max((h_val.norm() - oracle).abs() / oracle);
        }
        pass &= worst <= 1e-6;
        detail.push_str(&format!("two-ray {worst:.1e}; "));
    }

    // Fresnel identities and passivity
    {
        let tape = Tape::new();
        let eta = complex_permittivity(tape.var(2.25), tape.var(0.0), WF.carrier_hz);
        let (rp, rl) = fresnel(&tape, eta, 1.0);
        let e1 = (rp.value().0 + 0.2).abs().max(rp.value().1.abs());
        let e2 = (rl.value().0 - 0.2).abs().max(rl.value().1.abs());
        // Brewster angle tan(theta) = sqrt(2.25)
        let theta_b = 1.5f64.atan();
        let (_, rb) = fresnel(&tape, eta, theta_b.cos());
        let e3 = rb.abs().value();
        pass &= e1 <= 1e-9 && e2 <= 1e-9 && e3 <= 1e-9;
        detail.push_str(&format!("Fresnel {:.1e}; ", e1.max(e2).max(e3)));

        let mut worst_mag: f64 = 0.0;
        for eps in [1.01, 2.0, 4.0, 10.0, 40.0] {
            for sig in [0.0, 0.01, 0.1, 1.0] {
                for k in 1..=20 {
                    let cos_t = k as f64 / 20.0;
                    let eta = complex_permittivity(tape.var(eps), tape.var(sig), WF.carrier_hz);
                    let (rp, rl) = fresnel(&tape, eta, cos_t);
                    worst_mag = worst_mag.max(rp.abs().value()).max(rl.abs().value());
                }
            }
        }
        pass &= worst_mag <= 1.0 + 1e-12;
        detail.push_str(&format!("passivity max|r| {worst_mag:.6}; "));
    }

    // Parseval
    {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs: Vec<(CVar, f64)> = (0..5)
            .map(|_| {
                (
                    CVar::constant(&tape, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                    rng.gen::<f64>() * 400e-9,
                )
            })
            .collect();
        let h_freq = cfr(&coeffs, &WF);
        let taps = cir_natural(&h_freq);
        let p_f: f64 = h_freq.iter().map(|c| c.abs_sq().value()).sum();
        let p_t: f64 = taps.iter().map(|c| c.abs_sq().value()).sum();
        let err = (p_f - p_t).abs() / p_f;
        pass &= err <= 1e-9;
        detail.push_str(&format!("Parseval {err:.1e}"));
    }

    report(5, pass, &detail);
}

// -------------------------------------------------------------------
// 6. Path-tracer oracle on randomized scenes

fn random_room(rng: &mut ChaCha8Rng) -> (Scene, Vec3, Vec3) {
    let lx = rng.gen_range(5.0..12.0);
    let ly = rng.gen_range(4.0..8.0);
    let lz = rng.gen_range(2.5..4.0);
    let vs = vec![
        v3(0.0, 0.0, 0.0),
        v3(lx, 0.0, 0.0),
        v3(lx, ly, 0.0),
        v3(0.0, ly, 0.0),
        v3(0.0, 0.0, lz),
        v3(lx, 0.0, lz),
        v3(lx, ly, lz),
        v3(0.0, ly, lz),
    ];
    let faces: Vec<[[usize; 3]; 2]> = vec![
        [[0, 1, 2], [0, 2, 3]], // floor
        [[4, 6, 5], [4, 7, 6]], // ceiling
        [[0, 5, 1], [0, 4, 5]],
        [[3, 2, 6], [3, 6, 7]],
        [[0, 3, 7], [0, 7, 4]],
        [[1, 5, 6], [1, 6, 2]],
    ];
    let drop = rng.gen_range(0..3usize);
    let mut kept: Vec<usize> = (0..6).collect();
    for _ in 0..drop {
        let k = rng.gen_range(0..kept.len());
        kept.remove(k);
    }
    let mut tris = Vec::new();
    for &f in &kept {
        let m = rng.gen_range(0..2usize);
        tris.push((faces[f][0], m));
        tris.push((faces[f][1], m));
    }
    let mats = vec![
        MaterialSpec::Fixed {
            name: "a".into(),
            eps_r: 3.0,
            sigma: 0.01,
            scattering: 0.2,
            xpd: 0.1,
        },
        MaterialSpec::Fixed {
            name: "b".into(),
            eps_r: 5.0,
            sigma: 0.1,
            scattering: 0.4,
            xpd: 0.2,
        },
    ];
    let scene = Scene::new(vs, tris, mats).unwrap();
    let p = |rng: &mut ChaCha8Rng| {
        v3(
            rng.gen_range(0.15 * lx..0.85 * lx),
            rng.gen_range(0.15 * ly..0.85 * ly),
            rng.gen_range(0.15 * lz..0.85 * lz),
        )
    };
    (scene, p(rng), p(rng))
}

fn mirror(p: Vec3, anchor: Vec3, n: Vec3) -> Vec3 {
    p - n * (2.0 * (p - anchor).dot(n))
}

#[test]
fn criterion_6_tracer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_unfold: f64 = 0.0;
    let mut chains_checked = 0usize;
    for scene_idx in 0..20 {
        let (scene, tx, rx) = random_room(&mut rng);
        if (tx - rx).norm() < 1.0 {
            continue;
        }
        let chains = |exhaustive: bool| -> BTreeSet<Vec<usize>> {
            let cfg = TraceConfig {
                max_order: 3,
                sbr_rays: 150_000,
                diffuse_samples: 0,
                seed: 17,
                exhaustive,
            };
            trace_all(&scene, tx, rx, &cfg)
                .paths
                .iter()
                .filter(|p| !p.interactions.is_empty())
                .map(|p| p.specular_sequence())
                .collect()
        };
        let exact = chains(true);
        let sbr = chains(false);
        assert_eq!(
            exact, sbr,
            "scene {scene_idx}: SBR chain set differs from exhaustive"
        );
        chains_checked += exact.len();

        // unfolding identity
        let cfg = TraceConfig {
            max_order: 3,
            sbr_rays: 0,
            diffuse_samples: 0,
            seed: 17,
            exhaustive: true,
        };
        for p in &trace_all(&scene, tx, rx, &cfg).paths {
            let mut image = tx;
            for i in &p.interactions {
                let t = &scene.triangles[i.triangle_id];
                image = mirror(image, scene.vertices[t.vertex_ids[0]], t.normal);
            }
            worst_unfold = worst_unfold.max(((image - rx).norm() - p.total_length).abs());
        }
    }
    let pass = worst_unfold <= 1e-9 && chains_checked > 0;
    report(
        6,
        pass,
        &format!(
            "20 scenes, {chains_checked} specular chains matched; unfolding error {worst_unfold:.1e} m"
        ),
    );
}

// -------------------------------------------------------------------
// 7. Scaling estimator

#[test]
fn criterion_7_scaling_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p: Vec<f64> = (0..24).map(|_| rng.gen::<f64>() + 0.05).collect();
        let q: Vec<f64> = (0..24).map(|_| 4.0 * rng.gen::<f64>()).collect();
        let closed = estimate_scale_batch(&p, &q).unwrap();
        let dobj = |a: f64| -> f64 { p.iter().zip(&q).map(|(x, y)| 2.0 * x * (a * x - y)).sum() };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dobj(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst = worst.max((closed - 0.5 * (lo + hi)).abs());
    }

    // EMA fixed point: error contracts by exactly delta each iteration
    let delta = 0.9;
    let target = 3.0;
    let mut st = ScalingState::default();
    st.update(1.0, delta);
    let mut prev = (st.current() - target).abs();
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        st.update(target, delta);
        let err = (st.current() - target).abs();
        if prev > 1e-13 {
            worst_ratio = worst_ratio.max((err / prev - delta).abs());
        }
        prev = err;
    }
    let pass = worst <= 1e-9 && worst_ratio <= 1e-9;
    report(
        7,
        pass,
        &format!("closed-vs-brute {worst:.1e} (<=1e-9); EMA ratio dev {worst_ratio:.1e}"),
    );
}

// -------------------------------------------------------------------
// 8. Byte-identical determinism of the pipeline

#[test]
fn criterion_8_determinism() {
    let scene = corridor_scene();
    let cfg = SynthConfig {
        positions: 16,
        trace: TraceConfig {
            max_order: 2,
            sbr_rays: 0,
            diffuse_samples: 8,
            seed: 42,
            exhaustive: true,
        },
        ..SynthConfig::default()
    };
    let run = |dir: &std::path::Path| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let data = generate(&scene, &cfg).unwrap();
        write_dataset(dir, &scene, &cfg, &data).unwrap();
        let rx = [v3(cfg.rx[0], cfg.rx[1], cfg.rx[2])];
        let traced = trace_records(&scene, &data.records, &rx, &cfg.trace, &cfg.waveform);
        let model_cfg = ModelConfig {
            materials: MaterialModelKind::Embedding { dim: 8 },
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = ParamModel::init(&scene, &model_cfg, &mut rng);
        let tcfg = TrainingConfig {
            iterations: 40,
            batch_size: 8,
            val_interval: 0,
            seed: 3,
            ..TrainingConfig::default()
        };
        train(
            &mut model,
            &cfg.waveform,
            &data.records,
            &traced,
            &[],
            &[],
            &tcfg,
        )
        .unwrap();
        model.to_checkpoint().save(&dir.join("checkpoint.json")).unwrap();
        let report = evaluate(&model, &cfg.waveform, &data.records, &traced, 1.0);
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&report).unwrap(),
        )
        .unwrap();
        (
            std::fs::read(dir.join("dataset.jsonl")).unwrap(),
            std::fs::read(dir.join("checkpoint.json")).unwrap(),
            std::fs::read(dir.join("metrics.json")).unwrap(),
        )
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = run(d1.path());
    let b = run(d2.path());
    let pass = a == b && !a.0.is_empty();
    report(
        8,
        pass,
        &format!(
            "dataset {} B, checkpoint {} B, metrics {} B byte-identical across runs",
            a.0.len(),
            a.1.len(),
            a.2.len()
        ),
    );
}

// keep channel_gain linked for the doc claim that power is preserved
#[allow(dead_code)]
fn _typecheck(records: &[DatasetRecord]) -> f64 {
    records.iter().map(|r| channel_gain(&r.cir)).sum()
}
