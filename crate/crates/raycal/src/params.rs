//! Trainable parameters. Everything the optimizer touches lives in a
//! flat named [`ParameterStore`] of unconstrained raw values; model
//! builders lease the store onto a tape and apply the constraint
//! transforms (exp, 1+exp, sigmoid, softmax, direction normalization)
//! so that optimization is unconstrained while the physics always sees
//! admissible values.

use crate::ad::{Tape, Var};
use crate::field::{
    AntennaVars, GainVars, MaterialResolver, MaterialVars, PatternVars,
    IDENTITY_ORIENTATION,
};
use crate::geom::{MaterialSpec, Scene, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DEFAULT_EMBEDDING_DIM: usize = 30;

// ---------------------------------------------------------------------
// Parameter store

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; insertion order is the canonical order
    /// used for leasing, gradients and optimizer state.
    pub fn add(&mut self, name: &str, value: f64) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.names.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn set_value(&mut self, id: usize, v: f64) {
        self.values[id] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.id(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, v: f64) {
        let id = self.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.values[id] = v;
    }

    /// Copies values for all names present in both stores.
    pub fn copy_matching_from(&mut self, other: &ParameterStore) -> usize {
        let mut n = 0;
        for (name, &oid) in &other.index {
            if let Some(id) = self.id(name) {
                self.values[id] = other.values[oid];
                n += 1;
            }
        }
        n
    }

    /// Lifts every parameter onto the tape, in canonical order.
    pub fn lease<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.values.iter().map(|&v| tape.var(v)).collect()
    }
}

/// Parameter groups for selective training, keyed by name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Materials,
    Antenna,
    Scattering,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("ant/") {
        ParamGroup::Antenna
    } else if name.starts_with("scat/") {
        ParamGroup::Scattering
    } else {
        ParamGroup::Materials
    }
}

// ---------------------------------------------------------------------
// Model configuration

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum MaterialModelKind {
    /// Use the per-material model declared in the scene file.
    Scene,
    /// Train a latent embedding per material name.
    Embedding { dim: usize },
    /// Train one position-dependent neural field for all materials.
    Neural {
        encoding_levels: usize,
        hidden: usize,
        layers: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum AntennaModelKind {
    Isotropic { zeta_deg: f64 },
    SgMixture { components: usize, zeta_deg: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PatternModelKind {
    Backscatter { alpha_r: u32, alpha_s: u32 },
    HemiGaussian,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub materials: MaterialModelKind,
    pub antenna: AntennaModelKind,
    pub pattern: PatternModelKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            materials: MaterialModelKind::Embedding {
                dim: DEFAULT_EMBEDDING_DIM,
            },
            antenna: AntennaModelKind::Isotropic { zeta_deg: 0.0 },
            pattern: PatternModelKind::Backscatter {
                alpha_r: 5,
                alpha_s: 8,
            },
        }
    }
}

// ---------------------------------------------------------------------
// Constraint transforms (raw <-> physical)

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "logit domain: {p}");
    (p / (1.0 - p)).ln()
}

/// Softmax over leased logits, on the tape.
fn softmax_vars<'t>(logits: &[Var<'t>]) -> Vec<Var<'t>> {
    let exps: Vec<Var<'t>> = logits.iter().map(|l| l.exp()).collect();
    let mut sum = exps[0];
    for e in &exps[1..] {
        sum = sum + *e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------
// Positional encoding (for the neural material field)

/// Sine/cosine encoding of a point at `levels` octaves per axis:
/// output length 6 * levels. Coordinates are first mapped to [-1, 1]
/// via the scene bounding box.
pub fn positional_encode(p: Vec3, center: Vec3, half_extent: f64, levels: usize) -> Vec<f64> {
    let q = (p - center) * (1.0 / half_extent);
    let mut out = Vec::with_capacity(6 * levels);
    for axis in [q.x, q.y, q.z] {
        for k in 0..levels {
            let arg = std::f64::consts::PI * (1u64 << k) as f64 * axis;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

// ---------------------------------------------------------------------
// The parameter model: store layout + realization onto a tape

#[derive(Clone, Debug)]
pub struct ParamModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
    /// Scene material names in material-id order.
    material_names: Vec<String>,
    /// Scene material specs (for MaterialModelKind::Scene constants).
    material_specs: Vec<MaterialSpec>,
    tri_to_mat: Vec<usize>,
    scene_center: Vec3,
    scene_half_extent: f64,
}

impl ParamModel {
    pub fn init(scene: &Scene, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParameterStore::new();
        let material_names: Vec<String> =
            scene.materials.iter().map(|m| m.name().to_string()).collect();

        match &config.materials {
            MaterialModelKind::Scene => {
                // embeddings only for materials the scene declares latent
                let any_embedding = scene
                    .materials
                    .iter()
                    .any(|m| matches!(m, MaterialSpec::Embedding { .. }));
                if any_embedding {
                    add_embedding_params(
                        &mut store,
                        &material_names,
                        scene,
                        DEFAULT_EMBEDDING_DIM,
                        rng,
                        false,
                    );
                }
            }
            MaterialModelKind::Embedding { dim } => {
                add_embedding_params(&mut store, &material_names, scene, *dim, rng, true);
            }
            MaterialModelKind::Neural {
                encoding_levels,
                hidden,
                layers,
            } => {
                add_neural_params(&mut store, *encoding_levels, *hidden, *layers, rng);
            }
        }

        match &config.antenna {
            AntennaModelKind::Isotropic { .. } => {}
            AntennaModelKind::SgMixture { components, .. } => {
                for i in 0..*components {
                    store.add(&format!("ant/w/{i}"), 0.0);
                    store.add(&format!("ant/lam/{i}"), rng.gen_range(-0.3..0.3));
                    // random initial mean directions, unconstrained
                    for (axis, label) in ["x", "y", "z"].iter().enumerate() {
                        let _ = axis;
                        store.add(
                            &format!("ant/mu/{i}/{label}"),
                            rng.gen_range(-1.0..1.0),
                        );
                    }
                }
                store.add("ant/eff", 0.0);
            }
        }

        match &config.pattern {
            PatternModelKind::Backscatter { .. } => {
                store.add("scat/lobe_mix", 0.0);
            }
            PatternModelKind::HemiGaussian => {
                for i in 0..3 {
                    store.add(&format!("scat/hg_w/{i}"), 0.0);
                }
                store.add("scat/hg_lam2", 0.0);
                store.add("scat/hg_lam3", 0.0);
            }
        }

        let (center, half) = scene
            .aabb()
            .unwrap_or((crate::geom::v3(0.0, 0.0, 0.0), 1.0));
        ParamModel {
            config: config.clone(),
            store,
            material_names,
            material_specs: scene.materials.clone(),
            tri_to_mat: scene.triangles.iter().map(|t| t.material_id).collect(),
            scene_center: center,
            scene_half_extent: half.max(1.0),
        }
    }

    /// Indices of parameters in the given group.
    pub fn group_ids(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.store.len())
            .filter(|&i| param_group(self.store.name(i)) == group)
            .collect()
    }

    /// Lifts the store onto a tape and builds the physics-facing
    /// structures. `leased[i]` corresponds to store parameter i, which
    /// is how gradients are read back after `tape.backward`.
    pub fn realize<'t>(&self, tape: &'t Tape) -> Realized<'t> {
        self.realize_with(tape, self.store.lease(tape))
    }

    /// Like `realize` but over caller-provided inputs (one per store
    /// parameter, in store order); used for finite-difference checks.
    pub fn realize_with<'t>(&self, tape: &'t Tape, leased: Vec<Var<'t>>) -> Realized<'t> {
        assert_eq!(leased.len(), self.store.len());
        let var = |name: &str| leased[self.store.id(name).unwrap()];

        let pattern = match &self.config.pattern {
            PatternModelKind::Backscatter { alpha_r, alpha_s } => PatternVars::Backscatter {
                alpha_r: *alpha_r,
                alpha_s: *alpha_s,
                lobe_mix: var("scat/lobe_mix").sigmoid(),
            },
            PatternModelKind::HemiGaussian => {
                let w = softmax_vars(&[
                    var("scat/hg_w/0"),
                    var("scat/hg_w/1"),
                    var("scat/hg_w/2"),
                ]);
                PatternVars::HemiGaussian {
                    weights: [w[0], w[1], w[2]],
                    lam2: var("scat/hg_lam2").exp(),
                    lam3: var("scat/hg_lam3").exp(),
                }
            }
        };

        let antenna = match &self.config.antenna {
            AntennaModelKind::Isotropic { zeta_deg } => AntennaVars {
                gain: GainVars::Isotropic,
                zeta: zeta_deg.to_radians(),
                orientation: IDENTITY_ORIENTATION,
            },
            AntennaModelKind::SgMixture {
                components,
                zeta_deg,
            } => {
                let logits: Vec<Var<'t>> =
                    (0..*components).map(|i| var(&format!("ant/w/{i}"))).collect();
                let weights = softmax_vars(&logits);
                let concentrations = (0..*components)
                    .map(|i| var(&format!("ant/lam/{i}")).exp())
                    .collect();
                let means = (0..*components)
                    .map(|i| {
                        [
                            var(&format!("ant/mu/{i}/x")),
                            var(&format!("ant/mu/{i}/y")),
                            var(&format!("ant/mu/{i}/z")),
                        ]
                    })
                    .collect();
                AntennaVars {
                    gain: GainVars::SgMixture {
                        weights,
                        concentrations,
                        means,
                        efficiency: var("ant/eff").sigmoid(),
                    },
                    zeta: zeta_deg.to_radians(),
                    orientation: IDENTITY_ORIENTATION,
                }
            }
        };

        // per-material realization
        let mut materials = Vec::with_capacity(self.material_names.len());
        let mut neural = None;
        match &self.config.materials {
            MaterialModelKind::Neural {
                encoding_levels,
                hidden,
                layers,
            } => {
                neural = Some(NeuralRealized::lease(
                    &self.store,
                    &leased,
                    *encoding_levels,
                    *hidden,
                    *layers,
                ));
                for _ in &self.material_names {
                    materials.push(None);
                }
            }
            kind => {
                for (mid, name) in self.material_names.iter().enumerate() {
                    let use_embedding = match kind {
                        MaterialModelKind::Embedding { .. } => true,
                        MaterialModelKind::Scene => matches!(
                            self.material_specs[mid],
                            MaterialSpec::Embedding { .. }
                        ),
                        MaterialModelKind::Neural { .. } => unreachable!(),
                    };
                    let mat = if use_embedding {
                        let dim = match kind {
                            MaterialModelKind::Embedding { dim } => *dim,
                            _ => DEFAULT_EMBEDDING_DIM,
                        };
                        material_from_embedding(name, dim, &self.store, &leased, pattern.clone())
                    } else {
                        match &self.material_specs[mid] {
                            MaterialSpec::Fixed {
                                eps_r,
                                sigma,
                                scattering,
                                xpd,
                                ..
                            } => MaterialVars {
                                eps_r: tape.var(*eps_r),
                                sigma: tape.var(*sigma),
                                scattering: tape.var(*scattering),
                                xpd: tape.var(*xpd),
                                pattern: pattern.clone(),
                            },
                            other => panic!(
                                "material {} declared {:?} but no parameters present",
                                name, other
                            ),
                        }
                    };
                    materials.push(Some(mat));
                }
            }
        }

        Realized {
            tape,
            leased,
            materials,
            neural,
            pattern,
            antenna,
            tri_to_mat: self.tri_to_mat.clone(),
            scene_center: self.scene_center,
            scene_half_extent: self.scene_half_extent,
        }
    }

    /// Physical material parameters (eps_r, sigma, S, K_x) for an
    /// embedding-modeled material at the current store values.
    pub fn material_values(&self, name: &str) -> Option<(f64, f64, f64, f64)> {
        let dim = match &self.config.materials {
            MaterialModelKind::Embedding { dim } => *dim,
            MaterialModelKind::Scene => {
                return self.material_specs.iter().find_map(|m| match m {
                    MaterialSpec::Fixed {
                        name: n,
                        eps_r,
                        sigma,
                        scattering,
                        xpd,
                    } if n == name => Some((*eps_r, *sigma, *scattering, *xpd)),
                    _ => None,
                })
            }
            MaterialModelKind::Neural { .. } => return None,
        };
        self.store.id(&format!("emb/{name}/0"))?;
        let dot = |head: &str| -> f64 {
            (0..dim)
                .map(|k| {
                    self.store.get(&format!("emb/{name}/{k}")).unwrap()
                        * self.store.get(&format!("head/{head}/{k}")).unwrap()
                })
                .sum()
        };
        Some((
            dot("eps").exp() + 1.0,
            dot("sigma").exp(),
            sigmoid(dot("s")),
            sigmoid(dot("xpd")),
        ))
    }

    // -- checkpoints --

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.config.clone(),
            metadata: CheckpointMeta::current(),
            material_names: self.material_names.clone(),
            params: self
                .store
                .names
                .iter()
                .cloned()
                .zip(self.store.values.iter().copied())
                .collect(),
        }
    }

    /// Restores values from a checkpoint into an already-initialized
    /// model; the layouts must agree.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), String> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", ck.version));
        }
        if ck.model != self.config {
            return Err("checkpoint model configuration does not match".into());
        }
        for (name, v) in &ck.params {
            let id = self
                .store
                .id(name)
                .ok_or_else(|| format!("checkpoint parameter {name} not in model"))?;
            self.store.set_value(id, *v);
        }
        Ok(())
    }
}

fn add_embedding_params(
    store: &mut ParameterStore,
    names: &[String],
    scene: &Scene,
    dim: usize,
    rng: &mut ChaCha8Rng,
    all: bool,
) {
    let bound = 0.5 / (dim as f64).sqrt();
    for i in 0..4 * dim {
        let head = ["head/sigma", "head/eps", "head/s", "head/xpd"][i / dim];
        store.add(&format!("{head}/{}", i % dim), rng.gen_range(-bound..bound));
    }
    for (mid, name) in names.iter().enumerate() {
        if !all && !matches!(scene.materials[mid], MaterialSpec::Embedding { .. }) {
            continue;
        }
        for k in 0..dim {
            store.add(&format!("emb/{name}/{k}"), rng.gen_range(-bound..bound));
        }
    }
}

fn add_neural_params(
    store: &mut ParameterStore,
    encoding_levels: usize,
    hidden: usize,
    layers: usize,
    rng: &mut ChaCha8Rng,
) {
    let mut fan_in = 6 * encoding_levels;
    for l in 0..layers {
        let std = (2.0 / fan_in as f64).sqrt();
        for i in 0..hidden * fan_in {
            // Box-Muller normal init
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            store.add(&format!("nn/l{l}/w/{i}"), std * z);
        }
        for i in 0..hidden {
            store.add(&format!("nn/l{l}/b/{i}"), 0.0);
        }
        fan_in = hidden;
    }
    for (h, head) in ["sigma", "eps", "s", "xpd"].iter().enumerate() {
        let _ = h;
        for i in 0..hidden {
            let std = (1.0 / hidden as f64).sqrt();
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            store.add(&format!("nn/head/{head}/w/{i}"), 0.1 * std * z);
        }
        store.add(&format!("nn/head/{head}/b"), 0.0);
    }
}

/// Builds the material quantities from a latent embedding:
/// sigma = exp(v.w1), eps_r = 1 + exp(v.w2), S = sigmoid(v.w3),
/// K_x = sigmoid(v.w4).
pub fn material_from_embedding<'t>(
    name: &str,
    dim: usize,
    store: &ParameterStore,
    leased: &[Var<'t>],
    pattern: PatternVars<'t>,
) -> MaterialVars<'t> {
    let var = |n: String| leased[store.id(&n).unwrap_or_else(|| panic!("missing {n}"))];
    let v: Vec<Var<'t>> = (0..dim).map(|k| var(format!("emb/{name}/{k}"))).collect();
    let head = |h: &str| -> Var<'t> {
        let w: Vec<Var<'t>> = (0..dim).map(|k| var(format!("head/{h}/{k}"))).collect();
        crate::ad::dot(&v, &w)
    };
    MaterialVars {
        sigma: head("sigma").exp(),
        eps_r: head("eps").exp() + 1.0,
        scattering: head("s").sigmoid(),
        xpd: head("xpd").sigmoid(),
        pattern,
    }
}

// ---------------------------------------------------------------------
// Neural material field

pub struct NeuralRealized<'t> {
    layers: Vec<(Vec<Var<'t>>, Vec<Var<'t>>)>, // (weights row-major, biases)
    heads: Vec<(Vec<Var<'t>>, Var<'t>)>,       // sigma, eps, s, xpd
    encoding_levels: usize,
    hidden: usize,
}

impl<'t> NeuralRealized<'t> {
    fn lease(
        store: &ParameterStore,
        leased: &[Var<'t>],
        encoding_levels: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let var = |n: String| leased[store.id(&n).unwrap()];
        let mut fan_in = 6 * encoding_levels;
        let mut lys = Vec::new();
        for l in 0..layers {
            let w = (0..hidden * fan_in)
                .map(|i| var(format!("nn/l{l}/w/{i}")))
                .collect();
            let b = (0..hidden).map(|i| var(format!("nn/l{l}/b/{i}"))).collect();
            lys.push((w, b));
            fan_in = hidden;
        }
        let heads = ["sigma", "eps", "s", "xpd"]
            .iter()
            .map(|h| {
                (
                    (0..hidden)
                        .map(|i| var(format!("nn/head/{h}/w/{i}")))
                        .collect(),
                    var(format!("nn/head/{h}/b")),
                )
            })
            .collect();
        NeuralRealized {
            layers: lys,
            heads,
            encoding_levels,
            hidden,
        }
    }

    /// Forward pass at an encoded point; returns the four raw head
    /// outputs (sigma, eps, s, xpd order).
    fn forward(&self, tape: &'t Tape, encoded: &[f64]) -> [Var<'t>; 4] {
        let mut act: Vec<Var<'t>> = encoded.iter().map(|&x| tape.var(x)).collect();
        for (w, b) in &self.layers {
            let fan_in = act.len();
            let mut next = Vec::with_capacity(self.hidden);
            for i in 0..self.hidden {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                next.push((crate::ad::dot(row, &act) + b[i]).relu());
            }
            act = next;
        }
        let mut out = [tape.var(0.0); 4];
        for (k, (w, b)) in self.heads.iter().enumerate() {
            out[k] = crate::ad::dot(w, &act) + *b;
        }
        out
    }
}

/// Tape-bound realization of the whole model: material resolver plus
/// antennas and the scattering pattern. One per (tape, parameter state).
pub struct Realized<'t> {
    pub tape: &'t Tape,
    /// Leased store parameters in canonical order; read gradients here.
    pub leased: Vec<Var<'t>>,
    materials: Vec<Option<MaterialVars<'t>>>,
    neural: Option<NeuralRealized<'t>>,
    pub pattern: PatternVars<'t>,
    /// Shared by the transmit and receive ends.
    pub antenna: AntennaVars<'t>,
    tri_to_mat: Vec<usize>,
    scene_center: Vec3,
    scene_half_extent: f64,
}

impl<'t> MaterialResolver<'t> for Realized<'t> {
    fn resolve(&self, triangle_id: usize, point: Vec3) -> MaterialVars<'t> {
        if let Some(nn) = &self.neural {
            let enc = positional_encode(
                point,
                self.scene_center,
                self.scene_half_extent,
                nn.encoding_levels,
            );
            let [sig, eps, s, kx] = nn.forward(self.tape, &enc);
            return MaterialVars {
                sigma: sig.exp(),
                eps_r: eps.exp() + 1.0,
                scattering: s.sigmoid(),
                xpd: kx.sigmoid(),
                pattern: self.pattern.clone(),
            };
        }
        let mid = self.tri_to_mat[triangle_id];
        self.materials[mid]
            .as_ref()
            .expect("material not realized")
            .clone()
    }
}

// ---------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Closed form used for the hemispherical-Gaussian lobe
    /// normalization, recorded so checkpoints stay interpretable if the
    /// approximation changes.
    pub hg_normalization: String,
}

impl CheckpointMeta {
    pub fn current() -> Self {
        CheckpointMeta {
            hg_normalization:
                "a(lambda, cos_beta) = 2*pi/lambda * (exp(lambda) - exp(-lambda)) * s(cos_beta); \
                 s is the logistic above-horizon fraction evaluated at the lobe axis elevation; \
                 a = 2*pi for lambda < 1e-4"
                    .to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub metadata: CheckpointMeta,
    pub material_names: Vec<String>,
    pub params: Vec<(String, f64)>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| format!("bad checkpoint: {e}"))
    }
}
