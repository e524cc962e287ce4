//! Differentiable computation of complex path coefficients, the channel
//! frequency response and the channel impulse response from geometric
//! path sets. Every arithmetic step that touches a material, antenna or
//! scattering parameter runs on tape variables, so gradients flow from
//! the loss back to all trainable parameters. Geometry (directions,
//! distances, angles) is constant: gradients w.r.t. the scene are out of
//! scope, which is what lets paths be traced once and reused.

use crate::ad::{CVar, Tape, Var};
use crate::geom::{v3, Vec3, SPEED_OF_LIGHT};
use crate::quad::integrate_hemisphere;
use crate::tracer::{InteractionKind, PropagationPath};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// OFDM waveform: carrier f, N (even) subcarriers spaced delta_f apart.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    pub carrier_hz: f64,
    pub subcarriers: usize,
    pub spacing_hz: f64,
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.subcarriers == 0 || self.subcarriers % 2 != 0 {
            return Err(format!(
                "subcarrier count must be even and positive, got {}",
                self.subcarriers
            ));
        }
        if !(self.spacing_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return Err("carrier and spacing must be positive".into());
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn bandwidth(&self) -> f64 {
        self.subcarriers as f64 * self.spacing_hz
    }
}

// ---------------------------------------------------------------------
// Spherical bases

pub fn spherical_angles(d: Vec3) -> (f64, f64) {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x).rem_euclid(2.0 * std::f64::consts::PI);
    (theta, phi)
}

pub fn unit_from_angles(theta: f64, phi: f64) -> Vec3 {
    v3(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

pub fn theta_hat(theta: f64, phi: f64) -> Vec3 {
    v3(
        theta.cos() * phi.cos(),
        theta.cos() * phi.sin(),
        -theta.sin(),
    )
}

pub fn phi_hat(_theta: f64, phi: f64) -> Vec3 {
    v3(-phi.sin(), phi.cos(), 0.0)
}

// ---------------------------------------------------------------------
// Materials on the tape

/// Scattering pattern with parameters lifted onto the tape.
#[derive(Clone)]
pub enum PatternVars<'t> {
    /// Two-lobe backscattering model; the lobe exponents are integers
    /// and not trainable, the lobe mix is.
    Backscatter {
        alpha_r: u32,
        alpha_s: u32,
        lobe_mix: Var<'t>,
    },
    /// Hemispherical-Gaussian mixture, fully trainable.
    HemiGaussian {
        weights: [Var<'t>; 3],
        lam2: Var<'t>,
        lam3: Var<'t>,
    },
}

impl<'t> PatternVars<'t> {
    /// Scattering pattern value f_s(k_i, k_s, n) on the tape.
    pub fn eval(&self, tape: &'t Tape, k_i: Vec3, k_s: Vec3, n: Vec3) -> Var<'t> {
        match self {
            PatternVars::Backscatter {
                alpha_r,
                alpha_s,
                lobe_mix,
            } => {
                let (lobe_r, lobe_s) = backscatter_lobes(k_i, k_s, n, *alpha_r, *alpha_s);
                let (norm_r, norm_s) = backscatter_norms(k_i, n, *alpha_r, *alpha_s);
                let lam = *lobe_mix;
                let num = lam * lobe_r + (1.0 - lam) * lobe_s;
                let den = lam * norm_r + (1.0 - lam) * norm_s;
                num / den
            }
            PatternVars::HemiGaussian {
                weights,
                lam2,
                lam3,
            } => {
                // lobe axes: back toward the source (-k_i) and along the
                // specular direction; both above the horizon, where the
                // normalization approximation is accurate
                let back = -k_i;
                let k_r = reflect(k_i, n);
                let lambert = weights[0] * (k_s.dot(n) / std::f64::consts::PI);
                let a2 = hg_normalization(tape, *lam2, back.dot(n));
                let a3 = hg_normalization(tape, *lam3, k_r.dot(n));
                let lobe2 = weights[1] * (*lam2 * k_s.dot(back)).exp() / a2;
                let lobe3 = weights[2] * (*lam3 * k_s.dot(k_r)).exp() / a3;
                lambert + lobe2 + lobe3
            }
        }
    }

    /// Value-level evaluation (no recording), for quadrature checks.
    pub fn eval_f64(&self, k_i: Vec3, k_s: Vec3, n: Vec3) -> f64 {
        match self {
            PatternVars::Backscatter {
                alpha_r,
                alpha_s,
                lobe_mix,
            } => {
                let (lobe_r, lobe_s) = backscatter_lobes(k_i, k_s, n, *alpha_r, *alpha_s);
                let (norm_r, norm_s) = backscatter_norms(k_i, n, *alpha_r, *alpha_s);
                let lam = lobe_mix.value();
                (lam * lobe_r + (1.0 - lam) * lobe_s) / (lam * norm_r + (1.0 - lam) * norm_s)
            }
            PatternVars::HemiGaussian {
                weights,
                lam2,
                lam3,
            } => {
                let back = -k_i;
                let k_r = reflect(k_i, n);
                let (w1, w2, w3) = (weights[0].value(), weights[1].value(), weights[2].value());
                let (l2, l3) = (lam2.value(), lam3.value());
                let a2 = hg_normalization_f64(l2, back.dot(n));
                let a3 = hg_normalization_f64(l3, k_r.dot(n));
                w1 * k_s.dot(n) / std::f64::consts::PI
                    + w2 * (l2 * k_s.dot(back)).exp() / a2
                    + w3 * (l3 * k_s.dot(k_r)).exp() / a3
            }
        }
    }
}

/// All material quantities entering the field computation, on the tape.
#[derive(Clone)]
pub struct MaterialVars<'t> {
    pub eps_r: Var<'t>,
    pub sigma: Var<'t>,
    /// Scattering coefficient S in [0, 1].
    pub scattering: Var<'t>,
    /// XPD coefficient K_x in [0, 1].
    pub xpd: Var<'t>,
    pub pattern: PatternVars<'t>,
}

/// Resolves the material at an interaction point for the current
/// parameter values, keyed by the triangle hit (implementations carry
/// the scene and map triangles to materials); point-dependent for
/// neural materials.
pub trait MaterialResolver<'t> {
    fn resolve(&self, triangle_id: usize, point: Vec3) -> MaterialVars<'t>;
}

pub fn reflect(k: Vec3, n: Vec3) -> Vec3 {
    k - n * (2.0 * k.dot(n))
}

// ---------------------------------------------------------------------
// Backscattering lobe model

fn backscatter_lobes(k_i: Vec3, k_s: Vec3, n: Vec3, alpha_r: u32, alpha_s: u32) -> (f64, f64) {
    // specular lobe about k_r, backscatter lobe toward the source (-k_i)
    let k_r = reflect(k_i, n);
    let lr = ((1.0 + k_r.dot(k_s)) * 0.5).max(0.0).powi(alpha_r as i32);
    let ls = ((1.0 - k_i.dot(k_s)) * 0.5).max(0.0).powi(alpha_s as i32);
    (lr, ls)
}

/// Hemispherical integrals of the two unit lobes, by 64x64
/// Gauss-Legendre quadrature. They depend on the incidence elevation
/// only; memoized because path geometry is fixed across training.
fn backscatter_norms(k_i: Vec3, n: Vec3, alpha_r: u32, alpha_s: u32) -> (f64, f64) {
    let k_r = reflect(k_i, n);
    let f_r = lobe_norm(alpha_r, k_r.dot(n));
    let f_s = lobe_norm(alpha_s, -k_i.dot(n));
    (f_r, f_s)
}

fn lobe_norm(alpha: u32, cos_elev: f64) -> f64 {
    static CACHE: Mutex<Option<HashMap<(u32, u64), f64>>> = Mutex::new(None);
    let key = (alpha, cos_elev.to_bits());
    if let Some(v) = CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(&key) {
        return *v;
    }
    let n = v3(0.0, 0.0, 1.0);
    let sin_elev = (1.0 - cos_elev * cos_elev).max(0.0).sqrt();
    let axis = v3(sin_elev, 0.0, cos_elev);
    let val = integrate_hemisphere(64, 64, n, |dir| {
        ((1.0 + axis.dot(dir)) * 0.5).max(0.0).powi(alpha as i32)
    });
    CACHE
        .lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(key, val);
    val
}

/// Backscattering-lobe pattern value with explicit parameters.
pub fn backscatter_pattern(
    k_i: Vec3,
    k_s: Vec3,
    n: Vec3,
    alpha_r: u32,
    alpha_s: u32,
    lobe_mix: f64,
) -> f64 {
    let (lr, ls) = backscatter_lobes(k_i, k_s, n, alpha_r, alpha_s);
    let (fr, fs) = backscatter_norms(k_i, n, alpha_r, alpha_s);
    (lobe_mix * lr + (1.0 - lobe_mix) * ls) / (lobe_mix * fr + (1.0 - lobe_mix) * fs)
}

// ---------------------------------------------------------------------
// Hemispherical Gaussian normalization

const HG_LAMBDA_FLOOR: f64 = 1e-4;

/// Approximate hemispherical integral of e^{lambda cos(gamma)} about an
/// axis with elevation cos(beta) above the surface: the full-sphere
/// integral scaled by a logistic above-horizon fraction.
pub fn hg_normalization<'t>(tape: &'t Tape, lambda: Var<'t>, cos_beta: f64) -> Var<'t> {
    if lambda.value() < HG_LAMBDA_FLOOR {
        // series limit: uniform lobe over the hemisphere
        return tape.var(2.0 * std::f64::consts::PI);
    }
    let l = lambda;
    let t = l.sqrt() * (1.6988 * l * l + 10.8438 * l) / (l * l + 6.2201 * l + 10.2415);
    let et = t.exp();
    let etc = (t * cos_beta).exp();
    let s = (et * etc - 1.0) / ((et - 1.0) * (etc + 1.0));
    (2.0 * std::f64::consts::PI) * (l.exp() - (-l).exp()) / l * s
}

pub fn hg_normalization_f64(lambda: f64, cos_beta: f64) -> f64 {
    if lambda < HG_LAMBDA_FLOOR {
        return 2.0 * std::f64::consts::PI;
    }
    let t = lambda.sqrt() * (1.6988 * lambda * lambda + 10.8438 * lambda)
        / (lambda * lambda + 6.2201 * lambda + 10.2415);
    let (et, etc) = (t.exp(), (t * cos_beta).exp());
    let s = (et * etc - 1.0) / ((et - 1.0) * (etc + 1.0));
    2.0 * std::f64::consts::PI / lambda * (lambda.exp() - (-lambda).exp()) * s
}

// ---------------------------------------------------------------------
// Permittivity and Fresnel coefficients

/// eta = eps_r - j sigma / (eps_0 omega)
pub fn complex_permittivity<'t>(eps_r: Var<'t>, sigma: Var<'t>, f_hz: f64) -> CVar<'t> {
    let omega = 2.0 * std::f64::consts::PI * f_hz;
    CVar {
        re: eps_r,
        im: -(sigma / (VACUUM_PERMITTIVITY * omega)),
    }
}

/// Fresnel reflection coefficients (r_perp, r_par) for an incident wave
/// in vacuum; principal square-root branch (Re >= 0).
pub fn fresnel<'t>(tape: &'t Tape, eta: CVar<'t>, cos_theta_i: f64) -> (CVar<'t>, CVar<'t>) {
    assert!(cos_theta_i > 0.0 && cos_theta_i <= 1.0);
    let sin2 = 1.0 - cos_theta_i * cos_theta_i;
    let w = CVar {
        re: eta.re - sin2,
        im: eta.im,
    }
    .sqrt();
    let cos_c = CVar::constant(tape, cos_theta_i, 0.0);
    let r_perp = (cos_c - w) / (cos_c + w);
    let eta_cos = eta.scale_const(cos_theta_i);
    let r_par = (eta_cos - w) / (eta_cos + w);
    (r_perp, r_par)
}

// ---------------------------------------------------------------------
// Basis transforms and the Jones vector chain

/// Transverse field in a stated orthonormal basis perpendicular to the
/// propagation direction.
#[derive(Clone, Copy)]
pub struct Jones<'t> {
    pub e: [CVar<'t>; 2],
    pub basis: (Vec3, Vec3),
    pub k: Vec3,
}

impl<'t> Jones<'t> {
    pub fn check_transverse(&self) -> bool {
        let (p, q) = self.basis;
        p.is_unit()
            && q.is_unit()
            && p.dot(q).abs() <= 1e-9
            && p.dot(self.k).abs() <= 1e-9
            && q.dot(self.k).abs() <= 1e-9
    }
}

/// Change-of-basis matrix between two transverse bases sharing a
/// propagation direction. Orthogonal by construction.
pub fn basis_transform(in_basis: (Vec3, Vec3), out_basis: (Vec3, Vec3)) -> [[f64; 2]; 2] {
    let (pi, qi) = out_basis;
    let (po, qo) = in_basis;
    [[pi.dot(po), pi.dot(qo)], [qi.dot(po), qi.dot(qo)]]
}

fn apply_basis<'t>(d: [[f64; 2]; 2], e: [CVar<'t>; 2]) -> [CVar<'t>; 2] {
    [
        e[0].scale_const(d[0][0]) + e[1].scale_const(d[0][1]),
        e[0].scale_const(d[1][0]) + e[1].scale_const(d[1][1]),
    ]
}

/// Perpendicular/parallel incidence basis for direction k against
/// surface normal n: e_perp normal to the plane of incidence,
/// e_par = k x e_perp.
fn incidence_basis(k: Vec3, n: Vec3) -> (Vec3, Vec3) {
    let c = k.cross(n);
    let e_perp = if c.norm() < 1e-9 {
        k.any_orthonormal()
    } else {
        c.normalized()
    };
    (e_perp, k.cross(e_perp))
}

/// Spreading factor for a specular bounce with spherical wavefronts and
/// planar reflectors: the chained product with the 1/d1 of the initial
/// segment telescopes to 1/(total unfolded length).
pub fn spreading_factor_specular(cumulative_before: f64, d_next: f64) -> f64 {
    assert!(cumulative_before > 0.0 && d_next >= 0.0);
    cumulative_before / (cumulative_before + d_next)
}

fn propagation_phase(dist: f64, wavelength: f64) -> (f64, f64) {
    let ph = -2.0 * std::f64::consts::PI * dist / wavelength;
    (ph.cos(), ph.sin())
}

/// Specular reflection transfer: componentwise R r_perp / R r_par in the
/// incidence basis, scaled by the spreading factor and the segment phase.
pub fn specular_transfer<'t>(
    tape: &'t Tape,
    e_in: [CVar<'t>; 2],
    material: &MaterialVars<'t>,
    cos_theta_i: f64,
    spreading: f64,
    d_next: f64,
    wavelength: f64,
) -> [CVar<'t>; 2] {
    let eta = complex_permittivity(material.eps_r, material.sigma, SPEED_OF_LIGHT / wavelength);
    let (r_perp, r_par) = fresnel(tape, eta, cos_theta_i);
    let s = material.scattering;
    let r_spec = (1.0 - s * s).sqrt_guarded();
    let phase = propagation_phase(d_next, wavelength);
    [
        (e_in[0] * r_perp).scale(r_spec).scale_const(spreading).mul_const(phase.0, phase.1),
        (e_in[1] * r_par).scale(r_spec).scale_const(spreading).mul_const(phase.0, phase.1),
    ]
}

/// Diffuse reflection transfer. The incoming field must already be in
/// the incidence basis; the output is the scattered field magnitude
/// split across polarizations by the XPD coefficient, with 1/d spreading
/// and the segment phase applied. chi are the random phases (zero for
/// synthetic data).
#[allow(clippy::too_many_arguments)]
pub fn diffuse_transfer<'t>(
    tape: &'t Tape,
    e_in: [CVar<'t>; 2],
    material: &MaterialVars<'t>,
    k_i: Vec3,
    k_s: Vec3,
    n: Vec3,
    da: f64,
    d_next: f64,
    wavelength: f64,
    chi: (f64, f64),
) -> [CVar<'t>; 2] {
    let cos_theta_i = -k_i.dot(n);
    assert!(cos_theta_i > 0.0, "diffuse point not facing the source");
    assert!(da > 0.0);
    let eta = complex_permittivity(material.eps_r, material.sigma, SPEED_OF_LIGHT / wavelength);
    let (r_perp, r_par) = fresnel(tape, eta, cos_theta_i);
    // Gamma ||E|| = || diag(r_perp, r_par) E ||
    let reflected_mag =
        ((e_in[0] * r_perp).abs_sq() + (e_in[1] * r_par).abs_sq()).sqrt_guarded();
    let f_s = material.pattern.eval(tape, k_i, k_s, n);
    if f_s.value() < 0.0 {
        panic!(
            "scattering pattern returned a negative value ({})",
            f_s.value()
        );
    }
    let s = material.scattering;
    let scattered_mag = s * (f_s * (cos_theta_i * da)).sqrt_guarded() * reflected_mag;
    let kx = material.xpd;
    let co = (1.0 - kx).sqrt_guarded();
    let cross = kx.sqrt_guarded();
    let amp = scattered_mag * (1.0 / d_next);
    let phase = propagation_phase(d_next, wavelength);
    let e_co = CVar::new(amp * co, tape.var(0.0))
        .mul_const(chi.0.cos(), chi.0.sin())
        .mul_const(phase.0, phase.1);
    let e_cross = CVar::new(amp * cross, tape.var(0.0))
        .mul_const(chi.1.cos(), chi.1.sin())
        .mul_const(phase.0, phase.1);
    [e_co, e_cross]
}

// ---------------------------------------------------------------------
// Antennas

/// Directional gain model with parameters on the tape.
#[derive(Clone)]
pub enum GainVars<'t> {
    Isotropic,
    /// Mixture of spherical Gaussians: constrained weights (sum 1),
    /// positive concentrations, unconstrained mean directions
    /// (normalized on read) and radiation efficiency in [0, 1].
    SgMixture {
        weights: Vec<Var<'t>>,
        concentrations: Vec<Var<'t>>,
        means: Vec<[Var<'t>; 3]>,
        efficiency: Var<'t>,
    },
}

const SG_LAMBDA_FLOOR: f64 = 1e-4;

impl<'t> GainVars<'t> {
    /// G(direction) on the tape; the 4*pi factor makes the spherical
    /// integral equal 4*pi times the radiation efficiency.
    pub fn eval(&self, tape: &'t Tape, dir: Vec3) -> Var<'t> {
        match self {
            GainVars::Isotropic => tape.var(1.0),
            GainVars::SgMixture {
                weights,
                concentrations,
                means,
                efficiency,
            } => {
                let mut acc: Option<Var<'t>> = None;
                for i in 0..weights.len() {
                    let [mx, my, mz] = means[i];
                    let norm = (mx * mx + my * my + mz * mz).sqrt_guarded();
                    let mu_dot_r = (mx * dir.x + my * dir.y + mz * dir.z) / norm;
                    let lam = concentrations[i];
                    let a_i = if lam.value() < SG_LAMBDA_FLOOR {
                        tape.var(4.0 * std::f64::consts::PI)
                    } else {
                        (2.0 * std::f64::consts::PI) * (lam.exp() - (-lam).exp()) / lam
                    };
                    let term = weights[i] * (lam * mu_dot_r).exp() / a_i;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a + term,
                    });
                }
                4.0 * std::f64::consts::PI * *efficiency * acc.expect("empty mixture")
            }
        }
    }

    pub fn eval_f64(&self, dir: Vec3) -> f64 {
        match self {
            GainVars::Isotropic => 1.0,
            GainVars::SgMixture {
                weights,
                concentrations,
                means,
                efficiency,
            } => {
                let mut acc = 0.0;
                for i in 0..weights.len() {
                    let m = v3(means[i][0].value(), means[i][1].value(), means[i][2].value());
                    let mu = m.normalized();
                    let lam = concentrations[i].value();
                    let a_i = if lam < SG_LAMBDA_FLOOR {
                        4.0 * std::f64::consts::PI
                    } else {
                        2.0 * std::f64::consts::PI / lam * (lam.exp() - (-lam).exp())
                    };
                    acc += weights[i].value() / a_i * (lam * mu.dot(dir)).exp();
                }
                4.0 * std::f64::consts::PI * efficiency.value() * acc
            }
        }
    }
}

/// Antenna: gain model, polarization slant angle and orientation
/// (rows of the local-to-global rotation).
#[derive(Clone)]
pub struct AntennaVars<'t> {
    pub gain: GainVars<'t>,
    pub zeta: f64,
    pub orientation: [Vec3; 3],
}

pub const IDENTITY_ORIENTATION: [Vec3; 3] = [
    v3(1.0, 0.0, 0.0),
    v3(0.0, 1.0, 0.0),
    v3(0.0, 0.0, 1.0),
];

fn rotate_local_to_global(m: &[Vec3; 3], v: Vec3) -> Vec3 {
    // m holds rows of R; R v
    v3(m[0].dot(v), m[1].dot(v), m[2].dot(v))
}

fn rotate_global_to_local(m: &[Vec3; 3], v: Vec3) -> Vec3 {
    // R^T v = columns dotted
    v3(
        v3(m[0].x, m[1].x, m[2].x).dot(v),
        v3(m[0].y, m[1].y, m[2].y).dot(v),
        v3(m[0].z, m[1].z, m[2].z).dot(v),
    )
}

/// Antenna pattern C = [cos(zeta) sqrt(G), sin(zeta) sqrt(G)] in the
/// local (theta_hat, phi_hat) basis at `dir`, returned with that basis
/// expressed in the global frame.
pub fn antenna_field<'t>(tape: &'t Tape, ant: &AntennaVars<'t>, dir: Vec3) -> Jones<'t> {
    let local = rotate_global_to_local(&ant.orientation, dir);
    let (theta, phi) = spherical_angles(local);
    let g = ant.gain.eval(tape, local);
    assert!(
        g.value() >= 0.0,
        "antenna gain must be non-negative, got {}",
        g.value()
    );
    let sqrt_g = g.sqrt_guarded();
    let c_theta = sqrt_g * ant.zeta.cos();
    let c_phi = sqrt_g * ant.zeta.sin();
    let e1 = rotate_local_to_global(&ant.orientation, theta_hat(theta, phi));
    let e2 = rotate_local_to_global(&ant.orientation, phi_hat(theta, phi));
    Jones {
        e: [CVar::from_real(c_theta), CVar::from_real(c_phi)],
        basis: (e1, e2),
        k: dir,
    }
}

// ---------------------------------------------------------------------
// Path coefficient and channel responses

/// Evaluates the complex coefficient a of one propagation path. The
/// factored-out delay phase e^{-j 2 pi f tau} is NOT included; it enters
/// per subcarrier in [`cfr`]. Segment phases are applied along the chain
/// and cancelled against the total at the end, so a is exactly the
/// amplitude/polarization part.
pub fn path_coefficient<'t>(
    tape: &'t Tape,
    path: &PropagationPath,
    tx_antenna: &AntennaVars<'t>,
    rx_antenna: &AntennaVars<'t>,
    materials: &dyn MaterialResolver<'t>,
    wavelength: f64,
    chi: (f64, f64),
) -> CVar<'t> {
    let tx_jones = antenna_field(tape, tx_antenna, path.departure_dir());
    let mut e = tx_jones.e;
    let mut basis = tx_jones.basis;
    let mut k = tx_jones.k;

    // initial spherical spreading and phase over the first segment
    let d1 = path.segment_lengths[0];
    let ph = propagation_phase(d1, wavelength);
    e = [
        e[0].scale_const(1.0 / d1).mul_const(ph.0, ph.1),
        e[1].scale_const(1.0 / d1).mul_const(ph.0, ph.1),
    ];

    let mut cumulative = d1;
    for (j, rec) in path.interactions.iter().enumerate() {
        let d_next = path.segment_lengths[j + 1];
        let in_basis = incidence_basis(k, rec.normal);
        e = apply_basis(basis_transform(basis, in_basis), e);
        let mat = materials.resolve(rec.triangle_id, rec.point);
        let cos_theta_i = -rec.k_in.dot(rec.normal);
        match rec.kind {
            InteractionKind::Specular => {
                let spreading = spreading_factor_specular(cumulative, d_next);
                e = specular_transfer(tape, e, &mat, cos_theta_i, spreading, d_next, wavelength);
                basis = incidence_basis(rec.k_out, rec.normal);
            }
            InteractionKind::Diffuse => {
                let da = rec.da.expect("diffuse interaction carries dA");
                e = diffuse_transfer(
                    tape, e, &mat, rec.k_in, rec.k_out, rec.normal, da, d_next, wavelength, chi,
                );
                basis = incidence_basis(rec.k_out, rec.normal);
            }
        }
        k = rec.k_out;
        cumulative += d_next;
    }

    let rx_jones = antenna_field(tape, rx_antenna, -k);
    let d_r = basis_transform(basis, rx_jones.basis);
    let e_rx = apply_basis(d_r, e);
    // receive-pattern inner product (pattern components are real)
    let a = e_rx[0].scale(rx_jones.e[0].re) + e_rx[1].scale(rx_jones.e[1].re);
    // cancel the accumulated segment phases: their product is exactly
    // the factored e^{-j 2 pi f tau}
    let total_ph = 2.0 * std::f64::consts::PI * path.total_length / wavelength;
    a.scale_const(wavelength / (4.0 * std::f64::consts::PI))
        .mul_const(total_ph.cos(), total_ph.sin())
}

/// Discrete CFR H[n] = sum_i a_i e^{-j 2 pi (f + n delta_f) tau_i},
/// n = -N/2 .. N/2-1 (vector index 0 corresponds to n = -N/2).
pub fn cfr<'t>(coeffs: &[(CVar<'t>, f64)], wf: &WaveformConfig) -> Vec<CVar<'t>> {
    let n_sub = wf.subcarriers;
    let tape = coeffs
        .first()
        .map(|(a, _)| a.re.tape())
        .expect("cfr requires at least one coefficient; use cfr_empty");
    let mut out = Vec::with_capacity(n_sub);
    for idx in 0..n_sub {
        let n = idx as i64 - (n_sub / 2) as i64;
        let freq = wf.carrier_hz + n as f64 * wf.spacing_hz;
        let mut h = CVar::constant(tape, 0.0, 0.0);
        for (a, tau) in coeffs {
            let ph = -2.0 * std::f64::consts::PI * freq * tau;
            h = h + a.mul_const(ph.cos(), ph.sin());
        }
        out.push(h);
    }
    out
}

pub fn cfr_empty<'t>(tape: &'t Tape, wf: &WaveformConfig) -> Vec<CVar<'t>> {
    (0..wf.subcarriers)
        .map(|_| CVar::constant(tape, 0.0, 0.0))
        .collect()
}

/// N-point IDFT of the CFR; tap index in natural delay order
/// l = 0 .. N-1 (the IDFT is N-periodic, negative taps alias upward).
pub fn cir_natural<'t>(h_freq: &[CVar<'t>]) -> Vec<CVar<'t>> {
    let n_sub = h_freq.len();
    let scale = 1.0 / (n_sub as f64).sqrt();
    (0..n_sub)
        .map(|l| {
            let mut h = CVar::constant(h_freq[0].re.tape(), 0.0, 0.0);
            for (idx, hf) in h_freq.iter().enumerate() {
                let n = idx as i64 - (n_sub / 2) as i64;
                let ph = 2.0 * std::f64::consts::PI * n as f64 * l as f64 / n_sub as f64;
                h = h + hf.mul_const(ph.cos(), ph.sin());
            }
            h.scale_const(scale)
        })
        .collect()
}

/// IDFT with taps ordered l = -N/2 .. N/2-1 (index 0 is l = -N/2).
pub fn cir<'t>(h_freq: &[CVar<'t>]) -> Vec<CVar<'t>> {
    let n_sub = h_freq.len();
    let nat = cir_natural(h_freq);
    (0..n_sub)
        .map(|idx| {
            let l = idx as i64 - (n_sub / 2) as i64;
            nat[(l.rem_euclid(n_sub as i64)) as usize]
        })
        .collect()
}

/// Fused CIR: h[l] = sum_i a_i g_i[l] with geometry-only kernels
/// g_i[l] = (1/sqrt(N)) sum_n e^{-j 2 pi (f + n delta_f) tau_i}
/// e^{j 2 pi n l / N}. Algebraically identical to cir_natural(cfr(..))
/// but O(paths * N) tape nodes instead of O(N^2).
pub fn cir_from_paths<'t>(
    tape: &'t Tape,
    coeffs: &[(CVar<'t>, f64)],
    wf: &WaveformConfig,
) -> Vec<CVar<'t>> {
    let n_sub = wf.subcarriers;
    let scale = 1.0 / (n_sub as f64).sqrt();
    let mut out: Vec<CVar<'t>> = (0..n_sub).map(|_| CVar::constant(tape, 0.0, 0.0)).collect();
    for (a, tau) in coeffs {
        for (l, slot) in out.iter_mut().enumerate() {
            let (mut gr, mut gi) = (0.0, 0.0);
            for idx in 0..n_sub {
                let n = idx as i64 - (n_sub / 2) as i64;
                let freq = wf.carrier_hz + n as f64 * wf.spacing_hz;
                let ph = -2.0 * std::f64::consts::PI * freq * tau
                    + 2.0 * std::f64::consts::PI * n as f64 * l as f64 / n_sub as f64;
                gr += ph.cos();
                gi += ph.sin();
            }
            *slot = *slot + a.mul_const(gr * scale, gi * scale);
        }
    }
    out
}

/// Geometry-only tap kernels g_i[l] for a set of path delays; the CIR
/// is then h[l] = sum_i a_i g_i[l]. Precompute once per position since
/// delays never change during calibration.
pub fn path_kernels(taus: &[f64], wf: &WaveformConfig) -> Vec<Vec<(f64, f64)>> {
    let n_sub = wf.subcarriers;
    let scale = 1.0 / (n_sub as f64).sqrt();
    taus.iter()
        .map(|tau| {
            (0..n_sub)
                .map(|l| {
                    let (mut gr, mut gi) = (0.0, 0.0);
                    for idx in 0..n_sub {
                        let n = idx as i64 - (n_sub / 2) as i64;
                        let freq = wf.carrier_hz + n as f64 * wf.spacing_hz;
                        let ph = -2.0 * std::f64::consts::PI * freq * tau
                            + 2.0 * std::f64::consts::PI * n as f64 * l as f64 / n_sub as f64;
                        gr += ph.cos();
                        gi += ph.sin();
                    }
                    (gr * scale, gi * scale)
                })
                .collect()
        })
        .collect()
}

/// Applies precomputed kernels to path coefficients: natural-order CIR.
pub fn cir_apply_kernels<'t>(
    tape: &'t Tape,
    coeffs: &[CVar<'t>],
    kernels: &[Vec<(f64, f64)>],
    n_sub: usize,
) -> Vec<CVar<'t>> {
    assert_eq!(coeffs.len(), kernels.len());
    let mut out: Vec<CVar<'t>> = (0..n_sub).map(|_| CVar::constant(tape, 0.0, 0.0)).collect();
    for (a, g) in coeffs.iter().zip(kernels) {
        for (l, slot) in out.iter_mut().enumerate() {
            *slot = *slot + a.mul_const(g[l].0, g[l].1);
        }
    }
    out
}
