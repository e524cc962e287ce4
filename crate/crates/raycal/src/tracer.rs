//! Geometric path enumeration: line of sight, specular chains found by
//! shooting-and-bouncing rays refined with the image method, and
//! first-order diffuse scattering points. Paths carry geometry only, so
//! they are traced once and reused across all training iterations.

use crate::geom::{
    fibonacci_direction, random_rotation, rotate, Ray, Scene, Vec3, SPEED_OF_LIGHT,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Specular,
    Diffuse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub kind: InteractionKind,
    pub point: Vec3,
    pub triangle_id: usize,
    /// Oriented so that cos(theta_i) = -k_in . normal > 0.
    pub normal: Vec3,
    pub k_in: Vec3,
    pub k_out: Vec3,
    /// Area element, diffuse interactions only.
    pub da: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropagationPath {
    pub tx: Vec3,
    pub rx: Vec3,
    pub interactions: Vec<InteractionRecord>,
    pub segment_lengths: Vec<f64>,
    pub total_length: f64,
}

impl PropagationPath {
    /// Builds the path from its interaction points, filling directions,
    /// oriented normals and segment lengths.
    fn assemble(
        tx: Vec3,
        rx: Vec3,
        mut interactions: Vec<InteractionRecord>,
    ) -> PropagationPath {
        let mut points = vec![tx];
        points.extend(interactions.iter().map(|i| i.point));
        points.push(rx);
        let segment_lengths: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .collect();
        for (j, rec) in interactions.iter_mut().enumerate() {
            rec.k_in = (points[j + 1] - points[j]).normalized();
            rec.k_out = (points[j + 2] - points[j + 1]).normalized();
            if rec.k_in.dot(rec.normal) > 0.0 {
                rec.normal = -rec.normal;
            }
        }
        let total_length = segment_lengths.iter().sum();
        PropagationPath {
            tx,
            rx,
            interactions,
            segment_lengths,
            total_length,
        }
    }

    pub fn delay(&self) -> f64 {
        self.total_length / SPEED_OF_LIGHT
    }

    /// Unit direction of departure at the transmitter.
    pub fn departure_dir(&self) -> Vec3 {
        let first = self
            .interactions
            .first()
            .map(|i| i.point)
            .unwrap_or(self.rx);
        (first - self.tx).normalized()
    }

    /// Unit propagation direction of the final segment (into the receiver).
    pub fn arrival_dir(&self) -> Vec3 {
        let last = self
            .interactions
            .last()
            .map(|i| i.point)
            .unwrap_or(self.tx);
        (self.rx - last).normalized()
    }

    pub fn is_diffuse(&self) -> bool {
        self.interactions
            .iter()
            .any(|i| i.kind == InteractionKind::Diffuse)
    }

    /// Ordered triangle ids of the specular chain (empty for LOS).
    pub fn specular_sequence(&self) -> Vec<usize> {
        self.interactions
            .iter()
            .filter(|i| i.kind == InteractionKind::Specular)
            .map(|i| i.triangle_id)
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Maximum specular chain length K.
    pub max_order: usize,
    /// SBR launch count; ignored in exhaustive mode.
    pub sbr_rays: usize,
    /// First-order diffuse surface sample count.
    pub diffuse_samples: usize,
    pub seed: u64,
    /// Enumerate all ordered triangle sequences instead of SBR
    /// discovery; the correctness oracle for small scenes.
    #[serde(default)]
    pub exhaustive: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_order: 3,
            sbr_rays: 20_000,
            diffuse_samples: 64,
            seed: 0,
            exhaustive: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<PropagationPath>,
    pub config: TraceConfig,
}

/// Zero-interaction path iff tx -> rx is unoccluded.
pub fn trace_los(scene: &Scene, tx: Vec3, rx: Vec3) -> Option<PropagationPath> {
    assert!((rx - tx).norm() > 0.0, "tx == rx");
    if scene.occluded(tx, rx, &[]) {
        None
    } else {
        Some(PropagationPath::assemble(tx, rx, Vec::new()))
    }
}

/// Candidate specular chains discovered by shooting-and-bouncing rays on
/// a seed-jittered Fibonacci lattice; every prefix of every bounce
/// sequence is recorded.
pub fn sbr_candidates(
    scene: &Scene,
    tx: Vec3,
    max_order: usize,
    ray_count: usize,
    seed: u64,
) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    if ray_count == 0 || max_order == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = random_rotation(&mut rng);
    for i in 0..ray_count {
        let mut dir = rotate(&rot, fibonacci_direction(i, ray_count));
        let mut origin = tx;
        let mut seq = Vec::with_capacity(max_order);
        for _ in 0..max_order {
            let Some(hit) = scene.intersect(&Ray::new(origin, dir)) else {
                break;
            };
            seq.push(hit.triangle_id);
            out.insert(seq.clone());
            let mut n = scene.triangles[hit.triangle_id].normal;
            if dir.dot(n) > 0.0 {
                n = -n;
            }
            dir = dir - n * (2.0 * dir.dot(n));
            origin = hit.point;
        }
    }
    out
}

/// All ordered triangle sequences up to `max_order` without immediate
/// repetition. Exhaustive oracle for small scenes.
pub fn exhaustive_candidates(scene: &Scene, max_order: usize) -> BTreeSet<Vec<usize>> {
    let n = scene.triangles.len();
    let mut out = BTreeSet::new();
    let mut stack: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while let Some(seq) = stack.pop() {
        if seq.len() < max_order {
            for i in 0..n {
                if i != *seq.last().unwrap() {
                    let mut next = seq.clone();
                    next.push(i);
                    stack.push(next);
                }
            }
        }
        out.insert(seq);
    }
    out
}

/// Image-method correction of a candidate chain into an exact specular
/// path, or None when the chain is geometrically invalid.
pub fn refine_specular(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    sequence: &[usize],
) -> Option<PropagationPath> {
    let k = sequence.len();
    assert!(k >= 1);
    // forward mirroring of the transmitter
    let mut images = Vec::with_capacity(k + 1);
    images.push(tx);
    for &tri in sequence {
        let prev = *images.last().unwrap();
        images.push(scene.mirror(prev, tri));
    }
    // back-walk from the receiver
    let mut points = vec![Vec3::ZERO; k];
    let mut after = rx;
    for j in (0..k).rev() {
        let tri = &scene.triangles[sequence[j]];
        let plane_point = scene.vertices[tri.vertex_ids[0]];
        let n = tri.normal;
        let img = images[j + 1]; // tx mirrored through planes 0..=j
        let seg = img - after;
        let denom = seg.dot(n);
        if denom.abs() < 1e-14 {
            return None;
        }
        let t = (plane_point - after).dot(n) / denom;
        if !(1e-12..=1.0 - 1e-12).contains(&t) {
            return None;
        }
        let p = after + seg * t;
        if !inside_triangle(scene, sequence[j], p) {
            return None;
        }
        points[j] = p;
        after = p;
    }
    // visibility of every segment, reflectors ignored at their own bounce
    let mut stations: Vec<(Vec3, Vec<usize>)> = Vec::with_capacity(k + 2);
    stations.push((tx, vec![]));
    for (j, &tri) in sequence.iter().enumerate() {
        stations.push((points[j], vec![tri]));
    }
    stations.push((rx, vec![]));
    for w in stations.windows(2) {
        let (a, ia) = &w[0];
        let (b, ib) = &w[1];
        if (*b - *a).norm() < 1e-9 {
            return None;
        }
        let ignore: Vec<usize> = ia.iter().chain(ib.iter()).copied().collect();
        if scene.occluded(*a, *b, &ignore) {
            return None;
        }
    }
    let interactions = sequence
        .iter()
        .zip(&points)
        .map(|(&tri, &p)| InteractionRecord {
            kind: InteractionKind::Specular,
            point: p,
            triangle_id: tri,
            normal: scene.triangles[tri].normal,
            k_in: Vec3::ZERO,
            k_out: Vec3::ZERO,
            da: None,
        })
        .collect();
    Some(PropagationPath::assemble(tx, rx, interactions))
}

fn inside_triangle(scene: &Scene, id: usize, p: Vec3) -> bool {
    let [a, b, c] = scene.triangle_vertices(id);
    let n = scene.triangles[id].normal;
    let area2 = scene.triangles[id].area * 2.0;
    let u = (c - b).cross(p - b).dot(n) / area2;
    let v = (a - c).cross(p - c).dot(n) / area2;
    let w = 1.0 - u - v;
    let eps = -1e-12;
    u >= eps && v >= eps && w >= eps
}

/// First-order diffuse paths by next-event estimation over stratified
/// surface samples; a sample contributes iff it faces both endpoints
/// and both segments are unoccluded.
pub fn trace_diffuse(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    sample_count: usize,
    seed: u64,
) -> Vec<PropagationPath> {
    if sample_count == 0 || scene.triangles.is_empty() {
        return Vec::new();
    }
    let samples = scene
        .sample_surface(sample_count, seed)
        .expect("non-empty scene");
    let mut out = Vec::new();
    for s in samples {
        let to_tx = tx - s.point;
        let to_rx = rx - s.point;
        let mut n = s.normal;
        if to_tx.dot(n) < 0.0 {
            n = -n;
        }
        if to_tx.dot(n) <= 1e-12 || to_rx.dot(n) <= 1e-12 {
            continue;
        }
        if scene.occluded(tx, s.point, &[s.triangle_id])
            || scene.occluded(s.point, rx, &[s.triangle_id])
        {
            continue;
        }
        let rec = InteractionRecord {
            kind: InteractionKind::Diffuse,
            point: s.point,
            triangle_id: s.triangle_id,
            normal: n,
            k_in: Vec3::ZERO,
            k_out: Vec3::ZERO,
            da: Some(s.da),
        };
        out.push(PropagationPath::assemble(tx, rx, vec![rec]));
    }
    out
}

/// Union of LOS, refined specular chains and first-order diffuse paths.
/// Deterministic for a fixed config and seed.
pub fn trace_all(scene: &Scene, tx: Vec3, rx: Vec3, config: &TraceConfig) -> PathSet {
    let mut paths = Vec::new();
    if let Some(los) = trace_los(scene, tx, rx) {
        paths.push(los);
    }
    if config.max_order >= 1 {
        let candidates = if config.exhaustive {
            exhaustive_candidates(scene, config.max_order)
        } else {
            sbr_candidates(scene, tx, config.max_order, config.sbr_rays, config.seed)
        };
        for seq in &candidates {
            if let Some(path) = refine_specular(scene, tx, rx, seq) {
                paths.push(path);
            }
        }
    }
    paths.extend(trace_diffuse(scene, tx, rx, config.diffuse_samples, config.seed));
    PathSet {
        paths,
        config: config.clone(),
    }
}

/// Versioned on-disk cache of traced paths keyed by record id.
#[derive(Serialize, Deserialize)]
pub struct PathCache {
    pub version: u32,
    pub entries: Vec<PathCacheEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct PathCacheEntry {
    pub id: u64,
    pub tx: Vec3,
    pub rx: Vec3,
    pub paths: PathSet,
}

pub const PATH_CACHE_VERSION: u32 = 1;

impl PathCache {
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("cache serialization"))
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<PathCache> {
        let text = std::fs::read_to_string(path)?;
        let cache: PathCache = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if cache.version != PATH_CACHE_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported path cache version {}", cache.version),
            ));
        }
        Ok(cache)
    }
}
