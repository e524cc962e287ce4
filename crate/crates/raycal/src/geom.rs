//! Triangle-mesh scenes: intersection, mirroring, surface sampling and
//! the axis-aligned bounding box used for coordinate normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

/// Geometric epsilons, stated once.
pub const OCCLUSION_EPS: f64 = 1e-5;
pub const UNIT_NORM_EPS: f64 = 1e-9;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = v3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        v3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize zero vector");
        self * (1.0 / n)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_EPS
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Any unit vector orthogonal to self (self must be unit).
    pub fn any_orthonormal(self) -> Vec3 {
        let pick = if self.x.abs() < 0.9 {
            v3(1.0, 0.0, 0.0)
        } else {
            v3(0.0, 1.0, 0.0)
        };
        self.cross(pick).normalized()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        v3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        v3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        v3(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        v3(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Debug)]
pub struct Triangle {
    pub vertex_ids: [usize; 3],
    pub material_id: usize,
    pub normal: Vec3,
    pub area: f64,
}

/// How the material of an object is modeled during calibration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase", tag = "model")]
#[serde(deny_unknown_fields)]
pub enum MaterialSpec {
    Fixed {
        name: String,
        eps_r: f64,
        sigma: f64,
        scattering: f64,
        xpd: f64,
    },
    Embedding {
        name: String,
    },
    Neural {
        name: String,
    },
}

impl MaterialSpec {
    pub fn name(&self) -> &str {
        match self {
            MaterialSpec::Fixed { name, .. }
            | MaterialSpec::Embedding { name }
            | MaterialSpec::Neural { name } => name,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<TriangleFile>,
    materials: Vec<MaterialSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TriangleFile {
    v: [usize; 3],
    material: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("scene not found: {0}")]
    NotFound(String),
    #[error("invalid scene file: {0}")]
    Parse(String),
    #[error("triangle {0} references unknown material '{1}'")]
    UnknownMaterial(usize, String),
    #[error("triangle {0} is degenerate (zero area)")]
    Degenerate(usize),
    #[error("scene is empty")]
    Empty,
}

/// Immutable triangle-mesh scene. Safe for concurrent read-only use.
#[derive(Clone, Debug)]
pub struct Scene {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<Triangle>,
    pub materials: Vec<MaterialSpec>,
    aabb: Option<(Vec3, f64)>,
}

impl Scene {
    pub fn new(
        vertices: Vec<Vec3>,
        tris: Vec<([usize; 3], usize)>,
        materials: Vec<MaterialSpec>,
    ) -> Result<Scene, SceneError> {
        let mut triangles = Vec::with_capacity(tris.len());
        for (i, (vids, mat)) in tris.into_iter().enumerate() {
            if mat >= materials.len() {
                return Err(SceneError::UnknownMaterial(i, format!("#{mat}")));
            }
            let [a, b, c] = vids.map(|v| vertices[v]);
            let n = (b - a).cross(c - a);
            let area = 0.5 * n.norm();
            if area <= 0.0 {
                return Err(SceneError::Degenerate(i));
            }
            triangles.push(Triangle {
                vertex_ids: vids,
                material_id: mat,
                normal: n.normalized(),
                area,
            });
        }
        let aabb = compute_aabb_of(&vertices);
        Ok(Scene {
            vertices,
            triangles,
            materials,
            aabb,
        })
    }

    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| SceneError::NotFound(path.display().to_string()))?;
        Scene::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let file: SceneFile =
            serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        let mat_index = |name: &str| file.materials.iter().position(|m| m.name() == name);
        let mut tris = Vec::with_capacity(file.triangles.len());
        for (i, t) in file.triangles.iter().enumerate() {
            let mat = mat_index(&t.material)
                .ok_or_else(|| SceneError::UnknownMaterial(i, t.material.clone()))?;
            tris.push((t.v, mat));
        }
        let vertices = file.vertices.iter().map(|&[x, y, z]| v3(x, y, z)).collect();
        Scene::new(vertices, tris, file.materials)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct TriangleOut<'a> {
            v: [usize; 3],
            material: &'a str,
        }
        #[derive(Serialize)]
        struct SceneOut<'a> {
            vertices: Vec<[f64; 3]>,
            triangles: Vec<TriangleOut<'a>>,
            materials: &'a [MaterialSpec],
        }
        let out = SceneOut {
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: self
                .triangles
                .iter()
                .map(|t| TriangleOut {
                    v: t.vertex_ids,
                    material: self.materials[t.material_id].name(),
                })
                .collect(),
            materials: &self.materials,
        };
        serde_json::to_string_pretty(&out).expect("scene serialization")
    }

    pub fn triangle_vertices(&self, id: usize) -> [Vec3; 3] {
        self.triangles[id].vertex_ids.map(|v| self.vertices[v])
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| t.area).sum()
    }

    /// Center and longest edge length of the bounding box; the single
    /// scalar keeps the unit-cube map isotropic.
    pub fn aabb(&self) -> Result<(Vec3, f64), SceneError> {
        self.aabb.ok_or(SceneError::Empty)
    }

    /// Nearest hit with t in (t_min, t_max); ties break to the lowest
    /// triangle id. Linear scan over all triangles is the reference.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (id, _) in self.triangles.iter().enumerate() {
            if let Some((t, u, v)) = ray_triangle(ray, self.triangle_vertices(id)) {
                if t > ray.t_min && t < ray.t_max {
                    let better = match &best {
                        None => true,
                        Some(h) => t < h.t,
                    };
                    if better {
                        best = Some(Hit {
                            triangle_id: id,
                            t,
                            point: ray.origin + ray.direction * t,
                            bary: (1.0 - u - v, u, v),
                        });
                    }
                }
            }
        }
        best
    }

    /// True iff any non-ignored triangle blocks the open segment (a, b),
    /// with an epsilon margin at both ends.
    pub fn occluded(&self, a: Vec3, b: Vec3, ignore: &[usize]) -> bool {
        let d = b - a;
        let len = d.norm();
        assert!(len > 0.0, "occlusion test on a degenerate segment");
        let ray = Ray {
            origin: a,
            direction: d * (1.0 / len),
            t_min: OCCLUSION_EPS,
            t_max: len - OCCLUSION_EPS,
        };
        for (id, _) in self.triangles.iter().enumerate() {
            if ignore.contains(&id) {
                continue;
            }
            if let Some((t, _, _)) = ray_triangle(&ray, self.triangle_vertices(id)) {
                if t > ray.t_min && t < ray.t_max {
                    return true;
                }
            }
        }
        false
    }

    /// Reflects a point across the supporting plane of a triangle.
    pub fn mirror(&self, point: Vec3, triangle_id: usize) -> Vec3 {
        let tri = &self.triangles[triangle_id];
        let a = self.vertices[tri.vertex_ids[0]];
        mirror_across_plane(point, a, tri.normal)
    }

    /// Stratified area-weighted surface sampling. Each sample carries
    /// dA = total area / count. Deterministic for a fixed seed.
    pub fn sample_surface(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<Vec<SurfaceSample>, SceneError> {
        if self.triangles.is_empty() {
            return Err(SceneError::Empty);
        }
        assert!(count >= 1);
        let total = self.total_area();
        let da = total / count as f64;
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in &self.triangles {
            acc += t.area;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let u = (i as f64 + rng.gen::<f64>()) / count as f64 * total;
            let id = cdf.partition_point(|&c| c < u).min(self.triangles.len() - 1);
            let [a, b, c] = self.triangle_vertices(id);
            // uniform barycentric point
            let (mut r1, r2) = (rng.gen::<f64>(), rng.gen::<f64>());
            r1 = r1.sqrt();
            let point = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
            out.push(SurfaceSample {
                point,
                normal: self.triangles[id].normal,
                triangle_id: id,
                da,
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub normal: Vec3,
    pub triangle_id: usize,
    pub da: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Ray {
        Ray {
            origin,
            direction,
            t_min: OCCLUSION_EPS,
            t_max: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub triangle_id: usize,
    pub t: f64,
    pub point: Vec3,
    pub bary: (f64, f64, f64),
}

/// Moeller-Trumbore; returns (t, u, v) or None.
fn ray_triangle(ray: &Ray, [a, b, c]: [Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t <= 0.0 {
        return None;
    }
    Some((t, u, v))
}

pub fn mirror_across_plane(point: Vec3, plane_point: Vec3, normal: Vec3) -> Vec3 {
    let d = (point - plane_point).dot(normal);
    point - normal * (2.0 * d)
}

fn compute_aabb_of(vertices: &[Vec3]) -> Option<(Vec3, f64)> {
    if vertices.is_empty() {
        return None;
    }
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        lo = v3(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z));
        hi = v3(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z));
    }
    let center = (lo + hi) * 0.5;
    let ext = hi - lo;
    Some((center, ext.x.max(ext.y).max(ext.z)))
}

/// Unit direction on the Fibonacci sphere lattice, i of n.
pub fn fibonacci_direction(i: usize, n: usize) -> Vec3 {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
    v3(r * phi.cos(), r * phi.sin(), z)
}

/// A uniformly random rotation matrix (rows), used to jitter the
/// Fibonacci lattice by seed without disturbing its uniformity.
pub fn random_rotation(rng: &mut impl Rng) -> [Vec3; 3] {
    // random unit quaternion
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let two_pi = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (q0, q1) = (a * (two_pi * u2).sin(), a * (two_pi * u2).cos());
    let (q2, q3) = (b * (two_pi * u3).sin(), b * (two_pi * u3).cos());
    let (w, x, y, z) = (q0, q1, q2, q3);
    [
        v3(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ),
        v3(
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ),
        v3(
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ),
    ]
}

pub fn rotate(m: &[Vec3; 3], v: Vec3) -> Vec3 {
    v3(m[0].dot(v), m[1].dot(v), m[2].dot(v))
}
