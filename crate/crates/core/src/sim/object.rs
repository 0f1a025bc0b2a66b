//! Parametric prism objects and the built-in library.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Vec3;

/// Segment a parallel gripper can pinch, in the object frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspFeature {
    pub a: [f64; 3],
    pub b: [f64; 3],
    /// Material thickness the fingers close across.
    pub thickness: f64,
    /// Preferred approach axis; grasps must come within the grasp cone of it.
    pub approach: [f64; 3],
}

impl GraspFeature {
    /// Distance from `p` (object frame) to the segment.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let a = Vec3::from(self.a);
        let b = Vec3::from(self.b);
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared().max(1e-18)).clamp(0.0, 1.0);
        (p - (a + ab * t)).norm()
    }
}

/// Convex prism resting on its footprint; the top face may be scaled about
/// the footprint centroid (tapered prisms).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectModel {
    pub id: String,
    /// Convex CCW polygon, centroid at the origin.
    pub footprint: Vec<[f64; 2]>,
    pub height: f64,
    pub mass: f64,
    pub friction: f64,
    #[serde(default = "one")]
    pub top_scale: f64,
    #[serde(default)]
    pub features: Vec<GraspFeature>,
}

fn one() -> f64 {
    1.0
}

/// Face plane `normal·x ≤ offset` in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

pub const BOTTOM_FACE: usize = 0;
pub const TOP_FACE: usize = 1;

impl ObjectModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |why: &str| Err(SimError::InvalidObject(self.id.clone(), why.to_string()));
        let n = self.footprint.len();
        if !(3..=12).contains(&n) {
            return bad("footprint needs 3 to 12 vertices");
        }
        if !(self.height > 0.0 && self.mass > 0.0 && self.friction > 0.0 && self.top_scale > 0.0) {
            return bad("height, mass, friction and top_scale must be positive");
        }
        for i in 0..n {
            let a = self.footprint[i];
            let b = self.footprint[(i + 1) % n];
            let c = self.footprint[(i + 2) % n];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if cross <= 0.0 {
                return bad("footprint must be convex and counter-clockwise");
            }
        }
        let (cx, cy) = self.footprint_centroid();
        if cx.abs() > 1e-9 || cy.abs() > 1e-9 {
            return bad("footprint centroid must be at the origin");
        }
        for f in &self.features {
            if !(f.thickness > 0.0) || Vec3::from(f.approach).norm() < 1e-9 {
                return bad("grasp feature needs positive thickness and an approach axis");
            }
        }
        Ok(())
    }

    fn footprint_centroid(&self) -> (f64, f64) {
        let n = self.footprint.len();
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.footprint[i];
            let q = self.footprint[(i + 1) % n];
            let cr = p[0] * q[1] - q[0] * p[1];
            a += cr;
            cx += (p[0] + q[0]) * cr;
            cy += (p[1] + q[1]) * cr;
        }
        a *= 0.5;
        (cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn footprint_area(&self) -> f64 {
        let n = self.footprint.len();
        (0..n)
            .map(|i| {
                let p = self.footprint[i];
                let q = self.footprint[(i + 1) % n];
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
            * 0.5
    }

    /// Bottom vertices followed by top vertices.
    pub fn vertices(&self) -> Vec<Vec3> {
        let s = self.top_scale;
        let bottom = self.footprint.iter().map(|v| Vec3::new(v[0], v[1], 0.0));
        let top = self
            .footprint
            .iter()
            .map(|v| Vec3::new(s * v[0], s * v[1], self.height));
        bottom.chain(top).collect()
    }

    /// Extent of the cross-section at height `z` along horizontal `dir`.
    pub fn support_at(&self, dir: &Vec3, z: f64) -> f64 {
        let k = 1.0 + (self.top_scale - 1.0) * (z / self.height).clamp(0.0, 1.0);
        self.footprint
            .iter()
            .map(|v| k * (v[0] * dir.x + v[1] * dir.y))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First surface point and face along a ray (object frame).
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<(Vec3, usize)> {
        super::scene::ray_hit(&self.planes(), origin, dir).map(|(t, f)| (origin + dir * t, f))
    }

    /// Face planes: bottom, top, then one side per footprint edge.
    pub fn planes(&self) -> Vec<Plane> {
        let n = self.footprint.len();
        let s = self.top_scale;
        let mut planes = vec![
            Plane {
                normal: -Vec3::z(),
                offset: 0.0,
            },
            Plane {
                normal: Vec3::z(),
                offset: self.height,
            },
        ];
        for i in 0..n {
            let a = Vec3::new(self.footprint[i][0], self.footprint[i][1], 0.0);
            let b = Vec3::new(
                self.footprint[(i + 1) % n][0],
                self.footprint[(i + 1) % n][1],
                0.0,
            );
            let up = Vec3::new((s - 1.0) * a.x, (s - 1.0) * a.y, self.height);
            let mut normal = (b - a).cross(&up).normalize();
            if normal.dot(&(a + b)) < 0.0 {
                normal = -normal;
            }
            planes.push(Plane {
                normal,
                offset: normal.dot(&a),
            });
        }
        planes
    }

    /// Height of the centre of mass above the ground (uniform density).
    pub fn com_height(&self) -> f64 {
        // cross-section area scales with (1 + (s - 1) t)^2 for t = z / h
        let k = self.top_scale - 1.0;
        let steps = 400;
        let (mut m0, mut m1) = (0.0, 0.0);
        for i in 0..steps {
            let t = (i as f64 + 0.5) / steps as f64;
            let a = (1.0 + k * t).powi(2);
            m0 += a;
            m1 += a * t;
        }
        self.height * m1 / m0
    }

    /// Mean distance from the centroid over the footprint area, used for the
    /// torsional friction limit.
    pub fn friction_radius(&self) -> f64 {
        let (xmin, xmax, ymin, ymax) = self.footprint.iter().fold(
            (f64::MAX, f64::MIN, f64::MAX, f64::MIN),
            |(a, b, c, d), v| (a.min(v[0]), b.max(v[0]), c.min(v[1]), d.max(v[1])),
        );
        let steps = 80;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..steps {
            for j in 0..steps {
                let x = xmin + (xmax - xmin) * (i as f64 + 0.5) / steps as f64;
                let y = ymin + (ymax - ymin) * (j as f64 + 0.5) / steps as f64;
                if self.footprint_contains(x, y) {
                    sum += (x * x + y * y).sqrt();
                    count += 1;
                }
            }
        }
        sum / count.max(1) as f64
    }

    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let n = self.footprint.len();
        (0..n).all(|i| {
            let a = self.footprint[i];
            let b = self.footprint[(i + 1) % n];
            (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) >= 0.0
        })
    }

    pub fn bounding_radius(&self) -> f64 {
        let c = Vec3::new(0.0, 0.0, self.height / 2.0);
        self.vertices()
            .iter()
            .map(|v| (v - c).norm())
            .fold(0.0, f64::max)
    }

    /// Largest signed plane distance; ≈ 0 on the surface, > 0 outside.
    pub fn surface_distance(&self, p: &Vec3) -> (f64, usize) {
        self.planes()
            .iter()
            .enumerate()
            .map(|(i, pl)| (pl.signed_distance(p), i))
            .fold((f64::MIN, 0), |a, b| if b.0 > a.0 { b } else { a })
    }
}

fn rect(w: f64, d: f64) -> Vec<[f64; 2]> {
    let (x, y) = (w / 2.0, d / 2.0);
    vec![[-x, -y], [x, -y], [x, y], [-x, y]]
}

fn regular(n: usize, r: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
            [r * t.cos(), r * t.sin()]
        })
        .collect()
}

/// Rim segments around the top face.
fn rim(footprint: &[[f64; 2]], scale: f64, height: f64, thickness: f64) -> Vec<GraspFeature> {
    let n = footprint.len();
    (0..n)
        .map(|i| {
            let a = footprint[i];
            let b = footprint[(i + 1) % n];
            GraspFeature {
                a: [scale * a[0], scale * a[1], height],
                b: [scale * b[0], scale * b[1], height],
                thickness,
                approach: [0.0, 0.0, -1.0],
            }
        })
        .collect()
}

/// The six built-in objects.
pub fn builtin_library() -> Vec<ObjectModel> {
    let bucket_fp = regular(8, 0.45);
    let display_fp = rect(1.2, 0.06);
    let slab_fp = rect(1.6, 0.5);
    let h_tri = 0.9;
    let wedge_fp = vec![
        [-h_tri / 3.0, -0.5],
        [2.0 * h_tri / 3.0, 0.0],
        [-h_tri / 3.0, 0.5],
    ];
    vec![
        ObjectModel {
            id: "box".into(),
            footprint: rect(1.0, 1.0),
            height: 1.0,
            mass: 1.0,
            friction: 0.6,
            top_scale: 1.0,
            features: vec![],
        },
        ObjectModel {
            id: "tall_box".into(),
            footprint: rect(0.6, 0.6),
            height: 2.0,
            mass: 3.0,
            friction: 0.8,
            top_scale: 1.0,
            features: vec![],
        },
        ObjectModel {
            id: "keyboard".into(),
            footprint: slab_fp,
            height: 0.3,
            mass: 2.0,
            friction: 0.6,
            top_scale: 1.0,
            features: vec![],
        },
        ObjectModel {
            id: "bucket".into(),
            features: rim(&bucket_fp, 1.25, 0.7, 0.03),
            footprint: bucket_fp,
            height: 0.7,
            mass: 0.5,
            friction: 0.6,
            top_scale: 1.25,
        },
        ObjectModel {
            id: "display".into(),
            features: vec![GraspFeature {
                a: [-0.6, 0.0, 0.9],
                b: [0.6, 0.0, 0.9],
                thickness: 0.06,
                approach: [0.0, 0.0, -1.0],
            }],
            footprint: display_fp,
            height: 0.9,
            mass: 1.0,
            friction: 0.5,
            top_scale: 1.0,
        },
        ObjectModel {
            id: "wedge".into(),
            footprint: wedge_fp,
            height: 0.6,
            mass: 1.0,
            friction: 0.6,
            top_scale: 1.0,
            features: vec![],
        },
    ]
}

pub fn builtin(id: &str) -> Option<ObjectModel> {
    builtin_library().into_iter().find(|o| o.id == id)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    object: Vec<ObjectModel>,
}

/// Serializes objects as a TOML scene file (`[[object]]` tables).
pub fn library_to_toml(objects: &[ObjectModel]) -> Result<String, SimError> {
    toml::to_string(&LibraryFile {
        object: objects.to_vec(),
    })
    .map_err(|e| SimError::SceneFile(e.to_string()))
}

pub fn library_from_toml(text: &str) -> Result<Vec<ObjectModel>, SimError> {
    let lib: LibraryFile = toml::from_str(text).map_err(|e| SimError::SceneFile(e.to_string()))?;
    for o in &lib.object {
        o.validate()?;
    }
    Ok(lib.object)
}
