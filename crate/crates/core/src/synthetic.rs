//! Deterministic labeled indoor scenes for tests, benches and demos.
//!
//! A 6 × 5 × 3 room: floor, four walls with a door, a cabinet, and two
//! foreground objects (a chair and a table). Points are sampled uniformly
//! on surfaces with a small uniform jitter.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pointcloud::{Point3, PointCloud};

pub const WALL: u32 = 0;
pub const FLOOR: u32 = 1;
pub const DOOR: u32 = 2;
pub const FURNITURE: u32 = 3;
pub const CHAIR: u32 = 4;
pub const TABLE: u32 = 5;

/// Names for the synthetic label ids, in id order.
pub const LABEL_NAMES: [&str; 6] = ["wall", "floor", "door", "furniture", "chair", "table"];

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub points: usize,
    /// Share of points on the chair and table.
    pub fg_fraction: f64,
    /// Uniform jitter amplitude added to every coordinate.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            points: 5000,
            fg_fraction: 0.3,
            jitter: 0.005,
            seed: 0,
        }
    }
}

/// Axis-aligned box surface.
#[derive(Clone, Copy)]
struct Cuboid {
    lo: Point3,
    hi: Point3,
}

impl Cuboid {
    fn area(&self) -> f64 {
        let d = [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]];
        2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let d = [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]];
        let faces = [d[1] * d[2], d[1] * d[2], d[0] * d[2], d[0] * d[2], d[0] * d[1], d[0] * d[1]];
        let total: f64 = faces.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        while face < 5 && pick >= faces[face] {
            pick -= faces[face];
            face += 1;
        }
        let mut p: Point3 = std::array::from_fn(|a| {
            if self.hi[a] > self.lo[a] {
                rng.gen_range(self.lo[a]..self.hi[a])
            } else {
                self.lo[a]
            }
        });
        let axis = face / 2;
        p[axis] = if face % 2 == 0 { self.lo[axis] } else { self.hi[axis] };
        p
    }
}

/// Flat rectangle: one axis pinned.
fn rect(lo: Point3, hi: Point3) -> Cuboid {
    Cuboid { lo, hi }
}

struct Part {
    label: u32,
    shapes: Vec<Cuboid>,
}

fn parts() -> (Vec<Part>, Vec<Part>) {
    let background = vec![
        Part {
            label: FLOOR,
            shapes: vec![rect([0.0, 0.0, 0.0], [6.0, 5.0, 0.0])],
        },
        Part {
            label: WALL,
            shapes: vec![
                rect([0.0, 0.0, 0.0], [0.0, 5.0, 3.0]),
                rect([6.0, 0.0, 0.0], [6.0, 5.0, 3.0]),
                rect([0.0, 5.0, 0.0], [6.0, 5.0, 3.0]),
                rect([0.0, 0.0, 0.0], [2.0, 0.0, 3.0]),
                rect([3.0, 0.0, 0.0], [6.0, 0.0, 3.0]),
                rect([2.0, 0.0, 2.1], [3.0, 0.0, 3.0]),
            ],
        },
        Part {
            label: DOOR,
            shapes: vec![rect([2.0, 0.02, 0.0], [3.0, 0.02, 2.1])],
        },
        Part {
            label: FURNITURE,
            shapes: vec![Cuboid {
                lo: [4.8, 4.2, 0.0],
                hi: [5.9, 4.9, 1.8],
            }],
        },
    ];
    let foreground = vec![
        Part {
            label: CHAIR,
            shapes: vec![
                Cuboid {
                    lo: [1.2, 2.0, 0.45],
                    hi: [1.7, 2.5, 0.5],
                },
                Cuboid {
                    lo: [1.2, 2.45, 0.5],
                    hi: [1.7, 2.5, 1.0],
                },
                Cuboid {
                    lo: [1.22, 2.02, 0.0],
                    hi: [1.27, 2.07, 0.45],
                },
                Cuboid {
                    lo: [1.63, 2.02, 0.0],
                    hi: [1.68, 2.07, 0.45],
                },
            ],
        },
        Part {
            label: TABLE,
            shapes: vec![
                Cuboid {
                    lo: [2.5, 2.0, 0.72],
                    hi: [4.0, 3.0, 0.76],
                },
                Cuboid {
                    lo: [2.55, 2.05, 0.0],
                    hi: [2.6, 2.1, 0.72],
                },
                Cuboid {
                    lo: [3.9, 2.05, 0.0],
                    hi: [3.95, 2.1, 0.72],
                },
                Cuboid {
                    lo: [2.55, 2.9, 0.0],
                    hi: [2.6, 2.95, 0.72],
                },
                Cuboid {
                    lo: [3.9, 2.9, 0.0],
                    hi: [3.95, 2.95, 0.72],
                },
            ],
        },
    ];
    (background, foreground)
}

fn sample_parts(parts: &[Part], n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<(Point3, u32)>) {
    let shapes: Vec<(u32, Cuboid)> = parts
        .iter()
        .flat_map(|p| p.shapes.iter().map(move |s| (p.label, *s)))
        .collect();
    let areas: Vec<f64> = shapes.iter().map(|(_, s)| s.area().max(1e-9)).collect();
    let total: f64 = areas.iter().sum();
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut i = 0;
        while i + 1 < shapes.len() && pick >= areas[i] {
            pick -= areas[i];
            i += 1;
        }
        let (label, shape) = shapes[i];
        out.push((shape.sample(rng), label));
    }
}

/// Labeled room scene. The same parameters always give the same cloud.
pub fn room_scene(params: &SceneParams) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (bg, fg) = parts();
    let n_fg = (params.points as f64 * params.fg_fraction).round() as usize;
    let mut pts = Vec::with_capacity(params.points);
    sample_parts(&fg, n_fg, &mut rng, &mut pts);
    sample_parts(&bg, params.points - n_fg, &mut rng, &mut pts);
    // Interleave foreground and background so file order carries no hint.
    pts.shuffle(&mut rng);
    let j = params.jitter;
    let (positions, labels): (Vec<Point3>, Vec<u32>) = pts
        .into_iter()
        .map(|(mut p, l)| {
            if j > 0.0 {
                for c in p.iter_mut() {
                    *c += rng.gen_range(-j..j);
                }
            }
            (p, l)
        })
        .unzip();
    PointCloud::with_labels(positions, Some(labels)).expect("generated points are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let p = SceneParams {
            points: 2000,
            seed: 7,
            ..Default::default()
        };
        let a = room_scene(&p);
        assert_eq!(a, room_scene(&p));
        assert_eq!(a.len(), 2000);
        let fg = a.labels().unwrap().iter().filter(|&&l| l >= CHAIR).count();
        assert_eq!(fg, 600);
    }
}
