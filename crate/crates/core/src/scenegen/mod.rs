//! Deterministic synthetic scenes.
//!
//! Two desk-scale stand-ins for real driving data: stop-sign scenes (a
//! filled octagon over clutter) for the detector, and road scenes with a
//! lead vehicle whose apparent width follows the pinhole rule w = K / d
//! for the distance regressor. Every generator is a pure function of its
//! parameters and seed.

mod disk;
mod ppm;

pub use disk::{load_dataset, write_dataset};
pub use ppm::{decode_ppm, encode_ppm};

use std::path::PathBuf;

use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Side length of every generated image, in pixels.
pub const IMAGE_SIZE: usize = 64;
/// Pinhole camera constant: apparent lead width in px = K / distance in m.
pub const CAMERA_CONSTANT: f32 = 800.0;
/// Lead widths are clamped here so very close vehicles stay in frame.
pub const MAX_LEAD_WIDTH: f32 = 56.0;
/// Valid lead distances in meters.
pub const DISTANCE_RANGE: (f32, f32) = (5.0, 80.0);

/// A stop-sign detection scene.
#[derive(Debug, Clone)]
pub struct SignScene {
    pub image: Tensor,
    /// Tight box around the sign; present iff `has_sign`.
    pub gt_box: Option<Box2>,
    pub has_sign: bool,
}

/// A road scene with a lead vehicle at a known distance.
#[derive(Debug, Clone)]
pub struct RoadScene {
    pub image: Tensor,
    pub distance_m: f32,
    pub lead_box: Box2,
    /// True when the pinhole width K/d exceeded [`MAX_LEAD_WIDTH`].
    pub width_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Ground truth attached to one dataset entry.
#[derive(Debug, Clone)]
pub enum SceneLabel {
    Sign {
        present: bool,
        bbox: Option<Box2>,
    },
    Road {
        distance_m: f32,
        bbox: Box2,
        width_clamped: bool,
    },
}

#[derive(Debug, Clone)]
pub enum ImageSource {
    Inline(Tensor),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub image: ImageSource,
    pub label: SceneLabel,
}

/// An ordered dataset: inline scenes or references to images on disk.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Materializes the image for entry `i`, reading from disk if needed.
    pub fn load_image(&self, i: usize) -> Result<Tensor> {
        match &self.entries[i].image {
            ImageSource::Inline(t) => Ok(t.clone()),
            ImageSource::File(path) => {
                let bytes = std::fs::read(path)?;
                decode_ppm(&bytes)
            }
        }
    }

    /// True when every entry is a sign label.
    pub fn is_sign_dataset(&self) -> bool {
        self.entries
            .iter()
            .all(|e| matches!(e.label, SceneLabel::Sign { .. }))
    }
}

// ── low-level painting ──────────────────────────────────────────────────

fn set_px(data: &mut [f32], x: usize, y: usize, rgb: [f32; 3]) {
    let base = (y * IMAGE_SIZE + x) * 3;
    data[base] = rgb[0];
    data[base + 1] = rgb[1];
    data[base + 2] = rgb[2];
}

/// Low-frequency background: a 4x4 random grid per channel, bilinearly
/// upsampled, with a handful of rectangle distractors on top.
fn paint_background(data: &mut [f32], rng: &mut Rng) {
    let mut grid = [[0.0f32; 3]; 16];
    for cell in grid.iter_mut() {
        for c in cell.iter_mut() {
            *c = rng.range(0.25, 0.75);
        }
    }
    for y in 0..IMAGE_SIZE {
        let v = y as f32 * 3.0 / (IMAGE_SIZE - 1) as f32;
        let (gy, fy) = (v.floor() as usize, v.fract());
        let gy1 = (gy + 1).min(3);
        for x in 0..IMAGE_SIZE {
            let u = x as f32 * 3.0 / (IMAGE_SIZE - 1) as f32;
            let (gx, fx) = (u.floor() as usize, u.fract());
            let gx1 = (gx + 1).min(3);
            let mut rgb = [0.0f32; 3];
            for c in 0..3 {
                let top = grid[gy * 4 + gx][c] * (1.0 - fx) + grid[gy * 4 + gx1][c] * fx;
                let bot = grid[gy1 * 4 + gx][c] * (1.0 - fx) + grid[gy1 * 4 + gx1][c] * fx;
                rgb[c] = top * (1.0 - fy) + bot * fy;
            }
            set_px(data, x, y, rgb);
        }
    }

    let n_rects = 1 + rng.below(3);
    for _ in 0..n_rects {
        let w = 4 + rng.below(14);
        let h = 4 + rng.below(14);
        let x0 = rng.below(IMAGE_SIZE - w);
        let y0 = rng.below(IMAGE_SIZE - h);
        // muted colors, away from stop-sign red
        let rgb = [rng.range(0.2, 0.6), rng.range(0.3, 0.7), rng.range(0.3, 0.7)];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                set_px(data, x, y, rgb);
            }
        }
    }
}

/// Regular octagon fill test. `a` is the half-extent across flats.
fn inside_octagon(dx: f32, dy: f32, a: f32) -> bool {
    let diag = a * (1.0 + (std::f32::consts::PI / 8.0).tan());
    dx.abs().max(dy.abs()) <= a && dx.abs() + dy.abs() <= diag
}

fn paint_octagon(data: &mut [f32], cx: f32, cy: f32, a: f32, fill: [f32; 3], ring: [f32; 3]) {
    let r0 = (cx - a - 1.0).floor().max(0.0) as usize;
    let r1 = (cx + a + 1.0).ceil().min(IMAGE_SIZE as f32 - 1.0) as usize;
    let c0 = (cy - a - 1.0).floor().max(0.0) as usize;
    let c1 = (cy + a + 1.0).ceil().min(IMAGE_SIZE as f32 - 1.0) as usize;
    for y in c0..=c1 {
        for x in r0..=r1 {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            if inside_octagon(dx, dy, a) {
                let rgb = if inside_octagon(dx, dy, a * 0.72) {
                    fill
                } else {
                    ring
                };
                set_px(data, x, y, rgb);
            }
        }
    }
}

/// Binary mask over the interior of a sign's octagon, shrunk by `shrink`
/// (0.8 keeps the patch strictly inside the sign face). All three
/// channels share the mask.
pub fn octagon_mask(bbox: &crate::geometry::Box2, shrink: f32) -> Tensor {
    let a = (bbox.w / 2.0) * shrink;
    let mut data = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE * 3];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let dx = x as f32 + 0.5 - bbox.cx;
            let dy = y as f32 + 0.5 - bbox.cy;
            if inside_octagon(dx, dy, a) {
                let base = (y * IMAGE_SIZE + x) * 3;
                data[base] = 1.0;
                data[base + 1] = 1.0;
                data[base + 2] = 1.0;
            }
        }
    }
    Tensor::from_vec(&[IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("valid mask")
}

fn add_pixel_noise(data: &mut [f32], rng: &mut Rng, sigma: f32) {
    for v in data.iter_mut() {
        *v = (*v + sigma * rng.normal()).clamp(0.0, 1.0);
    }
}

// ── sign scenes ─────────────────────────────────────────────────────────

fn generate_sign_scene(rng: &mut Rng, positive: bool) -> SignScene {
    let mut data = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE * 3];
    paint_background(&mut data, rng);

    // occasional non-red octagon so shape alone does not give the answer
    if !positive && rng.uniform() < 0.25 {
        let a = rng.range(6.0, 14.0);
        let m = a + 2.0;
        let cx = rng.range(m, IMAGE_SIZE as f32 - m);
        let cy = rng.range(m, IMAGE_SIZE as f32 - m);
        let g = rng.range(0.35, 0.6);
        paint_octagon(&mut data, cx, cy, a, [g, g, g], [g + 0.1, g + 0.1, g + 0.1]);
    }

    let gt_box = if positive {
        let a = rng.range(7.0, 15.0);
        let margin = a + 2.0;
        let cx = rng.range(margin, IMAGE_SIZE as f32 - margin);
        let cy = rng.range(margin, IMAGE_SIZE as f32 - margin);
        let jitter = rng.range(-0.06, 0.06);
        let fill = [
            (0.78 + jitter).clamp(0.0, 1.0),
            rng.range(0.04, 0.16),
            rng.range(0.04, 0.16),
        ];
        let ring = [0.92, 0.9, 0.88];
        paint_octagon(&mut data, cx, cy, a, fill, ring);
        Some(Box2::new(cx, cy, 2.0 * a, 2.0 * a))
    } else {
        None
    };

    add_pixel_noise(&mut data, rng, 0.015);
    SignScene {
        image: Tensor::from_vec(&[IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("valid scene"),
        gt_box,
        has_sign: positive,
    }
}

/// Generates `n` sign scenes, ~70% positive (count = round(0.7*n), half
/// away from zero), the rest negative. Scene i is positive iff
/// i < positive count; training shuffles, so order carries no signal.
pub fn generate_sign_dataset(n: usize, seed: u64) -> Result<DatasetManifest> {
    if n < 1 {
        return Err(ArwError::contract("generate_sign_dataset: n must be >= 1"));
    }
    let n_pos = (0.7 * n as f64).round() as usize;
    let root = Rng::new(seed);
    let entries = (0..n)
        .map(|i| {
            let mut rng = root.derive(i as u64);
            let scene = generate_sign_scene(&mut rng, i < n_pos);
            ManifestEntry {
                image: ImageSource::Inline(scene.image),
                label: SceneLabel::Sign {
                    present: scene.has_sign,
                    bbox: scene.gt_box,
                },
            }
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        split: Split::Train,
        seed,
    })
}

// ── road scenes ─────────────────────────────────────────────────────────

/// Lead-vehicle box for a given distance: pinhole width, clamped, with
/// ground-plane vertical placement.
pub fn lead_box_for_distance(distance_m: f32, lateral: f32) -> (Box2, bool) {
    let raw_w = (CAMERA_CONSTANT / distance_m).round();
    let clamped = raw_w > MAX_LEAD_WIDTH;
    let w = raw_w.min(MAX_LEAD_WIDTH);
    let h = (0.7 * w).round().max(2.0);
    let y_bottom = (33.0 + 160.0 / distance_m).min(IMAGE_SIZE as f32 - 1.0);
    let cy = (y_bottom - h / 2.0).max(h / 2.0 + 1.0);
    let half = w / 2.0 + 1.0;
    let cx = (32.0 + lateral).clamp(half, IMAGE_SIZE as f32 - half);
    (Box2::new(cx, cy, w, h), clamped)
}

fn paint_road_scene(rng: &mut Rng, distance_m: f32, lateral: f32, body: [f32; 3]) -> RoadScene {
    let mut data = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE * 3];
    let horizon = 30.0f32;

    // flat sky, road and shoulder colors: smooth gradients would turn
    // into spurious banding under pixel-value quantization
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let rgb = if (y as f32) < horizon {
                [0.60, 0.69, 0.82]
            } else {
                // road trapezoid toward a vanishing point at (32, horizon)
                let depth = (y as f32 - horizon) / (IMAGE_SIZE as f32 - horizon);
                let half_road = 4.0 + 28.0 * depth;
                if (x as f32 - 32.0).abs() <= half_road {
                    [0.28, 0.28, 0.29]
                } else {
                    [0.32, 0.42, 0.26]
                }
            };
            set_px(&mut data, x, y, rgb);
        }
    }

    // dashed center line
    for y in (horizon as usize + 2..IMAGE_SIZE).step_by(6) {
        for dy in 0..3.min(IMAGE_SIZE - y) {
            set_px(&mut data, 32, y + dy, [0.85, 0.85, 0.8]);
        }
    }

    let (lead_box, width_clamped) = lead_box_for_distance(distance_m, lateral);
    let (x0, y0, x1, y1) = lead_box.corners();
    let (x0, y0) = (x0.round().max(0.0) as usize, y0.round().max(0.0) as usize);
    let (x1, y1) = (
        (x1.round() as usize).min(IMAGE_SIZE),
        (y1.round() as usize).min(IMAGE_SIZE),
    );
    for y in y0..y1 {
        for x in x0..x1 {
            let fy = (y - y0) as f32 / (y1 - y0).max(1) as f32;
            let rgb = if fy < 0.3 {
                // roof / rear window band
                [0.55, 0.6, 0.68]
            } else {
                body
            };
            set_px(&mut data, x, y, rgb);
        }
    }
    // taillights
    if y1 > y0 + 2 && x1 > x0 + 3 {
        let ty = y1 - 2;
        set_px(&mut data, x0 + 1, ty, [0.9, 0.1, 0.1]);
        set_px(&mut data, x1 - 2, ty, [0.9, 0.1, 0.1]);
    }

    add_pixel_noise(&mut data, rng, 0.01);
    RoadScene {
        image: Tensor::from_vec(&[IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("valid scene"),
        distance_m,
        lead_box,
        width_clamped,
    }
}

const BODY_COLORS: [[f32; 3]; 4] = [
    [0.12, 0.12, 0.14],
    [0.45, 0.08, 0.08],
    [0.10, 0.14, 0.38],
    [0.55, 0.55, 0.58],
];

/// Generates a sequence whose lead distance interpolates d0 -> d1.
pub fn generate_road_sequence(
    frames: usize,
    d0: f32,
    d1: f32,
    seed: u64,
) -> Result<Vec<RoadScene>> {
    let (lo, hi) = DISTANCE_RANGE;
    if !(lo..=hi).contains(&d0) || !(lo..=hi).contains(&d1) {
        return Err(ArwError::contract(format!(
            "distance out of [{lo}, {hi}]: d0={d0}, d1={d1}"
        )));
    }
    if frames == 0 {
        return Err(ArwError::contract("generate_road_sequence: frames >= 1"));
    }
    let root = Rng::new(seed);
    let mut seq_rng = root.derive(0xB0D4);
    let lateral0 = seq_rng.range(-6.0, 6.0);
    let body = BODY_COLORS[seq_rng.below(BODY_COLORS.len())];

    Ok((0..frames)
        .map(|t| {
            let frac = if frames == 1 {
                0.0
            } else {
                t as f32 / (frames - 1) as f32
            };
            let d = d0 + (d1 - d0) * frac;
            let mut rng = root.derive(1 + t as u64);
            let drift = rng.range(-1.5, 1.5);
            paint_road_scene(&mut rng, d, lateral0 + drift, body)
        })
        .collect())
}

/// Convenience wrapper: `n` independent single-frame road scenes with
/// uniformly random distances, packed into a manifest for training.
pub fn generate_road_dataset(n: usize, seed: u64) -> Result<DatasetManifest> {
    if n < 1 {
        return Err(ArwError::contract("generate_road_dataset: n must be >= 1"));
    }
    let root = Rng::new(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.derive(0x0AD5_0000 + i as u64);
        let d = rng.range(DISTANCE_RANGE.0 + 0.5, DISTANCE_RANGE.1 - 0.5);
        let seq = generate_road_sequence(1, d, d, root.derive(i as u64).next_u64())?;
        let scene = seq.into_iter().next().expect("one frame");
        entries.push(ManifestEntry {
            image: ImageSource::Inline(scene.image),
            label: SceneLabel::Road {
                distance_m: scene.distance_m,
                bbox: scene.lead_box,
                width_clamped: scene.width_clamped,
            },
        });
    }
    Ok(DatasetManifest {
        entries,
        split: Split::Train,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_dataset_is_deterministic() {
        let a = generate_sign_dataset(12, 7).unwrap();
        let b = generate_sign_dataset(12, 7).unwrap();
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            let (ImageSource::Inline(ta), ImageSource::Inline(tb)) = (&ea.image, &eb.image)
            else {
                panic!("inline expected")
            };
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn sign_dataset_ratio_rounding() {
        let m = generate_sign_dataset(10, 3).unwrap();
        let positives = m
            .entries
            .iter()
            .filter(|e| matches!(e.label, SceneLabel::Sign { present: true, .. }))
            .count();
        assert_eq!(positives, 7);
        assert_eq!(m.len(), 10);
    }

    #[test]
    fn sign_boxes_inside_bounds() {
        let m = generate_sign_dataset(60, 11).unwrap();
        for e in &m.entries {
            if let SceneLabel::Sign {
                present: true,
                bbox: Some(b),
            } = &e.label
            {
                assert!(b.inside(IMAGE_SIZE as f32, IMAGE_SIZE as f32), "{b:?}");
            }
        }
    }

    #[test]
    fn sign_dataset_rejects_zero() {
        assert!(generate_sign_dataset(0, 1).is_err());
    }

    #[test]
    fn road_constant_distance_constant_width() {
        let seq = generate_road_sequence(5, 20.0, 20.0, 9).unwrap();
        for s in &seq {
            assert_eq!(s.lead_box.w, 40.0); // round(800/20)
            assert!(!s.width_clamped);
        }
    }

    #[test]
    fn road_single_frame_at_d0() {
        let seq = generate_road_sequence(1, 33.0, 70.0, 2).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].distance_m, 33.0);
    }

    #[test]
    fn road_close_width_clamps_with_flag() {
        let seq = generate_road_sequence(1, 5.0, 5.0, 4).unwrap();
        assert_eq!(seq[0].lead_box.w, MAX_LEAD_WIDTH);
        assert!(seq[0].width_clamped);
    }

    #[test]
    fn road_distance_out_of_range_errors() {
        assert!(generate_road_sequence(3, 4.0, 20.0, 1).is_err());
        assert!(generate_road_sequence(3, 20.0, 81.0, 1).is_err());
    }

    #[test]
    fn road_width_strictly_decreases_on_separated_grid() {
        // grid spaced so that rounding of K/d can never collide
        let grid = [15.0f32, 23.0, 31.0, 39.0, 47.0, 55.0, 63.0, 71.0, 80.0];
        let mut last = f32::INFINITY;
        for &d in &grid {
            let seq = generate_road_sequence(1, d, d, 42).unwrap();
            assert!(
                seq[0].lead_box.w < last,
                "width not strictly decreasing at d={d}"
            );
            last = seq[0].lead_box.w;
        }
    }

    #[test]
    fn road_scene_pixels_in_unit_range() {
        let seq = generate_road_sequence(3, 10.0, 60.0, 5).unwrap();
        for s in &seq {
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.lead_box.inside(IMAGE_SIZE as f32, IMAGE_SIZE as f32));
        }
    }
}
