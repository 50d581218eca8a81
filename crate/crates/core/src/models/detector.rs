//! Single-class sign detector with a 4×4 grid head.
//!
//! Three stride-2 convolutions feed a dense head that emits, per grid
//! cell, an objectness logit and four box offsets. Box decode:
//! cx = (col + sigmoid(tx))·16, cy = (row + sigmoid(ty))·16,
//! w = sigmoid(tw)·64, h = sigmoid(th)·64.

use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::scenegen::IMAGE_SIZE;
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

use super::{BoundParams, ModelBundle, ModelKind};

/// Grid side length.
pub const GRID_S: usize = 4;
/// Pixels per grid cell.
pub const CELL: f32 = (IMAGE_SIZE / GRID_S) as f32;
/// Values per cell: objectness + 4 box offsets.
pub const CELL_VALUES: usize = 5;

/// A scored box detection in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box2,
    pub score: f32,
}

/// Raw grid-head output: S×S cells of (objectness logit, tx, ty, tw, th).
#[derive(Debug, Clone)]
pub struct GridPrediction {
    pub s: usize,
    pub logits: Tensor,
}

impl GridPrediction {
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.s + col) * CELL_VALUES;
        &self.logits.data()[base..base + CELL_VALUES]
    }

    pub fn objectness_prob(&self, row: usize, col: usize) -> f32 {
        sigmoid(self.cell(row, col)[0])
    }

    /// Highest objectness probability over all cells; the black-box
    /// "sign present" score.
    pub fn max_objectness(&self) -> f32 {
        let mut best = 0.0f32;
        for r in 0..self.s {
            for c in 0..self.s {
                best = best.max(self.objectness_prob(r, c));
            }
        }
        best
    }

    /// Decodes one cell to a pixel-space detection, clamped into bounds.
    pub fn decode_cell(&self, row: usize, col: usize) -> Detection {
        let v = self.cell(row, col);
        let score = sigmoid(v[0]);
        let cx = (col as f32 + sigmoid(v[1])) * CELL;
        let cy = (row as f32 + sigmoid(v[2])) * CELL;
        let w = sigmoid(v[3]) * IMAGE_SIZE as f32;
        let h = sigmoid(v[4]) * IMAGE_SIZE as f32;
        let side = IMAGE_SIZE as f32;
        let (x0, y0, x1, y1) = Box2::new(cx, cy, w, h).corners();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(side).max(x0 + 1e-3), y1.min(side).max(y0 + 1e-3));
        Detection {
            bbox: Box2::from_corners(x0, y0, x1, y1),
            score,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared conv trunk (64×64×3 -> 8×8×24), used by detector and regressor.
/// The pad before conv3 sizes the trunk so that each 16-px image cell
/// owns a disjoint 2×2 trunk window.
pub(crate) fn conv_trunk_spatial(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    let c1 = tape.conv2d(image, bound.get("conv1.w"), 2)?;
    let c1 = tape.bias_channels(c1, bound.get("conv1.b"))?;
    let c1 = tape.relu(c1);
    let c2 = tape.conv2d(c1, bound.get("conv2.w"), 2)?;
    let c2 = tape.bias_channels(c2, bound.get("conv2.b"))?;
    let c2 = tape.relu(c2);
    let c2 = tape.pad_replicate(c2, 1)?;
    let c3 = tape.conv2d(c2, bound.get("conv3.w"), 2)?;
    let c3 = tape.bias_channels(c3, bound.get("conv3.b"))?;
    Ok(tape.relu(c3))
}

/// Trunk flattened to a feature vector.
pub(crate) fn conv_trunk(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    let c3 = conv_trunk_spatial(tape, bound, image)?;
    let n = tape.shape(c3).iter().product::<usize>();
    tape.reshape(c3, &[n])
}

fn check_image_shape(image_shape: &[usize]) -> Result<()> {
    if image_shape != [IMAGE_SIZE, IMAGE_SIZE, 3] {
        return Err(ArwError::dimension(format!(
            "expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {image_shape:?}"
        )));
    }
    Ok(())
}

/// Tape-level forward pass to the raw grid logits (length S·S·5).
pub fn detector_logits(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    check_image_shape(&tape.shape(image))?;
    let feat = conv_trunk_spatial(tape, bound, image)?;
    let grid = tape.conv2d(feat, bound.get("head.w"), 2)?;
    let grid = tape.bias_channels(grid, bound.get("head.b"))?;
    let n = tape.shape(grid).iter().product::<usize>();
    tape.reshape(grid, &[n])
}

/// Plain forward pass: image in [0,1] to a [`GridPrediction`].
pub fn detector_forward(model: &ModelBundle, image: &Tensor) -> Result<GridPrediction> {
    if model.kind != ModelKind::SignDetector {
        return Err(ArwError::contract(format!(
            "detector_forward on a {} bundle",
            model.kind.as_str()
        )));
    }
    check_image_shape(image.shape())?;
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let img = tape.leaf(image);
    let logits = detector_logits(&tape, &bound, img)?;
    Ok(GridPrediction {
        s: GRID_S,
        logits: tape.value(logits),
    })
}

/// Grid-head training loss: mean objectness BCE over all cells, an extra
/// BCE term on the positive cell, and decoded-box squared error for the
/// cell containing the ground-truth center.
pub fn detector_loss(
    tape: &Tape,
    bound: &BoundParams,
    image: Val,
    present: bool,
    gt_box: Option<&Box2>,
) -> Result<Val> {
    let logits = detector_logits(tape, bound, image)?;
    let obj_idx: Vec<usize> = (0..GRID_S * GRID_S).map(|k| k * CELL_VALUES).collect();
    let obj_logits = tape.gather(logits, obj_idx)?;

    let mut target = vec![0.0f32; GRID_S * GRID_S];
    let positive = match (present, gt_box) {
        (true, Some(b)) => {
            let col = ((b.cx / CELL) as usize).min(GRID_S - 1);
            let row = ((b.cy / CELL) as usize).min(GRID_S - 1);
            target[row * GRID_S + col] = 1.0;
            Some((row, col, *b))
        }
        (true, None) => {
            return Err(ArwError::contract("positive scene without a gt box"));
        }
        _ => None,
    };
    let target_val = tape.leaf(&Tensor::from_vec(&[GRID_S * GRID_S], target)?);
    let mut loss = tape.bce_logits(obj_logits, target_val)?;

    if let Some((row, col, b)) = positive {
        // emphasize the one positive cell against 15 negatives
        let pos_logit = tape.gather(logits, vec![(row * GRID_S + col) * CELL_VALUES])?;
        let one = tape.leaf(&Tensor::from_vec(&[1], vec![1.0])?);
        let pos_bce = tape.bce_logits(pos_logit, one)?;
        loss = tape.add(loss, pos_bce)?;

        let base = (row * GRID_S + col) * CELL_VALUES;
        let coords = tape.gather(logits, vec![base + 1, base + 2, base + 3, base + 4])?;
        let sig = tape.sigmoid(coords);
        let side = IMAGE_SIZE as f32;
        // decoded box normalized by image side
        let scale = vec![CELL / side, CELL / side, 1.0, 1.0];
        let offset = vec![col as f32 * CELL / side, row as f32 * CELL / side, 0.0, 0.0];
        let decoded = tape.affine(sig, scale, offset)?;
        let target_box = tape.leaf(&Tensor::from_vec(
            &[4],
            vec![b.cx / side, b.cy / side, b.w / side, b.h / side],
        )?);
        let box_loss = tape.mse(decoded, target_box)?;
        let box_term = tape.scale(box_loss, 6.0);
        loss = tape.add(loss, box_term)?;

        // size targets are cell-independent, so the 8-neighborhood can be
        // supervised on w/h too; cuts per-cell sample starvation
        let mut wh_idx = Vec::new();
        let mut wh_target = Vec::new();
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (row as isize + dr, col as isize + dc);
                if nr < 0 || nc < 0 || nr >= GRID_S as isize || nc >= GRID_S as isize {
                    continue;
                }
                let nb = (nr as usize * GRID_S + nc as usize) * CELL_VALUES;
                wh_idx.push(nb + 3);
                wh_idx.push(nb + 4);
                wh_target.push(b.w / side);
                wh_target.push(b.h / side);
            }
        }
        if !wh_idx.is_empty() {
            let n = wh_idx.len();
            let nb_coords = tape.gather(logits, wh_idx)?;
            let nb_sig = tape.sigmoid(nb_coords);
            let nb_target = tape.leaf(&Tensor::from_vec(&[n], wh_target)?);
            let nb_loss = tape.mse(nb_sig, nb_target)?;
            let nb_term = tape.scale(nb_loss, 1.5);
            loss = tape.add(loss, nb_term)?;
        }
    }
    Ok(loss)
}

/// Thresholds objectness, sorts by descending score and applies greedy
/// non-maximum suppression: no surviving pair overlaps more than
/// `nms_iou`.
pub fn decode_detections(
    pred: &GridPrediction,
    conf_threshold: f32,
    nms_iou: f32,
) -> Vec<Detection> {
    let mut dets: Vec<Detection> = Vec::new();
    for r in 0..pred.s {
        for c in 0..pred.s {
            let d = pred.decode_cell(r, c);
            if d.score >= conf_threshold {
                dets.push(d);
            }
        }
    }
    // stable order: score desc, then cell order for exact determinism
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut keep: Vec<Detection> = Vec::new();
    'candidate: for d in dets {
        for k in &keep {
            if crate::evalkit::iou(&d.bbox, &k.bbox).unwrap_or(0.0) > nms_iou {
                continue 'candidate;
            }
        }
        keep.push(d);
    }
    keep
}
