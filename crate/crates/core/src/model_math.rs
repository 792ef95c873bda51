//! Classifier-side reference formulas: softmax class probability, cosine
//! similarity of embeddings, and the grid detection loss.
//!
//! None of this runs a network. The functions exist so that detector
//! outputs carried in a stream can be interpreted (logits to a sleep
//! probability, embeddings to a similarity) and so the loss is available
//! as a checked reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("logit vector is empty")]
    EmptyLogits,
    #[error("class index {index} out of bounds for {len} logits")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("grid shape mismatch: {0}")]
    Shape(String),
}

/// Numerically stable softmax over all logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, MathError> {
    if logits.is_empty() {
        return Err(MathError::EmptyLogits);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(MathError::NonFinite);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `exp(z[index]) / sum_i exp(z[i])`, evaluated after subtracting the max logit.
pub fn softmax_probability(logits: &[f64], index: usize) -> Result<f64, MathError> {
    if logits.is_empty() {
        return Err(MathError::EmptyLogits);
    }
    if index >= logits.len() {
        return Err(MathError::IndexOutOfBounds {
            index,
            len: logits.len(),
        });
    }
    Ok(softmax(logits)?[index])
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MathError> {
    if a.len() != b.len() {
        return Err(MathError::LengthMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MathError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// One predictor slot of one grid cell, prediction next to ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSlot {
    pub pred_x: f64,
    pub pred_y: f64,
    pub pred_confidence: f64,
    pub true_x: f64,
    pub true_y: f64,
    pub true_confidence: f64,
    /// Whether this slot is responsible for an object.
    pub has_object: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub boxes: Vec<BoxSlot>,
    pub pred_class: Vec<f64>,
    pub true_class: Vec<f64>,
}

impl GridCell {
    /// A cell carries an object when any of its slots does.
    pub fn has_object(&self) -> bool {
        self.boxes.iter().any(|b| b.has_object)
    }
}

/// Predictions and targets over an `S x S` grid with `B` slots per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    /// Row-major, `grid_size * grid_size` cells.
    pub cells: Vec<GridCell>,
}

impl GridPrediction {
    pub fn validate(&self) -> Result<(), MathError> {
        if self.grid_size == 0 || self.boxes_per_cell == 0 {
            return Err(MathError::Shape("grid size and boxes per cell must be >= 1".into()));
        }
        let expected = self.grid_size * self.grid_size;
        if self.cells.len() != expected {
            return Err(MathError::Shape(format!(
                "expected {expected} cells, got {}",
                self.cells.len()
            )));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.boxes.len() != self.boxes_per_cell {
                return Err(MathError::Shape(format!(
                    "cell {i} has {} boxes, expected {}",
                    cell.boxes.len(),
                    self.boxes_per_cell
                )));
            }
            if cell.pred_class.len() != cell.true_class.len() {
                return Err(MathError::Shape(format!(
                    "cell {i} class distributions differ in length ({} vs {})",
                    cell.pred_class.len(),
                    cell.true_class.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
        }
    }
}

/// Three-term grid loss: coordinate error on object slots, confidence error
/// on empty slots, class-distribution error on object cells.
///
/// There is no width/height term and no object-confidence term. Class
/// targets are arbitrary distributions, not necessarily one-hot.
pub fn yolo_detection_loss(pred: &GridPrediction, w: &LossWeights) -> Result<f64, MathError> {
    pred.validate()?;
    if !(w.lambda_coord >= 0.0 && w.lambda_noobj >= 0.0) {
        return Err(MathError::Shape("loss weights must be non-negative".into()));
    }
    let mut coord = 0.0;
    let mut noobj = 0.0;
    let mut class = 0.0;
    for cell in &pred.cells {
        for slot in &cell.boxes {
            if slot.has_object {
                coord += (slot.true_x - slot.pred_x).powi(2) + (slot.true_y - slot.pred_y).powi(2);
            } else {
                noobj += (slot.true_confidence - slot.pred_confidence).powi(2);
            }
        }
        if cell.has_object() {
            class += cell
                .true_class
                .iter()
                .zip(&cell.pred_class)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>();
        }
    }
    let total = w.lambda_coord * coord + w.lambda_noobj * noobj + class;
    if !total.is_finite() {
        return Err(MathError::NonFinite);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_slot(x: f64, y: f64, c: f64, obj: bool) -> BoxSlot {
        BoxSlot {
            pred_x: x,
            pred_y: y,
            pred_confidence: c,
            true_x: x,
            true_y: y,
            true_confidence: c,
            has_object: obj,
        }
    }

    fn single_cell(slot: BoxSlot, pred_class: Vec<f64>, true_class: Vec<f64>) -> GridPrediction {
        GridPrediction {
            grid_size: 1,
            boxes_per_cell: 1,
            cells: vec![GridCell {
                boxes: vec![slot],
                pred_class,
                true_class,
            }],
        }
    }

    #[test]
    fn softmax_examples() {
        for i in 0..3 {
            assert!((softmax_probability(&[0.0, 0.0, 0.0], i).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
        // e^3 / (e + e^2 + e^3) = 1 / (e^-2 + e^-1 + 1)
        let oracle = 1.0 / ((-2.0f64).exp() + (-1.0f64).exp() + 1.0);
        let p = softmax_probability(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.665241).abs() < 1e-6);
        let base = softmax_probability(&[4.0, 5.5, 7.0], 1).unwrap();
        for c in [-1000.0, -3.0, 0.0, 250.0, 1000.0] {
            let shifted = softmax_probability(&[c, c + 1.5, c + 3.0], 1).unwrap();
            assert!((shifted - base).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_errors() {
        assert_eq!(softmax_probability(&[], 0), Err(MathError::EmptyLogits));
        assert!(matches!(
            softmax_probability(&[1.0], 1),
            Err(MathError::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn softmax_does_not_overflow() {
        let p = softmax_probability(&[1000.0, 1001.0], 1).unwrap();
        assert!(p.is_finite() && p > 0.5);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / sqrt(14 * 77)
        let oracle = 32.0 / (1078.0f64).sqrt();
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - oracle).abs() < 1e-15);
        assert!((c - 0.974632).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(MathError::ZeroNorm));
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(MathError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn loss_examples() {
        let perfect = single_cell(exact_slot(0.4, 0.6, 1.0, true), vec![0.2, 0.8], vec![0.2, 0.8]);
        assert_eq!(yolo_detection_loss(&perfect, &LossWeights::default()).unwrap(), 0.0);

        let mut off = perfect.clone();
        off.cells[0].boxes[0].pred_x = 0.4 - 0.5;
        let w = LossWeights { lambda_coord: 5.0, lambda_noobj: 0.5 };
        assert!((yolo_detection_loss(&off, &w).unwrap() - 1.25).abs() < 1e-12);
        let w2 = LossWeights { lambda_coord: 10.0, ..w };
        assert!((yolo_detection_loss(&off, &w2).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn loss_noobj_and_class_terms() {
        // empty slot: only the confidence term applies, class term is skipped
        let mut empty = single_cell(exact_slot(0.0, 0.0, 0.0, false), vec![1.0, 0.0], vec![0.0, 1.0]);
        empty.cells[0].boxes[0].pred_confidence = 0.4;
        empty.cells[0].boxes[0].pred_x = 9.0;
        let w = LossWeights::default();
        assert!((yolo_detection_loss(&empty, &w).unwrap() - 0.5 * 0.16).abs() < 1e-12);

        let cls = single_cell(exact_slot(0.0, 0.0, 1.0, true), vec![0.7, 0.3], vec![1.0, 0.0]);
        assert!((yolo_detection_loss(&cls, &w).unwrap() - (0.09 + 0.09)).abs() < 1e-12);
    }

    #[test]
    fn loss_shape_errors() {
        let mut g = single_cell(exact_slot(0.0, 0.0, 0.0, true), vec![1.0], vec![1.0, 0.0]);
        assert!(matches!(yolo_detection_loss(&g, &LossWeights::default()), Err(MathError::Shape(_))));
        g.cells[0].pred_class.push(0.0);
        g.grid_size = 2;
        assert!(matches!(yolo_detection_loss(&g, &LossWeights::default()), Err(MathError::Shape(_))));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-50.0..50.0f64, 2..12)) {
            let total: f64 = (0..z.len()).map(|i| softmax_probability(&z, i).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_bounded_and_scale_invariant(
            ab in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
            )),
            alpha in 0.01..100.0f64,
            beta in 0.01..100.0f64,
        ) {
            let (a, b) = ab;
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let s = cosine_similarity(&a, &b).unwrap();
            prop_assert!(s.abs() <= 1.0 + 1e-12);
            let sa: Vec<f64> = a.iter().map(|v| v * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * beta).collect();
            prop_assert!((cosine_similarity(&sa, &sb).unwrap() - s).abs() < 1e-12);
        }

        #[test]
        fn loss_monotone_along_interpolation(
            dx in -2.0..2.0f64, dy in -2.0..2.0f64, dc in -1.0..1.0f64, dp in -1.0..1.0f64,
        ) {
            let w = LossWeights::default();
            let truth = |obj: bool| exact_slot(0.5, 0.5, 0.3, obj);
            let mut prev = f64::INFINITY;
            for k in 0..=20 {
                let t = 1.0 - k as f64 / 20.0;
                let mut g = GridPrediction {
                    grid_size: 1,
                    boxes_per_cell: 2,
                    cells: vec![GridCell {
                        boxes: vec![truth(true), truth(false)],
                        pred_class: vec![0.6 + t * dp, 0.4 - t * dp],
                        true_class: vec![0.6, 0.4],
                    }],
                };
                g.cells[0].boxes[0].pred_x += t * dx;
                g.cells[0].boxes[0].pred_y += t * dy;
                g.cells[0].boxes[1].pred_confidence += t * dc;
                let loss = yolo_detection_loss(&g, &w).unwrap();
                prop_assert!(loss >= 0.0);
                prop_assert!(loss <= prev + 1e-15);
                if t > 0.0 && (dx != 0.0 || dy != 0.0 || dc != 0.0 || dp != 0.0) {
                    prop_assert!(loss > 0.0);
                }
                prev = loss;
            }
            prop_assert_eq!(prev, 0.0);
        }
    }
}
