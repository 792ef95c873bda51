//! Minimum-cost linear assignment and IoU-gated detection/track association.

use thiserror::Error;

use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix data has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("cost matrix entry ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
}

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite(k / cols.max(1), k % cols.max(1)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned entries, accumulated in row order.
    pub total_cost: f64,
}

/// Exact minimum-cost assignment of `min(rows, cols)` pairs.
///
/// Shortest augmenting paths with row/column potentials, `O(n^2 m)`. A wide
/// matrix is solved directly; a tall one is transposed first, so no padding
/// values ever enter the potentials. Columns are scanned in index order with
/// strict comparisons, which makes the result deterministic.
pub fn hungarian_min_cost(c: &CostMatrix) -> Assignment {
    if c.rows == 0 || c.cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    }
    let mut pairs = if c.rows <= c.cols {
        solve_wide(c)
    } else {
        let mut p: Vec<(usize, usize)> = solve_wide(&c.transposed())
            .into_iter()
            .map(|(r, col)| (col, r))
            .collect();
        p.sort_unstable();
        p
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, col)| c.get(r, col)).sum();
    Assignment { pairs, total_cost }
}

/// Requires `rows <= cols`. Returns one pair per row.
fn solve_wide(c: &CostMatrix) -> Vec<(usize, usize)> {
    let n = c.rows;
    let m = c.cols;
    // 1-based; index 0 is the virtual start column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub detection: usize,
    pub track: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationResult {
    /// Sorted by detection index.
    pub matches: Vec<Match>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Associates detections with predicted track boxes.
///
/// A predicted box of `None` (diverged state) overlaps nothing. The global
/// assignment minimizes `-IoU`; pairs below `threshold` are dropped
/// afterwards and both sides go back to the unmatched lists.
pub fn associate_predicted(
    detections: &[BoundingBox],
    predicted: &[Option<BoundingBox>],
    threshold: f64,
) -> AssociationResult {
    let overlaps: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| {
            predicted
                .iter()
                .map(|t| t.as_ref().map_or(0.0, |t| iou(d, t)))
                .collect()
        })
        .collect();
    let cost = CostMatrix::from_fn(detections.len(), predicted.len(), |r, c| -overlaps[r][c])
        .expect("IoU values are finite");
    let solution = hungarian_min_cost(&cost);

    let mut det_used = vec![false; detections.len()];
    let mut trk_used = vec![false; predicted.len()];
    let mut matches = Vec::new();
    for (d, t) in solution.pairs {
        let value = overlaps[d][t];
        if value >= threshold && value > 0.0 {
            det_used[d] = true;
            trk_used[t] = true;
            matches.push(Match {
                detection: d,
                track: t,
                iou: value,
            });
        }
    }
    AssociationResult {
        matches,
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_tracks: (0..predicted.len()).filter(|&j| !trk_used[j]).collect(),
    }
}

pub fn associate(detections: &[BoundingBox], tracks: &[BoundingBox], threshold: f64) -> AssociationResult {
    let predicted: Vec<Option<BoundingBox>> = tracks.iter().copied().map(Some).collect();
    associate_predicted(detections, &predicted, threshold)
}
