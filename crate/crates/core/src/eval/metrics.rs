use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, EvalError};
use crate::data::VoxelGrid;
use crate::scalar::Scalar;

pub const METRICS_CSV_HEADER: &str = "id,iou,precision,recall,accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

/// `num / den`, or the empty-case convention: 1 when the other count is also
/// zero (nothing to get wrong), else 0.
fn ratio(num: usize, den: usize, other: usize) -> f64 {
    if den == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Voxels with `prediction >= threshold` count as filled.
///
/// Empty denominators: precision with no predicted voxels is 1 if the target
/// is empty too, else 0; recall symmetrically; IoU of two empty grids is 1.
pub fn recon_metrics<T: Scalar>(
    target: &VoxelGrid<T>,
    prediction: &VoxelGrid<T>,
    threshold: f64,
) -> Result<ReconMetrics, EvalError> {
    if target.resolution() != prediction.resolution() {
        return Err(EvalError::Shape(format!(
            "target resolution {} vs prediction {}",
            target.resolution(),
            prediction.resolution()
        )));
    }
    target.ensure_binary()?;
    let th = T::of(threshold);
    let mut c = Confusion::default();
    for (&t, &p) in target.values().iter().zip(prediction.values()) {
        match (t > T::zero(), p >= th) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let total = c.tp + c.fp + c.fn_ + c.tn;
    Ok(ReconMetrics {
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, 0),
        precision: ratio(c.tp, c.tp + c.fp, c.tp + c.fn_),
        recall: ratio(c.tp, c.tp + c.fn_, c.tp + c.fp),
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        threshold,
        confusion: c,
    })
}

/// One row per sample plus a final `mean` row.
pub fn write_metrics_csv(rows: &[(String, ReconMetrics)], path: &Path) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "{METRICS_CSV_HEADER}").map_err(io_err(path))?;
    let mut sum = [0.0; 4];
    for (id, m) in rows {
        writeln!(f, "{id},{},{},{},{}", m.iou, m.precision, m.recall, m.accuracy).map_err(io_err(path))?;
        for (s, v) in sum.iter_mut().zip([m.iou, m.precision, m.recall, m.accuracy]) {
            *s += v;
        }
    }
    let n = rows.len().max(1) as f64;
    writeln!(f, "mean,{},{},{},{}", sum[0] / n, sum[1] / n, sum[2] / n, sum[3] / n).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_grids_score_one() {
        let g = VoxelGrid::<f64>::from_occupancy(2, &[true, false, true, true, false, false, true, false]).unwrap();
        let m = recon_metrics(&g, &g, 0.5).unwrap();
        assert_eq!((m.iou, m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn confusion_oracle_case() {
        let mut t = vec![false; 64];
        let mut p = vec![0.0; 64];
        for i in 0..8 {
            t[i] = true;
        }
        for i in 0..4 {
            p[i] = 0.9;
        }
        for i in 20..24 {
            p[i] = 0.6;
        }
        let t = VoxelGrid::<f64>::from_occupancy(4, &t).unwrap();
        let p = VoxelGrid::new(4, p).unwrap();
        let m = recon_metrics(&t, &p, 0.5).unwrap();
        assert!((m.iou - 4.0 / 12.0).abs() < 1e-15);
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
        assert_eq!(m.accuracy, 56.0 / 64.0);
    }

    #[test]
    fn empty_conventions() {
        let e = VoxelGrid::<f64>::empty(3);
        let m = recon_metrics(&e, &e, 0.5).unwrap();
        assert_eq!((m.iou, m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        let full = VoxelGrid::<f64>::filled(3, 1.0);
        let m = recon_metrics(&full, &e, 0.5).unwrap();
        assert_eq!((m.iou, m.precision, m.recall, m.accuracy), (0.0, 0.0, 0.0, 0.0));
        let m = recon_metrics(&e, &full, 0.5).unwrap();
        assert_eq!((m.iou, m.precision, m.recall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_is_inclusive_and_shapes_checked() {
        let t = VoxelGrid::<f64>::filled(1, 1.0);
        let m = recon_metrics(&t, &VoxelGrid::filled(1, 0.5), 0.5).unwrap();
        assert_eq!(m.confusion.tp, 1);
        assert!(recon_metrics(&t, &VoxelGrid::filled(2, 0.5), 0.5).is_err());
        assert!(recon_metrics(&VoxelGrid::filled(1, 0.3), &t, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn metric_consistency(occ in proptest::collection::vec(any::<bool>(), 27), p in proptest::collection::vec(0.0f64..1.0, 27)) {
            let t = VoxelGrid::<f64>::from_occupancy(3, &occ).unwrap();
            let m = recon_metrics(&t, &VoxelGrid::new(3, p).unwrap(), 0.5).unwrap();
            let c = m.confusion;
            prop_assert_eq!(m.accuracy * 27.0, (c.tp + c.tn) as f64);
            for v in [m.iou, m.precision, m.recall, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if c.tp + c.fn_ > 0 {
                prop_assert!(m.iou <= m.precision.min(m.recall) + 1e-15);
            }
        }
    }
}
