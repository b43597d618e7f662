use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "class map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(ClassMap { height, width, labels })
    }

    pub fn check_range(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(&l) => Err(Error::LabelOutOfRange { label: l as u32, num_classes }),
            None => Ok(()),
        }
    }
}

/// Pixel tallies: rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::InvalidShape(format!(
                "{num_classes} classes need {} counts",
                num_classes * num_classes
            )));
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.num_classes;
        (0..n).all(|g| (0..n).all(|p| g == p || self.get(g, p) == 0))
    }

    /// Adds one image pair. Nothing is recorded if validation fails.
    pub fn accumulate(&mut self, gt: &ClassMap, pred: &ClassMap) -> Result<()> {
        if (gt.height, gt.width) != (pred.height, pred.width) {
            return Err(Error::SpatialMismatch { a_h: gt.height, a_w: gt.width, b_h: pred.height, b_w: pred.width });
        }
        gt.check_range(self.num_classes)?;
        pred.check_range(self.num_classes)?;
        let n = self.num_classes;
        for (&g, &p) in gt.labels.iter().zip(&pred.labels) {
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    /// Combines per-worker matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ChannelMismatch { expected: self.num_classes, actual: other.num_classes });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMatrix);
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class appears in neither
    /// ground truth nor prediction.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let n = self.num_classes;
        let tp = self.get(c, c);
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let fp: u64 = (0..n).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
        let union = tp + fp + fn_;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean IoU over classes with a nonzero union.
    pub fn mean_iou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let ious: Vec<f64> = (0..self.num_classes).filter_map(|c| self.class_iou(c)).collect();
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// `class,iou` rows followed by `accuracy` and `miou` summary rows.
    /// Classes with an empty union print `excluded`.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut out = String::from("class,iou\n");
        for c in 0..self.num_classes {
            match self.class_iou(c) {
                Some(v) => writeln!(out, "{c},{v:.6}"),
                None => writeln!(out, "{c},excluded"),
            }
            .expect("write to String");
        }
        writeln!(out, "accuracy,{:.6}", self.pixel_accuracy()?).expect("write to String");
        writeln!(out, "miou,{:.6}", self.mean_iou()?).expect("write to String");
        Ok(out)
    }
}
