//! Thresholded detection and evaluation metrics.
//!
//! A sample is flagged OoD when its score is strictly above the threshold;
//! a score equal to the threshold counts as InD.

use std::fmt::Write as _;

use crate::data::LabeledPoint;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::wasserstein::{check_scoring_net, score_of, CostMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub eta: f64,
    pub target_tnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    InD,
    OoD,
}

/// Smallest observed InD score `η` whose empirical TNR `|{s ≤ η}| / N`
/// reaches `target_tnr`.
pub fn select_threshold(ind_scores: &[f64], target_tnr: f64) -> Result<Threshold> {
    if ind_scores.is_empty() {
        return Err(Error::domain("cannot calibrate a threshold on no scores"));
    }
    if !(target_tnr > 0.0 && target_tnr <= 1.0) {
        return Err(Error::domain(format!(
            "target TNR {target_tnr} is outside (0, 1]"
        )));
    }
    if ind_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score"));
    }
    let mut sorted = ind_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        // Advance past ties so `i` counts every score <= sorted[i].
        let value = sorted[i];
        while i < n && sorted[i] == value {
            i += 1;
        }
        if empirical_rate(i, n) >= target_tnr {
            return Ok(Threshold {
                eta: value,
                target_tnr,
            });
        }
    }
    Ok(Threshold {
        eta: sorted[n - 1],
        target_tnr,
    })
}

/// `count / total`, the one definition of an empirical rate used everywhere.
pub fn empirical_rate(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

pub fn detect(score: f64, threshold: &Threshold) -> Decision {
    if score > threshold.eta {
        Decision::OoD
    } else {
        Decision::InD
    }
}

/// Fraction of InD scores at or below `eta`.
pub fn empirical_tnr(ind_scores: &[f64], eta: f64) -> f64 {
    empirical_rate(
        ind_scores.iter().filter(|&&s| s <= eta).count(),
        ind_scores.len(),
    )
}

/// TPR on `ood_scores` at the threshold calibrated on `ind_scores`.
pub fn tpr_at_tnr(
    ind_scores: &[f64],
    ood_scores: &[f64],
    target_tnr: f64,
) -> Result<(f64, Threshold)> {
    if ood_scores.is_empty() {
        return Err(Error::domain("no OoD scores"));
    }
    let threshold = select_threshold(ind_scores, target_tnr)?;
    let flagged = ood_scores
        .iter()
        .filter(|&&s| detect(s, &threshold) == Decision::OoD)
        .count();
    Ok((empirical_rate(flagged, ood_scores.len()), threshold))
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classification_accuracy(net: &Mlp, labeled: &[LabeledPoint]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::domain("accuracy of an empty set"));
    }
    let mut correct = 0;
    for p in labeled {
        if argmax(&net.predict(&p.x)?) == p.label {
            correct += 1;
        }
    }
    Ok(empirical_rate(correct, labeled.len()))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("mean of an empty list"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean absolute deviation from the mean.
pub fn mad(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    Ok(values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Cells per axis.
    pub resolution: usize,
}

impl Default for GridSpec {
    /// `[−1, 8]²` at 200×200.
    fn default() -> Self {
        Self {
            x_min: -1.0,
            x_max: 8.0,
            y_min: -1.0,
            y_max: 8.0,
            resolution: 200,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::domain("grid bounds must be finite with max > min"));
        }
        if self.resolution == 0 {
            return Err(Error::domain("grid resolution must be positive"));
        }
        Ok(())
    }

    /// Center of cell `(row, col)`; rows step along y, columns along x.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let n = self.resolution as f64;
        let x = self.x_min + (col as f64 + 0.5) * (self.x_max - self.x_min) / n;
        let y = self.y_min + (row as f64 + 0.5) * (self.y_max - self.y_min) / n;
        [x, y]
    }
}

/// Row-major score grid; row `i` is the `i`-th y value from the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn resolution(&self) -> usize {
        self.grid.resolution
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.resolution + col]
    }

    /// One CSV line per grid row, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.grid.resolution) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let mut values = Vec::with_capacity(grid.resolution * grid.resolution);
        let mut rows = 0;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
            if row.len() != grid.resolution {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected {} cells, found {}", grid.resolution, row.len()),
                ));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != grid.resolution {
            return Err(Error::domain(format!(
                "heatmap has {rows} rows, grid resolution is {}",
                grid.resolution
            )));
        }
        Ok(Self { grid, values })
    }

    /// ASCII PGM (`P2`). Scores map linearly from `[0, max_score]` onto
    /// `[0, 255]` and round half up; out-of-range values clamp. Rows are
    /// written top (largest y) first, the usual image orientation.
    pub fn to_pgm(&self, max_score: f64) -> String {
        let n = self.grid.resolution;
        let mut out = format!("P2\n{n} {n}\n255\n");
        for row in (0..n).rev() {
            let cells: Vec<String> = (0..n)
                .map(|col| gray_level(self.get(row, col), max_score).to_string())
                .collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

fn gray_level(score: f64, max_score: f64) -> u8 {
    if max_score.is_nan() || max_score <= 0.0 {
        return 0;
    }
    let scaled = (score / max_score * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

/// Score every cell center of `grid`.
pub fn score_heatmap(net: &Mlp, grid: &GridSpec, cost: &CostMatrix) -> Result<Heatmap> {
    if net.input_dim() != 2 {
        return Err(Error::domain(format!(
            "heatmaps need a 2D input network, got input dimension {}",
            net.input_dim()
        )));
    }
    check_scoring_net(net, cost)?;
    grid.validate()?;
    let n = grid.resolution;
    let mut values = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let p = net.predict(&grid.cell_center(row, col))?;
            values.push(score_of(&p, cost).0);
        }
    }
    Ok(Heatmap {
        grid: *grid,
        values,
    })
}

/// Fraction of cells flagged OoD at `threshold`.
pub fn rejection_region_area(heatmap: &Heatmap, threshold: &Threshold) -> f64 {
    if heatmap.values.is_empty() {
        return 0.0;
    }
    let flagged = heatmap
        .values
        .iter()
        .filter(|&&s| detect(s, threshold) == Decision::OoD)
        .count();
    empirical_rate(flagged, heatmap.values.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputHead};

    fn th(eta: f64) -> Threshold {
        Threshold {
            eta,
            target_tnr: 0.95,
        }
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(select_threshold(&scores, 0.9).unwrap().eta, 0.9);
        assert_eq!(select_threshold(&scores, 1.0).unwrap().eta, 1.0);
        let flat = vec![0.3; 7];
        for t in [0.1, 0.5, 1.0] {
            let eta = select_threshold(&flat, t).unwrap().eta;
            assert_eq!(eta, 0.3);
            assert_eq!(empirical_tnr(&flat, eta), 1.0);
        }
        assert!(select_threshold(&[], 0.9).is_err());
        assert!(select_threshold(&scores, 0.0).is_err());
        assert!(select_threshold(&scores, 1.5).is_err());
    }

    #[test]
    fn threshold_ignores_input_order() {
        let scores = [0.5, 0.1, 0.9, 0.3, 0.7];
        assert_eq!(select_threshold(&scores, 0.6).unwrap().eta, 0.5);
    }

    #[test]
    fn detect_examples() {
        assert_eq!(detect(0.4, &th(0.4)), Decision::InD);
        assert_eq!(detect(0.4 + 1e-9, &th(0.4)), Decision::OoD);
        assert_eq!(detect(0.0, &th(0.0)), Decision::InD);
    }

    #[test]
    fn tpr_examples() {
        let (tpr, t) = tpr_at_tnr(&[0.1, 0.2], &[0.5, 0.6], 1.0).unwrap();
        assert_eq!((tpr, t.eta), (1.0, 0.2));
        let (tpr, t) = tpr_at_tnr(&[0.5, 0.5], &[0.5, 0.5], 1.0).unwrap();
        assert_eq!((tpr, t.eta), (0.0, 0.5));
        for target in [0.5, 0.9, 0.99, 1.0] {
            let (tpr, _) = tpr_at_tnr(&[0.0, 0.1, 0.2], &[0.3, 0.6], target).unwrap();
            assert_eq!(tpr, 1.0);
        }
        assert!(tpr_at_tnr(&[0.1], &[], 0.9).is_err());
        assert!(tpr_at_tnr(&[], &[0.1], 0.9).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let confident = Mlp::from_parts(
            vec![1, 2],
            vec![vec![0.0, 0.0]],
            vec![vec![-20.0, 20.0]],
            Activation::Relu,
            OutputHead::Softmax,
        )
        .unwrap();
        let one = [LabeledPoint {
            x: vec![0.0],
            label: 1,
        }];
        assert_eq!(classification_accuracy(&confident, &one).unwrap(), 1.0);

        let uniform = Mlp::zeros(&[1, 3], Activation::Relu, OutputHead::Softmax).unwrap();
        let pts: Vec<_> = [0, 0, 1, 2, 2]
            .iter()
            .map(|&label| LabeledPoint {
                x: vec![1.0],
                label,
            })
            .collect();
        assert_eq!(classification_accuracy(&uniform, &pts).unwrap(), 0.4);
        assert!(classification_accuracy(&uniform, &[]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn mad_examples() {
        assert!((mad(&[1.0, 2.0, 3.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mad(&[5.0]).unwrap(), 0.0);
        assert_eq!(mad(&[0.25; 4]).unwrap(), 0.0);
        assert!(mad(&[]).is_err());
    }

    #[test]
    fn heatmap_of_uniform_net() {
        let net = Mlp::zeros(&[2, 8, 3], Activation::Relu, OutputHead::Softmax).unwrap();
        let cost = CostMatrix::binary(3).unwrap();
        let grid = GridSpec {
            resolution: 10,
            ..GridSpec::default()
        };
        let hm = score_heatmap(&net, &grid, &cost).unwrap();
        assert_eq!(hm.values.len(), 100);
        assert!(hm.values.iter().all(|&v| (v - 2.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn heatmap_single_cell_is_grid_center() {
        let grid = GridSpec {
            resolution: 1,
            ..GridSpec::default()
        };
        assert_eq!(grid.cell_center(0, 0), [3.5, 3.5]);
        // Row index follows y, column index follows x.
        let g = GridSpec {
            x_min: 0.0,
            x_max: 2.0,
            y_min: 10.0,
            y_max: 14.0,
            resolution: 2,
        };
        assert_eq!(g.cell_center(1, 0), [0.5, 13.0]);
    }

    #[test]
    fn heatmap_bounds_random_net() {
        let mut rng = crate::rng::Rng::new(2);
        let net =
            Mlp::glorot(&[2, 16, 3], Activation::Relu, OutputHead::Softmax, &mut rng).unwrap();
        let cost = CostMatrix::binary(3).unwrap();
        let grid = GridSpec {
            resolution: 30,
            ..GridSpec::default()
        };
        let a = score_heatmap(&net, &grid, &cost).unwrap();
        assert!(a
            .values
            .iter()
            .all(|&v| (0.0..=2.0 / 3.0 + 1e-15).contains(&v)));
        assert_eq!(a, score_heatmap(&net, &grid, &cost).unwrap());
    }

    #[test]
    fn heatmap_rejects_non_2d_nets() {
        let net = Mlp::zeros(&[3, 3], Activation::Relu, OutputHead::Softmax).unwrap();
        let cost = CostMatrix::binary(3).unwrap();
        assert!(matches!(
            score_heatmap(&net, &GridSpec::default(), &cost),
            Err(Error::Domain(_))
        ));
        let bad = GridSpec {
            x_max: -2.0,
            ..GridSpec::default()
        };
        let net2 = Mlp::zeros(&[2, 3], Activation::Relu, OutputHead::Softmax).unwrap();
        assert!(score_heatmap(&net2, &bad, &cost).is_err());
    }

    #[test]
    fn rejection_area_examples() {
        let grid = GridSpec {
            resolution: 2,
            ..GridSpec::default()
        };
        let hm = Heatmap {
            grid,
            values: vec![0.1, 0.9, 0.9, 0.9],
        };
        assert_eq!(rejection_region_area(&hm, &th(0.5)), 0.75);
        let low = Heatmap {
            grid,
            values: vec![0.2; 4],
        };
        assert_eq!(rejection_region_area(&low, &th(0.5)), 0.0);
        let high = Heatmap {
            grid,
            values: vec![0.6; 4],
        };
        assert_eq!(rejection_region_area(&high, &th(0.5)), 1.0);
    }

    #[test]
    fn pgm_export() {
        let grid = GridSpec {
            resolution: 2,
            ..GridSpec::default()
        };
        let max = 2.0 / 3.0;
        let hm = Heatmap {
            grid,
            values: vec![0.0, max, max / 2.0, 1.0],
        };
        // Bottom row (row 0) is written last; 127.5 rounds up to 128; 1.0 clamps.
        assert_eq!(hm.to_pgm(max), "P2\n2 2\n255\n128 255\n0 255\n");
    }

    #[test]
    fn heatmap_csv_round_trip() {
        let grid = GridSpec {
            resolution: 2,
            ..GridSpec::default()
        };
        let hm = Heatmap {
            grid,
            values: vec![0.1, 0.2, 1.0 / 3.0, 0.0],
        };
        let back = Heatmap::from_csv(&hm.to_csv(), grid).unwrap();
        assert_eq!(back, hm);
        let other = GridSpec {
            resolution: 3,
            ..grid
        };
        assert!(Heatmap::from_csv(&hm.to_csv(), other).is_err());
    }
}
