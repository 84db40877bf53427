//! Seeded isotropic Gaussian-cluster datasets.
//!
//! Labels are zero-based class indices in memory. The CSV format writes them
//! one-based (`1..=K`) and uses `-1` for OoD rows.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Point = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterRole {
    /// In-distribution cluster with a zero-based class label.
    InD(usize),
    OoD,
}

/// `N(mean, std² I)`, plus how many train/test points to draw from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusterSpec {
    pub mean: Vec<f64>,
    pub std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub role: ClusterRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Point,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ind_train: Vec<LabeledPoint>,
    pub ind_test: Vec<LabeledPoint>,
    pub ood_train: Vec<Point>,
    pub ood_test: Vec<Point>,
    pub dim: usize,
    pub num_classes: usize,
}

/// Cluster layout of the built-in 2D benchmark: three InD classes around
/// `[4,3]`, `[3,5]`, `[3,1]` and one OoD cluster at `[1.5,6]`, all with
/// standard deviation 0.3 and 1000 train / 1000 test points each.
pub fn simulation_clusters() -> Vec<GaussianClusterSpec> {
    let cluster = |mean: [f64; 2], role| GaussianClusterSpec {
        mean: mean.to_vec(),
        std: 0.3,
        n_train: 1000,
        n_test: 1000,
        role,
    };
    vec![
        cluster([4.0, 3.0], ClusterRole::InD(0)),
        cluster([3.0, 5.0], ClusterRole::InD(1)),
        cluster([3.0, 1.0], ClusterRole::InD(2)),
        cluster([1.5, 6.0], ClusterRole::OoD),
    ]
}

/// Draw `count` points, each coordinate `mean_i + std · z` with `z ~ N(0, 1)`.
pub fn sample_gaussian_cluster(
    spec: &GaussianClusterSpec,
    count: usize,
    rng: &mut Rng,
) -> Vec<Point> {
    (0..count)
        .map(|_| {
            spec.mean
                .iter()
                .map(|m| m + spec.std * rng.normal())
                .collect()
        })
        .collect()
}

/// Build a dataset from clusters. Train splits are drawn for every cluster in
/// order, then test splits, so adding test points never perturbs training data.
pub fn make_dataset(clusters: &[GaussianClusterSpec], rng: &mut Rng) -> Result<Dataset> {
    let dim = clusters
        .first()
        .map(|c| c.mean.len())
        .ok_or_else(|| Error::domain("at least one cluster is required"))?;
    if dim == 0 {
        return Err(Error::shape("cluster means must be non-empty"));
    }
    let mut num_classes = 0;
    for c in clusters {
        if c.mean.len() != dim {
            return Err(Error::shape("all cluster means must share one dimension"));
        }
        if !(c.std.is_finite() && c.std >= 0.0) {
            return Err(Error::domain(format!("invalid cluster std {}", c.std)));
        }
        if let ClusterRole::InD(label) = c.role {
            num_classes = num_classes.max(label + 1);
        }
    }
    if num_classes < 2 {
        return Err(Error::domain("need at least two InD classes"));
    }

    let mut data = Dataset {
        ind_train: Vec::new(),
        ind_test: Vec::new(),
        ood_train: Vec::new(),
        ood_test: Vec::new(),
        dim,
        num_classes,
    };
    for train in [true, false] {
        for c in clusters {
            let count = if train { c.n_train } else { c.n_test };
            let points = sample_gaussian_cluster(c, count, rng);
            match (c.role, train) {
                (ClusterRole::InD(label), true) => data
                    .ind_train
                    .extend(points.into_iter().map(|x| LabeledPoint { x, label })),
                (ClusterRole::InD(label), false) => data
                    .ind_test
                    .extend(points.into_iter().map(|x| LabeledPoint { x, label })),
                (ClusterRole::OoD, true) => data.ood_train.extend(points),
                (ClusterRole::OoD, false) => data.ood_test.extend(points),
            }
        }
    }
    Ok(data)
}

/// The built-in 2D benchmark (`K = 3`, `d = 2`).
pub fn make_simulation_dataset(rng: &mut Rng) -> Dataset {
    make_dataset(&simulation_clusters(), rng).expect("built-in clusters are valid")
}

/// Keep a uniform without-replacement subsample of `n_keep` OoD training
/// points (Fisher–Yates prefix). The OoD test split is left untouched.
pub fn subsample_ood(data: &Dataset, n_keep: usize, rng: &mut Rng) -> Result<Dataset> {
    let pool = data.ood_train.len();
    if n_keep > pool {
        return Err(Error::domain(format!(
            "cannot keep {n_keep} OoD training points from a pool of {pool}"
        )));
    }
    let mut order: Vec<usize> = (0..pool).collect();
    for i in 0..n_keep {
        let j = i + rng.index(pool - i);
        order.swap(i, j);
    }
    let mut out = data.clone();
    out.ood_train = order[..n_keep]
        .iter()
        .map(|&i| data.ood_train[i].clone())
        .collect();
    Ok(out)
}

/// `count` independent draws from `N(0, I_n)`.
pub fn sample_noise(n: usize, count: usize, rng: &mut Rng) -> Vec<Point> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect()
}

const SPLITS: [&str; 4] = ["ind_train", "ind_test", "ood_train", "ood_test"];

impl Dataset {
    pub fn check_invariants(&self) -> Result<()> {
        let labeled = self.ind_train.iter().chain(&self.ind_test);
        for p in labeled {
            if p.label >= self.num_classes {
                return Err(Error::domain(format!("label {} out of range", p.label)));
            }
            if p.x.len() != self.dim {
                return Err(Error::shape("point dimension mismatch"));
            }
        }
        if self
            .ood_train
            .iter()
            .chain(&self.ood_test)
            .any(|x| x.len() != self.dim)
        {
            return Err(Error::shape("point dimension mismatch"));
        }
        Ok(())
    }

    /// CSV with header `x1,..,xd,label,split`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        let _ = writeln!(out, "{},label,split", cols.join(","));
        let mut row = |x: &[f64], label: i64, split: &str| {
            for v in x {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{label},{split}");
        };
        for p in &self.ind_train {
            row(&p.x, p.label as i64 + 1, SPLITS[0]);
        }
        for p in &self.ind_test {
            row(&p.x, p.label as i64 + 1, SPLITS[1]);
        }
        for x in &self.ood_train {
            row(x, -1, SPLITS[2]);
        }
        for x in &self.ood_test {
            row(x, -1, SPLITS[3]);
        }
        out
    }

    /// Parse the CSV written by [`Dataset::to_csv`]. `K` is the largest label seen.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty dataset file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let dim = cols.len().saturating_sub(2);
        let expected: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        if dim == 0
            || cols[..dim] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..]
            || cols[dim] != "label"
            || cols[dim + 1] != "split"
        {
            return Err(Error::parse(1, "expected header x1,..,xd,label,split"));
        }

        let mut data = Dataset {
            ind_train: Vec::new(),
            ind_test: Vec::new(),
            ood_train: Vec::new(),
            ood_test: Vec::new(),
            dim,
            num_classes: 0,
        };
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(Error::parse(lineno, format!("expected {} fields", dim + 2)));
            }
            let x: std::result::Result<Vec<f64>, _> =
                fields[..dim].iter().map(|f| f.parse::<f64>()).collect();
            let x = x.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let label: i64 = fields[dim]
                .parse()
                .map_err(|e| Error::parse(lineno, format!("label: {e}")))?;
            let split = fields[dim + 1];
            let is_ood = split.starts_with("ood");
            if is_ood != (label == -1) || (!is_ood && label < 1) {
                return Err(Error::parse(
                    lineno,
                    format!("label {label} is invalid for split {split}"),
                ));
            }
            let labeled = || {
                let label = label as usize - 1;
                LabeledPoint {
                    x: x.clone(),
                    label,
                }
            };
            match split {
                "ind_train" => data.ind_train.push(labeled()),
                "ind_test" => data.ind_test.push(labeled()),
                "ood_train" => data.ood_train.push(x),
                "ood_test" => data.ood_test.push(x),
                other => return Err(Error::parse(lineno, format!("unknown split {other:?}"))),
            }
            if !is_ood {
                data.num_classes = data.num_classes.max(label as usize);
            }
        }
        if data.num_classes < 2 {
            return Err(Error::domain("dataset needs at least two InD classes"));
        }
        data.check_invariants()?;
        Ok(data)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(points: &[Point], coord: usize) -> (f64, f64) {
        let n = points.len() as f64;
        let mean = points.iter().map(|p| p[coord]).sum::<f64>() / n;
        let var = points
            .iter()
            .map(|p| (p[coord] - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    #[test]
    fn zero_std_repeats_mean() {
        let spec = GaussianClusterSpec {
            mean: vec![1.5, -2.0, 0.25],
            std: 0.0,
            n_train: 0,
            n_test: 0,
            role: ClusterRole::OoD,
        };
        let pts = sample_gaussian_cluster(&spec, 50, &mut Rng::new(1));
        assert!(pts.iter().all(|p| p == &spec.mean));
    }

    #[test]
    fn cluster_moments() {
        let spec = GaussianClusterSpec {
            mean: vec![4.0, 3.0],
            std: 0.3,
            n_train: 0,
            n_test: 0,
            role: ClusterRole::InD(0),
        };
        let pts = sample_gaussian_cluster(&spec, 10_000, &mut Rng::new(2023));
        for (coord, target) in [(0, 4.0), (1, 3.0)] {
            let (mean, std) = moments(&pts, coord);
            assert!((mean - target).abs() < 0.02, "mean {mean}");
            assert!((std - 0.3).abs() < 0.02, "std {std}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = &simulation_clusters()[0];
        let a = sample_gaussian_cluster(spec, 100, &mut Rng::new(9));
        let b = sample_gaussian_cluster(spec, 100, &mut Rng::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn simulation_layout() {
        let clusters = simulation_clusters();
        let means: Vec<&[f64]> = clusters.iter().map(|c| c.mean.as_slice()).collect();
        assert_eq!(
            means,
            vec![&[4.0, 3.0][..], &[3.0, 5.0], &[3.0, 1.0], &[1.5, 6.0]]
        );
        assert!(clusters.iter().all(|c| c.std == 0.3));

        let data = make_simulation_dataset(&mut Rng::new(0));
        assert_eq!((data.num_classes, data.dim), (3, 2));
        assert_eq!(data.ind_train.len(), 3000);
        assert_eq!(data.ind_test.len(), 3000);
        assert_eq!(data.ood_train.len(), 1000);
        assert_eq!(data.ood_test.len(), 1000);
        for split in [&data.ind_train, &data.ind_test] {
            for k in 0..3 {
                assert_eq!(split.iter().filter(|p| p.label == k).count(), 1000);
            }
        }
        data.check_invariants().unwrap();
    }

    #[test]
    fn subsample_examples() {
        let data = make_simulation_dataset(&mut Rng::new(4));
        let mut rng = Rng::new(5);

        let all = subsample_ood(&data, 1000, &mut rng).unwrap();
        let mut a = all.ood_train.clone();
        let mut b = data.ood_train.clone();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);

        let two = subsample_ood(&data, 2, &mut rng).unwrap();
        assert_eq!(two.ood_train.len(), 2);
        assert_eq!(two.ood_test, data.ood_test);
        assert_eq!(two.ind_train, data.ind_train);
        assert!(two.ood_train.iter().all(|p| data.ood_train.contains(p)));
        assert_ne!(two.ood_train[0], two.ood_train[1]);

        assert!(subsample_ood(&data, 0, &mut rng)
            .unwrap()
            .ood_train
            .is_empty());
        assert!(matches!(
            subsample_ood(&data, 1001, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn subsample_is_uniform() {
        let mut data = make_simulation_dataset(&mut Rng::new(1));
        data.ood_train = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let mut rng = Rng::new(77);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let sub = subsample_ood(&data, 1, &mut rng).unwrap();
            counts[sub.ood_train[0][0] as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn noise_examples() {
        assert!(sample_noise(2, 0, &mut Rng::new(1)).is_empty());
        let z = sample_noise(2, 10_000, &mut Rng::new(31));
        for coord in 0..2 {
            let (mean, std) = moments(&z, coord);
            assert!(mean.abs() < 0.05 && (std - 1.0).abs() < 0.05);
        }
        assert_eq!(
            sample_noise(3, 20, &mut Rng::new(8)),
            sample_noise(3, 20, &mut Rng::new(8))
        );
    }

    #[test]
    fn csv_round_trip() {
        let data = subsample_ood(
            &make_simulation_dataset(&mut Rng::new(6)),
            2,
            &mut Rng::new(7),
        )
        .unwrap();
        let text = data.to_csv();
        assert!(text.starts_with("x1,x2,label,split\n"));
        assert_eq!(Dataset::from_csv(&text).unwrap(), data);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let bad_label = "x1,x2,label,split\n1,2,-1,ind_train\n";
        assert!(matches!(
            Dataset::from_csv(bad_label),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad_split = "x1,x2,label,split\n1,2,1,validation\n";
        assert!(Dataset::from_csv(bad_split).is_err());
        assert!(Dataset::from_csv("a,b\n").is_err());
    }
}
