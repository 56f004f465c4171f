//! Datasets and initial filters from an [`ExperimentConfig`].
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64`, whose
//! output stream is fixed by the algorithm rather than the toolchain.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{DataSource, Distribution, ExperimentConfig, InitMode, InitSpec};
use super::HarnessError;
use crate::lcn::{network_matrix, Architecture, FilterStack};
use crate::losses::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, HarnessError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(HarnessError::Config(format!("{what} is empty")));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(HarnessError::Config(format!("{what}: row {i} has {} entries, expected {ncols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), line + 1)))?;
        rows.push(row);
    }
    rows_to_matrix(&rows, &path.display().to_string())
}

fn sample_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, dist: Distribution) -> DMatrix<f64> {
    // Column-major fill so that adding samples keeps the earlier ones.
    DMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| match dist {
            Distribution::Normal => rng.sample::<f64, _>(StandardNormal),
            Distribution::Uniform => rng.random_range(-1.0..=1.0),
        }),
    )
}

/// Entries uniform on `[-1, 1] / sqrt(k_i)`.
pub fn uniform_filters(arch: &Architecture, rng: &mut ChaCha8Rng) -> FilterStack {
    let layers = arch
        .widths()
        .iter()
        .map(|&k| {
            let scale = 1.0 / (k as f64).sqrt();
            (0..k).map(|_| scale * rng.random_range(-1.0..=1.0)).collect()
        })
        .collect();
    FilterStack::new(arch, layers).expect("widths match the architecture")
}

/// Rescales every nonzero filter to the mean of the filter norms.
pub fn balance(arch: &Architecture, w: &FilterStack) -> FilterStack {
    let norms: Vec<f64> = w.layer_norms_sq().iter().map(|b| b.sqrt()).collect();
    let target = norms.iter().sum::<f64>() / norms.len() as f64;
    let layers = w
        .layers()
        .iter()
        .zip(&norms)
        .map(|(f, &n)| if n > 0.0 { f.iter().map(|v| v * target / n).collect() } else { f.clone() })
        .collect();
    FilterStack::new(arch, layers).expect("same shapes as w")
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let arch = &config.architecture;
    let (x, y) = match &config.data {
        DataSource::Inline { x, y } => (rows_to_matrix(x, "data.x")?, rows_to_matrix(y, "data.y")?),
        DataSource::Csv { x_path, y_path } => (read_csv_matrix(x_path)?, read_csv_matrix(y_path)?),
        DataSource::Synthetic { seed, m, distribution, teacher } => {
            if *m == 0 {
                return Err(HarnessError::Config("data.m must be at least 1".into()));
            }
            let mut rng = rng(*seed);
            let x = sample_matrix(&mut rng, arch.input_dim(), *m, *distribution);
            let y = if *teacher {
                let planted = uniform_filters(arch, &mut rng);
                network_matrix(arch, &planted)? * &x
            } else {
                sample_matrix(&mut rng, arch.output_dim(), *m, *distribution)
            };
            (x, y)
        }
    };
    let data = Dataset::new(x, y)?;
    data.check(arch)?;
    Ok(data)
}

pub fn initial_filters(arch: &Architecture, init: &InitSpec) -> Result<FilterStack, HarnessError> {
    match init.mode {
        InitMode::Uniform => Ok(uniform_filters(arch, &mut rng(init.seed))),
        InitMode::Balanced => Ok(balance(arch, &uniform_filters(arch, &mut rng(init.seed)))),
        InitMode::Explicit => {
            let filters = init
                .filters
                .clone()
                .ok_or_else(|| HarnessError::Config("init mode \"explicit\" needs \"filters\"".into()))?;
            Ok(FilterStack::new(arch, filters)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(data: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"architecture": {{"d0": 6, "k": [3, 2], "s": [1, 1]}}, "loss": {{"kind": "square"}}, "data": {data}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn synthetic_is_deterministic() {
        let c = config(r#"{"source": "synthetic", "seed": 11, "m": 9}"#);
        let a = load_dataset(&c).unwrap();
        let b = load_dataset(&c).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x().shape(), (6, 9));
        assert_eq!(a.y().shape(), (3, 9));
        let other = load_dataset(&config(r#"{"source": "synthetic", "seed": 12, "m": 9}"#)).unwrap();
        assert_ne!(a.x(), other.x());
    }

    #[test]
    fn teacher_labels_are_realizable() {
        let c = config(r#"{"source": "synthetic", "seed": 2, "m": 7, "distribution": "uniform", "teacher": true}"#);
        let data = load_dataset(&c).unwrap();
        assert!(data.x().iter().all(|v| v.abs() <= 1.0));
        let mut r = rng(2);
        let _x = sample_matrix(&mut r, 6, 7, Distribution::Uniform);
        let planted = uniform_filters(&c.architecture, &mut r);
        let w = network_matrix(&c.architecture, &planted).unwrap();
        assert!((w * data.x() - data.y()).amax() < 1e-14);
    }

    #[test]
    fn init_modes() {
        let arch = Architecture::new(6, &[3, 2, 1], &[1, 1, 1]).unwrap();
        let w = initial_filters(&arch, &InitSpec { seed: 4, mode: InitMode::Uniform, filters: None }).unwrap();
        for (i, f) in w.layers().iter().enumerate() {
            let bound = 1.0 / (arch.widths()[i] as f64).sqrt();
            assert!(f.iter().all(|v| v.abs() <= bound));
        }
        let b = initial_filters(&arch, &InitSpec { seed: 4, mode: InitMode::Balanced, filters: None }).unwrap();
        let norms = b.layer_norms_sq();
        assert!(norms.iter().all(|n| (n - norms[0]).abs() < 1e-14));

        let spec = InitSpec {
            seed: 0,
            mode: InitMode::Explicit,
            filters: Some(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0], vec![6.0]]),
        };
        assert_eq!(initial_filters(&arch, &spec).unwrap().layer(2), &[6.0]);
        let missing = InitSpec { seed: 0, mode: InitMode::Explicit, filters: None };
        assert!(initial_filters(&arch, &missing).is_err());
    }

    #[test]
    fn csv_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "1, 2,3\n4,5,6\n").unwrap();
        let m = read_csv_matrix(&p).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_csv_matrix(&p).is_err());
    }
}
