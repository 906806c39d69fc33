use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, EvalError};
use crate::data::{load_samples, DatasetManifest, Modalities, Split};
use crate::model::{Modality, SwitchVae};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub id: String,
    pub label: usize,
    pub source: Modality,
    pub mu: Vec<f64>,
}

/// Encoder means of a set of samples. `(id, source)` pairs are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentBank {
    dim: usize,
    rows: Vec<LatentRow>,
    keys: HashSet<(String, Modality)>,
}

impl LatentBank {
    pub fn new(dim: usize) -> Self {
        LatentBank {
            dim,
            ..Default::default()
        }
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = LatentRow>) -> Result<Self, EvalError> {
        let mut bank = LatentBank::new(dim);
        for r in rows {
            bank.push(r)?;
        }
        Ok(bank)
    }

    pub fn push(&mut self, row: LatentRow) -> Result<(), EvalError> {
        if row.mu.len() != self.dim {
            return Err(EvalError::Shape(format!(
                "{}: latent length {} but bank holds {}",
                row.id,
                row.mu.len(),
                self.dim
            )));
        }
        if row.id.is_empty() || row.id.contains([',', '\n', '\r']) {
            return Err(EvalError::Invalid(format!("unusable sample id {:?}", row.id)));
        }
        if !self.keys.insert((row.id.clone(), row.source)) {
            return Err(EvalError::Invalid(format!("duplicate row {} ({})", row.id, row.source)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[LatentRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str, source: Modality) -> Option<&LatentRow> {
        self.rows.iter().find(|r| r.id == id && r.source == source)
    }

    /// First row with this id, whatever its source.
    pub fn find(&self, id: &str) -> Option<&LatentRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.mu.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,label,source");
        for i in 0..self.dim {
            write!(s, ",mu_{i}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{},{}", r.id, r.label, r.source).unwrap();
            for v in &r.mu {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |line: usize, msg: String| EvalError::Invalid(format!("latent csv line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[..3] != ["id", "label", "source"] {
            return Err(bad(1, format!("unexpected header `{header}`")));
        }
        let dim = cols.len() - 3;
        for (i, c) in cols[3..].iter().enumerate() {
            if *c != format!("mu_{i}") {
                return Err(bad(1, format!("unexpected column `{c}`")));
            }
        }
        let mut bank = LatentBank::new(dim);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad(n + 1, format!("{} fields, expected {}", f.len(), cols.len())));
            }
            let label = f[1].parse().map_err(|_| bad(n + 1, format!("bad label `{}`", f[1])))?;
            let source = f[2].parse().map_err(|_| bad(n + 1, format!("bad source `{}`", f[2])))?;
            let mu = f[3..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad(n + 1, format!("bad value `{v}`"))))
                .collect::<Result<_, _>>()?;
            bank.push(LatentRow {
                id: f[0].to_string(),
                label,
                source,
                mu,
            })?;
        }
        Ok(bank)
    }

    pub fn read_csv(path: &Path) -> Result<Self, EvalError> {
        Self::parse_csv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Encoder means for every sample of `split`, read through `modality` only.
/// Files of the other modality are never opened.
pub fn extract_latents<T: Scalar>(
    model: &SwitchVae<T>,
    manifest: &DatasetManifest,
    split: Option<Split>,
    modality: Modality,
) -> Result<LatentBank, EvalError> {
    let wanted = match modality {
        Modality::Vox => Modalities::VOXELS,
        Modality::Img => Modalities::VIEWS,
    };
    let samples = load_samples::<T>(manifest, split, wanted)?;
    let mut bank = LatentBank::new(model.config().latent);
    for s in samples {
        let dist = model.encode(modality, s.voxels.as_ref(), s.views.as_ref())?;
        bank.push(LatentRow {
            id: s.id,
            label: s.label,
            source: modality,
            mu: dist.mean.iter().map(|v| v.to_f64_lossy()).collect(),
        })?;
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::data::{build_dataset, DatasetConfig, Family};
    use crate::eval::{classify_eval, SvmConfig};
    use crate::model::ModelConfig;

    fn row(id: &str, label: usize, mu: Vec<f64>) -> LatentRow {
        LatentRow {
            id: id.into(),
            label,
            source: Modality::Vox,
            mu,
        }
    }

    #[test]
    fn csv_round_trip() {
        let bank =
            LatentBank::from_rows(2, [row("a", 0, vec![0.1, -3e-17]), row("b", 2, vec![1.0 / 3.0, 7.0])]).unwrap();
        let back = LatentBank::parse_csv(&bank.to_csv()).unwrap();
        assert_eq!(back, bank);
        assert!(bank.to_csv().starts_with("id,label,source,mu_0,mu_1\n"));
    }

    #[test]
    fn bank_rejects_bad_rows() {
        let mut bank = LatentBank::new(2);
        bank.push(row("a", 0, vec![0.0, 0.0])).unwrap();
        assert!(bank.push(row("a", 1, vec![1.0, 0.0])).is_err());
        assert!(bank.push(row("b", 0, vec![1.0])).is_err());
        let mut other = row("a", 0, vec![0.0, 0.0]);
        other.source = Modality::Img;
        bank.push(other).unwrap();
        assert_eq!(bank.len(), 2);
    }

    fn gaussian_bank(rng: &mut ChaCha8Rng, per: usize, classes: usize, sep: f64, prefix: &str) -> LatentBank {
        let mut rows = Vec::new();
        for c in 0..classes {
            for i in 0..per {
                let mu = (0..4)
                    .map(|d| {
                        let e: f64 = StandardNormal.sample(rng);
                        e + if d == c % 4 { sep } else { 0.0 }
                    })
                    .collect();
                rows.push(row(&format!("{prefix}{c}_{i}"), c, mu));
            }
        }
        LatentBank::from_rows(4, rows).unwrap()
    }

    #[test]
    fn classify_same_bank_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = gaussian_bank(&mut rng, 10, 4, 12.0, "s");
        assert_eq!(classify_eval(&bank, &bank, &SvmConfig::default()).unwrap(), 1.0);
        assert!(classify_eval(&bank, &LatentBank::new(4), &SvmConfig::default()).is_err());
    }

    #[test]
    fn permuted_labels_give_chance() {
        let mut accs = Vec::new();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let train = gaussian_bank(&mut rng, 50, 4, 3.0, "t");
            let test = gaussian_bank(&mut rng, 50, 4, 3.0, "e");
            let mut labels = train.labels();
            labels.shuffle(&mut rng);
            let shuffled = LatentBank::from_rows(
                4,
                train
                    .rows()
                    .iter()
                    .zip(labels)
                    .map(|(r, l)| row(&r.id, l, r.mu.clone())),
            )
            .unwrap();
            accs.push(classify_eval(&shuffled, &test, &SvmConfig::default()).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.25).abs() <= 0.05, "{accs:?}");
    }

    fn tiny_dataset(dir: &Path) -> DatasetManifest {
        let cfg = DatasetConfig {
            families: vec![Family::Box, Family::Chair],
            counts: vec![2, 2],
            resolution: 8,
            views: 2,
            view_height: 8,
            view_width: 8,
            ..DatasetConfig::default()
        };
        build_dataset(&cfg, dir).unwrap()
    }

    fn tiny_model() -> SwitchVae<f64> {
        SwitchVae::new(
            ModelConfig {
                latent: 6,
                resolution: 8,
                views: 2,
                view_height: 8,
                view_width: 8,
                image_channels: vec![4],
                view_feature: 8,
                gru_hidden: 8,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn extraction_is_deterministic_and_sized() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let model = tiny_model();
        for modality in [Modality::Vox, Modality::Img] {
            let a = extract_latents(&model, &m, Some(Split::Train), modality).unwrap();
            let b = extract_latents(&model, &m, Some(Split::Train), modality).unwrap();
            assert_eq!(a.len(), m.split(Split::Train).count());
            assert_eq!(a, b);
            let direct = model.encode(modality, None, None);
            assert!(direct.is_err());
        }
    }

    #[test]
    fn voxel_extraction_needs_no_images() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let model = tiny_model();
        let before = extract_latents(&model, &m, None, Modality::Vox).unwrap();
        std::fs::remove_dir_all(dir.path().join("views")).unwrap();
        let after = extract_latents(&model, &m, None, Modality::Vox).unwrap();
        assert_eq!(before, after);
        assert!(extract_latents(&model, &m, None, Modality::Img).is_err());
    }
}
