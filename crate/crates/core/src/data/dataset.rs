//! Dataset generation, manifests, and sample loading.
//!
//! A manifest is UTF-8 text: `#`-prefixed `key=value` header lines, then one
//! tab-separated record per sample: `id  label  split  voxel_path  view_paths`
//! where view paths are `;`-separated. Paths are relative to the manifest's
//! directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    default_poses, generate_shape, read_binvox, read_pgm, render_views, sample_params, write_binvox, write_pgm,
    DataError, Family, MultiViewSet, Pose, RenderMode, VoxelGrid,
};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &str = "# switchvae-dataset 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DataError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub families: Vec<Family>,
    /// Samples per family, parallel to `families`.
    pub counts: Vec<usize>,
    /// Fraction of each family assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
    pub resolution: usize,
    pub views: usize,
    pub view_height: usize,
    pub view_width: usize,
    pub mode: RenderMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            counts: vec![10; 4],
            train_fraction: 0.8,
            seed: 0,
            resolution: 32,
            views: 8,
            view_height: 32,
            view_width: 32,
            mode: RenderMode::Silhouette,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.families.len() != self.counts.len() {
            return Err(DataError::Config("one count per family required".into()));
        }
        if self.families.iter().collect::<HashSet<_>>().len() != self.families.len() {
            return Err(DataError::Config("duplicate family".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(DataError::Config(format!(
                "train fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        if self.resolution == 0 || self.views == 0 {
            return Err(DataError::Config("resolution and view count must be positive".into()));
        }
        if self.view_height < self.resolution || self.view_width < self.resolution {
            return Err(DataError::RenderTooSmall {
                height: self.view_height,
                width: self.view_width,
                resolution: self.resolution,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub voxel_path: PathBuf,
    pub view_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative sample paths resolve against; not serialized.
    pub base_dir: PathBuf,
    pub categories: Vec<String>,
    pub resolution: usize,
    pub views: usize,
    pub view_height: usize,
    pub view_width: usize,
    pub view_channels: usize,
    pub render_mode: RenderMode,
    pub poses: Vec<Pose>,
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let poses: Vec<String> = self
            .poses
            .iter()
            .map(|p| format!("{}:{}", p.azimuth_deg, p.elevation_deg))
            .collect();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "# categories={}", self.categories.join(","));
        let _ = writeln!(s, "# resolution={}", self.resolution);
        let _ = writeln!(s, "# views={}", self.views);
        let _ = writeln!(s, "# view_height={}", self.view_height);
        let _ = writeln!(s, "# view_width={}", self.view_width);
        let _ = writeln!(s, "# view_channels={}", self.view_channels);
        let _ = writeln!(s, "# render_mode={}", self.render_mode);
        let _ = writeln!(s, "# poses={}", poses.join(","));
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# columns=id\tlabel\tsplit\tvoxels\tviews");
        for r in &self.samples {
            let views: Vec<String> = r.view_paths.iter().map(|p| p.display().to_string()).collect();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.id,
                r.label,
                r.split.as_str(),
                r.voxel_path.display(),
                views.join(";")
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text()).map_err(DataError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(DataError::io(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, path)
    }

    fn parse(text: &str, base_dir: PathBuf, path: &Path) -> Result<Self, DataError> {
        let err = |line: usize, msg: String| DataError::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(err(1, "missing manifest magic line".into())),
        }
        let mut m = DatasetManifest {
            base_dir,
            categories: vec![],
            resolution: 0,
            views: 0,
            view_height: 0,
            view_width: 0,
            view_channels: 1,
            render_mode: RenderMode::Silhouette,
            poses: vec![],
            seed: 0,
            samples: vec![],
        };
        let num = |i: usize, v: &str| v.parse::<usize>().map_err(|_| err(i + 1, format!("bad number `{v}`")));
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (k, v) = h
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| err(i + 1, format!("bad header line `{line}`")))?;
                match k {
                    "categories" => m.categories = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
                    "resolution" => m.resolution = num(i, v)?,
                    "views" => m.views = num(i, v)?,
                    "view_height" => m.view_height = num(i, v)?,
                    "view_width" => m.view_width = num(i, v)?,
                    "view_channels" => m.view_channels = num(i, v)?,
                    "render_mode" => m.render_mode = v.parse().map_err(|e: DataError| err(i + 1, e.to_string()))?,
                    "seed" => m.seed = v.parse().map_err(|_| err(i + 1, format!("bad seed `{v}`")))?,
                    "poses" => {
                        m.poses = v
                            .split(',')
                            .filter(|s| !s.is_empty())
                            .map(|p| {
                                let (a, e) = p.split_once(':')?;
                                Some(Pose::new(a.parse().ok()?, e.parse().ok()?))
                            })
                            .collect::<Option<_>>()
                            .ok_or_else(|| err(i + 1, format!("bad poses `{v}`")))?
                    }
                    "columns" => {}
                    other => return Err(err(i + 1, format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(err(i + 1, format!("expected 5 columns, got {}", cols.len())));
            }
            let label = num(i, cols[1])?;
            if label >= m.categories.len() {
                return Err(err(
                    i + 1,
                    format!("label {label} >= {} categories", m.categories.len()),
                ));
            }
            let split = cols[2].parse().map_err(|e: DataError| err(i + 1, e.to_string()))?;
            let view_paths: Vec<PathBuf> = cols[4]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect();
            if view_paths.len() != m.views {
                return Err(err(
                    i + 1,
                    format!("{} view paths, header declares {}", view_paths.len(), m.views),
                ));
            }
            m.samples.push(SampleRecord {
                id: cols[0].to_string(),
                label,
                split,
                voxel_path: PathBuf::from(cols[3]),
                view_paths,
            });
        }
        let mut seen = HashSet::new();
        for s in &m.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(err(0, format!("duplicate sample id `{}`", s.id)));
            }
        }
        if m.poses.len() != m.views {
            return Err(err(0, format!("{} poses for {} views", m.poses.len(), m.views)));
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }
}

/// Which modalities to read from disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modalities {
    pub voxels: bool,
    pub views: bool,
}

impl Modalities {
    pub const BOTH: Modalities = Modalities {
        voxels: true,
        views: true,
    };
    pub const VOXELS: Modalities = Modalities {
        voxels: true,
        views: false,
    };
    pub const VIEWS: Modalities = Modalities {
        voxels: false,
        views: true,
    };
}

#[derive(Debug, Clone)]
pub struct LoadedSample<T> {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub voxels: Option<VoxelGrid<T>>,
    pub views: Option<MultiViewSet<T>>,
}

/// Reads the requested modalities of every sample in `split` (all samples when `None`).
///
/// Files of modalities that were not requested are never opened.
pub fn load_samples<T: Scalar>(
    manifest: &DatasetManifest,
    split: Option<Split>,
    modalities: Modalities,
) -> Result<Vec<LoadedSample<T>>, DataError> {
    manifest
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .map(|rec| {
            let voxels = if modalities.voxels {
                let g: VoxelGrid<T> = read_binvox(&manifest.resolve(&rec.voxel_path))?;
                if g.resolution() != manifest.resolution {
                    return Err(DataError::InvalidGrid(format!(
                        "{}: resolution {} but manifest declares {}",
                        rec.id,
                        g.resolution(),
                        manifest.resolution
                    )));
                }
                Some(g)
            } else {
                None
            };
            let views = if modalities.views {
                let views = rec
                    .view_paths
                    .iter()
                    .map(|p| read_pgm(&manifest.resolve(p)))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(MultiViewSet {
                    views,
                    poses: manifest.poses.clone(),
                })
            } else {
                None
            };
            Ok(LoadedSample {
                id: rec.id.clone(),
                label: rec.label,
                split: rec.split,
                voxels,
                views,
            })
        })
        .collect()
}

/// Generates, renders, and writes a dataset; returns its manifest (also written to `out_dir/manifest.txt`).
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(DataError::io(out_dir))?;
    let total: usize = config.counts.iter().sum();
    let (vox_dir, view_dir) = (out_dir.join("voxels"), out_dir.join("views"));
    if total > 0 {
        std::fs::create_dir_all(&vox_dir).map_err(DataError::io(&vox_dir))?;
        std::fs::create_dir_all(&view_dir).map_err(DataError::io(&view_dir))?;
    }
    let poses = default_poses(config.views);
    let mut samples = Vec::with_capacity(total);
    for (label, (&family, &count)) in config.families.iter().zip(&config.counts).enumerate() {
        let n_train = (count as f64 * config.train_fraction).round() as usize;
        for i in 0..count {
            let id = format!("{}_{i:04}", family.name());
            // Sample streams are a pure function of (seed, family, index).
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((family as u64) << 32) | i as u64);
            let params = sample_params(family, &mut rng);
            let grid: VoxelGrid<f64> = generate_shape(family, &params, config.resolution)?;
            let views = render_views(&grid, &poses, config.view_height, config.view_width, config.mode)?;
            let voxel_path = PathBuf::from("voxels").join(format!("{id}.binvox"));
            write_binvox(&grid, &out_dir.join(&voxel_path))?;
            let mut view_paths = Vec::with_capacity(config.views);
            for (v, img) in views.views.iter().enumerate() {
                let p = PathBuf::from("views").join(format!("{id}_v{v}.pgm"));
                write_pgm(img, &out_dir.join(&p))?;
                view_paths.push(p);
            }
            samples.push(SampleRecord {
                id,
                label,
                split: if i < n_train { Split::Train } else { Split::Test },
                voxel_path,
                view_paths,
            });
        }
    }
    let manifest = DatasetManifest {
        base_dir: out_dir.to_path_buf(),
        categories: config.families.iter().map(|f| f.name().to_string()).collect(),
        resolution: config.resolution,
        views: config.views,
        view_height: config.view_height,
        view_width: config.view_width,
        view_channels: 1,
        render_mode: config.mode,
        poses,
        seed: config.seed,
        samples,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
