use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ScenePair, SceneError, MIN_SIZE};
use crate::exec;
use crate::haze::{sample_haze_params, HazeParams};
use crate::image::{DepthMap, Image, ImageError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_COUNT: usize = 8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset needs at least {MIN_COUNT} images, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: invalid manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("{path}: manifest schema version {found}, this build reads {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("record {id}: {file} checksum mismatch")]
    Checksum { id: String, file: String },
    #[error("record {id}: {file} is {found:?}, manifest declares {expected:?}")]
    Shape {
        id: String,
        file: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub clear: String,
    pub depth: String,
    pub hazy: String,
    pub seed: u64,
    pub airlight: [f64; 3],
    pub beta: f64,
    pub sha256: FileChecksums,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileChecksums {
    pub clear: String,
    pub depth: String,
    pub hazy: String,
}

impl SampleRecord {
    pub fn params(&self) -> HazeParams {
        HazeParams {
            airlight: self.airlight,
            beta: self.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub image_size: usize,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.records(split).count()
    }
}

/// `(train, test)` sizes for a 3:1 split.
pub fn split_counts(count: usize) -> (usize, usize) {
    let train = count * 3 / 4;
    (train, count - train)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Synthesizes `count` scene pairs under `root` with a random 3:1 train/test
/// split and writes `manifest.json`.
///
/// Per-image scene seeds and haze parameters are drawn sequentially from a
/// stream seeded by `seed`, so the output depends only on the arguments.
pub fn build_dataset(count: usize, seed: u64, size: usize, root: &Path) -> Result<DatasetManifest, DatasetError> {
    if count < MIN_COUNT {
        return Err(DatasetError::TooFew(count));
    }
    if size < MIN_SIZE {
        return Err(SceneError::TooSmall(size).into());
    }
    for sub in ["clear", "depth", "hazy"] {
        create_dir(&root.join(sub))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(u64, HazeParams)> = (0..count)
        .map(|_| {
            let scene_seed = rng.next_u64();
            (scene_seed, sample_haze_params(&mut rng))
        })
        .collect();
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let (train, _) = split_counts(count);
    let mut splits = vec![Split::Test; count];
    for &i in &order[..train] {
        splits[i] = Split::Train;
    }

    let records = exec::map_range(exec::mode(), usize::MAX, count, |i| {
        let (scene_seed, params) = plan[i];
        let id = format!("{i:05}");
        let pair = ScenePair::synthesize(id.clone(), scene_seed, size, params)?;
        let clear = format!("clear/{id}.png");
        let depth = format!("depth/{id}.hzdm");
        let hazy = format!("hazy/{id}.png");
        let clear_bytes = pair.clear.encode_png();
        let depth_bytes = pair.depth.encode();
        let hazy_bytes = pair.hazy.encode_png();
        write_file(&root.join(&clear), &clear_bytes)?;
        write_file(&root.join(&depth), &depth_bytes)?;
        write_file(&root.join(&hazy), &hazy_bytes)?;
        Ok(SampleRecord {
            id,
            split: splits[i],
            clear,
            depth,
            hazy,
            seed: scene_seed,
            airlight: params.airlight,
            beta: params.beta,
            sha256: FileChecksums {
                clear: sha256_hex(&clear_bytes),
                depth: sha256_hex(&depth_bytes),
                hazy: sha256_hex(&hazy_bytes),
            },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, DatasetError>>()?;

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        image_size: size,
        seed,
        records,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&root.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Iteration order for [`Dataset::pairs`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Manifest,
    Shuffled(u64),
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Opens a dataset from its root directory or its manifest file.
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let (root, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (root, path.to_path_buf())
        };
        let text = fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(DatasetError::Schema {
                path: manifest_path,
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let manifest: DatasetManifest = serde_json::from_value(value).map_err(|e| DatasetError::Manifest {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
        Ok(Self { root, manifest })
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>, DatasetError> {
        let path = self.root.join(rel);
        fs::read(&path).map_err(|source| DatasetError::Io { path, source })
    }

    /// Loads one record, verifying checksums and dimensions.
    pub fn load(&self, record: &SampleRecord) -> Result<ScenePair, DatasetError> {
        let size = self.manifest.image_size;
        let expected = (size, size);
        let check = |file: &str, bytes: &[u8], sum: &str| -> Result<(), DatasetError> {
            if sha256_hex(bytes) != sum {
                return Err(DatasetError::Checksum {
                    id: record.id.clone(),
                    file: file.to_string(),
                });
            }
            Ok(())
        };
        let shape = |file: &str, found: (usize, usize)| -> Result<(), DatasetError> {
            if found != expected {
                return Err(DatasetError::Shape {
                    id: record.id.clone(),
                    file: file.to_string(),
                    found,
                    expected,
                });
            }
            Ok(())
        };

        let clear_bytes = self.read(&record.clear)?;
        check(&record.clear, &clear_bytes, &record.sha256.clear)?;
        let depth_bytes = self.read(&record.depth)?;
        check(&record.depth, &depth_bytes, &record.sha256.depth)?;
        let hazy_bytes = self.read(&record.hazy)?;
        check(&record.hazy, &hazy_bytes, &record.sha256.hazy)?;

        let clear = Image::load_png(&self.root.join(&record.clear))?;
        shape(&record.clear, clear.dims())?;
        let depth = DepthMap::decode(&depth_bytes, &self.root.join(&record.depth))?;
        shape(&record.depth, depth.dims())?;
        let hazy = Image::load_png(&self.root.join(&record.hazy))?;
        shape(&record.hazy, hazy.dims())?;
        Ok(ScenePair {
            id: record.id.clone(),
            seed: record.seed,
            params: record.params(),
            clear,
            depth,
            hazy,
        })
    }

    /// Records of `split` (or all records) in the requested order.
    pub fn ordered(&self, split: Option<Split>, order: Order) -> Vec<&SampleRecord> {
        let mut recs: Vec<&SampleRecord> = self
            .manifest
            .records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .collect();
        if let Order::Shuffled(seed) = order {
            recs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        recs
    }

    /// Lazily loads pairs in the requested order.
    pub fn pairs(
        &self,
        split: Option<Split>,
        order: Order,
    ) -> impl Iterator<Item = Result<ScenePair, DatasetError>> + '_ {
        self.ordered(split, order).into_iter().map(|r| self.load(r))
    }

    /// Eagerly loads a split, in parallel when enabled, preserving order.
    pub fn load_split(&self, split: Split) -> Result<Vec<ScenePair>, DatasetError> {
        let recs = self.ordered(Some(split), Order::Manifest);
        exec::map_range(exec::mode(), usize::MAX, recs.len(), |i| self.load(recs[i]))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haze::{apply_haze, transmission};

    #[test]
    fn split_ratio() {
        assert_eq!(split_counts(2000), (1500, 500));
        assert_eq!(split_counts(80), (60, 20));
        assert_eq!(split_counts(8), (6, 2));
    }

    #[test]
    fn too_few_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(build_dataset(7, 1, 16, dir.path()), Err(DatasetError::TooFew(7))));
    }

    #[test]
    fn unwritable_root_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = build_dataset(8, 1, 16, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn build_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(12, 3, 16, dir.path()).unwrap();
        assert_eq!(m.count(Split::Train), 9);
        assert_eq!(m.count(Split::Test), 3);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        let pairs: Vec<ScenePair> = ds.pairs(None, Order::Manifest).collect::<Result<_, _>>().unwrap();
        assert_eq!(pairs.len(), 12);
        for p in &pairs {
            let t = transmission(&p.depth, p.params.beta).unwrap();
            let regen = apply_haze(&p.clear, &t, p.params.airlight).unwrap();
            for (a, b) in regen.data.iter().zip(&p.hazy.data) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
        let mut ids: Vec<_> = ds.ordered(None, Order::Shuffled(5)).iter().map(|r| r.id.clone()).collect();
        let plain: Vec<_> = ds.ordered(None, Order::Manifest).iter().map(|r| r.id.clone()).collect();
        assert_ne!(ids, plain);
        ids.sort();
        assert_eq!(ids, plain);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(8, 4, 16, dir.path()).unwrap();
        let ds = Dataset::open(&dir.path().join(MANIFEST_FILE)).unwrap();
        let rec = ds.manifest.records[2].clone();
        let path = dir.path().join(&rec.hazy);
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = ds.load(&rec).unwrap_err();
        assert!(matches!(err, DatasetError::Checksum { ref id, .. } if *id == rec.id));
        fs::remove_file(dir.path().join(&rec.clear)).unwrap();
        assert!(ds.load(&rec).unwrap_err().to_string().contains(&rec.clear));
    }
}
