//! On-disk dataset format.
//!
//! Tensor file (`.uads`): magic "UADS", u16 LE version, u8 dtype (0 = f32,
//! 1 = u8), u8 rank, rank×u32 LE dims, then the row-major payload in LE.
//! A sample is a directory holding `image.uads` (f32 [S,S,1]), `mask.uads`
//! and `label.uads` (u8 [S,S]). A split directory holds `sample_NNNNN/`
//! folders plus a `manifest.txt` with key=value headers and one
//! `sha256  relative/path` line per file; loaders verify every checksum.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::numerics::Tensor;

use super::phantom::{generate_phantom, Phantom, PhantomParams};

const MAGIC: &[u8; 4] = b"UADS";
const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: checksum mismatch (file corrupted or replaced)")]
    Checksum { path: PathBuf },
    #[error("{path}: manifest problem: {msg}")]
    Manifest { path: PathBuf, msg: String },
}

fn format_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Format { path: path.to_path_buf(), msg: msg.into() }
}

// ── tensor files ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

pub fn write_uads_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<(), DataError> {
    write_uads(path, shape, Dtype::F32, data.len(), |w| {
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for &v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)
    })
}

pub fn write_uads_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<(), DataError> {
    write_uads(path, shape, Dtype::U8, data.len(), |w| w.write_all(data))
}

fn write_uads(
    path: &Path,
    shape: &[usize],
    dtype: Dtype,
    len: usize,
    payload: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), DataError> {
    assert_eq!(shape.iter().product::<usize>(), len, "shape/payload mismatch");
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[if dtype == Dtype::F32 { 0 } else { 1 }, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    payload(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Any `.uads` payload, converted to an f32 tensor (u8 values cast).
pub fn read_uads(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path)?;
    let need = |n: usize, at: usize| -> Result<&[u8], DataError> {
        bytes
            .get(at..at + n)
            .ok_or_else(|| format_err(path, "truncated header or payload"))
    };
    if need(4, 0)? != MAGIC {
        return Err(format_err(path, "bad magic; not a tensor file"));
    }
    let version = u16::from_le_bytes(need(2, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let dtype = match need(1, 6)?[0] {
        0 => Dtype::F32,
        1 => Dtype::U8,
        d => return Err(format_err(path, format!("unknown dtype {d}"))),
    };
    let rank = need(1, 7)?[0] as usize;
    if rank == 0 || rank > 3 {
        return Err(format_err(path, format!("rank {rank} outside the supported 1..=3")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32::from_le_bytes(need(4, 8 + 4 * i)?.try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let start = 8 + 4 * rank;
    let data = match dtype {
        Dtype::F32 => {
            let payload = need(numel * 4, start)?;
            if bytes.len() != start + numel * 4 {
                return Err(format_err(path, "trailing bytes after payload"));
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        Dtype::U8 => {
            let payload = need(numel, start)?;
            if bytes.len() != start + numel {
                return Err(format_err(path, "trailing bytes after payload"));
            }
            payload.iter().map(|&b| b as f32).collect()
        }
    };
    Tensor::new(shape, data).map_err(|e| format_err(path, e.to_string()))
}

// ── samples ───────────────────────────────────────────────────────────

pub struct Sample {
    /// [S, S, 1] intensities in [0, 1].
    pub image: Tensor,
    /// [S, S] binary head support.
    pub mask: Tensor,
    /// [S, S] binary lesion ground truth.
    pub label: Tensor,
}

impl From<Phantom> for Sample {
    fn from(p: Phantom) -> Sample {
        Sample { image: p.image, mask: p.mask, label: p.label }
    }
}

pub fn save_sample(dir: &Path, sample: &Sample) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    write_uads_f32(&dir.join("image.uads"), sample.image.shape(), sample.image.data())?;
    let to_u8 = |t: &Tensor| -> Vec<u8> { t.data().iter().map(|&v| (v > 0.0) as u8).collect() };
    write_uads_u8(&dir.join("mask.uads"), sample.mask.shape(), &to_u8(&sample.mask))?;
    write_uads_u8(&dir.join("label.uads"), sample.label.shape(), &to_u8(&sample.label))?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<Sample, DataError> {
    let image = read_uads(&dir.join("image.uads"))?;
    let mask = read_uads(&dir.join("mask.uads"))?;
    let label = read_uads(&dir.join("label.uads"))?;
    if image.rank() != 3 || image.shape()[2] != 1 {
        return Err(format_err(&dir.join("image.uads"), "image must be [S, S, 1]"));
    }
    if mask.shape() != &image.shape()[..2] || label.shape() != mask.shape() {
        return Err(format_err(dir, "image/mask/label shapes disagree"));
    }
    Ok(Sample { image, mask, label })
}

// ── splits and manifests ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_healthy: usize,
    pub test_anomalous: usize,
}

impl SplitCounts {
    /// Desk-scale dataset: enough to train in minutes on one core.
    pub fn desk() -> SplitCounts {
        SplitCounts { train: 512, val: 64, test_healthy: 64, test_anomalous: 128 }
    }

    pub fn full() -> SplitCounts {
        SplitCounts { train: 10_000, val: 1_000, test_healthy: 1_000, test_anomalous: 2_000 }
    }
}

pub const SPLIT_NAMES: [&str; 4] = ["train", "val", "test_healthy", "test_anomalous"];

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// Generate every split under `root`. Each split draws its sample seeds from
/// a disjoint range (`base_seed` + split offset + index), so regenerating a
/// single split or resizing one never shifts another split's contents.
pub fn build_splits(
    root: &Path,
    params: &PhantomParams,
    counts: SplitCounts,
    base_seed: u64,
) -> Result<(), DataError> {
    let plan = [
        ("train", counts.train, 0u64, false),
        ("val", counts.val, 100_000, false),
        ("test_healthy", counts.test_healthy, 200_000, false),
        ("test_anomalous", counts.test_anomalous, 300_000, true),
    ];
    for (name, count, offset, with_anomaly) in plan {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        let mut files = Vec::new();
        for i in 0..count {
            let seed = base_seed + offset + i as u64;
            let sample: Sample = generate_phantom(params, seed, with_anomaly).into();
            let sample_dir = dir.join(format!("sample_{i:05}"));
            save_sample(&sample_dir, &sample)?;
            for file in ["image.uads", "mask.uads", "label.uads"] {
                files.push(format!("sample_{i:05}/{file}"));
            }
        }
        let mut manifest = String::new();
        let _ = writeln!(manifest, "count={count}");
        let _ = writeln!(manifest, "size={}", params.size);
        let _ = writeln!(manifest, "anomalous={}", with_anomaly as u8);
        let _ = writeln!(manifest, "seed_base={}", base_seed + offset);
        let _ = writeln!(manifest);
        for rel in &files {
            let bytes = fs::read(dir.join(rel))?;
            let _ = writeln!(manifest, "{}  {rel}", sha256_hex(&bytes));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
    }
    Ok(())
}

/// Load a split directory, verifying the manifest checksums of every file.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>, DataError> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| DataError::Manifest { path: manifest_path.clone(), msg: e.to_string() })?;

    let mut count: Option<usize> = None;
    let mut in_header = true;
    let mut sample_dirs = std::collections::BTreeSet::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            in_header = false;
            continue;
        }
        if in_header {
            if let Some(v) = line.strip_prefix("count=") {
                count = v.parse().ok();
            }
            continue;
        }
        let (hash, rel) = line.split_once("  ").ok_or_else(|| DataError::Manifest {
            path: manifest_path.clone(),
            msg: format!("bad file line {line:?}"),
        })?;
        let path = dir.join(rel);
        let bytes = fs::read(&path)?;
        if sha256_hex(&bytes) != hash {
            return Err(DataError::Checksum { path });
        }
        if let Some((sample_dir, _)) = rel.split_once('/') {
            sample_dirs.insert(sample_dir.to_string());
        }
    }
    let count = count.ok_or_else(|| DataError::Manifest {
        path: manifest_path.clone(),
        msg: "missing count= header".into(),
    })?;
    if sample_dirs.len() != count {
        return Err(DataError::Manifest {
            path: manifest_path,
            msg: format!("manifest lists {} samples, header says {count}", sample_dirs.len()),
        });
    }
    sample_dirs.iter().map(|name| load_sample(&dir.join(name))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn uads_round_trips_both_dtypes() {
        let tmp = TempDir::new().unwrap();
        let f = tmp.path().join("t.uads");
        write_uads_f32(&f, &[2, 3], &[1.0, -2.5, 0.0, 3.5, 4.0, 5.5]).unwrap();
        let t = read_uads(&f).unwrap();
        assert_eq!(t.shape(), [2, 3]);
        assert_eq!(t.data(), [1.0, -2.5, 0.0, 3.5, 4.0, 5.5]);

        let g = tmp.path().join("u.uads");
        write_uads_u8(&g, &[4], &[0, 1, 1, 0]).unwrap();
        let t = read_uads(&g).unwrap();
        assert_eq!(t.data(), [0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn uads_rejects_corruption_distinctly() {
        let tmp = TempDir::new().unwrap();
        let f = tmp.path().join("t.uads");
        write_uads_f32(&f, &[2], &[1.0, 2.0]).unwrap();
        let good = fs::read(&f).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&f, &bad).unwrap();
        assert!(matches!(read_uads(&f), Err(DataError::Format { .. })));

        fs::write(&f, &good[..good.len() - 2]).unwrap();
        assert!(matches!(read_uads(&f), Err(DataError::Format { .. })));

        let mut bad = good.clone();
        bad[6] = 9; // dtype byte
        fs::write(&f, &bad).unwrap();
        assert!(matches!(read_uads(&f), Err(DataError::Format { .. })));

        let mut bad = good.clone();
        bad[7] = 4; // rank byte
        fs::write(&f, &bad).unwrap();
        let err = read_uads(&f).unwrap_err();
        assert!(err.to_string().contains("rank"), "{err}");
    }

    #[test]
    fn splits_round_trip_with_verification() {
        let tmp = TempDir::new().unwrap();
        let params = PhantomParams::with_size(32);
        let counts =
            SplitCounts { train: 3, val: 2, test_healthy: 2, test_anomalous: 2 };
        build_splits(tmp.path(), &params, counts, 7).unwrap();

        let train = load_split(&tmp.path().join("train")).unwrap();
        assert_eq!(train.len(), 3);
        assert!(train.iter().all(|s| s.label.data().iter().all(|&v| v == 0.0)));

        let anomalous = load_split(&tmp.path().join("test_anomalous")).unwrap();
        assert_eq!(anomalous.len(), 2);
        assert!(anomalous.iter().all(|s| s.label.data().iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn corrupting_a_sample_fails_the_checksum() {
        let tmp = TempDir::new().unwrap();
        let params = PhantomParams::with_size(32);
        let counts = SplitCounts { train: 2, val: 1, test_healthy: 1, test_anomalous: 1 };
        build_splits(tmp.path(), &params, counts, 7).unwrap();

        let victim = tmp.path().join("train/sample_00001/image.uads");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            load_split(&tmp.path().join("train")),
            Err(DataError::Checksum { .. })
        ));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let params = PhantomParams::with_size(32);
        let counts = SplitCounts { train: 2, val: 1, test_healthy: 1, test_anomalous: 1 };
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        build_splits(a.path(), &params, counts, 11).unwrap();
        build_splits(b.path(), &params, counts, 11).unwrap();
        for split in SPLIT_NAMES {
            let ma = fs::read(a.path().join(split).join("manifest.txt")).unwrap();
            let mb = fs::read(b.path().join(split).join("manifest.txt")).unwrap();
            assert_eq!(ma, mb, "{split} manifests differ");
        }
    }

    #[test]
    fn disjoint_seed_ranges_across_splits() {
        // train[i] and val[i] come from different seeds, so their images
        // must differ even at matching indices.
        let tmp = TempDir::new().unwrap();
        let params = PhantomParams::with_size(32);
        let counts = SplitCounts { train: 2, val: 2, test_healthy: 1, test_anomalous: 1 };
        build_splits(tmp.path(), &params, counts, 3).unwrap();
        let train = load_split(&tmp.path().join("train")).unwrap();
        let val = load_split(&tmp.path().join("val")).unwrap();
        assert_ne!(train[0].image.data(), val[0].image.data());
    }
}
