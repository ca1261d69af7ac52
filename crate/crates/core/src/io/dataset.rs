use std::fmt::Write as _;
use std::path::Path;

use super::{put_f64s, IoError, Reader, Result, MAGIC};
use crate::autodiff::Matrix;
use crate::dynamics::{Dataset, Trajectory};

pub const DATASET_VERSION: u32 = 1;

/// Header `KHDM`, version, `N_s`, `N_T + 1`, `N_C`, `dt`, seed, then every
/// trajectory column-major as little-endian `f64`.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n_s, steps, n_c) = (ds.state_dim(), ds.steps(), ds.len());
    let mut out = Vec::with_capacity(48 + 8 * n_s * steps * n_c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [n_s as u64, steps as u64, n_c as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.dt.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for t in &ds.trajectories {
        put_f64s(&mut out, t.values.as_slice());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(IoError::Format("missing KHDM magic".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(IoError::Format(format!("expected dataset version {DATASET_VERSION}, found {version:#x}")));
    }
    let (n_s, steps, n_c) = (r.usize()?, r.usize()?, r.usize()?);
    let dt = r.f64()?;
    let seed = r.u64()?;
    let mut trajectories = Vec::with_capacity(n_c.min(1 << 20));
    for _ in 0..n_c {
        let values = Matrix::from_vec(n_s, steps, r.f64s(n_s * steps)?);
        trajectories.push(Trajectory { values, dt, t0: 0.0 });
    }
    if !r.finished() {
        return Err(IoError::Format("trailing bytes after dataset".into()));
    }
    Dataset::new(trajectories, dt, seed).map_err(|e| IoError::Format(e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// Long-form CSV `trajectory,step,t,x1..xN`.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut s = String::from("trajectory,step,t");
    for d in 1..=ds.state_dim() {
        let _ = write!(s, ",x{d}");
    }
    s.push('\n');
    for (k, t) in ds.trajectories.iter().enumerate() {
        for (j, col) in t.values.column_iter().enumerate() {
            let _ = write!(s, "{k},{j},{}", t.t0 + j as f64 * t.dt);
            for v in col.iter() {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_dataset, SystemSpec};

    #[test]
    fn round_trip_is_exact() {
        let ds = sample_dataset(&SystemSpec::lorenz63(), 3, 1.0, 0.05, 7).unwrap();
        let bytes = encode_dataset(&ds);
        assert_eq!(bytes.len(), 48 + 8 * 3 * 21 * 3);
        assert_eq!(&bytes[..4], b"KHDM");
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn header_layout() {
        let ds = sample_dataset(&SystemSpec::vanderpol(), 2, 0.5, 0.25, 9).unwrap();
        let b = encode_dataset(&ds);
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 0.25);
        assert_eq!(u64::from_le_bytes(b[40..48].try_into().unwrap()), 9);
        // first trajectory, first state, first component
        assert_eq!(f64::from_le_bytes(b[48..56].try_into().unwrap()), ds.trajectories[0].values[(0, 0)]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ds = sample_dataset(&SystemSpec::vanderpol(), 1, 0.5, 0.25, 1).unwrap();
        let b = encode_dataset(&ds);
        assert!(decode_dataset(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode_dataset(&extra).is_err());
        let mut v = b;
        v[7] = 0x80;
        assert!(decode_dataset(&v).is_err());
    }

    #[test]
    fn csv_rows() {
        let ds = sample_dataset(&SystemSpec::vanderpol(), 2, 0.5, 0.25, 1).unwrap();
        let csv = dataset_to_csv(&ds);
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.starts_with("trajectory,step,t,x1,x2\n"));
    }
}
