//! FTRJ trajectory files, residual CSV export and selection reports.
//!
//! FTRJ layout (all little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FTRJ"
//!      4     4  version (u32) = 1
//!      8     4  frames T (u32)
//!     12     4  grid side G (u32), 0 = pre-pooled features
//!     16     4  dim D (u32)
//!     20     4  layer index (i32), -1 = unset
//!     24     4  reserved, zero
//!     28     …  T * max(1, G²) * D f32 values, frame-major, token-row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::selection::{SelectionResult, Strategy};
use crate::taylor::ResidualSeries;
use crate::trajectory::{FeatureSequence, PoolSpec, TokenGridSequence};

pub const MAGIC: [u8; 4] = *b"FTRJ";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Contents of an FTRJ file.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Features(FeatureSequence),
    Grid(TokenGridSequence),
}

impl Trajectory {
    pub fn frames(&self) -> usize {
        match self {
            Trajectory::Features(f) => f.frames(),
            Trajectory::Grid(g) => g.frames(),
        }
    }

    /// 0 for pre-pooled features.
    pub fn grid_side(&self) -> usize {
        match self {
            Trajectory::Features(_) => 0,
            Trajectory::Grid(g) => g.grid_side(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Trajectory::Features(f) => f.dim(),
            Trajectory::Grid(g) => g.dim(),
        }
    }

    pub fn layer_index(&self) -> Option<i32> {
        match self {
            Trajectory::Features(f) => f.layer_index,
            Trajectory::Grid(g) => g.layer_index,
        }
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        Ok(match self {
            Trajectory::Features(f) => Trajectory::Features(f.select_frames(indices)?),
            Trajectory::Grid(g) => Trajectory::Grid(g.select_frames(indices)?),
        })
    }

    fn values(&self) -> &[f64] {
        match self {
            Trajectory::Features(f) => f.data(),
            Trajectory::Grid(g) => g.data(),
        }
    }
}

impl From<FeatureSequence> for Trajectory {
    fn from(f: FeatureSequence) -> Self {
        Trajectory::Features(f)
    }
}

impl From<TokenGridSequence> for Trajectory {
    fn from(g: TokenGridSequence) -> Self {
        Trajectory::Grid(g)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn digest_hex(hash: u64) -> String {
    format!("{hash:016x}")
}

fn u32_field(name: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidData(format!("{name} {v} does not fit in u32")))
}

fn encode_payload(values: &[f64], out: &mut Vec<u8>) -> Result<()> {
    out.reserve(values.len() * 4);
    for (i, &v) in values.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::InvalidData(format!(
                "value {v} at flat index {i} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

/// Serializes a trajectory to FTRJ bytes.
pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + traj.values().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field("frames", traj.frames())?.to_le_bytes());
    out.extend_from_slice(&u32_field("grid side", traj.grid_side())?.to_le_bytes());
    out.extend_from_slice(&u32_field("dim", traj.dim())?.to_le_bytes());
    out.extend_from_slice(&traj.layer_index().unwrap_or(-1).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    encode_payload(traj.values(), &mut out)?;
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses FTRJ bytes.
pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"FTRJ\"",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = le_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let frames = le_u32(bytes, 8) as u64;
    let grid = le_u32(bytes, 12) as u64;
    let dim = le_u32(bytes, 16) as u64;
    let layer = le_u32(bytes, 20) as i32;

    let tokens = if grid == 0 { 1 } else { grid * grid };
    let expected = frames
        .checked_mul(tokens)
        .and_then(|n| n.checked_mul(dim))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    if expected != bytes.len() as u64 {
        return Err(Error::TruncatedFile {
            expected,
            actual: bytes.len() as u64,
        });
    }

    let mut values = Vec::with_capacity((expected as usize - HEADER_LEN) / 4);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::InvalidData(format!(
                "non-finite payload value at index {i}"
            )));
        }
        values.push(v as f64);
    }

    let layer_index = (layer != -1).then_some(layer);
    let (frames, grid, dim) = (frames as usize, grid as usize, dim as usize);
    let to_format = |e: Error| match e {
        Error::Shape(m) | Error::InvalidConfig(m) => Error::Format(m),
        Error::EmptyInput => Error::Format("header declares zero frames".into()),
        other => other,
    };
    if grid == 0 {
        let mut f = FeatureSequence::new(frames, dim, values).map_err(to_format)?;
        f.layer_index = layer_index;
        Ok(Trajectory::Features(f))
    } else {
        let mut g = TokenGridSequence::new(frames, grid, dim, values).map_err(to_format)?;
        g.layer_index = layer_index;
        Ok(Trajectory::Grid(g))
    }
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    decode_trajectory(&fs::read(path)?)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_trajectory(traj)?)?;
    Ok(())
}

/// FNV-1a digest of the f32 payload as it is (or would be) stored on disk.
pub fn payload_digest(traj: &Trajectory) -> Result<String> {
    let mut payload = Vec::new();
    encode_payload(traj.values(), &mut payload)?;
    Ok(digest_hex(fnv1a64(&payload)))
}

/// Formats a non-negative real with 9 significant digits (`%#.9g` style);
/// zero prints as `0.000000000`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.000000000".to_string();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        format!("{v:.prec$}", prec = (8 - exp) as usize)
    } else {
        sci
    }
}

/// Writes `frame_index,residual,effective_order,selected` rows.
/// `frame_ids[t]` replaces `t` in the first column when given.
pub fn write_residuals_csv<W: Write>(
    mut out: W,
    r: &ResidualSeries,
    selected: &SelectionResult,
    frame_ids: Option<&[usize]>,
) -> Result<()> {
    if let Some(ids) = frame_ids {
        if ids.len() != r.frames() {
            return Err(Error::Shape(format!(
                "{} frame ids for {} residuals",
                ids.len(),
                r.frames()
            )));
        }
    }
    if let Some(&i) = selected.indices.iter().find(|&&i| i >= r.frames()) {
        return Err(Error::Shape(format!(
            "selected index {i} out of range for {} frames",
            r.frames()
        )));
    }
    let mut is_selected = vec![false; r.frames()];
    selected.indices.iter().for_each(|&i| is_selected[i] = true);

    writeln!(out, "frame_index,residual,effective_order,selected")?;
    for t in 0..r.frames() {
        let id = frame_ids.map_or(t, |ids| ids[t]);
        writeln!(
            out,
            "{id},{},{},{}",
            format_sig9(r.values[t]),
            r.order_used[t],
            is_selected[t] as u8
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_residuals_csv(r: &ResidualSeries, selected: &SelectionResult, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    write_residuals_csv(file, r, selected, None)
}

/// Selection summary written as canonical JSON; field order is the key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub strategy: Strategy,
    pub order: usize,
    pub pool: PoolSpec,
    pub budget: usize,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub digest: String,
}

impl SelectionReport {
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.scores.len() {
            return Err(Error::InvalidData(format!(
                "{} indices but {} scores",
                self.indices.len(),
                self.scores.len()
            )));
        }
        if !self.indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidData("indices are not strictly increasing".into()));
        }
        if let Some(s) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite score {s}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string(self).expect("report serialization is infallible"))
    }
}

/// Writes the report as one line of compact JSON followed by a newline.
pub fn write_selection_json(rep: &SelectionReport, path: impl AsRef<Path>) -> Result<()> {
    let mut json = rep.to_json()?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::ConfigEcho;
    use crate::taylor::TaylorConfig;

    fn fnv_oracle(bytes: &[u8]) -> u64 {
        let mut hash: u64 = 14695981039346656037;
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(1099511628211);
        }
        hash
    }

    #[test]
    fn fnv_matches_oracle_and_vectors() {
        for payload in [&b""[..], &b"a"[..], &[0u8, 0, 128, 63, 0, 0, 0, 192][..]] {
            assert_eq!(fnv1a64(payload), fnv_oracle(payload));
        }
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn single_zero_frame_is_32_bytes() {
        let f = FeatureSequence::new(1, 1, vec![0.0]).unwrap();
        let bytes = encode_trajectory(&f.into()).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[28..], &[0, 0, 0, 0]);
        assert_eq!(&bytes[..4], b"FTRJ");
        assert_eq!(&bytes[20..24], &(-1i32).to_le_bytes());
    }

    #[test]
    fn header_fields_round_trip() {
        let g = TokenGridSequence::new(2, 3, 2, (0..36).map(|v| v as f64 * 0.5).collect()).unwrap();
        let mut traj = Trajectory::Grid(g);
        if let Trajectory::Grid(g) = &mut traj {
            g.layer_index = Some(0);
        }
        let bytes = encode_trajectory(&traj).unwrap();
        assert_eq!(bytes.len(), 28 + 4 * 2 * 9 * 2);
        assert_eq!(decode_trajectory(&bytes).unwrap(), traj);
    }

    #[test]
    fn malformed_files() {
        let f = FeatureSequence::new(2, 3, vec![1.0; 6]).unwrap();
        let good = encode_trajectory(&f.into()).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_trajectory(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_trajectory(b"FT"), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_trajectory(&bad), Err(Error::UnsupportedVersion(2))));

        let short = &good[..good.len() - 4];
        assert!(matches!(
            decode_trajectory(short),
            Err(Error::TruncatedFile { expected: 52, actual: 48 })
        ));
        assert!(matches!(
            decode_trajectory(&good[..12]),
            Err(Error::TruncatedFile { .. })
        ));

        let mut bad = good.clone();
        bad[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_trajectory(&bad), Err(Error::InvalidData(_))));

        let mut bad = good;
        bad[8..12].copy_from_slice(&0u32.to_le_bytes());
        bad.truncate(28);
        assert!(matches!(decode_trajectory(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn write_rejects_f32_overflow() {
        let f = FeatureSequence::new(1, 1, vec![1e300]).unwrap();
        assert!(matches!(encode_trajectory(&f.into()), Err(Error::InvalidData(_))));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0.000000000");
        assert_eq!(format_sig9(1.5), "1.50000000");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(123.456), "123.456000");
        assert_eq!(format_sig9(0.001234), "0.00123400000");
        assert_eq!(format_sig9(9.9999999999), "10.0000000");
        assert_eq!(format_sig9(1e-7), "1.00000000e-7");
        assert_eq!(format_sig9(2.5e12), "2.50000000e12");
    }

    #[test]
    fn csv_rows() {
        let r = ResidualSeries::from_values(vec![0.0, 1.5], TaylorConfig::default(), PoolSpec::PrePooled).unwrap();
        let sel = SelectionResult {
            indices: vec![1],
            scores: vec![1.5],
            strategy: Strategy::SwiftLocalMax,
            config: ConfigEcho::default(),
        };
        let mut buf = Vec::new();
        write_residuals_csv(&mut buf, &r, &sel, None).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frame_index,residual,effective_order,selected\n0,0.000000000,-1,0\n1,1.50000000,0,1\n"
        );

        let none = SelectionResult { indices: vec![], scores: vec![], ..sel };
        let mut buf = Vec::new();
        write_residuals_csv(&mut buf, &r, &none, Some(&[10, 20])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
        assert!(text.contains("\n20,1.50000000,0,0\n"));
    }

    #[test]
    fn report_json_is_canonical() {
        let rep = SelectionReport {
            strategy: Strategy::SwiftLocalMax,
            order: 3,
            pool: PoolSpec::Regions(1),
            budget: 2,
            indices: vec![1, 3],
            scores: vec![5.0, 3.0],
            digest: digest_hex(0xabc),
        };
        assert_eq!(
            rep.to_json().unwrap(),
            r#"{"strategy":"swift_local_max","order":3,"pool":1,"budget":2,"indices":[1,3],"scores":[5.0,3.0],"digest":"0000000000000abc"}"#
        );
        let pre = SelectionReport { pool: PoolSpec::PrePooled, ..rep.clone() };
        assert!(pre.to_json().unwrap().contains(r#""pool":"pre-pooled""#));
        let bad = SelectionReport { indices: vec![3, 1], ..rep };
        assert!(bad.to_json().is_err());
    }
}
