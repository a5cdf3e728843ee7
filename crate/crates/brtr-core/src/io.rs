//! Binary tensor/mask file formats and directory bundles.
//!
//! `.brt`: magic "BRT1", u32 LE mode count, per-mode u64 LE dims, then the
//! elements as f64 LE in first-index-fastest order. `.brm`: magic "BRM1",
//! same header, one byte per element in {0,1}. A core chain serializes as
//! magic "BRTC", u32 LE core count, then the cores as concatenated `.brt`
//! payloads.

use crate::error::{Error, Result};
use crate::synth::{SynthProblem, SynthSpec};
use crate::tensor::{DenseTensor, IndexMask, Shape};
use crate::tr::TRCores;
use std::io::{Read, Write};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"BRT1";
const MASK_MAGIC: &[u8; 4] = b"BRM1";
const CHAIN_MAGIC: &[u8; 4] = b"BRTC";

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], dims: &[usize]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&u32::try_from(dims.len()).map_err(|_| too_many_modes())?.to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn too_many_modes() -> Error {
    Error::Format("mode count exceeds u32".into())
}

fn read_exact_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], kind: &str) -> Result<Shape> {
    let got: [u8; 4] = read_exact_array(r)?;
    if &got != magic {
        return Err(Error::Format(format!("bad magic for {kind} file")));
    }
    let nm = u32::from_le_bytes(read_exact_array(r)?) as usize;
    let mut dims = Vec::with_capacity(nm);
    for _ in 0..nm {
        let d = u64::from_le_bytes(read_exact_array(r)?);
        dims.push(usize::try_from(d).map_err(|_| Error::Format("dim exceeds usize".into()))?);
    }
    Shape::new(dims)
}

fn write_tensor_payload<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    write_header(w, TENSOR_MAGIC, t.shape().dims())?;
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor_payload<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let shape = read_header(r, TENSOR_MAGIC, "tensor")?;
    let mut bytes = vec![0u8; shape.len() * 8];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DenseTensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor_payload(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let t = read_tensor_payload(&mut r)?;
    expect_eof(&mut r, "tensor")?;
    Ok(t)
}

pub fn write_mask(path: &Path, mask: &IndexMask) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, MASK_MAGIC, mask.shape().dims())?;
    w.write_all(mask.bits())?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<IndexMask> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let shape = read_header(&mut r, MASK_MAGIC, "mask")?;
    let mut bits = vec![0u8; shape.len()];
    r.read_exact(&mut bits)?;
    expect_eof(&mut r, "mask")?;
    if let Some(bad) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Format(format!("mask byte {bad} outside {{0,1}}")));
    }
    IndexMask::new(shape, bits)
}

pub fn write_cores(path: &Path, cores: &TRCores) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHAIN_MAGIC)?;
    w.write_all(&u32::try_from(cores.cores().len()).map_err(|_| too_many_modes())?.to_le_bytes())?;
    for core in cores.cores() {
        write_tensor_payload(&mut w, core)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cores(path: &Path) -> Result<TRCores> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let got: [u8; 4] = read_exact_array(&mut r)?;
    if &got != CHAIN_MAGIC {
        return Err(Error::Format("bad magic for core chain file".into()));
    }
    let n = u32::from_le_bytes(read_exact_array(&mut r)?) as usize;
    let cores: Result<Vec<DenseTensor>> = (0..n).map(|_| read_tensor_payload(&mut r)).collect();
    let chain = TRCores::new(cores?)?;
    expect_eof(&mut r, "core chain")?;
    Ok(chain)
}

fn expect_eof<R: Read>(r: &mut R, kind: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format(format!("trailing bytes after {kind} payload"))),
    }
}

/// Write a generated problem as a directory: y.brt, mask.brm, truth_low.brt,
/// truth_sparse.brt, spec.json.
pub fn write_problem_dir(dir: &Path, spec: &SynthSpec, problem: &SynthProblem) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_tensor(&dir.join("y.brt"), &problem.y)?;
    write_mask(&dir.join("mask.brm"), &problem.mask)?;
    write_tensor(&dir.join("truth_low.brt"), &problem.truth_low)?;
    write_tensor(&dir.join("truth_sparse.brt"), &problem.truth_sparse)?;
    let json = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Format(format!("spec serialization: {e}")))?;
    std::fs::write(dir.join("spec.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_problem;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("brtr-io-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let dir = tmpdir("tensor");
        let t = DenseTensor::new(
            Shape::new(vec![2, 3]).unwrap(),
            vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300, 0.0, -0.0],
        )
        .unwrap();
        let path = dir.join("t.brt");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tensor_header_layout_matches_format() {
        let dir = tmpdir("header");
        let t = DenseTensor::new(Shape::new(vec![2, 1]).unwrap(), vec![1.0, 2.0]).unwrap();
        let path = dir.join("h.brt");
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"BRT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 24 + 16);
    }

    #[test]
    fn mask_round_trip_and_validation() {
        let dir = tmpdir("mask");
        let mask = IndexMask::new(Shape::new(vec![2, 2]).unwrap(), vec![1, 0, 1, 1]).unwrap();
        let path = dir.join("m.brm");
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back.bits(), mask.bits());

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 2;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Format(_))));
    }

    #[test]
    fn core_chain_round_trip() {
        let c1 = DenseTensor::new(Shape::new(vec![1, 2, 3]).unwrap(), (0..6).map(f64::from).collect())
            .unwrap();
        let c2 = DenseTensor::new(Shape::new(vec![3, 2, 1]).unwrap(), (6..12).map(f64::from).collect())
            .unwrap();
        let cores = TRCores::new(vec![c1, c2]).unwrap();
        let dir = tmpdir("chain");
        let path = dir.join("c.brtc");
        write_cores(&path, &cores).unwrap();
        let back = read_cores(&path).unwrap();
        assert_eq!(back.cores().len(), 2);
        for (a, b) in back.cores().iter().zip(cores.cores()) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tmpdir("magic");
        let path = dir.join("bad.brt");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tmpdir("trail");
        let t = DenseTensor::new(Shape::new(vec![1]).unwrap(), vec![7.0]).unwrap();
        let path = dir.join("t.brt");
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }

    #[test]
    fn problem_dir_round_trips_through_files() {
        let spec = SynthSpec {
            dims: vec![3, 4],
            true_rank: vec![1, 2, 1],
            mr: 0.25,
            sr: 0.1,
            snr_db: Some(10.0),
            seed: 3,
        };
        let problem = gen_problem(&spec).unwrap();
        let dir = tmpdir("problem");
        write_problem_dir(&dir, &spec, &problem).unwrap();
        let y = read_tensor(&dir.join("y.brt")).unwrap();
        let mask = read_mask(&dir.join("mask.brm")).unwrap();
        let low = read_tensor(&dir.join("truth_low.brt")).unwrap();
        assert_eq!(y.data(), problem.y.data());
        assert_eq!(mask.bits(), problem.mask.bits());
        assert_eq!(low.data(), problem.truth_low.data());
        let text = std::fs::read_to_string(dir.join("spec.json")).unwrap();
        let back: SynthSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.dims, spec.dims);
        assert_eq!(back.seed, spec.seed);
    }
}
