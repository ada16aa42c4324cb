//! Checkpoint container: magic, little-endian `u64` header length, a JSON
//! header (architecture, scales, RFF seed and σ', block list), then every
//! block as raw little-endian `f64` in header order. Frozen RFF matrices are
//! stored as ordinary blocks so a round trip is bitwise lossless.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeepOnetArch, DeepOnetModel, PinnArch, PinnModel, RffEmbedding, TimeMarchingPinn};
use crate::autodiff::ParamVector;
use crate::error::{Error, Result};
use crate::mat::Mat;

const MAGIC: &[u8; 8] = b"BOWSIMCK";
const FORMAT_VERSION: u32 = 1;

/// Any trained surrogate.
#[derive(Clone, Debug, PartialEq)]
pub enum Surrogate {
    Pinn(TimeMarchingPinn),
    DeepOnet(DeepOnetModel),
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelHeader {
    Pinn { arch: PinnArch, blocks: Vec<BlockHeader> },
    DeepOnet { arch: DeepOnetArch, blocks: Vec<BlockHeader> },
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    models: Vec<ModelHeader>,
}

fn blocks_of(params: &ParamVector, rff: [(&str, &RffEmbedding); 2]) -> (Vec<BlockHeader>, Vec<f64>) {
    let mut headers: Vec<BlockHeader> = params
        .layers()
        .iter()
        .map(|l| BlockHeader { name: l.name.clone(), rows: l.rows, cols: l.cols })
        .collect();
    let mut data = params.as_slice().to_vec();
    for (name, emb) in rff {
        let b = emb.matrix();
        headers.push(BlockHeader { name: name.to_string(), rows: b.rows(), cols: b.cols() });
        data.extend_from_slice(b.as_slice());
    }
    (headers, data)
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: None, reason: reason.into() }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Surrogate) -> Result<()> {
    let mut models = Vec::new();
    let mut data = Vec::new();
    match model {
        Surrogate::Pinn(tm) => {
            for m in &tm.windows {
                let (rp, rq) = m.rff();
                let (blocks, d) = blocks_of(&m.params, [("rff.p", rp), ("rff.q", rq)]);
                models.push(ModelHeader::Pinn { arch: m.arch().clone(), blocks });
                data.extend(d);
            }
        }
        Surrogate::DeepOnet(m) => {
            let (rb, rt) = m.rff();
            let (blocks, d) = blocks_of(&m.params, [("rff.branch", rb), ("rff.trunk", rt)]);
            models.push(ModelHeader::DeepOnet { arch: m.arch().clone(), blocks });
            data.extend(d);
        }
    }
    let header = serde_json::to_vec(&Header { version: FORMAT_VERSION, models })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn take_blocks(blocks: &[BlockHeader], data: &mut std::slice::Iter<'_, f64>) -> Result<Vec<Mat>> {
    blocks
        .iter()
        .map(|b| {
            let n = b.rows * b.cols;
            let values: Vec<f64> = data.by_ref().take(n).copied().collect();
            if values.len() != n {
                return Err(bad(format!("payload ends inside block {}", b.name)));
            }
            Ok(Mat::from_vec(b.rows, b.cols, values))
        })
        .collect()
}

fn assemble(
    layout: &crate::autodiff::Layout,
    blocks: &[BlockHeader],
    mats: Vec<Mat>,
) -> Result<(ParamVector, Mat, Mat)> {
    let n = layout.layers().len();
    if blocks.len() != n + 2 {
        return Err(bad(format!("expected {} blocks, header lists {}", n + 2, blocks.len())));
    }
    for (spec, b) in layout.layers().iter().zip(blocks) {
        if spec.name != b.name || spec.rows != b.rows || spec.cols != b.cols {
            return Err(bad(format!("block {} does not match the architecture", b.name)));
        }
    }
    let mut flat = Vec::with_capacity(layout.len());
    let mut mats = mats.into_iter();
    for m in mats.by_ref().take(n) {
        flat.extend(m.into_vec());
    }
    let params = ParamVector::from_flat(layout, flat)?;
    let r1 = mats.next().ok_or_else(|| bad("missing RFF block"))?;
    let r2 = mats.next().ok_or_else(|| bad("missing RFF block"))?;
    Ok((params, r1, r2))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Surrogate> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.version)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut it = data.iter();

    let mut windows = Vec::new();
    let mut deeponet = None;
    for m in &header.models {
        match m {
            ModelHeader::Pinn { arch, blocks } => {
                let mats = take_blocks(blocks, &mut it)?;
                let (params, rp, rq) = assemble(&arch.layout(), blocks, mats)?;
                let rff = (
                    RffEmbedding::from_matrix(rp, arch.sigma_prime),
                    RffEmbedding::from_matrix(rq, arch.sigma_prime),
                );
                windows.push(PinnModel::from_parts(arch.clone(), Some(rff), params)?);
            }
            ModelHeader::DeepOnet { arch, blocks } => {
                let mats = take_blocks(blocks, &mut it)?;
                let (params, rb, rt) = assemble(&arch.layout(), blocks, mats)?;
                let rff = (
                    RffEmbedding::from_matrix(rb, arch.sigma_prime),
                    RffEmbedding::from_matrix(rt, arch.sigma_prime),
                );
                deeponet = Some(DeepOnetModel::from_parts(arch.clone(), Some(rff), params)?);
            }
        }
    }
    if it.next().is_some() {
        return Err(bad("trailing data after the last block"));
    }
    match (deeponet, windows.is_empty()) {
        (Some(d), true) if header.models.len() == 1 => Ok(Surrogate::DeepOnet(d)),
        (None, false) => Ok(Surrogate::Pinn(TimeMarchingPinn { windows })),
        _ => Err(bad("checkpoint must hold PINN windows or one DeepONet")),
    }
}

pub fn save(path: &Path, model: &Surrogate) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, model).map_err(|e| with_path(e, path))?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Surrogate> {
    let file = std::fs::File::open(path).map_err(|e| Error::Checkpoint {
        path: Some(path.to_path_buf()),
        reason: e.to_string(),
    })?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Checkpoint { reason, .. } => Error::Checkpoint { path: Some(path.to_path_buf()), reason },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pinn_arch(t_start: f64) -> PinnArch {
        PinnArch {
            width: 6,
            depth: 2,
            c_rff: 3,
            sigma_prime: 1.0,
            scale_t: 0.02,
            scale_pq: 0.2,
            t_start,
            rff_seed: 17,
        }
    }

    #[test]
    fn pinn_round_trip_is_bitwise() {
        let tm = TimeMarchingPinn {
            windows: vec![
                PinnModel::new(pinn_arch(0.0), 1).unwrap(),
                PinnModel::new(pinn_arch(0.02), 2).unwrap(),
            ],
        };
        let model = Surrogate::Pinn(tm);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn deeponet_round_trip_is_bitwise() {
        let arch = DeepOnetArch {
            width: 4,
            depth: 1,
            c_rff: 2,
            sigma_prime: 3.0,
            output_dim: 4,
            scale_t: 0.01,
            scale_pq: 2.0,
            rff_seed: 5,
        };
        let model = Surrogate::DeepOnet(DeepOnetModel::new(arch, 3).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), model);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = Surrogate::Pinn(TimeMarchingPinn { windows: vec![PinnModel::new(pinn_arch(0.0), 1).unwrap()] });
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 8]), Err(Error::Checkpoint { .. })));
        assert!(matches!(read_checkpoint(&b"NOTACKPT"[..]), Err(Error::Checkpoint { .. })));
        let mut extra = buf.clone();
        extra.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(read_checkpoint(extra.as_slice()), Err(Error::Checkpoint { .. })));
    }
}
