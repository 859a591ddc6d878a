//! Binary checkpoint: architecture + optimizer config as a JSON header,
//! then parameters and Adam moments as raw little-endian f64.
//!
//! Layout: magic "UVCK", version u32, header length u32, header JSON,
//! then three n_params-long f64 arrays (params, first moment, second
//! moment).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::{NetConfig, Network};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"UVCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    adam: AdamConfig,
    t: u64,
    n_params: usize,
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, net: &Network, adam: &AdamState) -> Result<()> {
    let (m, v) = adam.moments();
    if m.len() != net.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} parameters, network has {}",
            m.len(),
            net.n_params()
        )));
    }
    let header = Header {
        net: net.config().clone(),
        adam: *adam.config(),
        t: adam.t(),
        n_params: net.n_params(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    for arr in [&net.params()[..], m, v] {
        for x in arr {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(Network, AdamState)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for the magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)
        .map_err(|_| Error::Checkpoint("missing version field".into()))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    file.read_exact(&mut word)
        .map_err(|_| Error::Checkpoint("missing header length".into()))?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;

    let mut net = Network::new(&header.net, 0)?;
    if net.n_params() != header.n_params {
        return Err(Error::Checkpoint(format!(
            "header claims {} parameters, architecture has {}",
            header.n_params,
            net.n_params()
        )));
    }
    let mut read_arr = |what: &str| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; header.n_params * 8];
        file.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated {what} block")))?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let params = read_arr("parameter")?;
    let m = read_arr("first-moment")?;
    let v = read_arr("second-moment")?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the moment blocks".into()));
    }
    net.set_params(&params)?;
    let adam = AdamState::restore(header.adam, m, v, header.t)?;
    Ok((net, adam))
}
