//! `RRLNET1` weight files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       7           magic "RRLNET1"
//! 7       1           activation kind (0 = relu, 1 = leaky)
//! 8       8           f64 leaky slope α (0 for relu)
//! 16      1           bias flag (0 = no biases, 1 = biases follow each layer)
//! 17      4           u32 L = number of widths (d + 1)
//! 21      4 * L       u32 widths n_0 .. n_d
//! ...                 for j = 1..d: W_j row-major (n_{j-1} x n_j f64),
//!                     then b_j (n_j f64) when the bias flag is set
//! ```

use std::io::{Read, Write};

use super::{Activation, Network};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const WEIGHT_FILE_MAGIC: &[u8; 7] = b"RRLNET1";

pub fn write_weights<W: Write>(net: &Network, mut out: W) -> Result<()> {
    out.write_all(WEIGHT_FILE_MAGIC)?;
    let (kind, alpha) = match net.activation() {
        Activation::Relu => (0u8, 0.0),
        Activation::Leaky { alpha } => (1u8, alpha),
    };
    out.write_all(&[kind])?;
    out.write_all(&alpha.to_le_bytes())?;
    out.write_all(&[u8::from(net.biases().is_some())])?;
    let widths = net.widths();
    out.write_all(&(widths.len() as u32).to_le_bytes())?;
    for w in &widths {
        out.write_all(&(*w as u32).to_le_bytes())?;
    }
    for (j, w) in net.weights().iter().enumerate() {
        for v in w.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(bs) = net.biases() {
            for v in bs[j].iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn take<R: Read, const N: usize>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::WeightFile(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(input: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::WeightFile(format!("truncated while reading {what}: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<Network> {
    let magic: [u8; 7] = take(&mut input, "magic")?;
    if &magic != WEIGHT_FILE_MAGIC {
        return Err(Error::WeightFile(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let [kind] = take::<_, 1>(&mut input, "activation kind")?;
    let alpha = f64::from_le_bytes(take(&mut input, "slope")?);
    let activation = match kind {
        0 => Activation::Relu,
        1 => Activation::Leaky { alpha },
        k => return Err(Error::WeightFile(format!("unknown activation kind {k}"))),
    };
    let [bias_flag] = take::<_, 1>(&mut input, "bias flag")?;
    let has_bias = match bias_flag {
        0 => false,
        1 => true,
        f => return Err(Error::WeightFile(format!("bad bias flag {f}"))),
    };
    let count = u32::from_le_bytes(take(&mut input, "width count")?) as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::WeightFile(format!("implausible layer count {count}")));
    }
    let mut widths = Vec::with_capacity(count);
    for _ in 0..count {
        widths.push(u32::from_le_bytes(take(&mut input, "width")?) as usize);
    }
    let mut weights = Vec::with_capacity(count - 1);
    let mut biases = Vec::with_capacity(count - 1);
    for pair in widths.windows(2) {
        let data = read_f64s(&mut input, pair[0] * pair[1], "weights")?;
        weights.push(Matrix::from_shape_vec((pair[0], pair[1]), data).map_err(|e| Error::WeightFile(e.to_string()))?);
        if has_bias {
            biases.push(Vector::from(read_f64s(&mut input, pair[1], "biases")?));
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::WeightFile(format!("{} trailing bytes", rest.len())));
    }
    Network::new(weights, has_bias.then_some(biases), activation)
}
