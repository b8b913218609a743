//! `FWCK` checkpoint files.
//!
//! Layout: magic `FWCK`, u32 version, u32-length-prefixed network manifest,
//! one `FWTN` block per conv weight and bias (bias stored as
//! `(1, c_out, 1, 1)`) in layer order, the optimizer state, u64 epoch, u64
//! shuffle-rng counter, and the u32-length-prefixed config snapshot (TOML).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ConvLayer, LayerSpec, Network, NetworkSpec};
use crate::optim::OptimState;
use crate::tensor::{read_exact, read_u32, read_u64, Shape, Tensor};
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: OptimState,
    /// Number of completed epochs.
    pub epoch: u64,
    pub rng_state: u64,
    pub config: TrainConfig,
}

fn write_text<W: Write>(w: &mut W, text: &str) -> Result<()> {
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

fn read_text<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Integrity(format!("truncated {what}")));
    }
    String::from_utf8(buf).map_err(|_| Error::Integrity(format!("{what} is not UTF-8")))
}

fn read_block(r: &mut impl Read, expected: Shape, what: &str) -> Result<Tensor<f32>> {
    let t = Tensor::read_dump(r)?;
    if t.shape() != expected {
        return Err(Error::Integrity(format!("{what} has shape {}, manifest implies {expected}", t.shape())));
    }
    Ok(t)
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_text(w, &self.network.spec().to_manifest())?;
        for conv in self.network.convs() {
            conv.weights().write_dump(w)?;
            Tensor::from_vec((1, conv.c_out(), 1, 1), conv.bias().to_vec())?.write_dump(w)?;
        }
        self.optimizer.write_to(w)?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&self.rng_state.to_le_bytes())?;
        write_text(w, &self.config.to_toml()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let spec = NetworkSpec::from_manifest(&read_text(r, "manifest")?)?;
        let mut convs = Vec::with_capacity(spec.conv_count());
        let shapes: Vec<_> = spec
            .layers()
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv { c_in, c_out, kernel } => Some((c_in, c_out, kernel)),
                _ => None,
            })
            .collect();
        for (i, (c_in, c_out, (kh, kw))) in shapes.into_iter().enumerate() {
            let weights = read_block(r, Shape::new(c_out, c_in, kh, kw), &format!("conv {i} weights"))?;
            let bias = read_block(r, Shape::new(1, c_out, 1, 1), &format!("conv {i} bias"))?;
            convs.push(ConvLayer::new(weights, bias.into_vec())?);
        }
        let network = Network::from_parts(spec, convs)?;
        let optimizer = OptimState::read_from(r)?;
        let epoch = read_u64(r)?;
        let rng_state = read_u64(r)?;
        let config = TrainConfig::from_toml(&read_text(r, "config snapshot")?)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Integrity("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { network, optimizer, epoch, rng_state, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Checkpoint::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_interpolator;
    use crate::optim::Hyper;
    use crate::tensor::Rng;

    fn sample() -> Checkpoint {
        let spec = build_interpolator(6, 4, 0.1, 0.1).unwrap();
        let network = Network::init(spec, &Rng::new(3)).unwrap();
        Checkpoint {
            network,
            optimizer: OptimState::new(Hyper::adam(1e-3)),
            epoch: 7,
            rng_state: 42,
            config: TrainConfig { embed_dim: 4, ..TrainConfig::default() },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FWCK");
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let x: Tensor<f32> = Rng::new(9).uniform_tensor((1, 6, 8, 8), 0.0, 1.0).unwrap();
        assert_eq!(back.network.predict(&x).unwrap(), ck.network.predict(&x).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        for cut in [6, 40, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(Checkpoint::read_from(&mut &buf[..cut]), Err(Error::Integrity(_))),
                "cut at {cut}"
            );
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read_from(&mut long.as_slice()), Err(Error::Integrity(_))));
    }
}
