use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MMFWCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which learner a checkpoint (or run) belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Algorithm {
    #[serde(rename = "maml")]
    Maml,
    #[serde(rename = "fumi")]
    Fumi,
    #[serde(rename = "protonet")]
    ProtoNet,
    #[serde(rename = "am3")]
    Am3,
    #[serde(rename = "am3-zero")]
    Am3Zero,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Maml,
        Algorithm::Fumi,
        Algorithm::ProtoNet,
        Algorithm::Am3,
        Algorithm::Am3Zero,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Algorithm::Maml => 1,
            Algorithm::Fumi => 2,
            Algorithm::ProtoNet => 3,
            Algorithm::Am3 => 4,
            Algorithm::Am3Zero => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Maml => "maml",
            Algorithm::Fumi => "fumi",
            Algorithm::ProtoNet => "protonet",
            Algorithm::Am3 => "am3",
            Algorithm::Am3Zero => "am3-zero",
        }
    }

    pub fn is_gradient_based(self) -> bool {
        matches!(self, Algorithm::Maml | Algorithm::Fumi)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected maml, fumi, protonet, am3 or am3-zero)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("unknown algorithm tag {0}")]
    UnknownAlgorithm(u8),
    #[error("tensor name is not utf-8")]
    BadName,
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named tensors plus the algorithm and a digest of the config that
/// produced them.
///
/// Layout (all integers little-endian): magic `MMFWCKPT`, version `u32`,
/// algorithm tag `u8`, 32-byte config digest, tensor count `u32`, then per
/// tensor a `u16` name length, the name bytes, a `u8` rank, one `u32` per
/// dimension and the `f64` payload. A SHA-256 of everything before it
/// closes the file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub config_digest: [u8; 32],
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.algorithm.tag());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        if bytes.len() < r.pos + 32 {
            return Err(CheckpointError::Truncated);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(CheckpointError::ChecksumMismatch);
        }
        let mut r = Reader { bytes: body, pos: r.pos };
        let tag = r.u8()?;
        let algorithm = Algorithm::from_tag(tag).ok_or(CheckpointError::UnknownAlgorithm(tag))?;
        let mut config_digest = [0u8; 32];
        config_digest.copy_from_slice(r.take(32)?);
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_owned();
            let rank = r.u8()?;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|_| CheckpointError::Truncated)?;
            tensors.push((name, tensor));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Self {
            algorithm,
            config_digest,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_owned()))
    }

    /// Copies tensors named `prefix.*` into `slots`, checking shapes.
    pub fn fill(&self, named: &[(String, Tensor)], slots: Vec<&mut Tensor>) -> Result<(), CheckpointError> {
        for ((name, template), slot) in named.iter().zip(slots) {
            let t = self.get(name)?;
            if t.shape() != template.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: template.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            algorithm: Algorithm::Fumi,
            config_digest: [7; 32],
            tensors: vec![
                ("body.0.weight".into(), Tensor::matrix(2, 3, vec![1., -2., 3.5, 0., 1e-300, -0.0]).unwrap()),
                ("body.0.bias".into(), Tensor::row(vec![f64::MIN_POSITIVE, 4.0, 5.0])),
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"MMFWCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], Algorithm::Fumi.tag());
        assert_eq!(&bytes[13..45], &[7u8; 32]);
        assert_eq!(u32::from_le_bytes(bytes[45..49].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[49..51].try_into().unwrap()), 13);
        assert_eq!(&bytes[51..64], b"body.0.weight");
        assert_eq!(bytes[64], 2);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::ChecksumMismatch)));

        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 9]),
            Err(CheckpointError::ChecksumMismatch)
        ));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT...."), Err(CheckpointError::BadMagic)));

        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(Algorithm::from_tag(a.tag()), Some(a));
        }
        assert!("reptile".parse::<Algorithm>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<u64>(), 1..40),
            cols in 1usize..5,
            tag in 1u8..=5,
        ) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data: Vec<f64> = values[..rows * cols].iter().map(|&b| f64::from_bits(b)).collect();
            let ckpt = Checkpoint {
                algorithm: Algorithm::from_tag(tag).unwrap(),
                config_digest: [tag; 32],
                tensors: vec![("w".into(), Tensor::matrix(rows, cols, data.clone()).unwrap())],
            };
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            let got: Vec<u64> = back.tensors[0].1.data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(back.algorithm, ckpt.algorithm);
            prop_assert_eq!(back.tensors[0].1.shape(), ckpt.tensors[0].1.shape());
            prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
        }
    }
}
