//! Synthetic class-conditional datasets.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, RngStream, Tensor};

pub const RINGS_CLASSES: usize = 8;
pub const RINGS_STD: f64 = 0.1;
pub const SEQ_CLASSES: usize = 4;
pub const SEQ_LEN: usize = 16;
pub const SEQ_CHANNELS: usize = 4;
pub const SEQ_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyDataset {
    /// Eight 2-d Gaussians (std 0.1) centred on the unit circle.
    Rings2d,
    /// Four classes of 16×4 sinusoid sequences with small noise.
    Seqtoy,
}

impl fmt::Display for ToyDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyDataset::Rings2d => "rings2d",
            ToyDataset::Seqtoy => "seqtoy",
        })
    }
}

impl FromStr for ToyDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rings2d" => Ok(ToyDataset::Rings2d),
            "seqtoy" => Ok(ToyDataset::Seqtoy),
            other => Err(Error::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

impl ToyDataset {
    pub fn num_classes(&self) -> usize {
        match self {
            ToyDataset::Rings2d => RINGS_CLASSES,
            ToyDataset::Seqtoy => SEQ_CLASSES,
        }
    }

    /// `(L, D)` of one item.
    pub fn item_shape(&self) -> (usize, usize) {
        match self {
            ToyDataset::Rings2d => (1, 2),
            ToyDataset::Seqtoy => (SEQ_LEN, SEQ_CHANNELS),
        }
    }

    pub fn item_len(&self) -> usize {
        let (l, d) = self.item_shape();
        l * d
    }

    fn noise_std(&self) -> f64 {
        match self {
            ToyDataset::Rings2d => RINGS_STD,
            ToyDataset::Seqtoy => SEQ_NOISE,
        }
    }

    /// Noise-free generating point of class `c`, flattened row-major.
    pub fn template(&self, c: usize) -> Result<Vec<f64>> {
        if c >= self.num_classes() {
            return Err(Error::UnknownClass(c));
        }
        Ok(match self {
            ToyDataset::Rings2d => {
                let angle = TAU * c as f64 / RINGS_CLASSES as f64;
                vec![angle.cos(), angle.sin()]
            }
            ToyDataset::Seqtoy => {
                let mut v = Vec::with_capacity(SEQ_LEN * SEQ_CHANNELS);
                for p in 0..SEQ_LEN {
                    for j in 0..SEQ_CHANNELS {
                        let phase = std::f64::consts::FRAC_PI_4 * j as f64;
                        v.push((TAU * (c + 1) as f64 * p as f64 / SEQ_LEN as f64 + phase).sin());
                    }
                }
                v
            }
        })
    }

    /// One item of class `c`.
    pub fn generate(&self, c: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
        let mut v = self.template(c)?;
        let std = self.noise_std();
        for (x, e) in v.iter_mut().zip(stream.normals(self.item_len())) {
            *x += std * e;
        }
        Ok(v)
    }

    /// Items for the given classes, `[n×L×D]`.
    pub fn generate_for<T: Element>(&self, classes: &[usize], stream: &mut RngStream) -> Result<Tensor<T>> {
        let (l, d) = self.item_shape();
        let mut data = Vec::with_capacity(classes.len() * l * d);
        for &c in classes {
            data.extend(self.generate(c, stream)?.into_iter().map(T::of));
        }
        Tensor::new(data, &[classes.len(), l, d])
    }

    /// i.i.d. draws from the class mixture with uniform class probabilities.
    pub fn draw<T: Element>(&self, count: usize, stream: &mut RngStream) -> Result<(Tensor<T>, Vec<usize>)> {
        let labels = if count == 0 {
            Vec::new()
        } else {
            stream.integers(0, self.num_classes() - 1, count)
        };
        let x = self.generate_for(&labels, stream)?;
        Ok((x, labels))
    }
}
