//! Modality-tagged token matrices.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Text];

    pub(crate) fn index(self) -> usize {
        match self {
            Modality::Visual => 0,
            Modality::Text => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" | "image" => Ok(Modality::Visual),
            "text" => Ok(Modality::Text),
            other => Err(Error::format(
                "modality",
                format!("unknown modality `{other}`"),
            )),
        }
    }
}

/// Token-major activations (`tokens x width`) with one modality tag per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    width: usize,
    values: Vec<f64>,
    tags: Vec<Modality>,
}

impl TokenStream {
    pub fn new(width: usize, values: Vec<f64>, tags: Vec<Modality>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Contract("token width must be positive".into()));
        }
        if values.len() != width * tags.len() {
            return Err(Error::DimensionMismatch {
                what: "token values",
                expected: width * tags.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            width,
            values,
            tags,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn token_count(&self) -> usize {
        self.tags.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tags(&self) -> &[Modality] {
        &self.tags
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Number of tokens tagged `m`.
    pub fn count(&self, m: Modality) -> usize {
        self.tags.iter().filter(|&&t| t == m).count()
    }

    /// Indices of tokens tagged `m`, in stream order.
    pub fn indices(&self, m: Modality) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| self.tags[i] == m)
            .collect()
    }

    /// Rows of modality `m` packed into a contiguous matrix.
    pub fn gather(&self, m: Modality) -> Vec<f64> {
        self.indices(m)
            .into_iter()
            .flat_map(|i| self.token(i).iter().copied())
            .collect()
    }

    /// Overwrite the rows of modality `m` from a packed matrix.
    pub fn scatter(&mut self, m: Modality, packed: &[f64]) -> Result<()> {
        let idx = self.indices(m);
        if packed.len() != idx.len() * self.width {
            return Err(Error::DimensionMismatch {
                what: "packed modality rows",
                expected: idx.len() * self.width,
                found: packed.len(),
            });
        }
        let w = self.width;
        for (row, i) in idx.into_iter().enumerate() {
            self.values[i * w..(i + 1) * w].copy_from_slice(&packed[row * w..(row + 1) * w]);
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &TokenStream) -> bool {
        self.width == other.width && self.tags == other.tags
    }
}
