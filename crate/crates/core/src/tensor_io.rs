//! Tensor files: a one-line text header followed by a little-endian payload.
//!
//! ```text
//! spikekit-tensor/1 dtype=real64 shape=2x3
//! <2*3 f64 values, little-endian>
//! ```
//!
//! `dtype` is `real64` or `int32`. CSV import/export treats the last
//! dimension as columns.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

const MAGIC: &str = "spikekit-tensor/1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Int(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Real(v) => v.len(),
            TensorData::Int(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::Real(_) => "real64",
            TensorData::Int(_) => "int32",
        }
    }

    /// Values as reals (integers widen exactly).
    pub fn to_real(&self) -> Vec<f64> {
        match self {
            TensorData::Real(v) => v.clone(),
            TensorData::Int(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != data.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor element count",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    fn columns(&self) -> usize {
        *self.dims.last().expect("tensor has at least one dimension")
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let shape: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{MAGIC} dtype={} shape={}",
            self.data.dtype(),
            shape.join("x")
        )?;
        match &self.data {
            TensorData::Real(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
            TensorData::Int(v) => v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))?,
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let mut fields = header.trim_end().split(' ');
        if fields.next() != Some(MAGIC) {
            return Err(Error::format("tensor", "missing header"));
        }
        let (mut dtype, mut dims) = (None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("dtype", v)) => dtype = Some(v.to_string()),
                Some(("shape", v)) => {
                    dims = Some(
                        v.split('x')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::format("tensor", format!("bad shape `{v}`")))?,
                    )
                }
                _ => {
                    return Err(Error::format(
                        "tensor",
                        format!("unknown header field `{f}`"),
                    ))
                }
            }
        }
        let dims: Vec<usize> = dims.ok_or_else(|| Error::format("tensor", "header lacks shape"))?;
        let n: usize = dims.iter().product();
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let data = match dtype.as_deref() {
            Some("real64") => {
                check_payload(payload.len(), n, 8)?;
                TensorData::Real(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            Some("int32") => {
                check_payload(payload.len(), n, 4)?;
                TensorData::Int(
                    payload
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => {
                return Err(Error::format("tensor", format!("unknown dtype {other:?}")));
            }
        };
        Tensor::new(dims, data)
    }

    /// One CSV row per slice along the last dimension, no header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        let cols = self.columns();
        match &self.data {
            TensorData::Real(v) => {
                for row in v.chunks(cols) {
                    w.write_record(row.iter().map(|x| format!("{x:?}")))?;
                }
            }
            TensorData::Int(v) => {
                for row in v.chunks(cols) {
                    w.write_record(row.iter().map(i32::to_string))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a headerless rectangular CSV of reals as a 2-D tensor.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(input);
        let mut values = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for record in r.records() {
            let record = record?;
            if *cols.get_or_insert(record.len()) != record.len() {
                return Err(Error::format("tensor csv", format!("row {rows} is ragged")));
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format("tensor csv", format!("bad number `{field}`")))?;
                values.push(v);
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| Error::format("tensor csv", "empty input"))?;
        Tensor::new(vec![rows, cols], TensorData::Real(values))
    }
}

fn check_payload(len: usize, n: usize, width: usize) -> Result<()> {
    if len != n * width {
        return Err(Error::format(
            "tensor",
            format!("payload has {len} bytes, expected {}", n * width),
        ));
    }
    Ok(())
}
