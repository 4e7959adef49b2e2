//! Text checkpoints: a flat list of named, shaped `f64` arrays.
//!
//! ```text
//! ambc-qrl-checkpoint 1
//! phi 3 4 5 3
//! 0.12 3.0 ...
//! w 1 3
//! 1.0 1.0 1.0
//! ```
//!
//! Each array is a header line `<name> <ndim> <dim>...` followed by one line
//! of row-major values. Values use Rust's shortest round-trip formatting, so
//! a save/load cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "ambc-qrl-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> NamedArray {
        let array = NamedArray { name: name.into(), shape, data };
        debug_assert_eq!(array.shape.iter().product::<usize>(), array.data.len());
        array
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(arrays: Vec<NamedArray>) -> Checkpoint {
        Checkpoint { arrays }
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for a in &self.arrays {
            let _ = write!(out, "{} {}", a.name, a.shape.len());
            for d in &a.shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let values: Vec<String> = a.data.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::Checkpoint("missing header".into()));
        }
        let mut arrays = Vec::new();
        while let Some(header) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let mut parts = header.split_whitespace();
            let name = parts.next().ok_or_else(|| Error::Checkpoint("empty array header".into()))?.to_string();
            let parse_usize = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Checkpoint(format!("bad shape in header `{header}`")))
            };
            let ndim = parse_usize(parts.next())?;
            let shape = (0..ndim).map(|_| parse_usize(parts.next())).collect::<Result<Vec<_>>>()?;
            if parts.next().is_some() {
                return Err(Error::Checkpoint(format!("trailing tokens in header `{header}`")));
            }
            let body = lines.next().ok_or_else(|| Error::Checkpoint(format!("array `{name}` has no data line")))?;
            let data = body
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Checkpoint(format!("bad value `{v}` in `{name}`"))))
                .collect::<Result<Vec<_>>>()?;
            if data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("array `{name}` has {} values for shape {shape:?}", data.len())));
            }
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(data in proptest::collection::vec(proptest::num::f64::ANY, 1..40)) {
            let n = data.len();
            let ckpt = Checkpoint::new(vec![
                NamedArray::new("x", vec![n], data.clone()),
                NamedArray::new("scalar", vec![], vec![0.5]),
            ]);
            let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
            let bits: Vec<u64> = back.get("x").unwrap().data.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = data.iter().map(|v| {
                // every NaN payload prints as "NaN"
                if v.is_nan() { f64::NAN.to_bits() } else { v.to_bits() }
            }).collect();
            prop_assert_eq!(bits, want);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(Checkpoint::from_text("nope\n").is_err());
        assert!(Checkpoint::from_text(&format!("{MAGIC}\nw 1 3\n1.0 2.0\n")).is_err());
        assert!(Checkpoint::from_text(&format!("{MAGIC}\nw 1 x\n1.0\n")).is_err());
        assert!(Checkpoint::from_text(&format!("{MAGIC}\nw 1 1\n")).is_err());
        let c = Checkpoint::from_text(&format!("{MAGIC}\nw 2 1 2\n1.5 -0.0\n")).unwrap();
        assert!(c.get("missing").is_err());
        assert_eq!(c.get("w").unwrap().shape, vec![1, 2]);
    }
}
