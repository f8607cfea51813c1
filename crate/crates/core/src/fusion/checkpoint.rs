//! Plain-text checkpoint format for fusion network weights.
//!
//! ```text
//! detfusion-checkpoint 1
//! d_h 128
//! d_t 256
//! base_input_dim 46
//! novel_input_dim 40
//! num_classes 14
//! layer base.proj 46 128
//! weight
//! <one matrix row per line, in_dim values>
//! bias
//! <out_dim values>
//! layer base.selu1 128 128
//! ...
//! end
//! ```
//!
//! Layers appear in a fixed order; the header on each layer line repeats its
//! `in_dim out_dim`. Values use the shortest representation that parses back
//! to the same `f64`.

use std::fmt::Write as _;

use thiserror::Error;

use super::net::{Dense, FusionNetParams, NetShape, LAYER_NAMES};

const MAGIC: &str = "detfusion-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
#[error("checkpoint line {line}: {message}")]
pub struct CheckpointError {
    pub line: usize,
    pub message: String,
}

fn push_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

pub fn write_checkpoint(params: &FusionNetParams) -> String {
    let s = params.shape;
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "d_h {}", s.d_h).unwrap();
    writeln!(out, "d_t {}", s.d_t).unwrap();
    writeln!(out, "base_input_dim {}", s.base_input_dim).unwrap();
    writeln!(out, "novel_input_dim {}", s.novel_input_dim).unwrap();
    writeln!(out, "num_classes {}", s.num_classes).unwrap();
    for (name, layer) in LAYER_NAMES.iter().zip(params.layers()) {
        writeln!(out, "layer {name} {} {}", layer.in_dim, layer.out_dim).unwrap();
        out.push_str("weight\n");
        for row in layer.weight.chunks_exact(layer.in_dim.max(1)) {
            push_values(&mut out, row);
        }
        out.push_str("bias\n");
        push_values(&mut out, &layer.bias);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), CheckpointError> {
        let l = self.next()?;
        if l != token {
            return Err(self.err(format!("expected {token:?}, found {l:?}")));
        }
        Ok(())
    }

    fn key_usize(&mut self, key: &str) -> Result<usize, CheckpointError> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected {key:?}, found {l:?}")));
        }
        let v = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("{key} needs a non-negative integer")))?;
        if parts.next().is_some() {
            return Err(self.err(format!("trailing tokens after {key}")));
        }
        Ok(v)
    }

    fn values(&mut self, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let l = self.next()?;
        let vals = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("bad {what} value: {e}")))?;
        if vals.len() != n {
            return Err(self.err(format!("{what} has {} values, expected {n}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.err(format!("non-finite {what} value")));
        }
        Ok(vals)
    }
}

pub fn parse_checkpoint(text: &str) -> Result<FusionNetParams, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    lines.expect(&format!("{MAGIC} {VERSION}"))?;
    let d_h = lines.key_usize("d_h")?;
    let d_t = lines.key_usize("d_t")?;
    let base_input_dim = lines.key_usize("base_input_dim")?;
    let novel_input_dim = lines.key_usize("novel_input_dim")?;
    let num_classes = lines.key_usize("num_classes")?;
    let shape = NetShape {
        base_input_dim,
        novel_input_dim,
        d_h,
        d_t,
        num_classes,
    };
    let mut params = FusionNetParams::zeros(shape);
    for (name, layer) in LAYER_NAMES.iter().zip(params.layers_mut()) {
        let header = format!("layer {name} {} {}", layer.in_dim, layer.out_dim);
        lines.expect(&header)?;
        lines.expect("weight")?;
        let mut weight = Vec::with_capacity(layer.in_dim * layer.out_dim);
        for _ in 0..layer.out_dim {
            weight.extend(lines.values(layer.in_dim, name)?);
        }
        lines.expect("bias")?;
        let bias = lines.values(layer.out_dim, name)?;
        *layer = Dense {
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
            weight,
            bias,
        };
    }
    lines.expect("end")?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> NetShape {
        NetShape {
            base_input_dim: 3,
            novel_input_dim: 2,
            d_h: 4,
            d_t: 5,
            num_classes: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = FusionNetParams::init(shape(), 42);
        p.trunk1.bias[0] = 1e-300;
        p.box_head.bias[3] = -0.1 - 0.2;
        let text = write_checkpoint(&p);
        let back = parse_checkpoint(&text).unwrap();
        assert_eq!(back, p);
        assert!(text.starts_with("detfusion-checkpoint 1\nd_h 4\nd_t 5\n"));
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = write_checkpoint(&FusionNetParams::init(shape(), 1));
        let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        let err = parse_checkpoint(&cut).unwrap_err();
        assert_eq!(err.line, 13);
        assert!(err.message.contains("end of file"));
    }

    #[test]
    fn wrong_row_width() {
        let text = write_checkpoint(&FusionNetParams::zeros(shape()));
        let broken = text.replacen("0.0 0.0 0.0\n", "0.0 0.0\n", 1);
        let err = parse_checkpoint(&broken).unwrap_err();
        assert_eq!(err.line, 9);
        assert!(err.message.contains("expected 3"));
    }
}
