//! Line-oriented checkpoint format.
//!
//! Each tensor is a header line `name rows cols` followed by `rows` lines of `cols`
//! space-separated values. Values use the shortest representation that parses back
//! to the same float, so a save/load round trip is exact.

use std::io::{BufRead, Write};

use crate::error::{FlowError, Result};
use crate::mlp::{Activation, FlatView, MlpParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

pub fn write_tensors<T: Scalar, W: Write>(out: &mut W, tensors: &[Tensor<T>]) -> Result<()> {
    for t in tensors {
        if t.name.is_empty() || t.name.contains(char::is_whitespace) {
            return Err(FlowError::InvalidInput(format!("bad tensor name `{}`", t.name)));
        }
        if t.values.len() != t.rows * t.cols {
            return Err(FlowError::DimensionMismatch {
                expected: t.rows * t.cols,
                got: t.values.len(),
            });
        }
        writeln!(out, "{} {} {}", t.name, t.rows, t.cols)?;
        for r in 0..t.rows {
            let row = &t.values[r * t.cols..(r + 1) * t.cols];
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_tensors<T: Scalar, R: BufRead>(input: R) -> Result<Vec<Tensor<T>>> {
    let mut lines = input.lines().enumerate();
    let mut out = Vec::new();
    while let Some((lineno, header)) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || FlowError::Parse {
            row: lineno + 1,
            column: 1,
            message: format!("expected `name rows cols`, got `{header}`"),
        };
        if parts.len() != 3 {
            return Err(bad_header());
        }
        let rows: usize = parts[1].parse().map_err(|_| bad_header())?;
        let cols: usize = parts[2].parse().map_err(|_| bad_header())?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (lineno, line) = lines.next().ok_or_else(|| FlowError::Parse {
                row: lineno + 1,
                column: 1,
                message: format!("tensor `{}` is truncated", parts[0]),
            })?;
            let line = line?;
            let before = values.len();
            for (c, tok) in line.split_whitespace().enumerate() {
                let v = T::from_str_radix(tok, 10).map_err(|_| FlowError::Parse {
                    row: lineno + 1,
                    column: c + 1,
                    message: format!("not a number: `{tok}`"),
                })?;
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(FlowError::Parse {
                    row: lineno + 1,
                    column: 1,
                    message: format!("expected {cols} values, got {}", values.len() - before),
                });
            }
        }
        out.push(Tensor {
            name: parts[0].to_string(),
            rows,
            cols,
            values,
        });
    }
    Ok(out)
}

/// Tensors `{prefix}l{k}.w` (`n_out x n_in`) and `{prefix}l{k}.b` (`1 x n_out`).
pub fn mlp_tensors<T: Scalar>(prefix: &str, params: &MlpParams<T>) -> Vec<Tensor<T>> {
    let sizes = params.sizes();
    let mut out = Vec::new();
    for l in 0..params.layers() {
        out.push(Tensor {
            name: format!("{prefix}l{l}.w"),
            rows: sizes[l + 1],
            cols: sizes[l],
            values: params.weights(l).to_vec(),
        });
        out.push(Tensor {
            name: format!("{prefix}l{l}.b"),
            rows: 1,
            cols: sizes[l + 1],
            values: params.biases(l).to_vec(),
        });
    }
    out
}

/// Rebuilds a network of the given architecture from tensors named as by [`mlp_tensors`].
pub fn mlp_from_tensors<T: Scalar>(
    prefix: &str,
    tensors: &[Tensor<T>],
    sizes: &[usize],
    activations: &[Activation],
) -> Result<MlpParams<T>> {
    let find = |name: String, rows: usize, cols: usize| -> Result<&Tensor<T>> {
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| FlowError::InvalidInput(format!("checkpoint has no tensor `{name}`")))?;
        if t.rows != rows || t.cols != cols {
            return Err(FlowError::InvalidInput(format!(
                "tensor `{name}` is {}x{}, expected {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        Ok(t)
    };
    let mut flat = Vec::new();
    for l in 0..sizes.len().saturating_sub(1) {
        flat.extend_from_slice(&find(format!("{prefix}l{l}.w"), sizes[l + 1], sizes[l])?.values);
        flat.extend_from_slice(&find(format!("{prefix}l{l}.b"), 1, sizes[l + 1])?.values);
    }
    MlpParams::from_flat(sizes, activations, FlatView(flat))
}

pub fn save<T: Scalar>(path: &std::path::Path, tensors: &[Tensor<T>]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(&mut file, tensors)?;
    file.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: &std::path::Path) -> Result<Vec<Tensor<T>>> {
    read_tensors(std::io::BufReader::new(std::fs::File::open(path)?))
}
