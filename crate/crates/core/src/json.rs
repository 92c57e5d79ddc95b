//! JSON wire formats used across the toolkit.
//!
//! Matrices are encoded as `{"dim": N, "entries": [[[re, im], ...], ...]}`
//! with row-major nesting; real entries are accepted as bare numbers.
//! Floating-point output is serialized with 17 significant digits so repeated
//! runs and cross-language comparisons are byte-exact.

use serde::Serialize;
use serde_json::{json, Value};

use crate::engine::QfiReport;
use crate::ensemble::PureEnsemble;
use crate::family::StateFamily;
use crate::hermitian::{C64, CMatrix, CVector, DensityMatrix, HermitianMatrix};
use crate::matrix_repr::{BlockedState, CrossCoupling, StateBlock};
use crate::{Error, Result};

fn parse_err(ctx: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{ctx}: {msg}"))
}

fn entry_from_value(v: &Value, ctx: &str) -> Result<C64> {
    match v {
        Value::Number(x) => Ok(C64::new(
            x.as_f64().ok_or_else(|| parse_err(ctx, "non-finite number"))?,
            0.0,
        )),
        Value::Array(pair) if pair.len() == 2 => {
            let re = pair[0]
                .as_f64()
                .ok_or_else(|| parse_err(ctx, "real part is not a number"))?;
            let im = pair[1]
                .as_f64()
                .ok_or_else(|| parse_err(ctx, "imaginary part is not a number"))?;
            Ok(C64::new(re, im))
        }
        _ => Err(parse_err(
            ctx,
            "expected a number or a [re, im] pair",
        )),
    }
}

fn entry_to_value(z: &C64) -> Value {
    json!([z.re, z.im])
}

fn rows_from_value(v: &Value, ctx: &str) -> Result<Vec<Vec<C64>>> {
    let rows = v
        .as_array()
        .ok_or_else(|| parse_err(ctx, "expected an array of rows"))?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let cells = row
            .as_array()
            .ok_or_else(|| parse_err(&format!("{ctx}[{i}]"), "expected an array"))?;
        let mut parsed = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            parsed.push(entry_from_value(cell, &format!("{ctx}[{i}][{j}]"))?);
        }
        out.push(parsed);
    }
    Ok(out)
}

/// Parses a (possibly rectangular) complex matrix from an `entries` nesting.
pub fn rect_matrix_from_value(v: &Value, ctx: &str) -> Result<CMatrix> {
    let entries = v
        .get("entries")
        .ok_or_else(|| parse_err(ctx, "missing \"entries\""))?;
    let rows = rows_from_value(entries, &format!("{ctx}.entries"))?;
    if rows.is_empty() {
        return Err(parse_err(ctx, "matrix has no rows"));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(parse_err(ctx, "rows have inconsistent lengths"));
    }
    Ok(CMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Parses the repo-wide square matrix encoding, honoring the `dim` field.
pub fn complex_matrix_from_value(v: &Value, ctx: &str) -> Result<CMatrix> {
    let m = rect_matrix_from_value(v, ctx)?;
    if m.nrows() != m.ncols() {
        return Err(parse_err(
            ctx,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    if let Some(dim) = v.get("dim") {
        let dim = dim
            .as_u64()
            .ok_or_else(|| parse_err(ctx, "\"dim\" is not an integer"))? as usize;
        if dim != m.nrows() {
            return Err(parse_err(
                ctx,
                format!("\"dim\" is {dim} but entries form a {}x{} matrix", m.nrows(), m.ncols()),
            ));
        }
    }
    Ok(m)
}

pub fn complex_matrix_to_value(m: &CMatrix) -> Value {
    let entries: Vec<Value> = (0..m.nrows())
        .map(|i| Value::Array((0..m.ncols()).map(|j| entry_to_value(&m[(i, j)])).collect()))
        .collect();
    json!({"dim": m.nrows(), "entries": entries})
}

pub fn vector_from_value(v: &Value, ctx: &str) -> Result<CVector> {
    let cells = v
        .as_array()
        .ok_or_else(|| parse_err(ctx, "expected an array"))?;
    let mut out = CVector::zeros(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        out[i] = entry_from_value(cell, &format!("{ctx}[{i}]"))?;
    }
    Ok(out)
}

pub fn vector_to_value(v: &CVector) -> Value {
    Value::Array(v.iter().map(entry_to_value).collect())
}

fn density_from_value(v: &Value, ctx: &str) -> Result<DensityMatrix> {
    DensityMatrix::new(complex_matrix_from_value(v, ctx)?)
}

fn hermitian_from_value(v: &Value, ctx: &str) -> Result<HermitianMatrix> {
    HermitianMatrix::new(complex_matrix_from_value(v, ctx)?)
}

fn f64_list(v: &Value, ctx: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| parse_err(ctx, "expected an array of numbers"))?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| parse_err(&format!("{ctx}[{i}]"), "not a number"))
        })
        .collect()
}

/// What an input file can describe.
pub enum ParsedInput {
    Family(StateFamily),
    Pair {
        rho: DensityMatrix,
        drho: HermitianMatrix,
    },
    Blocked(BlockedState),
}

/// Dispatches on the input shape: a `blocks` list, an explicit `kind`, or a
/// bare `(rho, drho)` pair.
pub fn parse_input(v: &Value) -> Result<ParsedInput> {
    if v.get("blocks").is_some() {
        return Ok(ParsedInput::Blocked(blocked_from_value(v)?));
    }
    match v.get("kind").and_then(Value::as_str) {
        Some("unitary") => {
            let rho0 = density_from_value(
                v.get("rho0").ok_or_else(|| parse_err("input", "missing \"rho0\""))?,
                "rho0",
            )?;
            let generator = hermitian_from_value(
                v.get("generator")
                    .ok_or_else(|| parse_err("input", "missing \"generator\""))?,
                "generator",
            )?;
            Ok(ParsedInput::Family(StateFamily::unitary(rho0, generator)?))
        }
        Some("sampled_grid") => {
            let thetas = f64_list(
                v.get("thetas").ok_or_else(|| parse_err("input", "missing \"thetas\""))?,
                "thetas",
            )?;
            let mats = v
                .get("matrices")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err("input", "missing \"matrices\" array"))?;
            let matrices: Result<Vec<DensityMatrix>> = mats
                .iter()
                .enumerate()
                .map(|(i, m)| density_from_value(m, &format!("matrices[{i}]")))
                .collect();
            Ok(ParsedInput::Family(StateFamily::sampled_grid(
                thetas, matrices?,
            )?))
        }
        Some("spectral") => {
            let dim = v
                .get("dim")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err("input", "missing integer \"dim\""))?
                as usize;
            let thetas = f64_list(
                v.get("thetas").ok_or_else(|| parse_err("input", "missing \"thetas\""))?,
                "thetas",
            )?;
            let values_raw = v
                .get("eigenvalues")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err("input", "missing \"eigenvalues\" array"))?;
            let values: Result<Vec<Vec<f64>>> = values_raw
                .iter()
                .enumerate()
                .map(|(i, x)| f64_list(x, &format!("eigenvalues[{i}]")))
                .collect();
            let bases_raw = v
                .get("eigenvectors")
                .and_then(Value::as_array)
                .ok_or_else(|| parse_err("input", "missing \"eigenvectors\" array"))?;
            let mut bases = Vec::with_capacity(bases_raw.len());
            for (t, point) in bases_raw.iter().enumerate() {
                let vecs = point.as_array().ok_or_else(|| {
                    parse_err(&format!("eigenvectors[{t}]"), "expected an array of vectors")
                })?;
                let mut basis = CMatrix::zeros(dim, vecs.len());
                for (i, vec) in vecs.iter().enumerate() {
                    let col = vector_from_value(vec, &format!("eigenvectors[{t}][{i}]"))?;
                    if col.len() != dim {
                        return Err(parse_err(
                            &format!("eigenvectors[{t}][{i}]"),
                            format!("vector has length {} but dim is {dim}", col.len()),
                        ));
                    }
                    basis.set_column(i, &col);
                }
                bases.push(basis);
            }
            Ok(ParsedInput::Family(StateFamily::spectral_grid(
                dim, thetas, values?, bases,
            )?))
        }
        Some("pair") => pair_from_value(v),
        Some(other) => Err(parse_err("input", format!("unknown kind \"{other}\""))),
        None if v.get("rho").is_some() => pair_from_value(v),
        None => Err(parse_err(
            "input",
            "expected \"kind\", a (rho, drho) pair, or a \"blocks\" list",
        )),
    }
}

fn pair_from_value(v: &Value) -> Result<ParsedInput> {
    let rho = density_from_value(
        v.get("rho").ok_or_else(|| parse_err("input", "missing \"rho\""))?,
        "rho",
    )?;
    let drho = hermitian_from_value(
        v.get("drho").ok_or_else(|| parse_err("input", "missing \"drho\""))?,
        "drho",
    )?;
    if rho.dim() != drho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: drho.dim(),
        });
    }
    Ok(ParsedInput::Pair { rho, drho })
}

fn blocked_from_value(v: &Value) -> Result<BlockedState> {
    let raw_blocks = v
        .get("blocks")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("input", "\"blocks\" must be an array"))?;
    let mut blocks = Vec::with_capacity(raw_blocks.len());
    for (n, b) in raw_blocks.iter().enumerate() {
        let ctx = format!("blocks[{n}]");
        let weight = b
            .get("Q")
            .and_then(Value::as_f64)
            .ok_or_else(|| parse_err(&ctx, "missing numeric \"Q\""))?;
        let rho = density_from_value(
            b.get("rho").ok_or_else(|| parse_err(&ctx, "missing \"rho\""))?,
            &format!("{ctx}.rho"),
        )?;
        let generator = hermitian_from_value(
            b.get("generator")
                .ok_or_else(|| parse_err(&ctx, "missing \"generator\""))?,
            &format!("{ctx}.generator"),
        )?;
        blocks.push(StateBlock {
            weight,
            rho,
            generator,
        });
    }
    let mut cross = Vec::new();
    if let Some(raw_cross) = v.get("cross_generators") {
        let list = raw_cross
            .as_array()
            .ok_or_else(|| parse_err("cross_generators", "expected an array"))?;
        for (k, c) in list.iter().enumerate() {
            let ctx = format!("cross_generators[{k}]");
            let row_block = c
                .get("row_block")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err(&ctx, "missing integer \"row_block\""))?
                as usize;
            let col_block = c
                .get("col_block")
                .and_then(Value::as_u64)
                .ok_or_else(|| parse_err(&ctx, "missing integer \"col_block\""))?
                as usize;
            let matrix = rect_matrix_from_value(c, &ctx)?;
            cross.push(CrossCoupling {
                row_block,
                col_block,
                matrix,
            });
        }
    }
    BlockedState::new(blocks, cross)
}

pub fn report_to_value(report: &QfiReport) -> Value {
    serde_json::to_value(report).expect("report serialization cannot fail")
}

pub fn ensemble_to_value(e: &PureEnsemble) -> Value {
    let members: Vec<Value> = e
        .members()
        .iter()
        .map(|m| json!({"q": m.weight, "psi": vector_to_value(&m.state)}))
        .collect();
    json!({ "members": members })
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        // 17 significant digits: exact round trip for every f64
        write!(writer, "{:.16e}", value)
    }
}

/// Serializes with every float at 17 significant digits, so identical inputs
/// produce byte-identical output.
pub fn to_string_17(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value
        .serialize(&mut ser)
        .expect("in-memory serialization cannot fail");
    String::from_utf8(out).expect("serializer emits utf-8")
}
