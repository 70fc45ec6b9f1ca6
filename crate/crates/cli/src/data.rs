//! Synthetic datasets and the CSV dataset format.
//!
//! One sample per line: `d` comma-separated features followed by the label.
//! A first line that does not parse as numbers is treated as a header.

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sketchyggn::network::{forward, init_network, Dataset};
use sketchyggn::rng::component_rng;

use crate::error::{CliError, Result};

/// Hidden width of the random teacher network.
pub const TEACHER_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Outputs of a fresh random network, rescaled to `‖y‖∞ ≤ 1`.
    Teacher,
    /// Uniform ±1.
    Signs,
    Zeros,
}

/// `n` inputs uniform on the unit sphere in `R^d`, labelled per `labels`.
pub fn generate_dataset(n: usize, d: usize, seed: u64, labels: LabelMode) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(CliError::Usage(format!("dataset shape must be positive, got n={n}, d={d}")));
    }
    let mut rng = component_rng(seed, "dataset-inputs", 0);
    let mut x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
    for mut col in x.column_iter_mut() {
        // A zero Gaussian draw has probability zero; resample defensively anyway.
        while col.norm() == 0.0 {
            col.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
        let norm = col.norm();
        col /= norm;
    }
    let unlabeled = Dataset::new(x, DVector::zeros(n))?;
    let y = match labels {
        LabelMode::Zeros => DVector::zeros(n),
        LabelMode::Signs => {
            let mut rng = component_rng(seed, "dataset-signs", 0);
            DVector::from_fn(n, |_, _| if rng.next_u32() & 1 == 1 { -1.0 } else { 1.0 })
        }
        LabelMode::Teacher => {
            let teacher = init_network(TEACHER_WIDTH, d, sketchyggn::rng::derive_seed(seed, "teacher", 0))?;
            let f = forward(&teacher, &unlabeled)?;
            let peak = f.amax();
            if peak > 0.0 {
                f / peak
            } else {
                f
            }
        }
    };
    Ok(unlabeled.with_labels(y)?)
}

fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|field| {
            let field = field.trim();
            field
                .parse::<f64>()
                .map_err(|_| format!("field {field:?} is not a number"))
        })
        .collect()
}

/// Reads a dataset file; non-unit inputs are rejected unless `normalize`.
pub fn load_dataset(path: &Path, normalize: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_dataset(&text, path, normalize)
}

pub fn parse_dataset(text: &str, path: &Path, normalize: bool) -> Result<Dataset> {
    let err = |line: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_row(line) {
            Ok(values) => rows.push((line_no, values)),
            Err(_) if rows.is_empty() && idx == 0 => continue,
            Err(message) => return Err(err(line_no, message)),
        }
    }
    let Some((first_line, first)) = rows.first() else {
        return Err(err(1, "no samples".into()));
    };
    let width = first.len();
    if width < 2 {
        return Err(err(*first_line, "need at least one feature and a label".into()));
    }
    let d = width - 1;
    let mut x = DMatrix::zeros(d, rows.len());
    let mut y = DVector::zeros(rows.len());
    for (i, (line_no, values)) in rows.iter().enumerate() {
        if values.len() != width {
            return Err(err(
                *line_no,
                format!("expected {width} fields, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(*line_no, "non-finite value".into()));
        }
        x.column_mut(i).copy_from_slice(&values[..d]);
        y[i] = values[d];
        if !normalize {
            let norm = x.column(i).norm();
            if (norm - 1.0).abs() > sketchyggn::network::UNIT_NORM_TOL {
                return Err(err(
                    *line_no,
                    format!("input has norm {norm:.6}; pass --normalize to rescale"),
                ));
            }
        }
    }
    let data = if normalize {
        Dataset::normalized(x, y)
    } else {
        Dataset::new(x, y)
    };
    data.map_err(|e| err(*first_line, e.to_string()))
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = Vec::new();
    let header: Vec<String> = (0..data.input_dim())
        .map(|c| format!("x{c}"))
        .chain(std::iter::once("y".to_string()))
        .collect();
    writeln!(out, "{}", header.join(",")).expect("writing to memory");
    for i in 0..data.len() {
        let fields: Vec<String> = data
            .inputs()
            .column(i)
            .iter()
            .chain(std::iter::once(&data.labels()[i]))
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", fields.join(",")).expect("writing to memory");
    }
    fs::write(path, out).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
