//! Plain-text model checkpoints.
//!
//! ```text
//! npclab-checkpoint 1
//! fields: activation,widths,n_classes,epochs,seed,variant
//! activation: tanh
//! widths: 32,64,16
//! ...
//!
//! tensor layer0.weight 64 32
//! <one row per line, space separated>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a load restores every
//! parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use npclab_core::model::{Activation, Dense, Mlp};
use npclab_core::Matrix;

use crate::error::{LabError, Result};

pub const MAGIC: &str = "npclab-checkpoint";
pub const VERSION: u32 = 1;
const FIELDS: [&str; 6] = ["activation", "widths", "n_classes", "epochs", "seed", "variant"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub class_weights: Matrix,
    pub epochs: usize,
    pub seed: u64,
    pub variant: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let widths: Vec<String> = self.model.widths().iter().map(|w| w.to_string()).collect();
        writeln!(out, "{MAGIC} {VERSION}").unwrap();
        writeln!(out, "fields: {}", FIELDS.join(",")).unwrap();
        writeln!(out, "activation: {}", self.model.activation().name()).unwrap();
        writeln!(out, "widths: {}", widths.join(",")).unwrap();
        writeln!(out, "n_classes: {}", self.class_weights.rows()).unwrap();
        writeln!(out, "epochs: {}", self.epochs).unwrap();
        writeln!(out, "seed: {}", self.seed).unwrap();
        writeln!(out, "variant: {}", self.variant).unwrap();
        for (i, layer) in self.model.layers().iter().enumerate() {
            write_tensor(&mut out, &format!("layer{i}.weight"), &layer.weight);
            let bias = Matrix::from_vec(1, layer.bias.len(), layer.bias.clone()).unwrap();
            write_tensor(&mut out, &format!("layer{i}.bias"), &bias);
        }
        write_tensor(&mut out, "class_weights", &self.class_weights);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LabError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(format!("reading {}", path.display()), e))?;
        Self::from_text(&text).map_err(|message| LabError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or("empty file")?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(format!("unsupported version {v}")),
            _ => return Err("not an npclab checkpoint".into()),
        }

        let mut header = std::collections::BTreeMap::new();
        let mut declared: Vec<String> = Vec::new();
        let mut rest = Vec::new();
        let mut in_header = true;
        for (n, line) in lines {
            if in_header {
                if line.trim().is_empty() {
                    in_header = false;
                    continue;
                }
                if line.starts_with("tensor ") {
                    in_header = false;
                    rest.push((n, line));
                    continue;
                }
                let (k, v) = line
                    .split_once(':')
                    .ok_or(format!("line {n}: expected `field: value`"))?;
                if k == "fields" {
                    declared = v.split(',').map(|s| s.trim().to_string()).collect();
                } else {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else {
                rest.push((n, line));
            }
        }
        for f in FIELDS {
            if !declared.iter().any(|d| d == f) {
                return Err(format!("field `{f}` not declared"));
            }
        }
        let get = |k: &str| header.get(k).ok_or(format!("missing field `{k}`"));
        let activation = Activation::parse(get("activation")?).ok_or("bad activation")?;
        let widths: Vec<usize> = get("widths")?
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| format!("bad width `{w}`")))
            .collect::<std::result::Result<_, String>>()?;
        let n_classes: usize = get("n_classes")?.parse().map_err(|_| "bad n_classes")?;
        let epochs: usize = get("epochs")?.parse().map_err(|_| "bad epochs")?;
        let seed: u64 = get("seed")?.parse().map_err(|_| "bad seed")?;
        let variant = get("variant")?.clone();
        if widths.len() < 2 {
            return Err("need at least two widths".into());
        }

        let mut tensors = TensorReader {
            lines: rest.into_iter(),
        };
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let weight = tensors.expect(&format!("layer{i}.weight"), w[1], w[0])?;
            let bias = tensors.expect(&format!("layer{i}.bias"), 1, w[1])?;
            layers.push(Dense {
                weight,
                bias: bias.into_vec(),
            });
        }
        let class_weights = tensors.expect("class_weights", n_classes, widths[widths.len() - 1])?;
        let model = Mlp::from_layers(layers, activation).map_err(|e| e.to_string())?;
        Ok(Self {
            model,
            class_weights,
            epochs,
            seed,
            variant,
        })
    }
}

fn write_tensor(out: &mut String, name: &str, m: &Matrix) {
    writeln!(out, "\ntensor {name} {} {}", m.rows(), m.cols()).unwrap();
    for row in m.iter_rows() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", vals.join(" ")).unwrap();
    }
}

struct TensorReader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> TensorReader<'a, I> {
    fn expect(&mut self, name: &str, rows: usize, cols: usize) -> std::result::Result<Matrix, String> {
        let (n, head) = loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(x) => break x,
                None => return Err(format!("missing tensor `{name}`")),
            }
        };
        let want = format!("tensor {name} {rows} {cols}");
        if head.trim() != want {
            return Err(format!("line {n}: expected `{want}`, found `{head}`"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.lines.next().ok_or(format!("tensor `{name}` truncated"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| format!("line {n}: bad number `{tok}`"))?,
                );
            }
            if data.len() - before != cols {
                return Err(format!("line {n}: expected {cols} values"));
            }
        }
        Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
    }
}
