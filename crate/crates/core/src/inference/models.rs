//! The two heuristic networks.
//!
//! Riskmap2 (one pass per task): each grid position carries
//! `affine(risk) + start_embedding[start] + dest_embedding[dest]`, with no
//! positional term; a per-position head emits class logits and the argmax
//! class is the heuristic value.
//!
//! State (one pass per search node): the map is padded to `max_size` with
//! risk 1, each cell becomes `affine(risk) + sinusoid(position)`, and a task
//! token `affine(x, y, safety) + affine(dest_x, dest_y)` is appended last
//! without a positional term. The task token's encoder output goes through a
//! scalar head, a sigmoid and the bundle's scale.

use super::encoder::{encoder_forward, Probe};
use super::tensor::{linear, sigmoid, sinusoidal_encoding, Matrix};
use super::weights::{Architecture, ModelKind, ModelWeights};
use super::InferenceError;
use crate::heuristics::HeuristicTable;
use crate::riskmap::{Cell, RiskMap};

/// Risk used for cells added by padding: never traversable.
pub const PADDING_RISK: f64 = 1.0;

/// Row-major flattening of a square map: `seq[y * n + x] = risk(x, y)`.
pub fn flatten(map: &RiskMap) -> Result<Vec<f64>, InferenceError> {
    if !map.is_square() {
        return Err(InferenceError::NonSquare {
            width: map.width(),
            height: map.height(),
        });
    }
    Ok(map.risks().to_vec())
}

/// Token of a cell on an `n x n` map; same order as [`flatten`].
pub fn tokenize(cell: Cell, n: usize) -> usize {
    cell.y * n + cell.x
}

/// Riskmap2 model input.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedTask {
    pub start_token: usize,
    pub dest_token: usize,
    pub risk_seq: Vec<f64>,
}

impl TokenizedTask {
    pub fn new(map: &RiskMap, start: Cell, dest: Cell) -> Result<Self, InferenceError> {
        let risk_seq = flatten(map)?;
        let n = map.width();
        for cell in [start, dest] {
            if !map.contains(cell) {
                return Err(InferenceError::OutOfBounds(cell));
            }
        }
        Ok(Self {
            start_token: tokenize(start, n),
            dest_token: tokenize(dest, n),
            risk_seq,
        })
    }
}

fn expect_kind(weights: &ModelWeights, kind: ModelKind) -> Result<(), InferenceError> {
    if weights.kind() != kind {
        return Err(InferenceError::WrongKind {
            expected: kind.as_str(),
            found: weights.kind().as_str(),
        });
    }
    Ok(())
}

/// Per-grid class logits, `n^2 x classes`.
pub fn riskmap2_forward(
    map: &RiskMap,
    start: Cell,
    dest: Cell,
    weights: &ModelWeights,
) -> Result<Matrix, InferenceError> {
    expect_kind(weights, ModelKind::Riskmap2)?;
    let n = weights.architecture().side();
    if map.width() != n || map.height() != n {
        return Err(InferenceError::SizeMismatch {
            model: n,
            width: map.width(),
            height: map.height(),
        });
    }
    riskmap2_forward_tokens(&TokenizedTask::new(map, start, dest)?, weights, None)
}

pub fn riskmap2_forward_tokens(
    input: &TokenizedTask,
    weights: &ModelWeights,
    mut probe: Option<&mut Probe>,
) -> Result<Matrix, InferenceError> {
    expect_kind(weights, ModelKind::Riskmap2)?;
    let arch = weights.architecture();
    let seq_len = arch.sequence_len();
    if input.risk_seq.len() != seq_len {
        return Err(InferenceError::DimMismatch {
            what: "risk sequence length",
            expected: seq_len,
            found: input.risk_seq.len(),
        });
    }
    for token in [input.start_token, input.dest_token] {
        if token >= seq_len {
            return Err(InferenceError::DimMismatch {
                what: "position token",
                expected: seq_len,
                found: token,
            });
        }
    }
    let d = arch.d_model;
    let risk_w = weights.data("risk_embedding.weight");
    let risk_b = weights.data("risk_embedding.bias");
    let start = &weights.data("start_embedding.weight")[input.start_token * d..(input.start_token + 1) * d];
    let dest = &weights.data("dest_embedding.weight")[input.dest_token * d..(input.dest_token + 1) * d];

    let mut x = Matrix::zeros(seq_len, d);
    for (row, &r) in x.rows_iter_mut().zip(&input.risk_seq) {
        for c in 0..d {
            row[c] = r * risk_w[c] as f64 + risk_b[c] as f64 + start[c] as f64 + dest[c] as f64;
        }
    }
    Probe::record(&mut probe, "embedding", &x);
    let encoded = encoder_forward(x, weights, 0..arch.layers, probe.as_deref_mut())?;
    let logits = linear(&encoded, weights.data("head.weight"), weights.data("head.bias"));
    Probe::record(&mut probe, "logits", &logits);
    Ok(logits)
}

/// Argmax per row; ties go to the lowest class index.
pub fn riskmap2_decode(logits: &Matrix, side: usize) -> Result<HeuristicTable, InferenceError> {
    if logits.rows() != side * side || logits.cols() == 0 {
        return Err(InferenceError::DimMismatch {
            what: "logit rows",
            expected: side * side,
            found: logits.rows(),
        });
    }
    let h = logits
        .rows_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as f64
        })
        .collect();
    Ok(HeuristicTable::new(side, side, h).expect("argmax values are finite and non-negative"))
}

/// State model input after padding.
#[derive(Debug, Clone, PartialEq)]
pub struct StateInput {
    /// `max_size^2` risks, row-major over the padded grid.
    pub risk_seq: Vec<f64>,
    pub current: (f64, f64, f64),
    pub dest: (f64, f64),
}

impl StateInput {
    pub fn new(map: &RiskMap, current: Cell, safety: f64, dest: Cell, max_size: usize) -> Result<Self, InferenceError> {
        if map.width() > max_size || map.height() > max_size {
            return Err(InferenceError::MapTooLarge {
                width: map.width(),
                height: map.height(),
                max: max_size,
            });
        }
        for cell in [current, dest] {
            if !map.contains(cell) {
                return Err(InferenceError::OutOfBounds(cell));
            }
        }
        Ok(Self {
            risk_seq: pad_risks(map, max_size),
            current: (current.x as f64, current.y as f64, safety),
            dest: (dest.x as f64, dest.y as f64),
        })
    }
}

/// Copies the map into the top-left corner of a `side x side` grid of
/// padding risk.
pub fn pad_risks(map: &RiskMap, side: usize) -> Vec<f64> {
    let mut seq = vec![PADDING_RISK; side * side];
    for (y, row) in map.risks().chunks_exact(map.width()).enumerate() {
        seq[y * side..y * side + map.width()].copy_from_slice(row);
    }
    seq
}

/// Heuristic value for one search node, in `[0, scale]`.
pub fn state_forward(
    map: &RiskMap,
    current: Cell,
    safety: f64,
    dest: Cell,
    weights: &ModelWeights,
) -> Result<f64, InferenceError> {
    expect_kind(weights, ModelKind::State)?;
    let input = StateInput::new(map, current, safety, dest, weights.architecture().side())?;
    state_forward_input(&input, weights, None)
}

pub fn state_forward_input(
    input: &StateInput,
    weights: &ModelWeights,
    mut probe: Option<&mut Probe>,
) -> Result<f64, InferenceError> {
    expect_kind(weights, ModelKind::State)?;
    let arch = weights.architecture();
    let grid = arch.side() * arch.side();
    if input.risk_seq.len() != grid {
        return Err(InferenceError::DimMismatch {
            what: "padded risk sequence length",
            expected: grid,
            found: input.risk_seq.len(),
        });
    }
    let d = arch.d_model;
    let risk_w = weights.data("risk_embedding.weight");
    let risk_b = weights.data("risk_embedding.bias");
    let pe = sinusoidal_encoding(grid, d);

    let mut x = Matrix::zeros(grid + 1, d);
    for (pos, (row, &r)) in x.rows_iter_mut().zip(&input.risk_seq).enumerate() {
        let pe_row = pe.row(pos);
        for c in 0..d {
            row[c] = r * risk_w[c] as f64 + risk_b[c] as f64 + pe_row[c];
        }
    }
    let (cx, cy, cs) = input.current;
    let current = linear(
        &Matrix::from_vec(1, 3, vec![cx, cy, cs]),
        weights.data("current_embedding.weight"),
        weights.data("current_embedding.bias"),
    );
    let dest = linear(
        &Matrix::from_vec(1, 2, vec![input.dest.0, input.dest.1]),
        weights.data("dest_embedding.weight"),
        weights.data("dest_embedding.bias"),
    );
    for ((t, a), b) in x.row_mut(grid).iter_mut().zip(current.data()).zip(dest.data()) {
        *t = a + b;
    }
    Probe::record(&mut probe, "embedding", &x);

    let encoded = encoder_forward(x, weights, 0..arch.layers, probe.as_deref_mut())?;
    let task = Matrix::from_vec(1, d, encoded.row(grid).to_vec());
    Probe::record(&mut probe, "task_output", &task);
    let z = linear(&task, weights.data("head.weight"), weights.data("head.bias"));
    Probe::record(&mut probe, "head", &z);
    let scale = arch.scale.expect("validated state header has a scale");
    Ok(sigmoid(z.data()[0]) * scale)
}

/// Shapes a probed forward pass must record, derived from the header alone.
pub fn expected_shape_trace(arch: &Architecture) -> Vec<(String, (usize, usize))> {
    let n = arch.sequence_len();
    let d = arch.d_model;
    let mut out = vec![("embedding".to_string(), (n, d))];
    for l in 0..arch.layers {
        let p = format!("encoder.layers.{l}.");
        out.push((format!("{p}self_attn.qkv"), (n, 3 * d)));
        out.push((format!("{p}self_attn.heads"), (n, d)));
        out.push((format!("{p}self_attn.out_proj"), (n, d)));
        out.push((format!("{p}norm1"), (n, d)));
        out.push((format!("{p}linear1"), (n, arch.ffn)));
        out.push((format!("{p}norm2"), (n, d)));
    }
    match arch.kind {
        ModelKind::Riskmap2 => out.push(("logits".into(), (n, arch.classes.unwrap_or(0)))),
        ModelKind::State => {
            out.push(("task_output".into(), (1, d)));
            out.push(("head".into(), (1, 1)));
        }
    }
    out
}
