//! Record encoding, the GRU over the current trajectory, positional encoding
//! and the orientation attention over recent trajectories.

use std::ops::Range;

use rand::Rng;

use crate::nn::Linear;
use crate::tensor::{Init, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// Learned time representation: component 0 is `ω₀τ + φ₀`, the rest are
/// `sin(ωᵢτ + φᵢ)`.
#[derive(Clone, Copy, Debug)]
pub struct Time2Vec {
    pub omega: ParamId,
    pub phase: ParamId,
    pub width: usize,
}

impl Time2Vec {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Time2Vec {
            omega: store.register(
                format!("{name}.omega"),
                &[1, width],
                Init::Uniform(1.0),
                rng,
            ),
            phase: store.register(
                format!("{name}.phase"),
                &[1, width],
                Init::Uniform(1.0),
                rng,
            ),
            width,
        }
    }

    /// One row per entry of `tau`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tau: &[f64],
    ) -> Result<Var, TensorError> {
        let t = tape.constant(Tensor::column(tau.iter().map(|&x| T::of(x)).collect()));
        let omega = tape.param(store, self.omega);
        let phase = tape.param(store, self.phase);
        let lin = tape.matmul(t, omega)?;
        let lin = tape.add_row(lin, phase)?;
        if self.width == 1 {
            return Ok(lin);
        }
        let linear = tape.slice_cols(lin, 0, 1)?;
        let periodic = tape.slice_cols(lin, 1, self.width)?;
        let periodic = tape.sin(periodic);
        tape.concat_cols(&[linear, periodic])
    }
}

/// Weekday and hour Time2Vec blocks, concatenated.
#[derive(Clone, Copy, Debug)]
pub struct TimeEncoder {
    pub weekday: Time2Vec,
    pub hour: Time2Vec,
}

impl TimeEncoder {
    pub fn register<T: Real>(store: &mut ParamStore<T>, width: usize, rng: &mut impl Rng) -> Self {
        TimeEncoder {
            weekday: Time2Vec::register(store, "time.weekday", width, rng),
            hour: Time2Vec::register(store, "time.hour", width, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.weekday.width + self.hour.width
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        weekday: &[u8],
        hour: &[u8],
    ) -> Result<Var, TensorError> {
        let w: Vec<f64> = weekday.iter().map(|&x| x as f64).collect();
        let h: Vec<f64> = hour.iter().map(|&x| x as f64).collect();
        let a = self.weekday.forward(tape, store, &w)?;
        let b = self.hour.forward(tape, store, &h)?;
        tape.concat_cols(&[a, b])
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/width))`, `PE[pos, 2i+1] = cos(..)`.
pub fn positional_encoding(len: usize, width: usize) -> Vec<f64> {
    assert!(width % 2 == 0, "positional encoding width must be even");
    let mut out = Vec::with_capacity(len * width);
    for pos in 0..len {
        for i in 0..width / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / width as f64);
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    out
}

/// GRU with PyTorch gate layout `[reset, update, new]`:
///
/// ```text
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub input: Linear,
    pub hidden: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Hidden states of a batched GRU run. Step `t` of sequence `g` is row
/// `t * batch + g` of `states`; rows past a sequence's end repeat its last
/// state.
pub struct GruRun {
    pub states: Var,
    pub batch: usize,
    pub lengths: Vec<usize>,
}

impl GruRun {
    pub fn row(&self, seq: usize, step: usize) -> usize {
        debug_assert!(step < self.lengths[seq]);
        step * self.batch + seq
    }

    pub fn final_rows(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|g| self.row(g, self.lengths[g] - 1))
            .collect()
    }
}

impl Gru {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Gru {
            input: Linear::register(
                store,
                &format!("{name}.ih"),
                input_dim,
                3 * hidden_dim,
                true,
                rng,
            ),
            hidden: Linear::register(
                store,
                &format!("{name}.hh"),
                hidden_dim,
                3 * hidden_dim,
                true,
                rng,
            ),
            input_dim,
            hidden_dim,
        }
    }

    pub fn scalar_count(input_dim: usize, hidden_dim: usize) -> usize {
        Linear::scalar_count(input_dim, 3 * hidden_dim, true)
            + Linear::scalar_count(hidden_dim, 3 * hidden_dim, true)
    }

    /// One step from pre-projected input `gi = x W_ih + b_ih`.
    pub fn cell<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        gi: Var,
        h: Var,
    ) -> Result<Var, TensorError> {
        let hd = self.hidden_dim;
        let gh = self.hidden.forward(tape, store, h)?;
        let (ir, hr) = (tape.slice_cols(gi, 0, hd)?, tape.slice_cols(gh, 0, hd)?);
        let (iz, hz) = (
            tape.slice_cols(gi, hd, 2 * hd)?,
            tape.slice_cols(gh, hd, 2 * hd)?,
        );
        let (inn, hn) = (
            tape.slice_cols(gi, 2 * hd, 3 * hd)?,
            tape.slice_cols(gh, 2 * hd, 3 * hd)?,
        );
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn)?;
        let n = tape.add(inn, rh)?;
        let n = tape.tanh(n);
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }

    /// Runs every sequence (row indices into `inputs`) in one batch. `h0`
    /// defaults to zeros.
    pub fn run<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: Var,
        seqs: &[Vec<usize>],
        h0: Option<Var>,
    ) -> Result<GruRun, TensorError> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(TensorError::Invalid {
                op: "gru",
                msg: "empty sequence".into(),
            });
        }
        let g = seqs.len();
        let gi_all = self.input.forward(tape, store, inputs)?;
        let mut h = match h0 {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(&[g, self.hidden_dim])),
        };
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let idx: Vec<usize> = seqs.iter().map(|s| s[t.min(s.len() - 1)]).collect();
            let active: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
            let gi = tape.gather_rows(gi_all, &idx)?;
            let next = self.cell(tape, store, gi, h)?;
            h = if active.iter().all(|&a| a) {
                next
            } else {
                tape.row_where(&active, next, h)?
            };
            steps.push(h);
        }
        let states = tape.concat_rows(&steps)?;
        Ok(GruRun {
            states,
            batch: g,
            lengths: seqs.iter().map(Vec::len).collect(),
        })
    }
}

/// Two-layer scoring MLP `β = w₂ relu(W₁ [Q(r) ‖ u_short] + b₁) + b₂` with
/// softmax weights over each sample's recent records.
#[derive(Clone, Copy, Debug)]
pub struct Orientation {
    /// The first layer split into its record and query blocks.
    pub w_record: Linear,
    pub w_query: Linear,
    pub out: Linear,
}

pub struct OrientationOutput {
    pub mid: Var,
    /// `[pairs, 1]` attention weights, sample-major.
    pub weights: Var,
}

impl Orientation {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        record_dim: usize,
        query_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Orientation {
            w_record: Linear::register(store, "orient.record", record_dim, hidden, true, rng),
            w_query: Linear::register(store, "orient.query", query_dim, hidden, false, rng),
            out: Linear::register(store, "orient.out", hidden, 1, true, rng),
        }
    }

    pub fn scalar_count(record_dim: usize, query_dim: usize, hidden: usize) -> usize {
        Linear::scalar_count(record_dim, hidden, true)
            + Linear::scalar_count(query_dim, hidden, false)
            + Linear::scalar_count(hidden, 1, true)
    }

    /// `recent` holds encoded recent records; sample `s` attends over rows
    /// `ranges[s]` of it with query row `s` of `query`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        recent: Var,
        query: Var,
        ranges: &[Range<usize>],
    ) -> Result<OrientationOutput, TensorError> {
        if ranges.iter().any(|r| r.is_empty()) {
            return Err(TensorError::Invalid {
                op: "orientation",
                msg: "empty recent sequence".into(),
            });
        }
        let (mut rows, mut owner) = (Vec::new(), Vec::new());
        for (s, r) in ranges.iter().enumerate() {
            rows.extend(r.clone());
            owner.extend(std::iter::repeat_n(s, r.len()));
        }
        let a = self.w_record.forward(tape, store, recent)?;
        let b = self.w_query.forward(tape, store, query)?;
        let a = tape.gather_rows(a, &rows)?;
        let b = tape.gather_rows(b, &owner)?;
        let hidden = tape.add(a, b)?;
        let hidden = tape.relu(hidden);
        let beta = self.out.forward(tape, store, hidden)?;
        let weights = tape.segment_softmax(beta, &owner)?;
        let q = tape.gather_rows(recent, &rows)?;
        let weighted = tape.mul_col(q, weights)?;
        let mid = tape.scatter_add(weighted, &owner, ranges.len())?;
        Ok(OrientationOutput { mid, weights })
    }
}
