//! Small layer helpers shared by the encoders and heads.

use rand::Rng;

use crate::rng::StreamRng;
use crate::tensor::{Init, ParamId, ParamStore, Real, Tape, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Used by hand-checked tests.
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// `x W (+ b)` with `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.register(
            format!("{name}.weight"),
            &[input, output],
            Init::XavierUniform,
            rng,
        );
        let b =
            bias.then(|| store.register(format!("{name}.bias"), &[1, output], Init::Zeros, rng));
        Linear { w, b }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn scalar_count(input: usize, output: usize, bias: bool) -> usize {
        input * output + if bias { output } else { 0 }
    }
}

pub fn embedding<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    rows: usize,
    width: usize,
    rng: &mut impl Rng,
) -> ParamId {
    store.register(name, &[rows, width], Init::Uniform(0.1), rng)
}

/// Random streams consumed by one forward pass.
pub struct StepRngs {
    pub dropout: StreamRng,
    pub edge_drop: StreamRng,
}

impl StepRngs {
    pub fn for_epoch(seed: u64, epoch: u64) -> Self {
        StepRngs {
            dropout: crate::rng::stream(seed, crate::rng::DROPOUT, epoch),
            edge_drop: crate::rng::stream(seed, crate::rng::EDGE_DROP, epoch),
        }
    }
}

/// Keeps each of `n` edges with probability `1 - rate` in training mode; all
/// edges survive in eval mode.
pub fn edge_keep_mask(n: usize, rate: f64, training: bool, rng: &mut impl Rng) -> Vec<bool> {
    if !training || rate == 0.0 {
        return vec![true; n];
    }
    (0..n).map(|_| rng.random::<f64>() >= rate).collect()
}
