//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The pure functions in [`ops`] do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod ops;

/// Bundled toy check-in file, used as the page's default input.
#[wasm_bindgen]
pub fn sample_checkins() -> String {
    ops::SAMPLE_CHECKINS.to_string()
}

/// Row-major `len x width` sinusoidal position table.
#[wasm_bindgen]
pub fn positional_encoding(len: usize, width: usize) -> Result<Vec<f64>, JsError> {
    ops::positional_encoding(len, width).map_err(|e| JsError::new(&e))
}

/// Freshly initialised Time2Vec parameters: `omega` followed by `phase`.
#[wasm_bindgen]
pub fn time2vec_init(width: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    ops::time2vec_init(width, seed).map_err(|e| JsError::new(&e))
}

/// Time2Vec components sampled at `samples` points of `[0, period)`,
/// row-major `samples x width`.
#[wasm_bindgen]
pub fn time2vec_curves(omega: &[f64], phase: &[f64], period: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    ops::time2vec_curves(omega, phase, period, samples).map_err(|e| JsError::new(&e))
}

/// Preprocesses tab-separated check-ins and returns the global graph as JSON.
#[wasm_bindgen]
pub fn build_graph(tsv: &str) -> Result<String, JsError> {
    let summary = ops::build_graph(tsv).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&summary).map_err(|e| JsError::new(&e.to_string()))
}
