//! Browser bindings. Each exported function returns a JSON string; the
//! plain Rust functions behind them are what the native tests exercise.

use kaconvtext::autodiff::{gelu, Conv1dOptions, ParamSet};
use kaconvtext::embeddings::EmbedMode;
use kaconvtext::layers::{KaConv1dLayer, SplineConfig};
use kaconvtext::models::{ModelSpec, Variant};
use kaconvtext::rng::{stream_rng, Stream};
use kaconvtext::spline::SplineGrid;
use kaconvtext::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_SAMPLES: usize = 2_000;

#[derive(Debug, Serialize)]
pub struct BasisCurves {
    pub xs: Vec<f64>,
    /// One row per basis function, sampled at `xs`.
    pub curves: Vec<Vec<f64>>,
    pub knots: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TapCurve {
    pub tap: usize,
    pub spline: Vec<f64>,
    pub base: Vec<f64>,
    pub total: Vec<f64>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TapCurves {
    pub xs: Vec<f64>,
    pub taps: Vec<TapCurve>,
    pub prelu_slope: f64,
}

#[derive(Debug, Serialize)]
pub struct ParamRow {
    pub component: String,
    pub count: usize,
}

#[derive(Debug, Serialize)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
    pub total: usize,
}

fn linspace(lo: f64, hi: f64, samples: usize) -> Result<Vec<f64>> {
    if !(2..=MAX_SAMPLES).contains(&samples) {
        return Err(Error::InvalidArgument(format!("samples must lie in 2..={MAX_SAMPLES}, got {samples}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    Ok((0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect())
}

/// B-spline basis functions of a uniform grid on [-1, 1], sampled over the
/// extended knot range so the boundary functions are visible in full.
pub fn basis_curves(grid_size: usize, spline_order: usize, samples: usize) -> Result<BasisCurves> {
    let grid = SplineGrid::uniform(grid_size, spline_order, -1.0, 1.0)?;
    let knots = grid.knots().to_vec();
    let xs = linspace(knots[0], knots[knots.len() - 1], samples)?;
    let mut curves = vec![Vec::with_capacity(samples); grid.num_basis()];
    for &x in &xs {
        for (row, b) in curves.iter_mut().zip(grid.basis(x)) {
            row.push(b);
        }
    }
    Ok(BasisCurves { xs, curves, knots })
}

/// A single-channel KAConv layer with kernel 3, initialized from `seed`.
pub fn demo_layer(
    grid_size: usize,
    spline_order: usize,
    scale_noise: f64,
    seed: u64,
) -> Result<(ParamSet, KaConv1dLayer)> {
    let config = SplineConfig {
        grid_size,
        spline_order,
        scale_noise,
        ..SplineConfig::default()
    };
    let mut params = ParamSet::new();
    let mut rng = stream_rng(seed, Stream::Init);
    let layer = KaConv1dLayer::new(&mut params, "demo", 1, 1, 3, Conv1dOptions::default(), &config, &mut rng)?;
    Ok((params, layer))
}

/// `(spline, base)` parts of tap `t` at normalized input `z`.
pub fn tap_parts(params: &ParamSet, layer: &KaConv1dLayer, t: usize, z: f64) -> (f64, f64) {
    let nb = layer.grid.num_basis();
    let coeffs = &params.value(layer.spline_weight).data()[t * nb..(t + 1) * nb];
    let slope = params.value(layer.prelu_slope).data()[0];
    let g = gelu(z);
    let activated = if g >= 0.0 { g } else { slope * g };
    (layer.grid.evaluate(coeffs, z), params.value(layer.base_weight).data()[t] * activated)
}

/// The three tap functions of a freshly initialized demo layer, as functions
/// of the instance-normalized input value.
pub fn tap_curves(grid_size: usize, spline_order: usize, scale_noise: f64, seed: u64, samples: usize) -> Result<TapCurves> {
    let (params, layer) = demo_layer(grid_size, spline_order, scale_noise, seed)?;
    let nb = layer.grid.num_basis();
    let (lo, hi) = layer.grid.range();
    let margin = 0.25 * (hi - lo);
    let xs = linspace(lo - margin, hi + margin, samples)?;
    let taps = (0..layer.kernel)
        .map(|t| {
            let (spline, base): (Vec<f64>, Vec<f64>) = xs.iter().map(|&z| tap_parts(&params, &layer, t, z)).unzip();
            let total = spline.iter().zip(&base).map(|(s, b)| s + b).collect();
            let coefficients = params.value(layer.spline_weight).data()[t * nb..(t + 1) * nb].to_vec();
            TapCurve { tap: t, spline, base, total, coefficients }
        })
        .collect();
    Ok(TapCurves { xs, taps, prelu_slope: params.value(layer.prelu_slope).data()[0] })
}

pub fn param_table(
    model: &str,
    dim: usize,
    vocab_size: usize,
    classes: usize,
    grid_size: usize,
    spline_order: usize,
) -> Result<ParamTable> {
    let variant: Variant = model.parse()?;
    let mut spec = ModelSpec::new(variant, dim, classes);
    spec.spline.grid_size = grid_size;
    spec.spline.spline_order = spline_order;
    spec.validate()?;
    if vocab_size < 3 {
        return Err(Error::InvalidArgument("vocabulary needs PAD, UNK and at least one token".into()));
    }
    let counts = spec.planned_params(vocab_size, EmbedMode::Random);
    Ok(ParamTable {
        rows: counts
            .components
            .into_iter()
            .map(|(component, count)| ParamRow { component, count })
            .collect(),
        total: counts.total,
    })
}

fn to_js<T: Serialize>(result: Result<T>) -> std::result::Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = basisCurves)]
pub fn basis_curves_js(grid_size: usize, spline_order: usize, samples: usize) -> std::result::Result<String, JsError> {
    to_js(basis_curves(grid_size, spline_order, samples))
}

#[wasm_bindgen(js_name = tapCurves)]
pub fn tap_curves_js(
    grid_size: usize,
    spline_order: usize,
    scale_noise: f64,
    seed: u32,
    samples: usize,
) -> std::result::Result<String, JsError> {
    to_js(tap_curves(grid_size, spline_order, scale_noise, u64::from(seed), samples))
}

#[wasm_bindgen(js_name = paramTable)]
pub fn param_table_js(
    model: &str,
    dim: usize,
    vocab_size: usize,
    classes: usize,
    grid_size: usize,
    spline_order: usize,
) -> std::result::Result<String, JsError> {
    to_js(param_table(model, dim, vocab_size, classes, grid_size, spline_order))
}
