//! Trainable layers: baseline `Conv1d`, spline-kernel `KaConv1d`, the KAN
//! layer, the linear softmax head, and a two-stage KAN stack for function
//! fitting.
//!
//! Layers register their arrays in a [`ParamSet`] at construction and keep
//! only [`ParamId`] handles, so forward passes borrow parameters from the set
//! through a [`Tape`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv1dOptions, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spline::{SplineFitter, SplineGrid};

/// Spline hyperparameters shared by `KaConv1d` and KAN layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineConfig {
    pub grid_size: usize,
    pub spline_order: usize,
    pub scale_noise: f64,
    pub scale_base: f64,
    pub scale_spline: f64,
    pub grid_eps: f64,
    pub grid_range: [f64; 2],
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            grid_size: 5,
            spline_order: 3,
            scale_noise: 0.1,
            scale_base: 1.0,
            scale_spline: 1.0,
            grid_eps: 0.02,
            grid_range: [-1.0, 1.0],
        }
    }
}

impl SplineConfig {
    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::uniform(self.grid_size, self.spline_order, self.grid_range[0], self.grid_range[1])?
            .with_grid_eps(self.grid_eps)
    }

    pub fn num_basis(&self) -> usize {
        self.grid_size + self.spline_order
    }
}

pub const PRELU_INIT: f64 = 0.25;

pub trait Layer {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var>;

    /// The layer's arrays in registration order.
    fn param_ids(&self) -> Vec<ParamId>;

    fn param_count(&self, params: &ParamSet) -> usize {
        self.param_ids().iter().map(|&id| params.get(id).numel()).sum()
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * bound).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Kaiming-uniform with `a = sqrt(5)`, i.e. `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// multiplied by `scale`.
fn kaiming_uniform(shape: &[usize], fan_in: usize, scale: f64, rng: &mut Rng) -> Tensor {
    uniform_tensor(shape, scale / (fan_in as f64).sqrt(), rng)
}

/// Spline coefficients for `curves` independent functions, each a least
/// squares fit to uniform noise in `(-0.5, 0.5) * scale_noise / G` sampled at
/// the grid points.
fn noise_spline_coeffs(grid: &SplineGrid, curves: usize, scale_noise: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let nb = grid.num_basis();
    let mut out = vec![0.0; curves * nb];
    if scale_noise == 0.0 {
        return Ok(out);
    }
    let points = grid.grid_points();
    let fitter = SplineFitter::new(&points, grid)?;
    let amp = scale_noise / grid.grid_size() as f64;
    let mut noise = vec![0.0; points.len()];
    for chunk in out.chunks_exact_mut(nb) {
        noise.iter_mut().for_each(|v| *v = (rng.random::<f64>() - 0.5) * amp);
        fitter.fit_into(&noise, chunk);
    }
    Ok(out)
}

/// Cross-correlation with bias; no activation.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub opts: Conv1dOptions,
}

impl Conv1dLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: Conv1dOptions,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_conv_dims(c_in, c_out, kernel, opts)?;
        let fan_in = c_in / opts.groups * kernel;
        let weight = kaiming_uniform(&[c_out, c_in / opts.groups, kernel], fan_in, 1.0, rng);
        let bias = kaiming_uniform(&[c_out], fan_in, 1.0, rng);
        Ok(Self {
            weight: params.add(format!("{prefix}.weight"), weight, true),
            bias: params.add(format!("{prefix}.bias"), bias, true),
            c_in,
            c_out,
            kernel,
            opts,
        })
    }

    pub fn expected_params(c_in: usize, c_out: usize, kernel: usize) -> usize {
        c_out * c_in * kernel + c_out
    }
}

impl Layer for Conv1dLayer {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.conv1d(x, w, self.opts)?;
        let b = tape.param(self.bias);
        let b = tape.reshape(b, &[self.c_out, 1])?;
        tape.add(y, b)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

fn check_conv_dims(c_in: usize, c_out: usize, kernel: usize, opts: Conv1dOptions) -> Result<()> {
    if c_in == 0 || c_out == 0 || kernel == 0 {
        return Err(Error::invalid(format!(
            "convolution dimensions must be positive: c_in={c_in}, c_out={c_out}, kernel={kernel}"
        )));
    }
    if opts.groups == 0 || !c_in.is_multiple_of(opts.groups) || !c_out.is_multiple_of(opts.groups) {
        return Err(Error::invalid(format!(
            "groups={} must divide c_in={c_in} and c_out={c_out}",
            opts.groups
        )));
    }
    Ok(())
}

/// One-dimensional convolution whose kernel taps are learnable functions
/// `phi(z) = spline(z) + w_b * prelu(gelu(z))`.
///
/// The input is instance-normalized first. The spline path expands the
/// normalized signal in the B-spline basis and convolves it with
/// `spline_weight`, treating the `C_in * (G + k)` basis channels as ordinary
/// input channels. The base path convolves `prelu(gelu(z))` with
/// `base_weight`. The two paths are summed; there is no bias.
#[derive(Debug, Clone)]
pub struct KaConv1dLayer {
    /// `[C_out x C_in/groups x K x (G + k)]`
    pub spline_weight: ParamId,
    /// `[C_out x C_in/groups x K]`
    pub base_weight: ParamId,
    /// Single shared PReLU slope.
    pub prelu_slope: ParamId,
    pub grid: SplineGrid,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub opts: Conv1dOptions,
}

impl KaConv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: Conv1dOptions,
        config: &SplineConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_conv_dims(c_in, c_out, kernel, opts)?;
        let grid = config.grid()?;
        let nb = grid.num_basis();
        let cin_g = c_in / opts.groups;
        let base = kaiming_uniform(&[c_out, cin_g, kernel], cin_g * kernel, config.scale_base, rng);
        let spline = noise_spline_coeffs(&grid, c_out * cin_g * kernel, config.scale_noise, rng)?;
        let spline = Tensor::new(vec![c_out, cin_g, kernel, nb], spline)?;
        Ok(Self {
            spline_weight: params.add(format!("{prefix}.spline_weight"), spline, true),
            base_weight: params.add(format!("{prefix}.base_weight"), base, true),
            prelu_slope: params.add(format!("{prefix}.prelu_slope"), Tensor::from_vec(vec![PRELU_INIT]), true),
            grid,
            c_in,
            c_out,
            kernel,
            opts,
        })
    }

    pub fn expected_params(c_in: usize, c_out: usize, kernel: usize, num_basis: usize) -> usize {
        c_out * c_in * kernel * num_basis + c_out * c_in * kernel + 1
    }
}

impl Layer for KaConv1dLayer {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (batch, len) = match shape.as_slice() {
            [c, l] if *c == self.c_in => (None, *l),
            [b, c, l] if *c == self.c_in => (Some(*b), *l),
            _ => {
                return Err(Error::invalid(format!(
                    "KaConv1d expects {} input channels, got input of shape {shape:?}",
                    self.c_in
                )))
            }
        };
        let nb = self.grid.num_basis();
        let cin_g = self.c_in / self.opts.groups;
        let z = tape.instance_norm_1d(x)?;

        // spline path: [.., C_in, L] -> [.., C_in, L, nb] -> [.., C_in * nb, L]
        let basis = tape.bspline(z, &self.grid)?;
        let (basis, expanded) = match batch {
            Some(b) => (tape.permute(basis, &[0, 1, 3, 2])?, vec![b, self.c_in * nb, len]),
            None => (tape.permute(basis, &[0, 2, 1])?, vec![self.c_in * nb, len]),
        };
        let basis = tape.reshape(basis, &expanded)?;
        let sw = tape.param(self.spline_weight);
        let sw = tape.permute(sw, &[0, 1, 3, 2])?;
        let sw = tape.reshape(sw, &[self.c_out, cin_g * nb, self.kernel])?;
        let spline = tape.conv1d(basis, sw, self.opts)?;

        let act = tape.gelu(z)?;
        let slope = tape.param(self.prelu_slope);
        let act = tape.prelu(act, slope)?;
        let bw = tape.param(self.base_weight);
        let base = tape.conv1d(act, bw, self.opts)?;
        tape.add(spline, base)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.spline_weight, self.base_weight, self.prelu_slope]
    }
}

/// Fully connected layer with one learnable univariate function per edge:
/// `out_j = sum_i base_weight[j,i] * silu(x_i)
///        + spline_scaler[j,i] * sum_t spline_weight[j,i,t] * B_t(x_i)`.
#[derive(Debug, Clone)]
pub struct KanLayer {
    /// `[n_out x n_in]`
    pub base_weight: ParamId,
    /// `[n_out x n_in x (G + k)]`
    pub spline_weight: ParamId,
    /// `[n_out x n_in]`
    pub spline_scaler: ParamId,
    pub grid: SplineGrid,
    pub n_in: usize,
    pub n_out: usize,
}

impl KanLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        config: &SplineConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid(format!("KAN layer widths must be positive: {n_in} -> {n_out}")));
        }
        let grid = config.grid()?;
        let nb = grid.num_basis();
        let base = kaiming_uniform(&[n_out, n_in], n_in, config.scale_base, rng);
        let spline = noise_spline_coeffs(&grid, n_out * n_in, config.scale_noise, rng)?;
        let spline = Tensor::new(vec![n_out, n_in, nb], spline)?;
        let scaler = kaiming_uniform(&[n_out, n_in], n_in, config.scale_spline, rng);
        Ok(Self {
            base_weight: params.add(format!("{prefix}.base_weight"), base, true),
            spline_weight: params.add(format!("{prefix}.spline_weight"), spline, true),
            spline_scaler: params.add(format!("{prefix}.spline_scaler"), scaler, true),
            grid,
            n_in,
            n_out,
        })
    }

    pub fn expected_params(n_in: usize, n_out: usize, num_basis: usize) -> usize {
        n_out * n_in * (2 + num_basis)
    }
}

impl Layer for KanLayer {
    /// Accepts `[n_in]` or `[batch x n_in]`; the output keeps the same rank.
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (batch, single) = match shape.as_slice() {
            [n] if *n == self.n_in => (1, true),
            [b, n] if *n == self.n_in => (*b, false),
            _ => {
                return Err(Error::invalid(format!(
                    "KAN layer expects {} inputs, got shape {shape:?}",
                    self.n_in
                )))
            }
        };
        let nb = self.grid.num_basis();
        let x = if single { tape.reshape(x, &[1, self.n_in])? } else { x };

        let act = tape.silu(x)?;
        let bw = tape.param(self.base_weight);
        let bw_t = tape.permute(bw, &[1, 0])?;
        let base = tape.matmul(act, bw_t)?;

        let basis = tape.bspline(x, &self.grid)?;
        let basis = tape.reshape(basis, &[batch, self.n_in * nb])?;
        let sw = tape.param(self.spline_weight);
        let scaler = tape.param(self.spline_scaler);
        let scaler = tape.reshape(scaler, &[self.n_out, self.n_in, 1])?;
        let scaled = tape.mul(sw, scaler)?;
        let scaled = tape.reshape(scaled, &[self.n_out, self.n_in * nb])?;
        let scaled_t = tape.permute(scaled, &[1, 0])?;
        let spline = tape.matmul(basis, scaled_t)?;

        let out = tape.add(base, spline)?;
        if single {
            tape.reshape(out, &[self.n_out])
        } else {
            Ok(out)
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.base_weight, self.spline_weight, self.spline_scaler]
    }
}

/// Linear classifier producing raw logits.
#[derive(Debug, Clone)]
pub struct MlpHead {
    /// `[n_classes x n_features]`
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_features: usize,
    pub n_classes: usize,
}

impl MlpHead {
    pub fn new(params: &mut ParamSet, prefix: &str, n_features: usize, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::invalid(format!("head widths must be positive: {n_features} -> {n_classes}")));
        }
        let weight = kaiming_uniform(&[n_classes, n_features], n_features, 1.0, rng);
        let bias = kaiming_uniform(&[n_classes], n_features, 1.0, rng);
        Ok(Self {
            weight: params.add(format!("{prefix}.weight"), weight, true),
            bias: params.add(format!("{prefix}.bias"), bias, true),
            n_features,
            n_classes,
        })
    }

    pub fn expected_params(n_features: usize, n_classes: usize) -> usize {
        n_classes * (n_features + 1)
    }
}

impl Layer for MlpHead {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let w_t = tape.permute(w, &[1, 0])?;
        let y = tape.matmul(x, w_t)?;
        let b = tape.param(self.bias);
        tape.add(y, b)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// `[n -> 2n + 1 -> 1]` stack of two KAN layers: inner univariate functions
/// summed per hidden unit, then outer univariate functions summed into one
/// output.
#[derive(Debug, Clone)]
pub struct KartStack {
    pub inner: KanLayer,
    pub outer: KanLayer,
}

impl KartStack {
    pub fn new(params: &mut ParamSet, n_inputs: usize, config: &SplineConfig, rng: &mut Rng) -> Result<Self> {
        if n_inputs == 0 {
            return Err(Error::invalid("KART stack needs at least one input"));
        }
        let hidden = 2 * n_inputs + 1;
        Ok(Self {
            inner: KanLayer::new(params, "inner", n_inputs, hidden, config, rng)?,
            outer: KanLayer::new(params, "outer", hidden, 1, config, rng)?,
        })
    }

    pub fn widths(&self) -> [usize; 3] {
        [self.inner.n_in, self.inner.n_out, self.outer.n_out]
    }
}

impl Layer for KartStack {
    fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        self.outer.forward(tape, h)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.inner.param_ids();
        ids.extend(self.outer.param_ids());
        ids
    }
}
