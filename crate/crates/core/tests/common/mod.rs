//! Shared oracles for the integration tests: a central finite-difference
//! gradient checker and direct-summation forward passes that share no code
//! with the library kernels.

#![allow(dead_code)]

pub mod suites;

use kaconvtext::autodiff::{Conv1dOptions, ParamId, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences of an O(1)
/// loss carry roundoff near `eps_machine / FD_STEP ~ 1e-11`, far below this.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn randomize(params: &mut ParamSet, id: ParamId, rng: &mut ChaCha8Rng, scale: f64) {
    params
        .get_mut(id)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0) * scale);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel: self.max_rel.max(other.max_rel),
            checked: self.checked + other.checked,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel < GRAD_REL_TOL
    }
}

fn weighted_loss<F>(params: &ParamSet, build: &F, weights: &Tensor) -> f64
where
    F: Fn(&mut Tape<'_>) -> kaconvtext::Result<Var>,
{
    let mut tape = Tape::new(params);
    let out = build(&mut tape).unwrap();
    let w = tape.constant(weights.clone()).unwrap();
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.value(loss).item()
}

/// Compares the tape gradient of `sum(build() * R)` (R fixed and random)
/// against central differences for every trainable parameter, sampling at
/// most `max_entries` coordinates per parameter.
pub fn check_gradients<F>(params: &ParamSet, build: F, rng: &mut ChaCha8Rng, max_entries: usize) -> GradReport
where
    F: Fn(&mut Tape<'_>) -> kaconvtext::Result<Var>,
{
    let out_shape = {
        let mut tape = Tape::new(params);
        let out = build(&mut tape).unwrap();
        tape.shape(out).to_vec()
    };
    let weights = if out_shape.is_empty() {
        Tensor::scalar(rng.random_range(0.5..1.5))
    } else {
        random_tensor(rng, &out_shape, 1.0)
    };

    let mut analytic = params.clone();
    {
        let mut tape = Tape::new(params);
        let out = build(&mut tape).unwrap();
        let w = tape.constant(weights.clone()).unwrap();
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        analytic.accumulate(grads).unwrap();
    }

    let mut report = GradReport::default();
    let mut probe = params.clone();
    let ids: Vec<ParamId> = params.iter().filter(|(_, p)| p.trainable()).map(|(id, _)| id).collect();
    for id in ids {
        let n = params.get(id).numel();
        let entries: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            (0..max_entries).map(|_| rng.random_range(0..n)).collect()
        };
        let grad = analytic.get(id).grad.clone();
        for e in entries {
            let a = grad.as_ref().map_or(0.0, |g| g.data()[e]);
            let orig = params.get(id).value.data()[e];
            probe.get_mut(id).value.data_mut()[e] = orig + FD_STEP;
            let plus = weighted_loss(&probe, &build, &weights);
            probe.get_mut(id).value.data_mut()[e] = orig - FD_STEP;
            let minus = weighted_loss(&probe, &build, &weights);
            probe.get_mut(id).value.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            if rel > report.max_rel {
                report.max_rel = rel;
            }
            report.checked += 1;
        }
    }
    report
}

/// Recursive Cox-de Boor basis on the uniform extended knot vector
/// `t_j = lo + (j - k) h`, `j = 0..=G+2k`, with half-open intervals.
pub fn cox_de_boor(g: usize, k: usize, lo: f64, hi: f64, x: f64) -> Vec<f64> {
    let h = (hi - lo) / g as f64;
    let knots: Vec<f64> = (0..=g + 2 * k).map(|j| lo + (j as f64 - k as f64) * h).collect();
    fn b(knots: &[f64], i: usize, d: usize, x: f64) -> f64 {
        if d == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let left = (x - knots[i]) / (knots[i + d] - knots[i]) * b(knots, i, d - 1, x);
        let right = (knots[i + d + 1] - x) / (knots[i + d + 1] - knots[i + 1]) * b(knots, i + 1, d - 1, x);
        left + right
    }
    (0..g + k).map(|i| b(&knots, i, k, x)).collect()
}

pub fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

pub fn silu_ref(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `x[c][l]` normalized per channel with biased variance and eps 1e-5.
pub fn instance_norm_ref(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn conv_source(p: usize, t: usize, len: usize, opts: Conv1dOptions) -> Option<usize> {
    let pos = (p * opts.stride + t * opts.dilation) as isize - opts.padding as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

/// Direct summation `y[o][p] = sum_i sum_t w[o][i][t] x[g*cin_g + i][src(p, t)]`.
pub fn conv1d_ref(x: &[Vec<f64>], w: &Tensor, opts: Conv1dOptions) -> Vec<Vec<f64>> {
    let [c_out, cin_g, k] = w.shape() else { panic!("kernel rank") };
    let len = x[0].len();
    let l_out = (len + 2 * opts.padding - opts.dilation * (k - 1) - 1) / opts.stride + 1;
    let cout_g = c_out / opts.groups;
    let wd = w.data();
    (0..*c_out)
        .map(|o| {
            let g = o / cout_g;
            (0..l_out)
                .map(|p| {
                    let mut acc = 0.0;
                    for i in 0..*cin_g {
                        for t in 0..*k {
                            if let Some(s) = conv_source(p, t, len, opts) {
                                acc += wd[(o * cin_g + i) * k + t] * x[g * cin_g + i][s];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Spline-kernel convolution by direct summation over output positions,
/// taps and basis functions.
#[allow(clippy::too_many_arguments)]
pub fn kaconv_ref(
    x: &[Vec<f64>],
    spline_w: &Tensor,
    base_w: &Tensor,
    slope: f64,
    g: usize,
    k_ord: usize,
    range: [f64; 2],
    opts: Conv1dOptions,
) -> Vec<Vec<f64>> {
    let [c_out, cin_g, k, nb] = spline_w.shape() else { panic!("spline weight rank") };
    let z = instance_norm_ref(x);
    let len = z[0].len();
    let l_out = (len + 2 * opts.padding - opts.dilation * (k - 1) - 1) / opts.stride + 1;
    let cout_g = c_out / opts.groups;
    let (sw, bw) = (spline_w.data(), base_w.data());
    (0..*c_out)
        .map(|o| {
            let grp = o / cout_g;
            (0..l_out)
                .map(|p| {
                    let mut acc = 0.0;
                    for i in 0..*cin_g {
                        for t in 0..*k {
                            let Some(s) = conv_source(p, t, len, opts) else { continue };
                            let v = z[grp * cin_g + i][s];
                            let basis = cox_de_boor(g, k_ord, range[0], range[1], v);
                            for (c, bc) in basis.iter().enumerate().take(*nb) {
                                acc += sw[((o * cin_g + i) * k + t) * nb + c] * bc;
                            }
                            let act = gelu_ref(v);
                            let act = if act > 0.0 { act } else { slope * act };
                            acc += bw[(o * cin_g + i) * k + t] * act;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Per-edge KAN layer: `y_j = sum_i base_ji silu(x_i) + scaler_ji sum_c w_jic B_c(x_i)`.
pub fn kan_ref(
    x: &[f64],
    base_w: &Tensor,
    spline_w: &Tensor,
    scaler: &Tensor,
    g: usize,
    k_ord: usize,
    range: [f64; 2],
) -> Vec<f64> {
    let [n_out, n_in, nb] = spline_w.shape() else { panic!("spline weight rank") };
    (0..*n_out)
        .map(|j| {
            let mut acc = 0.0;
            for (i, &xi) in x.iter().enumerate().take(*n_in) {
                let basis = cox_de_boor(g, k_ord, range[0], range[1], xi);
                let spline: f64 = (0..*nb).map(|c| spline_w.data()[(j * n_in + i) * nb + c] * basis[c]).sum();
                acc += base_w.data()[j * n_in + i] * silu_ref(xi) + scaler.data()[j * n_in + i] * spline;
            }
            acc
        })
        .collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let l = *t.shape().last().unwrap();
    t.data().chunks(l).map(<[f64]>::to_vec).collect()
}

/// Accuracy and support-weighted F1 recomputed from raw label pairs.
pub fn metrics_oracle(n_classes: usize, truth: &[usize], predicted: &[usize]) -> (f64, f64) {
    let total = truth.len() as f64;
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count() as f64;
    let mut weighted = 0.0;
    for c in 0..n_classes {
        let tp = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(predicted).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += (tp + fn_) / total * f1;
    }
    (correct / total, weighted)
}
