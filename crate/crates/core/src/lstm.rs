//! LSTM sequence learner: forward pass, backpropagation through time, and
//! the AdaDelta update rule.
//!
//! A learner of shape `(N, K)` maps a sequence of length-`N` vectors to a
//! single length-`K` vector, the final hidden state. Cells are the standard
//! input/forget/output-gated LSTM without peepholes:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)     g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerShape {
    pub input: usize,
    pub output: usize,
}

impl LearnerShape {
    pub fn new(input: usize, output: usize) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::invalid(format!(
                "learner shape ({input}, {output}) must be positive"
            )));
        }
        Ok(LearnerShape { input, output })
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        4 * self.output * (self.input + self.output + 1)
    }

    fn rec_offset(&self) -> usize {
        4 * self.output * self.input
    }

    fn bias_offset(&self) -> usize {
        4 * self.output * (self.input + self.output)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Cell = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];
}

const INIT_RANGE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

/// Weights of one LSTM, stored flat.
///
/// Layout: input weights `[4K × N]`, then recurrent weights `[4K × K]`,
/// then biases `[4K]`, all row-major with rows grouped by gate in the
/// order input, forget, output, cell candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    shape: LearnerShape,
    values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LearnerShape) -> Self {
        LstmParams {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_values(shape: LearnerShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::dim(format!(
                "shape ({}, {}) needs {} parameters, got {}",
                shape.input,
                shape.output,
                shape.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LSTM parameter".into()));
        }
        Ok(LstmParams { shape, values })
    }

    /// Weights uniform on `[-0.08, 0.08]`; forget-gate bias 1, other biases 0.
    pub fn init(shape: LearnerShape, seed: u64) -> Self {
        Self::init_with(shape, &mut seed::stream(seed, seed::INIT))
    }

    pub fn init_with<R: Rng + ?Sized>(shape: LearnerShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let bias = shape.bias_offset();
        for v in &mut p.values[..bias] {
            *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
        }
        for r in 0..shape.output {
            *p.bias_mut(Gate::Forget, r) = FORGET_BIAS;
        }
        p
    }

    pub fn shape(&self) -> LearnerShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn w_in(&self, gate: Gate, row: usize, col: usize) -> f64 {
        self.values[(gate as usize * self.shape.output + row) * self.shape.input + col]
    }

    pub fn w_in_mut(&mut self, gate: Gate, row: usize, col: usize) -> &mut f64 {
        &mut self.values[(gate as usize * self.shape.output + row) * self.shape.input + col]
    }

    pub fn w_rec(&self, gate: Gate, row: usize, col: usize) -> f64 {
        let k = self.shape.output;
        self.values[self.shape.rec_offset() + (gate as usize * k + row) * k + col]
    }

    pub fn w_rec_mut(&mut self, gate: Gate, row: usize, col: usize) -> &mut f64 {
        let k = self.shape.output;
        let off = self.shape.rec_offset();
        &mut self.values[off + (gate as usize * k + row) * k + col]
    }

    pub fn bias(&self, gate: Gate, row: usize) -> f64 {
        self.values[self.shape.bias_offset() + gate as usize * self.shape.output + row]
    }

    pub fn bias_mut(&mut self, gate: Gate, row: usize) -> &mut f64 {
        let off = self.shape.bias_offset();
        &mut self.values[off + gate as usize * self.shape.output + row]
    }

    /// Runs the recurrence over `xs` and returns the final hidden state.
    ///
    /// An empty sequence yields the zero vector and an empty cache.
    pub fn forward(&self, xs: Vec<Vec<f64>>) -> Result<(Vec<f64>, LstmCache)> {
        let LearnerShape { input: n, output: k } = self.shape;
        if let Some(x) = xs.iter().find(|x| x.len() != n) {
            return Err(Error::dim(format!(
                "LSTM input has width {}, expected {n}",
                x.len()
            )));
        }
        let steps = xs.len();
        let mut cache = LstmCache {
            shape: self.shape,
            gates: Vec::with_capacity(steps * 4 * k),
            cells: Vec::with_capacity(steps * k),
            hidden: Vec::with_capacity(steps * k),
            xs: Vec::new(),
        };
        let w = &self.values;
        let rec = self.shape.rec_offset();
        let bias = self.shape.bias_offset();
        let mut z = vec![0.0; 4 * k];
        let mut h_prev = vec![0.0; k];
        let mut c_prev = vec![0.0; k];
        for x in &xs {
            for (r, zr) in z.iter_mut().enumerate() {
                let wi = &w[r * n..(r + 1) * n];
                let wr = &w[rec + r * k..rec + (r + 1) * k];
                let mut acc = w[bias + r];
                acc += wi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                acc += wr.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
                *zr = acc;
            }
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = if r < 3 * k { sigmoid(*zr) } else { zr.tanh() };
            }
            for j in 0..k {
                let (i, f, o, g) = (z[j], z[k + j], z[2 * k + j], z[3 * k + j]);
                let c = f * c_prev[j] + i * g;
                c_prev[j] = c;
                h_prev[j] = o * c.tanh();
            }
            cache.gates.extend_from_slice(&z);
            cache.cells.extend_from_slice(&c_prev);
            cache.hidden.extend_from_slice(&h_prev);
        }
        cache.xs = xs;
        Ok((h_prev, cache))
    }

    /// Backpropagation through time from `dy = ∂L/∂y`.
    ///
    /// Returns `∂L/∂x` for every timestep and the parameter gradient
    /// summed over timesteps.
    pub fn backward(&self, cache: &LstmCache, dy: &[f64]) -> Result<(Vec<Vec<f64>>, LstmGrads)> {
        let mut grads = LstmGrads::zeros(self.shape);
        let dxs = self.backward_into(cache, dy, &mut grads)?;
        Ok((dxs, grads))
    }

    /// Like [`backward`](Self::backward), adding the parameter gradient
    /// into `grads` instead of allocating a fresh one.
    pub fn backward_into(
        &self,
        cache: &LstmCache,
        dy: &[f64],
        grads: &mut LstmGrads,
    ) -> Result<Vec<Vec<f64>>> {
        let LearnerShape { input: n, output: k } = self.shape;
        if cache.shape != self.shape || grads.shape != self.shape {
            return Err(Error::dim("LSTM cache or gradient shape differs from parameters"));
        }
        if dy.len() != k {
            return Err(Error::dim(format!("output adjoint has width {}, expected {k}", dy.len())));
        }
        let steps = cache.len();
        let w = &self.values;
        let rec = self.shape.rec_offset();
        let bias = self.shape.bias_offset();
        let gw = &mut grads.values;

        let mut dxs = vec![vec![0.0; n]; steps];
        let mut dh = dy.to_vec();
        let mut dc = vec![0.0; k];
        let mut dz = vec![0.0; 4 * k];
        let zeros = vec![0.0; k];
        for t in (0..steps).rev() {
            let gates = &cache.gates[t * 4 * k..(t + 1) * 4 * k];
            let c = &cache.cells[t * k..(t + 1) * k];
            let (c_prev, h_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (
                    &cache.cells[(t - 1) * k..t * k],
                    &cache.hidden[(t - 1) * k..t * k],
                )
            };
            for j in 0..k {
                let (i, f, o, g) = (gates[j], gates[k + j], gates[2 * k + j], gates[3 * k + j]);
                let tc = c[j].tanh();
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * g * i * (1.0 - i);
                dz[k + j] = dcj * c_prev[j] * f * (1.0 - f);
                dz[2 * k + j] = d_o * o * (1.0 - o);
                dz[3 * k + j] = dcj * i * (1.0 - g * g);
                dc[j] = dcj * f;
            }
            let x = &cache.xs[t];
            let dx = &mut dxs[t];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row_in = r * n;
                for col in 0..n {
                    gw[row_in + col] += d * x[col];
                    dx[col] += d * w[row_in + col];
                }
                let row_rec = rec + r * k;
                for col in 0..k {
                    gw[row_rec + col] += d * h_prev[col];
                    dh[col] += d * w[row_rec + col];
                }
                gw[bias + r] += d;
            }
        }
        Ok(dxs)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-timestep activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCache {
    shape: LearnerShape,
    xs: Vec<Vec<f64>>,
    // Post-activation gates per step, [i | f | o | g], 4K each.
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn cell(&self, t: usize) -> &[f64] {
        let k = self.shape.output;
        &self.cells[t * k..(t + 1) * k]
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        let k = self.shape.output;
        &self.hidden[t * k..(t + 1) * k]
    }

    pub fn gate(&self, t: usize, gate: Gate) -> &[f64] {
        let k = self.shape.output;
        let base = t * 4 * k + gate as usize * k;
        &self.gates[base..base + k]
    }
}

/// Gradient of a loss with respect to an [`LstmParams`], same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    shape: LearnerShape,
    values: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros(shape: LearnerShape) -> Self {
        LstmGrads {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_values(shape: LearnerShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::dim("gradient length differs from shape"));
        }
        Ok(LstmGrads { shape, values })
    }

    pub fn shape(&self) -> LearnerShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &LstmGrads) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    /// Multiplier on every step; lets each level learn at its own rate.
    pub scale: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            scale: 1.0,
        }
    }
}

impl AdaDeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("AdaDelta rho {} not in (0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("AdaDelta epsilon {} must be positive", self.epsilon)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("AdaDelta scale {} must be positive", self.scale)));
        }
        Ok(())
    }
}

/// AdaDelta optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDelta {
    config: AdaDeltaConfig,
    accum_grad_sq: Vec<f64>,
    accum_delta_sq: Vec<f64>,
}

impl AdaDelta {
    pub fn new(config: AdaDeltaConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdaDelta {
            config,
            accum_grad_sq: vec![0.0; param_count],
            accum_delta_sq: vec![0.0; param_count],
        })
    }

    pub fn config(&self) -> &AdaDeltaConfig {
        &self.config
    }

    pub fn accum_grad_sq(&self) -> &[f64] {
        &self.accum_grad_sq
    }

    pub fn accum_delta_sq(&self) -> &[f64] {
        &self.accum_delta_sq
    }

    /// Applies one update to `params` in place. Nothing is modified when
    /// the gradient holds a non-finite entry.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.accum_grad_sq.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "optimizer holds {} parameters, got {} params and {} grads",
                self.accum_grad_sq.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient entry".into()));
        }
        let AdaDeltaConfig { rho, epsilon, scale } = self.config;
        for (((p, &g), eg), ed) in params
            .iter_mut()
            .zip(grads)
            .zip(self.accum_grad_sq.iter_mut())
            .zip(self.accum_delta_sq.iter_mut())
        {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let delta = -scale * ((*ed + epsilon).sqrt() / (*eg + epsilon).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * delta * delta;
            *p += delta;
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut LstmParams, grads: &LstmGrads) -> Result<()> {
        if params.shape != grads.shape {
            return Err(Error::dim("gradient shape differs from parameters"));
        }
        self.update(&mut params.values, &grads.values)
    }
}
