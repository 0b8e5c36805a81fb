use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Ansatz, DerivOrder, FieldBatch, JacobianMatrix, ParamVector};
use crate::error::{Result, TengError};
use crate::geometry::IndexSet;
use crate::rng::CounterRng;

/// Periodic-embedding tanh MLP.
///
/// Each input coordinate `x_i` is embedded as `embed_terms` features
/// `a_{ij} cos(ω_i x_i + φ_{ij}) + c_{ij}` with `ω_i = 2π / period_i`, so the
/// network is exactly periodic. The concatenated features feed `n_layers`
/// dense layers, tanh on all but the last, which maps to a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub embed_terms: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Period of each coordinate; `2π` when empty.
    #[serde(default)]
    pub periods: Vec<f64>,
}

impl NetworkArch {
    pub fn new(input_dim: usize, embed_terms: usize, hidden_dim: usize, n_layers: usize) -> Self {
        Self {
            input_dim,
            embed_terms,
            hidden_dim,
            n_layers,
            periods: vec![],
        }
    }

    pub fn with_periods(mut self, periods: Vec<f64>) -> Self {
        self.periods = periods;
        self
    }

    /// Full-size network: 7 layers, width 40, 10 embedding terms per input.
    pub fn full_scale(input_dim: usize) -> Self {
        Self::new(input_dim, 10, 40, 7)
    }

    /// Desk-scale network: 3 layers, width 16.
    pub fn desk(input_dim: usize) -> Self {
        Self::new(input_dim, 10, 16, 3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.input_dim) {
            return Err(TengError::InvalidArch(format!(
                "input_dim must be 2 or 3, got {}",
                self.input_dim
            )));
        }
        if self.n_layers < 2 {
            return Err(TengError::InvalidArch("n_layers must be at least 2".into()));
        }
        if self.hidden_dim == 0 || self.embed_terms == 0 {
            return Err(TengError::InvalidArch(
                "hidden_dim and embed_terms must be positive".into(),
            ));
        }
        if !self.periods.is_empty()
            && (self.periods.len() != self.input_dim
                || self.periods.iter().any(|p| !(*p > 0.0) || !p.is_finite()))
        {
            return Err(TengError::InvalidArch("periods must be positive, one per input".into()));
        }
        Ok(())
    }

    pub fn embed_width(&self) -> usize {
        self.input_dim * self.embed_terms
    }

    /// Widths `[embed_width, hidden, …, hidden, 1]`, one entry per layer boundary.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.embed_width()];
        w.extend(std::iter::repeat_n(self.hidden_dim, self.n_layers - 1));
        w.push(1);
        w
    }

    pub fn param_count(&self) -> usize {
        let widths = self.layer_widths();
        3 * self.embed_width() + widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum::<usize>()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        if self.periods.is_empty() {
            vec![1.0; self.input_dim]
        } else {
            self.periods.iter().map(|p| 2.0 * PI / p).collect()
        }
    }
}

/// Offsets of each parameter group inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub embed_amp: usize,
    pub embed_phase: usize,
    pub embed_shift: usize,
    /// `(weight offset, bias offset, fan_in, fan_out)` per dense layer.
    pub layers: Vec<(usize, usize, usize, usize)>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &NetworkArch) -> Self {
        let e = arch.embed_width();
        let mut off = 3 * e;
        let widths = arch.layer_widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let entry = (off, off + fan_in * fan_out, fan_in, fan_out);
                off += fan_in * fan_out + fan_out;
                entry
            })
            .collect();
        Self {
            embed_amp: 0,
            embed_phase: e,
            embed_shift: 2 * e,
            layers,
            total: off,
        }
    }

    /// Index of the output bias (the last parameter).
    pub fn output_bias(&self) -> usize {
        self.total - 1
    }
}

/// Deterministic initialization: weights `U(-1, 1) / sqrt(fan_in)`, zero
/// biases, embedding amplitudes `U(-1, 1)`, phases `U(0, 2π)`, zero shifts.
pub fn init_params(arch: &NetworkArch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let layout = ParamLayout::new(arch);
    let mut rng = CounterRng::new(seed);
    let mut theta = vec![0.0; layout.total];
    let e = arch.embed_width();
    for q in 0..e {
        theta[layout.embed_amp + q] = rng.uniform(-1.0, 1.0);
        theta[layout.embed_phase + q] = rng.uniform(0.0, 2.0 * PI);
    }
    for &(w_off, _, fan_in, fan_out) in &layout.layers {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for w in &mut theta[w_off..w_off + fan_in * fan_out] {
            *w = scale * rng.uniform(-1.0, 1.0);
        }
    }
    Ok(ParamVector::new(theta))
}

/// The network as an [`Ansatz`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: NetworkArch,
    layout: ParamLayout,
    freq: Vec<f64>,
}

/// Per-point forward record needed by the reverse pass.
#[derive(Default)]
struct Trace {
    /// Embedding phase arguments `ω_i x_i + φ_q`.
    args: Vec<f64>,
    /// Input to each dense layer.
    xs: Vec<Vec<f64>>,
    /// Spatial gradient of each dense layer input, `fan_in × d` row-major.
    xg: Vec<Vec<f64>>,
    /// Spatial gradient of each hidden pre-activation, `fan_out × d`.
    pg: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(arch: NetworkArch) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch);
        let freq = arch.frequencies();
        Ok(Self { arch, layout, freq })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Forward pass at one point. Returns `(u, ∇u, Δu)`; gradient and
    /// Laplacian are zero unless requested. Gradients are always carried when
    /// `trace` wants them for a gradient-seeded reverse pass.
    fn forward(
        &self,
        theta: &[f64],
        x: ArrayView1<f64>,
        need_grad: bool,
        need_lap: bool,
        mut trace: Option<&mut Trace>,
    ) -> Result<(f64, Vec<f64>, f64)> {
        let d = self.arch.input_dim;
        let m = self.arch.embed_terms;
        let e = d * m;
        let lay = &self.layout;
        let need_grad = need_grad || need_lap;

        let mut xv = vec![0.0; e];
        let mut xg = if need_grad { vec![0.0; e * d] } else { vec![] };
        let mut xl = if need_lap { vec![0.0; e] } else { vec![] };
        let mut args = vec![0.0; e];
        for i in 0..d {
            let w = self.freq[i];
            for j in 0..m {
                let q = i * m + j;
                let a = theta[lay.embed_amp + q];
                let arg = w * x[i] + theta[lay.embed_phase + q];
                let (s, c) = arg.sin_cos();
                args[q] = arg;
                xv[q] = a * c + theta[lay.embed_shift + q];
                if need_grad {
                    xg[q * d + i] = -a * w * s;
                }
                if need_lap {
                    xl[q] = -a * w * w * c;
                }
            }
        }
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(TengError::NonFinite { layer: 0 });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.args = args;
            t.xs.clear();
            t.xg.clear();
            t.pg.clear();
        }

        let n_layers = lay.layers.len();
        for (l, &(w_off, b_off, fan_in, fan_out)) in lay.layers.iter().enumerate() {
            let wmat = &theta[w_off..w_off + fan_in * fan_out];
            let bias = &theta[b_off..b_off + fan_out];
            let last = l + 1 == n_layers;

            let mut pv = bias.to_vec();
            let mut pg = if need_grad { vec![0.0; fan_out * d] } else { vec![] };
            let mut pl = if need_lap { vec![0.0; fan_out] } else { vec![] };
            for o in 0..fan_out {
                let row = &wmat[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(&xv) {
                    acc += w * v;
                }
                pv[o] += acc;
                if need_grad {
                    let g = &mut pg[o * d..(o + 1) * d];
                    for (r, w) in row.iter().enumerate() {
                        let src = &xg[r * d..(r + 1) * d];
                        for k in 0..d {
                            g[k] += w * src[k];
                        }
                    }
                }
                if need_lap {
                    let mut acc = 0.0;
                    for (w, v) in row.iter().zip(&xl) {
                        acc += w * v;
                    }
                    pl[o] = acc;
                }
            }

            if last {
                if !pv[0].is_finite() {
                    return Err(TengError::NonFinite { layer: l + 1 });
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.xs.push(std::mem::take(&mut xv));
                    t.xg.push(std::mem::take(&mut xg));
                }
                let grad = if need_grad { pg } else { vec![0.0; d] };
                let lap = if need_lap { pl[0] } else { 0.0 };
                return Ok((pv[0], grad, lap));
            }

            if pv.iter().any(|v| !v.is_finite()) {
                return Err(TengError::NonFinite { layer: l + 1 });
            }
            let mut yv = vec![0.0; fan_out];
            let mut yg = if need_grad { vec![0.0; fan_out * d] } else { vec![] };
            let mut yl = if need_lap { vec![0.0; fan_out] } else { vec![] };
            for o in 0..fan_out {
                let y = pv[o].tanh();
                let y1 = 1.0 - y * y;
                yv[o] = y;
                if need_grad {
                    for k in 0..d {
                        yg[o * d + k] = y1 * pg[o * d + k];
                    }
                }
                if need_lap {
                    let y2 = -2.0 * y * y1;
                    let sq: f64 = pg[o * d..(o + 1) * d].iter().map(|g| g * g).sum();
                    yl[o] = y1 * pl[o] + y2 * sq;
                }
            }
            if yv.iter().any(|v| !v.is_finite()) || yl.iter().any(|v| !v.is_finite()) {
                return Err(TengError::NonFinite { layer: l + 1 });
            }
            if let Some(t) = trace.as_deref_mut() {
                t.xs.push(std::mem::replace(&mut xv, yv));
                t.xg.push(std::mem::replace(&mut xg, yg));
                t.pg.push(pg);
            } else {
                xv = yv;
                xg = yg;
            }
            xl = yl;
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass: accumulates `seed_u · ∂u/∂θ + Σ_k seed_g[k] · ∂(∂u/∂x_k)/∂θ`
    /// into `out`. Gradient seeds require a trace recorded with gradients.
    fn backward(
        &self,
        theta: &[f64],
        trace: &Trace,
        seed_u: f64,
        seed_g: Option<&[f64]>,
        out: &mut [f64],
    ) {
        let d = self.arch.input_dim;
        let m = self.arch.embed_terms;
        let lay = &self.layout;
        let n_layers = lay.layers.len();

        // Adjoints of the current layer's output (value and spatial gradient).
        let mut ybar = vec![seed_u];
        let mut ygbar: Option<Vec<f64>> = seed_g.map(|g| g.to_vec());

        for l in (0..n_layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = lay.layers[l];
            let wmat = &theta[w_off..w_off + fan_in * fan_out];
            let x = &trace.xs[l];
            let last = l + 1 == n_layers;

            // Pre-activation adjoints.
            let (pbar, pgbar) = if last {
                (ybar.clone(), ygbar.clone())
            } else {
                let y = &trace.xs[l + 1];
                let mut pbar = vec![0.0; fan_out];
                let mut pgbar = ygbar.as_ref().map(|_| vec![0.0; fan_out * d]);
                for o in 0..fan_out {
                    let y1 = 1.0 - y[o] * y[o];
                    pbar[o] = ybar[o] * y1;
                    if let (Some(yg), Some(pgb)) = (&ygbar, pgbar.as_mut()) {
                        let y2 = -2.0 * y[o] * y1;
                        let pg = &trace.pg[l][o * d..(o + 1) * d];
                        let mut dot = 0.0;
                        for k in 0..d {
                            dot += yg[o * d + k] * pg[k];
                            pgb[o * d + k] = yg[o * d + k] * y1;
                        }
                        pbar[o] += y2 * dot;
                    }
                }
                (pbar, pgbar)
            };

            // Parameter adjoints.
            for o in 0..fan_out {
                out[b_off + o] += pbar[o];
                let row = &mut out[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (r, v) in row.iter_mut().zip(x) {
                    *r += pbar[o] * v;
                }
                if let Some(pgb) = &pgbar {
                    let xg = &trace.xg[l];
                    for (i, r) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for k in 0..d {
                            acc += pgb[o * d + k] * xg[i * d + k];
                        }
                        *r += acc;
                    }
                }
            }

            // Input adjoints.
            let mut xbar = vec![0.0; fan_in];
            let mut xgbar = pgbar.as_ref().map(|_| vec![0.0; fan_in * d]);
            for o in 0..fan_out {
                let row = &wmat[o * fan_in..(o + 1) * fan_in];
                for (i, w) in row.iter().enumerate() {
                    xbar[i] += w * pbar[o];
                }
                if let (Some(pgb), Some(xgb)) = (&pgbar, xgbar.as_mut()) {
                    for (i, w) in row.iter().enumerate() {
                        for k in 0..d {
                            xgb[i * d + k] += w * pgb[o * d + k];
                        }
                    }
                }
            }
            ybar = xbar;
            ygbar = xgbar;
        }

        // Embedding.
        for i in 0..d {
            let w = self.freq[i];
            for j in 0..m {
                let q = i * m + j;
                let a = theta[lay.embed_amp + q];
                let (s, c) = trace.args[q].sin_cos();
                let eb = ybar[q];
                let mut abar = eb * c;
                let mut phibar = -eb * a * s;
                if let Some(egb) = &ygbar {
                    let g = egb[q * d + i];
                    abar -= g * w * s;
                    phibar -= g * a * w * c;
                }
                out[lay.embed_amp + q] += abar;
                out[lay.embed_phase + q] += phibar;
                out[lay.embed_shift + q] += eb;
            }
        }
    }
}

impl Ansatz for Mlp {
    fn dims(&self) -> usize {
        self.arch.input_dim
    }

    fn param_count(&self) -> usize {
        self.layout.total
    }

    fn evaluate(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        order: DerivOrder,
    ) -> Result<FieldBatch> {
        self.check_params(theta)?;
        self.check_points(points)?;
        let n = points.nrows();
        let d = self.arch.input_dim;
        let need_grad = order >= DerivOrder::Gradient;
        let need_lap = order >= DerivOrder::Laplacian;
        let mut value = Array1::zeros(n);
        let mut grad = need_grad.then(|| Array2::zeros((n, d)));
        let mut lap = need_lap.then(|| Array1::zeros(n));
        for (p, x) in points.outer_iter().enumerate() {
            let (u, g, l) = self.forward(theta.as_slice(), x, need_grad, need_lap, None)?;
            value[p] = u;
            if let Some(gm) = grad.as_mut() {
                for k in 0..d {
                    gm[[p, k]] = g[k];
                }
            }
            if let Some(lv) = lap.as_mut() {
                lv[p] = l;
            }
        }
        Ok(FieldBatch {
            points: points.to_owned(),
            value,
            grad,
            laplacian: lap,
        })
    }

    fn jacobian(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        subset: &IndexSet,
    ) -> Result<JacobianMatrix> {
        self.check_params(theta)?;
        self.check_points(points)?;
        self.check_subset(subset)?;
        let n = points.nrows();
        let mut entries = Array2::zeros((n, subset.len()));
        let mut trace = Trace::default();
        let mut buf = vec![0.0; self.layout.total];
        for (p, x) in points.outer_iter().enumerate() {
            self.forward(theta.as_slice(), x, false, false, Some(&mut trace))?;
            buf.iter_mut().for_each(|v| *v = 0.0);
            self.backward(theta.as_slice(), &trace, 1.0, None, &mut buf);
            for (s, &j) in subset.as_slice().iter().enumerate() {
                entries[[p, s]] = buf[j];
            }
        }
        Ok(JacobianMatrix {
            entries,
            subset: subset.clone(),
        })
    }

    fn vjp(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        cotangent: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_params(theta)?;
        self.check_points(points)?;
        if cotangent.len() != points.nrows() {
            return Err(TengError::DimensionMismatch("cotangent length".into()));
        }
        let mut out = vec![0.0; self.layout.total];
        let mut trace = Trace::default();
        for (x, &ct) in points.outer_iter().zip(cotangent.iter()) {
            self.forward(theta.as_slice(), x, false, false, Some(&mut trace))?;
            self.backward(theta.as_slice(), &trace, ct, None, &mut out);
        }
        Ok(Array1::from(out))
    }

    fn sobolev_jacobian(&self, theta: &ParamVector, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_params(theta)?;
        self.check_points(points)?;
        let n = points.nrows();
        let d = self.arch.input_dim;
        let p_count = self.layout.total;
        let mut out = Array2::zeros(((d + 1) * n, p_count));
        let mut trace = Trace::default();
        let mut buf = vec![0.0; p_count];
        let mut seed = vec![0.0; d];
        for (p, x) in points.outer_iter().enumerate() {
            self.forward(theta.as_slice(), x, true, false, Some(&mut trace))?;
            for block in 0..=d {
                buf.iter_mut().for_each(|v| *v = 0.0);
                if block == 0 {
                    self.backward(theta.as_slice(), &trace, 1.0, None, &mut buf);
                } else {
                    seed.iter_mut().for_each(|v| *v = 0.0);
                    seed[block - 1] = 1.0;
                    self.backward(theta.as_slice(), &trace, 0.0, Some(&seed), &mut buf);
                }
                out.row_mut(block * n + p)
                    .iter_mut()
                    .zip(&buf)
                    .for_each(|(o, v)| *o = *v);
            }
        }
        Ok(out)
    }
}
