//! Fourier reference solutions on periodic boxes.
//!
//! Coefficients are Fourier-series coefficients, `u(x) = Σ_k c_k e^{i ω·k x}`
//! with `ω_i = 2π / L_i`, so the forward transform carries the `1/N` factor
//! and a constant field maps to its value at `k = 0`.

use std::sync::Arc;

use ndarray::{Array1, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::pde::{PdeKind, PdeSpec};

/// Coefficients on the box lattice `k ∈ [−kmax, kmax]^d`, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumField {
    pub dims: usize,
    pub kmax: usize,
    pub lengths: Vec<f64>,
    pub coeffs: Vec<Complex64>,
}

impl SpectrumField {
    pub fn zeros(dims: usize, kmax: usize, lengths: Vec<f64>) -> Self {
        let side = 2 * kmax + 1;
        Self {
            dims,
            kmax,
            lengths,
            coeffs: vec![Complex64::new(0.0, 0.0); side.pow(dims as u32)],
        }
    }

    pub fn side(&self) -> usize {
        2 * self.kmax + 1
    }

    /// Wavevector of flat index `idx`.
    pub fn wavevector(&self, idx: usize) -> Vec<i64> {
        let side = self.side();
        let mut k = vec![0i64; self.dims];
        let mut rem = idx;
        for i in (0..self.dims).rev() {
            k[i] = (rem % side) as i64 - self.kmax as i64;
            rem /= side;
        }
        k
    }

    /// Flat index of wavevector `k`, if it lies on the lattice.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        let side = self.side() as i64;
        let mut idx = 0i64;
        for &ki in k {
            let j = ki + self.kmax as i64;
            if j < 0 || j >= side {
                return None;
            }
            idx = idx * side + j;
        }
        Some(idx as usize)
    }

    pub fn get(&self, k: &[i64]) -> Complex64 {
        self.index_of(k).map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    fn frequencies(&self) -> Vec<f64> {
        self.lengths.iter().map(|l| 2.0 * std::f64::consts::PI / l).collect()
    }

    /// `|ω ⊙ k|²` per lattice entry.
    fn wavenumber_sq(&self) -> Vec<f64> {
        let w = self.frequencies();
        (0..self.coeffs.len())
            .map(|idx| {
                self.wavevector(idx)
                    .iter()
                    .zip(&w)
                    .map(|(&k, w)| (w * k as f64).powi(2))
                    .sum()
            })
            .collect()
    }

    /// `Σ |c_k|²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest `|c_k − conj(c_{−k})|`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|idx| {
                let neg: Vec<i64> = self.wavevector(idx).iter().map(|k| -k).collect();
                (self.coeffs[idx] - self.get(&neg).conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    fn check_finite(&self) -> Result<()> {
        if self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            Ok(())
        } else {
            Err(TengError::NonFiniteInput("spectrum".into()))
        }
    }
}

/// Smallest `m ≥ min` of the form `2^a 3^b 5^c`.
fn smooth_size(min: usize) -> usize {
    (min.max(1)..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("smooth sizes are unbounded")
}

/// Cached plans for an `n^d` complex transform.
struct FftNd {
    n: usize,
    dims: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftNd {
    fn new(n: usize, dims: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            dims,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    /// Unnormalized transform along every axis.
    fn process(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let n = self.n;
        let total = data.len();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dims {
            let stride = n.pow((self.dims - 1 - axis) as u32);
            for base in 0..total {
                if !(base / stride).is_multiple_of(n) {
                    continue;
                }
                for j in 0..n {
                    line[j] = data[base + j * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for j in 0..n {
                    data[base + j * stride] = line[j];
                }
            }
        }
    }

    fn grid_index(&self, k: &[i64]) -> usize {
        k.iter()
            .fold(0, |acc, &ki| acc * self.n + ki.rem_euclid(self.n as i64) as usize)
    }

    /// Real field on the `n^d` grid to coefficients on the `kmax` lattice.
    fn analyze(&self, values: &[f64], kmax: usize, lengths: &[f64]) -> SpectrumField {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.process(&mut data, false);
        let scale = 1.0 / self.len() as f64;
        let mut s = SpectrumField::zeros(self.dims, kmax, lengths.to_vec());
        for idx in 0..s.coeffs.len() {
            let k = s.wavevector(idx);
            s.coeffs[idx] = data[self.grid_index(&k)] * scale;
        }
        s
    }

    /// Series evaluated on the `n^d` grid; requires `n ≥ 2 kmax + 1`.
    fn synthesize(&self, s: &SpectrumField) -> Vec<f64> {
        let mut data = vec![Complex64::new(0.0, 0.0); self.len()];
        for (idx, c) in s.coeffs.iter().enumerate() {
            data[self.grid_index(&s.wavevector(idx))] = *c;
        }
        self.process(&mut data, true);
        data.iter().map(|c| c.re).collect()
    }
}

fn check_grid(values_len: usize, dims: usize, n: usize) -> Result<()> {
    if n.checked_pow(dims as u32) != Some(values_len) {
        return Err(TengError::DimensionMismatch(format!(
            "{values_len} samples do not form a {n}^{dims} grid"
        )));
    }
    Ok(())
}

/// Forward transform of real samples on the `n^d` tensor grid (last axis
/// fastest), keeping `|k_i| ≤ kmax`.
pub fn dft_forward(values: &[f64], dims: usize, n: usize, lengths: &[f64], kmax: usize) -> Result<SpectrumField> {
    check_grid(values.len(), dims, n)?;
    if n < 2 * kmax + 1 {
        return Err(TengError::DimensionMismatch(format!(
            "grid of {n} points cannot resolve kmax = {kmax}"
        )));
    }
    if lengths.len() != dims {
        return Err(TengError::DimensionMismatch("one length per dimension".into()));
    }
    Ok(FftNd::new(n, dims).analyze(values, kmax, lengths))
}

/// Inverse transform onto the `n^d` grid; requires `n ≥ 2 kmax + 1`.
pub fn dft_inverse(s: &SpectrumField, n: usize) -> Result<Vec<f64>> {
    if n < s.side() {
        return Err(TengError::DimensionMismatch(format!(
            "grid of {n} points cannot hold kmax = {}",
            s.kmax
        )));
    }
    Ok(FftNd::new(n, s.dims).synthesize(s))
}

/// Exact series values on any `n^d` tensor grid, by synthesizing on a
/// multiple of `n` large enough for the lattice and sub-sampling.
pub fn sample_on_grid(s: &SpectrumField, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(TengError::DimensionMismatch("empty grid".into()));
    }
    let factor = s.side().div_ceil(n);
    let fine = n * factor;
    let full = FftNd::new(fine, s.dims).synthesize(s);
    let total = n.pow(s.dims as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut fidx = 0;
        let mut mult = 1;
        for _ in 0..s.dims {
            fidx += (rem % n) * factor * mult;
            rem /= n;
            mult *= fine;
        }
        out.push(full[fidx]);
    }
    Ok(out)
}

/// Drops coefficients with any `|k_i| > kmax_new`.
pub fn truncate_spectrum(s: &SpectrumField, kmax_new: usize) -> Result<SpectrumField> {
    if kmax_new > s.kmax {
        return Err(TengError::InvalidConfig(format!(
            "cannot truncate kmax {} to larger {kmax_new}",
            s.kmax
        )));
    }
    let mut out = SpectrumField::zeros(s.dims, kmax_new, s.lengths.clone());
    for idx in 0..out.coeffs.len() {
        out.coeffs[idx] = s.get(&out.wavevector(idx));
    }
    Ok(out)
}

/// `Σ_k e^{−ν|ωk|² t} c_k e^{iωk·x}` at arbitrary points.
pub fn heat_exact(u0: &SpectrumField, nu: f64, t: f64, points: ArrayView2<f64>) -> Result<Array1<f64>> {
    if points.ncols() != u0.dims {
        return Err(TengError::DimensionMismatch("evaluation points".into()));
    }
    if !(t >= 0.0) {
        return Err(TengError::InvalidConfig("t must be non-negative".into()));
    }
    let decayed = heat_decay(u0, nu, t);
    let w = u0.frequencies();
    let side = u0.side();
    let kmax = u0.kmax as i64;
    let mut out = Array1::zeros(points.nrows());
    let mut phases = vec![Complex64::new(0.0, 0.0); u0.dims * side];
    for (p, x) in points.outer_iter().enumerate() {
        for i in 0..u0.dims {
            for j in 0..side {
                let k = j as i64 - kmax;
                phases[i * side + j] = Complex64::from_polar(1.0, w[i] * k as f64 * x[i]);
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (idx, c) in decayed.coeffs.iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut term = *c;
            let mut rem = idx;
            for i in (0..u0.dims).rev() {
                term *= phases[i * side + rem % side];
                rem /= side;
            }
            acc += term;
        }
        out[p] = acc.re;
    }
    Ok(out)
}

fn heat_decay(u0: &SpectrumField, nu: f64, t: f64) -> SpectrumField {
    let k2 = u0.wavenumber_sq();
    let mut s = u0.clone();
    for (c, k2) in s.coeffs.iter_mut().zip(k2) {
        *c *= (-nu * k2 * t).exp();
    }
    s
}

/// Right-hand side of the PDE in coefficient space, with nonlinear terms
/// from zero-padded products.
struct SpectralRhs {
    pde: PdeSpec,
    k2: Vec<f64>,
    /// `Σ_i ω_i k_i`.
    ksum: Vec<f64>,
    pad: Option<FftNd>,
}

impl SpectralRhs {
    fn new(pde: &PdeSpec, template: &SpectrumField) -> Self {
        let w = template.frequencies();
        let ksum = (0..template.coeffs.len())
            .map(|idx| {
                template
                    .wavevector(idx)
                    .iter()
                    .zip(&w)
                    .map(|(&k, w)| w * k as f64)
                    .sum()
            })
            .collect();
        let kmax = template.kmax;
        let pad = match pde.kind {
            PdeKind::Heat => None,
            PdeKind::AllenCahn => Some(FftNd::new(smooth_size(4 * kmax + 2), template.dims)),
            PdeKind::Burgers => Some(FftNd::new(smooth_size(3 * kmax + 2), template.dims)),
        };
        Self {
            pde: *pde,
            k2: template.wavenumber_sq(),
            ksum,
            pad,
        }
    }

    /// `(u^power)^` truncated to the input lattice.
    fn power(&self, s: &SpectrumField, power: i32) -> SpectrumField {
        let fft = self.pad.as_ref().expect("nonlinear kind has padding");
        let vals: Vec<f64> = fft.synthesize(s).iter().map(|v| v.powi(power)).collect();
        fft.analyze(&vals, s.kmax, &s.lengths)
    }

    fn eval(&self, s: &SpectrumField) -> SpectrumField {
        let mut out = s.clone();
        for (c, k2) in out.coeffs.iter_mut().zip(&self.k2) {
            *c *= -self.pde.nu * k2;
        }
        match self.pde.kind {
            PdeKind::Heat => {}
            PdeKind::AllenCahn => {
                let cube = self.power(s, 3);
                for ((o, c), c3) in out.coeffs.iter_mut().zip(&s.coeffs).zip(&cube.coeffs) {
                    *o += c - c3;
                }
            }
            PdeKind::Burgers => {
                let sq = self.power(s, 2);
                for ((o, q), ks) in out.coeffs.iter_mut().zip(&sq.coeffs).zip(&self.ksum) {
                    *o -= Complex64::new(0.0, 0.5 * ks) * q;
                }
            }
        }
        out
    }
}

/// `∂_t c` for the given PDE.
pub fn spectral_rhs(pde: &PdeSpec, s: &SpectrumField) -> Result<SpectrumField> {
    s.check_finite()?;
    if s.dims != pde.dims {
        return Err(TengError::DimensionMismatch("spectrum and PDE dimensions".into()));
    }
    Ok(SpectralRhs::new(pde, s).eval(s))
}

/// Time-resolved real-space reference samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub dims: usize,
    pub kmax: usize,
    /// Points per dimension of the evaluation grid.
    pub grid_n: usize,
    pub dt_ref: f64,
    pub times: Vec<f64>,
    /// Samples on the `grid_n^d` tensor grid, one vector per time.
    pub fields: Vec<Vec<f64>>,
}

impl ReferenceSolution {
    /// Field stored at time `t`, matched to within `1e-9 · max(1, |t|)`.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|i| self.fields[i].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub kmax: usize,
    pub dt_ref: f64,
    pub t_final: f64,
    /// Spacing of stored times; a whole multiple of `dt_ref`.
    pub save_dt: f64,
    /// Evaluation grid points per dimension.
    pub eval_n: usize,
}

fn whole_multiple(a: f64, b: f64) -> Result<usize> {
    let n = (a / b).round();
    if (n * b - a).abs() > 1e-9 * a.abs().max(b) {
        return Err(TengError::HorizonMismatch { t_final: a, dt: b });
    }
    Ok(n as usize)
}

/// Classical RK4 on the Fourier coefficients of `u0` (coefficients with
/// `|k_i| > kmax` are dropped first).
pub fn spectral_rk4_evolve(pde: &PdeSpec, u0: &SpectrumField, cfg: &ReferenceConfig) -> Result<ReferenceSolution> {
    pde.validate()?;
    if !(cfg.dt_ref > 0.0) || !(cfg.save_dt > 0.0) || !(cfg.t_final >= 0.0) {
        return Err(TengError::InvalidConfig("reference times must be positive".into()));
    }
    let n_steps = whole_multiple(cfg.t_final, cfg.dt_ref)?;
    let save_every = whole_multiple(cfg.save_dt, cfg.dt_ref)?.max(1);
    let mut c = truncate_spectrum(u0, cfg.kmax)?;
    let rhs = SpectralRhs::new(pde, &c);
    let dt = cfg.dt_ref;
    let axpy = |base: &SpectrumField, k: &SpectrumField, h: f64| {
        let mut out = base.clone();
        for (o, kk) in out.coeffs.iter_mut().zip(&k.coeffs) {
            *o += kk * h;
        }
        out
    };
    let mut times = vec![0.0];
    let mut fields = vec![sample_on_grid(&c, cfg.eval_n)?];
    for step in 1..=n_steps {
        let k1 = rhs.eval(&c);
        let k2 = rhs.eval(&axpy(&c, &k1, 0.5 * dt));
        let k3 = rhs.eval(&axpy(&c, &k2, 0.5 * dt));
        let k4 = rhs.eval(&axpy(&c, &k3, dt));
        for i in 0..c.coeffs.len() {
            c.coeffs[i] += (k1.coeffs[i] + k2.coeffs[i] * 2.0 + k3.coeffs[i] * 2.0 + k4.coeffs[i]) * (dt / 6.0);
        }
        let t = step as f64 * dt;
        if c.coeffs.iter().any(|z| !(z.norm() <= 1e10)) {
            return Err(TengError::BlowUp { t });
        }
        if step % save_every == 0 {
            times.push(t);
            fields.push(sample_on_grid(&c, cfg.eval_n)?);
        }
    }
    Ok(ReferenceSolution {
        dims: c.dims,
        kmax: cfg.kmax,
        grid_n: cfg.eval_n,
        dt_ref: dt,
        times,
        fields,
    })
}

/// Exact heat reference stored at multiples of `save_dt`.
pub fn heat_reference(u0: &SpectrumField, nu: f64, cfg: &ReferenceConfig) -> Result<ReferenceSolution> {
    let n_saves = whole_multiple(cfg.t_final, cfg.save_dt)?;
    let base = truncate_spectrum(u0, cfg.kmax)?;
    let mut times = Vec::with_capacity(n_saves + 1);
    let mut fields = Vec::with_capacity(n_saves + 1);
    for j in 0..=n_saves {
        let t = j as f64 * cfg.save_dt;
        times.push(t);
        fields.push(sample_on_grid(&heat_decay(&base, nu, t), cfg.eval_n)?);
    }
    Ok(ReferenceSolution {
        dims: base.dims,
        kmax: cfg.kmax,
        grid_n: cfg.eval_n,
        dt_ref: 0.0,
        times,
        fields,
    })
}
