//! Viscous Burgers `φ_t = ν φ_xx − φ φ_x` with periodic boundaries.
//!
//! The coarse initial condition is interpolated spectrally onto a finer
//! periodic grid, advanced with integrating-factor RK4 (diffusion handled
//! exactly, advection explicitly with 2/3 dealiasing) and reported on the
//! coarse mesh. Rows after the first are averages over the coarse cell
//! centred at each node; averaging over exactly one cell width annihilates
//! the Fourier modes that would alias onto the mean, so the discrete mean of
//! every row equals the conserved continuous mean.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{SpaceTimeMesh, Trajectory};
use crate::{Error, Result};

/// Fine-grid points per coarse cell.
const REFINEMENT: usize = 5;

struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers in FFT order.
    k: Vec<f64>,
    /// 2/3-rule mask.
    keep: Vec<bool>,
}

impl Spectral {
    fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|i| {
                let f = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                2.0 * PI * f / length
            })
            .collect();
        let cutoff = n / 3;
        let keep = (0..n)
            .map(|i| {
                let f = if i <= n / 2 { i } else { n - i };
                f <= cutoff
            })
            .collect();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k,
            keep,
        }
    }

    fn to_physical(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn to_spectral(&self, phys: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = phys.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// `−∂_x(φ²/2)` in spectral space, dealiased.
    fn advection(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let phys = self.to_physical(spec);
        let half_sq: Vec<f64> = phys.iter().map(|v| 0.5 * v * v).collect();
        let mut out = self.to_spectral(&half_sq);
        for ((o, &k), &keep) in out.iter_mut().zip(&self.k).zip(&self.keep) {
            *o = if keep { Complex64::new(0.0, -k) * *o } else { Complex64::new(0.0, 0.0) };
        }
        out
    }
}

/// Zero-pad the spectrum of `coarse` (one period, `m` distinct samples) to `n` modes.
fn interpolate_periodic(coarse: &[f64], n: usize) -> Vec<Complex64> {
    let m = coarse.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = coarse.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    let ratio = n as f64 / m as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, c) in buf.iter().enumerate() {
        let f = if i <= m / 2 { i as isize } else { i as isize - m as isize };
        if m.is_multiple_of(2) && i == m / 2 {
            // split the Nyquist mode symmetrically
            let half = *c * 0.5 * ratio;
            out[m / 2] += half;
            out[n - m / 2] += half;
            continue;
        }
        let idx = if f >= 0 { f as usize } else { (n as isize + f) as usize };
        out[idx] += *c * ratio;
    }
    out
}

/// Integrate Burgers from `ic` (length `n_x`, last node = first node by
/// periodicity) and record every mesh time.
pub fn solve_burgers(ic: &[f64], mesh: &SpaceTimeMesh, viscosity: f64) -> Result<Trajectory> {
    mesh.validate()?;
    if ic.len() != mesh.n_x {
        return Err(Error::Shape(format!("initial condition has {} values, mesh has {}", ic.len(), mesh.n_x)));
    }
    if !(viscosity > 0.0) {
        return Err(Error::InvalidArgument(format!("viscosity must be positive, got {viscosity}")));
    }
    if ic.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverBlowup { time_index: 0 });
    }

    let cells = mesh.n_x - 1;
    let n = cells * REFINEMENT;
    let length = mesh.x_max - mesh.x_min;
    let sp = Spectral::new(n, length);
    let mut v = interpolate_periodic(&ic[..cells], n);

    // one coarse cell wide box average, as a Fourier multiplier
    let cell = length / cells as f64;
    let box_filter: Vec<f64> = sp
        .k
        .iter()
        .map(|&k| {
            let a = 0.5 * k * cell;
            if a == 0.0 {
                1.0
            } else {
                a.sin() / a
            }
        })
        .collect();

    let amplitude = ic.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
    let k_max = sp.k.iter().zip(&sp.keep).filter(|(_, &keep)| keep).fold(0.0_f64, |m, (k, _)| m.max(k.abs()));
    // RK4 reaches about 2.8 on the imaginary axis; keep a margin
    let dt_cfl = 1.5 / (k_max * amplitude);
    let dt_out = mesh.dt();
    let substeps = (dt_out / dt_cfl).ceil().max(1.0) as usize;
    let h = dt_out / substeps as f64;

    let e_half: Vec<f64> = sp.k.iter().map(|k| (-viscosity * k * k * h / 2.0).exp()).collect();
    let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();

    let mut values = Vec::with_capacity(mesh.n_t * mesh.n_x);
    values.extend_from_slice(ic);

    let zero = Complex64::new(0.0, 0.0);
    let mut tmp = vec![zero; n];
    for step in 1..mesh.n_t {
        for _ in 0..substeps {
            let a: Vec<Complex64> = sp.advection(&v).into_iter().map(|x| x * h).collect();
            for i in 0..n {
                tmp[i] = (v[i] + a[i] * 0.5) * e_half[i];
            }
            let b: Vec<Complex64> = sp.advection(&tmp).into_iter().map(|x| x * h).collect();
            for i in 0..n {
                tmp[i] = v[i] * e_half[i] + b[i] * 0.5;
            }
            let c: Vec<Complex64> = sp.advection(&tmp).into_iter().map(|x| x * h).collect();
            for i in 0..n {
                tmp[i] = v[i] * e_full[i] + c[i] * e_half[i];
            }
            let d: Vec<Complex64> = sp.advection(&tmp).into_iter().map(|x| x * h).collect();
            for i in 0..n {
                v[i] = v[i] * e_full[i] + (a[i] * e_full[i] + (b[i] + c[i]) * (2.0 * e_half[i]) + d[i]) / 6.0;
            }
        }
        let filtered: Vec<Complex64> = v.iter().zip(&box_filter).map(|(c, f)| c * f).collect();
        let phys = sp.to_physical(&filtered);
        let start = values.len();
        for j in 0..cells {
            values.push(phys[j * REFINEMENT]);
        }
        values.push(phys[0]);
        if values[start..].iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverBlowup { time_index: step });
        }
    }

    Ok(Trajectory {
        n_t: mesh.n_t,
        n_x: mesh.n_x,
        values,
        ic_coefficients: [0.0; 3],
    })
}
