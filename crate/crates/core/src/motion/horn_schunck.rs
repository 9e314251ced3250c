use serde::{Deserialize, Serialize};

use super::FlowField;
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HornSchunckParams {
    /// Smoothness weight.
    pub alpha: f64,
    /// Maximum number of Jacobi sweeps.
    pub iterations: usize,
    /// Stop once the largest per-pixel update of a sweep falls below this.
    pub early_stop_delta: f64,
}

impl Default for HornSchunckParams {
    fn default() -> Self {
        HornSchunckParams {
            alpha: 1.0,
            iterations: 200,
            early_stop_delta: 1e-4,
        }
    }
}

impl HornSchunckParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a positive finite number"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if !(self.early_stop_delta >= 0.0) {
            return Err(Error::config("early_stop_delta", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Spatial and temporal brightness derivatives on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f32>,
    pub iy: Vec<f32>,
    pub it: Vec<f32>,
}

/// Derivative estimates averaged over the 2×2×2 cube spanned by pixel
/// (x, y), its right/lower neighbours and the two frames. Images are reduced
/// to grayscale by channel mean; out-of-range neighbours replicate the edge.
pub fn image_gradients(a: &Image, b: &Image) -> Result<Gradients> {
    if a.dims() != b.dims() {
        return Err(Error::input(format!(
            "image_gradients: frames are {}×{} and {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let e0 = a.to_gray();
    let e1 = b.to_gray();
    let (w, h) = (a.width(), a.height());
    let (p, q) = (e0.data(), e1.data());
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h {
        let y1 = (y + 1).min(h - 1);
        for x in 0..w {
            let x1 = (x + 1).min(w - 1);
            let (a00, a01, a10, a11) = (p[y * w + x], p[y * w + x1], p[y1 * w + x], p[y1 * w + x1]);
            let (b00, b01, b10, b11) = (q[y * w + x], q[y * w + x1], q[y1 * w + x], q[y1 * w + x1]);
            let i = y * w + x;
            ix[i] = 0.25 * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
            iy[i] = 0.25 * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
            it[i] = 0.25 * ((b00 - a00) + (b10 - a10) + (b01 - a01) + (b11 - a11));
        }
    }
    Ok(Gradients {
        width: w,
        height: h,
        ix,
        iy,
        it,
    })
}

/// Per-pixel brightness-constancy residual `I_x·u + I_y·v + I_t`.
pub fn constancy_residual(g: &Gradients, flow: &FlowField) -> Vec<f32> {
    (0..g.ix.len())
        .map(|i| g.ix[i] * flow.u()[i] + g.iy[i] * flow.v()[i] + g.it[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub flow: FlowField,
    /// Sweeps actually performed.
    pub sweeps: usize,
    /// Whether the early-stop threshold ended the solve.
    pub converged: bool,
}

pub fn horn_schunck(a: &Image, b: &Image, params: &HornSchunckParams) -> Result<FlowField> {
    horn_schunck_observed(a, b, params, |_, _, _| {}).map(|o| o.flow)
}

/// Horn–Schunck Jacobi iteration from zero flow. `observe` is called after
/// every sweep with the sweep number (1-based) and the current (u, v).
pub fn horn_schunck_observed(
    a: &Image,
    b: &Image,
    params: &HornSchunckParams,
    mut observe: impl FnMut(usize, &[f32], &[f32]),
) -> Result<SolveOutcome> {
    params.validate()?;
    let g = image_gradients(a, b)?;
    let (w, h) = (g.width, g.height);
    let n = w * h;
    let alpha2 = (params.alpha * params.alpha) as f32;
    let denom: Vec<f32> = (0..n)
        .map(|i| 1.0 / (alpha2 + g.ix[i] * g.ix[i] + g.iy[i] * g.iy[i]))
        .collect();

    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut u_bar = vec![0.0f32; n];
    let mut v_bar = vec![0.0f32; n];
    let mut sweeps = 0;
    let mut converged = false;
    for sweep in 1..=params.iterations {
        neighbourhood_mean(&u, w, h, &mut u_bar);
        neighbourhood_mean(&v, w, h, &mut v_bar);
        let mut max_delta = 0.0f32;
        for i in 0..n {
            let r = (g.ix[i] * u_bar[i] + g.iy[i] * v_bar[i] + g.it[i]) * denom[i];
            let nu = u_bar[i] - g.ix[i] * r;
            let nv = v_bar[i] - g.iy[i] * r;
            max_delta = max_delta.max((nu - u[i]).abs()).max((nv - v[i]).abs());
            u[i] = nu;
            v[i] = nv;
        }
        if !max_delta.is_finite() || u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "Horn–Schunck flow diverged at iteration {sweep}"
            )));
        }
        sweeps = sweep;
        observe(sweep, &u, &v);
        if (max_delta as f64) < params.early_stop_delta {
            converged = true;
            break;
        }
    }
    Ok(SolveOutcome {
        flow: FlowField::new(w, h, u, v)?,
        sweeps,
        converged,
    })
}

/// Weighted 3×3 mean excluding the centre: 1/6 for edge neighbours, 1/12 for
/// corners, with edge replication at the border.
fn neighbourhood_mean(f: &[f32], w: usize, h: usize, out: &mut [f32]) {
    const EDGE: f32 = 1.0 / 6.0;
    const CORNER: f32 = 1.0 / 12.0;
    for y in 0..h {
        let up = &f[y.saturating_sub(1) * w..][..w];
        let mid = &f[y * w..][..w];
        let down = &f[(y + 1).min(h - 1) * w..][..w];
        let row = &mut out[y * w..][..w];
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            row[x] = EDGE * (up[x] + down[x] + mid[l] + mid[r])
                + CORNER * (up[l] + up[r] + down[l] + down[r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frames_have_zero_gradients() {
        let a = Image::from_fn(6, 5, 3, |_, _, _| 0.3);
        let g = image_gradients(&a, &a).unwrap();
        assert!(g.ix.iter().chain(&g.iy).chain(&g.it).all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp_gradient() {
        let w = 16;
        let a = Image::from_fn(w, 8, 3, |x, _, _| x as f32 / w as f32);
        let g = image_gradients(&a, &a).unwrap();
        for y in 0..8 {
            for x in 0..w - 1 {
                let i = y * w + x;
                assert!((g.ix[i] - 1.0 / w as f32).abs() < 1e-6);
                assert!(g.iy[i].abs() < 1e-6);
                assert_eq!(g.it[i], 0.0);
            }
        }
    }

    #[test]
    fn temporal_offset_only_moves_it() {
        let a = Image::from_fn(8, 8, 3, |x, y, _| ((x * 5 + y * 3) % 11) as f32 / 20.0);
        let b = Image::from_fn(8, 8, 3, |x, y, c| a.get(x, y, c) + 0.1);
        let ga = image_gradients(&a, &a).unwrap();
        let gb = image_gradients(&a, &b).unwrap();
        for i in 0..64 {
            assert!((gb.it[i] - 0.1).abs() < 1e-6);
            assert!((gb.ix[i] - ga.ix[i]).abs() < 1e-6);
            assert!((gb.iy[i] - ga.iy[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = Image::from_fn(12, 10, 3, |x, y, _| ((x * x + y) % 9) as f32 / 9.0);
        for alpha in [0.1, 1.0, 15.0] {
            let params = HornSchunckParams {
                alpha,
                iterations: 25,
                early_stop_delta: 0.0,
            };
            let flow = horn_schunck(&a, &a, &params).unwrap();
            assert!(flow.u().iter().chain(flow.v()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let a = Image::new(4, 4, 3);
        let bad = HornSchunckParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            horn_schunck(&a, &a, &bad),
            Err(Error::InvalidConfig { .. })
        ));
        let bad = HornSchunckParams {
            iterations: 0,
            ..Default::default()
        };
        assert!(horn_schunck(&a, &a, &bad).is_err());
    }

    #[test]
    fn early_stop_reports_sweeps() {
        let a = Image::from_fn(16, 16, 1, |x, _, _| (x as f32 * 0.4).sin() * 0.5 + 0.5);
        let b = Image::from_fn(16, 16, 1, |x, _, _| ((x as f32 - 1.0) * 0.4).sin() * 0.5 + 0.5);
        let params = HornSchunckParams {
            alpha: 1.0,
            iterations: 100_000,
            early_stop_delta: 1e-3,
        };
        let out = horn_schunck_observed(&a, &b, &params, |_, _, _| {}).unwrap();
        assert!(out.converged);
        assert!(out.sweeps < 100_000);
    }
}
