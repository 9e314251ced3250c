use crate::error::{Error, Result};

/// One trainable buffer and its gradient, as seen by the optimizer.
pub struct NamedParam<'a> {
    pub name: &'a str,
    pub value: &'a mut [f32],
    pub grad: &'a [f32],
}

/// Adam moments and hyper-parameters. Moment buffers are keyed by position:
/// callers must present parameters in the same order on every step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive finite number"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(field, "must lie strictly between 0 and 1"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }

    /// First moment of parameter `i`, if it has been tracked yet.
    pub fn first_moment(&self, i: usize) -> Option<&[f32]> {
        self.m.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[f32]> {
        self.v.get(i).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update over `params`. Every gradient is checked
/// for finiteness before any parameter is touched.
pub fn adam_step(params: &mut [NamedParam<'_>], state: &mut AdamState) -> Result<()> {
    state.validate()?;
    for p in params.iter() {
        if p.value.len() != p.grad.len() {
            return Err(Error::input(format!(
                "adam: parameter `{}` has {} values but {} gradients",
                p.name,
                p.value.len(),
                p.grad.len()
            )));
        }
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter `{}` at optimizer step {}",
                p.name,
                state.step + 1
            )));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len()
        || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
    {
        return Err(Error::input(
            "adam: parameter list does not match the tracked moment buffers",
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let (g1, g2) = ((1.0 - state.beta1) as f32, (1.0 - state.beta2) as f32);
    let c1 = (1.0 - state.beta1.powi(t)) as f32;
    let c2 = (1.0 - state.beta2.powi(t)) as f32;
    let lr = state.lr as f32;
    let eps = state.eps as f32;
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + g1 * g;
            v[i] = b2 * v[i] + g2 * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(w: &mut f32, g: f32, state: &mut AdamState) {
        let mut value = [*w];
        let grad = [g];
        adam_step(
            &mut [NamedParam {
                name: "w",
                value: &mut value,
                grad: &grad,
            }],
            state,
        )
        .unwrap();
        *w = value[0];
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(0.005);
        let mut w = 0.5f32;
        step_scalar(&mut w, 0.0, &mut state);
        assert_eq!(w, 0.5);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut state = AdamState::new(0.005);
        let mut w = 0.5f32;
        step_scalar(&mut w, 1.0, &mut state);
        let (m1, v1) = (state.first_moment(0).unwrap()[0], state.second_moment(0).unwrap()[0]);
        step_scalar(&mut w, 0.0, &mut state);
        assert_eq!(state.first_moment(0).unwrap()[0], 0.9 * m1);
        assert_eq!(state.second_moment(0).unwrap()[0], 0.999 * v1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // m = 1, v = 0.1 → m̂ = 10, v̂ = 100 → Δ = 0.005 · 10 / (10 + 1e-8)
        let mut state = AdamState::new(0.005);
        let mut w = 0.0f32;
        step_scalar(&mut w, 10.0, &mut state);
        let expected = -0.005 * 10.0 / (10.0 + 1e-8);
        assert!((w as f64 - expected).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn second_identical_step_matches_lr() {
        let mut state = AdamState::new(0.005);
        let mut w = 0.0f32;
        step_scalar(&mut w, 1.0, &mut state);
        let before = w;
        step_scalar(&mut w, 1.0, &mut state);
        // m = 0.19, v = 0.001999 → m̂ = 1, v̂ = 1 → Δ ≈ lr
        let delta = (before - w) as f64;
        assert!((delta - 0.005).abs() / 0.005 < 0.01, "step {delta}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut state = AdamState::new(0.005);
        let mut value = [0.0f32, 1.0];
        let grad = [0.0f32, f32::NAN];
        let err = adam_step(
            &mut [NamedParam {
                name: "decoder.head.weight",
                value: &mut value,
                grad: &grad,
            }],
            &mut state,
        )
        .unwrap_err();
        assert!(err.to_string().contains("decoder.head.weight"));
        assert_eq!(state.step, 0);
        assert_eq!(value, [0.0, 1.0]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut state = AdamState::new(0.01);
            let mut value: Vec<f32> = (0..17).map(|i| i as f32 * 0.1 - 0.8).collect();
            for k in 0..5 {
                let grad: Vec<f32> = (0..17).map(|i| ((i * 7 + k) as f32).sin()).collect();
                adam_step(
                    &mut [NamedParam {
                        name: "p",
                        value: &mut value,
                        grad: &grad,
                    }],
                    &mut state,
                )
                .unwrap();
            }
            (value, state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(sa, sb);
        assert_eq!(sa.step, 5);
    }
}
