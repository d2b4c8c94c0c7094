//! Fixed-step classical Runge-Kutta with cubic Hermite dense output.

use crate::{Error, Result};

/// Samples of a solution on a uniform grid, with the vector field at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub t0: f64,
    pub h: f64,
    pub ys: Vec<Vec<f64>>,
    pub dys: Vec<Vec<f64>>,
}

impl DenseTrajectory {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h * (self.ys.len() - 1) as f64
    }

    pub fn endpoint(&self) -> &[f64] {
        self.ys.last().expect("nonempty trajectory")
    }

    /// Cubic Hermite interpolation, clamped to the sampled interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.ys[0].len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let last = self.ys.len() - 1;
        if last == 0 || self.h == 0.0 {
            out.copy_from_slice(&self.ys[0]);
            return;
        }
        let u = ((t - self.t0) / self.h).clamp(0.0, last as f64);
        let k = (u.floor() as usize).min(last - 1);
        let s = u - k as f64;
        if s == 0.0 {
            out.copy_from_slice(&self.ys[k]);
            return;
        }
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1, d0, d1) = (&self.ys[k], &self.ys[k + 1], &self.dys[k], &self.dys[k + 1]);
        for d in 0..out.len() {
            out[d] = h00 * y0[d] + h10 * self.h * d0[d] + h01 * y1[d] + h11 * self.h * d1[d];
        }
    }
}

/// Integrates `y' = f(t, y)` over `[t0, t0 + span]` with `steps` RK4 steps.
pub fn rk4<E, F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    span: f64,
    steps: usize,
) -> Result<DenseTrajectory, E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let n = y0.len();
    let steps = steps.max(1);
    let h = span / steps as f64;
    let mut ys = Vec::with_capacity(steps + 1);
    let mut dys = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    f(t0, &y, &mut k1)?;
    for s in 0..steps {
        let t = t0 + h * s as f64;
        ys.push(y.clone());
        dys.push(k1.clone());
        for d in 0..n {
            tmp[d] = y[d] + 0.5 * h * k1[d];
        }
        f(t + 0.5 * h, &tmp, &mut k2)?;
        for d in 0..n {
            tmp[d] = y[d] + 0.5 * h * k2[d];
        }
        f(t + 0.5 * h, &tmp, &mut k3)?;
        for d in 0..n {
            tmp[d] = y[d] + h * k3[d];
        }
        f(t + h, &tmp, &mut k4)?;
        for d in 0..n {
            y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        f(t0 + h * (s + 1) as f64, &y, &mut k1)?;
    }
    ys.push(y);
    dys.push(k1);
    Ok(DenseTrajectory { t0, h, ys, dys })
}

/// Richardson estimate of the endpoint error of the coarser of two runs
/// (`steps` and `2 * steps`) for a fourth-order method.
pub fn richardson_estimate(coarse: &[f64], fine: &[f64]) -> f64 {
    coarse
        .iter()
        .zip(fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        * 16.0
        / 15.0
}

/// Runs [`rk4`] at `steps` and `2 * steps` and fails when the estimated endpoint
/// error of the `steps` run exceeds `tol`. Returns the `steps` run and the estimate.
pub fn rk4_audited<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    span: f64,
    steps: usize,
    tol: f64,
) -> Result<(DenseTrajectory, f64)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let coarse = rk4(&mut f, t0, y0, span, steps)?;
    let fine = rk4(&mut f, t0, y0, span, 2 * steps.max(1))?;
    let est = richardson_estimate(coarse.endpoint(), fine.endpoint());
    if !(est <= tol) {
        return Err(Error::Integration { estimate: est, tol });
    }
    Ok((coarse, est))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], out: &mut [f64]) -> Result<(), ()> {
        out[0] = -y[0];
        Ok(())
    }

    #[test]
    fn exponential_decay() {
        let tr = rk4(decay, 0.0, &[1.0], 1.0, 100).unwrap();
        assert!((tr.endpoint()[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!((tr.t_end() - 1.0).abs() < 1e-15);
        // Dense output between nodes.
        let mid = tr.eval(0.505)[0];
        assert!((mid - (-0.505f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn hermite_is_exact_for_cubics() {
        let f = |t: f64, _y: &[f64], out: &mut [f64]| -> Result<(), ()> {
            out[0] = 3.0 * t * t - 2.0;
            Ok(())
        };
        let tr = rk4(f, 0.0, &[1.0], 2.0, 4).unwrap();
        for k in 0..=40 {
            let t = k as f64 / 20.0;
            let exact = t * t * t - 2.0 * t + 1.0;
            assert!((tr.eval(t)[0] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn audit_rejects_coarse_steps() {
        let stiff = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
            out[0] = -50.0 * y[0];
            Ok(())
        };
        assert!(rk4_audited(stiff, 0.0, &[1.0], 1.0, 10, 1e-8).is_err());
        assert!(rk4_audited(stiff, 0.0, &[1.0], 1.0, 2000, 1e-8).is_ok());
    }
}
