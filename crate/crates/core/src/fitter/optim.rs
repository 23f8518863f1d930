use crate::error::{Error, Result};

/// Central finite-difference gradient of `f` at `x`.
///
/// Fails with the offending coordinate when any probe is not finite.
pub fn gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    gradient_masked(f, x, step, &vec![true; x.len()])
}

/// Like [`gradient`] but only probes coordinates where `active` is set;
/// the rest are reported as zero.
pub fn gradient_masked<F>(f: F, x: &[f64], step: f64, active: &[bool]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        if !active[i] {
            continue;
        }
        probe[i] = x[i] + step;
        let up = f(&probe).map_err(|_| Error::Gradient { coordinate: i })?;
        probe[i] = x[i] - step;
        let down = f(&probe).map_err(|_| Error::Gradient { coordinate: i })?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Gradient { coordinate: i });
        }
        g[i] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

/// First and second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
        }
    }

    /// Descent direction scaled by `rate[i]` per coordinate.
    pub fn step(&mut self, g: &[f64], rate: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut out = vec![0.0; g.len()];
        for i in 0..g.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            out[i] = -rate[i] * mh / (vh.sqrt() + self.eps);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x0 = [0.3, -1.2, 2.0, 0.0];
        let f = |x: &[f64]| -> Result<f64> { Ok(x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum()) };
        let x = [1.0, 1.0, -1.0, 0.5];
        let g = gradient(f, &x, 1e-5).unwrap();
        for i in 0..4 {
            assert!((g[i] - 2.0 * (x[i] - x0[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let f = |x: &[f64]| -> Result<f64> { Ok(if x[2] > 1.0 { f64::NAN } else { x[0] }) };
        match gradient(f, &[0.0, 0.0, 1.0], 1e-3) {
            Err(Error::Gradient { coordinate }) => assert_eq!(coordinate, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn masked_coordinates_untouched() {
        let f = |x: &[f64]| -> Result<f64> { Ok(x[0] * 3.0 + x[1] * 5.0) };
        let g = gradient_masked(f, &[0.0, 0.0], 1e-4, &[false, true]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let s = opt.step(&g, &[0.01, 0.01]);
            x[0] += s[0];
            x[1] += s[1];
        }
        assert!(x[0].abs() < 0.05 && x[1].abs() < 0.05, "{x:?}");
    }
}
