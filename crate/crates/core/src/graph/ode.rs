//! Adaptive Dormand–Prince 5(4) integration.

use super::GraphError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest step allowed, relative to `max(1, |t|)`.
    pub min_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, max_steps: 1_000_000, min_step: 1e-13 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `dy/dt = f(t, y)` from `t_grid[0]` and returns the state at
/// every grid time (the first row is `y0`). Steps are clipped so every grid
/// time is hit exactly.
pub fn dopri5<F>(
    mut f: F,
    y0: &[f64],
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<f64>>, GraphError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GraphError::Validation("time grid must be strictly increasing".into()));
    }
    let n = y0.len();
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y0.to_vec());
    let mut t = t_grid[0];
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t, &y, &mut k1);
    let mut h = initial_step(&mut f, t, &y, &k1, opts, t_grid.last().unwrap() - t);
    let mut steps = 0;
    let mut fac_old: f64 = 1e-4;

    for &target in &t_grid[1..] {
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(GraphError::Integration { time: t, reason: "too many steps".into() });
            }
            let remaining = target - t;
            let last = h >= remaining;
            let h_step = if last { remaining } else { h };
            if h_step < opts.min_step * t.abs().max(1.0) && !last {
                return Err(GraphError::Integration { time: t, reason: "step size underflow".into() });
            }

            for i in 0..n {
                tmp[i] = y[i] + h_step * A21 * k1[i];
            }
            f(t + C2 * h_step, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h_step, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h_step, &tmp, &mut k4);
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h_step, &tmp, &mut k5);
            for i in 0..n {
                tmp[i] = y[i]
                    + h_step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h_step, &tmp, &mut k6);
            for i in 0..n {
                y_new[i] = y[i]
                    + h_step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            f(t + h_step, &y_new, &mut k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = h_step
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / scale).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();

            if !err.is_finite() {
                h = h_step * 0.1;
                if h < opts.min_step * t.abs().max(1.0) {
                    return Err(GraphError::Integration { time: t, reason: "non-finite state".into() });
                }
                continue;
            }
            // PI step-size controller (Hairer's DOPRI5 constants).
            let fac11 = err.powf(0.2 - 0.04 * 0.75);
            let fac = (fac11 / fac_old.powf(0.04) / 0.9).clamp(0.1, 5.0);
            let h_proposed = h_step / fac;
            if err <= 1.0 {
                fac_old = err.max(1e-4);
                t = if last { target } else { t + h_step };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                // Keep the unclipped step when the grid forced a short one.
                h = if last { h.max(h_proposed) } else { h_proposed };
            } else {
                h = h_step / (fac11 / 0.9).min(5.0);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &OdeOptions, span: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len().max(1) as f64;
    let scale: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, d)| v + h0 * d).collect();
    let mut f1 = vec![0.0; y.len()];
    f(t + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&scale)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).max(1e-12)
}

/// Classical fixed-step RK4, an independent check of [`dopri5`].
#[cfg(test)]
pub(crate) fn rk4_fixed<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let steps = ((t1 - t0) / h).round().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}
