//! Bounded Nelder-Mead. Trial points are clamped into the box.

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = if v.is_nan() { self.lo[i] } else { v.clamp(self.lo[i], self.hi[i]) };
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when `f_worst - f_best <= rel_tol * max(|f_best|, abs_floor)`.
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Initial edge length as a fraction of each bound range.
    pub initial_step: f64,
    /// Extra simplex rebuilds at the converged point.
    pub rebuilds: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            rel_tol: 1e-9,
            abs_floor: 1e-20,
            initial_step: 0.1,
            rebuilds: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_start: f64,
    pub x_start: Vec<f64>,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Run<'a, F> {
    f: &'a F,
    bounds: &'a Bounds,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Run<'_, F> {
    fn eval(&mut self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        self.bounds.clamp(&mut x);
        self.evals += 1;
        let v = (self.f)(&x);
        (x, if v.is_nan() { f64::INFINITY } else { v })
    }
}

fn initial_simplex<F: Fn(&[f64]) -> f64>(run: &mut Run<F>, x0: &[f64], step: f64) -> Vec<(Vec<f64>, f64)> {
    let b = run.bounds;
    let mut pts = vec![run.eval(x0.to_vec())];
    for i in 0..b.dim() {
        let mut x = pts[0].0.clone();
        let h = step * (b.hi[i] - b.lo[i]);
        x[i] = if x[i] + h <= b.hi[i] { x[i] + h } else { x[i] - h };
        pts.push(run.eval(x));
    }
    pts
}

/// Minimize `f` from `x0` (clamped into `bounds`).
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], bounds: &Bounds, opts: &SimplexOptions) -> SimplexOutcome {
    let n = bounds.dim();
    let mut run = Run { f, bounds, evals: 0 };
    let mut simplex = initial_simplex(&mut run, x0, opts.initial_step);
    let (x_start, f_start) = simplex[0].clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut rebuilds_left = opts.rebuilds;
    let mut step = opts.initial_step;

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        if fw - fb <= opts.rel_tol * fb.abs().max(opts.abs_floor) {
            if rebuilds_left == 0 {
                converged = true;
                break;
            }
            rebuilds_left -= 1;
            step *= 0.1;
            let best = simplex[0].0.clone();
            simplex = initial_simplex(&mut run, &best, step);
            continue;
        }
        if run.evals >= opts.max_evals {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst = simplex[n].0.clone();
        let (xr, fr) = run.eval(along(1.0, &worst));
        if fr < simplex[0].1 {
            let (xe, fe) = run.eval(along(2.0, &worst));
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fw {
                run.eval(along(0.5, &worst))
            } else {
                run.eval(along(-0.5, &worst))
            };
            if fc < fr.min(fw) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    *vertex = run.eval(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    SimplexOutcome {
        x,
        f,
        f_start,
        x_start,
        evals: run.evals,
        iterations,
        converged,
    }
}

/// Golden-section minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (c.abs() + d.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < f64::EPSILON * a.abs() {
            break;
        }
    }
    0.5 * (a + b)
}

/// Coarse scan of `n` points on `[a, b]` followed by golden-section
/// refinement around the best one.
pub fn scan_then_refine<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize, tol: f64) -> f64 {
    let grid: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let best = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, f(x)))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(n - 1)];
    golden_section(f, lo, hi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let b = Bounds {
            lo: vec![-2.0, -2.0],
            hi: vec![2.0, 2.0],
        };
        let out = minimize(&f, &[-1.5, 1.5], &b, &SimplexOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out.x);
        assert!(out.f <= out.f_start);
    }

    #[test]
    fn minimum_on_boundary() {
        let f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 0.3).powi(2);
        let b = Bounds {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let out = minimize(&f, &[5.0, -3.0], &b, &SimplexOptions::default());
        assert!(out.converged);
        assert!(out.x[0].abs() < 1e-6 && (out.x[1] - 0.3).abs() < 1e-4, "{:?}", out.x);
        assert_eq!(out.x_start, vec![1.0, 0.0]);
    }

    #[test]
    fn golden() {
        let x = golden_section(|x| (x - 0.37).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.37).abs() < 1e-8);
        let y = scan_then_refine(|x| (x.ln() + 2.0).powi(2), 0.01, 1.0, 50, 1e-10);
        assert!((y - (-2f64).exp()).abs() < 1e-7);
    }
}
