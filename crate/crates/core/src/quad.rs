//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands,
//! with the usual QUADPACK changes of variable for infinite limits.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

/// Integrates a `dim`-valued function over `[a, b]`; either limit may be infinite.
/// The integrand writes its values into the provided slice.
pub fn integrate<F>(f: F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    integrate_dyn(&f, a, b, dim, opts)
}

fn integrate_dyn(f: &dyn Fn(f64, &mut [f64]), a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::ParameterDomain("NaN integration limit".into()));
    }
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    if a > b {
        let mut v = integrate_dyn(f, b, a, dim, opts)?;
        v.iter_mut().for_each(|x| *x = -*x);
        return Ok(v);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adaptive(f, a, b, dim, opts),
        (true, false) => {
            // x = a + t/(1−t)
            let g = |t: f64, out: &mut [f64]| {
                let s = 1.0 - t;
                f(a + t / s, out);
                let jac = 1.0 / (s * s);
                out.iter_mut().for_each(|v| *v *= jac);
            };
            adaptive(&g, 0.0, 1.0, dim, opts)
        }
        (false, true) => {
            // x = b − (1−t)/t
            let g = |t: f64, out: &mut [f64]| {
                f(b - (1.0 - t) / t, out);
                let jac = 1.0 / (t * t);
                out.iter_mut().for_each(|v| *v *= jac);
            };
            adaptive(&g, 0.0, 1.0, dim, opts)
        }
        (false, false) => {
            let mut left = integrate_dyn(f, f64::NEG_INFINITY, 0.0, dim, opts)?;
            let right = integrate_dyn(f, 0.0, f64::INFINITY, dim, opts)?;
            left.iter_mut().zip(right).for_each(|(l, r)| *l += r);
            Ok(left)
        }
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate(|x, out: &mut [f64]| out[0] = f(x), a, b, 1, opts).map(|v| v[0])
}

fn gk15<F: Fn(f64, &mut [f64]) + ?Sized>(f: &F, a: f64, b: f64, dim: usize) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let gauss_weight = if j % 2 == 1 { Some(WG[j / 2]) } else { None };
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in nodes {
            f(centre + sgn * half * x, &mut buf);
            for k in 0..dim {
                kronrod[k] += wk * buf[k];
                if let Some(wg) = gauss_weight {
                    gauss[k] += wg * buf[k];
                }
            }
        }
    }
    let mut error = 0.0_f64;
    for k in 0..dim {
        kronrod[k] *= half;
        gauss[k] *= half;
        error = error.max((kronrod[k] - gauss[k]).abs());
    }
    Segment {
        a,
        b,
        value: kronrod,
        error,
    }
}

fn adaptive<F: Fn(f64, &mut [f64]) + ?Sized>(f: &F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Vec<f64>> {
    let mut segments = vec![gk15(f, a, b, dim)];
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for s in &segments {
            for k in 0..dim {
                total[k] += s.value[k];
            }
            err += s.error;
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err <= opts.abs_tol.max(opts.rel_tol * scale) {
            return Ok(total);
        }
        if segments.len() >= opts.max_intervals {
            return Err(Error::NotConverged {
                what: "adaptive quadrature",
                iterations: segments.len(),
                residual: err,
            });
        }
        let (worst, _) = segments.iter().enumerate().fold(
            (0, -1.0),
            |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc },
        );
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval cannot be split further in floating point; accept it as is.
            let mut frozen = seg;
            frozen.error = 0.0;
            segments.push(frozen);
            continue;
        }
        segments.push(gk15(f, seg.a, mid, dim));
        segments.push(gk15(f, mid, seg.b, dim));
    }
}
