//! Globally adaptive Gauss-Kronrod (7/15) quadrature.
//!
//! The integrand returns `N` components integrated on shared nodes. Component
//! 0 drives refinement; its error is measured against the magnitude of a
//! chosen scale component, so a vanishing integral still has a meaningful
//! relative tolerance.

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
    0.209_482_141_084_728,
];
/// Gauss weights for the odd-indexed Kronrod nodes, last entry at the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<const N: usize> {
    pub values: [f64; N],
    /// Error estimate of component 0.
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel<const N: usize> {
    lo: f64,
    hi: f64,
    values: [f64; N],
    error: f64,
}

fn kronrod<const N: usize, F>(f: &mut F, lo: f64, hi: f64) -> Result<Panel<N>>
where
    F: FnMut(f64) -> Result<[f64; N]>,
{
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let centre = f(c)?;
    let mut k = centre.map(|v| WGK[7] * v);
    let mut g = WG[3] * centre[0];
    for j in 0..7 {
        let l = f(c - h * XGK[j])?;
        let r = f(c + h * XGK[j])?;
        for i in 0..N {
            k[i] += WGK[j] * (l[i] + r[i]);
        }
        if j % 2 == 1 {
            g += WG[j / 2] * (l[0] + r[0]);
        }
    }
    Ok(Panel {
        lo,
        hi,
        values: k.map(|v| v * h),
        error: ((k[0] - g) * h).abs(),
    })
}

/// Integrate over `[lo, hi]` until the error estimate of component 0 is below
/// `max(abs_tol, rel_tol |I_scale|)`, splitting the worst panel each round.
pub fn integrate<const N: usize, F>(
    mut f: F,
    lo: f64,
    hi: f64,
    abs_tol: f64,
    rel_tol: f64,
    scale: usize,
    max_panels: usize,
) -> Result<QuadResult<N>>
where
    F: FnMut(f64) -> Result<[f64; N]>,
{
    assert!(scale < N, "scale component out of range");
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bad integration interval [{lo}, {hi}]")));
    }
    let mut panels = vec![kronrod(&mut f, lo, hi)?];
    loop {
        let mut values = [0.0; N];
        for p in &panels {
            for i in 0..N {
                values[i] += p.values[i];
            }
        }
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let tol = abs_tol.max(rel_tol * values[scale].abs());
        if error <= tol || panels.len() >= max_panels {
            if error > tol {
                return Err(Error::NonConvergent {
                    terms: panels.len(),
                });
            }
            return Ok(QuadResult {
                values,
                error,
                evaluations: 15 * (2 * panels.len() - 1),
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .map(|(i, _)| i)
            .unwrap();
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        panels.push(kronrod(&mut f, p.lo, mid)?);
        panels.push(kronrod(&mut f, mid, p.hi)?);
    }
}
