use crate::error::{numeric, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenResult {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

/// Golden-section maximization of a unimodal `f` on `[a, b]` until the bracket
/// is narrower than `xtol`. Ties keep the left sub-bracket, so flat regions
/// resolve toward smaller arguments.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> GoldenResult {
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while hi - lo > xtol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        evals += 1;
        if evals > 500 {
            break;
        }
    }
    if fc >= fd {
        GoldenResult { x: c, value: fc, evals }
    } else {
        GoldenResult { x: d, value: fd, evals }
    }
}

pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> GoldenResult {
    let r = golden_max(|x| -f(x), a, b, xtol);
    GoldenResult { value: -r.value, ..r }
}

/// Evaluates `f` on the sorted `grid`, then refines the best grid point by
/// golden-section inside its two neighbouring cells. Handles objectives that
/// are only locally unimodal.
pub fn scan_then_golden_max<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64], xtol: f64) -> GoldenResult {
    assert!(!grid.is_empty());
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in grid.iter().enumerate() {
        let v = f(x);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    if grid.len() == 1 {
        return GoldenResult { x: grid[0], value: best_val, evals: 1 };
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_max(&mut f, lo, hi, xtol);
    let evals = grid.len() + refined.evals;
    if refined.value > best_val {
        GoldenResult { evals, ..refined }
    } else {
        GoldenResult { x: grid[best], value: best_val, evals }
    }
}

/// Bracketed root of a monotone-ish `f` with `f(a)` and `f(b)` of opposite
/// sign, by the Illinois variant of false position. Stops when the bracket is
/// narrower than `xtol` or `|f| <= ftol`.
pub fn bracketed_root<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    xtol: f64,
    ftol: f64,
) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(numeric(format!(
            "root not bracketed: f({a})={fa}, f({b})={fb}"
        )));
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc.abs() <= ftol || (b - a).abs() <= xtol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(numeric("bracketed root search did not converge"))
}
