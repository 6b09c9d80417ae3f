//! Lattice regularizers.
//!
//! Smoothness is the sum of squared forward differences of every output
//! channel along all three lattice axes. Monotonicity is a hinge on the
//! forward differences of output channel `c` along input axis `c` only.

use super::{Lut3D, LutBank};

/// Strides (in lattice scalars) of the r, g, b axes.
fn strides(m: usize) -> [usize; 3] {
    [3, 3 * m, 3 * m * m]
}

/// Calls `f(lower, upper)` for every pair of adjacent nodes along `axis`,
/// passing the offsets of their channel-0 entries.
fn for_each_step(m: usize, axis: usize, mut f: impl FnMut(usize, usize)) {
    let st = strides(m);
    for b in 0..m {
        for g in 0..m {
            for r in 0..m {
                let coord = [r, g, b];
                if coord[axis] + 1 >= m {
                    continue;
                }
                let lo = r * st[0] + g * st[1] + b * st[2];
                f(lo, lo + st[axis]);
            }
        }
    }
}

/// Smoothness of one lattice, optionally with its gradient.
pub(crate) fn smooth_value_grad(lattice: &[f64], m: usize, grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for axis in 0..3 {
        for_each_step(m, axis, |lo, hi| {
            for c in 0..3 {
                let d = lattice[hi + c] - lattice[lo + c];
                total += d * d;
                if let Some(g) = grad.as_deref_mut() {
                    g[hi + c] += 2.0 * d;
                    g[lo + c] -= 2.0 * d;
                }
            }
        });
    }
    total
}

/// Monotonicity penalty of one lattice, optionally with its (sub)gradient.
pub(crate) fn mono_value_grad(lattice: &[f64], m: usize, grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for axis in 0..3 {
        let c = axis;
        for_each_step(m, axis, |lo, hi| {
            let d = lattice[hi + c] - lattice[lo + c];
            if d < 0.0 {
                total -= d;
                if let Some(g) = grad.as_deref_mut() {
                    g[hi + c] -= 1.0;
                    g[lo + c] += 1.0;
                }
            }
        });
    }
    total
}

pub fn smooth_reg_lut(lut: &Lut3D) -> f64 {
    smooth_value_grad(lut.lattice(), lut.dim(), None)
}

pub fn mono_reg_lut(lut: &Lut3D) -> f64 {
    mono_value_grad(lut.lattice(), lut.dim(), None)
}

/// Smoothness summed over the bank.
pub fn smooth_reg(bank: &LutBank) -> f64 {
    bank.luts().iter().map(smooth_reg_lut).sum()
}

/// Monotonicity penalty summed over the bank.
pub fn mono_reg(bank: &LutBank) -> f64 {
    bank.luts().iter().map(mono_reg_lut).sum()
}
