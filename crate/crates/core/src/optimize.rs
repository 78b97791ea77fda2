//! One-dimensional bounded maximisation: dense grid seed, golden-section polish.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Result of [`maximize_scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMax {
    pub argmax: f64,
    pub value: f64,
}

/// Maximises `f` on `[lo, hi]`.
///
/// The grid (`grid_size` + 1 equispaced nodes, endpoints included) picks the
/// best bracket; golden-section search then refines inside the two
/// neighbouring cells until the bracket is narrower than `x_tol` or
/// `max_iters` is reached. The grid best is kept if refinement does not
/// improve it, so the result never falls below the grid maximum.
pub fn maximize_scalar<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    grid_size: usize,
    max_iters: usize,
    x_tol: f64,
) -> ScalarMax {
    assert!(hi > lo, "empty interval [{lo}, {hi}]");
    let n = grid_size.max(2);
    let h = (hi - lo) / n as f64;
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n {
        let v = f(lo + h * i as f64);
        // Strict comparison: ties resolve to the lowest index.
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut out = ScalarMax {
        argmax: lo + h * best_i as f64,
        value: best,
    };

    let mut a = lo + h * best_i.saturating_sub(1) as f64;
    let mut b = (lo + h * (best_i + 1) as f64).min(hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..max_iters {
        if (b - a).abs() < x_tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > out.value {
            out = ScalarMax { argmax: x, value: v };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let r = maximize_scalar(|x| -(x - 0.3).powi(2) + 2.0, 0.0, 1.0, 64, 200, 1e-12);
        assert!((r.argmax - 0.3).abs() < 1e-6);
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_maximum() {
        let r = maximize_scalar(|x| x, 0.0, 1.0, 64, 200, 1e-12);
        assert!((r.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn multimodal_uses_grid_seed() {
        // Two bumps, the taller one narrow and away from the centre.
        let f = |x: f64| (-(x - 0.2).powi(2) / 0.01).exp() + 1.5 * (-(x - 0.8).powi(2) / 1e-4).exp();
        let r = maximize_scalar(f, 0.0, 1.0, 1000, 200, 1e-12);
        assert!((r.argmax - 0.8).abs() < 1e-6);
    }
}
