//! Central finite-difference helpers used by the gradient test suites.

use crate::tensor::Tensor;

/// Step used by the verification suites.
pub const STEP: f64 = 1e-5;

/// Initial step of [`numeric_grad_kink_aware`].
pub const STEP_KINK_AWARE: f64 = 1e-3;

/// Step reductions (by 10 each) tried by [`numeric_grad_kink_aware`].
pub const KINK_AWARE_LEVELS: usize = 4;

/// Central-difference estimate of `d loss / d x` for every element of `x`.
pub fn numeric_grad(
    x: &Tensor<f64>,
    h: f64,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    stencil(x, h, |f| (f(1.0) - f(-1.0)) / (2.0 * h), &mut loss)
}

/// Five-point central difference, truncation error `O(h^4)`.
pub fn numeric_grad_fourth_order(
    x: &Tensor<f64>,
    h: f64,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    stencil(
        x,
        h,
        |f| (f(-2.0) - 8.0 * f(-1.0) + 8.0 * f(1.0) - f(2.0)) / (12.0 * h),
        &mut loss,
    )
}

/// Derivative estimate for piecewise-smooth losses such as ReLU networks.
///
/// `loss` returns the value and the pattern of active pieces (for example
/// the signs of all ReLU inputs). A probe point whose pattern differs from
/// the pattern at `x` lies across a kink. Per entry the five-point central
/// stencil is used when all its points share the base pattern, otherwise a
/// four-point one-sided stencil on a clean side; if neither side is clean
/// the step is divided by 10, up to [`KINK_AWARE_LEVELS`] times, before
/// falling back to the central stencil.
pub fn numeric_grad_kink_aware<P: PartialEq>(
    x: &Tensor<f64>,
    h: f64,
    mut loss: impl FnMut(&Tensor<f64>) -> (f64, P),
) -> Tensor<f64> {
    let (f0, p0) = loss(x);
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let mut eval = |m: f64, s: f64| {
            probe.data_mut()[i] = orig + m * s;
            let (v, p) = loss(&probe);
            (v, p == p0)
        };
        let mut s = h;
        let mut estimate = None;
        for level in 0..KINK_AWARE_LEVELS {
            let [(fm2, cm2), (fm1, cm1), (fp1, cp1), (fp2, cp2)] =
                [-2.0, -1.0, 1.0, 2.0].map(|m| eval(m, s));
            let central = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * s);
            if cm2 && cm1 && cp1 && cp2 {
                estimate = Some(central);
                break;
            }
            if cp1 && cp2 {
                let (fp3, cp3) = eval(3.0, s);
                if cp3 {
                    estimate = Some((-11.0 * f0 + 18.0 * fp1 - 9.0 * fp2 + 2.0 * fp3) / (6.0 * s));
                    break;
                }
            }
            if cm1 && cm2 {
                let (fm3, cm3) = eval(-3.0, s);
                if cm3 {
                    estimate = Some((11.0 * f0 - 18.0 * fm1 + 9.0 * fm2 - 2.0 * fm3) / (6.0 * s));
                    break;
                }
            }
            if level + 1 == KINK_AWARE_LEVELS {
                estimate = Some(central);
            }
            s /= 10.0;
        }
        probe.data_mut()[i] = orig;
        grad.push(estimate.expect("at least one level"));
    }
    Tensor::new(x.shape(), grad).expect("finite-difference gradient is finite")
}

fn stencil(
    x: &Tensor<f64>,
    h: f64,
    rule: impl Fn(&mut dyn FnMut(f64) -> f64) -> f64,
    loss: &mut dyn FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let mut at = |m: f64| {
            probe.data_mut()[i] = orig + m * h;
            loss(&probe)
        };
        grad.push(rule(&mut at));
        probe.data_mut()[i] = orig;
    }
    Tensor::new(x.shape(), grad).expect("finite-difference gradient is finite")
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)`.
///
/// The floor keeps entries whose true gradient is near zero from dominating
/// through cancellation noise.
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Dot product, the usual way to turn a tensor-valued function into a
/// scalar loss `sum(weights * f(x))`.
pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "dot of mismatched shapes");
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
