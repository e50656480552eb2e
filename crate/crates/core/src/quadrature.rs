//! Gauss-Legendre rules and composite rules with prescribed breakpoints.

use crate::fourier::BoxRegion;
use crate::scalar::{from_usize, lit, Real};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = from_usize::<T>(n);
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (T::PI() * (from_usize::<T>(i) + lit(0.75)) / (nf + lit(0.5))).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= T::eps() * lit(4.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != T::zero() {
            dp = d;
        }
        let w = lit::<T>(2.0) / ((T::one() - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 2..=n {
        let kf = from_usize::<T>(k);
        let p2 = ((kf + kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (T::one(), T::zero());
    }
    let nf = from_usize::<T>(n);
    let d = nf * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Composite rule on `[a, b]`: the interval is cut at every breakpoint that
/// falls strictly inside it, each piece is split into `panels` equal panels,
/// and each panel carries an `order`-point Gauss rule.
#[derive(Clone, Debug)]
pub struct CompositeRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> CompositeRule<T> {
    pub fn new(a: T, b: T, breakpoints: &[T], panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre::<T>(order);
        let mut cuts = vec![a];
        let mut inner: Vec<T> = breakpoints.iter().copied().filter(|&p| p > a && p < b).collect();
        inner.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
        inner.dedup();
        cuts.extend(inner);
        cuts.push(b);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let half = lit::<T>(0.5);
        for piece in cuts.windows(2) {
            let (lo, hi) = (piece[0], piece[1]);
            let h = (hi - lo) / from_usize::<T>(panels);
            for p in 0..panels {
                let pa = lo + h * from_usize::<T>(p);
                let pb = if p + 1 == panels { hi } else { pa + h };
                let mid = half * (pa + pb);
                let rad = half * (pb - pa);
                for (t, w) in gx.iter().zip(&gw) {
                    nodes.push(mid + rad * *t);
                    weights.push(rad * *w);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(T) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + w * f(x))
    }
}

/// Tensor product of per-axis composite rules (no breakpoints) over a box:
/// `(points, weights)` with `(panels · order)^d` nodes.
pub fn tensor_rule<T: Real>(omega: &BoxRegion<T>, panels: usize, order: usize) -> (Vec<Vec<T>>, Vec<T>) {
    let mut points: Vec<Vec<T>> = vec![Vec::new()];
    let mut weights: Vec<T> = vec![T::one()];
    for (&lo, &hi) in omega.lo.iter().zip(&omega.hi) {
        let rule = CompositeRule::new(lo, hi, &[], panels, order);
        let mut next_p = Vec::with_capacity(points.len() * rule.len());
        let mut next_w = Vec::with_capacity(points.len() * rule.len());
        for (p, &w) in points.iter().zip(&weights) {
            for (&x, &wx) in rule.nodes.iter().zip(&rule.weights) {
                let mut q = p.clone();
                q.push(x);
                next_p.push(q);
                next_w.push(w * wx);
            }
        }
        points = next_p;
        weights = next_w;
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre::<f64>(n);
            let sum: f64 = w.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "n={n}");
            for p in 0..(2 * n) {
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((got - exact).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn composite_handles_kinks() {
        let rule = CompositeRule::new(-1.0, 1.0, &[0.3, -1.0, 0.3], 2, 8);
        let got = rule.integrate(|x: f64| (x - 0.3).abs());
        let exact = (1.3f64.powi(2) + 0.7f64.powi(2)) / 2.0;
        assert!((got - exact).abs() < 1e-14);
        assert_eq!(rule.len(), 2 * 2 * 8);
    }
}
