//! Gauss–Legendre rules on arbitrary intervals.

use std::f64::consts::PI;

/// Nodes and weights of the `order`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be at least 1");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for k in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = ((4 * k + 3) as f64 * PI / (4.0 * n + 2.0)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[k] = -x;
            nodes[order - 1 - k] = x;
            weights[k] = w;
            weights[order - 1 - k] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integral of `f` over `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum();
        half * sum
    }

    /// Integral over `[lo, hi]`, splitting at every breakpoint strictly inside.
    pub fn integrate_split(
        &self,
        lo: f64,
        hi: f64,
        breaks: &[f64],
        mut f: impl FnMut(f64) -> f64,
    ) -> f64 {
        let mut inner: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&x| x > lo && x < hi)
            .collect();
        if inner.is_empty() {
            return self.integrate(lo, hi, f);
        }
        inner.sort_by(f64::total_cmp);
        let mut total = 0.0;
        let mut left = lo;
        for right in inner.into_iter().chain(std::iter::once(hi)) {
            if right > left {
                total += self.integrate(left, right, &mut f);
            }
            left = right;
        }
        total
    }

    /// [`Self::integrate_split`] that grades every piece ending at the
    /// origin geometrically toward it, halving [`CUSP_LEVELS`] times. Each
    /// graded piece then sees a cusp `|y|^p` only at a distance comparable
    /// to its own length, where Gauss–Legendre converges geometrically.
    pub fn integrate_split_cusp(
        &self,
        lo: f64,
        hi: f64,
        breaks: &[f64],
        mut f: impl FnMut(f64) -> f64,
    ) -> f64 {
        let mut points: Vec<f64> = breaks
            .iter()
            .copied()
            .chain([0.0])
            .filter(|&x| x > lo && x < hi)
            .collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut total = 0.0;
        let mut left = lo;
        for right in points.into_iter().chain(std::iter::once(hi)) {
            if right > left {
                total += if left == 0.0 || right == 0.0 {
                    let far = if left == 0.0 { right } else { left };
                    let mut piece = |a: f64, b: f64| self.integrate(a.min(b), a.max(b), &mut f);
                    let mut sum = 0.0;
                    let mut outer = far;
                    for _ in 0..CUSP_LEVELS {
                        sum += piece(0.5 * outer, outer);
                        outer *= 0.5;
                    }
                    sum + piece(0.0, outer)
                } else {
                    self.integrate(left, right, &mut f)
                };
            }
            left = right;
        }
        total
    }
}

/// Halvings toward a cusp; the innermost piece is `2^-40` of the original.
pub const CUSP_LEVELS: usize = 40;

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
