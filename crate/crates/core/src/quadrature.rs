//! Quadrature on triangles (barycentric points) and on edges.
//!
//! Weights are normalized to sum to one, so an integral over a cell is
//! `area * sum(w_i f(x_i))` and over an edge `length * sum(w_i f(x_i))`.

use crate::mesh::Point;

#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// Barycentric coordinates of each point.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Three interior points, exact for quadratics.
    pub fn degree2() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Six-point Dunavant rule, exact for degree 4.
    pub fn degree4() -> Self {
        let mut rule = Self {
            points: Vec::new(),
            weights: Vec::new(),
            degree: 4,
        };
        rule.push_orbit3(0.445_948_490_915_965, 0.223_381_589_678_011);
        rule.push_orbit3(0.091_576_213_509_771, 0.109_951_743_655_322);
        rule
    }

    /// Twelve-point Dunavant rule, exact for degree 6.
    pub fn degree6() -> Self {
        let mut rule = Self {
            points: Vec::new(),
            weights: Vec::new(),
            degree: 6,
        };
        rule.push_orbit3(0.249_286_745_170_910, 0.116_786_275_726_379);
        rule.push_orbit3(0.063_089_014_491_502, 0.050_844_906_370_207);
        rule.push_orbit6(
            0.053_145_049_844_817,
            0.310_352_451_033_784,
            0.082_851_075_618_374,
        );
        rule
    }

    /// Collapsed Gauss-Legendre product rule exact for the requested degree.
    /// Slower than the Dunavant rules but available at any order.
    pub fn conical(degree: usize) -> Self {
        let m = degree / 2 + 2;
        let (x, w) = gauss_legendre(m);
        let mut points = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        for (&u, &wu) in x.iter().zip(&w) {
            for (&v, &wv) in x.iter().zip(&w) {
                let s = u;
                let t = v * (1.0 - u);
                points.push([1.0 - s - t, s, t]);
                // Reference area is 1/2, Jacobian (1 - u).
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            degree,
        }
    }

    /// Smallest built-in rule exact for `degree`.
    pub fn for_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::degree2(),
            3 | 4 => Self::degree4(),
            5 | 6 => Self::degree6(),
            d => Self::conical(d),
        }
    }

    fn push_orbit3(&mut self, a: f64, w: f64) {
        let b = 1.0 - 2.0 * a;
        for p in [[a, a, b], [a, b, a], [b, a, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn push_orbit6(&mut self, a: f64, b: f64, w: f64) {
        let c = 1.0 - a - b;
        for p in [
            [a, b, c],
            [a, c, b],
            [b, a, c],
            [b, c, a],
            [c, a, b],
            [c, b, a],
        ] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    /// Physical quadrature points of a triangle.
    pub fn map(&self, tri: &[Point; 3]) -> Vec<Point> {
        self.points
            .iter()
            .map(|l| barycentric_to_point(tri, l))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn barycentric_to_point(tri: &[Point; 3], l: &[f64; 3]) -> Point {
    [
        l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
        l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
    ]
}

/// Gauss-Legendre rule on `[0, 1]` with weights summing to one.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    pub fn gauss(n: usize) -> Self {
        let (points, weights) = gauss_legendre(n);
        Self { points, weights }
    }

    pub fn map(&self, a: Point, b: Point) -> Vec<Point> {
        self.points
            .iter()
            .map(|&s| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
            .collect()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Closed form of the integral of x^a y^b over the reference triangle.
    fn monomial_integral(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    fn check_exact(rule: &TriangleRule) {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let pts = rule.map(&tri);
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                let q: f64 = pts
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| 0.5 * w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                let exact = monomial_integral(a, b);
                assert!(
                    (q - exact).abs() < 1e-13,
                    "degree {} rule fails on x^{a} y^{b}: {q} vs {exact}",
                    rule.degree
                );
            }
        }
    }

    #[test]
    fn dunavant_rules_are_exact() {
        for rule in [
            TriangleRule::centroid(),
            TriangleRule::degree2(),
            TriangleRule::degree4(),
            TriangleRule::degree6(),
        ] {
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-14);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            check_exact(&rule);
        }
    }

    #[test]
    fn conical_rules_are_exact() {
        for d in [3, 8, 12, 15] {
            check_exact(&TriangleRule::conical(d));
        }
    }

    #[test]
    fn degree6_rule_underintegrates_degree7() {
        // Guards against silently using a stronger rule than advertised.
        let rule = TriangleRule::degree6();
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let q: f64 = rule
            .map(&tri)
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| 0.5 * w * p[0].powi(7))
            .sum();
        assert!((q - monomial_integral(7, 0)).abs() > 1e-8);
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) as i32 {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }
}
