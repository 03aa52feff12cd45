//! Largest real root of a cubic.

use super::GridError;

/// Largest real root of `c3 x^3 + c2 x^2 + c1 x + c0`.
///
/// Closed form on the depressed cubic (Cardano when there is a single real
/// root, the trigonometric form when there are three), then Newton polish on
/// the original polynomial.
pub fn largest_real_cubic_root(c3: f64, c2: f64, c1: f64, c0: f64) -> Result<f64, GridError> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if c3 == 0.0 || !c3.is_finite() || c3.abs() <= 1e-300 * scale {
        return Err(GridError::DegenerateCubic(c3));
    }
    let a = c2 / c3;
    let b = c1 / c3;
    let c = c0 / c3;
    Ok(largest_root_monic(a, b, c))
}

/// Largest real root of `x^3 + a x^2 + b x + c`.
pub fn largest_root_monic(a: f64, b: f64, c: f64) -> f64 {
    let shift = a / 3.0;
    let p = b - a * shift;
    let q = (2.0 * a * a * a) / 27.0 - a * b / 3.0 + c;
    let half_q = 0.5 * q;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    let y = if disc > 0.0 {
        let sq = disc.sqrt();
        // pick the sign that avoids cancellation
        let u = (-half_q - sq.copysign(half_q)).cbrt();
        if u == 0.0 {
            0.0
        } else {
            u - third_p / u
        }
    } else if p == 0.0 {
        (-q).cbrt()
    } else {
        let r = (-third_p).sqrt();
        let cos_arg = (-half_q / (r * r * r)).clamp(-1.0, 1.0);
        2.0 * r * (cos_arg.acos() / 3.0).cos()
    };
    polish(y - shift, a, b, c)
}

fn polish(mut x: f64, a: f64, b: f64, c: f64) -> f64 {
    let eval = |x: f64| ((x + a) * x + b) * x + c;
    let mut fx = eval(x);
    for _ in 0..3 {
        let df = (3.0 * x + 2.0 * a) * x + b;
        if df == 0.0 || fx == 0.0 {
            break;
        }
        let next = x - fx / df;
        let fn_ = eval(next);
        if fn_.abs() < fx.abs() {
            x = next;
            fx = fn_;
        } else {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn residual(c: [f64; 4], x: f64) -> f64 {
        ((c[0] * x + c[1]) * x + c[2]) * x + c[3]
    }

    /// Dense scan for sign changes, then bisection; returns the largest root.
    fn scan_largest(c: [f64; 4], lo: f64, hi: f64, n: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let step = (hi - lo) / n as f64;
        let mut x0 = lo;
        let mut f0 = residual(c, x0);
        for i in 1..=n {
            let x1 = lo + i as f64 * step;
            let f1 = residual(c, x1);
            if f0 == 0.0 {
                best = best.max(x0);
            } else if f0.signum() != f1.signum() {
                let (mut a, mut b, mut fa) = (x0, x1, f0);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let fm = residual(c, m);
                    if fm == 0.0 {
                        a = m;
                        b = m;
                        break;
                    }
                    if fm.signum() == fa.signum() {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                best = best.max(0.5 * (a + b));
            }
            x0 = x1;
            f0 = f1;
        }
        best
    }

    #[test]
    fn factored_cubic() {
        let r = largest_real_cubic_root(1.0, -6.0, 11.0, -6.0).unwrap();
        assert!((r - 3.0).abs() < 1e-14);
    }

    #[test]
    fn single_real_root() {
        let r = largest_real_cubic_root(1.0, 0.0, 0.0, -1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_leading_coefficient() {
        assert!(matches!(
            largest_real_cubic_root(0.0, 1.0, 2.0, 3.0),
            Err(GridError::DegenerateCubic(_))
        ));
    }

    #[test]
    fn matches_scan_oracle_on_three_real_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mut roots = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ];
            roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if roots[2] - roots[1] < 1e-3 || roots[1] - roots[0] < 1e-3 {
                continue;
            }
            let lead: f64 = rng.random_range(0.5..3.0);
            let (r1, r2, r3) = (roots[0], roots[1], roots[2]);
            let c = [
                lead,
                -lead * (r1 + r2 + r3),
                lead * (r1 * r2 + r1 * r3 + r2 * r3),
                -lead * r1 * r2 * r3,
            ];
            let got = largest_real_cubic_root(c[0], c[1], c[2], c[3]).unwrap();
            let oracle = scan_largest(c, -6.0, 6.0, 1_000_000);
            assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
            let cmax = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(residual(c, got).abs() <= 1e-10 * cmax);
        }
    }

    #[test]
    fn prox_shaped_cubics_have_small_residual() {
        // (x + b)(x + mu)^2 - k with tiny mu, the shape met in the primal update
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mu: f64 = rng.random_range(1e-4..1e-1);
            let b: f64 = rng.random_range(-2.0..2.0);
            let k: f64 = rng.random_range(0.0..1e-3);
            let (a2, a1, a0) = (b + 2.0 * mu, mu * mu + 2.0 * b * mu, b * mu * mu - k);
            let x = largest_root_monic(a2, a1, a0);
            let res = ((x + a2) * x + a1) * x + a0;
            let scale = 1f64.max(a2.abs()).max(a1.abs()).max(a0.abs());
            assert!(
                res.abs() <= 1e-10 * scale,
                "res {res} at b={b} mu={mu} k={k}"
            );
            assert!(x >= -b - 1e-12);
        }
    }
}
