//! Pairwise utility families, their derivatives, and the proximal operator
//! of the conjugate of the negated utility, which drives the dual update.
//!
//! Supported families for a pair with weight `w > 0` and traffic `s > 0`:
//! - logarithmic: `u(s) = w * ln(s)`
//! - power: `u(s) = w * s^gamma` with exponent `gamma` in (0, 1)
//!
//! Both are increasing and strictly concave, so `prox` outputs are always
//! strictly negative scalars.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFamily {
    Log,
    /// `exponent` is the curvature parameter of `w * s^exponent`, strictly
    /// between 0 and 1. Named `exponent` to keep it apart from the residual
    /// module's line-search multiplier, which is a different quantity.
    Power { exponent: f64 },
}

impl UtilityFamily {
    pub fn validate(&self) -> Result<()> {
        if let UtilityFamily::Power { exponent } = self {
            if !(exponent.is_finite() && *exponent > 0.0 && *exponent < 1.0) {
                return Err(Error::Parameter(format!(
                    "power exponent {exponent} must lie strictly between 0 and 1"
                )));
            }
        }
        Ok(())
    }
}

/// One utility family shared by all pairs plus an `n x n` weight matrix.
/// Off-diagonal weights must be strictly positive; diagonal entries are
/// stored untouched and never read, since a node sends no traffic to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    family: UtilityFamily,
    weights: Mat,
}

impl UtilitySpec {
    pub fn new(family: UtilityFamily, weights: Mat) -> Result<Self> {
        family.validate()?;
        let (r, c) = weights.dims();
        if r != c || r < 2 {
            return Err(Error::Shape(format!("weights are {r}x{c}, want square with n >= 2")));
        }
        for i in 0..r {
            for j in 0..c {
                let w = weights[(i, j)];
                if i != j && !(w.is_finite() && w > 0.0) {
                    return Err(Error::Parameter(format!(
                        "weight ({i}, {j}) = {w} must be positive"
                    )));
                }
            }
        }
        Ok(UtilitySpec { family, weights })
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }
}

fn pair_value(family: UtilityFamily, w: f64, s: f64) -> f64 {
    match family {
        UtilityFamily::Log => w * s.ln(),
        UtilityFamily::Power { exponent } => w * s.powf(exponent),
    }
}

fn pair_derivative(family: UtilityFamily, w: f64, s: f64) -> f64 {
    match family {
        UtilityFamily::Log => w / s,
        UtilityFamily::Power { exponent } => w * exponent * s.powf(exponent - 1.0),
    }
}

fn count_out_of_domain(traffic: &Mat) -> usize {
    let n = traffic.rows();
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j && !(traffic[(i, j)] > 0.0) {
                bad += 1;
            }
        }
    }
    bad
}

/// Sum of pair utilities over off-diagonal traffic entries. Nonpositive or
/// NaN off-diagonal traffic is a domain violation reported as an error, so
/// the solver can flag the point as infeasible instead of aborting.
pub fn total_utility(traffic: &Mat, spec: &UtilitySpec) -> Result<f64> {
    check_traffic_shape(traffic, spec)?;
    let bad = count_out_of_domain(traffic);
    if bad > 0 {
        return Err(Error::UtilityDomain { nonpositive: bad });
    }
    let n = traffic.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += pair_value(spec.family, spec.weights[(i, j)], traffic[(i, j)]);
            }
        }
    }
    Ok(total)
}

/// Entrywise derivative `u'_ij(T_ij)` off the diagonal, zero on it.
pub fn utility_derivative(traffic: &Mat, spec: &UtilitySpec) -> Result<Mat> {
    check_traffic_shape(traffic, spec)?;
    let bad = count_out_of_domain(traffic);
    if bad > 0 {
        return Err(Error::UtilityDomain { nonpositive: bad });
    }
    let n = traffic.rows();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = pair_derivative(spec.family, spec.weights[(i, j)], traffic[(i, j)]);
            }
        }
    }
    Ok(out)
}

fn check_traffic_shape(traffic: &Mat, spec: &UtilitySpec) -> Result<()> {
    let n = spec.n();
    if traffic.dims() != (n, n) {
        return Err(Error::Shape(format!(
            "traffic is {:?}, want ({n}, {n})",
            traffic.dims()
        )));
    }
    Ok(())
}

/// Proximal operator of `beta * (-u)^*` at `y`, where `(-u)^*` is the convex
/// conjugate of the negated pair utility. The output is the unique negative
/// root of the operator's first-order condition and is what the dual update
/// applies entrywise.
///
/// Log family: the condition is the quadratic `z^2 - y z - beta w = 0`,
/// taking the negative branch.
///
/// Power family with exponent g: substituting `s = -z` gives
/// `s^(c1+2) + y s^(c1+1) - c1 c2 = 0` with `c1 = g / (1 - g)` and
/// `c2 = beta (1/g - 1) (w g)^(1/(1-g))`; the equation has exactly one
/// positive root, found by safeguarded Newton inside a sign-change bracket.
pub fn prox_conjugate(y: f64, beta: f64, w: f64, family: UtilityFamily) -> f64 {
    debug_assert!(beta > 0.0 && w > 0.0);
    match family {
        UtilityFamily::Log => {
            let disc = (y * y + 4.0 * beta * w).sqrt();
            // Rationalized branch avoids cancellation for y > 0.
            if y <= 0.0 {
                (y - disc) / 2.0
            } else {
                -2.0 * beta * w / (y + disc)
            }
        }
        UtilityFamily::Power { exponent } => power_prox(y, beta, w, exponent),
    }
}

fn power_prox(y: f64, beta: f64, w: f64, gamma: f64) -> f64 {
    let c1 = gamma / (1.0 - gamma);
    let c2 = beta * (1.0 / gamma - 1.0) * (w * gamma).powf(1.0 / (1.0 - gamma));
    let rhs = c1 * c2;
    let p = c1 + 2.0;
    // Factored form s^(p-1) (s + y) - rhs. For y < 0 the two monomials of
    // the expanded polynomial cancel near the root; factoring keeps the
    // evaluation noise at the scale of rhs instead of s^p, so the sign of
    // g stays trustworthy down to the last ulp of s.
    let g = |s: f64| s.powf(p - 1.0) * (s + y) - rhs;
    let dg = |s: f64| s.powf(p - 2.0) * ((p - 1.0) * (s + y) + s);

    // g(lo) <= -rhs < 0 and g is increasing and convex right of lo, so the
    // bracket below always straddles the single positive root.
    let mut lo = (-y).max(0.0);
    let mut hi = (y.abs() + rhs.powf(1.0 / p)).max(1.0);
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gs = g(s);
        if gs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = dg(s);
        let newton = s - gs / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - s).abs() <= 2.0 * f64::EPSILON * s || hi - lo <= 2.0 * f64::EPSILON * hi;
        s = next;
        if done {
            break;
        }
    }
    -s
}

/// Entrywise prox of the dual update argument; the diagonal is pinned to
/// zero because diagonal pairs carry no utility.
pub fn prox_conjugate_matrix(arg: &Mat, beta: f64, spec: &UtilitySpec) -> Result<Mat> {
    let n = spec.n();
    if arg.dims() != (n, n) {
        return Err(Error::Shape(format!("argument is {:?}, want ({n}, {n})", arg.dims())));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Parameter(format!("beta {beta} must be positive")));
    }
    let mut out = Mat::zeros(n, n);
    prox_conjugate_matrix_into(arg, beta, spec, &mut out);
    Ok(out)
}

pub(crate) fn prox_conjugate_matrix_into(arg: &Mat, beta: f64, spec: &UtilitySpec, out: &mut Mat) {
    let n = spec.n();
    debug_assert_eq!(arg.dims(), (n, n));
    debug_assert_eq!(out.dims(), (n, n));
    let family = spec.family;
    let weights = spec.weights.as_slice();
    out.as_mut_slice()
        .par_chunks_mut(n)
        .zip(arg.as_slice().par_chunks(n))
        .zip(weights.par_chunks(n))
        .enumerate()
        .for_each(|(i, ((o_row, a_row), w_row))| {
            for j in 0..n {
                o_row[j] = if i == j {
                    0.0
                } else {
                    prox_conjugate(a_row[j], beta, w_row[j], family)
                };
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_weights(n: usize) -> Mat {
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[(i, j)] = 1.0;
                }
            }
        }
        w
    }

    #[test]
    fn spec_validation() {
        assert!(UtilitySpec::new(UtilityFamily::Log, uniform_weights(2)).is_ok());
        assert!(UtilitySpec::new(UtilityFamily::Power { exponent: 0.5 }, uniform_weights(2)).is_ok());
        assert!(UtilitySpec::new(UtilityFamily::Power { exponent: 1.0 }, uniform_weights(2)).is_err());
        assert!(UtilitySpec::new(UtilityFamily::Power { exponent: 0.0 }, uniform_weights(2)).is_err());
        let mut w = uniform_weights(2);
        w[(0, 1)] = 0.0;
        assert!(UtilitySpec::new(UtilityFamily::Log, w).is_err());
        // Diagonal entries are ignored, any value is accepted there.
        let mut w = uniform_weights(2);
        w[(0, 0)] = -7.0;
        assert!(UtilitySpec::new(UtilityFamily::Log, w).is_ok());
    }

    #[test]
    fn total_utility_examples() {
        let spec = UtilitySpec::new(UtilityFamily::Log, uniform_weights(2)).unwrap();
        let mut t = Mat::zeros(2, 2);
        t[(0, 1)] = 1.0;
        t[(1, 0)] = 1.0;
        assert_eq!(total_utility(&t, &spec).unwrap(), 0.0);

        let mut w = uniform_weights(2);
        w[(0, 1)] = 2.0;
        let spec = UtilitySpec::new(UtilityFamily::Log, w).unwrap();
        let mut t = Mat::zeros(2, 2);
        t[(0, 1)] = std::f64::consts::E;
        t[(1, 0)] = 1.0;
        assert!((total_utility(&t, &spec).unwrap() - 2.0).abs() < 1e-12);

        // Power family: w * s^gamma, one pair at s = 4 contributes 2.
        let spec =
            UtilitySpec::new(UtilityFamily::Power { exponent: 0.5 }, uniform_weights(2)).unwrap();
        let mut t = Mat::zeros(2, 2);
        t[(0, 1)] = 4.0;
        t[(1, 0)] = 1.0;
        assert!((total_utility(&t, &spec).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn utility_domain_violation_is_reported() {
        let spec = UtilitySpec::new(UtilityFamily::Log, uniform_weights(3)).unwrap();
        let t = Mat::zeros(3, 3);
        assert_eq!(
            total_utility(&t, &spec),
            Err(Error::UtilityDomain { nonpositive: 6 })
        );
        assert!(utility_derivative(&t, &spec).is_err());
    }

    #[test]
    fn derivative_examples() {
        let mut w = uniform_weights(2);
        w[(0, 1)] = 3.0;
        let spec = UtilitySpec::new(UtilityFamily::Log, w).unwrap();
        let mut t = Mat::zeros(2, 2);
        t[(0, 1)] = 3.0;
        t[(1, 0)] = 1.0;
        let d = utility_derivative(&t, &spec).unwrap();
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(0, 0)], 0.0);

        let mut w = uniform_weights(2);
        w[(0, 1)] = 2.0;
        let spec = UtilitySpec::new(UtilityFamily::Power { exponent: 0.5 }, w).unwrap();
        let mut t = Mat::zeros(2, 2);
        t[(0, 1)] = 4.0;
        t[(1, 0)] = 1.0;
        let d = utility_derivative(&t, &spec).unwrap();
        assert!((d[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_prox_closed_form_values() {
        assert_eq!(prox_conjugate(0.0, 1.0, 1.0, UtilityFamily::Log), -1.0);
        let z = prox_conjugate(-2.0, 0.5, 2.0, UtilityFamily::Log);
        assert!((z - (-1.0 - std::f64::consts::SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn log_prox_satisfies_quadratic_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20_000 {
            let y = 100.0 * rng.random::<f64>() - 50.0;
            let beta = 10f64.powf(6.0 * rng.random::<f64>() - 3.0);
            let w = 10f64.powf(6.0 * rng.random::<f64>() - 3.0);
            let z = prox_conjugate(y, beta, w, UtilityFamily::Log);
            assert!(z < 0.0);
            let resid = z * z - y * z - beta * w;
            let scale = (y * y).max(beta * w).max(1.0);
            assert!(resid.abs() <= 1e-10 * scale, "y={y} beta={beta} w={w}: {resid}");
        }
    }

    #[test]
    fn log_prox_matches_grid_minimization() {
        // prox is the minimizer of beta * (-u)^*(z) + (z - y)^2 / 2 with
        // (-u)^*(z) = -w + w ln(-w / z) on z < 0.
        let (y, beta, w) = (-2.0, 0.5, 2.0);
        let objective = |z: f64| beta * (-w + w * (-w / z).ln()) + 0.5 * (z - y) * (z - y);
        let z_star = prox_conjugate(y, beta, w, UtilityFamily::Log);
        let mut best = (f64::INFINITY, 0.0);
        let mut z = -6.0;
        while z < -1e-3 {
            let v = objective(z);
            if v < best.0 {
                best = (v, z);
            }
            z += 1e-4;
        }
        assert!((best.1 - z_star).abs() < 1e-3);
        assert!(objective(z_star) <= best.0 + 1e-12);
    }

    #[test]
    fn log_prox_moreau_identity() {
        // First-order condition: z + beta * (-w / z) = y.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let y = 100.0 * rng.random::<f64>() - 50.0;
            let beta = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
            let w = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
            let z = prox_conjugate(y, beta, w, UtilityFamily::Log);
            let recon = z - beta * w / z;
            let scale = y.abs().max(z.abs()).max(1.0);
            assert!((recon - y).abs() <= 1e-9 * scale, "y={y} beta={beta} w={w}");
        }
    }

    #[test]
    fn power_prox_cube_root_case() {
        // gamma = 1/2, w = 1, beta = 1, y = 0 reduces to s^3 = 1/4.
        let z = prox_conjugate(0.0, 1.0, 1.0, UtilityFamily::Power { exponent: 0.5 });
        assert!((z - (-0.25_f64.powf(1.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn power_prox_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5_000 {
            let y = 100.0 * rng.random::<f64>() - 50.0;
            let beta = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
            let w = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
            let gamma = 0.05 + 0.9 * rng.random::<f64>();
            let z = prox_conjugate(y, beta, w, UtilityFamily::Power { exponent: gamma });
            assert!(z < 0.0);
            let c1 = gamma / (1.0 - gamma);
            let c2 = beta * (1.0 / gamma - 1.0) * (w * gamma).powf(1.0 / (1.0 - gamma));
            let p = c1 + 2.0;
            let s = -z;
            let resid = s.powf(p - 1.0) * (s + y) - c1 * c2;
            // An f64 root cannot beat eps * s^p: rounding s to its nearest
            // representable already moves the polynomial by about that
            // much. 1e-13 of that scale means s is right to a few ulps.
            let scale = s.powf(p).max(c1 * c2).max(1.0);
            assert!(
                resid.abs() <= 1e-13 * scale,
                "y={y} beta={beta} w={w} gamma={gamma}: {resid}"
            );
        }
    }

    #[test]
    fn power_prox_moreau_identity() {
        // First-order condition: z + beta * (w g / (-z))^(1 / (1 - g)) = y.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..5_000 {
            let y = 20.0 * rng.random::<f64>() - 10.0;
            let beta = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
            let w = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
            let g = 0.1 + 0.8 * rng.random::<f64>();
            let z = prox_conjugate(y, beta, w, UtilityFamily::Power { exponent: g });
            let recon = z + beta * (w * g / (-z)).powf(1.0 / (1.0 - g));
            let scale = y.abs().max(z.abs()).max(1.0);
            assert!((recon - y).abs() <= 1e-8 * scale, "y={y} beta={beta} w={w} g={g}");
        }
    }

    #[test]
    fn power_prox_bracket_has_single_sign_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let y = 20.0 * rng.random::<f64>() - 10.0;
            let beta = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
            let w = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
            let gamma = 0.1 + 0.8 * rng.random::<f64>();
            let c1 = gamma / (1.0 - gamma);
            let c2 = beta * (1.0 / gamma - 1.0) * (w * gamma).powf(1.0 / (1.0 - gamma));
            let p = c1 + 2.0;
            let g = |s: f64| s.powf(p) + y * s.powf(p - 1.0) - c1 * c2;
            let lo = (-y).max(0.0);
            let hi = (y.abs() + (c1 * c2).powf(1.0 / p)).max(1.0);
            assert!(g(lo) < 0.0);
            assert!(g(hi) >= 0.0);
            let mut changes = 0;
            let mut prev = g(lo);
            for k in 1..=512 {
                let s = lo + (hi - lo) * k as f64 / 512.0;
                let cur = g(s);
                if prev < 0.0 && cur >= 0.0 {
                    changes += 1;
                }
                prev = cur;
            }
            assert_eq!(changes, 1);
        }
    }

    #[test]
    fn prox_matrix_matches_scalar_and_zeroes_diagonal() {
        let spec = UtilitySpec::new(UtilityFamily::Log, uniform_weights(2)).unwrap();
        let arg = Mat::zeros(2, 2);
        let out = prox_conjugate_matrix(&arg, 1.0, &spec).unwrap();
        assert_eq!(out, Mat::from_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]));

        let mut w = uniform_weights(3);
        w[(0, 2)] = 2.5;
        w[(2, 1)] = 0.3;
        let spec = UtilitySpec::new(UtilityFamily::Power { exponent: 0.7 }, w.clone()).unwrap();
        let mut arg = Mat::zeros(3, 3);
        for (k, v) in arg.as_mut_slice().iter_mut().enumerate() {
            *v = k as f64 - 4.0;
        }
        let out = prox_conjugate_matrix(&arg, 0.8, &spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j {
                    0.0
                } else {
                    prox_conjugate(arg[(i, j)], 0.8, w[(i, j)], spec.family())
                };
                assert_eq!(out[(i, j)], want);
            }
        }
    }
}
