//! Bregman divergence and Bregman information over discrete distributions.
//!
//! For a strictly convex `phi`, the divergence is
//! `d_phi(a, b) = phi(a) - phi(b) - <a - b, grad phi(b)>`, and the Bregman
//! information of a discrete random variable is the expected divergence from
//! its mean. The latter equals the Jensen gap `E[phi(T)] - phi(E[T])`; both
//! routes are implemented independently so the identity can be checked.
//!
//! The `-log` specialization on positive scalars is the Itakura-Saito
//! distance; [`itakura_saito_log_domain`] evaluates it directly from
//! log-probabilities so that astronomically small probabilities never leave
//! the log domain.

use crate::{Error, Result};

/// Linear-domain floor for the `-log` and `x log x` domains.
const POSITIVE_MIN: f64 = 1e-300;

/// A strictly convex functional with its gradient and effective domain.
pub trait ConvexFunctional {
    fn value(&self, p: &[f64]) -> f64;
    fn gradient(&self, p: &[f64]) -> Vec<f64>;
    /// Membership in the relative interior of the domain.
    fn domain_contains(&self, p: &[f64]) -> bool;
    fn name(&self) -> &'static str;
}

/// `phi(t) = -sum ln t_i` on strictly positive points.
///
/// On scalars this induces the Itakura-Saito distance.
pub struct NegLog;

impl ConvexFunctional for NegLog {
    fn value(&self, p: &[f64]) -> f64 {
        -p.iter().map(|&x| x.ln()).sum::<f64>()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&x| -1.0 / x).collect()
    }

    fn domain_contains(&self, p: &[f64]) -> bool {
        p.iter().all(|&x| x.is_finite() && x > POSITIVE_MIN)
    }

    fn name(&self) -> &'static str {
        "-log"
    }
}

/// `phi(t) = ||t||^2`; its Bregman divergence is the squared distance and its
/// Bregman information is the (weighted) variance.
pub struct SquaredNorm;

impl ConvexFunctional for SquaredNorm {
    fn value(&self, p: &[f64]) -> f64 {
        p.iter().map(|&x| x * x).sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&x| 2.0 * x).collect()
    }

    fn domain_contains(&self, p: &[f64]) -> bool {
        p.iter().all(|&x| x.is_finite())
    }

    fn name(&self) -> &'static str {
        "squared-norm"
    }
}

/// `phi(t) = sum t_i ln t_i` on strictly positive points (negative entropy).
pub struct XLogX;

impl ConvexFunctional for XLogX {
    fn value(&self, p: &[f64]) -> f64 {
        p.iter().map(|&x| x * x.ln()).sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&x| 1.0 + x.ln()).collect()
    }

    fn domain_contains(&self, p: &[f64]) -> bool {
        p.iter().all(|&x| x.is_finite() && x > POSITIVE_MIN)
    }

    fn name(&self) -> &'static str {
        "x-log-x"
    }
}

/// A finitely supported random variable: points with normalized weights.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates non-negative weights summing to 1 within 1e-12 and
    /// equal-dimension points.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("distribution needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Contract(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("points must share one positive dimension".into()));
        }
        if let Some(i) = weights.iter().position(|&w| !(w >= 0.0)) {
            return Err(Error::Contract(format!("negative weight {} at index {i}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteDistribution { points, weights })
    }

    /// Equal weights over the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Contract("distribution needs at least one point".into()));
        }
        let w = 1.0 / n as f64;
        Self::new(points, vec![w; n])
    }

    /// Uniform distribution over scalar points.
    pub fn uniform_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.points[0].len();
        let mut mu = vec![0.0; dim];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for (m, &x) in mu.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mu
    }
}

/// `phi(a) - phi(b) - <a - b, grad phi(b)>`.
///
/// Non-negative for any convex `phi`; zero when `a == b`. Generally
/// asymmetric, so it is a divergence, not a metric.
pub fn bregman_divergence(phi: &dyn ConvexFunctional, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "points of dimension {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !phi.domain_contains(a) {
        return Err(Error::Domain(format!("{a:?} outside dom({})", phi.name())));
    }
    if !phi.domain_contains(b) {
        return Err(Error::Domain(format!("{b:?} outside ri(dom({}))", phi.name())));
    }
    let grad_b = phi.gradient(b);
    let inner: f64 = a
        .iter()
        .zip(b)
        .zip(&grad_b)
        .map(|((&ai, &bi), &gi)| (ai - bi) * gi)
        .sum();
    Ok(phi.value(a) - phi.value(b) - inner)
}

/// Expected Bregman divergence of the points from their weighted mean.
pub fn bregman_information(phi: &dyn ConvexFunctional, dist: &DiscreteDistribution) -> Result<f64> {
    let mu = dist.mean();
    if !phi.domain_contains(&mu) {
        return Err(Error::Domain(format!(
            "mean {mu:?} outside ri(dom({}))",
            phi.name()
        )));
    }
    let mut info = 0.0;
    for (p, &w) in dist.points().iter().zip(dist.weights()) {
        info += w * bregman_divergence(phi, p, &mu)?;
    }
    Ok(info)
}

/// `E[phi(T)] - phi(E[T])`.
///
/// Equals [`bregman_information`] on the same inputs; kept as a separate
/// evaluation route so the identity can be tested rather than assumed.
pub fn jensen_gap(phi: &dyn ConvexFunctional, dist: &DiscreteDistribution) -> Result<f64> {
    let mu = dist.mean();
    if !phi.domain_contains(&mu) {
        return Err(Error::Domain(format!(
            "mean {mu:?} outside ri(dom({}))",
            phi.name()
        )));
    }
    let mut expected = 0.0;
    for (p, &w) in dist.points().iter().zip(dist.weights()) {
        if !phi.domain_contains(p) {
            return Err(Error::Domain(format!("{p:?} outside dom({})", phi.name())));
        }
        expected += w * phi.value(p);
    }
    Ok(expected - phi.value(&mu))
}

/// Itakura-Saito distance `d_{-log}(p, q) = ln(q/p) + p/q - 1`, evaluated
/// directly from log-probabilities.
///
/// `(log_q - log_p) + exp(log_p - log_q) - 1` never exponentiates `p` or `q`
/// on their own, so `log_p = -700` is perfectly representable.
pub fn itakura_saito_log_domain(log_p: f64, log_q: f64) -> f64 {
    (log_q - log_p) + (log_p - log_q).exp() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn divergence_is_zero_at_equal_points() {
        let d = bregman_divergence(&NegLog, &[0.3], &[0.3]).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn squared_norm_divergence_is_squared_distance() {
        let d = bregman_divergence(&SquaredNorm, &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn neg_log_divergence_worked_example() {
        // d(0.5, 0.25) = -ln 0.5 + ln 0.25 + 0.25/0.25
        let d = bregman_divergence(&NegLog, &[0.5], &[0.25]).unwrap();
        let expected = -(0.5f64.ln()) + 0.25f64.ln() + 1.0;
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.306853).abs() < 1e-6);
    }

    #[test]
    fn out_of_domain_point_is_rejected() {
        let err = bregman_divergence(&NegLog, &[-0.5], &[0.25]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(err.to_string().contains("-0.5"), "{err}");
    }

    #[test]
    fn information_of_single_point_is_zero() {
        for phi in [&NegLog as &dyn ConvexFunctional, &SquaredNorm, &XLogX] {
            let dist = DiscreteDistribution::uniform_scalars(&[0.7]).unwrap();
            assert_eq!(bregman_information(phi, &dist).unwrap(), 0.0);
            assert_eq!(jensen_gap(phi, &dist).unwrap(), 0.0);
        }
    }

    #[test]
    fn squared_norm_information_is_variance() {
        let dist = DiscreteDistribution::uniform_scalars(&[0.0, 2.0]).unwrap();
        let info = bregman_information(&SquaredNorm, &dist).unwrap();
        assert!((info - 1.0).abs() < 1e-12);
        let gap = jensen_gap(&SquaredNorm, &dist).unwrap();
        assert!((gap - 1.0).abs() < 1e-12);

        // Weighted case: variance under the weights.
        let dist = DiscreteDistribution::new(vec![vec![0.0], vec![2.0]], vec![0.25, 0.75]).unwrap();
        let mu = 1.5;
        let var = 0.25 * mu * mu + 0.75 * (2.0 - mu) * (2.0 - mu);
        assert!((bregman_information(&SquaredNorm, &dist).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn neg_log_information_worked_example() {
        let dist = DiscreteDistribution::uniform_scalars(&[0.5, 0.25]).unwrap();
        let info = bregman_information(&NegLog, &dist).unwrap();
        let gap = jensen_gap(&NegLog, &dist).unwrap();
        // E[phi] = (0.693147 + 1.386294)/2, phi(E[T]) = -ln 0.375
        let expected = (-(0.5f64.ln()) - 0.25f64.ln()) / 2.0 + 0.375f64.ln();
        assert!((info - expected).abs() < 1e-15, "{info} vs {expected}");
        assert!((info - 0.058891).abs() < 1e-6);
        assert!((gap - info).abs() < 1e-12);
    }

    #[test]
    fn lemma_identity_on_random_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phis: [&dyn ConvexFunctional; 3] = [&NegLog, &SquaredNorm, &XLogX];
        for phi in phis {
            for _ in 0..1000 {
                let n = rng.random_range(1..=10usize);
                let dim = rng.random_range(1..=3usize);
                let points: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        (0..dim)
                            .map(|_| {
                                if phi.name() == "squared-norm" {
                                    rng.random_range(-2.0..2.0)
                                } else {
                                    rng.random_range(0.05..2.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= total;
                }
                // Exact renormalization so the constructor's 1e-12 check holds.
                let total: f64 = w.iter().sum();
                w[0] += 1.0 - total;
                let dist = DiscreteDistribution::new(points, w).unwrap();
                let info = bregman_information(phi, &dist).unwrap();
                let gap = jensen_gap(phi, &dist).unwrap();
                assert!(
                    (info - gap).abs() < 1e-12,
                    "{}: info {info} vs gap {gap}",
                    phi.name()
                );
                assert!(info >= -1e-15, "{}: negative information {info}", phi.name());
            }
        }
    }

    #[test]
    fn divergence_non_negative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phis: [&dyn ConvexFunctional; 3] = [&NegLog, &SquaredNorm, &XLogX];
        for phi in phis {
            for _ in 0..500 {
                let dim = rng.random_range(1..=4usize);
                let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..dim)
                        .map(|_| {
                            if phi.name() == "squared-norm" {
                                rng.random_range(-2.0..2.0)
                            } else {
                                rng.random_range(0.05..2.0)
                            }
                        })
                        .collect()
                };
                let a = sample(&mut rng);
                let b = sample(&mut rng);
                let d = bregman_divergence(phi, &a, &b).unwrap();
                assert!(d >= -1e-14, "{}: d({a:?}, {b:?}) = {d}", phi.name());
            }
        }
    }

    #[test]
    fn neg_log_divergence_is_asymmetric() {
        let d_ab = bregman_divergence(&NegLog, &[0.5], &[0.25]).unwrap();
        let d_ba = bregman_divergence(&NegLog, &[0.25], &[0.5]).unwrap();
        assert!((d_ab - d_ba).abs() > 1e-3, "{d_ab} vs {d_ba}");
    }

    #[test]
    fn log_domain_form_matches_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let p: f64 = rng.random_range(0.01..1.0);
            let q: f64 = rng.random_range(0.01..1.0);
            let stable = itakura_saito_log_domain(p.ln(), q.ln());
            let direct = bregman_divergence(&NegLog, &[p], &[q]).unwrap();
            assert!((stable - direct).abs() < 1e-12, "p={p} q={q}: {stable} vs {direct}");
        }
        assert_eq!(itakura_saito_log_domain(-3.0, -3.0), 0.0);
        assert!((itakura_saito_log_domain(0.5f64.ln(), 0.25f64.ln()) - 0.306853).abs() < 1e-6);
    }

    #[test]
    fn log_domain_form_survives_tiny_probabilities() {
        let d = itakura_saito_log_domain(-700.0, -1.0);
        assert!(d.is_finite());
        // ln(q/p) = 699, p/q ~ 0, so d ~ 698.
        assert!((d - 698.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn mean_on_domain_boundary_is_rejected() {
        // A point mass at zero drags the mean out of the -log domain.
        let dist = DiscreteDistribution::new(vec![vec![0.0], vec![0.0]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            bregman_information(&NegLog, &dist),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(DiscreteDistribution::new(vec![], vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![vec![1.0]], vec![0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![vec![1.0], vec![2.0]], vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
    }
}
