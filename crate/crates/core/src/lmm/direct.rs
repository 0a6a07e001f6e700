//! Likelihood quantities computed from explicitly assembled `V_i` blocks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lmm::variance::VarianceComponents;
use crate::numeric::linalg::Cholesky;
use crate::panel::{Design, SubjectDesign};

fn check_dims(theta: &VarianceComponents, design: &Design) -> Result<()> {
    theta.validate()?;
    if theta.dim() != design.n_random() {
        return Err(Error::Shape(format!(
            "covariance is {0}x{0}, design has {1} random terms",
            theta.dim(),
            design.n_random()
        )));
    }
    Ok(())
}

/// `V_i = Z_i D Z_iᵀ + σ² I`.
pub fn subject_covariance(theta: &VarianceComponents, block: &SubjectDesign) -> DMatrix<f64> {
    let n = block.y.len();
    &block.z * &theta.d * block.z.transpose() + DMatrix::identity(n, n) * theta.sigma_sq
}

fn factor(theta: &VarianceComponents, block: &SubjectDesign) -> Result<Cholesky> {
    Cholesky::new(&subject_covariance(theta, block))
}

/// Gaussian log-likelihood `ℓ(β, θ)` summed over subject blocks.
pub fn marginal_loglik(theta: &VarianceComponents, design: &Design, beta: &DVector<f64>) -> Result<f64> {
    check_dims(theta, design)?;
    if beta.len() != design.n_fixed() {
        return Err(Error::Shape(format!("beta has {} entries, design has {}", beta.len(), design.n_fixed())));
    }
    let mut total = 0.0;
    for b in &design.blocks {
        let ch = factor(theta, b)?;
        let r = &b.y - &b.x * beta;
        let n = r.len() as f64;
        total += -0.5 * (ch.logdet() + r.dot(&ch.solve_vec(&r)) + n * (2.0 * PI).ln());
    }
    Ok(total)
}

/// `(Σ XᵢᵀVᵢ⁻¹Xᵢ, Σ XᵢᵀVᵢ⁻¹yᵢ, Σ log|Vᵢ|)`.
fn normal_equations(theta: &VarianceComponents, design: &Design) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let p = design.n_fixed();
    let mut xvx = DMatrix::zeros(p, p);
    let mut xvy = DVector::zeros(p);
    let mut logdet = 0.0;
    for b in &design.blocks {
        let ch = factor(theta, b)?;
        let vx = ch.solve(&b.x);
        xvx += b.x.transpose() * &vx;
        xvy += vx.transpose() * &b.y;
        logdet += ch.logdet();
    }
    Ok(((&xvx + xvx.transpose()) * 0.5, xvy, logdet))
}

/// Generalized least squares `(XᵀV⁻¹X)⁻¹XᵀV⁻¹y`.
pub fn gls_beta(theta: &VarianceComponents, design: &Design) -> Result<DVector<f64>> {
    check_dims(theta, design)?;
    let (xvx, xvy, _) = normal_equations(theta, design)?;
    let ch = Cholesky::new(&xvx).map_err(|_| {
        Error::Singular("fixed-effect normal equations are singular (collinear columns?)".into())
    })?;
    Ok(ch.solve_vec(&xvy))
}

/// Restricted log-likelihood with β profiled out.
pub fn reml_loglik(theta: &VarianceComponents, design: &Design) -> Result<f64> {
    check_dims(theta, design)?;
    let p = design.n_fixed();
    let beta = if p == 0 { DVector::zeros(0) } else { gls_beta(theta, design)? };
    let ml = marginal_loglik(theta, design, &beta)?;
    if p == 0 {
        return Ok(ml);
    }
    let (xvx, _, _) = normal_equations(theta, design)?;
    let adj = Cholesky::new(&xvx)
        .map_err(|_| Error::Singular("fixed-effect normal equations are singular".into()))?
        .logdet();
    Ok(ml - 0.5 * adj + 0.5 * p as f64 * (2.0 * PI).ln())
}

/// Conditional means `D Zᵢᵀ Vᵢ⁻¹ (yᵢ − Xᵢβ)` for every subject.
pub fn blup(theta: &VarianceComponents, beta: &DVector<f64>, design: &Design) -> Result<Vec<(u32, DVector<f64>)>> {
    check_dims(theta, design)?;
    design
        .blocks
        .iter()
        .map(|b| {
            let ch = factor(theta, b)?;
            let r = &b.y - &b.x * beta;
            Ok((b.subject, &theta.d * b.z.transpose() * ch.solve_vec(&r)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::engine::MixedProblem;
    use crate::lmm::variance::Criterion;
    use crate::panel::{Column, Term};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(subject: u32, x: DMatrix<f64>, z: DMatrix<f64>, y: Vec<f64>) -> SubjectDesign {
        let n = y.len();
        SubjectDesign { subject, x, z, y: DVector::from_vec(y), rows: 0..n }
    }

    fn design(blocks: Vec<SubjectDesign>, q: usize) -> Design {
        let p = blocks[0].x.ncols();
        Design {
            blocks,
            fixed_terms: vec![],
            random_terms: [Term::Intercept, Term::Column(Column::TestTime)][..q].to_vec(),
            fixed_names: (0..p).map(|k| format!("x{k}")).collect(),
        }
    }

    fn toy(m: usize, n_i: usize, q: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..m)
            .map(|s| {
                let x = DMatrix::from_fn(n_i, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(0.0..3.0) });
                let z = x.columns(0, q).into_owned();
                let y = (0..n_i).map(|_| rng.random_range(-2.0..2.0)).collect();
                block(s as u32, x, z, y)
            })
            .collect();
        design(blocks, q)
    }

    /// The full stacked covariance for an oracle comparison.
    fn full_v(theta: &VarianceComponents, d: &Design) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let n = d.n_obs();
        let (x, y) = d.stacked();
        let mut v = DMatrix::zeros(n, n);
        let mut at = 0;
        for b in &d.blocks {
            let ni = b.y.len();
            v.view_mut((at, at), (ni, ni)).copy_from(&subject_covariance(theta, b));
            at += ni;
        }
        (v, x, y)
    }

    #[test]
    fn zero_residuals_with_unit_variance() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let d = design(vec![block(1, x.clone(), x.clone(), vec![2.0; 3]), block(2, x.clone(), x, vec![2.0; 3])], 1);
        let theta = VarianceComponents::intercept(0.0, 1.0).unwrap();
        let ll = marginal_loglik(&theta, &d, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((ll + 3.0 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn bivariate_normal_density() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let d = design(vec![block(1, x.clone(), x, vec![1.0, -0.5])], 1);
        let (sb, s2) = (0.8, 0.6);
        let theta = VarianceComponents::intercept(sb, s2).unwrap();
        let beta = DVector::from_vec(vec![0.2]);
        // explicit bivariate normal: var = sb + s2, cov = sb
        let (v, c) = (sb + s2, sb);
        let det = v * v - c * c;
        let (r1, r2) = (1.0 - 0.2, -0.5 - 0.2);
        let quad = (v * r1 * r1 - 2.0 * c * r1 * r2 + v * r2 * r2) / det;
        let oracle = -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        assert!((marginal_loglik(&theta, &d, &beta).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn doubling_residuals_scales_quadratic_form() {
        let d = toy(3, 4, 2, 1);
        let theta = VarianceComponents::intercept_slope(0.5, 0.2, 0.3, 0.7).unwrap();
        let beta = DVector::zeros(2);
        let mut d2 = d.clone();
        d2.blocks.iter_mut().for_each(|b| b.y *= 2.0);
        let l1 = marginal_loglik(&theta, &d, &beta).unwrap();
        let l2 = marginal_loglik(&theta, &d2, &beta).unwrap();
        let quad: f64 = d
            .blocks
            .iter()
            .map(|b| b.y.dot(&Cholesky::new(&subject_covariance(&theta, b)).unwrap().solve_vec(&b.y)))
            .sum();
        assert!((l1 - l2 - 1.5 * quad).abs() < 1e-10);
    }

    #[test]
    fn gls_with_zero_d_is_ols() {
        let d = toy(4, 5, 1, 2);
        let theta = VarianceComponents::intercept(0.0, 1.3).unwrap();
        let (x, y) = d.stacked();
        let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        assert!((gls_beta(&theta, &d).unwrap() - ols).amax() < 1e-10);
    }

    #[test]
    fn gls_matches_full_matrix_oracle_and_is_stationary() {
        let d = toy(2, 4, 2, 3);
        let theta = VarianceComponents::intercept_slope(0.9, 0.3, -0.2, 0.5).unwrap();
        let (v, x, y) = full_v(&theta, &d);
        let vinv = v.try_inverse().unwrap();
        let oracle = (x.transpose() * &vinv * &x).try_inverse().unwrap() * x.transpose() * &vinv * &y;
        let beta = gls_beta(&theta, &d).unwrap();
        assert!((&beta - oracle).amax() < 1e-10);
        let score = x.transpose() * &vinv * (&y - &x * &beta);
        assert!(score.amax() < 1e-6);
    }

    #[test]
    fn blockwise_loglik_equals_full_matrix_value() {
        let d = toy(4, 5, 2, 4);
        let theta = VarianceComponents::intercept_slope(0.7, 0.4, 0.5, 0.3).unwrap();
        let beta = DVector::from_vec(vec![0.1, -0.3]);
        let (v, x, y) = full_v(&theta, &d);
        let r = y - x * &beta;
        let n = r.len() as f64;
        let oracle = -0.5 * (v.determinant().ln() + r.dot(&(v.try_inverse().unwrap() * &r)) + n * (2.0 * PI).ln());
        assert!((marginal_loglik(&theta, &d, &beta).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn reml_without_fixed_effects_is_marginal_at_zero() {
        let mut d = toy(3, 3, 1, 5);
        for b in &mut d.blocks {
            b.x = DMatrix::zeros(b.y.len(), 0);
        }
        d.fixed_names.clear();
        let theta = VarianceComponents::intercept(0.4, 0.9).unwrap();
        let ml = marginal_loglik(&theta, &d, &DVector::zeros(0)).unwrap();
        assert!((reml_loglik(&theta, &d).unwrap() - ml).abs() < 1e-12);
    }

    #[test]
    fn reml_matches_balanced_anova_closed_form() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let ys = [[1.0, 2.0], [4.0, 7.0]];
        let d = design(
            ys.iter().enumerate().map(|(k, y)| block(k as u32, x.clone(), x.clone(), y.to_vec())).collect(),
            1,
        );
        let (sb, s2) = (1.7, 0.8);
        let theta = VarianceComponents::intercept(sb, s2).unwrap();
        let (a, m) = (2.0, 2.0);
        let means: Vec<f64> = ys.iter().map(|y| (y[0] + y[1]) / 2.0).collect();
        let grand = (means[0] + means[1]) / 2.0;
        let ssw: f64 = ys.iter().zip(&means).map(|(y, mu)| (y[0] - mu).powi(2) + (y[1] - mu).powi(2)).sum();
        let ssb: f64 = means.iter().map(|mu| m * (mu - grand).powi(2)).sum();
        let lam = s2 + m * sb;
        let oracle = -0.5
            * (a * (m - 1.0) * s2.ln() + a * lam.ln() + ssw / s2 + ssb / lam + (a * m / lam).ln()
                + (a * m - 1.0) * (2.0 * PI).ln());
        assert!((reml_loglik(&theta, &d).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn sufficient_statistics_path_agrees_with_direct_path() {
        let d = toy(5, 6, 2, 6);
        let theta = VarianceComponents::intercept_slope(0.6, 0.25, 0.4, 0.35).unwrap();
        let prob = MixedProblem::new(&d, None).unwrap();
        let l = theta.cholesky_factor();
        let ml = prob.evaluate(&l, theta.sigma_sq, Criterion::Ml).unwrap();
        let reml = prob.evaluate(&l, theta.sigma_sq, Criterion::Reml).unwrap();
        let beta = gls_beta(&theta, &d).unwrap();
        assert!((&ml.beta - &beta).amax() < 1e-10);
        assert!((ml.value - marginal_loglik(&theta, &d, &beta).unwrap()).abs() < 1e-9);
        assert!((reml.value - reml_loglik(&theta, &d).unwrap()).abs() < 1e-9);
        let post = prob.posterior(&l, theta.sigma_sq, &beta).unwrap();
        for ((_, b), (fast, _)) in blup(&theta, &beta, &d).unwrap().iter().zip(&post) {
            assert!((b - fast).amax() < 1e-10);
        }
    }

    #[test]
    fn blup_limits_and_shrinkage() {
        let d = toy(4, 5, 1, 8);
        let beta = DVector::from_vec(vec![0.3, 0.1]);
        let zero = VarianceComponents::intercept(0.0, 1.0).unwrap();
        assert!(blup(&zero, &beta, &d).unwrap().iter().all(|(_, b)| b[0] == 0.0));
        let sharp = VarianceComponents::intercept(2.0, 1e-8).unwrap();
        let loose = VarianceComponents::intercept(0.5, 1.0).unwrap();
        for ((b, (_, sh)), (_, lo)) in d.blocks.iter().zip(blup(&sharp, &beta, &d).unwrap()).zip(blup(&loose, &beta, &d).unwrap()) {
            let mean_r = (&b.y - &b.x * &beta).mean();
            assert!((sh[0] - mean_r).abs() < 1e-6);
            assert!(lo[0].abs() <= mean_r.abs());
        }
    }
}
