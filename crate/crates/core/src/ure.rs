//! Unbiased estimate of Haff risk for orthogonally invariant estimators.
//!
//! For Σ̂ = O·diag(ψ)·Oᵀ with ψ a function of the sample eigenvalues,
//! `F + G` is an unbiased estimate of E‖Σ̂Σ⁻¹ − I‖²_F / p. `F` depends on ψ
//! alone; `G` collects every term that carries a derivative of ψ.
//!
//! With m = n − p − 1 and D_kb = (ψ_k − ψ_b)/(l_k − l_b):
//!
//! ```text
//! n²p·(F − 1) = m(m−1) Σ ψ_k²/l_k² − m (Σ ψ_k/l_k)² + 4m Σ_{k≠b} (ψ_k/l_k) D_kb
//!             + 2 Σ_{k≠b≠e} D_kb D_ke + 2 Σ_{k≠b≠e} ψ_k (D_ke − D_be)/(l_k − l_b)
//!             − 2mn Σ ψ_k/l_k − 2n Σ_{k≠b} D_kb
//! ```
//!
//! Both triple sums reduce to O(p²) through R_k = Σ_{b≠k} D_kb.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::spectra::SpectralData;

/// Default relative step for central differences.
pub const DEFAULT_FD_STEP: f64 = 4e-6;

/// An eigenvalue estimate (γ̂, σ̂²); ψ_k = γ̂_k + σ̂² for k ≤ ρ̂ and σ̂² beyond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueEstimate {
    pub gammas: Vec<f64>,
    pub sigma2: f64,
}

impl EigenvalueEstimate {
    pub fn psi(&self, p: usize) -> Vec<f64> {
        (0..p)
            .map(|k| self.gammas.get(k).copied().unwrap_or(0.0) + self.sigma2)
            .collect()
    }
}

/// ψ together with the derivatives G consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorProfile {
    pub psi: Vec<f64>,
    /// `jacobian[(k, b)]` = ∂ψ_k/∂l_b.
    pub jacobian: DMatrix<f64>,
    /// ∂²ψ_k/∂l_k².
    pub second_diag: Vec<f64>,
    pub rho_hat: usize,
}

impl EstimatorProfile {
    pub fn new(psi: Vec<f64>, jacobian: DMatrix<f64>, second_diag: Vec<f64>, rho_hat: usize) -> Result<Self> {
        let p = psi.len();
        if jacobian.nrows() != p || jacobian.ncols() != p || second_diag.len() != p {
            return Err(Error::Shape(format!(
                "profile with {} values, {}x{} jacobian, {} second derivatives",
                p,
                jacobian.nrows(),
                jacobian.ncols(),
                second_diag.len()
            )));
        }
        if rho_hat > p {
            return Err(Error::RankOutOfRange { rank: rho_hat, p });
        }
        Ok(Self { psi, jacobian, second_diag, rho_hat })
    }

    /// Profile of S itself: ψ = l, J = I.
    pub fn sample(l: &[f64]) -> Self {
        let p = l.len();
        Self {
            psi: l.to_vec(),
            jacobian: DMatrix::identity(p, p),
            second_diag: vec![0.0; p],
            rho_hat: p,
        }
    }

    pub fn p(&self) -> usize {
        self.psi.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UreValue {
    pub f: f64,
    pub g: f64,
    pub total: f64,
}

impl UreValue {
    pub fn new(f: f64, g: f64) -> Self {
        Self { f, g, total: f + g }
    }
}

/// Central-difference profile of `estimator` at the spectrum of `spec`.
///
/// Eigenvalue k is perturbed by h_k = step·max(l_k, l_p) for the Jacobian and by
/// step^(3/4)·max(l_k, l_p) for the second diagonal, each clipped to a quarter of
/// the distance to its neighbours so the perturbed spectrum stays ordered.
pub fn profile_finite_difference<E>(estimator: E, spec: &SpectralData, step: f64) -> Result<EstimatorProfile>
where
    E: Fn(&[f64]) -> Result<EigenvalueEstimate>,
{
    profile_from_eigenvalues(estimator, spec.eigenvalues(), step)
}

pub(crate) fn profile_from_eigenvalues<E>(estimator: E, l: &[f64], step: f64) -> Result<EstimatorProfile>
where
    E: Fn(&[f64]) -> Result<EigenvalueEstimate>,
{
    let p = l.len();
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let base = estimator(l)?;
    let rho_hat = base.gammas.len();
    if rho_hat > p {
        return Err(Error::RankOutOfRange { rank: rho_hat, p });
    }
    let psi = base.psi(p);
    let mut jacobian = DMatrix::zeros(p, p);
    let mut second_diag = vec![0.0; p];
    let mut point = l.to_vec();
    // The second difference uses step^(3/4), which balances truncation against
    // rounding for a second derivative as step does for a first.
    let step2 = step.powf(0.75);
    for k in 0..p {
        let mut room = l[k];
        if k > 0 {
            room = room.min(l[k - 1] - l[k]);
        }
        if k + 1 < p {
            room = room.min(l[k] - l[k + 1]);
        }
        let scale = l[k].max(l[p - 1]);
        let h = (step * scale).min(0.25 * room);
        let h2 = (step2 * scale).min(0.25 * room);
        if !(h > 64.0 * f64::EPSILON * l[k]) {
            return Err(Error::NearDegenerate { index: k, gap: room });
        }
        let mut at = |offset: f64| -> Result<Vec<f64>> {
            point[k] = l[k] + offset;
            let est = estimator(&point);
            point[k] = l[k];
            let est = est?;
            if est.gammas.len() != rho_hat {
                return Err(Error::Domain("estimator changed rank under perturbation".into()));
            }
            Ok(est.psi(p))
        };
        let psi_plus = at(h)?;
        let psi_minus = at(-h)?;
        for j in 0..p {
            jacobian[(j, k)] = (psi_plus[j] - psi_minus[j]) / (2.0 * h);
        }
        // One Richardson step on the second difference cancels its h² error term.
        let mut second = |h: f64| -> Result<f64> { Ok((at(h)?[k] - 2.0 * psi[k] + at(-h)?[k]) / (h * h)) };
        let (coarse, fine) = (second(h2)?, second(0.5 * h2)?);
        second_diag[k] = (4.0 * fine - coarse) / 3.0;
    }
    EstimatorProfile::new(psi, jacobian, second_diag, rho_hat)
}

fn check_regime(spec: &SpectralData, profile: &EstimatorProfile) -> Result<()> {
    if profile.p() != spec.p() {
        return Err(Error::Shape(format!("profile has {} values for p = {}", profile.p(), spec.p())));
    }
    spec.ensure_generic()
}

pub fn evaluate_f(spec: &SpectralData, profile: &EstimatorProfile) -> Result<f64> {
    check_regime(spec, profile)?;
    f_from_psi(spec.eigenvalues(), spec.n(), &profile.psi)
}

pub fn evaluate_g(spec: &SpectralData, profile: &EstimatorProfile) -> Result<f64> {
    check_regime(spec, profile)?;
    g_from_profile(spec.eigenvalues(), spec.n(), profile)
}

pub fn evaluate(spec: &SpectralData, profile: &EstimatorProfile) -> Result<UreValue> {
    Ok(UreValue::new(evaluate_f(spec, profile)?, evaluate_g(spec, profile)?))
}

pub(crate) fn require_ure_regime(n: usize, p: usize) -> Result<()> {
    if n < p + 1 {
        Err(Error::Regime { n, p })
    } else {
        Ok(())
    }
}

/// Row sums R_k = Σ_{b≠k} D_kb and Σ_{b≠k} D_kb².
fn divided_difference_sums(l: &[f64], psi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = l.len();
    let mut r = vec![0.0; p];
    let mut q = vec![0.0; p];
    for k in 0..p {
        let mut rk = CompensatedSum::new();
        let mut qk = CompensatedSum::new();
        for b in 0..p {
            if b != k {
                let d = (psi[k] - psi[b]) / (l[k] - l[b]);
                rk.add(d);
                qk.add(d * d);
            }
        }
        r[k] = rk.value();
        q[k] = qk.value();
    }
    (r, q)
}

pub(crate) fn f_from_psi(l: &[f64], n: usize, psi: &[f64]) -> Result<f64> {
    let p = l.len();
    require_ure_regime(n, p)?;
    let nf = n as f64;
    let pf = p as f64;
    let m = nf - pf - 1.0;
    let (r, q) = divided_difference_sums(l, psi);

    let mut t1 = CompensatedSum::new();
    let mut t6 = CompensatedSum::new();
    let mut t3 = CompensatedSum::new();
    let mut t4 = CompensatedSum::new();
    let mut t5 = CompensatedSum::new();
    let mut t7 = CompensatedSum::new();
    for k in 0..p {
        let ratio = psi[k] / l[k];
        t1.add(ratio * ratio);
        t6.add(ratio);
        t3.add(ratio * r[k]);
        t4.add(r[k] * r[k] - q[k]);
        t7.add(r[k]);
        let mut inner = CompensatedSum::new();
        for b in 0..p {
            if b != k {
                inner.add((r[k] - r[b]) / (l[k] - l[b]));
            }
        }
        t5.add(psi[k] * inner.value());
    }
    let t6 = t6.value();
    let n2p = nf * nf * pf;
    let quad = m * (m - 1.0) * t1.value() - m * t6 * t6 + 4.0 * m * t3.value() + 2.0 * t4.value() + 2.0 * t5.value();
    let f = quad / n2p - 2.0 * m * t6 / (nf * pf) - 2.0 * t7.value() / (nf * pf) + 1.0;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite("F".into()))
    }
}

pub(crate) fn g_from_profile(l: &[f64], n: usize, profile: &EstimatorProfile) -> Result<f64> {
    let p = l.len();
    require_ure_regime(n, p)?;
    let nf = n as f64;
    let pf = p as f64;
    let m = nf - pf - 1.0;
    let psi = &profile.psi;
    let jac = &profile.jacobian;
    let (r, _) = divided_difference_sums(l, psi);

    let mut g1 = CompensatedSum::new();
    let mut g2 = CompensatedSum::new();
    let mut g3 = CompensatedSum::new();
    let mut g4 = CompensatedSum::new();
    let mut g5 = CompensatedSum::new();
    let mut g6 = CompensatedSum::new();
    let mut g7 = CompensatedSum::new();
    for k in 0..p {
        let jkk = jac[(k, k)];
        g1.add(jkk * jkk);
        g2.add(psi[k] * profile.second_diag[k]);
        g3.add(psi[k] / l[k] * jkk);
        g4.add(jkk * r[k]);
        g7.add(jkk);
        let mut diag_pairs = CompensatedSum::new();
        let mut cross_pairs = CompensatedSum::new();
        for b in 0..p {
            if b != k {
                let gap = l[k] - l[b];
                diag_pairs.add((jkk - jac[(b, b)]) / gap);
                cross_pairs.add((jkk - jac[(b, k)]) / gap);
            }
        }
        g5.add(psi[k] * diag_pairs.value());
        g6.add(psi[k] * cross_pairs.value());
    }
    let n2p = nf * nf * pf;
    let g = (8.0 * g1.value() + 8.0 * g2.value() + 8.0 * m * g3.value() + 8.0 * g4.value() + 4.0 * g5.value() + 4.0 * g6.value()) / n2p
        - 4.0 * g7.value() / (nf * pf);
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite("G".into()))
    }
}

/// A covariance truth prepared for repeated loss evaluation.
#[derive(Clone, Debug)]
pub struct Truth {
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, nalgebra::Dyn>,
}

impl Truth {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Shape("truth must be square".into()));
        }
        let factor = Cholesky::new(matrix.clone()).ok_or(Error::SingularTruth)?;
        Ok(Self { matrix, factor })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Σ⁻¹·M.
    pub fn solve(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m)?;
        Ok(self.factor.solve(m))
    }

    fn check(&self, estimate: &DMatrix<f64>) -> Result<()> {
        if estimate.shape() != self.matrix.shape() {
            return Err(Error::Shape(format!(
                "estimate is {}x{}, truth is {}x{}",
                estimate.nrows(),
                estimate.ncols(),
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        Ok(())
    }

    /// tr((Σ̂Σ⁻¹ − I)²) / p, evaluated as ‖L⁻¹Σ̂L⁻ᵀ − I‖²_F / p with Σ = LLᵀ.
    ///
    /// This is the invariant reading of ‖Σ̂Σ⁻¹ − I‖²_F; the two agree when Σ is a
    /// multiple of the identity.
    pub fn haff_loss(&self, estimate: &DMatrix<f64>) -> Result<f64> {
        self.check(estimate)?;
        if estimate == &self.matrix {
            return Ok(0.0);
        }
        let p = self.matrix.nrows();
        let l = self.factor.l_dirty();
        let y = l
            .solve_lower_triangular(estimate)
            .ok_or(Error::SingularTruth)?;
        let mut x = l
            .solve_lower_triangular(&y.transpose())
            .ok_or(Error::SingularTruth)?;
        for i in 0..p {
            x[(i, i)] -= 1.0;
        }
        Ok(x.norm_squared() / p as f64)
    }

    /// ‖Σ̂ − Σ‖²_F / p.
    pub fn frobenius_loss(&self, estimate: &DMatrix<f64>) -> Result<f64> {
        self.check(estimate)?;
        Ok((estimate - &self.matrix).norm_squared() / self.matrix.nrows() as f64)
    }
}

pub fn haff_loss(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    Truth::new(truth.clone())?.haff_loss(estimate)
}

pub fn frobenius_loss(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Shape("estimate and truth differ in shape".into()));
    }
    Ok((estimate - truth).norm_squared() / truth.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l: &[f64], n: usize) -> SpectralData {
        SpectralData::from_eigenvalues(l.to_vec(), n).unwrap()
    }

    #[test]
    fn f_for_single_eigenvalue() {
        let s = spec(&[2.5], 4);
        let f = evaluate_f(&s, &EstimatorProfile::sample(&[2.5])).unwrap();
        assert!(f.abs() < 1e-15, "{f}");
    }

    #[test]
    fn g_for_single_eigenvalue() {
        let s = spec(&[2.5], 4);
        let g = evaluate_g(&s, &EstimatorProfile::sample(&[2.5])).unwrap();
        assert!((g - 0.5).abs() < 1e-15, "{g}");
    }

    #[test]
    fn sample_profile_total_is_exact_risk() {
        // F + G for S is the constant (p+1)/n.
        let l = [9.0, 5.5, 3.2, 2.0, 1.7, 1.1, 0.9, 0.5, 0.3, 0.1];
        let s = spec(&l, 40);
        let u = evaluate(&s, &EstimatorProfile::sample(&l)).unwrap();
        assert!((u.total - 11.0 / 40.0).abs() < 1e-13, "{}", u.total);
    }

    #[test]
    fn constant_profile_has_zero_g() {
        let l = [4.0, 2.0, 1.0];
        let s = spec(&l, 12);
        let prof = profile_finite_difference(|_: &[f64]| Ok(EigenvalueEstimate { gammas: vec![], sigma2: 1.3 }), &s, DEFAULT_FD_STEP).unwrap();
        assert!(prof.jacobian.iter().all(|v| *v == 0.0));
        assert!(prof.second_diag.iter().all(|v| *v == 0.0));
        assert_eq!(evaluate_g(&s, &prof).unwrap(), 0.0);
    }

    #[test]
    fn identity_estimator_profile() {
        let l = [4.0, 2.0, 1.0];
        let s = spec(&l, 12);
        let prof = profile_finite_difference(|x: &[f64]| Ok(EigenvalueEstimate { gammas: x.to_vec(), sigma2: 0.0 }), &s, DEFAULT_FD_STEP).unwrap();
        assert!((prof.jacobian.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-9);
        assert!(prof.second_diag.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn regime_error_below_p_plus_one() {
        let l = [3.0, 2.0, 1.0];
        let s = spec(&l, 3);
        assert!(matches!(evaluate_f(&s, &EstimatorProfile::sample(&l)), Err(Error::Regime { n: 3, p: 3 })));
    }

    #[test]
    fn near_degenerate_spectrum_is_rejected() {
        let l = [1.0, 1.0, 0.5];
        let s = spec(&l, 10);
        assert!(matches!(evaluate_f(&s, &EstimatorProfile::sample(&l)), Err(Error::NearDegenerate { .. })));
    }

    #[test]
    fn losses() {
        let truth = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(haff_loss(&truth, &truth).unwrap(), 0.0);
        assert_eq!(frobenius_loss(&truth, &truth).unwrap(), 0.0);
        assert!((haff_loss(&(&truth * 2.0), &truth).unwrap() - 1.0).abs() < 1e-14);
        let mut est = DMatrix::<f64>::identity(4, 4);
        est[(0, 0)] = 2.0;
        assert_eq!(frobenius_loss(&est, &DMatrix::identity(4, 4)).unwrap(), 0.25);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(haff_loss(&truth, &singular), Err(Error::SingularTruth)));
    }

    #[test]
    fn haff_loss_is_trace_of_square() {
        let truth = DMatrix::from_fn(4, 4, |i, j| 0.7f64.powi((i as i32 - j as i32).abs()));
        let est = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.5 + i as f64 } else { 0.1 });
        let x = truth.clone().try_inverse().unwrap() * &est - DMatrix::identity(4, 4);
        let want = (&x * &x).trace() / 4.0;
        let got = haff_loss(&est, &truth).unwrap();
        assert!((got - want).abs() < 1e-12 * want, "{got} vs {want}");
    }
}
