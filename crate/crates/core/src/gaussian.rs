use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Dense Gaussian in information form `N(Λ⁻¹η, Λ⁻¹)`.
#[derive(Debug, Clone)]
pub struct InfoGaussian {
    pub mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det_precision: f64,
}

impl InfoGaussian {
    /// `None` if the precision is not positive definite.
    pub fn new(precision: DMatrix<f64>, eta: DVector<f64>) -> Option<Self> {
        let chol = precision.cholesky()?;
        let mean = chol.solve(&eta);
        let log_det_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self { mean, chol, log_det_precision })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let l = self.chol.l();
        let q = (l.transpose() * &d).norm_squared();
        0.5 * self.log_det_precision - 0.5 * self.dim() as f64 * LN_2PI - 0.5 * q
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        // x = mean + L⁻ᵀ z has covariance (L Lᵀ)⁻¹.
        let z = DVector::from_fn(self.dim(), |_, _| std_normal(rng));
        let l = self.chol.l();
        let w = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor is invertible");
        &self.mean + w
    }
}
