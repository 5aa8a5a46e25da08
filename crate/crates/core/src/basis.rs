//! Clamped uniform B-spline bases on `[0, 1]` and their orthonormalized form.
//!
//! The orthonormal basis `M̃(t) = T·M(t)` is scaled so that `τ·∫ M̃ M̃' dt = I`,
//! which makes a coefficient row of Euclidean norm `√τ` evaluate to a unit-norm
//! function.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, FafpcaError, Result};
use crate::quadrature::Quadrature;

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_N_QUAD: usize = 1024;
pub const MIN_N_QUAD: usize = 64;

/// Largest Gram condition number accepted by [`orthonormalize`].
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// `ceil(n^{1/3})` clamped to `[4, 30]`.
pub fn default_interior_knots(n_subjects: usize) -> usize {
    let k = (n_subjects as f64).cbrt().ceil() as usize;
    k.clamp(4, 30)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSplineBasis {
    degree: usize,
    interior_knots: usize,
    knots: Vec<f64>,
}

impl RawSplineBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn tau_n(&self) -> usize {
        self.degree + 1 + self.interior_knots
    }

    /// Raw B-spline values at `t` via the Cox-de Boor recursion.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        check_unit(t)?;
        let mut out = DVector::zeros(self.tau_n());
        let (span, vals) = self.nonzero(t);
        for (r, v) in vals.iter().enumerate() {
            out[span - self.degree + r] = *v;
        }
        Ok(out)
    }

    /// Values at any real `t`, continuing the boundary polynomial pieces outside `[0, 1]`.
    pub fn eval_extended(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.tau_n());
        let (span, vals) = self.nonzero(t);
        for (r, v) in vals.iter().enumerate() {
            out[span - self.degree + r] = *v;
        }
        out
    }

    /// Knot span index `μ` with `knots[μ] ≤ t < knots[μ+1]`, closing the last span at 1.
    fn span(&self, t: f64) -> usize {
        let last = self.tau_n() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // knots[degree..=last+1] is strictly increasing
        let mut lo = self.degree;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `degree + 1` basis functions that can be nonzero at `t`, starting at
    /// index `span - degree`.
    fn nonzero(&self, t: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let span = self.span(t);
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span, n)
    }
}

/// Clamped B-spline basis of the given degree with equispaced interior knots.
pub fn make_raw_basis(degree: usize, interior_knots: usize) -> Result<RawSplineBasis> {
    if degree < 1 {
        return Err(invalid!("spline degree must be at least 1, got {degree}"));
    }
    let mut knots = Vec::with_capacity(2 * (degree + 1) + interior_knots);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    let step = 1.0 / (interior_knots + 1) as f64;
    knots.extend((1..=interior_knots).map(|i| i as f64 * step));
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    Ok(RawSplineBasis {
        degree,
        interior_knots,
        knots,
    })
}

/// `G_ab ≈ ∫₀¹ M_a(t) M_b(t) dt` by the composite two-point rule on `n_quad`
/// subintervals.
pub fn gram_matrix(basis: &RawSplineBasis, n_quad: usize) -> Result<DMatrix<f64>> {
    if n_quad < MIN_N_QUAD {
        return Err(invalid!("n_quad must be at least {MIN_N_QUAD}, got {n_quad}"));
    }
    let quad = Quadrature::composite_gauss2(n_quad);
    let tau = basis.tau_n();
    let mut g = DMatrix::zeros(tau, tau);
    for (&t, &w) in quad.nodes.iter().zip(&quad.weights) {
        let (span, vals) = basis.nonzero(t);
        let first = span - basis.degree;
        for (r, &va) in vals.iter().enumerate() {
            for (s, &vb) in vals.iter().enumerate() {
                g[(first + r, first + s)] += w * va * vb;
            }
        }
    }
    let g = (&g + g.transpose()) * 0.5;
    if g.clone().cholesky().is_none() {
        let condition = condition_number(&g);
        return Err(FafpcaError::SingularGram { condition });
    }
    Ok(g)
}

fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Symmetric inverse square root of an SPD matrix together with its condition number.
fn inverse_sqrt(sym: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(FafpcaError::SingularGram { condition });
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let u = &eig.eigenvectors;
    let out = u * DMatrix::from_diagonal(&d) * u.transpose();
    Ok(((&out + out.transpose()) * 0.5, condition))
}

/// Spline basis transformed so that `τ·∫ M̃ M̃' dt = I`.
#[derive(Debug, Clone)]
pub struct OrthoSplineBasis {
    raw: RawSplineBasis,
    transform: DMatrix<f64>,
    n_quad: usize,
    condition: f64,
}

/// The condition number is derived from the other fields and does not take part.
impl PartialEq for OrthoSplineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw && self.transform == other.transform && self.n_quad == other.n_quad
    }
}

/// Build `T = τ^{-1/2} G^{-1/2}` from the quadrature Gram matrix.
pub fn orthonormalize(basis: &RawSplineBasis, n_quad: usize) -> Result<OrthoSplineBasis> {
    let g = gram_matrix(basis, n_quad)?;
    let (g_inv_sqrt, condition) = inverse_sqrt(&g)?;
    let tau = basis.tau_n() as f64;
    Ok(OrthoSplineBasis {
        raw: basis.clone(),
        transform: g_inv_sqrt / tau.sqrt(),
        n_quad,
        condition,
    })
}

impl OrthoSplineBasis {
    /// Reassemble a basis from stored parts (used when loading a model).
    pub fn from_parts(
        raw: RawSplineBasis,
        transform: DMatrix<f64>,
        n_quad: usize,
    ) -> Result<Self> {
        let tau = raw.tau_n();
        if transform.nrows() != tau || transform.ncols() != tau {
            return Err(FafpcaError::DimensionMismatch(format!(
                "transform is {}x{}, basis has {tau} functions",
                transform.nrows(),
                transform.ncols()
            )));
        }
        let condition = {
            let sv = transform.singular_values();
            let min = sv.min();
            if min <= 0.0 {
                f64::INFINITY
            } else {
                (sv.max() / min).powi(2)
            }
        };
        Ok(OrthoSplineBasis {
            raw,
            transform,
            n_quad,
            condition,
        })
    }

    pub fn raw(&self) -> &RawSplineBasis {
        &self.raw
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn tau_n(&self) -> usize {
        self.raw.tau_n()
    }

    pub fn n_quad(&self) -> usize {
        self.n_quad
    }

    /// Condition number of the Gram matrix the transform was built from.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `M̃(t) = T·M(t)`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        Ok(&self.transform * self.raw.eval(t)?)
    }

    pub fn quadrature(&self) -> Quadrature {
        Quadrature::composite_gauss2(self.n_quad)
    }

    /// `∫ M̃ M̃' dt` by quadrature.
    pub fn gram(&self, n_quad: usize) -> Result<DMatrix<f64>> {
        let g = gram_matrix(&self.raw, n_quad)?;
        let out = &self.transform * g * self.transform.transpose();
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Orthonormalize this basis again; the extra transform is returned on its own.
    pub fn reorthonormalize(&self, n_quad: usize) -> Result<DMatrix<f64>> {
        let g = self.gram(n_quad)?;
        let (g_inv_sqrt, _) = inverse_sqrt(&g)?;
        Ok(g_inv_sqrt / (self.tau_n() as f64).sqrt())
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FafpcaError::OutOfRange {
            time: t,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}
