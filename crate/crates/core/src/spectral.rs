//! Schrodinger operators on graphs and their exact functional calculus.
//!
//! `L = Delta + V` is self-adjoint in `L^2(mu)`. It is diagonalized through the
//! symmetric matrix `M^{1/2} L M^{-1/2}`; modes are mapped back and are
//! orthonormal for `<f, g> = sum mu f g`. The edge Hodge operator from
//! [`crate::forms`] reuses the same container with the edge inner product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::manifold::DiscreteManifold;

/// One real value per vertex.
pub type ScalarField = Vec<f64>;

/// Relative threshold below which an eigenvalue is counted in the kernel.
pub const KERNEL_REL_TOL: f64 = 1e-10;
/// Relative threshold below which a negative eigenvalue is an error.
pub const INDEFINITE_REL_TOL: f64 = 1e-8;

/// Signed potential `V = vplus - vminus` with both parts nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSplit {
    vplus: Vec<f64>,
    vminus: Vec<f64>,
}

/// Which nonnegative field multiplies `|u|^2` inside the functionals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialWeight {
    /// `|V| = V+ + V-`.
    #[default]
    Abs,
    /// `V+` only.
    Plus,
}

impl PotentialSplit {
    pub fn new(vplus: Vec<f64>, vminus: Vec<f64>, n: usize) -> Result<Self> {
        if vplus.len() != n || vminus.len() != n {
            return Err(Error::InvalidArgument(format!(
                "potential arrays have lengths {} and {}, expected {n}",
                vplus.len(),
                vminus.len()
            )));
        }
        for (name, v) in [("vplus", &vplus), ("vminus", &vminus)] {
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("{name} has entry {x}, must be finite and >= 0")));
            }
        }
        Ok(PotentialSplit { vplus, vminus })
    }

    pub fn zero(n: usize) -> Self {
        PotentialSplit { vplus: vec![0.0; n], vminus: vec![0.0; n] }
    }

    /// Nonnegative potential `V = vplus`.
    pub fn nonnegative(vplus: Vec<f64>) -> Result<Self> {
        let n = vplus.len();
        Self::new(vplus, vec![0.0; n], n)
    }

    pub fn len(&self) -> usize {
        self.vplus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vplus.is_empty()
    }

    pub fn vplus(&self) -> &[f64] {
        &self.vplus
    }

    pub fn vminus(&self) -> &[f64] {
        &self.vminus
    }

    /// `V = V+ - V-`.
    pub fn effective(&self) -> Vec<f64> {
        self.vplus.iter().zip(&self.vminus).map(|(p, m)| p - m).collect()
    }

    pub fn weights(&self, choice: PotentialWeight) -> Vec<f64> {
        match choice {
            PotentialWeight::Abs => self.vplus.iter().zip(&self.vminus).map(|(p, m)| p + m).collect(),
            PotentialWeight::Plus => self.vplus.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vplus.iter().chain(&self.vminus).all(|&v| v == 0.0)
    }

    pub fn has_negative_part(&self) -> bool {
        self.vminus.iter().any(|&v| v > 0.0)
    }

    /// Same split shifted by `c` in the positive part.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        let vplus = self.vplus.iter().map(|v| v + c).collect();
        Self::new(vplus, self.vminus.clone(), self.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Scalar,
    Form,
}

/// Full eigendecomposition of a self-adjoint nonnegative operator.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    kind: OperatorKind,
    lambdas: Vec<f64>,
    modes: DMatrix<f64>,
    weights: Vec<f64>,
    kernel_dim: usize,
    manifold: Arc<DiscreteManifold>,
    potential: PotentialSplit,
}

impl SpectralOperator {
    /// Builds from the symmetrized matrix `W^{1/2} A W^{-1/2}` and the inner-product weights `W`.
    pub(crate) fn from_symmetric(
        kind: OperatorKind,
        sym: DMatrix<f64>,
        weights: Vec<f64>,
        manifold: Arc<DiscreteManifold>,
        potential: PotentialSplit,
    ) -> Result<Self> {
        let dim = weights.len();
        let (lambdas, modes) = if dim == 0 {
            (Vec::new(), DMatrix::zeros(0, 0))
        } else {
            let eig = SymmetricEigen::new(sym);
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let lambdas: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let mut modes = DMatrix::zeros(dim, dim);
            for (col, &k) in order.iter().enumerate() {
                for i in 0..dim {
                    modes[(i, col)] = eig.eigenvectors[(i, k)] / weights[i].sqrt();
                }
            }
            (lambdas, modes)
        };
        let scale = lambdas.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        if let Some(&lmin) = lambdas.first() {
            let tol = INDEFINITE_REL_TOL * scale.max(f64::MIN_POSITIVE);
            if lmin < -tol {
                return Err(Error::IndefiniteOperator { eigenvalue: lmin, tolerance: tol });
            }
        }
        let lmax = lambdas.last().copied().unwrap_or(0.0).max(0.0);
        let kernel_dim = lambdas.iter().take_while(|&&l| l <= KERNEL_REL_TOL * lmax).count();
        Ok(SpectralOperator { kind, lambdas, modes, weights, kernel_dim, manifold, potential })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Dimension of the underlying space (vertices or edges).
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Eigenvalues in ascending order.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Eigenvectors as columns, orthonormal for the weighted inner product.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.modes.column(k).iter().copied().collect()
    }

    /// Inner-product weights (`mu` for scalar operators, `w` for forms).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn is_kernel(&self, k: usize) -> bool {
        k < self.kernel_dim
    }

    pub fn manifold(&self) -> &Arc<DiscreteManifold> {
        &self.manifold
    }

    pub fn potential(&self) -> &PotentialSplit {
        &self.potential
    }

    /// Smallest eigenvalue off the kernel; `None` if the operator vanishes.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.lambdas.get(self.kernel_dim).copied()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.last().copied().unwrap_or(0.0)
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| w * x * y).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "field has length {}, operator acts on dimension {}",
                f.len(),
                self.dim()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field has non-finite entries".into()));
        }
        Ok(())
    }

    /// Mode coefficients `c_k = <f, phi_k>`.
    pub fn coefficients(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let wf = DVector::from_iterator(f.len(), f.iter().zip(&self.weights).map(|(x, w)| x * w));
        Ok(self.modes.tr_mul(&wf).iter().copied().collect())
    }

    /// `sum_k c_k phi_k`.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        (&self.modes * DVector::from_column_slice(c)).iter().copied().collect()
    }

    /// `phi(L) f`; fails when `phi` is not finite at some eigenvalue.
    pub fn calculus(&self, phi: impl Fn(f64) -> f64, f: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.coefficients(f)?;
        for (ck, &l) in c.iter_mut().zip(&self.lambdas) {
            let v = phi(l);
            if !v.is_finite() {
                return Err(Error::UndefinedAt { eigenvalue: l });
            }
            *ck *= v;
        }
        Ok(self.synthesize(&c))
    }

    /// `phi(L)` on the orthogonal complement of the kernel; kernel components are dropped.
    ///
    /// Returns the field and the squared norm of the removed kernel component.
    pub fn calculus_on_range(&self, phi: impl Fn(f64) -> f64, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut c = self.coefficients(f)?;
        let mut removed = 0.0;
        for (k, (ck, &l)) in c.iter_mut().zip(&self.lambdas).enumerate() {
            if k < self.kernel_dim {
                removed += *ck * *ck;
                *ck = 0.0;
            } else {
                let v = phi(l);
                if !v.is_finite() {
                    return Err(Error::UndefinedAt { eigenvalue: l });
                }
                *ck *= v;
            }
        }
        Ok((self.synthesize(&c), removed))
    }

    /// Orthogonal projection onto the complement of the kernel.
    pub fn project_off_kernel(&self, f: &[f64]) -> Result<Vec<f64>> {
        Ok(self.calculus_on_range(|_| 1.0, f)?.0)
    }

    /// `e^{-tL} f`.
    pub fn heat_apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        self.calculus(|l| (-t * l).exp(), f)
    }

    /// Heat kernel `p_t(x, y) = sum_k e^{-lambda_k t} phi_k(x) phi_k(y)`.
    pub fn heat_kernel(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("time {t} must be positive")));
        }
        let mut scaled = self.modes.clone();
        for (k, &l) in self.lambdas.iter().enumerate() {
            scaled.column_mut(k).scale_mut((-t * l).exp());
        }
        Ok(&scaled * self.modes.transpose())
    }

    /// Poisson semigroup `e^{-t sqrt(L)} f`.
    pub fn poisson_apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
        }
        self.calculus(|l| (-t * l.max(0.0).sqrt()).exp(), f)
    }

    /// Applies the operator itself through its spectral decomposition.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.calculus(|l| l, f)
    }
}

/// `(Delta f)(x) = (1/mu(x)) sum_y w(x,y) (f(x) - f(y))`.
pub fn laplacian_apply(m: &DiscreteManifold, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n()];
    for e in m.edges() {
        let diff = e.w * (f[e.u] - f[e.v]);
        out[e.u] += diff;
        out[e.v] -= diff;
    }
    for (o, mu) in out.iter_mut().zip(m.mu()) {
        *o /= mu;
    }
    out
}

/// `L f = Delta f + V f`.
pub fn schrodinger_apply(m: &DiscreteManifold, v: &PotentialSplit, f: &[f64]) -> Vec<f64> {
    let mut out = laplacian_apply(m, f);
    for ((o, vv), x) in out.iter_mut().zip(v.effective()).zip(f) {
        *o += vv * x;
    }
    out
}

/// `|grad f|^2(x) = (1/(2 mu(x))) sum_y w(x,y) (f(y) - f(x))^2`.
pub fn gradient_sq(m: &DiscreteManifold, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n()];
    for e in m.edges() {
        let d = f[e.v] - f[e.u];
        let s = e.w * d * d;
        out[e.u] += s;
        out[e.v] += s;
    }
    for (o, mu) in out.iter_mut().zip(m.mu()) {
        *o /= 2.0 * mu;
    }
    out
}

/// `|grad f|(x)`.
pub fn gradient_modulus(m: &DiscreteManifold, f: &[f64]) -> Vec<f64> {
    gradient_sq(m, f).into_iter().map(f64::sqrt).collect()
}

/// Diagonalizes `L = Delta + V+ - V-` on `L^2(mu)`.
pub fn assemble(m: &Arc<DiscreteManifold>, v: &PotentialSplit) -> Result<SpectralOperator> {
    let n = m.n();
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("potential has length {}, expected {n}", v.len())));
    }
    let mu = m.mu();
    let veff = v.effective();
    let mut s = DMatrix::zeros(n, n);
    for x in 0..n {
        s[(x, x)] = veff[x];
    }
    for e in m.edges() {
        s[(e.u, e.u)] += e.w / mu[e.u];
        s[(e.v, e.v)] += e.w / mu[e.v];
        let off = -e.w / (mu[e.u] * mu[e.v]).sqrt();
        s[(e.u, e.v)] += off;
        s[(e.v, e.u)] += off;
    }
    SpectralOperator::from_symmetric(OperatorKind::Scalar, s, mu.to_vec(), Arc::clone(m), v.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{grid, Edge};

    fn p2() -> Arc<DiscreteManifold> {
        Arc::new(grid(1, 2).unwrap())
    }

    #[test]
    fn laplacian_on_p2() {
        assert_eq!(laplacian_apply(&p2(), &[1.0, 0.0]), vec![1.0, -1.0]);
        assert_eq!(gradient_sq(&p2(), &[1.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(laplacian_apply(&p2(), &[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn p2_spectrum_and_heat_kernel() {
        let op = assemble(&p2(), &PotentialSplit::zero(2)).unwrap();
        assert!(op.lambdas()[0].abs() < 1e-14);
        assert!((op.lambdas()[1] - 2.0).abs() < 1e-14);
        assert_eq!(op.kernel_dim(), 1);
        let p = op.heat_kernel(1.0).unwrap();
        assert!((p[(0, 0)] - (1.0 + (-2f64).exp()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = p2();
        let v = PotentialSplit::new(vec![0.0, 0.0], vec![5.0, 0.0], 2).unwrap();
        assert!(matches!(assemble(&m, &v), Err(Error::IndefiniteOperator { .. })));
    }

    #[test]
    fn weighted_measure_orthonormality() {
        let m = Arc::new(
            DiscreteManifold::new(
                vec![1.0, 2.5, 0.5],
                vec![Edge { u: 0, v: 1, w: 2.0, len: 1.0 }, Edge { u: 1, v: 2, w: 0.3, len: 1.0 }],
            )
            .unwrap(),
        );
        let v = PotentialSplit::nonnegative(vec![0.2, 0.0, 1.0]).unwrap();
        let op = assemble(&m, &v).unwrap();
        for j in 0..3 {
            let pj = op.mode(j);
            let lp = schrodinger_apply(&m, &v, &pj);
            for x in 0..3 {
                assert!((lp[x] - op.lambdas()[j] * pj[x]).abs() < 1e-12);
            }
            for k in 0..3 {
                let ip = op.inner(&pj, &op.mode(k));
                assert!((ip - if j == k { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_projection_is_mean() {
        let m = Arc::new(grid(2, 3).unwrap());
        let op = assemble(&m, &PotentialSplit::zero(9)).unwrap();
        let f: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let p = op.calculus(|l| if l <= 1e-9 { 1.0 } else { 0.0 }, &f).unwrap();
        assert!(p.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn undefined_calculus() {
        let op = assemble(&p2(), &PotentialSplit::zero(2)).unwrap();
        let r = op.calculus(|l| 1.0 / l.sqrt(), &[1.0, 0.0]);
        assert!(matches!(r, Err(Error::UndefinedAt { .. })));
        let (g, removed) = op.calculus_on_range(|l| 1.0 / l.sqrt(), &[1.0, 0.0]).unwrap();
        assert!((removed - 0.5).abs() < 1e-14);
        assert!((g[0] - 0.5 / 2f64.sqrt()).abs() < 1e-14);
    }
}
