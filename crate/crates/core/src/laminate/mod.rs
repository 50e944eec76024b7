//! Rank-one laminates, the fields realizing them, the growth certificate
//! for singular densities and lattice rank-one convexification.

mod field;
mod rconv;
mod tree;

pub use field::{laminate_field_build, DetHistogram, LaminateField};
pub use rconv::{conv_envelope_1d, fmt_num, rconv_lattice, Envelope1D, MatrixGrid, MatrixGridEnvelope};
pub use tree::{det_target_laminate, LaminateTree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::{IntegrandSpec, MatrixMN};

pub const DEFAULT_MAX_DEPTH: usize = 3;
pub const DEFAULT_CERTIFICATE_MESH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateBranch {
    /// |det ξ| ≥ α: the bound is β(1 + |ξ|^p) directly.
    Direct,
    /// Laminate onto det = ±α, bound 2^p β (1 + |ξ|^p + ‖∇φ‖_p^p).
    Laminate,
}

/// Explicit upper bound for the cell infimum at ξ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub bound: f64,
    pub branch: CertificateBranch,
    pub alpha: f64,
    pub beta: f64,
    /// ‖∇φ‖_p^p of the laminate field.
    pub gradient_lp_pow: Option<f64>,
    pub tree_depth: Option<usize>,
    /// Volume of the cutoff bands, where det(ξ + ∇φ) is not ±α.
    pub layer_volume: Option<f64>,
    #[serde(skip)]
    pub tree: Option<LaminateTree>,
    #[serde(skip)]
    pub field: Option<LaminateField>,
}

/// Growth certificate on the default mesh.
pub fn growth_certificate(spec: &IntegrandSpec, x: &[f64], xi: &MatrixMN) -> Result<GrowthCertificate> {
    growth_certificate_with(spec, x, xi, DEFAULT_CERTIFICATE_MESH, DEFAULT_MAX_DEPTH)
}

pub fn growth_certificate_with(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    mesh_n: usize,
    max_depth: usize,
) -> Result<GrowthCertificate> {
    if spec.m != spec.n || xi.rows() != spec.m || xi.cols() != spec.n || x.len() != spec.n {
        return Err(Error::InvalidInput("growth certificate needs square data matching the spec".into()));
    }
    let (alpha, beta) = spec
        .chat2_constants()
        .ok_or_else(|| Error::Precondition("spec has no (alpha, beta) upper-bound constants".into()))?;
    let p = spec.p;
    let xi_p = xi.norm_pow(p);
    let det = xi.det()?;
    if det.abs() >= alpha {
        return Ok(GrowthCertificate {
            bound: beta * (1.0 + xi_p),
            branch: CertificateBranch::Direct,
            alpha,
            beta,
            gradient_lp_pow: None,
            tree_depth: None,
            layer_volume: None,
            tree: None,
            field: None,
        });
    }
    let tree = det_target_laminate(xi, -alpha, alpha, max_depth)?;
    let field = laminate_field_build(xi, &tree, mesh_n, 1.0)?;
    let grad_pow = field.field.gradient_lp_norm_pow(&field.mesh, p);
    Ok(GrowthCertificate {
        bound: 2f64.powf(p) * beta * (1.0 + xi_p + grad_pow),
        branch: CertificateBranch::Laminate,
        alpha,
        beta,
        gradient_lp_pow: Some(grad_pow),
        tree_depth: Some(tree.depth()),
        layer_volume: Some(field.layer_volume),
        tree: Some(tree),
        field: Some(field),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{CoefficientField, HProfile};

    fn spec() -> IntegrandSpec {
        IntegrandSpec::h_form(2, 2.0, CoefficientField::constant(1.0), HProfile::standard(1.0, 1.0))
    }

    #[test]
    fn direct_branch() {
        let cert = growth_certificate(&spec(), &[0.0, 0.0], &MatrixMN::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(cert.branch, CertificateBranch::Direct);
        assert_eq!(cert.bound, 11.0);
    }

    #[test]
    fn laminate_branch_is_finite() {
        for xi in [MatrixMN::identity(2), MatrixMN::zeros(2, 2)] {
            let cert = growth_certificate(&spec(), &[0.0, 0.0], &xi).unwrap();
            assert_eq!(cert.branch, CertificateBranch::Laminate);
            assert!(cert.bound.is_finite() && cert.bound > 0.0);
            let lf = cert.field.as_ref().unwrap();
            assert_eq!(lf.mismatched, 0);
            let covered = lf.volume_with_dets(&[-2.0, 2.0], 1e-9);
            assert!(covered + lf.layer_volume >= 1.0 - 1e-9, "{covered} {}", lf.layer_volume);
        }
    }

    #[test]
    fn needs_constants() {
        let s = IntegrandSpec::double_well(2, 2, CoefficientField::constant(1.0));
        let err = growth_certificate(&s, &[0.0, 0.0], &MatrixMN::identity(2));
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
