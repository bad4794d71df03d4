//! The signature-parametrized Hermitian metric family on the universal
//! bundles: path-sum evaluation, the arrow recursion through compact
//! aggregates, positivity domains, and the moduli-space metric tensor from
//! finite differences of the log-det potential.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::chart::Chart;
use crate::mat::{LinAlgError, Mat};
use crate::quiver::{Quiver, QuiverError};
use crate::rep::FramedRep;
use crate::scalar::{rc, Real, ScalarMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("quadratic form at vertex {vertex} is singular or indefinite")]
    SingularForm { vertex: u32 },
    #[error(
        "point is outside the positivity domain (vertex {vertex}, min eigenvalue {min_eig:e})"
    )]
    OutOfDomain { vertex: u32, min_eig: f64 },
    #[error("metric tensor is not positive-definite (min eigenvalue {min_eig:e})")]
    NonPositive { min_eig: f64 },
    #[error("point is not gauge-fixed (basis parts must be the identity)")]
    NotGaugeFixed,
    #[error("signature key {key:?} does not name a nontrivial path of the quiver")]
    InvalidSignatureKey { key: String },
    #[error("a bias coefficient other than 1 needs n >= d at vertex {vertex}")]
    NeedsBasisSplit { vertex: u32 },
    #[error("operation requires a uniform signature (no per-path overrides): {what}")]
    UnsupportedSignature { what: String },
    #[error(transparent)]
    Quiver(#[from] QuiverError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

/// Coefficients of the quadratic form: `eps eps* + alpha b b* +
/// sum_gamma alpha_gamma (w_gamma e)(w_gamma e)*`. Per-path overrides are
/// keyed by the composition-order path key (e.g. "a3.a1").
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSignature<R: Real> {
    pub bias_coeff: R,
    pub path_default: R,
    pub path_overrides: BTreeMap<String, R>,
}

impl<R: Real> MetricSignature<R> {
    pub fn compact() -> Self {
        Self::uniform(R::one())
    }

    pub fn euclidean() -> Self {
        Self::uniform(R::zero())
    }

    pub fn hyperbolic() -> Self {
        Self::uniform(-R::one())
    }

    /// All coefficients equal to `s` (the preset interpolation).
    pub fn uniform(s: R) -> Self {
        MetricSignature {
            bias_coeff: s,
            path_default: s,
            path_overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, key: &str, value: R) -> Self {
        self.path_overrides.insert(key.to_string(), value);
        self
    }

    pub fn is_uniform(&self) -> bool {
        self.path_overrides.is_empty()
    }

    pub fn coeff_for(&self, key: &str) -> R {
        self.path_overrides
            .get(key)
            .copied()
            .unwrap_or(self.path_default)
    }

    /// The leading interpolation coefficient (drives the tensor sign).
    pub fn leading_coeff(&self) -> R {
        if self.path_default != R::zero() {
            self.path_default
        } else {
            self.bias_coeff
        }
    }

    pub fn is_euclidean(&self) -> bool {
        self.is_uniform() && self.bias_coeff == R::zero() && self.path_default == R::zero()
    }

    pub fn validate(&self, quiver: &Quiver) -> Result<(), MetricError> {
        if self.path_overrides.is_empty() {
            return Ok(());
        }
        let mut known = std::collections::BTreeSet::new();
        for v in quiver.vertices() {
            for p in quiver.paths_into(v.id)? {
                if !p.is_trivial() {
                    known.insert(p.key());
                }
            }
        }
        for key in self.path_overrides.keys() {
            if !known.contains(key) {
                return Err(MetricError::InvalidSignatureKey { key: key.clone() });
            }
        }
        Ok(())
    }

    pub fn preset_name(&self) -> Option<&'static str> {
        if !self.is_uniform() || self.bias_coeff != self.path_default {
            return None;
        }
        if self.path_default == R::one() {
            Some("compact")
        } else if self.path_default == R::zero() {
            Some("euclidean")
        } else if self.path_default == -R::one() {
            Some("hyperbolic")
        } else {
            None
        }
    }
}

/// Evaluated metric data at a point: per vertex the un-inverted form S_i, its
/// inverse H_i (the bundle metric), and the compact aggregate
/// P_i = e e* + sum_a w_a P_{t(a)} w_a* used by the recursion and by
/// Gram-Schmidt factorizations.
#[derive(Debug, Clone)]
pub struct MetricState<R: Real> {
    quiver: Arc<Quiver>,
    pub signature: MetricSignature<R>,
    forms: Vec<Mat<R>>,
    inverses: Vec<Mat<R>>,
    compact_aggregates: Vec<Mat<R>>,
}

impl<R: Real> MetricState<R> {
    pub fn h(&self, vertex_id: u32) -> &Mat<R> {
        &self.inverses[self.quiver.vertex_index(vertex_id)]
    }

    pub fn form(&self, vertex_id: u32) -> &Mat<R> {
        &self.forms[self.quiver.vertex_index(vertex_id)]
    }

    pub fn compact_aggregate(&self, vertex_id: u32) -> &Mat<R> {
        &self.compact_aggregates[self.quiver.vertex_index(vertex_id)]
    }

    pub fn forms(&self) -> &[Mat<R>] {
        &self.forms
    }
}

/// Per-vertex smallest eigenvalues of the un-inverted forms, and the verdict.
#[derive(Debug, Clone)]
pub struct DomainReport<R: Real> {
    pub ok: bool,
    /// (vertex id, min eigenvalue of S_i) in vertex declaration order.
    pub min_eigs: Vec<(u32, R)>,
}

/// Horizontal assembly of `w_gamma e^{t(gamma)}` over all paths into `i`, in
/// the deterministic path order (trivial path first, so the first n_i columns
/// are the framing at `i`).
pub fn rho<R: Real>(p: &FramedRep<R>, i: u32) -> Result<Mat<R>, MetricError> {
    let q = p.quiver();
    let paths = q.paths_into(i)?;
    let blocks: Vec<Mat<R>> = paths
        .iter()
        .map(|path| p.path_matrix(path).mul(p.framing(path.source)))
        .collect();
    let refs: Vec<&Mat<R>> = blocks.iter().collect();
    Ok(Mat::hcat(&refs))
}

/// Trivial-path contribution to the quadratic form: `eps eps* + alpha b b*`
/// when the framing splits (n >= d), the full `e e*` otherwise — the latter
/// only for unit bias coefficient, where no split is needed.
fn trivial_form_term<R: Real>(
    p: &FramedRep<R>,
    vertex: u32,
    sig: &MetricSignature<R>,
) -> Result<Mat<R>, MetricError> {
    let v = p.quiver().vertex(vertex)?;
    if v.n >= v.d {
        let eps = p.basis_part(vertex);
        let mut s = eps.mul(&eps.adjoint());
        if v.n > v.d {
            let bias = p.bias_part(vertex);
            s.add_assign(&bias.mul(&bias.adjoint()).scale_re(sig.bias_coeff));
        }
        Ok(s)
    } else if sig.bias_coeff == R::one() {
        let e = p.framing(vertex);
        Ok(e.mul(&e.adjoint()))
    } else {
        Err(MetricError::NeedsBasisSplit { vertex })
    }
}

/// The un-inverted quadratic form at vertex `i` by explicit path sum.
pub fn pathsum_form<R: Real>(
    p: &FramedRep<R>,
    i: u32,
    sig: &MetricSignature<R>,
) -> Result<Mat<R>, MetricError> {
    let q = p.quiver();
    let mut s = trivial_form_term(p, i, sig)?;
    for path in q.paths_into(i)? {
        if path.is_trivial() {
            continue;
        }
        let block = p.path_matrix(path).mul(p.framing(path.source));
        let coeff = sig.coeff_for(&path.key());
        if coeff != R::zero() {
            s.add_assign(&block.mul(&block.adjoint()).scale_re(coeff));
        }
    }
    Ok(s.hermitize())
}

/// Signature-weighted metric at one vertex: the inverse of the assembled
/// quadratic form, symmetrized.
pub fn metric_pathsum<R: Real>(
    p: &FramedRep<R>,
    i: u32,
    sig: &MetricSignature<R>,
) -> Result<Mat<R>, MetricError> {
    sig.validate(p.quiver())?;
    let s = pathsum_form(p, i, sig)?;
    let h = s
        .inverse()
        .map_err(|_| MetricError::SingularForm { vertex: i })?;
    Ok(h.hermitize())
}

/// Compact aggregates `P_i = e_i e_i* + sum_{a: h(a)=i} w_a P_{t(a)} w_a*`
/// for every vertex, in topological order. `P_i` is the full path-sum Gram
/// matrix with unit coefficients, i.e. the inverse of the compact metric.
pub fn compact_aggregates<R: Real>(p: &FramedRep<R>) -> Vec<Mat<R>> {
    let q = p.quiver();
    let mut out: Vec<Option<Mat<R>>> = vec![None; q.vertices().len()];
    for &vid in q.topological_order() {
        let e = p.framing(vid);
        let mut acc = e.mul(&e.adjoint());
        for a in q.arrows_into(vid) {
            let w = p.arrow_mat(a.id);
            let child = out[q.vertex_index(a.src)]
                .as_ref()
                .expect("topological order");
            acc.add_assign(&w.mul(child).mul(&w.adjoint()));
        }
        out[q.vertex_index(vid)] = Some(acc.hermitize());
    }
    out.into_iter().map(|m| m.unwrap()).collect()
}

/// Evaluates the metric family at every vertex via the arrow recursion
/// `S_i = eps eps* + alpha b b* + s * sum_a w_a P_{t(a)} w_a*`, which agrees
/// with the path sum for any uniform signature (the inner aggregates always
/// carry unit coefficients).
pub fn metric_recursive<R: Real>(
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
) -> Result<MetricState<R>, MetricError> {
    if !sig.is_uniform() {
        return Err(MetricError::UnsupportedSignature {
            what: "metric_recursive (per-path overrides do not telescope)".into(),
        });
    }
    let q = p.quiver().clone();
    let aggregates = compact_aggregates(p);
    let mut forms = Vec::with_capacity(q.vertices().len());
    let mut inverses = Vec::with_capacity(q.vertices().len());
    for v in q.vertices() {
        let mut s = trivial_form_term(p, v.id, sig)?;
        if sig.path_default != R::zero() {
            for a in q.arrows_into(v.id) {
                let w = p.arrow_mat(a.id);
                let child = &aggregates[q.vertex_index(a.src)];
                s.add_assign(&w.mul(child).mul(&w.adjoint()).scale_re(sig.path_default));
            }
        }
        let s = s.hermitize();
        let h = s
            .inverse()
            .map_err(|_| MetricError::SingularForm { vertex: v.id })?
            .hermitize();
        forms.push(s);
        inverses.push(h);
    }
    Ok(MetricState {
        quiver: q,
        signature: sig.clone(),
        forms,
        inverses,
        compact_aggregates: aggregates,
    })
}

/// Evaluates the metric state for any signature: recursion when uniform,
/// explicit path sums when per-path overrides are present.
pub fn metric_state<R: Real>(
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
) -> Result<MetricState<R>, MetricError> {
    if sig.is_uniform() {
        return metric_recursive(p, sig);
    }
    sig.validate(p.quiver())?;
    let q = p.quiver().clone();
    let aggregates = compact_aggregates(p);
    let mut forms = Vec::new();
    let mut inverses = Vec::new();
    for v in q.vertices() {
        let s = pathsum_form(p, v.id, sig)?;
        let h = s
            .inverse()
            .map_err(|_| MetricError::SingularForm { vertex: v.id })?
            .hermitize();
        forms.push(s);
        inverses.push(h);
    }
    Ok(MetricState {
        quiver: q,
        signature: sig.clone(),
        forms,
        inverses,
        compact_aggregates: aggregates,
    })
}

/// Positivity test: every un-inverted form positive-definite, with per-vertex
/// smallest eigenvalues as diagnostics.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN eigenvalues count as outside
pub fn in_domain<R: Real>(
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
) -> Result<DomainReport<R>, MetricError> {
    sig.validate(p.quiver())?;
    let q = p.quiver();
    let mut min_eigs = Vec::with_capacity(q.vertices().len());
    let mut ok = true;
    let aggregates = if sig.is_uniform() {
        Some(compact_aggregates(p))
    } else {
        None
    };
    for v in q.vertices() {
        let s = match &aggregates {
            Some(aggr) => {
                let mut s = trivial_form_term(p, v.id, sig)?;
                if sig.path_default != R::zero() {
                    for a in q.arrows_into(v.id) {
                        let w = p.arrow_mat(a.id);
                        s.add_assign(
                            &w.mul(&aggr[q.vertex_index(a.src)])
                                .mul(&w.adjoint())
                                .scale_re(sig.path_default),
                        );
                    }
                }
                s.hermitize()
            }
            None => pathsum_form(p, v.id, sig)?,
        };
        let min_eig = s.min_herm_eigenvalue();
        if !(min_eig > R::zero()) {
            ok = false;
        }
        min_eigs.push((v.id, min_eig));
    }
    Ok(DomainReport { ok, min_eigs })
}

/// Finite-difference configuration for the moduli metric tensor.
#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    /// Central-difference step (1e-4 by default).
    pub step: f64,
    /// One Richardson refinement (step and step/2).
    pub richardson: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-4,
            richardson: false,
        }
    }
}

/// The log-det potential whose complex Hessian is the moduli metric tensor:
/// `c * sum_i log det S_i` with `c` the sign of the leading signature
/// coefficient (+1 compact, -1 hyperbolic); uniform non-preset coefficients
/// use `1/s` so the family interpolates smoothly.
fn tensor_potential<R: Real>(p: &FramedRep<R>, sig: &MetricSignature<R>) -> Result<R, MetricError> {
    let state = metric_recursive(p, sig)?;
    let lead = sig.leading_coeff();
    let mut acc = R::zero();
    for (v, s) in p.quiver().vertices().iter().zip(state.forms()) {
        let ld = s.log_det_hpd().map_err(|_| {
            let min_eig = s.min_herm_eigenvalue();
            MetricError::OutOfDomain {
                vertex: v.id,
                min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
            }
        })?;
        acc += ld;
    }
    Ok(acc / lead)
}

/// Threshold below which the assembled tensor counts as non-positive.
pub const TENSOR_POSITIVITY_TOL: f64 = 1e-10;

/// Coefficient matrix of the Kähler form on the gauge-fixed chart, as a
/// Hermitian matrix over the complex chart coordinates, from central finite
/// differences of the log-det potential. Euclidean signature short-circuits
/// to the identity (constant potential in the chart).
pub fn moduli_metric_tensor<R: Real>(
    p_chart: &FramedRep<R>,
    sig: &MetricSignature<R>,
    fd: &FdConfig,
) -> Result<Mat<R>, MetricError> {
    if !sig.is_uniform() {
        return Err(MetricError::UnsupportedSignature {
            what: "moduli_metric_tensor".into(),
        });
    }
    if !p_chart.is_gauge_fixed(rc::<R>(1e-12)) {
        return Err(MetricError::NotGaugeFixed);
    }
    let chart = Chart::new(p_chart.quiver().clone(), ScalarMode::Complex);
    let m = chart.complex_dim();
    if sig.is_euclidean() {
        return Ok(Mat::eye(m));
    }
    let report = in_domain(p_chart, sig)?;
    if !report.ok {
        let &(vertex, min_eig) = report
            .min_eigs
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        return Err(MetricError::OutOfDomain {
            vertex,
            min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
        });
    }

    let base = {
        // promote to the complex chart regardless of the point's mode

        chart.pack(p_chart)
    };
    let hessian = |h: R| -> Result<Vec<Vec<R>>, MetricError> {
        let n = base.len();
        let phi = |coords: &[R]| -> Result<R, MetricError> {
            let rep = chart.unpack(coords, ScalarMode::Complex);
            tensor_potential(&rep, sig)
        };
        let mut hr = vec![vec![R::zero(); n]; n];
        let denom = rc::<R>(4.0) * h * h;
        for i in 0..n {
            for j in i..n {
                let mut x = base.clone();
                x[i] += h;
                x[j] += h;
                let pp = phi(&x)?;
                x[j] -= h + h;
                let pm = phi(&x)?;
                x[i] -= h + h;
                let mm = phi(&x)?;
                x[j] += h + h;
                let mp = phi(&x)?;
                let v = (pp - pm - mp + mm) / denom;
                hr[i][j] = v;
                hr[j][i] = v;
            }
        }
        Ok(hr)
    };
    let step = rc::<R>(fd.step);
    let hr = if fd.richardson {
        let coarse = hessian(step)?;
        let fine = hessian(step * rc::<R>(0.5))?;
        let third = rc::<R>(1.0 / 3.0);
        coarse
            .iter()
            .zip(&fine)
            .map(|(cr, fr)| {
                cr.iter()
                    .zip(fr)
                    .map(|(&c, &f)| (rc::<R>(4.0) * f - c) * third)
                    .collect()
            })
            .collect()
    } else {
        hessian(step)?
    };

    // g_{mu nu-bar} = 1/4 [(H_xx + H_yy) + i (H_xy - H_yx)], interleaved layout
    let quarter = rc::<R>(0.25);
    let g = Mat::from_fn(m, m, |mu, nu| {
        let (x_mu, y_mu) = (2 * mu, 2 * mu + 1);
        let (x_nu, y_nu) = (2 * nu, 2 * nu + 1);
        let re = (hr[x_mu][x_nu] + hr[y_mu][y_nu]) * quarter;
        let im = (hr[x_mu][y_nu] - hr[y_mu][x_nu]) * quarter;
        num_complex::Complex::new(re, im)
    })
    .hermitize();
    let min_eig = g.min_herm_eigenvalue();
    if min_eig <= rc::<R>(TENSOR_POSITIVITY_TOL) {
        return Err(MetricError::NonPositive {
            min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(g)
}
