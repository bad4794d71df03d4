//! Points of the framed representation space, the gauge action, stability
//! testing, and gauge fixing to the chart where every basis part is the
//! identity.
//!
//! Values are immutable after construction and all operations are pure, so
//! everything here can be shared freely across threads; randomness always
//! enters through an explicit seed.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::mat::Mat;
use crate::metric::{self, MetricSignature};
use crate::quiver::{Quiver, QuiverError};
use crate::scalar::{rc, Real, ScalarMode, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepError {
    #[error("shape mismatch at {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("real mode requires exactly zero imaginary parts (max |Im| = {max_imag:e})")]
    NonRealEntries { max_imag: f64 },
    #[error("gauge element at vertex {vertex} is numerically singular (rcond {rcond:e})")]
    SingularGauge { vertex: u32, rcond: f64 },
    #[error("basis part at vertex {vertex} is singular; point lies outside the affine chart")]
    SingularBasisPart { vertex: u32 },
    #[error("failed to sample a point in the requested domain after {tries} attempts")]
    DomainSamplingFailed { tries: usize },
    #[error(transparent)]
    Quiver(#[from] QuiverError),
}

/// Sampling target for `random_rep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDomain {
    /// Stable points (framing generates everything).
    Stable,
    /// Gauge-fixed chart with invertible basis parts.
    Euclidean,
    /// Gauge-fixed chart inside the hyperbolic positivity locus.
    Hyperbolic,
}

/// A point of the framed representation space: one matrix per arrow and one
/// framing map per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FramedRep<R: Real> {
    quiver: Arc<Quiver>,
    /// w_a, indexed like `quiver.arrows()`; shape d_{h(a)} x d_{t(a)}.
    arrows: Vec<Mat<R>>,
    /// e^{(i)}, indexed like `quiver.vertices()`; shape d_i x n_i.
    framings: Vec<Mat<R>>,
    mode: ScalarMode,
}

impl<R: Real> FramedRep<R> {
    pub fn new(
        quiver: Arc<Quiver>,
        arrows: Vec<Mat<R>>,
        framings: Vec<Mat<R>>,
        mode: ScalarMode,
    ) -> Result<Self, RepError> {
        assert_eq!(arrows.len(), quiver.arrows().len());
        assert_eq!(framings.len(), quiver.vertices().len());
        for (a, w) in quiver.arrows().iter().zip(&arrows) {
            let expected = (quiver.vertex(a.dst)?.d, quiver.vertex(a.src)?.d);
            if (w.rows(), w.cols()) != expected {
                return Err(RepError::ShapeMismatch {
                    what: format!("arrow a{}", a.id),
                    expected,
                    got: (w.rows(), w.cols()),
                });
            }
        }
        for (v, e) in quiver.vertices().iter().zip(&framings) {
            let expected = (v.d, v.n);
            if (e.rows(), e.cols()) != expected {
                return Err(RepError::ShapeMismatch {
                    what: format!("framing e({})", v.id),
                    expected,
                    got: (e.rows(), e.cols()),
                });
            }
        }
        let rep = FramedRep {
            quiver,
            arrows,
            framings,
            mode,
        };
        rep.assert_mode()?;
        Ok(rep)
    }

    /// The all-zero arrows, identity-basis, zero-bias anchor point.
    pub fn anchor(quiver: Arc<Quiver>, mode: ScalarMode) -> Self {
        let arrows = quiver
            .arrows()
            .iter()
            .map(|a| {
                Mat::zeros(
                    quiver.vertex(a.dst).unwrap().d,
                    quiver.vertex(a.src).unwrap().d,
                )
            })
            .collect();
        let framings = quiver
            .vertices()
            .iter()
            .map(|v| {
                let mut e = Mat::zeros(v.d, v.n);
                for i in 0..v.d.min(v.n) {
                    e[(i, i)] = Complex::new(R::one(), R::zero());
                }
                e
            })
            .collect();
        FramedRep {
            quiver,
            arrows,
            framings,
            mode,
        }
    }

    fn assert_mode(&self) -> Result<(), RepError> {
        if self.mode.is_real() {
            let worst = self
                .arrows
                .iter()
                .chain(&self.framings)
                .map(|m| m.max_imag())
                .fold(R::zero(), R::max);
            if worst > R::zero() {
                return Err(RepError::NonRealEntries {
                    max_imag: worst.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    pub fn quiver(&self) -> &Arc<Quiver> {
        &self.quiver
    }

    pub fn mode(&self) -> ScalarMode {
        self.mode
    }

    pub fn arrow_mat(&self, arrow_id: u32) -> &Mat<R> {
        &self.arrows[self.quiver.arrow_index(arrow_id)]
    }

    pub fn framing(&self, vertex_id: u32) -> &Mat<R> {
        &self.framings[self.quiver.vertex_index(vertex_id)]
    }

    pub fn arrows(&self) -> &[Mat<R>] {
        &self.arrows
    }

    pub fn framings(&self) -> &[Mat<R>] {
        &self.framings
    }

    pub fn with_parts(&self, arrows: Vec<Mat<R>>, framings: Vec<Mat<R>>) -> Self {
        FramedRep {
            quiver: self.quiver.clone(),
            arrows,
            framings,
            mode: self.mode,
        }
    }

    /// Basis part: the first d_i columns of the framing at vertex `i`.
    pub fn basis_part(&self, i: u32) -> Mat<R> {
        let d = self.quiver.vertex(i).unwrap().d;
        self.framing(i).col_block(0, d)
    }

    /// Bias part: the remaining n_i - d_i columns of the framing at `i`.
    pub fn bias_part(&self, i: u32) -> Mat<R> {
        let v = self.quiver.vertex(i).unwrap();
        self.framing(i).col_block(v.d, v.n)
    }

    /// Product of arrow matrices along a path (identity for the trivial path).
    pub fn path_matrix(&self, path: &crate::quiver::Path) -> Mat<R> {
        let d_src = self.quiver.vertex(path.source).unwrap().d;
        let mut m = Mat::eye(d_src);
        for &aid in &path.arrows {
            m = self.arrow_mat(aid).mul(&m);
        }
        m
    }

    /// Whether every basis part equals the identity exactly (up to `tol`).
    pub fn is_gauge_fixed(&self, tol: R) -> bool {
        self.quiver.vertices().iter().all(|v| {
            let eps = self.basis_part(v.id);
            eps.max_abs_diff(&Mat::eye(v.d)) <= tol
        })
    }

    pub fn max_abs_diff(&self, other: &FramedRep<R>) -> R {
        let a = self
            .arrows
            .iter()
            .zip(&other.arrows)
            .map(|(x, y)| x.max_abs_diff(y))
            .fold(R::zero(), R::max);
        let e = self
            .framings
            .iter()
            .zip(&other.framings)
            .map(|(x, y)| x.max_abs_diff(y))
            .fold(R::zero(), R::max);
        a.max(e)
    }

    /// Largest imaginary part over all matrices (real-locus diagnostics).
    pub fn max_imag(&self) -> R {
        self.arrows
            .iter()
            .chain(&self.framings)
            .map(|m| m.max_imag())
            .fold(R::zero(), R::max)
    }
}

/// A gauge transformation: one invertible matrix per vertex.
#[derive(Debug, Clone)]
pub struct GaugeElement<R: Real> {
    quiver: Arc<Quiver>,
    /// g_i, indexed like `quiver.vertices()`.
    pub blocks: Vec<Mat<R>>,
}

/// Reciprocal condition number below which a gauge block counts as singular.
pub const GAUGE_RCOND_TOL: f64 = 1e-12;

impl<R: Real> GaugeElement<R> {
    pub fn new(quiver: Arc<Quiver>, blocks: Vec<Mat<R>>) -> Self {
        assert_eq!(blocks.len(), quiver.vertices().len());
        GaugeElement { quiver, blocks }
    }

    pub fn identity(quiver: Arc<Quiver>) -> Self {
        let blocks = quiver.vertices().iter().map(|v| Mat::eye(v.d)).collect();
        GaugeElement { quiver, blocks }
    }

    pub fn block(&self, vertex_id: u32) -> &Mat<R> {
        &self.blocks[self.quiver.vertex_index(vertex_id)]
    }

    /// Group product `self * other` (blockwise matrix product).
    pub fn compose(&self, other: &GaugeElement<R>) -> GaugeElement<R> {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.mul(b))
            .collect();
        GaugeElement {
            quiver: self.quiver.clone(),
            blocks,
        }
    }

    fn check_invertible(&self) -> Result<Vec<Mat<R>>, RepError> {
        let tol = rc::<R>(GAUGE_RCOND_TOL);
        self.quiver
            .vertices()
            .iter()
            .zip(&self.blocks)
            .map(|(v, g)| {
                let rcond = g.rcond();
                if rcond < tol {
                    Err(RepError::SingularGauge {
                        vertex: v.id,
                        rcond: rcond.to_f64().unwrap_or(0.0),
                    })
                } else {
                    Ok(g.inverse().expect("rcond-checked block invertible"))
                }
            })
            .collect()
    }
}

/// Gauge action: `w_a -> g_{h(a)} w_a g_{t(a)}^{-1}`, `e^{(i)} -> g_i e^{(i)}`.
pub fn act<R: Real>(g: &GaugeElement<R>, p: &FramedRep<R>) -> Result<FramedRep<R>, RepError> {
    let inv = g.check_invertible()?;
    let q = p.quiver();
    let arrows = q
        .arrows()
        .iter()
        .zip(p.arrows())
        .map(|(a, w)| {
            let gh = g.block(a.dst);
            let gt_inv = &inv[q.vertex_index(a.src)];
            gh.mul(w).mul(gt_inv)
        })
        .collect();
    let framings = q
        .vertices()
        .iter()
        .zip(p.framings())
        .map(|(v, e)| g.block(v.id).mul(e))
        .collect();
    // The action can leave the real locus only if g does, so inherit the
    // stricter mode when g has imaginary parts.
    let mode = if p.mode().is_real() && g.blocks.iter().any(|b| b.max_imag() > R::zero()) {
        ScalarMode::Complex
    } else {
        p.mode()
    };
    FramedRep::new(q.clone(), arrows, framings, mode)
}

/// Relative singular-value threshold for subspace ranks in the stability test.
pub const STABILITY_RANK_TOL: f64 = 1e-10;

/// Nakajima stability: no proper subrepresentation contains the framing image.
///
/// Computes the smallest subrepresentation containing Im e by a fixpoint
/// iteration growing per-vertex column spans along arrows, and checks that it
/// is everything.
pub fn is_stable<R: Real>(p: &FramedRep<R>) -> bool {
    let q = p.quiver();
    let tol = rc::<R>(STABILITY_RANK_TOL);
    // Span generators per vertex; start with the framing columns.
    let mut gens: Vec<Mat<R>> = q
        .vertices()
        .iter()
        .map(|v| p.framing(v.id).clone())
        .collect();
    let mut ranks: Vec<usize> = gens.iter().map(|g| g.rank(tol)).collect();
    loop {
        let mut grew = false;
        for a in q.arrows() {
            let src = q.vertex_index(a.src);
            let dst = q.vertex_index(a.dst);
            let pushed = p.arrow_mat(a.id).mul(&gens[src]);
            let cand = Mat::hcat(&[&gens[dst], &pushed]);
            let r = cand.rank(tol);
            if r > ranks[dst] {
                gens[dst] = cand;
                ranks[dst] = r;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    q.vertices()
        .iter()
        .enumerate()
        .all(|(i, v)| ranks[i] == v.d)
}

/// Moves a point with invertible basis parts to the chart where every basis
/// part is the identity: `e -> eps^{-1} e`, `w_a -> eps_{h(a)}^{-1} w_a eps_{t(a)}`.
pub fn gauge_fix<R: Real>(p: &FramedRep<R>) -> Result<FramedRep<R>, RepError> {
    let q = p.quiver();
    let tol = rc::<R>(GAUGE_RCOND_TOL);
    let mut inv_blocks = Vec::with_capacity(q.vertices().len());
    for v in q.vertices() {
        if v.n < v.d {
            // no square basis block exists, so no affine-chart representative
            return Err(RepError::SingularBasisPart { vertex: v.id });
        }
        let eps = p.basis_part(v.id);
        if eps.rcond() < tol {
            return Err(RepError::SingularBasisPart { vertex: v.id });
        }
        inv_blocks.push(eps.inverse().expect("rcond-checked basis invertible"));
    }
    let arrows = q
        .arrows()
        .iter()
        .zip(p.arrows())
        .map(|(a, w)| {
            let ih = &inv_blocks[q.vertex_index(a.dst)];
            let eps_t = p.basis_part(a.src);
            ih.mul(w).mul(&eps_t)
        })
        .collect();
    let framings = q
        .vertices()
        .iter()
        .map(|v| {
            let i = q.vertex_index(v.id);
            let bias = inv_blocks[i].mul(&p.bias_part(v.id));
            let mut e = Mat::zeros(v.d, v.n);
            // exact identity basis block, bias transformed
            for k in 0..v.d {
                e[(k, k)] = Complex::new(R::one(), R::zero());
            }
            e.set_col_block(v.d, &bias);
            e
        })
        .collect();
    FramedRep::new(q.clone(), arrows, framings, p.mode())
}

fn sample_entry<R: Real>(rng: &mut ChaCha8Rng, scale: R, mode: ScalarMode) -> C<R> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    match mode {
        ScalarMode::Real => Complex::new(rc::<R>(re) * scale, R::zero()),
        ScalarMode::Complex => Complex::new(rc::<R>(re) * scale, rc::<R>(im) * scale),
    }
}

fn sample_mat<R: Real>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    scale: R,
    mode: ScalarMode,
) -> Mat<R> {
    Mat::from_fn(rows, cols, |_, _| sample_entry(rng, scale, mode))
}

/// Deterministic sampling of a point in the requested domain, anchored at the
/// identity-basis, small-entries chart point.
pub fn random_rep<R: Real>(
    quiver: &Arc<Quiver>,
    seed: u64,
    domain: SampleDomain,
    mode: ScalarMode,
) -> Result<FramedRep<R>, RepError> {
    for v in quiver.vertices() {
        let enough = match domain {
            SampleDomain::Stable => quiver.n_total_at(v.id)? >= v.d,
            _ => v.n >= v.d,
        };
        if !enough {
            return Err(RepError::DomainSamplingFailed { tries: 0 });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_tries = 60;
    let mut scale = rc::<R>(0.5);
    for tries in 1..=max_tries {
        let arrows: Vec<Mat<R>> = quiver
            .arrows()
            .iter()
            .map(|a| {
                sample_mat(
                    &mut rng,
                    quiver.vertex(a.dst).unwrap().d,
                    quiver.vertex(a.src).unwrap().d,
                    scale,
                    mode,
                )
            })
            .collect();
        let framings: Vec<Mat<R>> = quiver
            .vertices()
            .iter()
            .map(|v| {
                let mut e = Mat::zeros(v.d, v.n);
                for k in 0..v.d.min(v.n) {
                    e[(k, k)] = Complex::new(R::one(), R::zero());
                }
                if v.n > v.d {
                    e.set_col_block(v.d, &sample_mat(&mut rng, v.d, v.n - v.d, scale, mode));
                }
                e
            })
            .collect();
        let p = FramedRep::new(quiver.clone(), arrows, framings, mode)?;
        let ok = match domain {
            SampleDomain::Stable => is_stable(&p),
            SampleDomain::Euclidean => true, // identity basis part is invertible
            SampleDomain::Hyperbolic => {
                metric::in_domain(&p, &MetricSignature::hyperbolic()).is_ok_and(|r| r.ok)
            }
        };
        if ok {
            return Ok(p);
        }
        scale *= rc::<R>(0.5);
        let _ = tries;
    }
    Err(RepError::DomainSamplingFailed { tries: max_tries })
}

/// Differential of the gauge action at a point, as a complex matrix from the
/// Lie algebra (one gl(d_i) block per vertex, basis E_kl) to the tangent
/// space of the representation space (stacked arrow and framing entries):
/// `xi -> (xi_{h(a)} w_a - w_a xi_{t(a)}, xi_i e^{(i)})`.
///
/// Full column rank (all singular values bounded away from zero) certifies
/// that the action is free at the point.
pub fn action_differential<R: Real>(p: &FramedRep<R>) -> Mat<R> {
    let q = p.quiver();
    let cols: usize = q.vertices().iter().map(|v| v.d * v.d).sum();
    let rows: usize = q
        .arrows()
        .iter()
        .map(|a| q.vertex(a.dst).unwrap().d * q.vertex(a.src).unwrap().d)
        .sum::<usize>()
        + q.vertices().iter().map(|v| v.d * v.n).sum::<usize>();
    let mut out = Mat::zeros(rows, cols);
    let mut col = 0usize;
    for v in q.vertices() {
        for k in 0..v.d {
            for l in 0..v.d {
                // xi = E_kl at vertex v, zero elsewhere
                let mut row = 0usize;
                for a in q.arrows() {
                    let w = p.arrow_mat(a.id);
                    let (dh, dt) = (w.rows(), w.cols());
                    if a.dst == v.id {
                        // (E_kl w)_{ij} = delta_{ik} w_{lj}
                        for j in 0..dt {
                            out[(row + k * dt + j, col)] = w[(l, j)];
                        }
                    }
                    if a.src == v.id {
                        // -(w E_kl)_{ij} = -w_{ik} delta_{lj}
                        for i in 0..dh {
                            let cur = out[(row + i * dt + l, col)];
                            out[(row + i * dt + l, col)] = cur - w[(i, k)];
                        }
                    }
                    row += dh * dt;
                }
                for vv in q.vertices() {
                    let e = p.framing(vv.id);
                    if vv.id == v.id {
                        for j in 0..vv.n {
                            out[(row + k * vv.n + j, col)] = e[(l, j)];
                        }
                    }
                    row += vv.d * vv.n;
                }
                col += 1;
            }
        }
    }
    out
}

/// Deterministic well-conditioned random gauge element (test plumbing).
pub fn random_gauge<R: Real>(quiver: &Arc<Quiver>, seed: u64, mode: ScalarMode) -> GaugeElement<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = quiver
        .vertices()
        .iter()
        .map(|v| {
            loop {
                // identity plus a moderate perturbation; reject if too skewed
                let pert = sample_mat(&mut rng, v.d, v.d, rc::<R>(0.4), mode);
                let g = Mat::eye(v.d).add(&pert);
                if g.rcond() > rc::<R>(1e-2) {
                    return g;
                }
            }
        })
        .collect();
    GaugeElement::new(quiver.clone(), blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::{a1_quiver, a2_quiver, diamond_quiver};

    fn arc(q: Quiver) -> Arc<Quiver> {
        Arc::new(q)
    }

    #[test]
    fn identity_action_is_identity() {
        let q = arc(diamond_quiver([2; 4], [1; 4]));
        let p = random_rep::<f64>(&q, 3, SampleDomain::Stable, ScalarMode::Complex).unwrap();
        let id = GaugeElement::identity(q.clone());
        let p2 = act(&id, &p).unwrap();
        assert!(p.max_abs_diff(&p2) == 0.0);
    }

    #[test]
    fn scalar_gauge_on_a1_preserves_quadratic_form() {
        // d=1: g = lambda scales e; the induced quadratic-form value x* H x is
        // unchanged when x transforms alongside.
        let q = arc(a1_quiver(2, 1));
        let p = random_rep::<f64>(&q, 5, SampleDomain::Euclidean, ScalarMode::Complex).unwrap();
        let lambda = Complex::new(1.7, -0.4);
        let g = GaugeElement::new(q.clone(), vec![Mat::from_fn(1, 1, |_, _| lambda)]);
        let gp = act(&g, &p).unwrap();

        let e = p.framing(1);
        let h = e.mul(&e.adjoint()).inverse().unwrap();
        let e2 = gp.framing(1);
        let h2 = e2.mul(&e2.adjoint()).inverse().unwrap();
        // x = 1, g x = lambda
        let lhs = h[(0, 0)];
        let rhs = lambda.conj() * h2[(0, 0)] * lambda;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn group_action_composition() {
        let q = arc(a2_quiver((2, 2), (1, 1)));
        let p = random_rep::<f64>(&q, 7, SampleDomain::Stable, ScalarMode::Complex).unwrap();
        let g = random_gauge::<f64>(&q, 11, ScalarMode::Complex);
        let h = random_gauge::<f64>(&q, 13, ScalarMode::Complex);
        let lhs = act(&g.compose(&h), &p).unwrap();
        let rhs = act(&g, &act(&h, &p).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn singular_gauge_rejected() {
        let q = arc(a1_quiver(2, 1));
        let p = FramedRep::<f64>::anchor(q.clone(), ScalarMode::Complex);
        let g = GaugeElement::new(q, vec![Mat::zeros(1, 1)]);
        assert!(matches!(
            act(&g, &p),
            Err(RepError::SingularGauge { vertex: 1, .. })
        ));
    }

    #[test]
    fn stability_zero_framing() {
        let q = arc(a1_quiver(1, 1));
        let p = FramedRep::<f64>::new(
            q.clone(),
            vec![],
            vec![Mat::zeros(1, 1)],
            ScalarMode::Complex,
        )
        .unwrap();
        assert!(!is_stable(&p));
        let p1 = FramedRep::<f64>::new(
            q,
            vec![],
            vec![Mat::from_real_rows(&[&[1.0]])],
            ScalarMode::Complex,
        )
        .unwrap();
        assert!(is_stable(&p1));
    }

    #[test]
    fn stability_a2_needs_propagation() {
        // e1 = 1, e2 = 0, w = 0: the subrepresentation (C, 0) is proper and
        // contains Im e; enumerating the four candidate subrepresentation
        // shapes confirms instability.
        let q = arc(a2_quiver((1, 1), (1, 1)));
        let p = FramedRep::<f64>::new(
            q.clone(),
            vec![Mat::zeros(1, 1)],
            vec![Mat::from_real_rows(&[&[1.0]]), Mat::zeros(1, 1)],
            ScalarMode::Complex,
        )
        .unwrap();
        assert!(!is_stable(&p));
        // with w = 1 the image propagates and the point becomes stable
        let p2 = FramedRep::<f64>::new(
            q,
            vec![Mat::from_real_rows(&[&[1.0]])],
            vec![Mat::from_real_rows(&[&[1.0]]), Mat::zeros(1, 1)],
            ScalarMode::Complex,
        )
        .unwrap();
        assert!(is_stable(&p2));
    }

    #[test]
    fn gauge_fix_scalar_division() {
        let q = arc(a1_quiver(2, 1));
        let e = Mat::<f64>::from_real_rows(&[&[2.0, 1.0]]);
        let p = FramedRep::new(q, vec![], vec![e], ScalarMode::Complex).unwrap();
        let fixed = gauge_fix(&p).unwrap();
        let ef = fixed.framing(1);
        assert!((ef[(0, 0)] - Complex::new(1.0, 0.0)).norm() == 0.0);
        assert!((ef[(0, 1)] - Complex::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn gauge_fix_identity_is_noop_and_idempotent() {
        let q = arc(a2_quiver((2, 2), (1, 1)));
        let p = random_rep::<f64>(&q, 19, SampleDomain::Euclidean, ScalarMode::Complex).unwrap();
        let fixed = gauge_fix(&p).unwrap();
        assert!(p.max_abs_diff(&fixed) < 1e-15);
        let twice = gauge_fix(&fixed).unwrap();
        assert!(fixed.max_abs_diff(&twice) < 1e-15);
    }

    #[test]
    fn gauge_fix_matches_act() {
        let q = arc(diamond_quiver([2; 4], [1; 4]));
        let p0 = random_rep::<f64>(&q, 23, SampleDomain::Stable, ScalarMode::Complex).unwrap();
        let g = random_gauge::<f64>(&q, 29, ScalarMode::Complex);
        let p = act(&g, &p0).unwrap();
        let fixed = gauge_fix(&p).unwrap();
        // oracle: act with g_i = eps_i^{-1}
        let inv_blocks: Vec<Mat<f64>> = q
            .vertices()
            .iter()
            .map(|v| p.basis_part(v.id).inverse().unwrap())
            .collect();
        let oracle = act(&GaugeElement::new(q.clone(), inv_blocks), &p).unwrap();
        assert!(fixed.max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn random_rep_deterministic() {
        let q = arc(diamond_quiver([2; 4], [1; 4]));
        let a = random_rep::<f64>(&q, 42, SampleDomain::Hyperbolic, ScalarMode::Complex).unwrap();
        let b = random_rep::<f64>(&q, 42, SampleDomain::Hyperbolic, ScalarMode::Complex).unwrap();
        assert!(a.max_abs_diff(&b) == 0.0);
    }

    #[test]
    fn random_rep_real_mode_is_real() {
        let q = arc(a2_quiver((2, 2), (1, 1)));
        let p = random_rep::<f64>(&q, 1, SampleDomain::Hyperbolic, ScalarMode::Real).unwrap();
        assert_eq!(p.max_imag(), 0.0);
    }

    #[test]
    fn action_differential_rank_tracks_stability() {
        let q = arc(a2_quiver((2, 2), (1, 1)));
        let stable = random_rep::<f64>(&q, 3, SampleDomain::Stable, ScalarMode::Complex).unwrap();
        let d = action_differential(&stable);
        assert_eq!(d.cols(), q.gauge_dimension());
        let svs = d.singular_values();
        assert!(svs.last().unwrap() > &1e-8, "free action at a stable point");
        // zero framing and arrows: the action is nowhere free
        let degenerate = FramedRep::<f64>::new(
            q.clone(),
            vec![Mat::zeros(1, 1)],
            vec![Mat::zeros(1, 2), Mat::zeros(1, 2)],
            ScalarMode::Complex,
        )
        .unwrap();
        let svs0 = action_differential(&degenerate).singular_values();
        assert!(svs0.last().unwrap() < &1e-12);
    }

    #[test]
    fn stable_samples_are_stable() {
        let q = arc(a2_quiver((2, 2), (1, 1)));
        for seed in 0..100 {
            let p = random_rep::<f64>(&q, seed, SampleDomain::Stable, ScalarMode::Complex).unwrap();
            assert!(is_stable(&p), "seed {seed}");
        }
    }
}
