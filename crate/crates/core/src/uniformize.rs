//! The non-compact dual structure: Gram-Schmidt factorization of the compact
//! metrics, the coordinate map onto products of space-like Grassmannians, its
//! inverse, and the symplectic-pullback check for the hyperbolic activation.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::machine::ActivationKind;
use crate::mat::{LinAlgError, Mat};
use crate::metric::{compact_aggregates, in_domain, MetricError, MetricSignature};
use crate::quiver::Quiver;
use crate::rep::{FramedRep, RepError};
use crate::scalar::{rc, Real, ScalarMode, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UniformizeError {
    #[error("matrix is not positive-definite")]
    NotPositiveDefinite,
    #[error("point is outside the hyperbolic domain (vertex {vertex})")]
    OutOfDomain { vertex: u32 },
    #[error("point is not gauge-fixed")]
    NotGaugeFixed,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rep(#[from] RepError),
}

/// Lower-triangular `g` with positive real diagonal and `g g* = hinv`.
///
/// The canonical Gram-Schmidt representative among the unitary ambiguity.
pub fn gram_factor<R: Real>(hinv: &Mat<R>) -> Result<Mat<R>, UniformizeError> {
    hinv.cholesky().map_err(|e| match e {
        LinAlgError::NotPositiveDefinite { .. } => UniformizeError::NotPositiveDefinite,
        LinAlgError::Singular { .. } => UniformizeError::NotPositiveDefinite,
    })
}

/// Per-vertex space-like Grassmannian coordinates: `W_i = (b_i | w_a g_{t(a)})`
/// over the arrows into `i`, with `Id - W_i W_i*` positive-definite.
#[derive(Debug, Clone)]
pub struct GrassmannCoords<R: Real> {
    pub quiver: Arc<Quiver>,
    /// Indexed like `quiver.vertices()`; shape d_i x (m_i - d_i).
    pub blocks: Vec<Mat<R>>,
}

impl<R: Real> GrassmannCoords<R> {
    pub fn block(&self, vertex_id: u32) -> &Mat<R> {
        &self.blocks[self.quiver.vertex_index(vertex_id)]
    }

    pub fn max_abs_diff(&self, other: &GrassmannCoords<R>) -> R {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(R::zero(), R::max)
    }
}

/// Coordinates of a gauge-fixed hyperbolic-domain point on the product of
/// space-like Grassmannians: per vertex, bias block then `w_a g_{t(a)}` per
/// incoming arrow (ascending arrow id), with `g` the Gram factor of the
/// compact aggregate at the tail.
pub fn grassmann_map<R: Real>(p: &FramedRep<R>) -> Result<GrassmannCoords<R>, UniformizeError> {
    if !p.is_gauge_fixed(rc::<R>(1e-12)) {
        return Err(UniformizeError::NotGaugeFixed);
    }
    let q = p.quiver().clone();
    let aggregates = compact_aggregates(p);
    let mut blocks = Vec::with_capacity(q.vertices().len());
    for v in q.vertices() {
        let mut parts: Vec<Mat<R>> = Vec::new();
        let bias = p.bias_part(v.id);
        if bias.cols() > 0 {
            parts.push(bias);
        }
        for a in q.arrows_into(v.id) {
            let g = gram_factor(&aggregates[q.vertex_index(a.src)])?;
            parts.push(p.arrow_mat(a.id).mul(&g));
        }
        let w = if parts.is_empty() {
            Mat::zeros(v.d, 0)
        } else {
            let refs: Vec<&Mat<R>> = parts.iter().collect();
            Mat::hcat(&refs)
        };
        // membership in Gr^-: Id - W W* positive-definite
        let gram = Mat::eye(v.d).sub(&w.mul(&w.adjoint()));
        if gram.cholesky().is_err() {
            return Err(UniformizeError::OutOfDomain { vertex: v.id });
        }
        blocks.push(w);
    }
    Ok(GrassmannCoords { quiver: q, blocks })
}

/// Inverse of `grassmann_map`: recovers bias blocks and arrow matrices by
/// topological induction, solving back through the triangular Gram factors.
pub fn grassmann_inverse<R: Real>(
    coords: &GrassmannCoords<R>,
    mode: ScalarMode,
) -> Result<FramedRep<R>, UniformizeError> {
    let q = coords.quiver.clone();
    let mut rep = FramedRep::anchor(q.clone(), mode);
    for &vid in q.topological_order() {
        let v = q.vertex(vid).unwrap();
        let w_block = coords.block(vid);
        let expect_cols = (v.n - v.d)
            + q.arrows_into(vid)
                .iter()
                .map(|a| q.vertex(a.src).unwrap().d)
                .sum::<usize>();
        assert_eq!(
            w_block.cols(),
            expect_cols,
            "coordinate block shape at vertex {vid}"
        );
        let gram = Mat::eye(v.d).sub(&w_block.mul(&w_block.adjoint()));
        if gram.cholesky().is_err() {
            return Err(UniformizeError::OutOfDomain { vertex: vid });
        }
        // bias columns first
        let bias = w_block.col_block(0, v.n - v.d);
        let mut framing = Mat::zeros(v.d, v.n);
        for i in 0..v.d {
            framing[(i, i)] = Complex::new(R::one(), R::zero());
        }
        framing.set_col_block(v.d, &bias);
        let mut arrows = rep.arrows().to_vec();
        let mut framings = rep.framings().to_vec();
        framings[q.vertex_index(vid)] = framing;
        // arrows recovered by one triangular solve each: X = w_a g  =>  w_a = X g^{-1}
        let mut col = v.n - v.d;
        // aggregates of the partially rebuilt representation are valid at
        // already-processed vertices (topological order)
        let aggregates = compact_aggregates(&rep.with_parts(arrows.clone(), framings.clone()));
        for a in q.arrows_into(vid) {
            let dt = q.vertex(a.src).unwrap().d;
            let x = w_block.col_block(col, col + dt);
            col += dt;
            let g = gram_factor(&aggregates[q.vertex_index(a.src)])?;
            arrows[q.arrow_index(a.id)] = Mat::solve_right_lower(&x, &g);
        }
        rep = rep.with_parts(arrows, framings);
    }
    // the rebuilt point must land back in the hyperbolic domain
    let report = in_domain(&rep, &MetricSignature::hyperbolic())?;
    if !report.ok {
        let vertex = report
            .min_eigs
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|&(v, _)| v)
            .unwrap_or(0);
        return Err(UniformizeError::OutOfDomain { vertex });
    }
    Ok(rep)
}

/// Measures how far the hyperbolic activation is from pulling the hyperbolic
/// Kähler form back to the standard form: evaluates both 2-forms as real
/// antisymmetric matrices at a random point and returns the max deviation.
///
/// The metric side is finite differences of the ball potential
/// `-log(1 - |w|^2)`; the map side is the analytic Jacobian of
/// `z -> z / sqrt(1 + |z|^2)`.
pub fn hyperbolic_sigma_check<R: Real>(n: usize, seed: u64) -> R {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<C<R>> = (0..n)
        .map(|_| {
            Complex::new(
                rc::<R>(rng.sample::<f64, _>(StandardNormal) * 0.6),
                rc::<R>(rng.sample::<f64, _>(StandardNormal) * 0.6),
            )
        })
        .collect();
    hyperbolic_sigma_deviation_at(&z)
}

/// Same check at a chosen point.
pub fn hyperbolic_sigma_deviation_at<R: Real>(z: &[C<R>]) -> R {
    let n = z.len();
    let w = ActivationKind::HyperbolicSigma.value(z);

    // Hermitian metric of the ball potential at w, via central differences.
    let h = rc::<R>(1e-4);
    let potential = |pt: &[C<R>]| -> R {
        let norm2 = pt
            .iter()
            .map(|v| v.norm_sqr())
            .fold(R::zero(), |a, b| a + b);
        -(R::one() - norm2).ln()
    };
    let shift = |pt: &[C<R>], idx: usize, delta: R| -> Vec<C<R>> {
        let mut out = pt.to_vec();
        let mu = idx / 2;
        if idx.is_multiple_of(2) {
            out[mu].re += delta;
        } else {
            out[mu].im += delta;
        }
        out
    };
    let dim = 2 * n;
    let mut hessian = vec![vec![R::zero(); dim]; dim];
    let denom = rc::<R>(4.0) * h * h;
    #[allow(clippy::needless_range_loop)] // symmetric fill over index pairs
    for i in 0..dim {
        for j in i..dim {
            let pp = potential(&shift(&shift(&w, i, h), j, h));
            let pm = potential(&shift(&shift(&w, i, h), j, -h));
            let mp = potential(&shift(&shift(&w, i, -h), j, h));
            let mm = potential(&shift(&shift(&w, i, -h), j, -h));
            let v = (pp - pm - mp + mm) / denom;
            hessian[i][j] = v;
            hessian[j][i] = v;
        }
    }
    let quarter = rc::<R>(0.25);
    let g = Mat::from_fn(n, n, |mu, nu| {
        let re = (hessian[2 * mu][2 * nu] + hessian[2 * mu + 1][2 * nu + 1]) * quarter;
        let im = (hessian[2 * mu][2 * nu + 1] - hessian[2 * mu + 1][2 * nu]) * quarter;
        Complex::new(re, im)
    })
    .hermitize();

    // real Jacobian of sigma at z: columns are jvp along each real direction
    let mut jac: Vec<Vec<C<R>>> = Vec::with_capacity(dim);
    for idx in 0..dim {
        let mut dz = vec![Complex::new(R::zero(), R::zero()); n];
        let mu = idx / 2;
        if idx % 2 == 0 {
            dz[mu].re = R::one();
        } else {
            dz[mu].im = R::one();
        }
        jac.push(ActivationKind::HyperbolicSigma.jvp(z, &dz));
    }

    // omega = i sum g_{mu nu-bar} dw_mu ^ dwbar_nu evaluates on real tangent
    // vectors as omega_g(X, Y) = -Im(Xc^H g^T Yc); compare against g = Id
    let gt = g.transpose();
    let omega = |gmat: &Mat<R>, xc: &[C<R>], yc: &[C<R>]| -> R {
        let gy = gmat.mul_vec(yc);
        let mut acc = Complex::new(R::zero(), R::zero());
        for i in 0..xc.len() {
            acc += xc[i].conj() * gy[i];
        }
        -acc.im
    };
    let id = Mat::eye(n);
    let mut worst = R::zero();
    for i in 0..dim {
        for j in 0..dim {
            let pulled = omega(&gt, &jac[i], &jac[j]);
            let basis_i: Vec<C<R>> = basis_vec(n, i);
            let basis_j: Vec<C<R>> = basis_vec(n, j);
            let standard = omega(&id, &basis_i, &basis_j);
            worst = worst.max((pulled - standard).abs());
        }
    }
    worst
}

fn basis_vec<R: Real>(n: usize, idx: usize) -> Vec<C<R>> {
    let mut v = vec![Complex::new(R::zero(), R::zero()); n];
    let mu = idx / 2;
    if idx.is_multiple_of(2) {
        v[mu].re = R::one();
    } else {
        v[mu].im = R::one();
    }
    v
}
