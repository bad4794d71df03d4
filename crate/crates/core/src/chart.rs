//! Flat coordinates on the gauge-fixed chart (identity basis parts): the
//! entries of every bias block and every arrow matrix, split into real
//! coordinates. Used by finite differencing, backpropagation packing, and the
//! optimizer.

use std::sync::Arc;

use num_complex::Complex;

use crate::mat::Mat;
use crate::quiver::Quiver;
use crate::rep::FramedRep;
use crate::scalar::{Real, ScalarMode};

/// Coordinate chart for a quiver in a scalar mode. Ordering: vertices in
/// declaration order, bias entries row-major; then arrows in declaration
/// order, row-major. Complex mode interleaves (re, im) per complex entry.
#[derive(Debug, Clone)]
pub struct Chart {
    quiver: Arc<Quiver>,
    mode: ScalarMode,
    complex_dim: usize,
}

impl Chart {
    pub fn new(quiver: Arc<Quiver>, mode: ScalarMode) -> Self {
        for v in quiver.vertices() {
            assert!(
                v.n >= v.d,
                "the gauge-fixed chart needs n >= d at every vertex (vertex {})",
                v.id
            );
        }
        let bias: usize = quiver.vertices().iter().map(|v| v.d * (v.n - v.d)).sum();
        let arrows: usize = quiver
            .arrows()
            .iter()
            .map(|a| quiver.vertex(a.dst).unwrap().d * quiver.vertex(a.src).unwrap().d)
            .sum();
        Chart {
            quiver,
            mode,
            complex_dim: bias + arrows,
        }
    }

    pub fn quiver(&self) -> &Arc<Quiver> {
        &self.quiver
    }

    pub fn mode(&self) -> ScalarMode {
        self.mode
    }

    /// Number of complex chart coordinates.
    pub fn complex_dim(&self) -> usize {
        self.complex_dim
    }

    /// Number of real coordinates (doubled in complex mode).
    pub fn real_dim(&self) -> usize {
        match self.mode {
            ScalarMode::Complex => 2 * self.complex_dim,
            ScalarMode::Real => self.complex_dim,
        }
    }

    fn push_entry<R: Real>(&self, out: &mut Vec<R>, z: Complex<R>) {
        out.push(z.re);
        if self.mode == ScalarMode::Complex {
            out.push(z.im);
        }
    }

    fn read_entry<R: Real>(&self, coords: &[R], k: &mut usize) -> Complex<R> {
        let re = coords[*k];
        *k += 1;
        let im = if self.mode == ScalarMode::Complex {
            let v = coords[*k];
            *k += 1;
            v
        } else {
            R::zero()
        };
        Complex::new(re, im)
    }

    pub fn pack<R: Real>(&self, p: &FramedRep<R>) -> Vec<R> {
        let mut out = Vec::with_capacity(self.real_dim());
        for v in self.quiver.vertices() {
            let b = p.bias_part(v.id);
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    self.push_entry(&mut out, b[(i, j)]);
                }
            }
        }
        for a in self.quiver.arrows() {
            let w = p.arrow_mat(a.id);
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    self.push_entry(&mut out, w[(i, j)]);
                }
            }
        }
        debug_assert_eq!(out.len(), self.real_dim());
        out
    }

    /// Rebuilds the gauge-fixed representation from chart coordinates.
    pub fn unpack<R: Real>(&self, coords: &[R], mode: ScalarMode) -> FramedRep<R> {
        assert_eq!(coords.len(), self.real_dim());
        let mut k = 0usize;
        let mut framings = Vec::with_capacity(self.quiver.vertices().len());
        for v in self.quiver.vertices() {
            let mut e = Mat::zeros(v.d, v.n);
            for i in 0..v.d {
                e[(i, i)] = Complex::new(R::one(), R::zero());
            }
            for i in 0..v.d {
                for j in v.d..v.n {
                    e[(i, j)] = self.read_entry(coords, &mut k);
                }
            }
            framings.push(e);
        }
        let mut arrows = Vec::with_capacity(self.quiver.arrows().len());
        for a in self.quiver.arrows() {
            let rows = self.quiver.vertex(a.dst).unwrap().d;
            let cols = self.quiver.vertex(a.src).unwrap().d;
            let mut w = Mat::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    w[(i, j)] = self.read_entry(coords, &mut k);
                }
            }
            arrows.push(w);
        }
        FramedRep::new(self.quiver.clone(), arrows, framings, mode)
            .expect("chart shapes consistent by construction")
    }

    /// Reads a tangent direction: bias-block and arrow-matrix directional
    /// derivatives (the frozen identity basis parts contribute nothing).
    pub fn unpack_tangent<R: Real>(&self, coords: &[R]) -> (Vec<Mat<R>>, Vec<Mat<R>>) {
        assert_eq!(coords.len(), self.real_dim());
        let mut k = 0usize;
        let mut dbias = Vec::with_capacity(self.quiver.vertices().len());
        for v in self.quiver.vertices() {
            let mut b = Mat::zeros(v.d, v.n - v.d);
            for i in 0..v.d {
                for j in 0..(v.n - v.d) {
                    b[(i, j)] = self.read_entry(coords, &mut k);
                }
            }
            dbias.push(b);
        }
        let mut darrows = Vec::with_capacity(self.quiver.arrows().len());
        for a in self.quiver.arrows() {
            let rows = self.quiver.vertex(a.dst).unwrap().d;
            let cols = self.quiver.vertex(a.src).unwrap().d;
            let mut w = Mat::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    w[(i, j)] = self.read_entry(coords, &mut k);
                }
            }
            darrows.push(w);
        }
        (dbias, darrows)
    }

    /// Packs per-parameter complex adjoints (convention: G = d/dRe + i d/dIm)
    /// into the real gradient layout. `gb`/`gw` are indexed like the quiver's
    /// vertex and arrow lists; bias adjoints have bias-block shape.
    pub fn pack_grad<R: Real>(&self, gb: &[Mat<R>], gw: &[Mat<R>]) -> Vec<R> {
        let mut out = Vec::with_capacity(self.real_dim());
        for (vi, v) in self.quiver.vertices().iter().enumerate() {
            let g = &gb[vi];
            debug_assert_eq!((g.rows(), g.cols()), (v.d, v.n - v.d));
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    self.push_entry(&mut out, g[(i, j)]);
                }
            }
        }
        for (ai, _a) in self.quiver.arrows().iter().enumerate() {
            let g = &gw[ai];
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    self.push_entry(&mut out, g[(i, j)]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::diamond_quiver;
    use crate::rep::{random_rep, SampleDomain};

    #[test]
    fn pack_unpack_round_trip() {
        let q = Arc::new(diamond_quiver([2, 3, 2, 2], [1, 2, 1, 1]));
        let chart = Chart::new(q.clone(), ScalarMode::Complex);
        assert_eq!(
            chart.complex_dim(),
            q.moduli_dimension().unwrap(),
            "chart coordinates = moduli dimension on the gauge-fixed slice"
        );
        let p = random_rep::<f64>(&q, 8, SampleDomain::Euclidean, ScalarMode::Complex).unwrap();
        let coords = chart.pack(&p);
        let p2 = chart.unpack(&coords, ScalarMode::Complex);
        assert!(p.max_abs_diff(&p2) == 0.0);
    }

    #[test]
    fn real_mode_halves_dim() {
        let q = Arc::new(diamond_quiver([2; 4], [1; 4]));
        let cc = Chart::new(q.clone(), ScalarMode::Complex);
        let cr = Chart::new(q, ScalarMode::Real);
        assert_eq!(cc.real_dim(), 2 * cr.real_dim());
    }
}
