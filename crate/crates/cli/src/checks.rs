//! The invariant suites behind `quiverml check`: equivariance, recursion vs
//! path sum, gradients vs finite differences, Grassmannian round trips, the
//! hyperbolic activation pullback, and the dimension formula.

use std::sync::Arc;

use anyhow::Result;

use quiverml::machine::{
    backward, cost, fd_cost_gradient, forward, random_inputs, ActivationCatalog, Dataset,
};
use quiverml::mat::Mat;
use quiverml::metric::{
    in_domain, metric_pathsum, metric_recursive, pathsum_form, MetricSignature,
};
use quiverml::nearring::ActivationTree;
use quiverml::quiver::{ArrowSpec, Quiver, Role, VertexSpec};
use quiverml::rep::{act, action_differential, random_gauge, random_rep, FramedRep, SampleDomain};
use quiverml::scalar::{vec_norm, vec_sub, ScalarMode};
use quiverml::uniformize::{grassmann_inverse, grassmann_map, hyperbolic_sigma_check};

use crate::formats::CheckResult;

pub struct CheckContext {
    pub quiver: Arc<Quiver>,
    pub tree: ActivationTree<f64>,
    pub signature: MetricSignature<f64>,
    pub catalog: ActivationCatalog,
    pub mode: ScalarMode,
    pub seed: u64,
    pub tolerance_scale: f64,
}

impl CheckContext {
    fn result(&self, name: &str, deviation: f64, base_tol: f64) -> CheckResult {
        let tolerance = base_tol * self.tolerance_scale;
        CheckResult {
            name: name.to_string(),
            pass: deviation < tolerance,
            deviation,
            tolerance,
        }
    }

    fn sample_domain(&self) -> SampleDomain {
        if self.signature.leading_coeff() < 0.0 {
            SampleDomain::Hyperbolic
        } else {
            SampleDomain::Euclidean
        }
    }

    fn sample_data(&self) -> Dataset<f64> {
        let n_in = self
            .quiver
            .vertex(self.tree.in_block)
            .map(|v| v.n)
            .unwrap_or(1);
        let n_out = self
            .quiver
            .vertex(self.tree.out_block)
            .map(|v| v.n)
            .unwrap_or(1);
        let xs = random_inputs::<f64>(n_in, 4, self.seed + 11, 0.8, self.mode);
        let ys = random_inputs::<f64>(n_out, 4, self.seed + 12, 0.8, self.mode);
        Dataset::new(xs.into_iter().zip(ys).collect())
    }

    pub fn run_all(&self) -> Result<Vec<CheckResult>> {
        Ok(vec![
            self.equivariance()?,
            self.recursion_vs_pathsum()?,
            self.gradient_fd()?,
            self.grassmann_roundtrip()?,
            self.hyperbolic_sigma(),
            self.reineke_dimension()?,
        ])
    }

    fn equivariance(&self) -> Result<CheckResult> {
        let p = random_rep::<f64>(&self.quiver, self.seed, self.sample_domain(), self.mode)?;
        let data = self.sample_data();
        let mut worst = 0.0f64;
        for k in 0..20 {
            let g = random_gauge::<f64>(&self.quiver, self.seed + 100 + k, ScalarMode::Complex);
            let gp = act(&g, &p)?;
            let s1 = metric_recursive(&p, &self.signature)?;
            let s2 = metric_recursive(&gp, &self.signature)?;
            for v in self.quiver.vertices() {
                let pulled = g.block(v.id).adjoint().mul(s2.h(v.id)).mul(g.block(v.id));
                worst = worst.max(s1.h(v.id).max_abs_diff(&pulled));
            }
            let d1 = in_domain(&p, &self.signature)?.ok;
            let d2 = in_domain(&gp, &self.signature)?.ok;
            if d1 != d2 {
                worst = worst.max(1.0);
            }
            let c1 = cost(&self.tree, &p, &self.signature, &self.catalog, &data)?;
            let c2 = cost(&self.tree, &gp, &self.signature, &self.catalog, &data)?;
            worst = worst.max((c1 - c2).abs());
            for (x, _) in &data.samples {
                let (y1, _) = forward(&self.tree, &p, &self.signature, &self.catalog, x)?;
                let (y2, _) = forward(&self.tree, &gp, &self.signature, &self.catalog, x)?;
                worst = worst.max(vec_norm(&vec_sub(&y1, &y2)));
            }
        }
        Ok(self.result("equivariance", worst, 1e-8))
    }

    fn recursion_vs_pathsum(&self) -> Result<CheckResult> {
        let mut worst = 0.0f64;
        let mut quivers = vec![self.quiver.clone()];
        for seed in 0..4 {
            quivers.push(Arc::new(small_random_quiver(self.seed + 40 + seed)));
        }
        for (k, q) in quivers.iter().enumerate() {
            let p =
                random_rep::<f64>(q, self.seed + k as u64, SampleDomain::Hyperbolic, self.mode)?;
            let g = random_gauge::<f64>(q, self.seed + 60 + k as u64, ScalarMode::Complex);
            let moved = act(&g, &p)?;
            for sig in [
                MetricSignature::compact(),
                MetricSignature::euclidean(),
                MetricSignature::hyperbolic(),
            ] {
                let state = metric_recursive(&p, &sig)?;
                for v in q.vertices() {
                    let hp = metric_pathsum(&p, v.id, &sig)?;
                    worst = worst.max(state.h(v.id).max_abs_diff(&hp));
                }
                // assembled forms also agree off the chart (scale-relative)
                let moved_state = metric_recursive(&moved, &sig)?;
                for v in q.vertices() {
                    let sp = pathsum_form(&moved, v.id, &sig)?;
                    let scale = sp.max_abs().max(1.0);
                    worst = worst.max(moved_state.form(v.id).max_abs_diff(&sp) / scale);
                }
            }
        }
        Ok(self.result("recursion_vs_pathsum", worst, 1e-10))
    }

    fn gradient_fd(&self) -> Result<CheckResult> {
        let p = random_rep::<f64>(&self.quiver, self.seed + 7, self.sample_domain(), self.mode)?;
        let data = self.sample_data();
        let grad = backward(&self.tree, &p, &self.signature, &self.catalog, &data)?;
        let fd = fd_cost_gradient(&self.tree, &p, &self.signature, &self.catalog, &data, 1e-5)?;
        let scale = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
        let worst = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        Ok(self.result("gradient_fd", worst, 1e-5))
    }

    fn grassmann_roundtrip(&self) -> Result<CheckResult> {
        // the hyperbolic identification needs n >= d; report a failure to
        // sample as a failed check rather than an error
        let mut worst = 0.0f64;
        for k in 0..10 {
            match random_rep::<f64>(
                &self.quiver,
                self.seed + 300 + k,
                SampleDomain::Hyperbolic,
                self.mode,
            ) {
                Err(_) => {
                    worst = 1.0;
                    break;
                }
                Ok(p) => {
                    let coords = grassmann_map(&p)?;
                    let state = metric_recursive(&p, &MetricSignature::hyperbolic())?;
                    for v in self.quiver.vertices() {
                        let w = coords.block(v.id);
                        let m = Mat::eye(v.d).sub(&w.mul(&w.adjoint())).inverse()?;
                        worst = worst.max(m.max_abs_diff(state.h(v.id)));
                    }
                    let back = grassmann_inverse(&coords, self.mode)?;
                    worst = worst.max(p.max_abs_diff(&back));
                }
            }
        }
        Ok(self.result("grassmann_roundtrip", worst, 1e-10))
    }

    fn hyperbolic_sigma(&self) -> CheckResult {
        let mut worst = 0.0f64;
        for n in 1..=3usize {
            for k in 0..5 {
                worst = worst.max(hyperbolic_sigma_check(n, self.seed + 400 + k));
            }
        }
        self.result("hyperbolic_sigma", worst, 1e-5)
    }

    fn reineke_dimension(&self) -> Result<CheckResult> {
        let mut worst = 0.0f64;
        let mut quivers = vec![self.quiver.clone()];
        for seed in 0..9 {
            quivers.push(Arc::new(small_random_quiver(self.seed + 500 + seed)));
        }
        for (k, q) in quivers.iter().enumerate() {
            let dim = q.moduli_dimension()?;
            if dim != q.ambient_dimension() - q.gauge_dimension() {
                worst = worst.max(2.0);
            }
            let p = random_rep::<f64>(q, self.seed + k as u64, SampleDomain::Stable, self.mode)?;
            let svs = action_differential(&p).singular_values();
            let min_sv = svs.last().copied().unwrap_or(0.0);
            worst = worst.max(1e-8 / min_sv.max(1e-300));
        }
        // deviation is the worst ratio of the rank threshold to the smallest
        // singular value; below 1 means the action is numerically free
        Ok(self.result("reineke_dimension", worst, 1.0))
    }
}

/// Deterministic small acyclic quiver with n >= d (plumbing for the suites).
fn small_random_quiver(seed: u64) -> Quiver {
    // splitmix-style generator, no rand dependency needed here
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(17);
    let mut next = move || {
        state ^= state >> 30;
        state = state.wrapping_mul(0xBF58476D1CE4E5B9);
        state ^= state >> 27;
        state = state.wrapping_mul(0x94D049BB133111EB);
        state ^= state >> 31;
        state
    };
    let nv = 2 + (next() % 3) as usize;
    let vertices: Vec<VertexSpec> = (0..nv)
        .map(|i| {
            let d = 1 + (next() % 2) as usize;
            VertexSpec {
                id: (i + 1) as u32,
                n: d + (next() % 2) as usize,
                d,
                role: Role::Plain,
            }
        })
        .collect();
    let mut arrows = Vec::new();
    let na = (next() % 5) as usize;
    for k in 0..na {
        let a = (next() % nv as u64) as usize;
        let b = (next() % nv as u64) as usize;
        if a == b {
            continue;
        }
        arrows.push(ArrowSpec {
            id: (k + 1) as u32,
            src: (a.min(b) + 1) as u32,
            dst: (a.max(b) + 1) as u32,
        });
    }
    Quiver::new(vertices, arrows).unwrap()
}

/// Metric dump for the report: per-vertex metric and domain diagnostics.
pub fn metric_dump(
    p: &FramedRep<f64>,
    sig: &MetricSignature<f64>,
) -> Result<Vec<crate::formats::MetricDump>> {
    let state = metric_recursive(p, sig)?;
    let report = in_domain(p, sig)?;
    Ok(p.quiver()
        .vertices()
        .iter()
        .zip(&report.min_eigs)
        .map(|(v, &(_, e))| crate::formats::MetricDump {
            vertex: v.id,
            metric: crate::formats::mat_to_json(state.h(v.id)),
            form_min_eigenvalue: e,
        })
        .collect())
}
