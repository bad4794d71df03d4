//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured deviation and elapsed time. Tolerances are pinned in code.
//!
//! Run with `cargo test -p quiverml --test acceptance -- --nocapture` to see
//! the per-criterion lines.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use quiverml::chart::Chart;
use quiverml::machine::{
    backward, cost, fd_cost_gradient, forward, random_inputs, ActivationCatalog, Dataset,
};
use quiverml::mat::Mat;
use quiverml::metric::{
    in_domain, metric_pathsum, metric_recursive, moduli_metric_tensor, pathsum_form, FdConfig,
    MetricSignature,
};
use quiverml::nearring::parse_algorithm;
use quiverml::quiver::{a1_quiver, a2_quiver, diamond_quiver, ArrowSpec, Quiver, Role, VertexSpec};
use quiverml::rep::{act, action_differential, random_gauge, random_rep, FramedRep, SampleDomain};
use quiverml::scalar::{vec_norm, vec_sub, ScalarMode};
use quiverml::trainer::{train, train_from, TrainConfig};

const DIAMOND_ALGO: &str = "eout* . ( a4 . e3 . s2 . e3* . a2 + a3 . e2 . s3 . e2* . a1 ) . ein";
const A2_ALGO: &str = "eout* . e2 . s2 . e2* . a1 . ein";
const CHAIN_ALGO: &str = "eout* . a2 . e2 . s2 . e2* . a1 . ein";

fn chain_quiver() -> Quiver {
    Quiver::new(
        vec![
            VertexSpec {
                id: 1,
                n: 2,
                d: 2,
                role: Role::Input,
            },
            VertexSpec {
                id: 2,
                n: 3,
                d: 2,
                role: Role::Memory,
            },
            VertexSpec {
                id: 3,
                n: 1,
                d: 1,
                role: Role::Output,
            },
        ],
        vec![
            ArrowSpec {
                id: 1,
                src: 1,
                dst: 2,
            },
            ArrowSpec {
                id: 2,
                src: 2,
                dst: 3,
            },
        ],
    )
    .unwrap()
}

fn presets() -> [MetricSignature<f64>; 3] {
    [
        MetricSignature::compact(),
        MetricSignature::euclidean(),
        MetricSignature::hyperbolic(),
    ]
}

fn report(criterion: &str, deviation: f64, tolerance: f64, start: Instant, limit_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    let verdict = if deviation < tolerance && elapsed < limit_s {
        "PASS"
    } else {
        "FAIL"
    };
    println!(
        "acceptance {criterion}: {verdict} (deviation {deviation:.3e} < {tolerance:.1e}, {elapsed:.2}s < {limit_s}s)"
    );
    assert!(
        deviation < tolerance,
        "{criterion}: deviation {deviation:e} exceeds {tolerance:e}"
    );
    assert!(
        elapsed < limit_s,
        "{criterion}: took {elapsed:.2}s, limit {limit_s}s"
    );
}

/// Criterion 1: closed-form Grassmannian metrics on A1 (d=1, n=2) to 1e-12.
#[test]
fn criterion_01_closed_form_grassmannian_metrics() {
    let start = Instant::now();
    let q = Arc::new(a1_quiver(2, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        // compact: any b; hyperbolic: restrict to the unit disk
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let scale = if k % 2 == 0 { 0.45 } else { 1.5 };
        let b = Complex::new(re * scale, im * scale);
        let e = Mat::from_fn(1, 2, |_, j| if j == 0 { Complex::new(1.0, 0.0) } else { b });
        let p = FramedRep::new(q.clone(), vec![], vec![e], ScalarMode::Complex).unwrap();
        let r2 = b.norm_sqr();

        let hc = metric_pathsum(&p, 1, &MetricSignature::compact()).unwrap();
        worst = worst.max((hc[(0, 0)] - Complex::new(1.0 / (1.0 + r2), 0.0)).norm());
        let state = metric_recursive(&p, &MetricSignature::compact()).unwrap();
        worst = worst.max((state.h(1)[(0, 0)] - Complex::new(1.0 / (1.0 + r2), 0.0)).norm());

        let in_disk = r2 < 1.0;
        let dom = in_domain(&p, &MetricSignature::hyperbolic()).unwrap();
        assert_eq!(dom.ok, in_disk, "hyperbolic domain is the unit disk");
        if in_disk {
            let hh = metric_pathsum(&p, 1, &MetricSignature::hyperbolic()).unwrap();
            worst = worst.max((hh[(0, 0)] - Complex::new(1.0 / (1.0 - r2), 0.0)).norm());
        }
    }
    report(
        "01 closed-form grassmannian metrics",
        worst,
        1e-12,
        start,
        1.0,
    );
}

fn random_quiver(seed: u64, max_v: usize, max_arrows: usize, max_d: usize) -> Quiver {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = 1 + (rng.gen::<usize>() % max_v);
    let vertices: Vec<VertexSpec> = (0..nv)
        .map(|i| {
            let d = 1 + rng.gen::<usize>() % max_d;
            let n = d + rng.gen::<usize>() % 3;
            VertexSpec {
                id: (i + 1) as u32,
                n,
                d,
                role: Role::Plain,
            }
        })
        .collect();
    let mut arrows = Vec::new();
    if nv > 1 {
        let na = rng.gen::<usize>() % (max_arrows + 1);
        for k in 0..na {
            let a = rng.gen::<usize>() % nv;
            let b = rng.gen::<usize>() % nv;
            if a == b {
                continue;
            }
            arrows.push(ArrowSpec {
                id: (k + 1) as u32,
                src: (a.min(b) + 1) as u32,
                dst: (a.max(b) + 1) as u32,
            });
        }
    }
    Quiver::new(vertices, arrows).unwrap()
}

/// Criterion 2: recursion agrees with the path sum on 20 random acyclic
/// quivers, all presets, to 1e-10.
#[test]
fn criterion_02_recursion_equals_pathsum() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let q = Arc::new(random_quiver(200 + seed, 5, 7, 4));
        // positivity-domain chart points: the metrics of all three presets
        // exist and the inverse comparison is well-posed
        let p = random_rep::<f64>(&q, seed, SampleDomain::Hyperbolic, ScalarMode::Complex).unwrap();
        for sig in presets() {
            let state = metric_recursive(&p, &sig).unwrap();
            for v in q.vertices() {
                let hp = metric_pathsum(&p, v.id, &sig).unwrap();
                worst = worst.max(state.h(v.id).max_abs_diff(&hp));
            }
        }
        // off the chart the assembled forms still agree (scale-relative)
        let g = random_gauge::<f64>(&q, 300 + seed, ScalarMode::Complex);
        let moved = act(&g, &p).unwrap();
        for sig in presets() {
            let state = metric_recursive(&moved, &sig).unwrap();
            for v in q.vertices() {
                let sp = pathsum_form(&moved, v.id, &sig).unwrap();
                let scale = sp.max_abs().max(1.0);
                worst = worst.max(state.form(v.id).max_abs_diff(&sp) / scale);
            }
        }
    }
    report("02 recursion = path-sum", worst, 1e-10, start, 10.0);
}

/// Criterion 3: quadratic forms, domains, cost, and machine outputs invariant
/// under 50 random gauge transformations to 1e-8.
#[test]
fn criterion_03_gauge_equivariance() {
    let start = Instant::now();
    let q = Arc::new(diamond_quiver([2; 4], [1; 4]));
    let tree = parse_algorithm::<f64>(DIAMOND_ALGO, &q, 4).unwrap();
    let catalog = ActivationCatalog::default();
    let p = random_rep::<f64>(&q, 7, SampleDomain::Hyperbolic, ScalarMode::Complex).unwrap();
    let xs = random_inputs::<f64>(2, 4, 70, 1.0, ScalarMode::Complex);
    let ys = random_inputs::<f64>(2, 4, 71, 1.0, ScalarMode::Complex);
    let data = Dataset::new(xs.clone().into_iter().zip(ys).collect());

    let mut worst = 0.0f64;
    for gauge_seed in 0..50 {
        let g = random_gauge::<f64>(&q, 1000 + gauge_seed, ScalarMode::Complex);
        let gp = act(&g, &p).unwrap();
        for sig in presets() {
            // quadratic-form values through basis vectors
            let s1 = metric_recursive(&p, &sig).unwrap();
            let s2 = metric_recursive(&gp, &sig).unwrap();
            for v in q.vertices() {
                let pulled = g.block(v.id).adjoint().mul(s2.h(v.id)).mul(g.block(v.id));
                worst = worst.max(s1.h(v.id).max_abs_diff(&pulled));
            }
            let d1 = in_domain(&p, &sig).unwrap().ok;
            let d2 = in_domain(&gp, &sig).unwrap().ok;
            assert_eq!(d1, d2, "domain invariance under gauge {gauge_seed}");
        }
        for sig in [MetricSignature::compact(), MetricSignature::hyperbolic()] {
            let c1 = cost(&tree, &p, &sig, &catalog, &data).unwrap();
            let c2 = cost(&tree, &gp, &sig, &catalog, &data).unwrap();
            worst = worst.max((c1 - c2).abs());
            for x in &xs {
                let (y1, _) = forward(&tree, &p, &sig, &catalog, x).unwrap();
                let (y2, _) = forward(&tree, &gp, &sig, &catalog, x).unwrap();
                worst = worst.max(vec_norm(&vec_sub(&y1, &y2)));
            }
        }
    }
    report("03 gauge equivariance/invariance", worst, 1e-8, start, 10.0);
}

fn gradient_check(q: &Arc<Quiver>, algo: &str, mode: ScalarMode, seed: u64) -> (f64, f64) {
    let catalog = ActivationCatalog::default();
    let tree = parse_algorithm::<f64>(algo, q, 4).unwrap();
    let n_in = q.vertex(q.input_vertex().unwrap()).unwrap().n;
    let n_out = q.vertex(q.output_vertex().unwrap()).unwrap().n;
    let mut worst_rel = 0.0f64;
    let mut worst_sym = 0.0f64;
    for sig in presets() {
        let p = random_rep::<f64>(q, seed, SampleDomain::Hyperbolic, mode).unwrap();
        let xs = random_inputs::<f64>(n_in, 3, seed + 1, 0.8, mode);
        let ys = random_inputs::<f64>(n_out, 3, seed + 2, 0.8, mode);
        let data = Dataset::new(xs.into_iter().zip(ys).collect());
        let grad = backward(&tree, &p, &sig, &catalog, &data).unwrap();
        let fd = fd_cost_gradient(&tree, &p, &sig, &catalog, &data, 1e-5).unwrap();
        let scale = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
        let dev = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        worst_rel = worst_rel.max(dev);

        // mixed second differences of the analytic gradient must be symmetric
        let chart = Chart::new(q.clone(), mode);
        let base = chart.pack(&p);
        let h = 1e-4;
        let grad_at = |coords: &[f64]| -> Vec<f64> {
            backward(&tree, &chart.unpack(coords, mode), &sig, &catalog, &data).unwrap()
        };
        let n = base.len();
        let mut sym_scale = 0.0f64;
        let mut sym_dev = 0.0f64;
        for &(i, j) in &[(0usize, n - 1), (1, n / 2)] {
            if i == j {
                continue;
            }
            let hij = {
                let mut u = base.clone();
                u[i] += h;
                let gp = grad_at(&u);
                u[i] -= 2.0 * h;
                let gm = grad_at(&u);
                (gp[j] - gm[j]) / (2.0 * h)
            };
            let hji = {
                let mut u = base.clone();
                u[j] += h;
                let gp = grad_at(&u);
                u[j] -= 2.0 * h;
                let gm = grad_at(&u);
                (gp[i] - gm[i]) / (2.0 * h)
            };
            sym_dev = sym_dev.max((hij - hji).abs());
            sym_scale = sym_scale.max(hij.abs()).max(hji.abs());
        }
        worst_sym = worst_sym.max(sym_dev / sym_scale.max(1.0));
    }
    (worst_rel, worst_sym)
}

/// Criterion 4: backpropagation matches central finite differences to
/// relative 1e-5 on three quivers, all presets, both scalar modes; mixed
/// second differences symmetric to 1e-4.
#[test]
fn criterion_04_gradient_correctness() {
    let start = Instant::now();
    let a2 = Arc::new(a2_quiver((2, 3), (1, 2)));
    let diamond = Arc::new(diamond_quiver([2; 4], [1; 4]));
    let chain = Arc::new(chain_quiver());
    let mut worst_rel = 0.0f64;
    let mut worst_sym = 0.0f64;
    for (q, algo) in [
        (&a2, A2_ALGO),
        (&diamond, DIAMOND_ALGO),
        (&chain, CHAIN_ALGO),
    ] {
        for (mode, seed) in [(ScalarMode::Complex, 11u64), (ScalarMode::Real, 13)] {
            let (rel, sym) = gradient_check(q, algo, mode, seed);
            worst_rel = worst_rel.max(rel);
            worst_sym = worst_sym.max(sym);
        }
    }
    println!("acceptance 04 hessian-symmetry deviation {worst_sym:.3e} < 1.0e-4");
    assert!(worst_sym < 1e-4);
    report("04 gradient correctness", worst_rel, 1e-5, start, 30.0);
}

/// Criterion 5: the moduli metric tensor is positive-definite at 50 random
/// in-domain points per preset, and matches the analytic Poincaré and
/// Fubini-Study tensors on A1 to 1e-5.
#[test]
fn criterion_05_kahler_positivity() {
    let start = Instant::now();
    let fd = FdConfig::default();
    let a2 = Arc::new(a2_quiver((2, 2), (1, 1)));
    let diamond = Arc::new(diamond_quiver([2; 4], [1; 4]));
    let mut min_eig = f64::INFINITY;
    for q in [&a2, &diamond] {
        for sig in presets() {
            for seed in 0..25 {
                let p = random_rep::<f64>(q, seed, SampleDomain::Hyperbolic, ScalarMode::Complex)
                    .unwrap();
                let g = moduli_metric_tensor(&p, &sig, &fd).unwrap();
                min_eig = min_eig.min(g.min_herm_eigenvalue());
            }
        }
    }
    println!("acceptance 05 min tensor eigenvalue {min_eig:.3e} > 1.0e-10");
    assert!(min_eig > 1e-10);

    let a1 = Arc::new(a1_quiver(2, 1));
    let mut worst = 0.0f64;
    for b in [0.0f64, 0.25, -0.4, 0.6] {
        let e = Mat::<f64>::from_real_rows(&[&[1.0, b]]);
        let p = FramedRep::new(a1.clone(), vec![], vec![e], ScalarMode::Complex).unwrap();
        let gh = moduli_metric_tensor(&p, &MetricSignature::hyperbolic(), &fd).unwrap();
        worst = worst.max((gh[(0, 0)].re - (1.0 - b * b).powi(-2)).abs());
        let gc = moduli_metric_tensor(&p, &MetricSignature::compact(), &fd).unwrap();
        worst = worst.max((gc[(0, 0)].re - (1.0 + b * b).powi(-2)).abs());
    }
    report(
        "05 kahler positivity + analytic tensors",
        worst,
        1e-5,
        start,
        60.0,
    );
}

/// Criterion 6: the space-like Grassmannian identification — metric identity,
/// round trips on 100 random hyperbolic points, exact real locus.
#[test]
fn criterion_06_symplectomorphism_structure() {
    let start = Instant::now();
    let a2 = Arc::new(a2_quiver((2, 3), (1, 2)));
    let diamond = Arc::new(diamond_quiver([2; 4], [1; 4]));
    let mut worst = 0.0f64;
    for (qi, q) in [a2, diamond].iter().enumerate() {
        for seed in 0..50 {
            let p = random_rep::<f64>(
                q,
                1000 * (qi as u64 + 1) + seed,
                SampleDomain::Hyperbolic,
                ScalarMode::Complex,
            )
            .unwrap();
            let coords = quiverml::uniformize::grassmann_map(&p).unwrap();
            let state = metric_recursive(&p, &MetricSignature::hyperbolic()).unwrap();
            for v in q.vertices() {
                let w = coords.block(v.id);
                let m = Mat::eye(v.d).sub(&w.mul(&w.adjoint())).inverse().unwrap();
                worst = worst.max(m.max_abs_diff(state.h(v.id)));
            }
            let back =
                quiverml::uniformize::grassmann_inverse(&coords, ScalarMode::Complex).unwrap();
            worst = worst.max(p.max_abs_diff(&back));
            let coords2 = quiverml::uniformize::grassmann_map(&back).unwrap();
            worst = worst.max(coords.max_abs_diff(&coords2));
        }
        // exact real locus
        let pr = random_rep::<f64>(q, 5, SampleDomain::Hyperbolic, ScalarMode::Real).unwrap();
        let cr = quiverml::uniformize::grassmann_map(&pr).unwrap();
        let max_im = cr
            .blocks
            .iter()
            .map(|b| b.max_imag())
            .fold(0.0f64, f64::max);
        assert_eq!(max_im, 0.0, "real inputs must stay exactly real");
        let back = quiverml::uniformize::grassmann_inverse(&cr, ScalarMode::Real).unwrap();
        assert_eq!(back.max_imag(), 0.0);
    }
    report("06 symplectomorphism structure", worst, 1e-10, start, 10.0);
}

/// Criterion 7: the hyperbolic activation pulls the ball form back to the
/// standard form, to 1e-5 at 50 random points with n in {1,2,3}.
#[test]
fn criterion_07_hyperbolic_activation() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=3usize {
        let runs = if n == 1 { 18 } else { 16 };
        for seed in 0..runs {
            let dev: f64 = quiverml::uniformize::hyperbolic_sigma_check(n, seed);
            worst = worst.max(dev);
        }
    }
    report(
        "07 hyperbolic activation pullback",
        worst,
        1e-5,
        start,
        10.0,
    );
}

/// Criterion 8: the Reineke dimension formula on 50 random quivers, and full
/// rank of the linearized action at random stable points.
#[test]
fn criterion_08_dimension_formula() {
    let start = Instant::now();
    let mut min_sv = f64::INFINITY;
    for seed in 0..50 {
        let q = Arc::new(random_quiver(800 + seed, 5, 7, 3));
        assert_eq!(
            q.moduli_dimension().unwrap(),
            q.ambient_dimension() - q.gauge_dimension(),
            "dimension formula on quiver seed {seed}"
        );
        let p = random_rep::<f64>(&q, seed, SampleDomain::Stable, ScalarMode::Complex).unwrap();
        let diff = action_differential(&p);
        assert_eq!(diff.cols(), q.gauge_dimension());
        let svs = diff.singular_values();
        min_sv = min_sv.min(*svs.last().unwrap());
    }
    println!("acceptance 08 min action singular value {min_sv:.3e} > 1.0e-8");
    assert!(min_sv > 1e-8, "action not numerically free: {min_sv:e}");
    report(
        "08 dimension formula + free action",
        1e-8 / min_sv.max(1e-8),
        1.0,
        start,
        10.0,
    );
}

/// Classical dense backprop for the layered chain with a tanh hidden layer —
/// an independent re-implementation used as the Euclidean oracle.
#[allow(clippy::type_complexity)]
fn classical_chain_gradient(
    w1: &Mat<f64>,
    w2: &Mat<f64>,
    b2: &Mat<f64>,
    data: &[(Vec<f64>, Vec<f64>)],
) -> (Mat<f64>, Mat<f64>, Mat<f64>) {
    // phi(x) = W2 E2 tanh(E2^H W1 x), E2 = (Id | b2), real scalars
    let d2 = w1.rows();
    let n2 = d2 + b2.cols();
    let mut gw1 = Mat::<f64>::zeros(w1.rows(), w1.cols());
    let mut gw2 = Mat::<f64>::zeros(w2.rows(), w2.cols());
    let mut gb2 = Mat::<f64>::zeros(b2.rows(), b2.cols());
    let m = data.len() as f64;
    for (x, y) in data {
        // forward
        let v: Vec<f64> = (0..d2)
            .map(|i| (0..w1.cols()).map(|j| w1[(i, j)].re * x[j]).sum())
            .collect();
        let mut u = vec![0.0f64; n2];
        u[..d2].copy_from_slice(&v);
        for j in d2..n2 {
            u[j] = (0..d2).map(|i| b2[(i, j - d2)].re * v[i]).sum();
        }
        let z: Vec<f64> = u.iter().map(|t| t.tanh()).collect();
        // reinjection r = z[..d2] + b2 z[d2..]
        let r: Vec<f64> = (0..d2)
            .map(|i| z[i] + (d2..n2).map(|j| b2[(i, j - d2)].re * z[j]).sum::<f64>())
            .collect();
        let out: Vec<f64> = (0..w2.rows())
            .map(|i| (0..d2).map(|j| w2[(i, j)].re * r[j]).sum())
            .collect();
        // reverse
        let gout: Vec<f64> = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / m).collect();
        for i in 0..w2.rows() {
            for j in 0..d2 {
                gw2[(i, j)].re += gout[i] * r[j];
            }
        }
        let gr: Vec<f64> = (0..d2)
            .map(|j| (0..w2.rows()).map(|i| w2[(i, j)].re * gout[i]).sum())
            .collect();
        // r depends on z and b2
        let mut gz = vec![0.0f64; n2];
        gz[..d2].copy_from_slice(&gr);
        for j in d2..n2 {
            gz[j] = (0..d2).map(|i| b2[(i, j - d2)].re * gr[i]).sum();
            for i in 0..d2 {
                gb2[(i, j - d2)].re += gr[i] * z[j];
            }
        }
        let gu: Vec<f64> = gz
            .iter()
            .zip(&u)
            .map(|(g, t)| g * (1.0 - t.tanh() * t.tanh()))
            .collect();
        // u = (v, b2^T v)
        let mut gv = gu[..d2].to_vec();
        for j in d2..n2 {
            for i in 0..d2 {
                gv[i] += b2[(i, j - d2)].re * gu[j];
                gb2[(i, j - d2)].re += v[i] * gu[j];
            }
        }
        for i in 0..d2 {
            for j in 0..w1.cols() {
                gw1[(i, j)].re += gv[i] * x[j];
            }
        }
    }
    (gw1, gw2, gb2)
}

/// Criterion 9: with the Euclidean preset, backpropagation coincides with the
/// classical re-implementation to 1e-10; teacher-student and XOR training
/// reach their targets.
#[test]
fn criterion_09_euclidean_reduction() {
    let start = Instant::now();
    let q = Arc::new(chain_quiver());
    let catalog = ActivationCatalog::default();
    let tree = parse_algorithm::<f64>(CHAIN_ALGO, &q, 4).unwrap();
    let p = random_rep::<f64>(&q, 3, SampleDomain::Euclidean, ScalarMode::Real).unwrap();
    let xs = random_inputs::<f64>(2, 5, 90, 1.0, ScalarMode::Real);
    let ys = random_inputs::<f64>(1, 5, 91, 1.0, ScalarMode::Real);
    let data = Dataset::new(xs.into_iter().zip(ys).collect());
    let grad = backward(&tree, &p, &MetricSignature::euclidean(), &catalog, &data).unwrap();
    let real_data: Vec<(Vec<f64>, Vec<f64>)> = data
        .samples
        .iter()
        .map(|(x, y)| {
            (
                x.iter().map(|z| z.re).collect(),
                y.iter().map(|z| z.re).collect(),
            )
        })
        .collect();
    let (gw1, gw2, gb2) =
        classical_chain_gradient(p.arrow_mat(1), p.arrow_mat(2), &p.bias_part(2), &real_data);
    // chart layout: bias blocks by vertex (only vertex 2 has one), then
    // arrows a1, a2 row-major
    let mut classical = Vec::new();
    for i in 0..gb2.rows() {
        for j in 0..gb2.cols() {
            classical.push(gb2[(i, j)].re);
        }
    }
    for g in [&gw1, &gw2] {
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                classical.push(g[(i, j)].re);
            }
        }
    }
    assert_eq!(grad.len(), classical.len());
    let worst = grad
        .iter()
        .zip(&classical)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // teacher-student on A2 reaches cost < 1e-3 within 2000 steps
    let a2 = Arc::new(a2_quiver((2, 2), (1, 1)));
    let mut cfg = TrainConfig::new(a2.clone(), "eout* . a1 . ein", MetricSignature::euclidean());
    cfg.max_steps = 2000;
    cfg.learning_rate = 0.5;
    cfg.seed = 5;
    let teacher = random_rep::<f64>(&a2, 99, SampleDomain::Euclidean, ScalarMode::Complex).unwrap();
    let ttree = parse_algorithm::<f64>("eout* . a1 . ein", &a2, 4).unwrap();
    let samples = random_inputs::<f64>(2, 16, 98, 1.0, ScalarMode::Complex)
        .into_iter()
        .map(|x| {
            let (y, _) = forward(
                &ttree,
                &teacher,
                &MetricSignature::euclidean(),
                &catalog,
                &x,
            )
            .unwrap();
            (x, y)
        })
        .collect();
    let outcome = train(&cfg, Dataset::new(samples)).unwrap();
    let final_cost = outcome.history.final_cost();
    println!("acceptance 09 teacher-student final cost {final_cost:.3e} < 1.0e-3");
    assert!(final_cost < 1e-3);

    // XOR solved 4/4 within 5000 steps
    let xq = Arc::new(
        Quiver::new(
            vec![
                VertexSpec {
                    id: 1,
                    n: 2,
                    d: 2,
                    role: Role::Input,
                },
                VertexSpec {
                    id: 2,
                    n: 3,
                    d: 2,
                    role: Role::Memory,
                },
                VertexSpec {
                    id: 3,
                    n: 1,
                    d: 1,
                    role: Role::Output,
                },
            ],
            vec![
                ArrowSpec {
                    id: 1,
                    src: 1,
                    dst: 2,
                },
                ArrowSpec {
                    id: 2,
                    src: 2,
                    dst: 3,
                },
            ],
        )
        .unwrap(),
    );
    let mut xcfg = TrainConfig::new(xq.clone(), CHAIN_ALGO, MetricSignature::euclidean());
    xcfg.mode = ScalarMode::Real;
    xcfg.max_steps = 5000;
    xcfg.learning_rate = 0.9;
    xcfg.seed = 2;
    let xor = Dataset::new(
        [
            ([0.0, 0.0], 0.0),
            ([0.0, 1.0], 1.0),
            ([1.0, 0.0], 1.0),
            ([1.0, 1.0], 0.0),
        ]
        .into_iter()
        .map(|(x, y)| {
            (
                x.iter().map(|&v| Complex::new(v, 0.0)).collect(),
                vec![Complex::new(y, 0.0)],
            )
        })
        .collect(),
    );
    let xout = train(&xcfg, xor.clone()).unwrap();
    let xtree = parse_algorithm::<f64>(CHAIN_ALGO, &xq, 4).unwrap();
    let mut correct = 0;
    for (x, y) in &xor.samples {
        let (pred, _) = forward(
            &xtree,
            &xout.point,
            &MetricSignature::euclidean(),
            &catalog,
            x,
        )
        .unwrap();
        if (pred[0].re - y[0].re).abs() < 0.5 {
            correct += 1;
        }
    }
    println!("acceptance 09 xor accuracy {correct}/4");
    assert_eq!(correct, 4);
    report("09 euclidean reduction", worst, 1e-10, start, 60.0);
}

/// Criterion 10: ten hyperbolic training runs; every accepted iterate stays in
/// the domain and the cost decreases monotonically.
#[test]
fn criterion_10_domain_preserving_training() {
    let start = Instant::now();
    let q = Arc::new(a2_quiver((2, 2), (1, 1)));
    let catalog = ActivationCatalog::default();
    let tree = parse_algorithm::<f64>("eout* . a1 . ein", &q, 4).unwrap();
    for run in 0..10u64 {
        let mut cfg =
            TrainConfig::new(q.clone(), "eout* . a1 . ein", MetricSignature::hyperbolic());
        cfg.max_steps = 80;
        cfg.learning_rate = 0.4;
        cfg.seed = run;
        let teacher =
            random_rep::<f64>(&q, 500 + run, SampleDomain::Hyperbolic, ScalarMode::Complex)
                .unwrap();
        let samples = random_inputs::<f64>(2, 12, 600 + run, 1.0, ScalarMode::Complex)
            .into_iter()
            .map(|x| {
                let (y, _) = forward(
                    &tree,
                    &teacher,
                    &MetricSignature::hyperbolic(),
                    &catalog,
                    &x,
                )
                .unwrap();
                (x, y)
            })
            .collect();
        let p0 = random_rep::<f64>(&q, run, SampleDomain::Hyperbolic, ScalarMode::Complex).unwrap();
        let out = train_from(p0, &cfg, Dataset::new(samples)).unwrap();
        let costs = out.history.accepted_costs();
        assert!(costs.len() > 1, "run {run} made no progress");
        for w in costs.windows(2) {
            assert!(w[1] < w[0], "run {run}: cost not strictly decreasing");
        }
        for r in &out.history.records {
            if r.accepted {
                for &e in &r.min_eigs {
                    assert!(e > 0.0, "run {run}: left the domain at step {}", r.step);
                }
            }
        }
        // the final point itself passes the domain check
        let rep = in_domain(&out.point, &MetricSignature::hyperbolic()).unwrap();
        assert!(rep.ok);
    }
    report("10 domain-preserving training", 0.0, 1.0, start, 120.0);
}
