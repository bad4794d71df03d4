//! Numerical realization of algorithms: forward propagation of activation
//! trees into machine functions, the quadratic cost, exact backpropagation
//! (including the metric-adjoint terms through the dependence of every H_i on
//! the point), and directional realization of differential 1-forms.

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::chart::Chart;
use crate::mat::Mat;
use crate::metric::{in_domain, metric_state, MetricError, MetricSignature, MetricState};
use crate::nearring::{ActivationTree, Atom, EdgeLabel, FormTree, Suffix, TreeNode};
use crate::rep::FramedRep;
use crate::scalar::{rc, vec_add, vec_norm_sqr, vec_sub, CVec, Real, ScalarMode, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MachineError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("input vector has dimension {got}, F_in has dimension {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("target vector has dimension {got}, F_out has dimension {expected}")]
    OutputDim { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("backpropagation requires a gauge-fixed point")]
    NotGaugeFixed,
}

// ---- activations ------------------------------------------------------------

/// Softplus sharpness for the smoothed ReLU.
pub const SMOOTH_RELU_SHARPNESS: f64 = 20.0;

/// Built-in activation functions on framing blocks. Componentwise kinds act
/// on real and imaginary parts independently; the hyperbolic map acts on the
/// whole vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Identity,
    Tanh,
    SmoothRelu,
    HyperbolicSigma,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Tanh => "tanh",
            ActivationKind::SmoothRelu => "smooth_relu",
            ActivationKind::HyperbolicSigma => "hyperbolic_sigma",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(ActivationKind::Identity),
            "tanh" => Some(ActivationKind::Tanh),
            "smooth_relu" | "softplus" => Some(ActivationKind::SmoothRelu),
            "hyperbolic_sigma" => Some(ActivationKind::HyperbolicSigma),
            _ => None,
        }
    }

    pub fn value<R: Real>(self, u: &[C<R>]) -> CVec<R> {
        match self {
            ActivationKind::Identity => u.to_vec(),
            ActivationKind::Tanh => u
                .iter()
                .map(|z| Complex::new(z.re.tanh(), z.im.tanh()))
                .collect(),
            ActivationKind::SmoothRelu => u
                .iter()
                .map(|z| Complex::new(softplus(z.re), softplus(z.im)))
                .collect(),
            ActivationKind::HyperbolicSigma => {
                let s = hyper_scale(u);
                u.iter().map(|z| z * s).collect()
            }
        }
    }

    /// Action of the first derivative on a (real) tangent direction.
    pub fn jvp<R: Real>(self, u: &[C<R>], du: &[C<R>]) -> CVec<R> {
        match self {
            ActivationKind::Identity => du.to_vec(),
            ActivationKind::Tanh => u
                .iter()
                .zip(du)
                .map(|(z, d)| Complex::new(sech2(z.re) * d.re, sech2(z.im) * d.im))
                .collect(),
            ActivationKind::SmoothRelu => u
                .iter()
                .zip(du)
                .map(|(z, d)| Complex::new(sigmoid_k(z.re) * d.re, sigmoid_k(z.im) * d.im))
                .collect(),
            ActivationKind::HyperbolicSigma => {
                let s = hyper_scale(u);
                let s3 = s * s * s;
                // Re <u, du>
                let mut re_dot = R::zero();
                for (z, d) in u.iter().zip(du) {
                    re_dot += z.re * d.re + z.im * d.im;
                }
                u.iter()
                    .zip(du)
                    .map(|(z, d)| d * s - z * (s3 * re_dot))
                    .collect()
            }
        }
    }

    /// Adjoint of the first derivative under the convention
    /// `g = d cost/d Re + i d cost/d Im`; the real Jacobians here are
    /// symmetric, so this matches `jvp`.
    pub fn vjp<R: Real>(self, u: &[C<R>], g: &[C<R>]) -> CVec<R> {
        self.jvp(u, g)
    }
}

fn softplus<R: Real>(t: R) -> R {
    let k = rc::<R>(SMOOTH_RELU_SHARPNESS);
    if t > R::zero() {
        t + (-(k * t)).exp().ln_1p() / k
    } else {
        (k * t).exp().ln_1p() / k
    }
}

fn sigmoid_k<R: Real>(t: R) -> R {
    let k = rc::<R>(SMOOTH_RELU_SHARPNESS);
    R::one() / (R::one() + (-(k * t)).exp())
}

fn sech2<R: Real>(t: R) -> R {
    let th = t.tanh();
    R::one() - th * th
}

fn hyper_scale<R: Real>(u: &[C<R>]) -> R {
    R::one() / (R::one() + vec_norm_sqr(u)).sqrt()
}

/// Named list of activations; algorithm symbols s1, s2, ... index into it.
#[derive(Debug, Clone)]
pub struct ActivationCatalog {
    kinds: Vec<ActivationKind>,
}

impl Default for ActivationCatalog {
    /// s1 = identity, s2 = tanh, s3 = smooth_relu, s4 = hyperbolic_sigma.
    fn default() -> Self {
        ActivationCatalog {
            kinds: vec![
                ActivationKind::Identity,
                ActivationKind::Tanh,
                ActivationKind::SmoothRelu,
                ActivationKind::HyperbolicSigma,
            ],
        }
    }
}

impl ActivationCatalog {
    pub fn new(kinds: Vec<ActivationKind>) -> Self {
        ActivationCatalog { kinds }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn get(&self, index: usize) -> ActivationKind {
        self.kinds[index]
    }

    pub fn kinds(&self) -> &[ActivationKind] {
        &self.kinds
    }

    /// Max deviation between each derivative map and central finite
    /// differences of its value map at random points.
    pub fn self_check<R: Real>(&self, seed: u64) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rc::<R>(1e-6);
        let mut worst = R::zero();
        for kind in &self.kinds {
            for n in [1usize, 3] {
                for _ in 0..4 {
                    let u: CVec<R> = (0..n)
                        .map(|_| {
                            Complex::new(
                                rc::<R>(rng.sample::<f64, _>(StandardNormal) * 0.8),
                                rc::<R>(rng.sample::<f64, _>(StandardNormal) * 0.8),
                            )
                        })
                        .collect();
                    let du: CVec<R> = (0..n)
                        .map(|_| {
                            Complex::new(
                                rc::<R>(rng.sample::<f64, _>(StandardNormal)),
                                rc::<R>(rng.sample::<f64, _>(StandardNormal)),
                            )
                        })
                        .collect();
                    let analytic = kind.jvp(&u, &du);
                    let up: CVec<R> = u.iter().zip(&du).map(|(a, d)| a + d * h).collect();
                    let um: CVec<R> = u.iter().zip(&du).map(|(a, d)| a - d * h).collect();
                    let vp = kind.value(&up);
                    let vm = kind.value(&um);
                    for i in 0..n {
                        let fd = (vp[i] - vm[i]) / Complex::new(h + h, R::zero());
                        worst = worst.max((analytic[i] - fd).norm());
                    }
                }
            }
        }
        worst
    }
}

// ---- dataset ----------------------------------------------------------------

/// Supervised samples (x in F_in, y in F_out).
#[derive(Debug, Clone, Default)]
pub struct Dataset<R: Real> {
    pub samples: Vec<(CVec<R>, CVec<R>)>,
}

impl<R: Real> Dataset<R> {
    pub fn new(samples: Vec<(CVec<R>, CVec<R>)>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<R> {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn validate(&self, tree: &ActivationTree<R>, p: &FramedRep<R>) -> Result<(), MachineError> {
        let n_in = p.quiver().vertex(tree.in_block).unwrap().n;
        let n_out = p.quiver().vertex(tree.out_block).unwrap().n;
        for (x, y) in &self.samples {
            if x.len() != n_in {
                return Err(MachineError::InputDim {
                    expected: n_in,
                    got: x.len(),
                });
            }
            if y.len() != n_out {
                return Err(MachineError::OutputDim {
                    expected: n_out,
                    got: y.len(),
                });
            }
        }
        Ok(())
    }
}

/// Deterministic random inputs in F_in (test and teacher-data plumbing).
pub fn random_inputs<R: Real>(
    dim: usize,
    count: usize,
    seed: u64,
    scale: f64,
    mode: ScalarMode,
) -> Vec<CVec<R>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    match mode {
                        ScalarMode::Real => Complex::new(rc::<R>(re * scale), R::zero()),
                        ScalarMode::Complex => {
                            Complex::new(rc::<R>(re * scale), rc::<R>(im * scale))
                        }
                    }
                })
                .collect()
        })
        .collect()
}

// ---- realization -------------------------------------------------------------

fn atom_matrix<R: Real>(atom: Atom, p: &FramedRep<R>, state: &MetricState<R>) -> Mat<R> {
    match atom {
        Atom::Arrow(a) => p.arrow_mat(a).clone(),
        Atom::Frame(v) => p.framing(v).clone(),
        Atom::FrameAdj(v) => p.framing(v).adjoint().mul(state.h(v)),
    }
}

fn block_dim<R: Real>(p: &FramedRep<R>, slot: crate::nearring::Slot) -> usize {
    match slot {
        crate::nearring::Slot::F(v) => p.quiver().vertex(v).unwrap().n,
        crate::nearring::Slot::V(v) => p.quiver().vertex(v).unwrap().d,
    }
}

/// Realizes an edge label as a matrix between framing blocks: each term
/// `c * e_k^{*_h} w_gamma e_j` evaluates with the metric adjoint
/// `e^{*_h} = e^H H` at the head vertex, and terms are summed.
pub fn realize_edge<R: Real>(
    label: &EdgeLabel<R>,
    p: &FramedRep<R>,
    state: &MetricState<R>,
) -> Mat<R> {
    let rows = block_dim(p, label.cod);
    let cols = block_dim(p, label.dom);
    let mut out = Mat::zeros(rows, cols);
    for term in &label.terms {
        let mut m: Option<Mat<R>> = None;
        for &atom in &term.atoms {
            let a = atom_matrix(atom, p, state);
            m = Some(match m {
                None => a,
                Some(prev) => a.mul(&prev),
            });
        }
        let m = m.unwrap_or_else(|| Mat::eye(cols));
        out.add_assign(&m.scale(term.coeff));
    }
    out
}

/// Realized edge matrices of a whole tree, indexed by node id.
pub struct Realization<R: Real> {
    linear: Vec<Option<Mat<R>>>,
    branches: Vec<Vec<Mat<R>>>,
}

impl<R: Real> Realization<R> {
    pub fn new(
        tree: &ActivationTree<R>,
        p: &FramedRep<R>,
        state: &MetricState<R>,
    ) -> Realization<R> {
        let mut r = Realization {
            linear: vec![None; tree.node_count()],
            branches: vec![vec![]; tree.node_count()],
        };
        fill_realization(&tree.root, p, state, &mut r);
        r
    }
}

fn fill_realization<R: Real>(
    node: &TreeNode<R>,
    p: &FramedRep<R>,
    state: &MetricState<R>,
    r: &mut Realization<R>,
) {
    if let Some(l) = &node.leaf_label {
        r.linear[node.id] = Some(realize_edge(l, p, state));
    }
    for b in &node.branches {
        r.branches[node.id].push(realize_edge(&b.label, p, state));
        fill_realization(&b.child, p, state, r);
    }
}

/// Stored node outputs from a forward pass (pre-activation values feeding the
/// parent activations; the root entry is the machine output).
pub struct Tape<R: Real> {
    pub outputs: Vec<CVec<R>>,
}

fn eval_node<R: Real>(
    node: &TreeNode<R>,
    r: &Realization<R>,
    catalog: &ActivationCatalog,
    x: &[C<R>],
    tape: &mut Tape<R>,
) -> CVec<R> {
    let mut out: Option<CVec<R>> = None;
    if let Some(m) = &r.linear[node.id] {
        out = Some(m.mul_vec(x));
    }
    for (bi, b) in node.branches.iter().enumerate() {
        let u = eval_node(&b.child, r, catalog, x, tape);
        let act = catalog.get(b.activation).value(&u);
        let term = r.branches[node.id][bi].mul_vec(&act);
        out = Some(match out {
            None => term,
            Some(acc) => vec_add(&acc, &term),
        });
    }
    let out = out.expect("tree nodes have at least one edge");
    tape.outputs[node.id] = out.clone();
    out
}

fn domain_checked_state<R: Real>(
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
) -> Result<MetricState<R>, MachineError> {
    let report = in_domain(p, sig)?;
    if !report.ok {
        let &(vertex, min_eig) = report
            .min_eigs
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        return Err(MachineError::Metric(MetricError::OutOfDomain {
            vertex,
            min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
        }));
    }
    Ok(metric_state(p, sig)?)
}

/// Forward propagation: evaluates the machine function at `x` and returns the
/// output together with the tape of stored node values.
pub fn forward<R: Real>(
    tree: &ActivationTree<R>,
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
    catalog: &ActivationCatalog,
    x: &[C<R>],
) -> Result<(CVec<R>, Tape<R>), MachineError> {
    let state = domain_checked_state(p, sig)?;
    let r = Realization::new(tree, p, &state);
    forward_with(tree, &r, catalog, p, x)
}

fn forward_with<R: Real>(
    tree: &ActivationTree<R>,
    r: &Realization<R>,
    catalog: &ActivationCatalog,
    p: &FramedRep<R>,
    x: &[C<R>],
) -> Result<(CVec<R>, Tape<R>), MachineError> {
    let n_in = p.quiver().vertex(tree.in_block).unwrap().n;
    if x.len() != n_in {
        return Err(MachineError::InputDim {
            expected: n_in,
            got: x.len(),
        });
    }
    let mut tape = Tape {
        outputs: vec![vec![]; tree.node_count()],
    };
    let y = eval_node(&tree.root, r, catalog, x, &mut tape);
    Ok((y, tape))
}

/// Mean squared error of the machine function over the dataset.
pub fn cost<R: Real>(
    tree: &ActivationTree<R>,
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
    catalog: &ActivationCatalog,
    data: &Dataset<R>,
) -> Result<R, MachineError> {
    if data.is_empty() {
        return Err(MachineError::EmptyDataset);
    }
    data.validate(tree, p)?;
    let state = domain_checked_state(p, sig)?;
    let r = Realization::new(tree, p, &state);
    let mut acc = R::zero();
    for (x, y) in &data.samples {
        let (out, _) = forward_with(tree, &r, catalog, p, x)?;
        acc += vec_norm_sqr(&vec_sub(&out, y));
    }
    Ok(acc / rc::<R>(data.len() as f64))
}

// ---- backward ----------------------------------------------------------------

/// Per-parameter adjoints in the convention `g = d cost/dRe + i d cost/dIm`.
struct Adjoints<R: Real> {
    bias: Vec<Mat<R>>,
    arrows: Vec<Mat<R>>,
    metrics: Vec<Mat<R>>,
}

#[allow(clippy::too_many_arguments)]
fn reverse_node<R: Real>(
    node: &TreeNode<R>,
    r: &Realization<R>,
    catalog: &ActivationCatalog,
    tape: &Tape<R>,
    x: &[C<R>],
    g_out: &[C<R>],
    g_linear: &mut [Option<Mat<R>>],
    g_branches: &mut [Vec<Mat<R>>],
) {
    if r.linear[node.id].is_some() {
        let upd = Mat::outer(g_out, x);
        match &mut g_linear[node.id] {
            Some(acc) => acc.add_assign(&upd),
            slot => *slot = Some(upd),
        }
    }
    for (bi, b) in node.branches.iter().enumerate() {
        let u = &tape.outputs[b.child.id];
        let act = catalog.get(b.activation).value(u);
        let m = &r.branches[node.id][bi];
        g_branches[node.id][bi].add_assign(&Mat::outer(g_out, &act));
        let g_act = m.adjoint().mul_vec(g_out);
        let g_u = catalog.get(b.activation).vjp(u, &g_act);
        reverse_node(&b.child, r, catalog, tape, x, &g_u, g_linear, g_branches);
    }
}

/// Reverse of one realized edge label: distributes the matrix adjoint onto
/// arrow, bias, and metric adjoints through each term's atom chain.
fn reverse_edge<R: Real>(
    label: &EdgeLabel<R>,
    g_label: &Mat<R>,
    p: &FramedRep<R>,
    state: &MetricState<R>,
    adj: &mut Adjoints<R>,
) {
    let q = p.quiver();
    for term in &label.terms {
        // forward atom matrices and prefix products
        let mats: Vec<Mat<R>> = term
            .atoms
            .iter()
            .map(|&a| atom_matrix(a, p, state))
            .collect();
        let cols = block_dim(p, label.dom);
        let mut prefixes: Vec<Mat<R>> = Vec::with_capacity(mats.len() + 1);
        prefixes.push(Mat::eye(cols));
        for m in &mats {
            let last = prefixes.last().unwrap();
            prefixes.push(m.mul(last));
        }
        // suffix products from the top
        let rows = block_dim(p, label.cod);
        let mut suffix = Mat::eye(rows);
        // iterate atoms from last applied to first
        for (k, &atom) in term.atoms.iter().enumerate().rev() {
            // G_{A_k} = conj(c) * suffix^H * G * prefix_k^H
            let g_atom = suffix
                .adjoint()
                .mul(g_label)
                .mul(&prefixes[k].adjoint())
                .scale(term.coeff.conj());
            match atom {
                Atom::Arrow(a) => {
                    adj.arrows[q.arrow_index(a)].add_assign(&g_atom);
                }
                Atom::Frame(v) => {
                    let vs = q.vertex(v).unwrap();
                    adj.bias[q.vertex_index(v)].add_assign(&g_atom.col_block(vs.d, vs.n));
                }
                Atom::FrameAdj(v) => {
                    // A = E^H H: G_E += H G_A^H (bias columns), G_H += E G_A
                    let vs = q.vertex(v).unwrap();
                    let h = state.h(v);
                    let e = p.framing(v);
                    let g_e = h.mul(&g_atom.adjoint());
                    adj.bias[q.vertex_index(v)].add_assign(&g_e.col_block(vs.d, vs.n));
                    adj.metrics[q.vertex_index(v)].add_assign(&e.mul(&g_atom));
                }
            }
            suffix = suffix.mul(&mats[k]);
        }
    }
}

/// Reverse sweep of the metric recursion: folds metric adjoints back onto the
/// bias and arrow parameters through `S_i` and the compact aggregates `P_i`,
/// in reverse topological order.
fn reverse_metrics<R: Real>(p: &FramedRep<R>, state: &MetricState<R>, adj: &mut Adjoints<R>) {
    let q = p.quiver();
    let sig = &state.signature;
    let alpha = sig.bias_coeff;
    let beta = sig.path_default;
    let nv = q.vertices().len();
    let mut g_compact: Vec<Mat<R>> = q.vertices().iter().map(|v| Mat::zeros(v.d, v.d)).collect();
    let order: Vec<u32> = q.topological_order().iter().rev().copied().collect();
    debug_assert_eq!(order.len(), nv);
    for vid in order {
        let vi = q.vertex_index(vid);
        let v = q.vertex(vid).unwrap();
        let h = state.h(vid);
        // H = S^{-1}: G_S = -H^H G_H H^H
        let g_h = &adj.metrics[vi];
        let g_s = h.adjoint().mul(g_h).mul(&h.adjoint()).neg();
        let g_p = &g_compact[vi];
        // bias enters through alpha b b* in S and through b b* in P
        if v.n > v.d {
            let b = p.bias_part(vid);
            let mut g_b = g_s.add(&g_s.adjoint()).scale_re(alpha).mul(&b);
            g_b.add_assign(&g_p.add(&g_p.adjoint()).mul(&b));
            adj.bias[vi].add_assign(&g_b);
        }
        // arrow terms: S has beta * w P w*, P has w P w*
        let g_t = g_s.scale_re(beta).add(g_p);
        for a in q.arrows_into(vid) {
            let w = p.arrow_mat(a.id);
            let child = state.compact_aggregate(a.src);
            let g_w = g_t.add(&g_t.adjoint()).mul(w).mul(child);
            adj.arrows[q.arrow_index(a.id)].add_assign(&g_w);
            let g_child = w.adjoint().mul(&g_t).mul(w);
            g_compact[q.vertex_index(a.src)].add_assign(&g_child);
        }
    }
}

/// Exact gradient of the cost over the chart coordinates (entries of every
/// bias block and arrow matrix; real and imaginary parts in complex mode).
///
/// The tree part is a reverse sweep sharing backbone chains across nodes; the
/// metric-adjoint contributions are folded back through the recursion rather
/// than the path sum.
pub fn backward<R: Real>(
    tree: &ActivationTree<R>,
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
    catalog: &ActivationCatalog,
    data: &Dataset<R>,
) -> Result<Vec<R>, MachineError> {
    if data.is_empty() {
        return Err(MachineError::EmptyDataset);
    }
    data.validate(tree, p)?;
    if !p.is_gauge_fixed(rc::<R>(1e-12)) {
        return Err(MachineError::NotGaugeFixed);
    }
    let state = domain_checked_state(p, sig)?;
    let r = Realization::new(tree, p, &state);
    let q = p.quiver();

    let mut g_linear: Vec<Option<Mat<R>>> = vec![None; tree.node_count()];
    let mut g_branches: Vec<Vec<Mat<R>>> = (0..tree.node_count()).map(|_| Vec::new()).collect();
    init_branch_adjoints(&tree.root, p, &mut g_branches);

    let inv_m = R::one() / rc::<R>(data.len() as f64);
    for (x, y) in &data.samples {
        let (out, tape) = forward_with(tree, &r, catalog, p, x)?;
        let g_root: CVec<R> = out
            .iter()
            .zip(y)
            .map(|(o, t)| (o - t) * Complex::new(inv_m + inv_m, R::zero()))
            .collect();
        reverse_node(
            &tree.root,
            &r,
            catalog,
            &tape,
            x,
            &g_root,
            &mut g_linear,
            &mut g_branches,
        );
    }

    let mut adj = Adjoints {
        bias: q
            .vertices()
            .iter()
            .map(|v| Mat::zeros(v.d, v.n - v.d))
            .collect(),
        arrows: q
            .arrows()
            .iter()
            .map(|a| Mat::zeros(q.vertex(a.dst).unwrap().d, q.vertex(a.src).unwrap().d))
            .collect(),
        metrics: q.vertices().iter().map(|v| Mat::zeros(v.d, v.d)).collect(),
    };
    collect_edge_adjoints(&tree.root, &g_linear, &g_branches, p, &state, &mut adj);
    reverse_metrics(p, &state, &mut adj);

    let chart = Chart::new(q.clone(), p.mode());
    Ok(chart.pack_grad(&adj.bias, &adj.arrows))
}

fn init_branch_adjoints<R: Real>(
    node: &TreeNode<R>,
    p: &FramedRep<R>,
    g_branches: &mut [Vec<Mat<R>>],
) {
    for b in &node.branches {
        let rows = block_dim(p, b.label.cod);
        let cols = block_dim(p, b.label.dom);
        g_branches[node.id].push(Mat::zeros(rows, cols));
        init_branch_adjoints(&b.child, p, g_branches);
    }
}

fn collect_edge_adjoints<R: Real>(
    node: &TreeNode<R>,
    g_linear: &[Option<Mat<R>>],
    g_branches: &[Vec<Mat<R>>],
    p: &FramedRep<R>,
    state: &MetricState<R>,
    adj: &mut Adjoints<R>,
) {
    if let (Some(label), Some(g)) = (&node.leaf_label, &g_linear[node.id]) {
        reverse_edge(label, g, p, state, adj);
    }
    for (bi, b) in node.branches.iter().enumerate() {
        reverse_edge(&b.label, &g_branches[node.id][bi], p, state, adj);
        collect_edge_adjoints(&b.child, g_linear, g_branches, p, state, adj);
    }
}

/// Central finite differences of the cost over the chart coordinates — the
/// independent oracle the gradient is checked against.
pub fn fd_cost_gradient<R: Real>(
    tree: &ActivationTree<R>,
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
    catalog: &ActivationCatalog,
    data: &Dataset<R>,
    step: f64,
) -> Result<Vec<R>, MachineError> {
    let chart = Chart::new(p.quiver().clone(), p.mode());
    let base = chart.pack(p);
    let h = rc::<R>(step);
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let cp = cost(tree, &chart.unpack(&plus, p.mode()), sig, catalog, data)?;
        let mut minus = base.clone();
        minus[i] -= h;
        let cm = cost(tree, &chart.unpack(&minus, p.mode()), sig, catalog, data)?;
        grad.push((cp - cm) / (h + h));
    }
    Ok(grad)
}

// ---- 1-form realization (directional derivative) -----------------------------

/// Forward-mode tangent data: directional derivatives of the bias blocks,
/// arrow matrices, and every vertex metric.
struct TangentState<R: Real> {
    dbias: Vec<Mat<R>>,
    darrows: Vec<Mat<R>>,
    dmetrics: Vec<Mat<R>>,
}

fn tangent_state<R: Real>(
    p: &FramedRep<R>,
    state: &MetricState<R>,
    dtheta: &[R],
) -> TangentState<R> {
    let q = p.quiver();
    let chart = Chart::new(q.clone(), p.mode());
    let (dbias, darrows) = chart.unpack_tangent(dtheta);
    let sig = &state.signature;
    // forward sweep of dP and dS in topological order
    let nv = q.vertices().len();
    let mut dp: Vec<Mat<R>> = q.vertices().iter().map(|v| Mat::zeros(v.d, v.d)).collect();
    let mut dmetrics: Vec<Mat<R>> = q.vertices().iter().map(|v| Mat::zeros(v.d, v.d)).collect();
    let _ = nv;
    for &vid in q.topological_order() {
        let vi = q.vertex_index(vid);
        let v = q.vertex(vid).unwrap();
        let mut dt_i = Mat::zeros(v.d, v.d);
        for a in q.arrows_into(vid) {
            let w = p.arrow_mat(a.id);
            let dw = &darrows[q.arrow_index(a.id)];
            let child_p = state.compact_aggregate(a.src);
            let child_dp = &dp[q.vertex_index(a.src)];
            dt_i.add_assign(&dw.mul(child_p).mul(&w.adjoint()));
            dt_i.add_assign(&w.mul(child_dp).mul(&w.adjoint()));
            dt_i.add_assign(&w.mul(child_p).mul(&dw.adjoint()));
        }
        let mut dbb = Mat::zeros(v.d, v.d);
        if v.n > v.d {
            let b = p.bias_part(vid);
            let db = &dbias[vi];
            dbb = db.mul(&b.adjoint()).add(&b.mul(&db.adjoint()));
        }
        // dP = d(bb*) + dT; dS = alpha d(bb*) + beta dT; dH = -H dS H
        let dp_i = dbb.add(&dt_i);
        let ds_i = dbb
            .scale_re(sig.bias_coeff)
            .add(&dt_i.scale_re(sig.path_default));
        let h = state.h(vid);
        dmetrics[vi] = h.mul(&ds_i).mul(h).neg();
        dp[vi] = dp_i;
    }
    TangentState {
        dbias,
        darrows,
        dmetrics,
    }
}

fn atom_matrix_tangent<R: Real>(
    atom: Atom,
    p: &FramedRep<R>,
    state: &MetricState<R>,
    tan: &TangentState<R>,
) -> Mat<R> {
    let q = p.quiver();
    match atom {
        Atom::Arrow(a) => tan.darrows[q.arrow_index(a)].clone(),
        Atom::Frame(v) => {
            let vs = q.vertex(v).unwrap();
            let mut de = Mat::zeros(vs.d, vs.n);
            de.set_col_block(vs.d, &tan.dbias[q.vertex_index(v)]);
            de
        }
        Atom::FrameAdj(v) => {
            let vs = q.vertex(v).unwrap();
            let vi = q.vertex_index(v);
            let mut de = Mat::zeros(vs.d, vs.n);
            de.set_col_block(vs.d, &tan.dbias[vi]);
            // d(E^H H) = dE^H H + E^H dH
            de.adjoint()
                .mul(state.h(v))
                .add(&p.framing(v).adjoint().mul(&tan.dmetrics[vi]))
        }
    }
}

/// Directional derivative of a realized edge label along a chart tangent.
fn realize_edge_tangent<R: Real>(
    label: &EdgeLabel<R>,
    p: &FramedRep<R>,
    state: &MetricState<R>,
    tan: &TangentState<R>,
) -> Mat<R> {
    let rows = block_dim(p, label.cod);
    let cols = block_dim(p, label.dom);
    let mut out = Mat::zeros(rows, cols);
    for term in &label.terms {
        let n = term.atoms.len();
        for k in 0..n {
            let mut m: Option<Mat<R>> = None;
            for (j, &atom) in term.atoms.iter().enumerate() {
                let a = if j == k {
                    atom_matrix_tangent(atom, p, state, tan)
                } else {
                    atom_matrix(atom, p, state)
                };
                m = Some(match m {
                    None => a,
                    Some(prev) => a.mul(&prev),
                });
            }
            out.add_assign(&m.unwrap().scale(term.coeff));
        }
    }
    out
}

/// Realizes the differential of a tree as a 1-form: evaluates the summand
/// chains of `form` at the point and input against a tangent direction in
/// chart coordinates, returning the directional derivative of the output.
pub fn realize_form<R: Real>(
    form: &FormTree<R>,
    tree: &ActivationTree<R>,
    p: &FramedRep<R>,
    sig: &MetricSignature<R>,
    catalog: &ActivationCatalog,
    x: &[C<R>],
    dtheta: &[R],
) -> Result<CVec<R>, MachineError> {
    if !p.is_gauge_fixed(rc::<R>(1e-12)) {
        return Err(MachineError::NotGaugeFixed);
    }
    let state = domain_checked_state(p, sig)?;
    let r = Realization::new(tree, p, &state);
    let (_, tape) = forward_with(tree, &r, catalog, p, x)?;
    let tan = tangent_state(p, &state, dtheta);

    let n_out = p.quiver().vertex(tree.out_block).unwrap().n;
    let mut dy = vec![Complex::new(R::zero(), R::zero()); n_out];
    for summand in &form.summands {
        let suffix_value: CVec<R> = match &summand.suffix {
            Suffix::Unit => x.to_vec(),
            Suffix::Activation {
                activation,
                at_node,
            } => catalog.get(*activation).value(&tape.outputs[*at_node]),
        };
        let dm = realize_edge_tangent(&summand.dlabel, p, &state, &tan);
        let mut v = dm.mul_vec(&suffix_value);
        for step in summand.prefix.iter().rev() {
            let u = &tape.outputs[step.at_node];
            v = catalog.get(step.activation).jvp(u, &v);
            v = realize_edge(&step.label, p, &state).mul_vec(&v);
        }
        dy = vec_add(&dy, &v);
    }
    Ok(dy)
}
