//! Metric-preconditioned gradient descent on the gauge-fixed chart, with
//! domain-preserving backtracking and an optional learnable signature
//! interpolation coefficient.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chart::Chart;
use crate::machine::{backward, cost, ActivationCatalog, Dataset, MachineError};
use crate::mat::Mat;
use crate::metric::{in_domain, moduli_metric_tensor, FdConfig, MetricError, MetricSignature};
use crate::nearring::{parse_algorithm, ActivationTree, NearRingError};
use crate::quiver::Quiver;
use crate::rep::{random_rep, FramedRep, RepError, SampleDomain};
use crate::scalar::{rc, Real, ScalarMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rep(#[from] RepError),
    #[error(transparent)]
    NearRing(#[from] NearRingError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// How the signature is chosen and whether it is learned.
#[derive(Debug, Clone)]
pub enum SignatureSpec<R: Real> {
    Fixed(MetricSignature<R>),
    /// Uniform coefficient s in [-1, 1], appended to the parameter vector and
    /// learned by finite differences.
    Learnable {
        init: R,
    },
}

impl<R: Real> SignatureSpec<R> {
    fn initial(&self) -> MetricSignature<R> {
        match self {
            SignatureSpec::Fixed(s) => s.clone(),
            SignatureSpec::Learnable { init } => MetricSignature::uniform(*init),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig<R: Real> {
    pub quiver: Arc<Quiver>,
    pub algorithm: String,
    pub signature: SignatureSpec<R>,
    /// Signature used for the metric adjoints inside the machine; defaults to
    /// the training signature.
    pub adjoint_signature: Option<MetricSignature<R>>,
    pub learning_rate: R,
    pub max_steps: usize,
    pub backtrack_factor: R,
    pub max_halvings: usize,
    pub seed: u64,
    pub batch: Option<usize>,
    /// Steps between metric-tensor refreshes.
    pub refresh_period: usize,
    pub mode: ScalarMode,
    pub catalog: ActivationCatalog,
    pub fd: FdConfig,
}

impl<R: Real> TrainConfig<R> {
    pub fn new(quiver: Arc<Quiver>, algorithm: &str, sig: MetricSignature<R>) -> Self {
        TrainConfig {
            quiver,
            algorithm: algorithm.to_string(),
            signature: SignatureSpec::Fixed(sig),
            adjoint_signature: None,
            learning_rate: rc(0.1),
            max_steps: 200,
            backtrack_factor: rc(0.5),
            max_halvings: 30,
            seed: 1,
            batch: None,
            refresh_period: 10,
            mode: ScalarMode::Complex,
            catalog: ActivationCatalog::default(),
            fd: FdConfig::default(),
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > R::zero()) {
            return Err(TrainError::InvalidConfig(
                "learning rate must be > 0".into(),
            ));
        }
        if self.refresh_period == 0 {
            return Err(TrainError::InvalidConfig(
                "refresh period must be >= 1".into(),
            ));
        }
        if !(self.backtrack_factor > R::zero() && self.backtrack_factor < R::one()) {
            return Err(TrainError::InvalidConfig(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One accepted (or final rejected) step of a run.
#[derive(Debug, Clone)]
pub struct StepRecord<R: Real> {
    pub step: usize,
    pub cost: R,
    pub grad_norm: R,
    pub step_norm: R,
    /// Per-vertex smallest eigenvalue of the positivity form, in vertex order.
    pub min_eigs: Vec<R>,
    pub signature_value: R,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainHistory<R: Real> {
    pub records: Vec<StepRecord<R>>,
    pub vertex_ids: Vec<u32>,
}

impl<R: Real> TrainHistory<R> {
    pub fn final_cost(&self) -> R {
        self.records.last().map(|r| r.cost).unwrap_or(R::nan())
    }

    pub fn accepted_costs(&self) -> Vec<R> {
        self.records
            .iter()
            .filter(|r| r.accepted || r.step == 0)
            .map(|r| r.cost)
            .collect()
    }
}

/// Outcome of a run: final point, signature, and per-step history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<R: Real> {
    pub point: FramedRep<R>,
    pub signature: MetricSignature<R>,
    pub history: TrainHistory<R>,
}

/// Solves `G v = grad` (Cholesky); identity `G` short-circuits.
pub fn precondition<R: Real>(grad: &[R], g: &Mat<R>) -> Result<Vec<R>, TrainError> {
    let n = grad.len();
    assert_eq!(g.rows(), n, "preconditioner shape");
    let rhs = Mat::from_fn(n, 1, |i, _| num_complex::Complex::new(grad[i], R::zero()));
    let l = g.cholesky().map_err(MetricError::from)?;
    let y = l.solve_lower(&rhs);
    let x = {
        // back substitution with L^H
        let lh = l.adjoint();
        let mut x = Mat::zeros(n, 1);
        for i in (0..n).rev() {
            let mut acc = y[(i, 0)];
            for j in (i + 1)..n {
                acc -= lh[(i, j)] * x[(j, 0)];
            }
            x[(i, 0)] = acc / lh[(i, i)];
        }
        x
    };
    Ok((0..n).map(|i| x[(i, 0)].re).collect())
}

/// Expands the complex Hermitian tensor to the real quadratic form on the
/// chart's interleaved (re, im) coordinates: the Kähler length
/// `X^H conj(g) X` realifies to blocks [[Re g, Im g], [-Im g, Re g]]. Real
/// mode restricts to the real part.
pub fn real_preconditioner<R: Real>(g: &Mat<R>, mode: ScalarMode) -> Mat<R> {
    let m = g.rows();
    match mode {
        ScalarMode::Real => Mat::from_fn(m, m, |i, j| {
            num_complex::Complex::new(g[(i, j)].re, R::zero())
        }),
        ScalarMode::Complex => Mat::from_fn(2 * m, 2 * m, |i, j| {
            let (mu, a) = (i / 2, i % 2);
            let (nu, b) = (j / 2, j % 2);
            let z = g[(mu, nu)];
            let v = match (a, b) {
                (0, 0) | (1, 1) => z.re,
                (0, 1) => z.im,
                (1, 0) => -z.im,
                _ => unreachable!(),
            };
            num_complex::Complex::new(v, R::zero())
        }),
    }
}

struct Problem<R: Real> {
    tree: ActivationTree<R>,
    catalog: ActivationCatalog,
    data: Dataset<R>,
    chart: Chart,
    adjoint_override: Option<MetricSignature<R>>,
    mode: ScalarMode,
}

impl<R: Real> Problem<R> {
    fn adjoint_sig(&self, train_sig: &MetricSignature<R>) -> MetricSignature<R> {
        self.adjoint_override
            .clone()
            .unwrap_or_else(|| train_sig.clone())
    }

    fn cost_at(
        &self,
        coords: &[R],
        sig: &MetricSignature<R>,
        batch: &Dataset<R>,
    ) -> Result<R, MachineError> {
        let p = self.chart.unpack(coords, self.mode);
        cost(&self.tree, &p, &self.adjoint_sig(sig), &self.catalog, batch)
    }

    fn in_domain_at(&self, coords: &[R], sig: &MetricSignature<R>) -> Result<bool, TrainError> {
        let p = self.chart.unpack(coords, self.mode);
        let train_ok = in_domain(&p, sig)?.ok;
        let adj_ok = match &self.adjoint_override {
            Some(s) => in_domain(&p, s)?.ok,
            None => true,
        };
        Ok(train_ok && adj_ok)
    }
}

/// Backtracking outcome: coordinates, signature coefficient, cost, whether
/// the step was accepted, and its norm.
type StepOutcome<R> = (Vec<R>, Option<R>, R, bool, R);

/// One backtracking step from `coords` along `-direction`; returns the new
/// coordinates and acceptance. Backtracks while the candidate leaves the
/// domain or fails to strictly decrease the cost.
#[allow(clippy::too_many_arguments)]
fn backtrack_step<R: Real>(
    problem: &Problem<R>,
    coords: &[R],
    s_value: Option<R>,
    direction: &[R],
    s_direction: R,
    current_cost: R,
    config: &TrainConfig<R>,
    sig_of: impl Fn(Option<R>) -> MetricSignature<R>,
    batch: &Dataset<R>,
) -> Result<StepOutcome<R>, TrainError> {
    let mut eta = config.learning_rate;
    for _ in 0..=config.max_halvings {
        let cand: Vec<R> = coords
            .iter()
            .zip(direction)
            .map(|(c, d)| *c - eta * *d)
            .collect();
        let cand_s = s_value.map(|s| clamp_unit(s - eta * s_direction));
        let sig = sig_of(cand_s);
        if problem.in_domain_at(&cand, &sig)? {
            match problem.cost_at(&cand, &sig, batch) {
                Ok(c) if c < current_cost => {
                    let step_norm = eta
                        * direction
                            .iter()
                            .map(|d| *d * *d)
                            .fold(s_direction * s_direction, |a, b| a + b)
                            .sqrt();
                    return Ok((cand, cand_s, c, true, step_norm));
                }
                _ => {}
            }
        }
        eta *= config.backtrack_factor;
    }
    Ok((coords.to_vec(), s_value, current_cost, false, R::zero()))
}

fn clamp_unit<R: Real>(s: R) -> R {
    s.max(-R::one()).min(R::one())
}

/// One preconditioned, domain-preserving step from `p`; returns the new point
/// and whether a strictly-decreasing in-domain candidate was accepted.
pub fn step_once<R: Real>(
    p: FramedRep<R>,
    config: &TrainConfig<R>,
    data: Dataset<R>,
) -> Result<(FramedRep<R>, bool), TrainError> {
    let mut single = config.clone();
    single.max_steps = 1;
    let outcome = train_from(p, &single, data)?;
    let accepted = outcome
        .history
        .records
        .last()
        .map(|r| r.step > 0 && r.accepted)
        .unwrap_or(false);
    Ok((outcome.point, accepted))
}

/// Runs training from a sampled initial point (see `train_from`).
pub fn train<R: Real>(
    config: &TrainConfig<R>,
    data: Dataset<R>,
) -> Result<TrainOutcome<R>, TrainError> {
    config.validate()?;
    let sig0 = config.signature.initial();
    let domain = if sig0.leading_coeff() < R::zero() {
        SampleDomain::Hyperbolic
    } else {
        SampleDomain::Euclidean
    };
    let p0 = random_rep::<R>(&config.quiver, config.seed, domain, config.mode)?;
    train_from(p0, config, data)
}

/// Metric-preconditioned descent from an explicit gauge-fixed initial point.
pub fn train_from<R: Real>(
    p0: FramedRep<R>,
    config: &TrainConfig<R>,
    data: Dataset<R>,
) -> Result<TrainOutcome<R>, TrainError> {
    config.validate()?;
    let tree = parse_algorithm::<R>(&config.algorithm, &config.quiver, config.catalog.len())?;
    let chart = Chart::new(config.quiver.clone(), config.mode);
    let problem = Problem {
        tree,
        catalog: config.catalog.clone(),
        data,
        chart,
        adjoint_override: config.adjoint_signature.clone(),
        mode: config.mode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E3779B97F4A7C15);
    let mut coords = problem.chart.pack(&p0);
    let mut s_value: Option<R> = match &config.signature {
        SignatureSpec::Learnable { init } => Some(clamp_unit(*init)),
        _ => None,
    };
    let sig_of = |s: Option<R>| -> MetricSignature<R> {
        match (&config.signature, s) {
            (SignatureSpec::Fixed(sig), _) => sig.clone(),
            (SignatureSpec::Learnable { .. }, Some(v)) => MetricSignature::uniform(v),
            (SignatureSpec::Learnable { init }, None) => MetricSignature::uniform(*init),
        }
    };

    let full = &problem.data;
    let batch_of = |rng: &mut ChaCha8Rng| -> Dataset<R> {
        match config.batch {
            None => full.clone(),
            Some(k) => {
                let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..full.len())).collect();
                full.subset(&idx)
            }
        }
    };

    let sig_now = sig_of(s_value);
    let report0 = in_domain(&problem.chart.unpack(&coords, config.mode), &sig_now)?;
    if !report0.ok {
        return Err(TrainError::Metric(MetricError::OutOfDomain {
            vertex: report0.min_eigs[0].0,
            min_eig: report0.min_eigs[0].1.to_f64().unwrap_or(f64::NAN),
        }));
    }
    let mut current_cost = problem.cost_at(&coords, &sig_now, full)?;
    let vertex_ids: Vec<u32> = config.quiver.vertices().iter().map(|v| v.id).collect();
    let mut history = TrainHistory {
        records: vec![StepRecord {
            step: 0,
            cost: current_cost,
            grad_norm: R::zero(),
            step_norm: R::zero(),
            min_eigs: report0.min_eigs.iter().map(|&(_, e)| e).collect(),
            signature_value: sig_now.leading_coeff(),
            accepted: true,
        }],
        vertex_ids,
    };

    let mut preconditioner: Option<Mat<R>> = None;
    for step in 1..=config.max_steps {
        let sig = sig_of(s_value);
        let batch = batch_of(&mut rng);
        let p = problem.chart.unpack(&coords, config.mode);
        let grad = backward(
            &problem.tree,
            &p,
            &problem.adjoint_sig(&sig),
            &problem.catalog,
            &batch,
        )?;
        // signature gradient by central differences
        let s_grad = if let Some(s) = s_value {
            let h = rc::<R>(1e-4);
            let cp = problem.cost_at(&coords, &sig_of(Some(clamp_unit(s + h))), &batch)?;
            let cm = problem.cost_at(&coords, &sig_of(Some(clamp_unit(s - h))), &batch)?;
            (cp - cm) / (h + h)
        } else {
            R::zero()
        };

        // refresh the preconditioner on schedule
        if (step - 1) % config.refresh_period == 0 {
            preconditioner = if sig.is_euclidean() {
                None
            } else {
                match moduli_metric_tensor(&p, &sig, &config.fd) {
                    Ok(g) => Some(real_preconditioner(&g, config.mode)),
                    // near the domain boundary the tensor can fail; fall back
                    // to the unpreconditioned direction for this refresh window
                    Err(MetricError::OutOfDomain { .. }) | Err(MetricError::NonPositive { .. }) => {
                        None
                    }
                    Err(e) => return Err(e.into()),
                }
            };
        }
        let direction = match &preconditioner {
            None => grad.clone(),
            Some(g) => precondition(&grad, g)?,
        };

        let grad_norm = grad
            .iter()
            .map(|v| *v * *v)
            .fold(s_grad * s_grad, |a, b| a + b)
            .sqrt();
        let batch_cost = problem.cost_at(&coords, &sig, &batch)?;
        let (new_coords, new_s, _, accepted, step_norm) = backtrack_step(
            &problem, &coords, s_value, &direction, s_grad, batch_cost, config, sig_of, &batch,
        )?;
        if !accepted {
            history.records.push(StepRecord {
                step,
                cost: current_cost,
                grad_norm,
                step_norm: R::zero(),
                min_eigs: history.records.last().unwrap().min_eigs.clone(),
                signature_value: sig.leading_coeff(),
                accepted: false,
            });
            break;
        }
        coords = new_coords;
        s_value = new_s;
        let sig_new = sig_of(s_value);
        let p_new = problem.chart.unpack(&coords, config.mode);
        let report = in_domain(&p_new, &sig_new)?;
        debug_assert!(report.ok, "accepted step left the domain");
        // full-dataset cost for the record (equals the batch cost when
        // training full-batch)
        current_cost = problem.cost_at(&coords, &sig_new, full)?;
        debug_assert!(current_cost.is_finite(), "recorded cost must be finite");
        history.records.push(StepRecord {
            step,
            cost: current_cost,
            grad_norm,
            step_norm,
            min_eigs: report.min_eigs.iter().map(|&(_, e)| e).collect(),
            signature_value: sig_new.leading_coeff(),
            accepted: true,
        });
        if grad_norm < rc::<R>(1e-14) {
            break;
        }
    }

    let point = problem.chart.unpack(&coords, config.mode);
    Ok(TrainOutcome {
        point,
        signature: sig_of(s_value),
        history,
    })
}
