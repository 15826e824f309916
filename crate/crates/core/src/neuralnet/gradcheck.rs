//! Central finite-difference check of the analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::uniform_matrix;
use super::network::{backward, forward_step, NetworkParams, StepInput, StepTrace, Topology, Q_WIDTH};
use super::{Activation, NetError};
use crate::perception::LAST_ACTION_WIDTH;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Instances with a rectifier input closer to zero than this are redrawn,
/// since a finite difference straddling the kink is meaningless.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub topology: Topology,
    pub steps: usize,
    pub groups: usize,
    pub parameters: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub trials: Vec<TrialResult>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.trials.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < GRADCHECK_TOLERANCE
    }
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

struct Instance {
    inputs: Vec<StepInput>,
    hidden0: Array2<f64>,
    targets: Vec<Array2<f64>>,
    masks: Vec<Array2<f64>>,
}

fn loss(params: &NetworkParams, inst: &Instance) -> Result<(f64, Vec<StepTrace>, Vec<Array2<f64>>), NetError> {
    let mut h = inst.hidden0.clone();
    let mut total = 0.0;
    let mut traces = Vec::with_capacity(inst.inputs.len());
    let mut dq = Vec::with_capacity(inst.inputs.len());
    for ((input, y), mask) in inst.inputs.iter().zip(&inst.targets).zip(&inst.masks) {
        let (out, trace) = forward_step(params, input, &h)?;
        let diff = (&out.q - y) * mask;
        total += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        dq.push(diff);
        traces.push(trace);
        h = out.hidden;
    }
    Ok((total, traces, dq))
}

fn nearest_kink(params: &NetworkParams, traces: &[StepTrace]) -> f64 {
    let linear = |l: &super::DenseLayer| super::DenseLayer {
        activation: Activation::Identity,
        ..l.clone()
    };
    let (e1, e2, tr) = (linear(&params.encoder1), linear(&params.encoder2), linear(&params.trunk));
    traces
        .iter()
        .flat_map(|t| {
            [
                e1.forward(t.observations.view()),
                e2.forward(t.encoded1.view()),
                tr.forward(t.joint.view()),
            ]
        })
        .flat_map(|a| a.into_iter())
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

fn random_instance(rng: &mut ChaCha8Rng) -> Result<(NetworkParams, Instance), NetError> {
    let topology = Topology {
        observation_dim: rng.random_range(2..=5),
        n_agents: rng.random_range(1..=3),
        encoder1: rng.random_range(2..=4),
        encoder2: rng.random_range(2..=4),
        trunk: rng.random_range(2..=5),
        hidden: rng.random_range(2..=4),
    };
    let mut params = NetworkParams::init(topology, rng.random())?;
    for b in [&mut params.encoder1.bias, &mut params.encoder2.bias, &mut params.trunk.bias] {
        b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let steps = rng.random_range(1..=4);
    let groups = rng.random_range(1..=2);
    let rows = groups * topology.n_agents;
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    let mut masks = Vec::with_capacity(steps);
    for _ in 0..steps {
        let obs = uniform_matrix(rows, topology.observation_dim, 1.0, rng);
        let last = uniform_matrix(rows, LAST_ACTION_WIDTH, 1.0, rng);
        inputs.push(StepInput::all_agents(obs, last, topology.n_agents));
        targets.push(uniform_matrix(rows, Q_WIDTH, 1.0, rng));
        masks.push(Array2::from_shape_simple_fn((rows, Q_WIDTH), || {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        }));
    }
    let hidden0 = uniform_matrix(rows, topology.hidden, 0.5, rng);
    Ok((
        params,
        Instance {
            inputs,
            hidden0,
            targets,
            masks,
        },
    ))
}

/// Compares backpropagated gradients against central differences on
/// `trials` random small networks and sequences. `fault` perturbs the first
/// analytic gradient entry (`g -> g (1 + f) + f`) to exercise the failure
/// path.
pub fn gradient_check(seed: u64, trials: usize, fault: Option<f64>) -> Result<GradCheckReport, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    while report.trials.len() < trials {
        let (params, inst) = random_instance(&mut rng)?;
        let (_, traces, dq) = loss(&params, &inst)?;
        if nearest_kink(&params, &traces) < KINK_MARGIN {
            continue;
        }
        let mut grad = backward(&params, &traces, &dq)?;
        if let Some(f) = fault {
            if let Some(g) = grad.tensors_mut().into_iter().flat_map(|t| t.iter_mut()).next() {
                *g = *g * (1.0 + f) + f;
            }
        }
        let mut probe = params.clone();
        let mut worst: f64 = 0.0;
        let analytic: Vec<f64> = grad.tensors().into_iter().flatten().copied().collect();
        let n = analytic.len();
        for (k, &a) in analytic.iter().enumerate() {
            let original = params.tensors().into_iter().flatten().nth(k).copied().expect("index in range");
            let set = |p: &mut NetworkParams, v: f64| {
                *p.tensors_mut().into_iter().flat_map(|t| t.iter_mut()).nth(k).expect("index in range") = v;
            };
            set(&mut probe, original + GRADCHECK_STEP);
            let (plus, _, _) = loss(&probe, &inst)?;
            set(&mut probe, original - GRADCHECK_STEP);
            let (minus, _, _) = loss(&probe, &inst)?;
            set(&mut probe, original);
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
        report.trials.push(TrialResult {
            topology: params.topology,
            steps: inst.inputs.len(),
            groups: inst.hidden0.nrows() / params.topology.n_agents,
            parameters: n,
            max_relative_error: worst,
        });
    }
    Ok(report)
}
