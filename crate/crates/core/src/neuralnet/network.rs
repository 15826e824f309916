//! The shared factored Q-network.
//!
//! Every agent's observation block goes through the same two-layer encoder.
//! For the queried agent the encoded feature is followed by its one-hot
//! identity and its previous action, then by the features of all other
//! agents in camera order. That joint feature feeds a dense layer, a
//! recurrent cell and three heads producing 3 Q-values each (translation,
//! rotation, zoom).

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, CellTrace, DenseLayer, RecurrentCell};
use super::NetError;
use crate::perception::LAST_ACTION_WIDTH;

pub const BRANCHES: usize = 3;
pub const CHOICES: usize = 3;
pub const Q_WIDTH: usize = BRANCHES * CHOICES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub observation_dim: usize,
    pub n_agents: usize,
    pub encoder1: usize,
    pub encoder2: usize,
    pub trunk: usize,
    pub hidden: usize,
}

impl Topology {
    pub fn joint_feature_dim(&self) -> usize {
        self.n_agents * self.encoder2 + self.n_agents + LAST_ACTION_WIDTH
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let sizes = [
            self.observation_dim,
            self.n_agents,
            self.encoder1,
            self.encoder2,
            self.trunk,
            self.hidden,
        ];
        if sizes.contains(&0) {
            return Err(NetError::InvalidTopology(*self));
        }
        Ok(())
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "obs={} agents={} enc={}x{} trunk={} hidden={}",
            self.observation_dim, self.n_agents, self.encoder1, self.encoder2, self.trunk, self.hidden
        )
    }
}

/// All weights of the network. The same type also carries gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub topology: Topology,
    pub encoder1: DenseLayer,
    pub encoder2: DenseLayer,
    pub trunk: DenseLayer,
    pub cell: RecurrentCell,
    pub heads: [DenseLayer; BRANCHES],
}

impl NetworkParams {
    pub fn zeros(topology: Topology) -> Self {
        Self {
            topology,
            encoder1: DenseLayer::zeros(topology.observation_dim, topology.encoder1, Activation::Relu),
            encoder2: DenseLayer::zeros(topology.encoder1, topology.encoder2, Activation::Relu),
            trunk: DenseLayer::zeros(topology.joint_feature_dim(), topology.trunk, Activation::Relu),
            cell: RecurrentCell::zeros(topology.trunk, topology.hidden),
            heads: std::array::from_fn(|_| DenseLayer::zeros(topology.hidden, CHOICES, Activation::Identity)),
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(topology: Topology, seed: u64) -> Result<Self, NetError> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = topology;
        Ok(Self {
            topology,
            encoder1: DenseLayer::random(t.observation_dim, t.encoder1, Activation::Relu, &mut rng),
            encoder2: DenseLayer::random(t.encoder1, t.encoder2, Activation::Relu, &mut rng),
            trunk: DenseLayer::random(t.joint_feature_dim(), t.trunk, Activation::Relu, &mut rng),
            cell: RecurrentCell::random(t.trunk, t.hidden, &mut rng),
            heads: std::array::from_fn(|_| DenseLayer::random(t.hidden, CHOICES, Activation::Identity, &mut rng)),
        })
    }

    /// Every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(21);
        for l in [&self.encoder1, &self.encoder2, &self.trunk] {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        let c = &self.cell;
        for m in [&c.w_r, &c.w_z, &c.w_n, &c.u_r, &c.u_z, &c.u_n] {
            out.push(m.as_slice().expect("standard layout"));
        }
        for b in [&c.b_r, &c.b_z, &c.b_n] {
            out.push(b.as_slice().expect("standard layout"));
        }
        for h in &self.heads {
            out.push(h.weight.as_slice().expect("standard layout"));
            out.push(h.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(21);
        for l in [&mut self.encoder1, &mut self.encoder2, &mut self.trunk] {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        let c = &mut self.cell;
        for m in [&mut c.w_r, &mut c.w_z, &mut c.w_n, &mut c.u_r, &mut c.u_z, &mut c.u_n] {
            out.push(m.as_slice_mut().expect("standard layout"));
        }
        for b in [&mut c.b_r, &mut c.b_z, &mut c.b_n] {
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        for h in &mut self.heads {
            out.push(h.weight.as_slice_mut().expect("standard layout"));
            out.push(h.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Deep copy; used to refresh the target network.
pub fn copy_params(src: &NetworkParams) -> NetworkParams {
    src.clone()
}

/// One agent query: which group (episode) and which agent within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub group: usize,
    pub agent: usize,
}

/// Inputs for one time step of a batch.
///
/// `observations` holds `groups * n_agents` rows, row `g * n_agents + a`
/// being agent `a` of group `g`. `last_actions` holds one row per query.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub observations: Array2<f64>,
    pub last_actions: Array2<f64>,
    pub queries: Vec<Query>,
}

impl StepInput {
    /// All agents of all groups queried, in row order.
    pub fn all_agents(observations: Array2<f64>, last_actions: Array2<f64>, n_agents: usize) -> Self {
        let groups = observations.nrows() / n_agents;
        let queries = (0..groups)
            .flat_map(|group| (0..n_agents).map(move |agent| Query { group, agent }))
            .collect();
        Self {
            observations,
            last_actions,
            queries,
        }
    }
}

/// Values cached by one forward step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub observations: Array2<f64>,
    pub encoded1: Array2<f64>,
    pub encoded2: Array2<f64>,
    pub joint: Array2<f64>,
    pub trunk: Array2<f64>,
    pub cell: CellTrace,
    pub hidden: Array2<f64>,
    pub queries: Vec<Query>,
}

/// Output of one forward step: `q` has one row per query, laid out as three
/// consecutive 3-way branches.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub q: Array2<f64>,
    pub hidden: Array2<f64>,
}

fn check_input(params: &NetworkParams, input: &StepInput, hidden: &Array2<f64>) -> Result<(), NetError> {
    let t = &params.topology;
    let shape_err = |what: &str, expected: usize, got: usize| {
        Err(NetError::Shape(format!("{what}: expected {expected}, got {got}")))
    };
    if input.observations.ncols() != t.observation_dim {
        return shape_err("observation width", t.observation_dim, input.observations.ncols());
    }
    if !input.observations.nrows().is_multiple_of(t.n_agents) {
        return shape_err(
            "observation rows (multiple of agents)",
            t.n_agents,
            input.observations.nrows(),
        );
    }
    let groups = input.observations.nrows() / t.n_agents;
    if input.last_actions.dim() != (input.queries.len(), LAST_ACTION_WIDTH) {
        return shape_err("last action rows", input.queries.len(), input.last_actions.nrows());
    }
    if hidden.dim() != (input.queries.len(), t.hidden) {
        return shape_err("hidden rows", input.queries.len(), hidden.nrows());
    }
    if let Some(q) = input
        .queries
        .iter()
        .find(|q| q.group >= groups || q.agent >= t.n_agents)
    {
        return Err(NetError::Shape(format!("query {q:?} outside {groups} groups")));
    }
    Ok(())
}

/// Runs one time step for every query.
pub fn forward_step(
    params: &NetworkParams,
    input: &StepInput,
    hidden: &Array2<f64>,
) -> Result<(StepOutput, StepTrace), NetError> {
    check_input(params, input, hidden)?;
    let t = &params.topology;
    let encoded1 = params.encoder1.forward(input.observations.view());
    let encoded2 = params.encoder2.forward(encoded1.view());

    let e = t.encoder2;
    let n = t.n_agents;
    let mut joint = Array2::zeros((input.queries.len(), t.joint_feature_dim()));
    for (row, q) in input.queries.iter().enumerate() {
        let base = q.group * n;
        let mut dst = joint.row_mut(row);
        dst.slice_mut(s![..e]).assign(&encoded2.row(base + q.agent));
        dst[e + q.agent] = 1.0;
        dst.slice_mut(s![e + n..e + n + LAST_ACTION_WIDTH])
            .assign(&input.last_actions.row(row));
        let mut offset = e + n + LAST_ACTION_WIDTH;
        for other in (0..n).filter(|&a| a != q.agent) {
            dst.slice_mut(s![offset..offset + e]).assign(&encoded2.row(base + other));
            offset += e;
        }
    }
    let trunk = params.trunk.forward(joint.view());
    let (new_hidden, cell) = params.cell.forward(trunk.view(), hidden.view());
    let mut q = Array2::zeros((input.queries.len(), Q_WIDTH));
    for (k, head) in params.heads.iter().enumerate() {
        q.slice_mut(s![.., k * CHOICES..(k + 1) * CHOICES])
            .assign(&head.forward(new_hidden.view()));
    }
    let trace = StepTrace {
        observations: input.observations.clone(),
        encoded1,
        encoded2,
        joint,
        trunk,
        cell,
        hidden: new_hidden.clone(),
        queries: input.queries.clone(),
    };
    Ok((
        StepOutput {
            q,
            hidden: new_hidden,
        },
        trace,
    ))
}

/// Forward pass for a single agent query. `blocks` holds the observation
/// block of every agent in camera order.
pub fn forward(
    params: &NetworkParams,
    blocks: &[&[f64]],
    last_action: &[f64],
    agent_index: usize,
    hidden_in: ArrayView1<'_, f64>,
) -> Result<([[f64; CHOICES]; BRANCHES], Array1<f64>, StepTrace), NetError> {
    let t = &params.topology;
    if blocks.len() != t.n_agents {
        return Err(NetError::Shape(format!("expected {} blocks, got {}", t.n_agents, blocks.len())));
    }
    let mut obs = Array2::zeros((t.n_agents, t.observation_dim));
    for (i, b) in blocks.iter().enumerate() {
        if b.len() != t.observation_dim {
            return Err(NetError::Shape(format!(
                "block {i} has {} values, expected {}",
                b.len(),
                t.observation_dim
            )));
        }
        obs.row_mut(i).assign(&ArrayView1::from(*b));
    }
    if last_action.len() != LAST_ACTION_WIDTH {
        return Err(NetError::Shape(format!("last action has {} values", last_action.len())));
    }
    let input = StepInput {
        observations: obs,
        last_actions: ArrayView1::from(last_action).insert_axis(Axis(0)).to_owned(),
        queries: vec![Query {
            group: 0,
            agent: agent_index,
        }],
    };
    let hidden = hidden_in.insert_axis(Axis(0)).to_owned();
    let (out, trace) = forward_step(params, &input, &hidden)?;
    let q = std::array::from_fn(|k| std::array::from_fn(|c| out.q[[0, k * CHOICES + c]]));
    Ok((q, out.hidden.row(0).to_owned(), trace))
}

/// Backpropagation through time. `traces[t]` and `dq[t]` belong to step
/// `t`; the hidden state entering step 0 is treated as a constant.
pub fn backward(
    params: &NetworkParams,
    traces: &[StepTrace],
    dq: &[Array2<f64>],
) -> Result<NetworkParams, NetError> {
    if traces.len() != dq.len() {
        return Err(NetError::Shape(format!(
            "{} traces but {} output gradients",
            traces.len(),
            dq.len()
        )));
    }
    let t = &params.topology;
    let mut grad = NetworkParams::zeros(*t);
    let mut dh_next: Option<Array2<f64>> = None;
    for (trace, dq_t) in traces.iter().zip(dq).rev() {
        if dq_t.dim() != (trace.queries.len(), Q_WIDTH) {
            return Err(NetError::Shape(format!("output gradient shape {:?}", dq_t.dim())));
        }
        let mut dh = dh_next.take().unwrap_or_else(|| Array2::zeros((trace.queries.len(), t.hidden)));
        for (k, head) in params.heads.iter().enumerate() {
            let d = dq_t.slice(s![.., k * CHOICES..(k + 1) * CHOICES]).to_owned();
            let dx = head
                .backward(trace.hidden.view(), None, d, &mut grad.heads[k], true)
                .expect("input grad requested");
            dh += &dx;
        }
        let (dtrunk, dh_prev) = params.cell.backward(trace.trunk.view(), &trace.cell, &dh, &mut grad.cell);
        dh_next = Some(dh_prev);
        let djoint = params
            .trunk
            .backward(trace.joint.view(), Some(trace.trunk.view()), dtrunk, &mut grad.trunk, true)
            .expect("input grad requested");

        let e = t.encoder2;
        let n = t.n_agents;
        let mut denc2 = Array2::zeros(trace.encoded2.raw_dim());
        for (row, q) in trace.queries.iter().enumerate() {
            let base = q.group * n;
            let src = djoint.row(row);
            let mut own = denc2.row_mut(base + q.agent);
            own += &src.slice(s![..e]);
            let mut offset = e + n + LAST_ACTION_WIDTH;
            for other in (0..n).filter(|&a| a != q.agent) {
                let mut dst = denc2.row_mut(base + other);
                dst += &src.slice(s![offset..offset + e]);
                offset += e;
            }
        }
        let denc1 = params
            .encoder2
            .backward(trace.encoded1.view(), Some(trace.encoded2.view()), denc2, &mut grad.encoder2, true)
            .expect("input grad requested");
        params
            .encoder1
            .backward(trace.observations.view(), Some(trace.encoded1.view()), denc1, &mut grad.encoder1, false);
    }
    Ok(grad)
}
