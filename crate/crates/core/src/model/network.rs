use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ContinuousMatrices, StateSpaceModel};

/// A capacitive temperature node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    /// Capacity parameter (J/K, multiplied by the network's `capacity_scale`).
    pub capacity: String,
    /// Standard deviation of the discrete process noise on this state.
    pub process_noise: String,
    /// Initial-condition parameter. Without one, the filter starts this
    /// state at the first output measurement.
    #[serde(default)]
    pub initial: Option<String>,
}

/// A thermal resistance between two nodes, or a node and a boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub resistance: String,
    pub from: String,
    pub to: String,
}

/// A heat-flow signal injected into a node, optionally through an
/// aperture/gain parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSpec {
    pub signal: String,
    pub node: String,
    #[serde(default)]
    pub gain: Option<String>,
}

/// Declarative RC network description.
///
/// The input vector is ordered as `boundaries` followed by `heat_inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalNetworkSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Exogenous temperature signals (°C).
    pub boundaries: Vec<String>,
    /// Exogenous heat-flow signals (W).
    pub heat_inputs: Vec<String>,
    pub gains: Vec<GainSpec>,
    /// Measured node; exactly one is required.
    pub outputs: Vec<String>,
    /// Name of the measured output signal in datasets.
    pub output_signal: String,
    pub measurement_noise: String,
    /// Multiplier applied to capacity parameters (e.g. 1e8 when
    /// capacities are expressed in units of 10^8 J/K).
    #[serde(default = "one")]
    pub capacity_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    A,
    B,
    Sw,
    Sv,
}

/// `coef * prod(theta[p]^e)` contributing to one matrix entry.
#[derive(Debug, Clone)]
struct Term {
    slot: Slot,
    row: usize,
    col: usize,
    coef: f64,
    factors: Vec<(usize, i32)>,
}

impl Term {
    fn value(&self, theta: &[f64]) -> f64 {
        self.factors
            .iter()
            .fold(self.coef, |acc, &(p, e)| acc * theta[p].powi(e))
    }

    fn partial(&self, theta: &[f64], index: usize) -> Option<f64> {
        let (_, e) = *self.factors.iter().find(|(p, _)| *p == index)?;
        let mut v = self.coef * e as f64;
        for &(p, ep) in &self.factors {
            let exp = if p == index { ep - 1 } else { ep };
            v *= theta[p].powi(exp);
        }
        Some(v)
    }
}

/// State-space model assembled from a [`ThermalNetworkSpec`] by heat
/// balance at each node.
#[derive(Debug, Clone)]
pub struct ThermalNetwork {
    spec: ThermalNetworkSpec,
    params: Vec<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    terms: Vec<Term>,
    output_node: usize,
    initial: Vec<Option<usize>>,
    positive: Vec<usize>,
}

impl ThermalNetwork {
    /// Resolve `spec` against the ordered parameter list and validate it.
    pub fn new(spec: ThermalNetworkSpec, params: &[String]) -> Result<Self> {
        let pindex: HashMap<&str, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        if pindex.len() != params.len() {
            return Err(Error::Network("duplicate parameter names".into()));
        }
        let param = |name: &str| -> Result<usize> {
            pindex
                .get(name)
                .copied()
                .ok_or_else(|| Error::Network(format!("unknown parameter `{name}`")))
        };

        let n = spec.nodes.len();
        if n == 0 {
            return Err(Error::Network("network has no nodes".into()));
        }
        let mut node_index = HashMap::new();
        for (i, node) in spec.nodes.iter().enumerate() {
            if node_index.insert(node.name.as_str(), i).is_some() {
                return Err(Error::Network(format!("duplicate node `{}`", node.name)));
            }
        }
        let boundary_index: HashMap<&str, usize> = spec
            .boundaries
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_str(), i))
            .collect();
        let nb = spec.boundaries.len();
        let heat_index: HashMap<&str, usize> = spec
            .heat_inputs
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), nb + i))
            .collect();
        for name in spec.boundaries.iter().chain(&spec.heat_inputs) {
            if node_index.contains_key(name.as_str()) {
                return Err(Error::Network(format!("signal `{name}` clashes with a node name")));
            }
        }
        if boundary_index.len() + heat_index.len() != nb + spec.heat_inputs.len() {
            return Err(Error::Network("duplicate input signal names".into()));
        }

        let output_node = match spec.outputs.as_slice() {
            [single] => *node_index
                .get(single.as_str())
                .ok_or_else(|| Error::Network(format!("output `{single}` is not a node")))?,
            [] => return Err(Error::Network("no output node declared".into())),
            _ => {
                return Err(Error::Network(format!(
                    "exactly one output node is required, got {:?}",
                    spec.outputs
                )))
            }
        };

        let scale = spec.capacity_scale;
        if !(scale > 0.0) {
            return Err(Error::Network("capacity_scale must be positive".into()));
        }
        let inv_scale = 1.0 / scale;
        let mut terms = Vec::new();
        let mut positive = HashSet::new();
        let mut capacity = Vec::with_capacity(n);
        for node in &spec.nodes {
            let c = param(&node.capacity)?;
            positive.insert(c);
            capacity.push(c);
        }

        // adjacency for the excitability check
        let mut adj = vec![Vec::new(); n];
        let mut excited = vec![false; n];

        for edge in &spec.edges {
            let r = param(&edge.resistance)?;
            positive.insert(r);
            let from = node_index.get(edge.from.as_str()).copied();
            let to = node_index.get(edge.to.as_str()).copied();
            let endpoint_ok =
                |name: &str, idx: Option<usize>| idx.is_some() || boundary_index.contains_key(name);
            if !endpoint_ok(&edge.from, from) {
                return Err(Error::Network(format!("edge endpoint `{}` does not exist", edge.from)));
            }
            if !endpoint_ok(&edge.to, to) {
                return Err(Error::Network(format!("edge endpoint `{}` does not exist", edge.to)));
            }
            match (from, to) {
                (Some(j), Some(k)) => {
                    if j == k {
                        return Err(Error::Network(format!("self-loop on node `{}`", edge.from)));
                    }
                    for (a, b) in [(j, k), (k, j)] {
                        let f = vec![(r, -1), (capacity[a], -1)];
                        terms.push(Term { slot: Slot::A, row: a, col: a, coef: -inv_scale, factors: f.clone() });
                        terms.push(Term { slot: Slot::A, row: a, col: b, coef: inv_scale, factors: f });
                    }
                    adj[j].push(k);
                    adj[k].push(j);
                }
                (Some(j), None) | (None, Some(j)) => {
                    let bname = if from.is_some() { &edge.to } else { &edge.from };
                    let b = boundary_index[bname.as_str()];
                    let f = vec![(r, -1), (capacity[j], -1)];
                    terms.push(Term { slot: Slot::A, row: j, col: j, coef: -inv_scale, factors: f.clone() });
                    terms.push(Term { slot: Slot::B, row: j, col: b, coef: inv_scale, factors: f });
                    excited[j] = true;
                }
                (None, None) => {
                    return Err(Error::Network(format!(
                        "edge `{}` connects two boundaries",
                        edge.resistance
                    )))
                }
            }
        }

        for gain in &spec.gains {
            let j = *node_index
                .get(gain.node.as_str())
                .ok_or_else(|| Error::Network(format!("gain targets unknown node `{}`", gain.node)))?;
            let col = *heat_index
                .get(gain.signal.as_str())
                .ok_or_else(|| Error::Network(format!("unknown heat input `{}`", gain.signal)))?;
            let mut f = vec![(capacity[j], -1)];
            if let Some(g) = &gain.gain {
                f.push((param(g)?, 1));
            }
            terms.push(Term { slot: Slot::B, row: j, col, coef: inv_scale, factors: f });
            excited[j] = true;
        }

        // every node must reach an excited node through node-node edges
        let mut reach = excited.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| excited[i]).collect();
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                if !reach[k] {
                    reach[k] = true;
                    queue.push_back(k);
                }
            }
        }
        if let Some(i) = reach.iter().position(|r| !r) {
            return Err(Error::Network(format!(
                "node `{}` is disconnected from every boundary and heat input",
                spec.nodes[i].name
            )));
        }
        if reach.iter().all(|&r| r) && !excited.iter().any(|&e| e) {
            return Err(Error::Network("network has no inputs".into()));
        }

        let mut initial = Vec::with_capacity(n);
        for (j, node) in spec.nodes.iter().enumerate() {
            let s = param(&node.process_noise)?;
            terms.push(Term { slot: Slot::Sw, row: j, col: j, coef: 1.0, factors: vec![(s, 1)] });
            initial.push(match &node.initial {
                Some(p) => Some(param(p)?),
                None => None,
            });
        }
        let v = param(&spec.measurement_noise)?;
        terms.push(Term { slot: Slot::Sv, row: 0, col: 0, coef: 1.0, factors: vec![(v, 1)] });

        let mut inputs = spec.boundaries.clone();
        inputs.extend(spec.heat_inputs.iter().cloned());
        let mut positive: Vec<usize> = positive.into_iter().collect();
        positive.sort_unstable();
        Ok(Self {
            outputs: vec![spec.output_signal.clone()],
            spec,
            params: params.to_vec(),
            inputs,
            terms,
            output_node,
            initial,
            positive,
        })
    }

    pub fn spec(&self) -> &ThermalNetworkSpec {
        &self.spec
    }

    fn check_positive(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                theta.len()
            )));
        }
        for &p in &self.positive {
            if !(theta[p] > 0.0) {
                return Err(Error::NonPositive { name: self.params[p].clone(), value: theta[p] });
            }
        }
        Ok(())
    }

    fn empty(&self) -> ContinuousMatrices {
        let n = self.spec.nodes.len();
        let mut c = DMatrix::zeros(1, n);
        c[(0, self.output_node)] = 1.0;
        ContinuousMatrices {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, self.inputs.len()),
            c,
            sw: DMatrix::zeros(n, n),
            sv: DMatrix::zeros(1, 1),
        }
    }
}

fn slot_mut(m: &mut ContinuousMatrices, slot: Slot) -> &mut DMatrix<f64> {
    match slot {
        Slot::A => &mut m.a,
        Slot::B => &mut m.b,
        Slot::Sw => &mut m.sw,
        Slot::Sv => &mut m.sv,
    }
}

impl StateSpaceModel for ThermalNetwork {
    fn n_states(&self) -> usize {
        self.spec.nodes.len()
    }

    fn input_names(&self) -> &[String] {
        &self.inputs
    }

    fn output_names(&self) -> &[String] {
        &self.outputs
    }

    fn param_names(&self) -> &[String] {
        &self.params
    }

    fn matrices(&self, theta: &[f64]) -> Result<ContinuousMatrices> {
        self.check_positive(theta)?;
        let mut m = self.empty();
        for t in &self.terms {
            slot_mut(&mut m, t.slot)[(t.row, t.col)] += t.value(theta);
        }
        Ok(m)
    }

    fn partials(&self, theta: &[f64], index: usize) -> Result<ContinuousMatrices> {
        self.check_positive(theta)?;
        let mut m = self.empty();
        m.c.fill(0.0);
        for t in &self.terms {
            if let Some(v) = t.partial(theta, index) {
                slot_mut(&mut m, t.slot)[(t.row, t.col)] += v;
            }
        }
        Ok(m)
    }

    fn initial_mean(&self, theta: &[f64], first_output: &[f64]) -> DVector<f64> {
        let y0 = first_output.first().copied().unwrap_or(0.0);
        DVector::from_iterator(
            self.initial.len(),
            self.initial.iter().map(|p| p.map_or(y0, |i| theta[i])),
        )
    }

    fn initial_mean_partial(&self, _theta: &[f64], index: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.initial.len(),
            self.initial.iter().map(|p| if *p == Some(index) { 1.0 } else { 0.0 }),
        )
    }

    fn has_initial_parameter(&self, state: usize) -> bool {
        self.initial[state].is_some()
    }
}
