//! Chains of simulators, each replaced by an emulator or kept as an exact
//! function, with second-order beliefs pushed forward link by link.
//!
//! The output belief of node i becomes an [`UncertainInput`] of node i + 1
//! after an optional index selection and affine map. Every propagated input
//! receives a fresh identity token and is treated as uncorrelated with the
//! downstream emulator's training runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::SecondOrderSpec;
use crate::ddr::SyntheticDDR;
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::linalg::clip_rounding;
use crate::uncertain::{InputId, UncertainInput};

type ExactFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Negative eigenvalues of a propagated covariance smaller than this
/// multiple of the node's largest output variance are rounding and are
/// clipped to zero before the next link.
pub const PROPAGATION_PSD_TOL: f64 = 1e-8;

/// One stage of a chain.
#[derive(Clone)]
pub enum SimulatorNode {
    Emulator(Arc<EmulatorModel>),
    /// A function evaluated only at known inputs.
    Exact {
        name: String,
        p: usize,
        q: usize,
        func: Arc<ExactFn>,
    },
}

impl fmt::Debug for SimulatorNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimulatorNode::Emulator(m) => write!(f, "Emulator({} → {})", m.input_dim(), m.output_dim()),
            SimulatorNode::Exact { name, p, q, .. } => write!(f, "Exact({name}: {p} → {q})"),
        }
    }
}

impl SimulatorNode {
    pub fn emulator(model: EmulatorModel) -> Self {
        SimulatorNode::Emulator(Arc::new(model))
    }

    pub fn exact(
        name: impl Into<String>,
        p: usize,
        q: usize,
        func: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        SimulatorNode::Exact {
            name: name.into(),
            p,
            q,
            func: Arc::new(func),
        }
    }

    pub fn identity(p: usize) -> Self {
        Self::exact("identity", p, p, |x| x.clone())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SimulatorNode::Emulator(m) => m.input_dim(),
            SimulatorNode::Exact { p, .. } => *p,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SimulatorNode::Emulator(m) => m.output_dim(),
            SimulatorNode::Exact { q, .. } => *q,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SimulatorNode::Emulator(_) => "emulator".to_string(),
            SimulatorNode::Exact { name, .. } => name.clone(),
        }
    }

    fn eval_exact(name: &str, q: usize, func: &ExactFn, x: &DVector<f64>) -> Result<DVector<f64>> {
        let y = func(x);
        if y.len() != q {
            return Err(Error::ArityMismatch {
                context: format!("output of exact node `{name}`"),
                expected: q,
                found: y.len(),
            });
        }
        Ok(y)
    }

    /// Second-order belief about this node's output at `input`.
    pub fn predict(&self, input: &UncertainInput) -> Result<SecondOrderSpec> {
        match self {
            SimulatorNode::Emulator(m) => {
                let pred = m.predict_uncertain(input)?;
                let scale = m.kernel().sigma().diagonal().max();
                Ok(SecondOrderSpec::from_parts(pred.mean, clip_rounding(pred.cov, scale, PROPAGATION_PSD_TOL)?))
            }
            SimulatorNode::Exact { name, q, func, .. } => {
                if !input.is_known() {
                    return Err(Error::ExactNodeNeedsKnownInput(name.clone()));
                }
                Ok(SecondOrderSpec::known(Self::eval_exact(name, *q, func.as_ref(), input.mean())?))
            }
        }
    }

    /// Point value at a known input. Emulators return their adjusted mean.
    pub fn eval_known(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            SimulatorNode::Emulator(m) => Ok(m.predict_known(x)?.mean),
            SimulatorNode::Exact { name, q, func, .. } => Self::eval_exact(name, *q, func.as_ref(), x),
        }
    }
}

/// How the outputs of one node feed the inputs of the next: first pick
/// (and reorder) components by `indices`, then apply y ↦ A·y + b.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub indices: Vec<usize>,
    pub affine: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Link {
    /// Passes all `q` outputs through unchanged.
    pub fn direct(q: usize) -> Self {
        Self {
            indices: (0..q).collect(),
            affine: None,
        }
    }

    pub fn select(indices: Vec<usize>) -> Self {
        Self { indices, affine: None }
    }

    pub fn with_affine(mut self, scale: DMatrix<f64>, offset: DVector<f64>) -> Self {
        self.affine = Some((scale, offset));
        self
    }

    pub fn output_dim(&self) -> usize {
        match &self.affine {
            Some((a, _)) => a.nrows(),
            None => self.indices.len(),
        }
    }

    pub fn apply(&self, spec: &SecondOrderSpec) -> Result<SecondOrderSpec> {
        let picked = spec.select(&self.indices)?;
        match &self.affine {
            Some((a, b)) => picked.affine(a, b),
            None => Ok(picked),
        }
    }

    pub fn apply_point(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply(&SecondOrderSpec::known(y.clone())).map(|s| s.mean().clone())
    }

    fn validate(&self, from_q: usize, to_p: usize, position: usize) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= from_q) {
            return Err(Error::ArityMismatch {
                context: format!("link {position}: output index {bad} of a node with"),
                expected: from_q,
                found: bad + 1,
            });
        }
        if let Some((a, b)) = &self.affine {
            if a.ncols() != self.indices.len() || a.nrows() != b.len() {
                return Err(Error::ArityMismatch {
                    context: format!("link {position}: affine map columns"),
                    expected: self.indices.len(),
                    found: a.ncols(),
                });
            }
        }
        if self.output_dim() != to_p {
            return Err(Error::ArityMismatch {
                context: format!("link {position}: inputs of the next node"),
                expected: to_p,
                found: self.output_dim(),
            });
        }
        Ok(())
    }
}

/// An ordered list of nodes with one link between each consecutive pair.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    nodes: Vec<SimulatorNode>,
    links: Vec<Link>,
}

impl ChainSpec {
    pub fn new(nodes: Vec<SimulatorNode>, links: Vec<Link>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("a chain needs at least one node".into()));
        }
        if links.len() + 1 != nodes.len() {
            return Err(Error::ArityMismatch {
                context: "links between chain nodes".into(),
                expected: nodes.len() - 1,
                found: links.len(),
            });
        }
        for (i, link) in links.iter().enumerate() {
            link.validate(nodes[i].output_dim(), nodes[i + 1].input_dim(), i)?;
        }
        Ok(Self { nodes, links })
    }

    /// Consecutive nodes joined by direct links.
    pub fn direct(nodes: Vec<SimulatorNode>) -> Result<Self> {
        let links = nodes.windows(2).map(|w| Link::direct(w[0].output_dim())).collect();
        Self::new(nodes, links)
    }

    pub fn nodes(&self) -> &[SimulatorNode] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn input_dim(&self) -> usize {
        self.nodes[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.nodes[self.nodes.len() - 1].output_dim()
    }

    fn check_input(&self, found: usize) -> Result<()> {
        if found != self.input_dim() {
            return Err(Error::ArityMismatch {
                context: "chain input".into(),
                expected: self.input_dim(),
                found,
            });
        }
        Ok(())
    }
}

/// Per-node record of a propagation.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    /// Identity token of the input fed to each node.
    pub input_ids: Vec<InputId>,
    /// Output belief of each node.
    pub outputs: Vec<SecondOrderSpec>,
}

impl ChainTrace {
    pub fn last(&self) -> &SecondOrderSpec {
        self.outputs.last().expect("a chain has at least one node")
    }
}

/// Pushes `input` through the chain and keeps every intermediate belief.
pub fn link_predict_traced(chain: &ChainSpec, input: &UncertainInput) -> Result<ChainTrace> {
    chain.check_input(input.dim())?;
    let mut input_ids = vec![input.id()];
    let mut outputs = vec![chain.nodes[0].predict(input)?];
    for (link, node) in chain.links.iter().zip(&chain.nodes[1..]) {
        let spec = link.apply(outputs.last().expect("non-empty"))?;
        let next = UncertainInput::new(spec.mean().clone(), spec.cov().clone())?;
        input_ids.push(next.id());
        outputs.push(node.predict(&next)?);
    }
    Ok(ChainTrace { input_ids, outputs })
}

/// Second-order belief about the chain's final output at `input`.
pub fn link_predict(chain: &ChainSpec, input: &UncertainInput) -> Result<SecondOrderSpec> {
    Ok(link_predict_traced(chain, input)?.last().clone())
}

/// Composes the nodes at a known input. Emulator nodes contribute their
/// adjusted mean, which is only an approximation of the simulator.
pub fn run_chain_exact(chain: &ChainSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    chain.check_input(x.len())?;
    if chain.nodes.iter().any(|n| matches!(n, SimulatorNode::Emulator(_))) {
        log::debug!("run_chain_exact: emulator nodes evaluated at their adjusted mean");
    }
    let mut y = chain.nodes[0].eval_known(x)?;
    for (link, node) in chain.links.iter().zip(&chain.nodes[1..]) {
        let z = link.apply_point(&y)?;
        y = node.eval_known(&z)?;
    }
    Ok(y)
}

/// Exact node from a registered name. `dim` is only read by `identity`.
pub fn registered_exact(name: &str, dim: Option<usize>) -> Result<SimulatorNode> {
    let ddr = SyntheticDDR::default();
    match name {
        "identity" => {
            let p = dim.ok_or_else(|| Error::InvalidParameter("exact node `identity` needs `dim`".into()))?;
            Ok(SimulatorNode::identity(p))
        }
        "ddr_f1" => Ok(SimulatorNode::exact(name, 3, 1, move |x| DVector::from_element(1, ddr.f1(x[0], x[1], x[2])))),
        "ddr_f2" => Ok(SimulatorNode::exact(name, 1, 1, move |x| DVector::from_element(1, ddr.f2(x[0])))),
        "ddr_h" => Ok(SimulatorNode::exact(name, 3, 1, move |x| DVector::from_element(1, ddr.h(x[0], x[1], x[2])))),
        other => Err(Error::InvalidParameter(format!("unknown exact node `{other}`"))),
    }
}

/// A node entry of a chain file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeEntry {
    /// Path to a saved emulator, relative to the chain file.
    Model(PathBuf),
    Exact {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineEntry {
    /// Rows of A.
    pub scale: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineEntry>,
}

/// On-disk chain definition (JSON). When `links` is omitted, nodes are
/// joined directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub nodes: Vec<NodeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkEntry>>,
}

impl ChainFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Builds the chain, resolving model paths against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<ChainSpec> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                NodeEntry::Model(p) => EmulatorModel::load(base_dir.join(p)).map(SimulatorNode::emulator),
                NodeEntry::Exact { name, dim } => registered_exact(name, *dim),
            })
            .collect::<Result<Vec<_>>>()?;
        match &self.links {
            None => ChainSpec::direct(nodes),
            Some(entries) => {
                let links = entries
                    .iter()
                    .map(|e| {
                        let link = Link::select(e.indices.clone());
                        match &e.affine {
                            None => Ok(link),
                            Some(a) => {
                                let nc = a.scale.first().map_or(0, |r| r.len());
                                if a.scale.iter().any(|r| r.len() != nc) {
                                    return Err(Error::Document("ragged affine scale".into()));
                                }
                                let scale = DMatrix::from_fn(a.scale.len(), nc, |i, j| a.scale[i][j]);
                                Ok(link.with_affine(scale, DVector::from_column_slice(&a.offset)))
                            }
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                ChainSpec::new(nodes, links)
            }
        }
    }

    /// Loads and builds, with model paths relative to the file's directory.
    pub fn open(path: impl AsRef<Path>) -> Result<ChainSpec> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::load(path)?.build(base)
    }
}
