//! Feed-forward policies loaded from a plain-text weights file.
//!
//! File layout (whitespace separated tokens, `#` starts a comment):
//!
//! ```text
//! mamps-mlp v1
//! layers <L>
//! layer <rows> <cols> <linear|tanh|relu>
//! <rows * cols weights, row-major>
//! bias <rows values>
//! ...                       # repeated L times
//! ```
//!
//! Layer `k` maps a `cols`-vector to a `rows`-vector as `act(W x + b)`. The
//! last layer must have two rows: acceleration and steering rate, which are
//! clamped to the actuator bounds.
//!
//! The observation for agent `i` is its own `(x, y, v, theta)`, the offset to
//! its goal, the offsets to every obstacle in index order, then the offsets to
//! every other agent in index order. Offsets are `target - own position`.

use std::path::Path;
use std::str::FromStr;

use crate::dynamics::Policy;
use crate::error::{Error, Result};
use crate::model::{Action, JointState, Scenario};

pub const WEIGHTS_MAGIC: &str = "mamps-mlp";
const WEIGHTS_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Tanh => libm::tanh(v),
            Activation::Relu => v.max(0.0),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Weights(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| {
                let dot: f64 = row.iter().zip(input).map(|(w, v)| w * v).sum();
                self.activation.apply(dot + b)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layers: Vec<Layer>,
    scenario: Option<Scenario>,
}

pub fn observation_dim(n_agents: usize, n_obstacles: usize) -> usize {
    4 + 2 + 2 * n_obstacles + 2 * n_agents.saturating_sub(1)
}

pub fn observation(x: &JointState, agent: usize) -> Vec<f64> {
    let me = &x.agents[agent];
    let mut obs = Vec::with_capacity(observation_dim(x.n_agents(), x.obstacles.len()));
    obs.extend([me.x, me.y, me.v, me.theta]);
    let goal = x.goals[agent];
    obs.extend([goal.x - me.x, goal.y - me.y]);
    for z in x.obstacles.iter() {
        obs.extend([z.x - me.x, z.y - me.y]);
    }
    for (j, other) in x.agents.iter().enumerate() {
        if j != agent {
            obs.extend([other.x - me.x, other.y - me.y]);
        }
    }
    obs
}

impl MlpPolicy {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Weights("at least one layer is required".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.rows == 0 || layer.cols == 0 {
                return Err(Error::Weights(format!("layer {k} has a zero dimension")));
            }
            if layer.weights.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(Error::Weights(format!(
                    "layer {k} has the wrong number of coefficients"
                )));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.cols != layer.rows {
                    return Err(Error::Weights(format!(
                        "layer {} expects {} inputs but layer {k} produces {}",
                        k + 1,
                        next.cols,
                        layer.rows
                    )));
                }
            }
        }
        let out = layers.last().map(|l| l.rows).unwrap_or(0);
        if out != 2 {
            return Err(Error::Weights(format!("final layer must have 2 outputs, found {out}")));
        }
        Ok(Self { layers, scenario: None })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|line| line.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::Weights(format!("unexpected end of file, expected {what}")))
        };
        fn number<T: FromStr>(tok: &str, what: &str) -> Result<T> {
            tok.parse()
                .map_err(|_| Error::Weights(format!("expected {what}, found `{tok}`")))
        }
        fn keyword(tok: &str, expected: &str) -> Result<()> {
            if tok == expected {
                Ok(())
            } else {
                Err(Error::Weights(format!("expected `{expected}`, found `{tok}`")))
            }
        }

        keyword(next("magic")?, WEIGHTS_MAGIC)?;
        let version = next("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!("unsupported version `{version}`")));
        }
        keyword(next("`layers`")?, "layers")?;
        let count: usize = number(next("layer count")?, "layer count")?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            keyword(next("`layer`")?, "layer")?;
            let rows: usize = number(next("row count")?, "row count")?;
            let cols: usize = number(next("column count")?, "column count")?;
            let activation: Activation = next("activation")?.parse()?;
            let weights = (0..rows * cols)
                .map(|_| number(next("weight")?, "weight"))
                .collect::<Result<Vec<f64>>>()?;
            keyword(next("`bias`")?, "bias")?;
            let bias = (0..rows)
                .map(|_| number(next("bias")?, "bias"))
                .collect::<Result<Vec<f64>>>()?;
            layers.push(Layer {
                rows,
                cols,
                weights,
                bias,
                activation,
            });
        }
        if let Some(extra) = tokens.next() {
            return Err(Error::Weights(format!("trailing token `{extra}`")));
        }
        Self::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{WEIGHTS_MAGIC} {WEIGHTS_VERSION}\nlayers {}\n", self.layers.len());
        for layer in &self.layers {
            out.push_str(&format!(
                "layer {} {} {}\n",
                layer.rows,
                layer.cols,
                layer.activation.tag()
            ));
            for row in layer.weights.chunks_exact(layer.cols) {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
            let bias: Vec<String> = layer.bias.iter().map(f64::to_string).collect();
            out.push_str(&format!("bias {}\n", bias.join(" ")));
        }
        out
    }

    /// Checks the input width against the scenario and attaches its bounds.
    pub fn bind(mut self, s: &Scenario) -> Result<Self> {
        let expected = observation_dim(s.n_agents, s.n_obstacles);
        if self.input_dim() != expected {
            return Err(Error::WeightsDimension {
                expected,
                found: self.input_dim(),
            });
        }
        self.scenario = Some(*s);
        Ok(self)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.layers
            .iter()
            .fold(input.to_vec(), |acc, layer| layer.forward(&acc))
    }
}

impl Policy for MlpPolicy {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        let out = self.forward(&observation(x, agent));
        let raw = Action::new(out[0], out[1]);
        match &self.scenario {
            Some(s) => raw.clamped(s),
            None => raw,
        }
    }
}
