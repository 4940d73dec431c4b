//! Sequence models over stacked trajectory windows: a bidirectional encoder,
//! a causal decoder and a feedforward baseline, sharing one input front end
//! and one pair of output heads.

pub mod checkpoint;
mod embed;
mod net;
pub mod ops;

use std::fmt;
use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::doorkey::{NUM_ACTIONS, NUM_CELLS};
use crate::error::{Error, Result};
use crate::rng;
use crate::traj::{EnvKind, MAZE_ACTION_DIM, MAZE_OBS_DIM};

pub use embed::encode_window;
pub use net::{Cache, Output};

/// Scalar type the network is generic over: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Bidirectional,
    Causal,
    Feedforward,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Bidirectional => "bidirectional",
            Arch::Causal => "causal",
            Arch::Feedforward => "feedforward",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub env: EnvKind,
    /// Context length.
    pub k: usize,
    /// Episode length, used to scale the remaining-steps feature.
    pub horizon: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Width of transformer feedforward sublayers and of the baseline's hidden layers.
    pub ffn_dim: usize,
    pub dropout: f32,
    /// State loss weight `w` for an action:state ratio of `1 : w`.
    pub state_loss_weight: f32,
}

impl ModelConfig {
    pub fn gridworld_default() -> Self {
        Self {
            arch: Arch::Bidirectional,
            env: EnvKind::Gridworld,
            k: 10,
            horizon: 10,
            embed_dim: 128,
            num_layers: 2,
            num_heads: 8,
            ffn_dim: 512,
            dropout: 0.1,
            state_loss_weight: 1.0,
        }
    }

    pub fn maze_default() -> Self {
        Self {
            arch: Arch::Bidirectional,
            env: EnvKind::Maze,
            k: 10,
            horizon: 200,
            embed_dim: 128,
            num_layers: 4,
            num_heads: 16,
            ffn_dim: 512,
            dropout: 0.1,
            state_loss_weight: 1.0,
        }
    }

    pub fn env_kind(&self) -> EnvKind {
        self.env
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("context length k must be at least 1");
        }
        if self.horizon < self.k {
            return bad("horizon must be at least the context length");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        if self.arch == Arch::Feedforward && self.num_layers == 0 {
            return bad("the feedforward baseline needs at least one hidden layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.state_loss_weight >= 0.0 && self.state_loss_weight.is_finite()) {
            return bad("state_loss_weight must be a non-negative number");
        }
        Ok(())
    }

    /// Width of the state features fed in and predicted: two one-hot cell
    /// vectors for the gridworld, the raw observation for the maze.
    pub fn state_dim(&self) -> usize {
        match self.env_kind() {
            EnvKind::Gridworld => 2 * NUM_CELLS,
            EnvKind::Maze => MAZE_OBS_DIM,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.env_kind() {
            EnvKind::Gridworld => NUM_ACTIONS,
            EnvKind::Maze => MAZE_ACTION_DIM,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.env_kind() == EnvKind::Gridworld
    }

    /// `[state | flag | action | flag | rtg, remaining | flag]`
    pub fn input_dim(&self) -> usize {
        self.state_dim() + 1 + self.action_dim() + 1 + 2 + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (e, f, k) = (self.embed_dim, self.ffn_dim, self.k);
        let (s, a) = (self.state_dim(), self.action_dim());
        let embed = self.input_dim() * e + e;
        match self.arch {
            Arch::Feedforward => {
                let first = k * e * f + f;
                let hidden = (self.num_layers - 1) * (f * f + f);
                let out = f * k * (a + s) + k * (a + s);
                embed + first + hidden + out
            }
            _ => {
                let block = 2 * (2 * e) + 4 * (e * e + e) + (e * f + f) + (f * e + e);
                embed + self.num_layers * block + 2 * e + (e * a + a) + (e * s + s)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
    pub d: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub ln1: Norm,
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
    pub ln2: Norm,
    pub ff1: Lin,
    pub ff2: Lin,
}

#[derive(Clone, Debug)]
pub(crate) struct Heads {
    pub norm: Norm,
    pub action: Lin,
    pub state: Lin,
}

#[derive(Clone, Debug)]
pub(crate) enum Body {
    Transformer { blocks: Vec<Block>, heads: Heads },
    Feedforward { hidden: Vec<Lin>, out: Lin },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where every named array lives inside the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) embed: Lin,
    pub(crate) body: Body,
    entries: Vec<ParamEntry>,
    total: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum InitKind {
    FanIn(usize),
    Zeros,
    Ones,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    kinds: Vec<InitKind>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, kind: InitKind) -> usize {
        let offset = self.total;
        self.entries.push(ParamEntry {
            name,
            offset,
            rows,
            cols,
        });
        self.kinds.push(kind);
        self.total += rows * cols;
        offset
    }

    fn lin(&mut self, name: &str, din: usize, dout: usize) -> Lin {
        let w = self.add(format!("{name}.weight"), din, dout, InitKind::FanIn(din));
        let b = self.add(format!("{name}.bias"), 1, dout, InitKind::Zeros);
        Lin { w, b, din, dout }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        let g = self.add(format!("{name}.gamma"), 1, d, InitKind::Ones);
        let b = self.add(format!("{name}.beta"), 1, d, InitKind::Zeros);
        Norm { g, b, d }
    }
}

impl Layout {
    fn build(c: &ModelConfig) -> (Self, Vec<InitKind>) {
        let mut b = LayoutBuilder {
            entries: Vec::new(),
            kinds: Vec::new(),
            total: 0,
        };
        let e = c.embed_dim;
        let embed = b.lin("embed", c.input_dim(), e);
        let body = match c.arch {
            Arch::Feedforward => {
                let mut hidden = Vec::with_capacity(c.num_layers);
                let mut din = c.k * e;
                for l in 0..c.num_layers {
                    hidden.push(b.lin(&format!("hidden{l}"), din, c.ffn_dim));
                    din = c.ffn_dim;
                }
                let out = b.lin("out", din, c.k * (c.action_dim() + c.state_dim()));
                Body::Feedforward { hidden, out }
            }
            Arch::Bidirectional | Arch::Causal => {
                let blocks = (0..c.num_layers)
                    .map(|l| {
                        let p = format!("block{l}");
                        Block {
                            ln1: b.norm(&format!("{p}.ln1"), e),
                            q: b.lin(&format!("{p}.attn.q"), e, e),
                            k: b.lin(&format!("{p}.attn.k"), e, e),
                            v: b.lin(&format!("{p}.attn.v"), e, e),
                            o: b.lin(&format!("{p}.attn.o"), e, e),
                            ln2: b.norm(&format!("{p}.ln2"), e),
                            ff1: b.lin(&format!("{p}.ffn.in"), e, c.ffn_dim),
                            ff2: b.lin(&format!("{p}.ffn.out"), c.ffn_dim, e),
                        }
                    })
                    .collect();
                let heads = Heads {
                    norm: b.norm("final_norm", e),
                    action: b.lin("head.action", e, c.action_dim()),
                    state: b.lin("head.state", e, c.state_dim()),
                };
                Body::Transformer { blocks, heads }
            }
        };
        (
            Self {
                embed,
                body,
                entries: b.entries,
                total: b.total,
            },
            b.kinds,
        )
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    layout: Arc<Layout>,
    pub params: Vec<T>,
}

impl<T: Real> Model<T> {
    /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, kinds) = Layout::build(&config);
        let mut r = rng::stream(seed, rng::streams::INIT);
        let mut params = Vec::with_capacity(layout.total);
        for (entry, kind) in layout.entries.iter().zip(&kinds) {
            for _ in 0..entry.len() {
                let v = match kind {
                    InitKind::FanIn(fan_in) => {
                        let bound = 1.0 / (*fan_in as f64).sqrt();
                        r.random_range(-bound..bound)
                    }
                    InitKind::Zeros => 0.0,
                    InitKind::Ones => 1.0,
                };
                params.push(T::from_f64(v).unwrap());
            }
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (layout, _) = Layout::build(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "parameter vector has {} values, architecture needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.offset..e.offset + e.len()])
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }
}
