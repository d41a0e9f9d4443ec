use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    FanIn,
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    /// 0 for the encoder, `k + 1` for decoder `k`.
    pub owner: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIx {
    pub ln1: (usize, usize),
    pub wq: (usize, usize),
    pub wk: (usize, usize),
    pub wv: (usize, usize),
    pub wo: (usize, usize),
    pub ln2: (usize, usize),
    pub ff1: (usize, usize),
    pub ff2: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderIx {
    pub tok: usize,
    pub in_tok: usize,
    pub in_cond: usize,
    pub in_bias: usize,
    pub blocks: Vec<BlockIx>,
    pub ln: (usize, usize),
    pub mu: (usize, usize),
    pub log_sigma: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderIx {
    pub tok: usize,
    pub in_tok: usize,
    pub in_lat: usize,
    pub in_cond: usize,
    pub in_bias: usize,
    pub blocks: Vec<BlockIx>,
    pub ln: (usize, usize),
    pub out: (usize, usize),
}

pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
    pub encoder: EncoderIx,
    pub decoders: Vec<DecoderIx>,
}

struct Builder {
    specs: Vec<ParamSpec>,
    owner: usize,
    prefix: String,
}

impl Builder {
    fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: format!("{}.{name}", self.prefix),
            rows,
            cols,
            init,
            owner: self.owner,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, out: usize) -> (usize, usize) {
        let w = self.add(&format!("{name}.w"), fan_in, out, Init::FanIn);
        let b = self.add(&format!("{name}.b"), 1, out, Init::Zeros);
        (w, b)
    }

    fn norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        let g = self.add(&format!("{name}.gain"), 1, d, Init::Ones);
        let b = self.add(&format!("{name}.bias"), 1, d, Init::Zeros);
        (g, b)
    }

    fn block(&mut self, i: usize, d: usize, ff: usize) -> BlockIx {
        let p = |s: &str| format!("layer{i}.{s}");
        BlockIx {
            ln1: self.norm(&p("ln1"), d),
            wq: self.linear(&p("q"), d, d),
            wk: self.linear(&p("k"), d, d),
            wv: self.linear(&p("v"), d, d),
            wo: self.linear(&p("o"), d, d),
            ln2: self.norm(&p("ln2"), d),
            ff1: self.linear(&p("ff1"), d, ff),
            ff2: self.linear(&p("ff2"), ff, d),
        }
    }
}

/// Parameter names, shapes and initializers for `cfg`, in storage order.
pub(crate) fn layout(cfg: &ModelConfig) -> Layout {
    let (e, v) = (cfg.d_model, cfg.vocab_size);
    let mut b = Builder {
        specs: Vec::new(),
        owner: 0,
        prefix: "encoder".into(),
    };
    let tok = b.add("tok_emb", v, e, Init::Embedding);
    let in_tok = b.add("in.tok", e, e, Init::FanIn);
    let in_cond = b.add("in.cond", cfg.d_cond, e, Init::FanIn);
    let in_bias = b.add("in.b", 1, e, Init::Zeros);
    let blocks = (0..cfg.n_layers).map(|i| b.block(i, e, cfg.d_ff)).collect();
    let encoder = EncoderIx {
        tok,
        in_tok,
        in_cond,
        in_bias,
        blocks,
        ln: b.norm("ln", e),
        mu: b.linear("mu", e, cfg.d_z),
        log_sigma: b.linear("log_sigma", e, cfg.d_z),
    };
    let d = cfg.dec_d_model;
    let mut decoders = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        b.owner = k + 1;
        b.prefix = format!("decoder{k}");
        let tok = b.add("tok_emb", v, d, Init::Embedding);
        let in_tok = b.add("in.tok", d, d, Init::FanIn);
        let in_lat = b.add("in.latent", cfg.d_z, d, Init::FanIn);
        let in_cond = b.add("in.cond", cfg.d_cond, d, Init::FanIn);
        let in_bias = b.add("in.b", 1, d, Init::Zeros);
        let blocks = (0..cfg.n_layers).map(|i| b.block(i, d, cfg.dec_d_ff)).collect();
        decoders.push(DecoderIx {
            tok,
            in_tok,
            in_lat,
            in_cond,
            in_bias,
            blocks,
            ln: b.norm("ln", d),
            out: b.linear("out", d, v),
        });
    }
    Layout {
        specs: b.specs,
        encoder,
        decoders,
    }
}

/// Named weight tensors in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub(crate) fn init(specs: &[ParamSpec], seed: u64) -> ParamStore {
        let owners = specs.iter().map(|s| s.owner).max().unwrap_or(0) + 1;
        let mut streams: Vec<_> = (0..owners)
            .map(|o| {
                let name = match o {
                    0 => format!("{}/encoder", rng::INIT),
                    k => format!("{}/decoder{}", rng::INIT, k - 1),
                };
                rng::substream(seed, &name)
            })
            .collect();
        let emb = Normal::new(0.0, 0.02).expect("valid normal");
        let tensors = specs
            .iter()
            .map(|s| {
                let r = &mut streams[s.owner];
                let n = s.rows * s.cols;
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Embedding => (0..n).map(|_| emb.sample(r)).collect(),
                    Init::FanIn => {
                        let a = 1.0 / (s.rows as f64).sqrt();
                        (0..n).map(|_| r.random_range(-a..a)).collect()
                    }
                };
                Tensor::from_vec(s.rows, s.cols, data)
            })
            .collect();
        ParamStore {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    pub(crate) fn check(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.tensors.len() != specs.len() || self.names.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors for {} parameters",
                self.tensors.len(),
                specs.len()
            )));
        }
        for ((s, t), n) in specs.iter().zip(&self.tensors).zip(&self.names) {
            if *n != s.name || t.rows != s.rows || t.cols != s.cols {
                return Err(Error::ShapeMismatch(format!(
                    "{n} is {}x{}, expected {} {}x{}",
                    t.rows, t.cols, s.name, s.rows, s.cols
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }
}
