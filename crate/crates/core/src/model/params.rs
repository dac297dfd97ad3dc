use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::{Matrix, Tape, Var};

/// One attention head: input transform, attention vector, value transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatHead<T> {
    /// `d_in × d_head`.
    pub w_in: T,
    /// `2·d_head × 1`; the first half scores the query, the second the key.
    pub w_a: T,
    /// `d_in × d_head`.
    pub w_v: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayer<T> {
    pub heads: Vec<GatHead<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierLayer<T> {
    pub intra: GatLayer<T>,
    pub sen2sec: GatLayer<T>,
    pub inter: GatLayer<T>,
    /// `2d × d`.
    pub fuse: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHead<T> {
    /// `2d × d_h`.
    pub w_o1: T,
    /// `d_h × 1`.
    pub w_o2: T,
}

/// Every trainable tensor of the network. `T` is [`Matrix`] for stored
/// weights and [`Var`] while a forward pass is being recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = Matrix> {
    /// `input_dim × d`, present when embeddings are not already `d`-dimensional.
    pub input_proj: Option<T>,
    pub gcl: GatLayer<T>,
    pub hier: Vec<HierLayer<T>>,
    pub head: ScoreHead<T>,
}

impl<T> GatLayer<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GatLayer<U> {
        GatLayer {
            heads: self
                .heads
                .iter()
                .map(|h| GatHead {
                    w_in: f(&h.w_in),
                    w_a: f(&h.w_a),
                    w_v: f(&h.w_v),
                })
                .collect(),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a T>) {
        for h in &self.heads {
            out.extend([&h.w_in, &h.w_a, &h.w_v]);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        for h in &mut self.heads {
            out.extend([&mut h.w_in, &mut h.w_a, &mut h.w_v]);
        }
    }
}

impl<T> ModelParams<T> {
    /// Applies `f` to every tensor in [`ModelParams::tensors`] order.
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        let input_proj = self.input_proj.as_ref().map(&mut *f);
        let gcl = self.gcl.map(f);
        let hier = self
            .hier
            .iter()
            .map(|l| {
                let intra = l.intra.map(f);
                let sen2sec = l.sen2sec.map(f);
                let inter = l.inter.map(f);
                HierLayer {
                    intra,
                    sen2sec,
                    inter,
                    fuse: f(&l.fuse),
                }
            })
            .collect();
        let w_o1 = f(&self.head.w_o1);
        let w_o2 = f(&self.head.w_o2);
        ModelParams {
            input_proj,
            gcl,
            hier,
            head: ScoreHead { w_o1, w_o2 },
        }
    }

    /// All tensors in a fixed order: projection, GCL heads, hierarchical
    /// layers (intra, sen2sec, inter, fuse), score head.
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::new();
        out.extend(self.input_proj.as_ref());
        self.gcl.collect(&mut out);
        for l in &self.hier {
            l.intra.collect(&mut out);
            l.sen2sec.collect(&mut out);
            l.inter.collect(&mut out);
            out.push(&l.fuse);
        }
        out.extend([&self.head.w_o1, &self.head.w_o2]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        out.extend(self.input_proj.as_mut());
        self.gcl.collect_mut(&mut out);
        for l in &mut self.hier {
            l.intra.collect_mut(&mut out);
            l.sen2sec.collect_mut(&mut out);
            l.inter.collect_mut(&mut out);
            out.push(&mut l.fuse);
        }
        out.extend([&mut self.head.w_o1, &mut self.head.w_o2]);
        out
    }

    /// Rebuilds the same structure from a flat list in [`ModelParams::tensors`] order.
    pub fn with_values<U: Clone>(&self, values: &[U]) -> ModelParams<U> {
        let mut it = values.iter();
        let out = self.map(&mut |_| it.next().expect("too few values").clone());
        assert!(it.next().is_none(), "too many values");
        out
    }
}

impl ModelParams<Matrix> {
    /// Seeded Xavier-uniform initialization of every tensor.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let dh = cfg.d / cfg.heads;
        let gat = |rng: &mut ChaCha8Rng| GatLayer {
            heads: (0..cfg.heads)
                .map(|_| GatHead {
                    w_in: Matrix::xavier(d, dh, rng),
                    w_a: Matrix::xavier(2 * dh, 1, rng),
                    w_v: Matrix::xavier(d, dh, rng),
                })
                .collect(),
        };
        let input_proj = (cfg.input_dim != d).then(|| Matrix::xavier(cfg.input_dim, d, &mut rng));
        let gcl = gat(&mut rng);
        let n_layers = if cfg.use_hierarchical { cfg.layers } else { 0 };
        let hier = (0..n_layers)
            .map(|_| {
                let intra = gat(&mut rng);
                let sen2sec = gat(&mut rng);
                let inter = gat(&mut rng);
                HierLayer {
                    intra,
                    sen2sec,
                    inter,
                    fuse: Matrix::xavier(2 * d, d, &mut rng),
                }
            })
            .collect();
        let head = ScoreHead {
            w_o1: Matrix::xavier(2 * d, cfg.d_h, &mut rng),
            w_o2: Matrix::xavier(cfg.d_h, 1, &mut rng),
        };
        Self {
            input_proj,
            gcl,
            hier,
            head,
        }
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn to_vars(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |m| tape.param(m.clone()))
    }

    /// Registers every tensor as a constant (inference only).
    pub fn to_constants(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |m| tape.constant(m.clone()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_chain() {
        let cfg = ModelConfig {
            input_dim: 12,
            d: 8,
            d_h: 5,
            heads: 2,
            layers: 2,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 1);
        assert_eq!(p.input_proj.as_ref().unwrap().shape(), (12, 8));
        assert_eq!(p.gcl.heads.len(), 2);
        assert_eq!(p.gcl.heads[0].w_in.shape(), (8, 4));
        assert_eq!(p.gcl.heads[0].w_a.shape(), (8, 1));
        assert_eq!(p.hier.len(), 2);
        assert_eq!(p.hier[1].fuse.shape(), (16, 8));
        assert_eq!(p.head.w_o1.shape(), (16, 5));
        assert_eq!(p.head.w_o2.shape(), (5, 1));
        // projection + 2 heads × 3 + 2 layers × (3 × 6 + 1) + 2
        assert_eq!(p.tensors().len(), 1 + 6 + 2 * 19 + 2);
    }

    #[test]
    fn init_is_seeded_and_round_trips() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 4);
        assert_eq!(p, ModelParams::init(&cfg, 4));
        assert_ne!(p, ModelParams::init(&cfg, 5));
        let flat: Vec<Matrix> = p.tensors().into_iter().cloned().collect();
        assert_eq!(p.with_values(&flat), p);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ModelParams>(&json).unwrap(), p);
    }

    #[test]
    fn ablation_drops_hier_layers() {
        let cfg = ModelConfig {
            use_hierarchical: false,
            ..ModelConfig::default()
        };
        assert!(ModelParams::init(&cfg, 0).hier.is_empty());
    }
}
