//! Hierarchical-interpolation encoder for the daily net-load series.
//!
//! Each scale max-pools the load with its own kernel, maps the coarse series
//! through a per-scale MLP to a coefficient vector, and the scale vectors are
//! fused by learned scalar weights into the load embedding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::{maxpool1d, pooled_len};
use crate::numerics::{Graph, Matrix, Mlp, MlpIds, NodeId};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct HiConfig {
    pub kernel_sizes: Vec<usize>,
    /// Hidden layer widths of every per-scale MLP.
    pub mlp_hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for HiConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![1, 2, 4, 8],
            mlp_hidden: vec![64, 64],
            embed_dim: 64,
        }
    }
}

impl HiConfig {
    pub fn validate(&self, slots: usize) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("hi.kernel_sizes must name at least one scale".into()));
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k < 1 || k > slots) {
            return Err(Error::Config(format!(
                "hi.kernel_sizes entry {k} outside 1..={slots}"
            )));
        }
        if self.kernel_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "hi.kernel_sizes must be strictly increasing, got {:?}",
                self.kernel_sizes
            )));
        }
        if self.embed_dim < 1 {
            return Err(Error::Config("hi.embed_dim must be >= 1".into()));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("hi.mlp_hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.kernel_sizes.len()
    }

    /// Layer widths of the MLP for the scale with kernel `k`.
    pub fn mlp_widths(&self, slots: usize, k: usize) -> Vec<usize> {
        let mut w = vec![pooled_len(slots, k)];
        w.extend(&self.mlp_hidden);
        w.push(self.embed_dim);
        w
    }
}

/// Learnable weights of the encoder: one MLP and one scalar weight per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct HiParams<S> {
    pub scale_mlps: Vec<Mlp<S>>,
    /// `1 x S` row of scale weights.
    pub scale_weights: Matrix<S>,
}

#[derive(Clone, Debug)]
pub struct HiIds {
    pub scale_mlps: Vec<MlpIds>,
    pub scale_weights: NodeId,
}

impl HiIds {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.scale_mlps.iter().flat_map(MlpIds::ids).collect();
        out.push(self.scale_weights);
        out
    }
}

impl<S: Scalar> HiParams<S> {
    /// Glorot-initialized MLPs and uniform scale weights `1/S`.
    pub fn init<R: Rng + ?Sized>(cfg: &HiConfig, slots: usize, rng: &mut R) -> Result<Self> {
        cfg.validate(slots)?;
        let scale_mlps = cfg
            .kernel_sizes
            .iter()
            .map(|&k| Mlp::init(&cfg.mlp_widths(slots, k), rng))
            .collect::<Result<Vec<_>>>()?;
        let s = cfg.scales();
        Ok(Self {
            scale_mlps,
            scale_weights: Matrix::filled(1, s, S::one() / S::of_usize(s)),
        })
    }

    pub fn check(&self, cfg: &HiConfig, slots: usize) -> Result<()> {
        if self.scale_mlps.len() != cfg.scales() || self.scale_weights.shape() != (1, cfg.scales()) {
            return Err(Error::shape(
                "hi params",
                format!(
                    "{} MLPs and {:?} scale weights for {} scales",
                    self.scale_mlps.len(),
                    self.scale_weights.shape(),
                    cfg.scales()
                ),
            ));
        }
        for (mlp, &k) in self.scale_mlps.iter().zip(&cfg.kernel_sizes) {
            let want = cfg.mlp_widths(slots, k);
            if mlp.widths() != want {
                return Err(Error::shape(
                    "hi params",
                    format!("scale k={k} MLP widths {:?}, expected {want:?}", mlp.widths()),
                ));
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix<S>)> {
        let mut out: Vec<(String, &Matrix<S>)> = self
            .scale_mlps
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.named_tensors(&format!("{prefix}.scale{i}")))
            .collect();
        out.push((format!("{prefix}.scale_weights"), &self.scale_weights));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<S>> {
        let mut out: Vec<&mut Matrix<S>> =
            self.scale_mlps.iter_mut().flat_map(Mlp::tensors_mut).collect();
        out.push(&mut self.scale_weights);
        out
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> HiIds {
        HiIds {
            scale_mlps: self.scale_mlps.iter().map(|m| m.bind(g)).collect(),
            scale_weights: g.param(&self.scale_weights),
        }
    }
}

/// Max-pools the `1 x T` load row with kernel `k` (stride `k`, partial tail kept).
pub fn hi_subsample<S: Scalar>(load: &Matrix<S>, k: usize) -> Result<Matrix<S>> {
    Ok(maxpool1d(load, k)?.0)
}

/// Coefficient vector of one scale.
pub fn hi_coefficients<S: Scalar>(subsampled: &Matrix<S>, mlp: &Mlp<S>) -> Result<Matrix<S>> {
    mlp.eval(subsampled)
}

/// Load embedding `sum_s a_s * theta_s` as a `1 x embed_dim` row.
pub fn hi_embed<S: Scalar>(load: &Matrix<S>, cfg: &HiConfig, params: &HiParams<S>) -> Result<Matrix<S>> {
    params.check(cfg, load.cols())?;
    let mut out = Matrix::zeros(1, cfg.embed_dim);
    for (s, (&k, mlp)) in cfg.kernel_sizes.iter().zip(&params.scale_mlps).enumerate() {
        let theta = hi_coefficients(&hi_subsample(load, k)?, mlp)?;
        let a = params.scale_weights.get(0, s);
        for (o, &t) in out.data_mut().iter_mut().zip(theta.data()) {
            *o += a * t;
        }
    }
    Ok(out)
}

/// Graph version of [`hi_embed`]; `load` is a `1 x T` node.
pub fn hi_embed_graph<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &HiConfig,
    ids: &HiIds,
    load: NodeId,
) -> Result<NodeId> {
    let mut thetas = Vec::with_capacity(cfg.scales());
    for (&k, mlp) in cfg.kernel_sizes.iter().zip(&ids.scale_mlps) {
        let pooled = g.maxpool1d(load, k)?;
        thetas.push(Mlp::forward(mlp, g, pooled)?);
    }
    // (1 x S) * (S x E): the weighted sum over scales.
    let stacked = g.concat_rows(&thetas)?;
    g.matmul(ids.scale_weights, stacked)
}
