//! Multi-head self-attention over the three irradiance channels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::layers::glorot_uniform;
use crate::numerics::ops::softmax_rows;
use crate::numerics::{Graph, Matrix, Mlp, MlpIds, NodeId};
use crate::scalar::Scalar;

/// Number of irradiance channels (DNI, DHI, GHI).
pub const CHANNELS: usize = 3;

/// One day of irradiance in W/m², one value per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherDay {
    pub dni: Vec<f64>,
    pub dhi: Vec<f64>,
    pub ghi: Vec<f64>,
}

impl WeatherDay {
    pub fn zeros(slots: usize) -> Self {
        Self {
            dni: vec![0.0; slots],
            dhi: vec![0.0; slots],
            ghi: vec![0.0; slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.ghi.len()
    }

    pub fn validate(&self, slots: usize) -> Result<()> {
        for (name, series) in [("dni", &self.dni), ("dhi", &self.dhi), ("ghi", &self.ghi)] {
            if series.len() != slots {
                return Err(Error::Validation(format!(
                    "{name} has {} slots, expected {slots}",
                    series.len()
                )));
            }
            if series.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{name} contains a non-finite value")));
            }
        }
        Ok(())
    }

    /// Raw measurements must be non-negative; normalized ones need not be.
    pub fn validate_raw(&self, slots: usize) -> Result<()> {
        self.validate(slots)?;
        for (name, series) in [("dni", &self.dni), ("dhi", &self.dhi), ("ghi", &self.ghi)] {
            if let Some(v) = series.iter().find(|&&v| v < 0.0) {
                return Err(Error::Validation(format!("negative {name} irradiance {v}")));
            }
        }
        Ok(())
    }
}

/// Which axis of the day becomes the attention sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TokenLayout {
    /// `T` tokens, each carrying the three channel values of one slot.
    #[default]
    Time,
    /// Three tokens, each carrying one channel's whole day.
    Channel,
}

impl fmt::Display for TokenLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenLayout::Time => "time",
            TokenLayout::Channel => "channel",
        })
    }
}

impl FromStr for TokenLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(TokenLayout::Time),
            "channel" => Ok(TokenLayout::Channel),
            other => Err(Error::Config(format!(
                "unknown token layout {other:?} (expected time or channel)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    /// Hidden widths of the output MLP.
    pub out_hidden: Vec<usize>,
    pub token_layout: TokenLayout,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            head_dim: 16,
            model_dim: 64,
            out_hidden: vec![128],
            token_layout: TokenLayout::Time,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads < 1 || self.head_dim < 1 || self.model_dim < 1 {
            return Err(Error::Config(format!(
                "attention needs heads, head_dim and model_dim >= 1 (got {}, {}, {})",
                self.heads, self.head_dim, self.model_dim
            )));
        }
        if self.out_hidden.contains(&0) {
            return Err(Error::Config("attn.out_hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(tokens, features)` for a day of `slots` slots.
    pub fn token_shape(&self, slots: usize) -> (usize, usize) {
        match self.token_layout {
            TokenLayout::Time => (slots, CHANNELS),
            TokenLayout::Channel => (CHANNELS, slots),
        }
    }

    pub fn output_widths(&self, slots: usize) -> Vec<usize> {
        let (tokens, _) = self.token_shape(slots);
        let mut w = vec![tokens * self.heads * self.head_dim];
        w.extend(&self.out_hidden);
        w.push(self.model_dim);
        w
    }
}

/// Query, key and value projections of one head, each `features x head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<S> {
    pub query: Matrix<S>,
    pub key: Matrix<S>,
    pub value: Matrix<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadIds {
    pub query: NodeId,
    pub key: NodeId,
    pub value: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S> {
    pub heads: Vec<HeadParams<S>>,
    pub output: Mlp<S>,
}

#[derive(Clone, Debug)]
pub struct AttentionIds {
    pub heads: Vec<HeadIds>,
    pub output: MlpIds,
}

impl AttentionIds {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.heads.iter().flat_map(|h| [h.query, h.key, h.value]).collect();
        out.extend(self.output.ids());
        out
    }
}

impl<S: Scalar> AttentionParams<S> {
    pub fn init<R: Rng + ?Sized>(cfg: &AttentionConfig, slots: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (_, features) = cfg.token_shape(slots);
        let heads = (0..cfg.heads)
            .map(|_| HeadParams {
                query: glorot_uniform(features, cfg.head_dim, rng),
                key: glorot_uniform(features, cfg.head_dim, rng),
                value: glorot_uniform(features, cfg.head_dim, rng),
            })
            .collect();
        let output = Mlp::init(&cfg.output_widths(slots), rng)?;
        Ok(Self { heads, output })
    }

    pub fn check(&self, cfg: &AttentionConfig, slots: usize) -> Result<()> {
        let (_, features) = cfg.token_shape(slots);
        let want = (features, cfg.head_dim);
        if self.heads.len() != cfg.heads {
            return Err(Error::shape(
                "attention params",
                format!("{} heads, expected {}", self.heads.len(), cfg.heads),
            ));
        }
        for (i, h) in self.heads.iter().enumerate() {
            for m in [&h.query, &h.key, &h.value] {
                if m.shape() != want {
                    return Err(Error::shape(
                        "attention params",
                        format!("head {i} projection {:?}, expected {want:?}", m.shape()),
                    ));
                }
            }
        }
        if self.output.widths() != cfg.output_widths(slots) {
            return Err(Error::shape(
                "attention params",
                format!(
                    "output MLP widths {:?}, expected {:?}",
                    self.output.widths(),
                    cfg.output_widths(slots)
                ),
            ));
        }
        Ok(())
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix<S>)> {
        let mut out = Vec::new();
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i}.query"), &h.query));
            out.push((format!("{prefix}.head{i}.key"), &h.key));
            out.push((format!("{prefix}.head{i}.value"), &h.value));
        }
        out.extend(self.output.named_tensors(&format!("{prefix}.output")));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<S>> {
        let mut out: Vec<&mut Matrix<S>> = self
            .heads
            .iter_mut()
            .flat_map(|h| [&mut h.query, &mut h.key, &mut h.value])
            .collect();
        out.extend(self.output.tensors_mut());
        out
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> AttentionIds {
        AttentionIds {
            heads: self
                .heads
                .iter()
                .map(|h| HeadIds {
                    query: g.param(&h.query),
                    key: g.param(&h.key),
                    value: g.param(&h.value),
                })
                .collect(),
            output: self.output.bind(g),
        }
    }
}

/// Arranges the day as an attention sequence according to `layout`.
pub fn tokenize_weather<S: Scalar>(w: &WeatherDay, layout: TokenLayout) -> Matrix<S> {
    let channels = [&w.dni, &w.dhi, &w.ghi];
    match layout {
        TokenLayout::Time => Matrix::from_fn(w.slots(), CHANNELS, |t, c| S::of(channels[c][t])),
        TokenLayout::Channel => Matrix::from_fn(CHANNELS, w.slots(), |c, t| S::of(channels[c][t])),
    }
}

pub fn project_qkv<S: Scalar>(
    tokens: &Matrix<S>,
    head: &HeadParams<S>,
) -> Result<(Matrix<S>, Matrix<S>, Matrix<S>)> {
    Ok((
        tokens.matmul(&head.query)?,
        tokens.matmul(&head.key)?,
        tokens.matmul(&head.value)?,
    ))
}

/// Row-stochastic weights `softmax(Q K^T / sqrt(d_h))`.
pub fn attention_weights<S: Scalar>(q: &Matrix<S>, k: &Matrix<S>) -> Result<Matrix<S>> {
    if q.cols() != k.cols() {
        return Err(Error::shape(
            "attention",
            format!("query {:?} vs key {:?}", q.shape(), k.shape()),
        ));
    }
    let mut scores = q.matmul(&k.transpose())?;
    scores.scale_in_place(S::one() / S::of_usize(q.cols()).sqrt());
    Ok(softmax_rows(&scores))
}

pub fn attention_head<S: Scalar>(q: &Matrix<S>, k: &Matrix<S>, v: &Matrix<S>) -> Result<Matrix<S>> {
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "attention",
            format!("key {:?} vs value {:?}", k.shape(), v.shape()),
        ));
    }
    attention_weights(q, k)?.matmul(v)
}

/// Weather embedding as a `1 x model_dim` row.
pub fn weather_embed<S: Scalar>(
    w: &WeatherDay,
    cfg: &AttentionConfig,
    params: &AttentionParams<S>,
) -> Result<Matrix<S>> {
    params.check(cfg, w.slots())?;
    embed_tokens(&tokenize_weather(w, cfg.token_layout), params)
}

/// Heads, concatenation, flattening and output MLP on an already tokenized day.
pub fn embed_tokens<S: Scalar>(tokens: &Matrix<S>, params: &AttentionParams<S>) -> Result<Matrix<S>> {
    let outputs = params
        .heads
        .iter()
        .map(|h| {
            let (q, k, v) = project_qkv(tokens, h)?;
            attention_head(&q, &k, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix<S>> = outputs.iter().collect();
    let joined = crate::numerics::ops::concat_cols(&refs)?;
    let flat = joined.reshaped(1, joined.len())?;
    params.output.eval(&flat)
}

/// Graph version of [`weather_embed`]; `tokens` is the tokenized day.
pub fn weather_embed_graph<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &AttentionConfig,
    ids: &AttentionIds,
    tokens: NodeId,
) -> Result<NodeId> {
    let scale = S::one() / S::of_usize(cfg.head_dim).sqrt();
    let mut heads = Vec::with_capacity(ids.heads.len());
    for h in &ids.heads {
        let q = g.matmul(tokens, h.query)?;
        let k = g.matmul(tokens, h.key)?;
        let v = g.matmul(tokens, h.value)?;
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt)?;
        let scaled = g.scale(scores, scale);
        let weights = g.softmax_rows(scaled);
        heads.push(g.matmul(weights, v)?);
    }
    let joined = g.concat_cols(&heads)?;
    let len = g.value(joined).len();
    let flat = g.reshape(joined, 1, len)?;
    Mlp::forward(&ids.output, g, flat)
}
