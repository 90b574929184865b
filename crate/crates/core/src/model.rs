//! The disaggregation model: load embedding and weather embedding are
//! concatenated and mapped by a prediction head to a non-negative PV series.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    embed_tokens, tokenize_weather, weather_embed_graph, AttentionConfig, AttentionIds, AttentionParams,
};
use crate::data::{quantize_kwh, DailySample, NormStats, SLOTS};
use crate::error::{Error, Result};
use crate::hi::{hi_embed, hi_embed_graph, HiConfig, HiIds, HiParams};
use crate::numerics::ops::{concat_cols, relu};
use crate::numerics::{Graph, Matrix, Mlp, MlpIds, NodeId};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub slots: usize,
    pub hi: HiConfig,
    pub attn: AttentionConfig,
    /// Hidden widths of the prediction head.
    pub pred_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            slots: SLOTS,
            hi: HiConfig::default(),
            attn: AttentionConfig::default(),
            pred_hidden: vec![128],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.hi.validate(self.slots)?;
        self.attn.validate()?;
        if self.pred_hidden.contains(&0) {
            return Err(Error::Config("pred.hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fused_width(&self) -> usize {
        self.hi.embed_dim + self.attn.model_dim
    }

    pub fn pred_widths(&self) -> Vec<usize> {
        let mut w = vec![self.fused_width()];
        w.extend(&self.pred_hidden);
        w.push(self.slots);
        w
    }
}

/// Every learnable weight of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub hi: HiParams<S>,
    pub attn: AttentionParams<S>,
    pub pred: Mlp<S>,
}

#[derive(Clone, Debug)]
pub struct ModelIds {
    pub hi: HiIds,
    pub attn: AttentionIds,
    pub pred: MlpIds,
}

impl ModelIds {
    /// Node ids in [`ModelParams::named_tensors`] order.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = self.hi.ids();
        out.extend(self.attn.ids());
        out.extend(self.pred.ids());
        out
    }
}

/// Coarse parameter group of a tensor name, used for diagnostics.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("hi.scale_weights") {
        "hi.scale_weights"
    } else if name.starts_with("hi.") {
        "hi.scale_mlps"
    } else if name.starts_with("attn.head") {
        "attn.qkv"
    } else if name.starts_with("attn.") {
        "attn.output"
    } else {
        "pred"
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            hi: HiParams::init(&cfg.hi, cfg.slots, &mut rng)?,
            attn: AttentionParams::init(&cfg.attn, cfg.slots, &mut rng)?,
            pred: Mlp::init(&cfg.pred_widths(), &mut rng)?,
        })
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        self.hi.check(&cfg.hi, cfg.slots)?;
        self.attn.check(&cfg.attn, cfg.slots)?;
        if self.pred.widths() != cfg.pred_widths() {
            return Err(Error::shape(
                "pred params",
                format!("widths {:?}, expected {:?}", self.pred.widths(), cfg.pred_widths()),
            ));
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix<S>)> {
        let mut out = self.hi.named_tensors("hi");
        out.extend(self.attn.named_tensors("attn"));
        out.extend(self.pred.named_tensors("pred"));
        out
    }

    /// Mutable tensors in [`named_tensors`](Self::named_tensors) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<S>> {
        let mut out = self.hi.tensors_mut();
        out.extend(self.attn.tensors_mut());
        out.extend(self.pred.tensors_mut());
        out
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> ModelIds {
        ModelIds {
            hi: self.hi.bind(g),
            attn: self.attn.bind(g),
            pred: self.pred.bind(g),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Normalized model inputs for one day.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs<S> {
    /// `1 x T` normalized net load.
    pub load: Matrix<S>,
    /// Tokenized normalized irradiance.
    pub tokens: Matrix<S>,
}

impl<S: Scalar> ModelInputs<S> {
    pub fn from_sample(sample: &DailySample, norm: &NormStats, cfg: &ModelConfig) -> Result<Self> {
        sample.validate()?;
        let n = norm.apply(sample);
        Ok(Self {
            load: Matrix::row_vector(n.net_load.iter().map(|&v| S::of(v)).collect()),
            tokens: tokenize_weather(&n.weather, cfg.attn.token_layout),
        })
    }
}

/// Concatenates the load and weather embeddings, load first.
pub fn fuse<S: Scalar>(e_load: &Matrix<S>, e_weather: &Matrix<S>) -> Result<Matrix<S>> {
    concat_cols(&[e_load, e_weather])
}

/// Graph-free forward pass returning the `1 x T` prediction.
pub fn forward<S: Scalar>(cfg: &ModelConfig, params: &ModelParams<S>, inputs: &ModelInputs<S>) -> Result<Matrix<S>> {
    params.check(cfg)?;
    let e_load = hi_embed(&inputs.load, &cfg.hi, &params.hi)?;
    let e_weather = embed_tokens(&inputs.tokens, &params.attn)?;
    let fused = fuse(&e_load, &e_weather)?;
    Ok(relu(&params.pred.eval(&fused)?))
}

/// Records the forward pass on `g` and returns the `1 x T` prediction node.
pub fn forward_graph<S: Scalar>(
    g: &mut Graph<'_, S>,
    cfg: &ModelConfig,
    ids: &ModelIds,
    load: NodeId,
    tokens: NodeId,
) -> Result<NodeId> {
    let e_load = hi_embed_graph(g, &cfg.hi, &ids.hi, load)?;
    let e_weather = weather_embed_graph(g, &cfg.attn, &ids.attn, tokens)?;
    let fused = g.concat_cols(&[e_load, e_weather])?;
    let out = Mlp::forward(&ids.pred, g, fused)?;
    Ok(g.relu(out))
}

/// Day loss and its gradient for every tensor, in `named_tensors` order.
pub fn loss_and_grads<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    inputs: &ModelInputs<S>,
    target: &[f64],
) -> Result<(S, Vec<Matrix<S>>)> {
    if target.len() != cfg.slots {
        return Err(Error::shape(
            "day_loss",
            format!("target has {} slots, expected {}", target.len(), cfg.slots),
        ));
    }
    let mut g = Graph::new();
    let ids = params.bind(&mut g);
    let load = g.input(inputs.load.clone());
    let tokens = g.input(inputs.tokens.clone());
    let pred = forward_graph(&mut g, cfg, &ids, load, tokens)?;
    let truth = g.input(Matrix::row_vector(target.iter().map(|&v| S::of(v)).collect()));
    let loss = g.mse(pred, truth)?;
    g.backward(loss)?;
    let value = g.value(loss).get(0, 0);
    let grads = ids.ids().into_iter().map(|id| g.take_grad(id)).collect();
    Ok((value, grads))
}

/// Predicted PV for one prosumer-day, kWh per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub prosumer_id: String,
    pub date: NaiveDate,
    pub ghat: Vec<f64>,
}

/// Mean squared error between a prediction and the metered PV.
pub fn day_loss(pred: &Prediction, truth: &[f64]) -> Result<f64> {
    if pred.ghat.len() != truth.len() {
        return Err(Error::shape(
            "day_loss",
            format!("prediction has {} slots, truth {}", pred.ghat.len(), truth.len()),
        ));
    }
    let n = truth.len().max(1) as f64;
    Ok(pred.ghat.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// Mean of per-day losses.
pub fn batch_loss(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

/// Gross consumption `net + pv` per slot.
pub fn consumption_from(net_load: &[f64], ghat: &[f64]) -> Result<Vec<f64>> {
    if net_load.len() != ghat.len() {
        return Err(Error::shape(
            "consumption_from",
            format!("net load has {} slots, prediction {}", net_load.len(), ghat.len()),
        ));
    }
    Ok(net_load.iter().zip(ghat).map(|(l, g)| l + g).collect())
}

/// A trained model together with the normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Disaggregator {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub params: ModelParams<f64>,
}

impl Disaggregator {
    pub fn inputs(&self, sample: &DailySample) -> Result<ModelInputs<f64>> {
        ModelInputs::from_sample(sample, &self.norm, &self.config)
    }

    /// Predicts PV for a sample; truth, if present, is ignored.
    ///
    /// Output is rounded to the kWh storage grid so that `net + ghat` and
    /// `(net + ghat) - ghat` are exact.
    pub fn predict_day(&self, sample: &DailySample) -> Result<Prediction> {
        let out = forward(&self.config, &self.params, &self.inputs(sample)?)?;
        Ok(Prediction {
            prosumer_id: sample.prosumer_id.clone(),
            date: sample.date,
            ghat: out.data().iter().map(|&v| quantize_kwh(v)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::numerics::Dense;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            slots: SLOTS,
            hi: HiConfig { kernel_sizes: vec![1, 4], mlp_hidden: vec![8], embed_dim: 6 },
            attn: AttentionConfig { heads: 2, head_dim: 3, model_dim: 5, out_hidden: vec![7], ..Default::default() },
            pred_hidden: vec![9],
        }
    }

    fn model(seed: u64) -> (Disaggregator, Vec<DailySample>) {
        let data = synth_generate(&SynthConfig::new(2, 5, seed));
        let norm = NormStats::fit(&data).unwrap();
        let config = small_cfg();
        let params = ModelParams::init(&config, seed).unwrap();
        (Disaggregator { config, norm, params }, data)
    }

    #[test]
    fn fuse_order_and_slicing() {
        let a = Matrix::row_vector(vec![1.0; 64]);
        let b = Matrix::row_vector((0..64).map(f64::from).collect());
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.cols(), 128);
        assert_eq!(&f.data()[..64], a.data());
        assert_eq!(&f.data()[64..], b.data());
        let z = fuse(&Matrix::zeros(1, 64), &b).unwrap();
        assert!(z.data()[..64].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_predicts_no_pv() {
        let (mut m, data) = model(1);
        let widths = m.config.pred_widths();
        m.params.pred = Mlp {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        };
        assert_eq!(m.predict_day(&data[0]).unwrap().ghat, vec![0.0; SLOTS]);
        let last = m.params.pred.layers.len() - 1;
        m.params.pred.layers[last].bias = Matrix::filled(1, SLOTS, -0.5);
        assert_eq!(m.predict_day(&data[1]).unwrap().ghat, vec![0.0; SLOTS]);
    }

    #[test]
    fn predictions_are_nonnegative_and_deterministic() {
        let (m, data) = model(2);
        for s in &data {
            let a = m.predict_day(s).unwrap();
            assert!(a.ghat.iter().all(|&v| v >= 0.0));
            assert_eq!(a, m.predict_day(s).unwrap());
            assert_eq!(a, m.predict_day(&s.without_truth()).unwrap());
        }
    }

    #[test]
    fn malformed_sample_rejected_before_compute() {
        let (m, data) = model(3);
        let mut bad = data[0].clone();
        bad.weather.ghi.truncate(40);
        assert!(matches!(m.predict_day(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn graph_forward_matches_direct() {
        let (m, data) = model(4);
        let inputs = m.inputs(&data[0]).unwrap();
        let direct = forward(&m.config, &m.params, &inputs).unwrap();
        let mut g = Graph::new();
        let ids = m.params.bind(&mut g);
        let l = g.input(inputs.load.clone());
        let t = g.input(inputs.tokens.clone());
        let out = forward_graph(&mut g, &m.config, &ids, l, t).unwrap();
        for (a, b) in direct.data().iter().zip(g.value(out).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ids.ids().len(), m.params.named_tensors().len());
    }

    #[test]
    fn loss_examples() {
        let p = |g: Vec<f64>| Prediction { prosumer_id: "x".into(), date: NaiveDate::MIN, ghat: g };
        assert_eq!(day_loss(&p(vec![0.3; 4]), &[0.3; 4]).unwrap(), 0.0);
        assert_eq!(day_loss(&p(vec![0.0; 4]), &[0.5; 4]).unwrap(), 0.25);
        assert!(day_loss(&p(vec![0.0; 4]), &[0.5; 3]).is_err());
        assert_eq!(batch_loss(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn consumption_examples() {
        let l = [0.25, -0.5, 1.0];
        assert_eq!(consumption_from(&l, &[0.0; 3]).unwrap(), l.to_vec());
        assert_eq!(consumption_from(&[-1.0, 0.0], &[2.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert!(consumption_from(&l, &[0.0; 2]).is_err());
    }

    #[test]
    fn consumption_identity_on_predictions() {
        let (m, data) = model(5);
        for s in &data {
            let pred = m.predict_day(s).unwrap();
            let u = consumption_from(&s.net_load, &pred.ghat).unwrap();
            for t in 0..SLOTS {
                assert_eq!(u[t] - pred.ghat[t], s.net_load[t]);
            }
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        use crate::numerics::finite_diff::relative_error;
        use rand::Rng;
        let (m, data) = model(7);
        let inputs = m.inputs(&data[3]).unwrap();
        let target = data[3].pv_truth.clone().unwrap();
        let (_, grads) = loss_and_grads(&m.config, &m.params, &inputs, &target).unwrap();
        let names: Vec<String> = m.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        for group in ["hi.scale_mlps", "hi.scale_weights", "attn.qkv", "attn.output", "pred"] {
            let members: Vec<usize> = (0..names.len()).filter(|&i| param_group(&names[i]) == group).collect();
            for _ in 0..5 {
                let t = members[rng.random_range(0..members.len())];
                let j = rng.random_range(0..grads[t].len());
                let loss_at = |delta: f64| {
                    let mut p = m.params.clone();
                    p.tensors_mut()[t].data_mut()[j] += delta;
                    let out = forward(&m.config, &p, &inputs).unwrap();
                    crate::numerics::ops::mse(&out, &Matrix::row_vector(target.clone())).unwrap()
                };
                let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
                let an = grads[t].data()[j];
                if an.abs() > 1e-6 || fd.abs() > 1e-6 {
                    assert!(relative_error(an, fd) <= 1e-4, "{} [{j}]: {an} vs {fd}", names[t]);
                }
            }
        }
    }

    #[test]
    fn param_groups_cover_every_tensor() {
        let (m, _) = model(6);
        let groups: std::collections::BTreeSet<&str> =
            m.params.named_tensors().iter().map(|(n, _)| param_group(n)).collect();
        assert_eq!(groups.len(), 5, "{groups:?}");
    }
}
