//! Text checkpoint holding the model config, normalization and every tensor.
//!
//! Floats are written in shortest round-trip form, so reading a checkpoint
//! back reproduces each 64-bit value exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{model_entries, set_model_key};
use crate::data::{ChannelStats, NormStats};
use crate::error::{Error, Result};
use crate::model::{Disaggregator, ModelConfig, ModelParams};

pub const MAGIC: &str = "pvdisagg-checkpoint";
pub const VERSION: u32 = 1;

const CHANNELS: [&str; 4] = ["net_load", "dni", "dhi", "ghi"];

pub fn write_checkpoint(model: &Disaggregator) -> String {
    let mut out = format!("{MAGIC} {VERSION}\nslots {}\n", model.config.slots);
    for (k, v) in model_entries(&model.config) {
        let _ = writeln!(out, "config {k} {v}");
    }
    let n = &model.norm;
    for (name, st) in CHANNELS.iter().zip([n.net_load, n.dni, n.dhi, n.ghi]) {
        let _ = writeln!(out, "norm {name} {} {}", st.mean, st.std);
    }
    for (name, t) in model.params.named_tensors() {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(path: &Path, model: &Disaggregator) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Disaggregator> {
    read_checkpoint(&std::fs::read_to_string(path)?)
        .map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| bad(line, format!("cannot parse {s:?}")))
}

pub fn read_checkpoint(text: &str) -> Result<Disaggregator> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Checkpoint(format!("truncated before {what}")));

    let (ln, head) = next("header")?;
    if head != format!("{MAGIC} {VERSION}") {
        return Err(bad(ln, format!("expected '{MAGIC} {VERSION}', got {head:?}")));
    }
    let (ln, slots) = next("slots")?;
    let mut config = ModelConfig {
        slots: num(ln, slots.strip_prefix("slots ").ok_or_else(|| bad(ln, "expected slots"))?)?,
        ..ModelConfig::default()
    };
    for (key, _) in model_entries(&ModelConfig::default()) {
        let (ln, line) = next(key)?;
        let rest = line
            .strip_prefix("config ")
            .and_then(|r| r.strip_prefix(key))
            .ok_or_else(|| bad(ln, format!("expected config {key}")))?;
        set_model_key(&mut config, key, rest.trim()).map_err(|e| bad(ln, e))?;
    }
    config.validate().map_err(|e| Error::Checkpoint(format!("config: {e}")))?;

    let mut stats = [ChannelStats { mean: 0.0, std: 1.0 }; 4];
    for (slot, name) in stats.iter_mut().zip(CHANNELS) {
        let (ln, line) = next(name)?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 4 || parts[0] != "norm" || parts[1] != name {
            return Err(bad(ln, format!("expected 'norm {name} MEAN STD'")));
        }
        *slot = ChannelStats { mean: num(ln, parts[2])?, std: num(ln, parts[3])? };
    }
    let norm = NormStats { net_load: stats[0], dni: stats[1], dhi: stats[2], ghi: stats[3] };

    let mut params = ModelParams::<f64>::init(&config, 0)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, tensor) in names.iter().zip(params.tensors_mut()) {
        let (ln, line) = next(name)?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
            return Err(bad(ln, format!("expected 'tensor {name} ROWS COLS', got {line:?}")));
        }
        let shape: (usize, usize) = (num(ln, parts[2])?, num(ln, parts[3])?);
        if shape != tensor.shape() {
            return Err(bad(ln, format!("{name} has shape {shape:?}, config implies {:?}", tensor.shape())));
        }
        let (ln, values) = next(name)?;
        let values: Vec<f64> = values.split(' ').filter(|v| !v.is_empty()).map(|v| num(ln, v)).collect::<Result<_>>()?;
        if values.len() != tensor.len() {
            return Err(bad(ln, format!("{name} has {} values, expected {}", values.len(), tensor.len())));
        }
        tensor.data_mut().copy_from_slice(&values);
    }
    let (ln, end) = next("end")?;
    if end != "end" {
        return Err(bad(ln, format!("expected end marker, got {end:?}")));
    }
    Ok(Disaggregator { config, norm, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::hi::HiConfig;

    fn model() -> Disaggregator {
        let config = ModelConfig {
            hi: HiConfig { kernel_sizes: vec![2, 8], mlp_hidden: vec![5], embed_dim: 4 },
            attn: AttentionConfig { heads: 1, head_dim: 2, model_dim: 3, out_hidden: vec![], ..Default::default() },
            pred_hidden: vec![6],
            ..Default::default()
        };
        let data = synth_generate(&SynthConfig::new(2, 4, 1));
        let mut params = ModelParams::init(&config, 12).unwrap();
        params.pred.layers[0].bias.data_mut()[0] = 1.0 / 3.0;
        params.pred.layers[0].bias.data_mut()[1] = -0.0;
        params.pred.layers[0].bias.data_mut()[2] = 1e-300;
        Disaggregator { config, norm: NormStats::fit(&data).unwrap(), params }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let text = write_checkpoint(&m);
        let back = read_checkpoint(&text).unwrap();
        for ((_, a), (_, b)) in m.params.named_tensors().iter().zip(back.params.named_tensors()) {
            let bits = |t: &crate::numerics::Matrix<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back), text);
    }

    #[test]
    fn rejects_damage() {
        let text = write_checkpoint(&model());
        assert!(read_checkpoint(&text.replace(MAGIC, "other")).is_err());
        assert!(read_checkpoint(&text.replace("hi.embed_dim 4", "hi.embed_dim 5")).is_err());
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(read_checkpoint(&cut).is_err());
        assert!(read_checkpoint(&text.replace("end\n", "")).is_err());
    }
}
