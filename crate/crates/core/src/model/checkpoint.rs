//! Checkpoint directory layout:
//!
//! * `manifest`: text, one record per line (format tag, step, config as JSON,
//!   optimizer hyper-parameters, then `param <name> <shape> <offset>` lines);
//! * `params.bin`: little-endian `f64` values concatenated in manifest order;
//! * `optimizer.bin` (optional): AdamW first then second moments, same order.

use std::fs;
use std::path::Path;

use super::{ComFormerModel, ModelConfig, ModelError};
use crate::tensor::{AdamW, AdamWConfig, Tensor};

const FORMAT: &str = "comformer-checkpoint 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ComFormerModel,
    pub optimizer: Option<AdamW>,
    pub step: u64,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn write_f64s<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64s(bytes: &[u8]) -> Result<Vec<f64>, ModelError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(err("binary length is not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub fn save_checkpoint(dir: &Path, model: &ComFormerModel, optimizer: Option<&AdamW>, step: u64) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let config = serde_json::to_string(&model.config).map_err(|e| err(e.to_string()))?;
    let mut manifest = format!("{FORMAT}\nstep {step}\nseed {}\nconfig {config}\n", model.config.seed);
    if let Some(opt) = optimizer {
        let c = opt.config;
        manifest.push_str(&format!(
            "optimizer lr={} beta1={} beta2={} eps={} weight_decay={} step={}\n",
            c.lr, c.beta1, c.beta2, c.eps, c.weight_decay, opt.step
        ));
    }
    let mut offset = 0;
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        manifest.push_str(&format!("param {name} {} {offset}\n", shape.join("x")));
        offset += t.numel();
    }
    fs::write(dir.join("manifest"), manifest)?;
    fs::write(dir.join("params.bin"), write_f64s(model.params.tensors.iter().flat_map(|t| t.data.iter())))?;
    let opt_path = dir.join("optimizer.bin");
    match optimizer {
        Some(opt) => fs::write(opt_path, write_f64s(opt.m.iter().chain(&opt.v).flatten()))?,
        None if opt_path.exists() => fs::remove_file(opt_path)?,
        None => {}
    }
    Ok(())
}

fn parse_optimizer(line: &str) -> Result<(AdamWConfig, u64), ModelError> {
    let mut c = AdamWConfig::default();
    let mut step = 0;
    for field in line.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| err(format!("bad optimizer field {field:?}")))?;
        let f = || v.parse::<f64>().map_err(|_| err(format!("bad optimizer value {field:?}")));
        match k {
            "lr" => c.lr = f()?,
            "beta1" => c.beta1 = f()?,
            "beta2" => c.beta2 = f()?,
            "eps" => c.eps = f()?,
            "weight_decay" => c.weight_decay = f()?,
            "step" => step = v.parse().map_err(|_| err(format!("bad optimizer step {v:?}")))?,
            _ => return Err(err(format!("unknown optimizer field {k:?}"))),
        }
    }
    Ok((c, step))
}

/// Loads a checkpoint, rebuilding the layout from the stored config and
/// validating every parameter's name, shape and offset against it.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ModelError> {
    let manifest = fs::read_to_string(dir.join("manifest"))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(FORMAT) {
        return Err(err("unrecognized manifest format"));
    }
    let mut step = None;
    let mut config: Option<ModelConfig> = None;
    let mut optimizer = None;
    let mut params = Vec::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').ok_or_else(|| err(format!("malformed manifest line {line:?}")))?;
        match key {
            "step" => step = Some(rest.parse::<u64>().map_err(|_| err("bad step"))?),
            "seed" => {}
            "config" => config = Some(serde_json::from_str(rest).map_err(|e| err(format!("config: {e}")))?),
            "optimizer" => optimizer = Some(parse_optimizer(rest)?),
            "param" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, shape, offset] = parts[..] else {
                    return Err(err(format!("malformed param line {line:?}")));
                };
                let shape: Vec<usize> =
                    shape.split('x').map(str::parse).collect::<Result<_, _>>().map_err(|_| err(format!("bad shape in {line:?}")))?;
                let offset: usize = offset.parse().map_err(|_| err(format!("bad offset in {line:?}")))?;
                params.push((name.to_string(), shape, offset));
            }
            _ => return Err(err(format!("unknown manifest key {key:?}"))),
        }
    }
    let config = config.ok_or_else(|| err("manifest has no config"))?;
    let step = step.ok_or_else(|| err("manifest has no step"))?;
    let mut model = ComFormerModel::new(config)?;
    if params.len() != model.params.len() {
        return Err(err(format!("manifest lists {} parameters, config implies {}", params.len(), model.params.len())));
    }
    let values = read_f64s(&fs::read(dir.join("params.bin"))?)?;
    if values.len() != model.params.total() {
        return Err(err(format!("params.bin holds {} values, config implies {}", values.len(), model.params.total())));
    }
    let mut tensors = Vec::with_capacity(params.len());
    let mut expected_offset = 0;
    for (i, (name, shape, offset)) in params.into_iter().enumerate() {
        if name != model.params.names[i] || offset != expected_offset {
            return Err(err(format!("parameter {i} is {name}@{offset}, expected {}@{expected_offset}", model.params.names[i])));
        }
        let n: usize = shape.iter().product();
        if offset + n > values.len() {
            return Err(err(format!("parameter {name} runs past the end of params.bin")));
        }
        tensors.push(Tensor::new(shape, values[offset..offset + n].to_vec()));
        expected_offset += n;
    }
    model.set_params(tensors)?;

    let optimizer = match optimizer {
        None => None,
        Some((config, opt_step)) => {
            let moments = read_f64s(&fs::read(dir.join("optimizer.bin"))?)?;
            let total = model.params.total();
            if moments.len() != 2 * total {
                return Err(err(format!("optimizer.bin holds {} values, expected {}", moments.len(), 2 * total)));
            }
            let split = |base: usize| {
                let mut at = base;
                model
                    .params
                    .tensors
                    .iter()
                    .map(|t| {
                        let v = moments[at..at + t.numel()].to_vec();
                        at += t.numel();
                        v
                    })
                    .collect::<Vec<_>>()
            };
            Some(AdamW { config, step: opt_step, m: split(0), v: split(total) })
        }
    };
    Ok(Checkpoint { model, optimizer, step })
}
