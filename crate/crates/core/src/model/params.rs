use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Ones,
    Normal(f64),
}

/// Every parameter of `config` in a fixed order: path, shape, initializer.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let inner = config.inner_dim();
    let dff = config.d_ff;
    let df = d as f64;
    let mut out = vec![(
        "shared.embedding".to_string(),
        vec![config.vocab_size, d],
        Init::Normal(1.0),
    )];

    let attention = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, with_bias: bool| {
        out.push((
            format!("{prefix}.q"),
            vec![d, inner],
            Init::Normal((df * config.d_kv as f64).powf(-0.5)),
        ));
        out.push((format!("{prefix}.k"), vec![d, inner], Init::Normal(df.powf(-0.5))));
        out.push((format!("{prefix}.v"), vec![d, inner], Init::Normal(df.powf(-0.5))));
        out.push((
            format!("{prefix}.o"),
            vec![inner, d],
            Init::Normal((inner as f64).powf(-0.5)),
        ));
        if with_bias {
            out.push((
                format!("{prefix}.relative_bias"),
                vec![config.rel_buckets, config.n_heads],
                Init::Normal(df.powf(-0.5)),
            ));
        }
    };
    let ffn = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        out.push((format!("{prefix}.wi_0"), vec![d, dff], Init::Normal(df.powf(-0.5))));
        if config.gated_ffn {
            out.push((format!("{prefix}.wi_1"), vec![d, dff], Init::Normal(df.powf(-0.5))));
        }
        out.push((
            format!("{prefix}.wo"),
            vec![dff, d],
            Init::Normal((dff as f64).powf(-0.5)),
        ));
    };

    for i in 0..config.enc_layers {
        let p = format!("encoder.block.{i}");
        out.push((format!("{p}.attn_norm"), vec![d], Init::Ones));
        attention(&mut out, &format!("{p}.attn"), i == 0);
        out.push((format!("{p}.ffn_norm"), vec![d], Init::Ones));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    out.push(("encoder.final_norm".to_string(), vec![d], Init::Ones));
    for i in 0..config.dec_layers {
        let p = format!("decoder.block.{i}");
        out.push((format!("{p}.self_attn_norm"), vec![d], Init::Ones));
        attention(&mut out, &format!("{p}.self_attn"), i == 0);
        out.push((format!("{p}.cross_attn_norm"), vec![d], Init::Ones));
        attention(&mut out, &format!("{p}.cross_attn"), false);
        out.push((format!("{p}.ffn_norm"), vec![d], Init::Ones));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    out.push(("decoder.final_norm".to_string(), vec![d], Init::Ones));
    out
}

/// Named parameter tensors, ordered by path.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    tensors: BTreeMap<String, Arc<Tensor<T>>>,
}

impl<T: Scalar> ParameterStore<T> {
    /// Fresh parameters with the standard T5 initialization scales.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (path, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Ones => vec![T::one(); n],
                Init::Normal(std) => (0..n)
                    .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect(),
            };
            tensors.insert(path, Arc::new(Tensor::new(shape, data)?));
        }
        Ok(ParameterStore { tensors })
    }

    /// Builds a store from loaded tensors, checking them against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let expected = layout(config);
        if expected.len() != tensors.len() {
            for path in tensors.keys() {
                if !expected.iter().any(|(p, _, _)| p == path) {
                    return Err(Error::InvalidArgument(format!("unexpected parameter {path}")));
                }
            }
        }
        let mut out = BTreeMap::new();
        let mut tensors = tensors;
        for (path, shape, _) in expected {
            let t = tensors
                .remove(&path)
                .ok_or_else(|| Error::MissingAttribute(path.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {path}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            out.insert(path, Arc::new(t));
        }
        Ok(ParameterStore { tensors: out })
    }

    pub fn get(&self, path: &str) -> Option<&Arc<Tensor<T>>> {
        self.tensors.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arc<Tensor<T>>)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }

    /// Mutable access for in-place updates; clones a tensor only if it is
    /// still shared with a live tape.
    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(path).map(Arc::make_mut)
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.cast::<U>())))
                .collect(),
        }
    }
}

/// Tape handles for every parameter of a store.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register<T: Scalar>(store: &ParameterStore<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        let vars = store
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.shared_leaf(Arc::clone(v), trainable)))
            .collect();
        ParamVars { vars }
    }

    /// Wraps explicitly created leaves, keyed by path.
    pub fn from_map(vars: BTreeMap<String, Var>) -> Self {
        ParamVars { vars }
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::MissingAttribute(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
