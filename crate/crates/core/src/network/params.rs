use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor, Var};

/// A named learnable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    dims: Vec<usize>,
    value: Tensor,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let value = Tensor::new(Shape::from_dims(&dims)?, values)?;
        let grad = vec![0.0; value.data().len()];
        Ok(Param { dims, value, grad })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn values(&self) -> &[f64] {
        self.value.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Weight { fan_in: usize },
    Bias,
    Slope,
}

/// Every parameter the model of `config` owns, with its logical dims.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Kind)> {
    let g = config.growth;
    let mut out = Vec::new();
    let conv = |out: &mut Vec<_>, prefix: String, cin: usize, cout: usize, k: usize| {
        out.push((
            format!("{prefix}.weight"),
            vec![cout, cin, k, k],
            Kind::Weight {
                fan_in: cin * k * k,
            },
        ));
        out.push((format!("{prefix}.bias"), vec![cout], Kind::Bias));
    };
    let k = config.kernel;
    for path in ["path_over", "path_under"] {
        conv(&mut out, format!("{path}.stem.conv"), 1, g, k);
        out.push((format!("{path}.stem.prelu.slope"), vec![g], Kind::Slope));
        for i in 1..=config.blocks {
            conv(&mut out, format!("{path}.block{i}.conv"), i * g, g, k);
            out.push((format!("{path}.block{i}.prelu.slope"), vec![g], Kind::Slope));
        }
    }
    let hidden = 2 * g / config.attention_reduction;
    for i in 1..=config.blocks {
        let p = format!("sffm{i}");
        conv(&mut out, format!("{p}.spatial_conv"), 2 * g, g, k);
        for cb in ["amp_cb", "pha_cb"] {
            conv(&mut out, format!("{p}.{cb}.conv"), 2 * g, g, 1);
            out.push((format!("{p}.{cb}.prelu.slope"), vec![g], Kind::Slope));
        }
        conv(&mut out, format!("{p}.freq_conv"), g, g, 1);
        conv(&mut out, format!("{p}.spatial_attn.conv"), 2 * g, 2, k);
        out.push((
            format!("{p}.channel_attn.fc1.weight"),
            vec![hidden, g],
            Kind::Weight { fan_in: g },
        ));
        out.push((
            format!("{p}.channel_attn.fc1.bias"),
            vec![hidden],
            Kind::Bias,
        ));
        out.push((
            format!("{p}.channel_attn.fc2.weight"),
            vec![2 * g, hidden],
            Kind::Weight { fan_in: hidden },
        ));
        out.push((
            format!("{p}.channel_attn.fc2.bias"),
            vec![2 * g],
            Kind::Bias,
        ));
        conv(&mut out, format!("{p}.out_conv"), g, g, k);
    }
    conv(&mut out, "head.conv".into(), config.blocks * g, 1, 1);
    out
}

/// Learnable tensors keyed by hierarchical name, iterated in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    map: BTreeMap<String, Param>,
}

impl ModelParams {
    /// Kaiming-uniform fan-in weights, zero biases, PReLU slopes of 0.25.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut specs = layout(config);
        specs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut map = BTreeMap::new();
        for (name, dims, kind) in specs {
            let n: usize = dims.iter().product();
            let values = match kind {
                Kind::Weight { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
                Kind::Bias => vec![0.0; n],
                Kind::Slope => vec![0.25; n],
            };
            map.insert(name, Param::new(dims, values)?);
        }
        Ok(ModelParams { map })
    }

    /// Builds a collection from explicit tensors, checking the name set and
    /// dims against `config`.
    pub fn from_map(config: &ModelConfig, map: BTreeMap<String, Param>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != map.len() {
            return Err(Error::Checkpoint(format!(
                "parameter set has {} entries, model expects {}",
                map.len(),
                expected.len()
            )));
        }
        for (name, dims, _) in &expected {
            match map.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(p) if p.dims() != dims.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: dims {:?}, expected {dims:?}",
                        p.dims()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(ModelParams { map })
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn count_values(&self) -> usize {
        self.map.values().map(Param::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|p| p.value.is_finite())
    }

    /// Root-sum-square of the values of every parameter, by name.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.map
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    p.values().iter().map(|v| v * v).sum::<f64>().sqrt(),
                )
            })
            .collect()
    }

    /// Places every parameter in `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(k, p)| {
                let t = p.value.clone();
                let v = if trainable {
                    g.variable(t)
                } else {
                    g.constant(t)
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients computed by the last backward pass of `g`.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (name, p) in self.map.iter_mut() {
            if let Some(d) = bound.vars.get(name).and_then(|&v| g.grad(v)) {
                for (acc, x) in p.grad.iter_mut().zip(d) {
                    *acc += x;
                }
            }
        }
    }
}

/// Graph handles of a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    /// Points `name` at another graph node.
    pub fn replace(&mut self, name: &str, v: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("unknown parameter {name}"))),
        }
    }
}
