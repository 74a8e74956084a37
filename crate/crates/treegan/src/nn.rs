//! Named parameters, parameter collections, and the linear building block.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Index of a parameter within a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameters. Order is stable, so optimizer
/// state and checkpoints address parameters by position as well as by name.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn total_coords(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Zero every gradient accumulator.
    pub fn reset_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape().to_vec());
        }
    }

    /// Insert every parameter as a leaf on `graph`. `trainable` controls
    /// whether gradients will flow to them.
    pub fn bind(&self, graph: &Graph<T>, trainable: bool) -> Binding {
        Binding {
            values: self
                .params
                .iter()
                .map(|p| graph.leaf(p.value.clone(), trainable))
                .collect(),
        }
    }

    /// Run backward from `loss` and add the resulting gradients into each
    /// parameter's accumulator. Parameters the loss does not reach get an
    /// exactly-zero contribution.
    pub fn accumulate_grads(
        &mut self,
        graph: &Graph<T>,
        binding: &Binding,
        loss: Value,
    ) -> Result<()> {
        let grads = graph.backward(loss, &binding.values)?;
        for (param, grad) in self.params.iter_mut().zip(grads) {
            if let Some(g) = grad {
                let gt = graph.value(g);
                if !gt.all_finite() {
                    return Err(Error::NonFinite("parameter gradient"));
                }
                param.grad = param.grad.add(&gt)?;
            }
        }
        Ok(())
    }
}

/// The graph leaves for one [`ParamSet::bind`] call, in parameter order.
pub struct Binding {
    values: Vec<Value>,
}

impl Binding {
    pub fn value(&self, id: ParamId) -> Value {
        self.values[id.0]
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }
}

/// Handles for one affine map y = xW + b.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier/Glorot-uniform weight, zero bias.
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(
            format!("{prefix}.weight"),
            xavier_uniform(d_in, d_out, vec![d_in, d_out], rng),
        );
        let bias = params.add(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// y = xW + b, recorded for gradient computation.
    pub fn forward<T: Scalar>(
        &self,
        graph: &Graph<T>,
        binding: &Binding,
        x: Value,
    ) -> Result<Value> {
        let shape = graph.shape_of(x);
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "linear_forward",
                lhs: shape,
                rhs: vec![self.d_in, self.d_out],
            });
        }
        let xw = graph.matmul(x, binding.value(self.weight));
        Ok(graph.add_row_broadcast(xw, binding.value(self.bias)))
    }
}

/// Uniform Xavier/Glorot initialization: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform<T: Scalar>(
    fan_in: usize,
    fan_out: usize,
    shape: Vec<usize>,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let a = T::of_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::sample_uniform(rng, -a, a))
        .collect();
    Tensor::new(shape, data).unwrap()
}
