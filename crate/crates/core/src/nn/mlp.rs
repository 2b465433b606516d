use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// Architecture of a dense network. The activation is applied after every
/// hidden layer; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    output_dim: usize,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "network dimensions must be >= 1 (input {input_dim}, hidden {hidden_dims:?}, output {output_dim})"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(fan_in, fan_out)` per layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Offset of layer `layer` inside the flat vector. Weights come first,
    /// row-major `(fan_out, fan_in)`, then the `fan_out` biases.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_dims()[..layer]
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }

    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let (fan_in, fan_out) = self.layer_dims()[layer];
        assert!(row < fan_out && col < fan_in, "weight index out of range");
        self.layer_offset(layer) + row * fan_in + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        let (fan_in, fan_out) = self.layer_dims()[layer];
        assert!(row < fan_out, "bias index out of range");
        self.layer_offset(layer) + fan_in * fan_out + row
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector(vec![0.0; self.param_count()])
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(values)
    }
}

/// Flat parameter storage, laid out as described on [`MlpSpec::layer_offset`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<LayerParams>> {
        check_len("parameter vector", spec.param_count(), self.len())?;
        let mut offset = 0;
        Ok(spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let w_end = offset + fan_in * fan_out;
                let b_end = w_end + fan_out;
                let layer = LayerParams {
                    fan_in,
                    fan_out,
                    weights: self.0[offset..w_end].to_vec(),
                    bias: self.0[w_end..b_end].to_vec(),
                };
                offset = b_end;
                layer
            })
            .collect())
    }

    pub fn flatten(layers: &[LayerParams]) -> ParamVector {
        let mut values = Vec::new();
        for layer in layers {
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.bias);
        }
        ParamVector(values)
    }
}

/// One affine layer in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Activations recorded by [`mlp_forward`]. Borrows the parameters it was
/// produced with, so a tape can never outlive or disagree with them.
#[derive(Debug)]
pub struct Tape<'a> {
    spec: &'a MlpSpec,
    params: &'a ParamVector,
    /// `layers[0]` is the input; `layers[l + 1]` is the output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl Tape<'_> {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("tape always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub fn mlp_forward<'a>(
    spec: &'a MlpSpec,
    params: &'a ParamVector,
    input: &[f64],
) -> Result<(Vec<f64>, Tape<'a>)> {
    check_len("network input", spec.input_dim, input.len())?;
    check_len("parameter vector", spec.param_count(), params.len())?;

    let w = params.as_slice();
    let n_layers = spec.num_layers();
    let mut layers = Vec::with_capacity(n_layers + 1);
    layers.push(input.to_vec());
    let mut offset = 0;
    for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let x = &layers[l];
        let weights = &w[offset..offset + fan_in * fan_out];
        let bias = &w[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        let hidden = l + 1 < n_layers;
        let y: Vec<f64> = weights
            .chunks_exact(fan_in)
            .zip(bias)
            .map(|(row, b)| {
                let z = row.iter().zip(x).fold(*b, |acc, (wi, xi)| acc + wi * xi);
                if hidden {
                    spec.activation.apply(z)
                } else {
                    z
                }
            })
            .collect();
        layers.push(y);
        offset += fan_in * fan_out + fan_out;
    }
    let output = layers[n_layers].clone();
    Ok((
        output,
        Tape {
            spec,
            params,
            layers,
        },
    ))
}

/// Gradient of `<output, cotangent>` with respect to parameters and input.
pub fn mlp_backward(tape: &Tape<'_>, cotangent: &[f64]) -> Result<Backward> {
    let mut params = vec![0.0; tape.spec.param_count()];
    let input = mlp_backward_into(tape, cotangent, 1.0, &mut params)?;
    Ok(Backward { params, input })
}

/// Adds `scale * d<output, cotangent>/dparams` into `grad` and returns the
/// input cotangent, also multiplied by `scale`.
pub fn mlp_backward_into(
    tape: &Tape<'_>,
    cotangent: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let spec = tape.spec;
    check_len("output cotangent", spec.output_dim, cotangent.len())?;
    check_len("gradient buffer", spec.param_count(), grad.len())?;

    let w = tape.params.as_slice();
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut delta: Vec<f64> = cotangent.iter().map(|c| c * scale).collect();

    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = dims[l];
        let offset = spec.layer_offset(l);
        let x = &tape.layers[l];
        if l + 1 < n_layers {
            // delta currently holds d/dy for this hidden layer; push through tanh
            for (d, &y) in delta.iter_mut().zip(&tape.layers[l + 1]) {
                *d *= spec.activation.grad_from_output(y);
            }
        }
        let (gw, rest) =
            grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        for (row, (&d, gb)) in gw
            .chunks_exact_mut(fan_in)
            .zip(delta.iter().zip(rest.iter_mut()))
        {
            *gb += d;
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        let weights = &w[offset..offset + fan_in * fan_out];
        let mut prev = vec![0.0; fan_in];
        for (row, &d) in weights.chunks_exact(fan_in).zip(&delta) {
            for (p, &wi) in prev.iter_mut().zip(row) {
                *p += d * wi;
            }
        }
        delta = prev;
    }
    Ok(delta)
}
