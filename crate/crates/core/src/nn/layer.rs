use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad {
            w: Array2::zeros(layer.w.raw_dim()),
            b: Array1::zeros(layer.b.raw_dim()),
        }
    }
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
            activation,
        }
    }

    /// He-uniform for ReLU layers, Xavier-uniform otherwise; zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            _ => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let w = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..limit));
        Dense {
            w,
            b: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn pre_activation(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w.t());
        z += &self.b;
        z
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = self.pre_activation(x);
        let act = self.activation;
        if act != Activation::Identity {
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Gradients given `d_out = dL/d(output)`; `output` is this layer's cached result.
    pub fn backward(
        &self,
        input: ArrayView2<'_, f64>,
        output: &Array2<f64>,
        mut d_out: Array2<f64>,
        need_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        match self.activation {
            Activation::Relu => Zip::from(&mut d_out).and(output).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(&mut d_out).and(output).for_each(|d, &o| *d *= o * (1.0 - o)),
            Activation::Identity => {}
        }
        self.backward_pre(input, d_out, need_input_grad)
    }

    /// Gradients given `dz = dL/d(pre-activation)`.
    pub fn backward_pre(
        &self,
        input: ArrayView2<'_, f64>,
        dz: Array2<f64>,
        need_input_grad: bool,
    ) -> (DenseGrad, Option<Array2<f64>>) {
        let grad = DenseGrad {
            w: dz.t().dot(&input),
            b: dz.sum_axis(Axis(0)),
        };
        let dx = need_input_grad.then(|| dz.dot(&self.w));
        (grad, dx)
    }
}
