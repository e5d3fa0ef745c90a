//! Fully-connected network with hand-written backpropagation.
//!
//! Each [`DenseLayer`] computes `act(x Wᵀ + b)`; rows of `W` are the layer's
//! neurons. Biases train like any other parameter but are never part of a
//! collision or a similarity metric.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::linalg::{gaussian_init, Matrix, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    /// `x · tanh(x)`.
    XTanh,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Tanh,
        Activation::XTanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::XTanh => "xtanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    /// Value and derivative at `x`.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::XTanh => {
                let t = x.tanh();
                (x * t, t + x * (1.0 - t * t))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            Activation::Softplus => {
                // log(1 + e^x) without overflow for large |x|
                let v = x.max(0.0) + (-x.abs()).exp().ln_1p();
                (v, sigmoid(x))
            }
            Activation::Identity => (x, 1.0),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Free-function form of [`Activation::eval`].
pub fn activation_eval(kind: Activation, x: f64) -> (f64, f64) {
    kind.eval(x)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown activation `{s}`")))
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    input: Matrix,
    /// Activation derivative at each pre-activation.
    slope: Matrix,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    /// `out_dim × in_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    pub activation: Activation,
    cache: Option<ForwardCache>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::invalid(format!(
                "bias has {} entries for {} neurons",
                bias.len(),
                weight.rows()
            )));
        }
        let (o, i) = weight.shape();
        Ok(DenseLayer {
            grad_weight: Matrix::zeros(o, i),
            grad_bias: vec![0.0; o],
            weight,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn affine(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "dense forward",
                left: x.shape(),
                right: self.weight.shape(),
            });
        }
        let mut z = x.matmul_t(&self.weight)?;
        let out = self.out_dim();
        if out > 0 {
            for row in z.as_mut_slice().chunks_exact_mut(out) {
                row.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
            }
        }
        Ok(z)
    }

    fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut a = self.affine(x)?;
        let mut slope = Matrix::zeros(a.rows(), a.cols());
        for (v, s) in a.as_mut_slice().iter_mut().zip(slope.as_mut_slice()) {
            let (y, dy) = self.activation.eval(*v);
            *v = y;
            *s = dy;
        }
        self.cache = Some(ForwardCache {
            input: x.clone(),
            slope,
        });
        Ok(a)
    }

    fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        Ok(self.affine(x)?.map(|v| act.eval(v).0))
    }

    /// Accumulates parameter gradients for `upstream = ∂L/∂output`; returns
    /// `∂L/∂input` when `need_input_grad`.
    fn backward(&mut self, upstream: &Matrix, need_input_grad: bool) -> Result<Option<Matrix>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        upstream.ensure_same_shape(&cache.slope, "dense backward")?;
        let delta = upstream.hadamard(&cache.slope)?;
        self.grad_weight = delta.t_matmul(&cache.input)?;
        self.grad_bias.iter_mut().for_each(|b| *b = 0.0);
        for row in delta.iter_rows() {
            self.grad_bias.iter_mut().zip(row).for_each(|(b, d)| *b += d);
        }
        if need_input_grad {
            Ok(Some(delta.matmul(&self.weight)?))
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

impl Network {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::invalid(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Network { layers })
    }

    /// MLP over `dims` (e.g. `[5, 50, 1]`) with `hidden` on every hidden
    /// layer and an identity output layer. All weights and biases are drawn
    /// from `N(0, init_std²)`.
    pub fn mlp(dims: &[usize], hidden: Activation, init_std: f64, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "network dims must list at least two positive sizes, got {dims:?}"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let act = if k + 2 == dims.len() { Activation::Identity } else { hidden };
            let w = gaussian_init(rng, dims[k + 1], dims[k], init_std)?;
            let b = gaussian_init(rng, 1, dims[k + 1], init_std)?.into_vec();
            layers.push(DenseLayer::new(w, b, act)?);
        }
        Network::from_layers(layers)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(DenseLayer::out_dim));
        d
    }

    /// Forward pass that caches what [`Network::backward`] needs.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut a = self.layers[0].forward(x)?;
        for layer in &mut self.layers[1..] {
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    /// Forward pass without touching the caches.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = self.layers[0].predict(x)?;
        for layer in &self.layers[1..] {
            a = layer.predict(&a)?;
        }
        Ok(a)
    }

    /// Fills every layer's `grad_weight` / `grad_bias` from `∂L/∂output` of
    /// the most recent [`Network::forward`].
    pub fn backward(&mut self, loss_grad: &Matrix) -> Result<()> {
        let mut upstream = loss_grad.clone();
        for k in (0..self.layers.len()).rev() {
            match self.layers[k].backward(&upstream, k > 0)? {
                Some(next) => upstream = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Writes `layer_K_weight.csv`, `layer_K_bias.csv` and `manifest.txt`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!("layers={}\n", self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            manifest.push_str(&format!(
                "layer.{k}.in={}\nlayer.{k}.out={}\nlayer.{k}.activation={}\n",
                layer.in_dim(),
                layer.out_dim(),
                layer.activation
            ));
            write_file(&dir.join(format!("layer_{k}_weight.csv")), &layer.weight.to_csv())?;
            let bias = Matrix::from_vec(1, layer.bias.len(), layer.bias.clone())?;
            write_file(&dir.join(format!("layer_{k}_bias.csv")), &bias.to_csv())?;
        }
        write_file(&dir.join("manifest.txt"), &manifest)
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let manifest = read_file(&dir.join("manifest.txt"))?;
        let kv = crate::config::parse_flat(&manifest)?;
        let get = |key: &str| -> Result<&str> {
            kv.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("checkpoint manifest lacks `{key}`")))
        };
        let parse_count = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|e| Error::Parse(format!("checkpoint `{key}`: {e}")))
        };
        let n = parse_count("layers")?;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (din, dout) = (parse_count(&format!("layer.{k}.in"))?, parse_count(&format!("layer.{k}.out"))?);
            let act: Activation = get(&format!("layer.{k}.activation"))?.parse()?;
            let w = Matrix::from_csv(&read_file(&dir.join(format!("layer_{k}_weight.csv")))?)?;
            let b = Matrix::from_csv(&read_file(&dir.join(format!("layer_{k}_bias.csv")))?)?;
            if w.shape() != (dout, din) || b.as_slice().len() != dout {
                return Err(Error::Parse(format!("layer {k} files do not match the manifest dims")));
            }
            layers.push(DenseLayer::new(w, b.into_vec(), act)?);
        }
        Network::from_layers(layers)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Mean squared error over every entry, `L = mean((pred − target)²)`, and its
/// gradient `2 (pred − target) / (rows · cols)`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.ensure_same_shape(target, "mse_loss")?;
    let count = pred.as_slice().len().max(1) as f64;
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff.scale(2.0 / count)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(w: f64, b: f64, act: Activation) -> Network {
        let layer = DenseLayer::new(Matrix::filled(1, 1, w), vec![b], act).unwrap();
        Network::from_layers(vec![layer]).unwrap()
    }

    #[test]
    fn zero_identity_net_outputs_zero() {
        let layer = DenseLayer::new(Matrix::zeros(3, 4), vec![0.0; 3], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_fn(2, 4, |i, j| (i + j) as f64);
        assert!(net.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_tanh_layer() {
        let mut net = scalar_net(2.0, 1.0, Activation::Tanh);
        let y = net.forward(&Matrix::zeros(1, 1)).unwrap();
        assert!((y.get(0, 0) - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn activation_values() {
        assert_eq!(activation_eval(Activation::Tanh, 0.0), (0.0, 1.0));
        assert_eq!(activation_eval(Activation::Sigmoid, 0.0), (0.5, 0.25));
        assert_eq!(activation_eval(Activation::XTanh, 0.0), (0.0, 0.0));
        let (v, d) = activation_eval(Activation::Softplus, 0.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(d, 0.5);
        assert_eq!(activation_eval(Activation::Identity, -3.0), (-3.0, 1.0));
    }

    #[test]
    fn softplus_is_stable_far_out() {
        let (v, d) = Activation::Softplus.eval(800.0);
        assert_eq!((v, d), (800.0, 1.0));
        let (v, d) = Activation::Softplus.eval(-800.0);
        assert!(v >= 0.0 && v < 1e-300 && d >= 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in Activation::ALL {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let fd = (act.eval(x + h).0 - act.eval(x - h).0) / (2.0 * h);
                assert!((fd - act.eval(x).1).abs() < 1e-8, "{act} at {x}");
            }
        }
    }

    #[test]
    fn half_squared_error_gradient() {
        // L = ½(wx − y)², x = 1, y = 0, w = 3 ⇒ dL/dw = (wx − y)·x = 3
        let mut net = scalar_net(3.0, 0.0, Activation::Identity);
        let pred = net.forward(&Matrix::filled(1, 1, 1.0)).unwrap();
        net.backward(&pred).unwrap();
        assert_eq!(net.layers[0].grad_weight.get(0, 0), 3.0);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut net = scalar_net(1.5, 0.0, Activation::Identity);
        let x = Matrix::filled(1, 1, 2.0);
        let pred = net.forward(&x).unwrap();
        let (loss, grad) = mse_loss(&pred, &Matrix::filled(1, 1, 3.0)).unwrap();
        assert_eq!(loss, 0.0);
        net.backward(&grad).unwrap();
        assert_eq!(net.layers[0].grad_weight.get(0, 0), 0.0);
        assert_eq!(net.layers[0].grad_bias[0], 0.0);
    }

    #[test]
    fn mse_scalar_case() {
        let (loss, grad) = mse_loss(&Matrix::filled(1, 1, 2.0), &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.get(0, 0), 4.0);
        assert!(mse_loss(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut net = scalar_net(1.0, 0.0, Activation::Tanh);
        assert!(matches!(net.backward(&Matrix::zeros(1, 1)), Err(Error::State(_))));
    }

    #[test]
    fn input_width_is_checked() {
        let mut net = Network::mlp(&[3, 4, 1], Activation::Tanh, 0.1, &mut Rng::new(0)).unwrap();
        assert!(net.forward(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn incompatible_layers_are_rejected() {
        let a = DenseLayer::new(Matrix::zeros(4, 3), vec![0.0; 4], Activation::Tanh).unwrap();
        let b = DenseLayer::new(Matrix::zeros(1, 5), vec![0.0], Activation::Identity).unwrap();
        assert!(Network::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn bounded_activations() {
        for &x in &[-50.0, -1.0, 0.3, 50.0] {
            let t = Activation::Tanh.eval(x).0;
            let s = Activation::Sigmoid.eval(x).0;
            assert!((-1.0..=1.0).contains(&t));
            assert!((0.0..=1.0).contains(&s));
            assert!(Activation::Softplus.eval(x).0 >= 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::mlp(&[5, 7, 2], Activation::Softplus, 0.3, &mut Rng::new(8)).unwrap();
        net.save_checkpoint(dir.path()).unwrap();
        let back = Network::load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.dims(), vec![5, 7, 2]);
        for (a, b) in net.layers.iter().zip(&back.layers) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.activation, b.activation);
        }
    }
}
