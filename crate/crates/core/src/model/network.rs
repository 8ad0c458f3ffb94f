use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{
    concat_features, conv2d_backward, conv2d_forward, dropout, fc_affine, fc_backward, leaky_relu,
    leaky_relu_backward, maxpool_backward, maxpool_forward, split_features, ConvLayer, FcLayer, Mode,
    PoolSpec,
};
use crate::optim::gaussian_fill;
use crate::tensor::{Element, Shape4, Tensor4};
use crate::wavelet::{packet_decompose, FilterPair};

use super::config::{ArchitectureConfig, Family, LayerSpec, Topology, WeightInit};

#[derive(Debug, Clone, PartialEq)]
pub enum StackLayer<T> {
    Conv(ConvLayer<T>),
    Pool(PoolSpec),
}

/// An instantiated network. SRCNN owns `4^M` independent stacks; BCNN and
/// TCNN own one.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ArchitectureConfig,
    topology: Topology,
    filters: FilterPair,
    stacks: Vec<Vec<StackLayer<T>>>,
    head: Vec<FcLayer<T>>,
}

enum LayerRecord<T> {
    Conv { input: Tensor4<T>, pre: Tensor4<T> },
    Pool { input_shape: Shape4, argmax: Vec<usize> },
}

struct DenseRecord<T> {
    input: Tensor4<T>,
    pre: Tensor4<T>,
    mask: Option<Vec<T>>,
}

/// Everything a training-mode forward pass records for [`Model::backward`].
pub struct Tape<T> {
    stacks: Vec<Vec<LayerRecord<T>>>,
    stack_outputs: Vec<Shape4>,
    head: Vec<DenseRecord<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self {
            stacks: Vec::new(),
            stack_outputs: Vec::new(),
            head: Vec::new(),
        }
    }
}

impl<T> Tape<T> {
    pub fn is_empty(&self) -> bool {
        self.head.is_empty()
    }
}

/// Parameter gradients, in [`Model::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor4<T>>,
}

impl<T: Element> Model<T> {
    /// Builds the network and initializes weights from N(0, 0.01²) and biases
    /// to 1. Parameter `i` draws from ChaCha stream `i` of `seed`.
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let topology = config.topology()?;
        let leak = T::from_f64(config.leak);
        let mut stacks = Vec::with_capacity(topology.stacks);
        for _ in 0..topology.stacks {
            let mut layers = Vec::with_capacity(config.subband_stack.len());
            for spec in &config.subband_stack {
                layers.push(match *spec {
                    LayerSpec::Conv { c_in, c_out, kernel } => StackLayer::Conv(ConvLayer::new(
                        Tensor4::zeros([kernel, kernel, c_in, c_out])?,
                        Tensor4::zeros([1, 1, 1, c_out])?,
                        leak,
                    )?),
                    LayerSpec::Pool { .. } => StackLayer::Pool(spec.pool_spec().expect("pool")),
                });
            }
            stacks.push(layers);
        }
        let last = config.fc_stack.len() - 1;
        let head = config
            .fc_stack
            .iter()
            .enumerate()
            .map(|(i, fc)| {
                FcLayer::new(
                    Tensor4::zeros([1, 1, fc.d_in, fc.d_out])?,
                    Tensor4::zeros([1, 1, 1, fc.d_out])?,
                    (i < last).then_some(leak),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self {
            config: config.clone(),
            topology,
            filters: FilterPair::haar(),
            stacks,
            head,
        };
        model.initialize(seed);
        Ok(model)
    }

    pub fn initialize(&mut self, seed: u64) {
        let t = &self.config.training;
        let (scheme, fixed, bias) = (t.init, t.init_std, t.init_bias);
        for (i, p) in self.params_mut().into_iter().enumerate() {
            if i % 2 == 0 {
                let std = match scheme {
                    WeightInit::Fixed => fixed,
                    WeightInit::FanIn => {
                        let [a, b, c, _] = p.dims();
                        (2.0 / (a * b * c) as f64).sqrt()
                    }
                };
                gaussian_fill(p, std, seed, i as u64);
            } else {
                p.data_mut().fill(T::from_f64(bias));
            }
        }
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn filters(&self) -> &FilterPair {
        &self.filters
    }

    pub fn stacks(&self) -> &[Vec<StackLayer<T>>] {
        &self.stacks
    }

    pub fn head(&self) -> &[FcLayer<T>] {
        &self.head
    }

    pub fn stacks_mut(&mut self) -> &mut [Vec<StackLayer<T>>] {
        &mut self.stacks
    }

    pub fn head_mut(&mut self) -> &mut [FcLayer<T>] {
        &mut self.head
    }

    /// Parameter tensors: for each stack, each conv's weights then bias;
    /// then each dense layer's weights then bias.
    pub fn params(&self) -> Vec<&Tensor4<T>> {
        let mut out = Vec::new();
        for stack in &self.stacks {
            for layer in stack {
                if let StackLayer::Conv(c) = layer {
                    out.push(&c.weights);
                    out.push(&c.bias);
                }
            }
        }
        for fc in &self.head {
            out.push(&fc.weights);
            out.push(&fc.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out = Vec::new();
        for stack in &mut self.stacks {
            for layer in stack {
                if let StackLayer::Conv(c) = layer {
                    out.push(&mut c.weights);
                    out.push(&mut c.bias);
                }
            }
        }
        for fc in &mut self.head {
            out.push(&mut fc.weights);
            out.push(&mut fc.bias);
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, stack) in self.stacks.iter().enumerate() {
            let mut conv = 0;
            for layer in stack {
                if let StackLayer::Conv(_) = layer {
                    out.push(format!("stack{k}.conv{conv}.weight"));
                    out.push(format!("stack{k}.conv{conv}.bias"));
                    conv += 1;
                }
            }
        }
        for j in 0..self.head.len() {
            out.push(format!("fc{j}.weight"));
            out.push(format!("fc{j}.bias"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Applies `f` to every weight and bias, returning a new model.
    pub fn map_params(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            for v in p.data_mut() {
                *v = f(*v);
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if [s.h, s.w, s.c] != self.config.input_shape {
            return Err(Error::shape(format!(
                "model {} expects samples of {:?}, got {s}",
                self.config.name, self.config.input_shape
            )));
        }
        Ok(())
    }

    /// Routes a raw batch to the stack inputs: the image itself (BCNN), the
    /// channel-stacked subbands (TCNN), or one subband per stack (SRCNN).
    pub fn front_end(&self, x: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        self.check_input(x)?;
        Ok(match self.config.family {
            Family::Bcnn => vec![x.clone()],
            Family::Tcnn => vec![packet_decompose(x, self.config.dwt_levels, &self.filters)?.stack_channels()],
            Family::Srcnn => packet_decompose(x, self.config.dwt_levels, &self.filters)?.into_subbands(),
        })
    }

    fn run_stack(
        &self,
        k: usize,
        input: Tensor4<T>,
        record: bool,
        keep_outputs: bool,
    ) -> Result<(Tensor4<T>, Vec<LayerRecord<T>>, Vec<Tensor4<T>>)> {
        let mut x = input;
        let mut records = Vec::new();
        let mut outputs = Vec::new();
        for layer in &self.stacks[k] {
            let y = match layer {
                StackLayer::Conv(c) => {
                    let pre = conv2d_forward(&x, c)?;
                    let y = leaky_relu(&pre, c.leak);
                    if record {
                        records.push(LayerRecord::Conv { input: x, pre });
                    }
                    y
                }
                StackLayer::Pool(p) => {
                    let (y, argmax) = maxpool_forward(&x, p)?;
                    if record {
                        records.push(LayerRecord::Pool {
                            input_shape: x.shape(),
                            argmax,
                        });
                    }
                    y
                }
            };
            if keep_outputs {
                outputs.push(y.clone());
            }
            x = y;
        }
        Ok((x, records, outputs))
    }

    /// Eval-mode output of stack `k` for an already routed input.
    pub fn stack_forward(&self, k: usize, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        if k >= self.stacks.len() {
            return Err(Error::Index(format!("stack {k} of {}", self.stacks.len())));
        }
        Ok(self.run_stack(k, input.clone(), false, false)?.0)
    }

    /// Per-stack, per-layer activations before the feature concatenation.
    pub fn stack_activations(&self, x: &Tensor4<T>) -> Result<Vec<Vec<Tensor4<T>>>> {
        self.routed_activations(self.front_end(x)?)
    }

    /// Like [`Model::stack_activations`], starting from routed stack inputs.
    pub fn routed_activations(&self, inputs: Vec<Tensor4<T>>) -> Result<Vec<Vec<Tensor4<T>>>> {
        if inputs.len() != self.stacks.len() {
            return Err(Error::Shape(format!("{} inputs for {} stacks", inputs.len(), self.stacks.len())));
        }
        inputs
            .into_par_iter()
            .enumerate()
            .map(|(k, input)| Ok(self.run_stack(k, input, false, true)?.2))
            .collect()
    }

    /// Eval-mode dense head applied to concatenated features.
    pub fn head_forward(&self, features: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut x = features.clone();
        for fc in &self.head {
            let pre = fc_affine(&x, fc)?;
            x = match fc.leak {
                Some(l) => leaky_relu(&pre, l),
                None => pre,
            };
        }
        Ok(x)
    }

    /// Eval-mode logits `(n, 1, 1, classes)`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let inputs = self.front_end(x)?;
        let outs = inputs
            .into_par_iter()
            .enumerate()
            .map(|(k, input)| Ok(self.run_stack(k, input, false, false)?.0))
            .collect::<Result<Vec<_>>>()?;
        self.head_forward(&concat_features(&outs)?)
    }

    /// Logits in the requested mode; dropout draws from `rng` in training mode.
    pub fn forward_mode<R: Rng + ?Sized>(&self, x: &Tensor4<T>, mode: Mode, rng: &mut R) -> Result<Tensor4<T>> {
        match mode {
            Mode::Eval => self.forward(x),
            Mode::Train => Ok(self.forward_train(x, rng)?.0),
        }
    }

    /// Training-mode forward pass that records a [`Tape`].
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor4<T>, rng: &mut R) -> Result<(Tensor4<T>, Tape<T>)> {
        self.forward_recorded(x, Mode::Train, rng)
    }

    /// Forward pass that records a [`Tape`] in either mode.
    pub fn forward_recorded<R: Rng + ?Sized>(
        &self,
        x: &Tensor4<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor4<T>, Tape<T>)> {
        let inputs = self.front_end(x)?;
        let results = inputs
            .into_par_iter()
            .enumerate()
            .map(|(k, input)| {
                let (y, rec, _) = self.run_stack(k, input, true, false)?;
                Ok((y, rec))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::default();
        let mut outs = Vec::with_capacity(results.len());
        for (y, rec) in results {
            tape.stack_outputs.push(y.shape());
            tape.stacks.push(rec);
            outs.push(y);
        }
        let mut h = concat_features(&outs)?;
        drop(outs);
        for (fc, spec) in self.head.iter().zip(&self.config.fc_stack) {
            let pre = fc_affine(&h, fc)?;
            let (next, mask) = match fc.leak {
                Some(l) => dropout(&leaky_relu(&pre, l), spec.dropout, mode, rng)?,
                None => (pre.clone(), None),
            };
            tape.head.push(DenseRecord { input: h, pre, mask });
            h = next;
        }
        Ok((h, tape))
    }

    /// Reverse pass: gradients of every parameter given `dlogits`, the
    /// gradient of the loss with respect to the logits. The wavelet front end
    /// has no parameters and receives no gradient.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor4<T>) -> Result<Gradients<T>> {
        if tape.is_empty() || tape.head.len() != self.head.len() || tape.stacks.len() != self.stacks.len() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        let mut g = dlogits.clone();
        let mut head_grads = Vec::with_capacity(2 * self.head.len());
        for (fc, rec) in self.head.iter().zip(&tape.head).rev() {
            if let Some(l) = fc.leak {
                if let Some(mask) = &rec.mask {
                    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                        *v = *v * m;
                    }
                }
                g = leaky_relu_backward(&rec.pre, &g, l)?;
            }
            let grads = fc_backward(&rec.input, fc, &g)?;
            head_grads.push((grads.weights, grads.bias));
            g = grads.input;
        }
        head_grads.reverse();

        let blocks = split_features(&g, &tape.stack_outputs)?;
        let stack_grads = blocks
            .into_par_iter()
            .enumerate()
            .map(|(k, dy)| self.stack_backward(k, &tape.stacks[k], dy))
            .collect::<Result<Vec<_>>>()?;

        let mut tensors = Vec::new();
        for sg in stack_grads {
            tensors.extend(sg);
        }
        for (w, b) in head_grads {
            tensors.push(w);
            tensors.push(b);
        }
        Ok(Gradients { tensors })
    }

    fn stack_backward(&self, k: usize, records: &[LayerRecord<T>], dy: Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        let mut g = dy;
        let mut grads = Vec::new();
        let layers = &self.stacks[k];
        for (i, (layer, rec)) in layers.iter().zip(records).enumerate().rev() {
            match (layer, rec) {
                (StackLayer::Conv(c), LayerRecord::Conv { input, pre }) => {
                    let dpre = leaky_relu_backward(pre, &g, c.leak)?;
                    let cg = conv2d_backward(input, c, &dpre, i > 0)?;
                    grads.push(cg.bias);
                    grads.push(cg.weights);
                    if let Some(dx) = cg.input {
                        g = dx;
                    }
                }
                (StackLayer::Pool(_), LayerRecord::Pool { input_shape, argmax }) => {
                    g = maxpool_backward(*input_shape, argmax, &g)?;
                }
                _ => return Err(Error::State("tape does not match the model".into())),
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// Name of the first recorded activation holding a NaN or infinity.
    pub fn first_non_finite(&self, tape: &Tape<T>) -> Option<String> {
        for (k, records) in tape.stacks.iter().enumerate() {
            let mut conv = 0;
            for rec in records {
                if let LayerRecord::Conv { pre, input } = rec {
                    if conv == 0 && !input.all_finite() {
                        return Some(format!("stack{k}.input"));
                    }
                    if !pre.all_finite() {
                        return Some(format!("stack{k}.conv{conv}"));
                    }
                    conv += 1;
                }
            }
        }
        for (j, rec) in tape.head.iter().enumerate() {
            if !rec.input.all_finite() {
                return Some(if j == 0 { "concat".to_string() } else { format!("fc{}", j - 1) });
            }
            if !rec.pre.all_finite() {
                return Some(format!("fc{j}"));
            }
        }
        None
    }

    /// Replaces every parameter tensor, checking shapes.
    pub fn set_params(&mut self, values: Vec<Tensor4<T>>) -> Result<()> {
        let names = self.param_names();
        let mut slots = self.params_mut();
        if values.len() != slots.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors supplied for {} slots",
                values.len(),
                slots.len()
            )));
        }
        for ((slot, v), name) in slots.iter_mut().zip(values).zip(names) {
            if slot.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "{name}: expected {}, got {}",
                    slot.shape(),
                    v.shape()
                )));
            }
            **slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::zoo;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, dims: [usize; 3], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dims.iter().product::<usize>())
            .map(|_| rng.random::<f64>())
            .collect();
        Tensor4::from_vec([n, dims[0], dims[1], dims[2]], data).unwrap()
    }

    #[test]
    fn zeros_give_finite_logits() {
        for name in ["bcnn-mnist-small", "tcnn-mnist-small", "srcnn-mnist-small"] {
            let cfg = zoo::get(name).unwrap();
            let m = Model::<f32>::build(&cfg, 0).unwrap();
            let y = m.forward(&Tensor4::zeros([2, 32, 32, 1]).unwrap()).unwrap();
            assert_eq!(y.dims(), [2, 1, 1, 10]);
            assert!(y.all_finite());
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = Model::<f64>::build(&zoo::tiny_srcnn(), 0).unwrap();
        let err = m.forward(&Tensor4::zeros([1, 8, 8, 2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn init_rule() {
        let m = Model::<f64>::build(&zoo::tiny_srcnn(), 5).unwrap();
        let params = m.params();
        assert_eq!(params.len(), 4 * 4 + 4);
        for (i, p) in params.iter().enumerate() {
            if i % 2 == 1 {
                assert!(p.data().iter().all(|&v| v == 1.0));
            } else {
                assert!(p.data().iter().all(|&v| v.abs() < 0.08 && v != 0.0));
            }
        }
        let again = Model::<f64>::build(&zoo::tiny_srcnn(), 5).unwrap();
        assert_eq!(m, again);
        assert_ne!(m, Model::<f64>::build(&zoo::tiny_srcnn(), 6).unwrap());
        for (a, b) in params.iter().zip(params.iter().skip(2)).step_by(2) {
            if a.shape() == b.shape() {
                assert_ne!(a, b, "streams must differ per parameter");
            }
        }
    }

    #[test]
    fn fan_in_init_scales_per_tensor() {
        let mut cfg = zoo::get("srcnn-mnist").unwrap();
        assert_eq!(cfg.training.init, WeightInit::FanIn);
        assert_eq!(cfg.training.init_bias, 0.0);
        cfg.fc_stack.truncate(1);
        cfg.fc_stack[0].d_out = cfg.classes;
        cfg.fc_stack[0].dropout = 0.0;
        let m = Model::<f64>::build(&cfg, 1).unwrap();
        for (p, name) in m.params().iter().zip(m.param_names()) {
            let d = p.data();
            if name.ends_with("bias") {
                assert!(d.iter().all(|&v| v == 0.0));
                continue;
            }
            let [a, b, c, _] = p.dims();
            let want = (2.0 / (a * b * c) as f64).sqrt();
            let std = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
            let tol = 5.0 * want / (d.len() as f64).sqrt();
            assert!((std - want).abs() < tol.max(want * 0.05), "{name}: {std} vs {want}");
        }
    }

    #[test]
    fn forward_matches_manual_composition() {
        let cfg = zoo::tiny_srcnn();
        let m = Model::<f64>::build(&cfg, 2).unwrap();
        let x = random_batch(3, [8, 8, 1], 11);
        let bands = packet_decompose(&x, 1, &FilterPair::haar()).unwrap();
        let feats: Vec<_> = (0..4).map(|k| m.stack_forward(k, bands.subband(k)).unwrap()).collect();
        let manual = m.head_forward(&concat_features(&feats).unwrap()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), manual);
    }

    #[test]
    fn permuting_stacks_and_fc_blocks() {
        let cfg = zoo::tiny_srcnn();
        let mut m = Model::<f64>::build(&cfg, 4).unwrap();
        for (i, p) in m.params_mut().into_iter().enumerate() {
            gaussian_fill(p, 0.3, 77, i as u64);
        }
        let x = random_batch(2, [8, 8, 1], 3);
        let want = m.forward(&x).unwrap();
        let (j, k) = (0, 2);
        let block = 16;
        let mut p = m.clone();
        p.stacks_mut().swap(j, k);
        let w = &mut p.head_mut()[0].weights;
        let d_out = w.shape().c;
        for r in 0..block {
            for o in 0..d_out {
                let a = (j * block + r) * d_out + o;
                let b = (k * block + r) * d_out + o;
                w.data_mut().swap(a, b);
            }
        }
        let mut bands = packet_decompose(&x, 1, &FilterPair::haar()).unwrap().into_subbands();
        bands.swap(j, k);
        let feats: Vec<_> = (0..4).map(|i| p.stack_forward(i, &bands[i]).unwrap()).collect();
        let got = p.head_forward(&concat_features(&feats).unwrap()).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn eval_is_deterministic_and_recorded_matches() {
        let m = Model::<f32>::build(&zoo::tiny_srcnn(), 9).unwrap();
        let x = random_batch(4, [8, 8, 1], 1).cast::<f32>();
        let a = m.forward(&x).unwrap();
        assert_eq!(a, m.forward(&x).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (b, tape) = m.forward_recorded(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(m.first_non_finite(&tape).is_none());
    }

    #[test]
    fn backward_needs_tape() {
        let m = Model::<f64>::build(&zoo::tiny_srcnn(), 0).unwrap();
        let d = Tensor4::zeros([1, 1, 1, 4]).unwrap();
        assert!(matches!(m.backward(&Tape::default(), &d), Err(Error::State(_))));
    }

    #[test]
    fn nan_is_located() {
        let mut m = Model::<f64>::build(&zoo::tiny_srcnn(), 0).unwrap();
        m.head_mut()[1].bias.data_mut()[0] = f64::NAN;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, tape) = m.forward_train(&random_batch(1, [8, 8, 1], 0), &mut rng).unwrap();
        assert_eq!(m.first_non_finite(&tape).as_deref(), Some("fc1"));
    }
}
