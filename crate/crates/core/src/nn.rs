//! Small fully connected classifiers with exact backpropagation.
//!
//! Hidden layers use `tanh`; the output layer is linear followed by softmax and
//! cross-entropy. The input Hessian of a tanh network is smooth, which is what
//! makes the curvature estimators in [`crate::curvature`] meaningful.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_CLIP, 1 - PROB_CLIP]` before any log.
pub const PROB_CLIP: f64 = 1e-12;

/// Largest loss value the clamped cross-entropy can produce, `-ln(PROB_CLIP)`.
pub fn loss_ceiling() -> f64 {
    -PROB_CLIP.ln()
}

/// Layer widths: input dimension, hidden widths, class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerSizes(Vec<usize>);

impl LayerSizes {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least an input and an output layer, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArch(format!("zero-width layer in {sizes:?}")));
        }
        Ok(Self(sizes))
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.0.last().expect("validated non-empty")
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl TryFrom<Vec<usize>> for LayerSizes {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LayerSizes> for Vec<usize> {
    fn from(a: LayerSizes) -> Self {
        a.0
    }
}

/// One labelled input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: usize,
}

/// Dense affine layer; `w` is row-major `[n_out x n_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.w[out * self.n_in + inp]
    }

    #[inline]
    pub fn weight_mut(&mut self, out: usize, inp: usize) -> &mut f64 {
        &mut self.w[out * self.n_in + inp]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(o, &b)| {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Parameters of a trained (or freshly initialized) classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub arch: LayerSizes,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub config_digest: String,
}

/// Gradient with the same layout as [`MlpParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|g| *g *= s);
        }
    }
}

/// Softmax output and clamped cross-entropy at one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub loss: f64,
}

/// Draws weights from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; biases start at zero.
pub fn init_mlp(arch: &LayerSizes, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .as_slice()
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / n_in as f64).sqrt();
            let mut layer = Layer::zeros(n_in, n_out);
            for v in &mut layer.w {
                *v = rng.random_range(-bound..bound);
            }
            layer
        })
        .collect();
    MlpParams {
        arch: arch.clone(),
        layers,
        seed,
        config_digest: digest::digest_of(&("init", arch.as_slice(), seed)),
    }
}

struct Tape {
    /// Post-activation values, `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes()
    }

    /// Checks shapes against `arch` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let sizes = self.arch.as_slice();
        if self.layers.len() != sizes.len() - 1 {
            return Err(Error::InvalidArch(format!(
                "{} layers for arch {sizes:?}",
                self.layers.len()
            )));
        }
        for (l, w) in self.layers.iter().zip(sizes.windows(2)) {
            if l.n_in != w[0] || l.n_out != w[1] || l.w.len() != w[0] * w[1] || l.b.len() != w[1] {
                return Err(Error::InvalidArch(format!(
                    "layer shape {}x{} does not chain with arch {sizes:?}",
                    l.n_out, l.n_in
                )));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameter".into()));
            }
        }
        Ok(())
    }

    fn check_example(&self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if y >= self.n_classes() {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn tape(&self, x: &[f64]) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(acts.last().expect("non-empty"), &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(z);
        }
        let mut logits = Vec::with_capacity(last[0].n_out);
        last[0].apply(acts.last().expect("non-empty"), &mut logits);
        Tape { acts, logits }
    }

    /// Output logits.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.tape(x).logits)
    }

    /// Softmax probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.tape(x).logits))
    }

    /// Arg-max class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Clamped cross-entropy at `(x, y)`.
    pub fn loss_at(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_example(x, y)?;
        Ok(clamped_ce(&self.tape(x).logits, y))
    }

    /// A black-box loss oracle with the label fixed, as consumed by the
    /// zero-order estimator. Panics if called with a wrongly sized input.
    pub fn loss_oracle(&self, y: usize) -> impl Fn(&[f64]) -> f64 + '_ {
        move |x: &[f64]| {
            assert_eq!(x.len(), self.input_dim(), "loss oracle input dimension");
            clamped_ce(&self.tape(x).logits, y)
        }
    }

    /// Input-gradient oracle with the label fixed.
    pub fn grad_oracle(&self, y: usize) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |x: &[f64]| {
            assert_eq!(x.len(), self.input_dim(), "gradient oracle input dimension");
            self.backprop(x, y, None)
        }
    }

    /// Backpropagates the clamped cross-entropy. Accumulates the parameter
    /// gradient into `acc` when given, and returns the input gradient.
    fn backprop(&self, x: &[f64], y: usize, acc: Option<&mut Gradient>) -> Vec<f64> {
        let tape = self.tape(x);
        let lse = log_sum_exp(&tape.logits);
        let mut delta: Vec<f64> = tape.logits.iter().map(|z| (z - lse).exp()).collect();
        // d/dz of -ln(max(p_y, clip)) vanishes where the clamp is active.
        if tape.logits[y] - lse < PROB_CLIP.ln() {
            delta.iter_mut().for_each(|d| *d = 0.0);
        } else {
            delta[y] -= 1.0;
        }

        let mut acc = acc;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &tape.acts[li];
            if let Some(g) = acc.as_deref_mut() {
                let gl = &mut g.layers[li];
                for (o, &d) in delta.iter().enumerate() {
                    gl.b[o] += d;
                    if d != 0.0 {
                        let row = &mut gl.w[o * layer.n_in..(o + 1) * layer.n_in];
                        row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
                    }
                }
            }
            let mut back = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    back.iter_mut().zip(row).for_each(|(b, w)| *b += w * d);
                }
            }
            if li > 0 {
                // input[] holds tanh outputs of the previous layer
                back.iter_mut().zip(input).for_each(|(b, a)| *b *= 1.0 - a * a);
            }
            delta = back;
        }
        delta
    }

    /// Accumulates the un-normalized parameter gradient of one example.
    pub(crate) fn accumulate_grad(&self, ex: &Example, acc: &mut Gradient) {
        self.backprop(&ex.x, ex.y, Some(acc));
    }

    pub(crate) fn zero_grad(&self) -> Gradient {
        Gradient::zeros_like(self)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let bytes = self.to_json_bytes();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path, source),
            other => other,
        })
    }

    /// `{arch, seed, config_digest, layers: [{w: [[..]], b: [..]}]}` with
    /// 17-significant-digit floats.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let doc = ModelDoc {
            arch: self.arch.as_slice().to_vec(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    w: l.w.chunks(l.n_in).map(<[f64]>::to_vec).collect(),
                    b: l.b.clone(),
                })
                .collect(),
        };
        let mut bytes = digest::to_json_sig17(&doc).expect("model serialization");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_slice(bytes).map_err(|e| Error::json("<model>", e))?;
        let arch = LayerSizes::new(doc.arch)?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                let n_out = l.w.len();
                let n_in = l.w.first().map_or(0, Vec::len);
                if l.w.iter().any(|r| r.len() != n_in) {
                    return Err(Error::InvalidArch("ragged weight matrix".into()));
                }
                Ok(Layer {
                    n_in,
                    n_out,
                    w: l.w.into_iter().flatten().collect(),
                    b: l.b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams {
            arch,
            layers,
            seed: doc.seed,
            config_digest: doc.config_digest,
        };
        params.validate()?;
        Ok(params)
    }

    /// SHA-256 of the persisted JSON form.
    pub fn digest(&self) -> String {
        digest::sha256_hex(&self.to_json_bytes())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    arch: Vec<usize>,
    seed: u64,
    config_digest: String,
    layers: Vec<LayerDoc>,
}

fn clamped_ce(logits: &[f64], y: usize) -> f64 {
    (log_sum_exp(logits) - logits[y]).min(loss_ceiling())
}

/// Softmax probabilities and clamped cross-entropy loss.
pub fn forward_loss(params: &MlpParams, example: &Example) -> Result<ForwardOutput> {
    params.check_example(&example.x, example.y)?;
    let logits = params.tape(&example.x).logits;
    Ok(ForwardOutput {
        loss: clamped_ce(&logits, example.y),
        probs: softmax(&logits),
    })
}

/// Gradient of the mean batch loss with respect to every weight and bias.
pub fn grad_params(params: &MlpParams, batch: &[Example]) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = Gradient::zeros_like(params);
    for ex in batch {
        params.check_example(&ex.x, ex.y)?;
        params.accumulate_grad(ex, &mut g);
    }
    g.scale(1.0 / batch.len() as f64);
    Ok(g)
}

/// Exact gradient of the loss with respect to the input vector.
pub fn grad_input(params: &MlpParams, example: &Example) -> Result<Vec<f64>> {
    params.check_example(&example.x, example.y)?;
    Ok(params.backprop(&example.x, example.y, None))
}

/// `ln(p_y / (1 - p_y))` with `p_y` clamped into `[PROB_CLIP, 1 - PROB_CLIP]`.
///
/// Evaluated as `z_y - logsumexp(z_{j != y})`, which stays accurate when `p_y`
/// is within rounding of one.
pub fn scaled_logit(params: &MlpParams, example: &Example) -> Result<f64> {
    params.check_example(&example.x, example.y)?;
    let logits = params.tape(&example.x).logits;
    let others: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != example.y)
        .map(|(_, &z)| z)
        .collect();
    let raw = if others.is_empty() {
        f64::INFINITY
    } else {
        logits[example.y] - log_sum_exp(&others)
    };
    Ok(logit_clamped(raw))
}

/// Clamps a log-odds value to the range implied by [`PROB_CLIP`].
pub fn logit_clamped(raw: f64) -> f64 {
    let hi = ((1.0 - PROB_CLIP) / PROB_CLIP).ln();
    raw.clamp(-hi, hi)
}
