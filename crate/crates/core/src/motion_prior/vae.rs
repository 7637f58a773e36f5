//! Dense variational autoencoder over vectorised motion windows.
//!
//! Encoder: input → hidden layers (GELU) → (μ, log σ²). Decoder: latent →
//! mirrored hidden layers (GELU) → linear output. Inputs are centred on the
//! corpus mean; all parameters live in one flat vector.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kl_weight;
use super::pca::{axpy, dot, fit_pca_prior};
use super::window::MotionWindow;
use crate::error::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    /// Offset of the row-major `output × input` weight block; the bias follows.
    pub offset: usize,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.output * (self.input + 1)
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.offset..self.offset + self.output * self.input];
        let b = &params[self.offset + self.output * self.input..self.offset + self.len()];
        for o in 0..self.output {
            out.push(dot(&w[o * self.input..(o + 1) * self.input], x) + b[o]);
        }
    }

    /// Accumulate parameter gradients (if requested) and return `∂L/∂x`.
    fn backward(&self, params: &[f64], x: &[f64], g_out: &[f64], grad: Option<&mut [f64]>) -> Vec<f64> {
        let w = &params[self.offset..self.offset + self.output * self.input];
        let mut g_in = vec![0.0; self.input];
        for (o, go) in g_out.iter().enumerate() {
            if *go != 0.0 {
                axpy(*go, &w[o * self.input..(o + 1) * self.input], &mut g_in);
            }
        }
        if let Some(grad) = grad {
            let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(self.output * self.input);
            for (o, go) in g_out.iter().enumerate() {
                axpy(*go, x, &mut gw[o * self.input..(o + 1) * self.input]);
                gb[o] += go;
            }
        }
        g_in
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaePrior {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub input_mean: Vec<f64>,
    pub encoder: Vec<LayerShape>,
    pub mu_head: LayerShape,
    pub logvar_head: LayerShape,
    pub decoder: Vec<LayerShape>,
    pub output: LayerShape,
    pub params: Vec<f64>,
}

/// Activations of one encoder pass: pre-activations and outputs per layer.
struct EncoderPass {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

struct DecoderPass {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl VaePrior {
    /// Randomly initialised network (weights `N(0, 1/fan_in)`, zero biases).
    pub fn new(input_dim: usize, latent_dim: usize, hidden: &[usize], input_mean: Vec<f64>, seed: u64) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("VAE needs positive input, latent and hidden widths"));
        }
        if input_mean.len() != input_dim {
            return Err(Error::invalid("input mean length differs from input_dim"));
        }
        let mut offset = 0;
        let mut layer = |input: usize, output: usize| {
            let l = LayerShape { input, output, offset };
            offset += l.len();
            l
        };
        let mut encoder = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            encoder.push(layer(prev, h));
            prev = h;
        }
        let mu_head = layer(prev, latent_dim);
        let logvar_head = layer(prev, latent_dim);
        let mut decoder = Vec::new();
        let mut prev = latent_dim;
        for &h in hidden.iter().rev() {
            decoder.push(layer(prev, h));
            prev = h;
        }
        let output = layer(prev, input_dim);
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in encoder.iter().chain([&mu_head, &logvar_head]).chain(decoder.iter()).chain([&output]) {
            let scale = 1.0 / libm::sqrt(l.input as f64);
            for w in &mut params[l.offset..l.offset + l.output * l.input] {
                let s: f64 = StandardNormal.sample(&mut rng);
                *w = scale * s;
            }
        }
        Ok(VaePrior {
            input_dim,
            latent_dim,
            hidden: hidden.to_vec(),
            input_mean,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn encode_pass(&self, x: &[f64]) -> EncoderPass {
        let mut h: Vec<f64> = x.iter().zip(&self.input_mean).map(|(a, b)| a - b).collect();
        let mut inputs = Vec::with_capacity(self.encoder.len());
        let mut pre = Vec::with_capacity(self.encoder.len());
        let mut buf = Vec::new();
        for l in &self.encoder {
            l.forward(&self.params, &h, &mut buf);
            inputs.push(core::mem::take(&mut h));
            h = buf.iter().map(|v| gelu(*v)).collect();
            pre.push(buf.clone());
        }
        let mut mu = Vec::new();
        let mut logvar = Vec::new();
        self.mu_head.forward(&self.params, &h, &mut mu);
        self.logvar_head.forward(&self.params, &h, &mut logvar);
        inputs.push(h);
        EncoderPass { inputs, pre, mu, logvar }
    }

    fn decode_pass(&self, m: &[f64]) -> DecoderPass {
        let mut h = m.to_vec();
        let mut inputs = Vec::with_capacity(self.decoder.len() + 1);
        let mut pre = Vec::with_capacity(self.decoder.len());
        let mut buf = Vec::new();
        for l in &self.decoder {
            l.forward(&self.params, &h, &mut buf);
            inputs.push(core::mem::take(&mut h));
            h = buf.iter().map(|v| gelu(*v)).collect();
            pre.push(buf.clone());
        }
        let mut out = Vec::new();
        self.output.forward(&self.params, &h, &mut out);
        inputs.push(h);
        for (o, m) in out.iter_mut().zip(&self.input_mean) {
            *o += m;
        }
        DecoderPass { inputs, pre, out }
    }

    pub fn encode_mu(&self, x: &[f64]) -> Vec<f64> {
        self.encode_pass(x).mu
    }

    pub fn encode(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.encode_pass(x);
        (p.mu, p.logvar)
    }

    pub fn decode(&self, m: &[f64]) -> Vec<f64> {
        self.decode_pass(m).out
    }

    /// Backpropagate `(∂L/∂μ, ∂L/∂logσ²)` through the encoder. Returns `∂L/∂x`.
    fn encoder_backward(&self, pass: &EncoderPass, g_mu: &[f64], g_logvar: Option<&[f64]>, mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let top = pass.inputs.last().expect("encoder input");
        let mut g = self.mu_head.backward(&self.params, top, g_mu, grad.as_deref_mut());
        if let Some(glv) = g_logvar {
            let g2 = self.logvar_head.backward(&self.params, top, glv, grad.as_deref_mut());
            g.iter_mut().zip(&g2).for_each(|(a, b)| *a += b);
        }
        for (i, l) in self.encoder.iter().enumerate().rev() {
            let g_pre: Vec<f64> = g.iter().zip(&pass.pre[i]).map(|(gv, p)| gv * gelu_grad(*p)).collect();
            g = l.backward(&self.params, &pass.inputs[i], &g_pre, grad.as_deref_mut());
        }
        g
    }

    fn decoder_backward(&self, pass: &DecoderPass, g_out: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let top = pass.inputs.last().expect("decoder input");
        let mut g = self.output.backward(&self.params, top, g_out, grad.as_deref_mut());
        for (i, l) in self.decoder.iter().enumerate().rev() {
            let g_pre: Vec<f64> = g.iter().zip(&pass.pre[i]).map(|(gv, p)| gv * gelu_grad(*p)).collect();
            g = l.backward(&self.params, &pass.inputs[i], &g_pre, grad.as_deref_mut());
        }
        g
    }

    /// `∂L/∂x` of a loss on the μ head.
    pub fn encode_mu_vjp(&self, x: &[f64], g_mu: &[f64]) -> Vec<f64> {
        let pass = self.encode_pass(x);
        self.encoder_backward(&pass, g_mu, None, None)
    }

    /// Per-sample training loss `(L_rec, L_KL)` for a fixed noise draw, with
    /// `scale·∂(L_rec + kl_w·L_KL)/∂params` added into `grad`.
    pub fn sample_loss(&self, x: &[f64], eps: &[f64], kl_w: f64, scale: f64, grad: Option<&mut [f64]>) -> (f64, f64) {
        let enc = self.encode_pass(x);
        let d = self.latent_dim as f64;
        let std: Vec<f64> = enc.logvar.iter().map(|lv| libm::exp(0.5 * lv)).collect();
        let m: Vec<f64> = (0..self.latent_dim).map(|i| enc.mu[i] + std[i] * eps[i]).collect();
        let dec = self.decode_pass(&m);
        let resid: Vec<f64> = dec.out.iter().zip(x).map(|(a, b)| a - b).collect();
        let rec = dot(&resid, &resid);
        let kl = -0.5 / d
            * (0..self.latent_dim)
                .map(|i| 1.0 + enc.logvar[i] - std[i] * std[i] - enc.mu[i] * enc.mu[i])
                .sum::<f64>();
        if let Some(grad) = grad {
            let g_out: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
            let g_m = self.decoder_backward(&dec, &g_out, Some(&mut *grad));
            let mut g_mu = vec![0.0; self.latent_dim];
            let mut g_lv = vec![0.0; self.latent_dim];
            for i in 0..self.latent_dim {
                g_mu[i] = g_m[i] + scale * kl_w * enc.mu[i] / d;
                g_lv[i] = g_m[i] * eps[i] * 0.5 * std[i] + scale * kl_w * 0.5 / d * (std[i] * std[i] - 1.0);
            }
            self.encoder_backward(&enc, &g_mu, Some(&g_lv), Some(grad));
        }
        (rec, kl)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { latent_dim: 64, hidden: vec![256], epochs: 40, batch: 32, step_size: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub kl_weight: f64,
    pub rec: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Mean reconstruction error of `decode(encode_mu(x))` on the training set.
    pub final_rec: f64,
    /// PCA reconstruction error at the same latent size, when computable.
    pub pca_rec: Option<f64>,
    pub warning: Option<String>,
}

/// Train a VAE by minibatch Adam on `L_rec + kl_weight(epoch)·L_KL` with
/// reparameterised sampling. Deterministic for a given seed.
pub fn train_vae(corpus: &[MotionWindow], config: &VaeConfig) -> Result<(VaePrior, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let data: Vec<&[f64]> = corpus.iter().map(|w| w.data.as_slice()).collect();
    let (vae, epochs) = train_on(&data, config)?;
    let final_rec = data
        .iter()
        .map(|x| {
            let r = vae.decode(&vae.encode_mu(x));
            r.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / data.len() as f64;
    let pca_rec = fit_pca_prior(corpus, config.latent_dim).ok().map(|p| {
        corpus
            .iter()
            .map(|w| {
                let r = p.decode(&p.encode_mu(&w.data));
                r.iter().zip(&w.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / corpus.len() as f64
    });
    let warning = match pca_rec {
        Some(p) if final_rec >= p => Some(format!(
            "VAE reconstruction error {final_rec:.6} is not below the PCA prior's {p:.6} at latent_dim {}",
            config.latent_dim
        )),
        _ => None,
    };
    Ok((vae, TrainReport { epochs, final_rec, pca_rec, warning }))
}

/// Core training loop on raw vectors (any input dimension).
pub fn train_on(data: &[&[f64]], config: &VaeConfig) -> Result<(VaePrior, Vec<EpochStats>)> {
    let n = data.len();
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::invalid("training vectors differ in length"));
    }
    if config.batch == 0 || !(config.step_size > 0.0) {
        return Err(Error::invalid("batch and step size must be positive"));
    }
    let mut mean = vec![0.0; dim];
    for x in data {
        axpy(1.0 / n as f64, x, &mut mean);
    }
    let mut vae = VaePrior::new(dim, config.latent_dim, &config.hidden, mean, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let np = vae.num_params();
    let (mut m1, mut m2) = (vec![0.0; np], vec![0.0; np]);
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; np];
    let mut eps = vec![0.0; config.latent_dim];
    for epoch in 0..config.epochs {
        let kl_w = kl_weight(epoch);
        order.shuffle(&mut rng);
        let (mut rec_sum, mut kl_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                let (rec, kl) = vae.sample_loss(data[i], &eps, kl_w, scale, Some(&mut grad));
                if !(rec.is_finite() && kl.is_finite()) {
                    return Err(Error::NonFiniteLoss { term: "vae" });
                }
                rec_sum += rec;
                kl_sum += kl;
            }
            step += 1;
            let (c1, c2) = (1.0 - libm::pow(beta1, step as f64), 1.0 - libm::pow(beta2, step as f64));
            for k in 0..np {
                let g = grad[k];
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
                vae.params[k] -= config.step_size * (m1[k] / c1) / (libm::sqrt(m2[k] / c2) + adam_eps);
            }
        }
        stats.push(EpochStats { epoch, kl_weight: kl_w, rec: rec_sum / n as f64, kl: kl_sum / n as f64 });
    }
    Ok((vae, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_data(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (0..n)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (0..dim).map(|j| a * basis[0][j] + b * basis[1][j] + 0.3 * a * b).collect()
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = tiny_data(1, 7, 1);
        let vae = VaePrior::new(7, 3, &[8, 5], vec![0.1; 7], 3).unwrap();
        let eps = [0.3, -1.1, 0.7];
        let kl_w = 0.6;
        let mut grad = vec![0.0; vae.num_params()];
        vae.sample_loss(&data[0], &eps, kl_w, 1.0, Some(&mut grad));
        let h = 1e-5;
        for k in 0..vae.num_params() {
            let mut p = vae.clone();
            p.params[k] += h;
            let (r1, k1) = p.sample_loss(&data[0], &eps, kl_w, 1.0, None);
            p.params[k] -= 2.0 * h;
            let (r2, k2) = p.sample_loss(&data[0], &eps, kl_w, 1.0, None);
            let fd = ((r1 + kl_w * k1) - (r2 + kl_w * k2)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel < 1e-3, "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn encode_mu_vjp_matches_finite_differences() {
        let vae = VaePrior::new(6, 3, &[8], vec![0.0; 6], 9).unwrap();
        let x = [0.2, -0.4, 1.0, 0.3, -0.7, 0.5];
        let w = [0.5, -1.0, 2.0];
        let g = vae.encode_mu_vjp(&x, &w);
        for i in 0..6 {
            let (mut a, mut b) = (x, x);
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (dot(&vae.encode_mu(&a), &w) - dot(&vae.encode_mu(&b), &w)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn small_set_beats_mean_predictor() {
        let data = tiny_data(4, 12, 2);
        let refs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = VaeConfig { latent_dim: 2, hidden: vec![16], epochs: 400, batch: 4, step_size: 3e-3, seed: 4 };
        let (vae, stats) = train_on(&refs, &cfg).unwrap();
        assert!(stats.last().unwrap().rec < 0.5 * stats[0].rec, "{:?}", stats.last());
        let (mut err, mut spread) = (0.0, 0.0);
        for x in &data {
            let r = vae.decode(&vae.encode_mu(x));
            err += r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            spread += x.iter().zip(&vae.input_mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert!(err < 0.25 * spread, "{err} vs {spread}");
    }

    #[test]
    fn training_is_deterministic_and_logs_schedule() {
        let data = tiny_data(40, 10, 5);
        let refs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = VaeConfig { latent_dim: 2, hidden: vec![8], epochs: 25, batch: 8, step_size: 5e-3, seed: 1 };
        let (a, sa) = train_on(&refs, &cfg).unwrap();
        let (b, sb) = train_on(&refs, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(sa, sb);
        for s in &sa {
            assert_eq!(s.kl_weight, kl_weight(s.epoch));
        }
    }

    #[test]
    fn smoothed_reconstruction_trace_decreases() {
        let data = tiny_data(60, 10, 6);
        let refs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let cfg = VaeConfig { latent_dim: 2, hidden: vec![16], epochs: 60, batch: 10, step_size: 3e-3, seed: 2 };
        let (_, stats) = train_on(&refs, &cfg).unwrap();
        let blocks: Vec<f64> = stats.chunks(10).map(|c| c.iter().map(|s| s.rec).sum::<f64>() / c.len() as f64).collect();
        for w in blocks.windows(2) {
            assert!(w[1] <= w[0], "{blocks:?}");
        }
    }
}
