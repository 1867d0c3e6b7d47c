//! Variational autoencoder over scanline observations.
//!
//! The encoder maps the `2W` network input of an [`Observation`] to the
//! mean and log-variance of a diagonal Gaussian in `k` dimensions. The
//! decoder maps a latent back to `2W` values in (0, 1): the first `W`
//! reconstruct the class channel at levels {0, 0.5, 1}, the last `W` the
//! depth channel.
//!
//! Parameters are named `enc.{i}.{w,b}` and `dec.{i}.{w,b}`; the shapes
//! alone determine the architecture, so a checkpointed [`ParamSet`] can be
//! turned back into [`VaeParams`] without extra metadata.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Adam, AdamConfig, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::expert::Dataset;
use crate::nn::{forward, forward_tape, init_stack, shuffled, stack_sizes};
use crate::rng::stream;
use crate::worldsim::{Observation, WorldKind};

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    params: ParamSet,
    k: usize,
    width: usize,
    enc_layers: usize,
    dec_layers: usize,
}

/// Encoder output for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

/// Decoder output, both channels in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// Class level divided by two.
    pub class: Vec<f64>,
    pub depth: Vec<f64>,
}

impl Reconstruction {
    pub fn width(&self) -> usize {
        self.depth.len()
    }

    /// Same layout as [`Observation::to_input`].
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = self.class.clone();
        v.extend_from_slice(&self.depth);
        v
    }
}

impl VaeParams {
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let enc = stack_sizes(&params, "enc")?;
        let dec = stack_sizes(&params, "dec")?;
        let (input, enc_out) = (enc[0], *enc.last().unwrap());
        if input % 2 != 0 || enc_out % 2 != 0 {
            return Err(Error::dim(format!(
                "encoder maps {input} -> {enc_out}; both must be even"
            )));
        }
        let k = enc_out / 2;
        if dec[0] != k || *dec.last().unwrap() != input {
            return Err(Error::dim(format!(
                "decoder maps {} -> {}, expected {k} -> {input}",
                dec[0],
                dec.last().unwrap()
            )));
        }
        if params.len() != 2 * (enc.len() - 1 + dec.len() - 1) {
            return Err(Error::contract("VAE parameter set has extra tensors"));
        }
        Ok(VaeParams {
            params,
            k,
            width: input / 2,
            enc_layers: enc.len() - 1,
            dec_layers: dec.len() - 1,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Scanline width `W` the model was built for.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden(&self) -> Vec<usize> {
        let s = stack_sizes(&self.params, "enc").expect("validated at construction");
        s[1..s.len() - 1].to_vec()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    fn check_width(&self, w: usize) -> Result<()> {
        if w != self.width {
            return Err(Error::dim(format!(
                "observation width {w}, VAE expects {}",
                self.width
            )));
        }
        Ok(())
    }

    fn check_latent(&self, len: usize, what: &str) -> Result<()> {
        if len != self.k {
            return Err(Error::dim(format!("{what} has length {len}, k = {}", self.k)));
        }
        Ok(())
    }
}

/// Encoder `2W → hidden → 2k`, decoder `k → reversed hidden → 2W`, weights
/// `N(0, 1/fan_in)`, biases zero.
pub fn vae_init(k: usize, hidden: &[usize], width: usize, seed: u64) -> Result<VaeParams> {
    if k == 0 || width == 0 {
        return Err(Error::contract("k and width must be at least 1"));
    }
    let mut rng = stream(seed, "vae-init", 0);
    let mut params = ParamSet::new();
    let mut enc = vec![2 * width];
    enc.extend_from_slice(hidden);
    enc.push(2 * k);
    init_stack(&mut params, "enc", &enc, &mut rng)?;
    let mut dec = vec![k];
    dec.extend(hidden.iter().rev());
    dec.push(2 * width);
    init_stack(&mut params, "dec", &dec, &mut rng)?;
    VaeParams::from_params(params)
}

/// Posterior mean and log-variance for each of `rows` inputs.
pub(crate) fn encode_inputs(p: &VaeParams, x: &[f64], rows: usize) -> Vec<f64> {
    forward(&p.params, "enc", p.enc_layers, x, rows, None)
}

pub fn encode(p: &VaeParams, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check_width(obs.width())?;
    let mut out = encode_inputs(p, &obs.to_input(), 1);
    let logvar = out.split_off(p.k);
    Ok((out, logvar))
}

/// Encoder mean only: the latent the controller consumes.
pub fn encode_mu(p: &VaeParams, obs: &Observation) -> Result<Vec<f64>> {
    Ok(encode(p, obs)?.0)
}

/// Full latent code with the given noise draw.
pub fn latent_code(p: &VaeParams, obs: &Observation, eps: &[f64]) -> Result<LatentCode> {
    let (mu, logvar) = encode(p, obs)?;
    let z = reparameterize(&mu, &logvar, eps)?;
    Ok(LatentCode { mu, logvar, z })
}

/// `z = mu + exp(logvar / 2) ⊙ eps`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::dim(format!(
            "reparameterize: mu {}, logvar {}, eps {}",
            mu.len(),
            logvar.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Tape form of [`reparameterize`]; `eps` is recorded as a constant leaf.
pub fn reparameterize_on(tape: &mut Tape, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    if !(tape.value(mu).dims() == tape.value(logvar).dims() && eps.dims() == tape.value(mu).dims())
    {
        return Err(Error::dim(format!(
            "reparameterize: mu {:?}, logvar {:?}, eps {:?}",
            tape.value(mu).dims(),
            tape.value(logvar).dims(),
            eps.dims()
        )));
    }
    let eps = tape.leaf(eps);
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.activation(Activation::Exp, half)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

pub(crate) fn decode_latents(p: &VaeParams, z: &[f64], rows: usize) -> Vec<f64> {
    forward(&p.params, "dec", p.dec_layers, z, rows, Some(Activation::Sigmoid))
}

pub fn decode(p: &VaeParams, z: &[f64]) -> Result<Reconstruction> {
    p.check_latent(z.len(), "latent")?;
    let mut class = decode_latents(p, z, 1);
    let depth = class.split_off(p.width);
    Ok(Reconstruction { class, depth })
}

/// Reconstruction MSE plus `beta` times the KL to the unit Gaussian, for a
/// batch of inputs `[B, 2W]` with noise `[B, k]`.
fn elbo_on_tape(
    tape: &mut Tape,
    p: &VaeParams,
    x: Tensor,
    eps: Tensor,
    beta: f64,
) -> Result<Var> {
    let bound = p.params.bind(tape)?;
    let xv = tape.leaf(x);
    let h = forward_tape(tape, &bound, "enc", p.enc_layers, xv, None)?;
    let mu = tape.slice(h, 0, p.k)?;
    let logvar = tape.slice(h, p.k, p.k)?;
    let z = reparameterize_on(tape, mu, logvar, eps)?;
    let recon = forward_tape(tape, &bound, "dec", p.dec_layers, z, Some(Activation::Sigmoid))?;
    let mse = tape.mse(recon, xv)?;
    if beta == 0.0 {
        return Ok(mse);
    }
    let kl = tape.gaussian_kl(mu, logvar)?;
    let weighted = tape.scale(kl, beta)?;
    tape.add(mse, weighted)
}

pub fn elbo_loss(p: &VaeParams, obs: &Observation, eps: &[f64], beta: f64) -> Result<f64> {
    p.check_width(obs.width())?;
    p.check_latent(eps.len(), "eps")?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::contract(format!("beta must be finite and >= 0, got {beta}")));
    }
    let mut tape = Tape::new();
    let loss = elbo_on_tape(
        &mut tape,
        p,
        Tensor::vector(obs.to_input()),
        Tensor::vector(eps.to_vec()),
        beta,
    )?;
    tape.value(loss).item()
}

/// Gradients of [`elbo_loss`] with respect to every VAE tensor.
pub fn elbo_gradients(
    p: &VaeParams,
    obs: &Observation,
    eps: &[f64],
    beta: f64,
) -> Result<crate::autodiff::GradMap> {
    p.check_width(obs.width())?;
    p.check_latent(eps.len(), "eps")?;
    let mut tape = Tape::new();
    let loss = elbo_on_tape(
        &mut tape,
        p,
        Tensor::vector(obs.to_input()),
        Tensor::vector(eps.to_vec()),
        beta,
    )?;
    Ok(tape.backward(loss)?.into_named())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta: f64,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 200,
            batch: 64,
            lr: 1e-3,
            beta: 1e-3,
            k: 8,
            hidden: vec![128, 64],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub vae: VaeParams,
    /// Mean minibatch loss of each epoch.
    pub history: Vec<f64>,
}

/// Minibatch Adam on the ELBO over every observation in a fake dataset.
///
/// Each epoch shuffles with the stream `(seed, "vae-shuffle", epoch)` and
/// draws one noise vector per observation from `(seed, "vae-eps", epoch)`,
/// in dataset order.
pub fn train_vae(data: &Dataset, cfg: &VaeConfig) -> Result<TrainedVae> {
    if data.world_kind != WorldKind::Fake {
        return Err(Error::contract("the VAE is trained on fake-world data only"));
    }
    let n = data.total_steps();
    if n == 0 {
        return Err(Error::contract("cannot train the VAE on an empty dataset"));
    }
    if cfg.batch == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let width = data.width();
    let inputs: Vec<Vec<f64>> = data.observations().map(Observation::to_input).collect();
    let mut vae = vae_init(cfg.k, &cfg.hidden, width, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    let (k, d) = (cfg.k, 2 * width);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let order = shuffled(n, &mut stream(cfg.seed, "vae-shuffle", epoch));
        let mut eps_rng = stream(cfg.seed, "vae-eps", epoch);
        let eps: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(&mut eps_rng)).collect();
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * d);
            let mut e = Vec::with_capacity(b * k);
            for &i in chunk {
                x.extend_from_slice(&inputs[i]);
                e.extend_from_slice(&eps[i * k..(i + 1) * k]);
            }
            let mut tape = Tape::new();
            let loss = elbo_on_tape(
                &mut tape,
                &vae,
                Tensor::matrix(b, d, x)?,
                Tensor::matrix(b, k, e)?,
                cfg.beta,
            )?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::contract(format!(
                    "VAE loss became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            total += value * b as f64;
            let grads = tape.backward(loss)?.into_named();
            t += 1;
            adam.step(&mut vae.params, &grads, t)?;
        }
        history.push(total / n as f64);
    }
    Ok(TrainedVae { vae, history })
}

/// Mean depth-channel squared error of `decode(mu)` over observations.
pub fn depth_reconstruction_mse<'a>(
    p: &VaeParams,
    obs: impl IntoIterator<Item = &'a Observation>,
) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for o in obs {
        let r = decode(p, &encode_mu(p, o)?)?;
        sum += r.depth.iter().zip(&o.depth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += o.width();
    }
    if count == 0 {
        return Err(Error::contract("no observations"));
    }
    Ok(sum / count as f64)
}
