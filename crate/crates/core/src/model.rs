//! The conditional VAE with a class-conditional Gaussian prior.
//!
//! Three modes share one implementation:
//!
//! * `Mlc`: prior `N(M(y), I)` with a multilinear mean (CP, Tucker, full
//!   table or the general N-attribute form), plus affine label decoders.
//! * `Lc`: the same with a purely linear mean.
//! * `CvaeBaseline`: standard normal prior; the joint one-hot of the
//!   attribute combination is concatenated to the encoder and decoder inputs.
//!
//! The training loss is the negative ELBO: Bernoulli reconstruction, label
//! cross-entropy, and `β·KL(q(z|x,y) ‖ N(M(y), I))`, summed over pixels and
//! latent dimensions and averaged over the batch.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{glorot_uniform, softmax_rows, AdamConfig, Mlp, ParamStore, Tape, Var};
use crate::conditioning::{AttributeSpec, ConditioningParams, LabelCombo, Variant};
use crate::data::{make_batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    Mlc,
    Lc,
    CvaeBaseline,
}

/// One attribute whose labels are never observed; its class probabilities
/// come from a second encoder and are relaxed with Gumbel-Softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledConfig {
    pub attribute: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_entropy_weight")]
    pub entropy_weight: f64,
    #[serde(default = "default_infer_hidden")]
    pub hidden: usize,
}

fn default_tau() -> f64 {
    0.5
}

fn default_entropy_weight() -> f64 {
    0.1
}

fn default_infer_hidden() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModeTag,
    pub variant: Variant,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Encoder hidden widths; the decoder uses them in reverse.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub unlabeled: Option<UnlabeledConfig>,
}

fn default_latent_dim() -> usize {
    16
}

fn default_beta() -> f64 {
    1.0
}

fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match (self.mode, &self.variant) {
            (ModeTag::Lc, v) if *v != Variant::Linear => {
                Err(Error::Config("LC mode uses the linear variant".into()))
            }
            (ModeTag::Mlc, Variant::Linear) => Err(Error::Config("MLC mode needs a multilinear variant".into())),
            (ModeTag::CvaeBaseline, _) if self.unlabeled.is_some() => {
                Err(Error::Config("the cVAE baseline has no unlabeled-attribute extension".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Diagonal Gaussian posterior statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Array1<f64>,
    pub logvar: Array1<f64>,
}

/// `z = μ + exp(logσ²/2)·ε`.
pub fn reparameterize(g: &GaussianParams, eps: &Array1<f64>) -> Result<Array1<f64>> {
    if eps.len() != g.mean.len() || g.logvar.len() != g.mean.len() {
        return Err(Error::dim(format!(
            "posterior of size {} with noise of size {}",
            g.mean.len(),
            eps.len()
        )));
    }
    Ok(&g.mean + &(g.logvar.mapv(|lv| (0.5 * lv).exp()) * eps))
}

/// `KL(N(μ, diag σ²) ‖ N(m, I)) = ½ Σ (σ² + (μ − m)² − 1 − log σ²)`.
pub fn kl_class_prior(g: &GaussianParams, prior_mean: &Array1<f64>) -> Result<f64> {
    if prior_mean.len() != g.mean.len() || g.logvar.len() != g.mean.len() {
        return Err(Error::dim(format!(
            "posterior of size {} against prior mean of size {}",
            g.mean.len(),
            prior_mean.len()
        )));
    }
    Ok(0.5
        * g.mean
            .iter()
            .zip(&g.logvar)
            .zip(prior_mean)
            .map(|((&mu, &lv), &m)| lv.exp() + (mu - m).powi(2) - 1.0 - lv)
            .sum::<f64>())
}

/// `softmax((logits + g)/τ)` with Gumbel noise `g = −log(−log u)`.
pub fn gumbel_softmax(logits: &Array1<f64>, tau: f64, u: &Array1<f64>) -> Result<Array1<f64>> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    if u.len() != logits.len() {
        return Err(Error::dim(format!("{} logits with {} uniform draws", logits.len(), u.len())));
    }
    if u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::contract("uniform draws must lie in (0, 1)"));
    }
    let perturbed: Array1<f64> = logits
        .iter()
        .zip(u)
        .map(|(&l, &v)| (l - (-v.ln()).ln()) / tau)
        .collect();
    Ok(softmax_rows(&perturbed.insert_axis(Axis(0))).row(0).to_owned())
}

/// Uniform draws strictly inside (0, 1).
fn open_uniform(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        let v: f64 = rng.gen();
        v.clamp(1e-12, 1.0 - 1e-12)
    })
}

pub fn standard_normal(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Inputs of one ELBO evaluation. Noise is drawn by the caller so the
/// loss is a deterministic function of parameters and batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    /// One-hot rows per attribute. The row block of an unlabeled attribute
    /// is ignored.
    pub ys: Vec<Array2<f64>>,
    pub eps: Array2<f64>,
    /// Uniform draws for Gumbel-Softmax, present when the model has an
    /// unlabeled attribute.
    pub gumbel_u: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub label_ce: f64,
    pub kl: f64,
    pub entropy: f64,
}

/// Records of the loss graph for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub label_ce: Option<Var>,
    pub kl: Var,
    pub entropy: Option<Var>,
}

impl LossVars {
    pub fn terms(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            total: tape.scalar(self.total),
            recon: tape.scalar(self.recon),
            label_ce: self.label_ce.map_or(0.0, |v| tape.scalar(v)),
            kl: tape.scalar(self.kl),
            entropy: self.entropy.map_or(0.0, |v| tape.scalar(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean: LossTerms,
    pub batches: Vec<LossTerms>,
}

/// Training metrics as TOML, one `[[epochs]]` table per epoch.
pub fn metrics_toml(epochs: &[EpochMetrics]) -> Result<String> {
    #[derive(Serialize)]
    struct Metrics<'a> {
        epochs: &'a [EpochMetrics],
    }
    toml::to_string(&Metrics { epochs }).map_err(|e| Error::Format(format!("metrics: {e}")))
}

/// The generative model and its parameters.
#[derive(Debug, Clone)]
pub struct MlcVaeModel {
    spec: AttributeSpec,
    image: ImageShape,
    config: ModelConfig,
    conditioning: Option<ConditioningParams>,
    unlabeled: Option<usize>,
    encoder: Mlp,
    decoder: Mlp,
    infer: Option<Mlp>,
    pub store: ParamStore,
    pub seed: u64,
    pub epoch: usize,
}

impl MlcVaeModel {
    /// Builds the architecture and draws initial parameters from `seed`.
    pub fn new(spec: AttributeSpec, image: ImageShape, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(spec, image, config, seed)?;
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut store = ParamStore::new();
        model.encoder.init(&mut store, &mut rng)?;
        model.decoder.init(&mut store, &mut rng)?;
        if let Some(cond) = &model.conditioning {
            cond.init(&mut store, &mut rng)?;
        }
        for i in model.label_decoder_attrs() {
            let card = model.spec.cardinalities()[i];
            store.insert(&format!("label{i}.w"), glorot_uniform(&mut rng, card, model.config.latent_dim))?;
            store.insert(&format!("label{i}.b"), Array2::zeros((1, card)))?;
        }
        if let Some(infer) = &model.infer {
            infer.init(&mut store, &mut rng)?;
        }
        model.store = store;
        Ok(model)
    }

    /// Architecture without parameters, as used when loading checkpoints.
    pub(crate) fn skeleton(spec: AttributeSpec, image: ImageShape, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cards = spec.cardinalities();
        let d = config.latent_dim;
        let conditioning = match config.mode {
            ModeTag::CvaeBaseline => None,
            _ => Some(ConditioningParams::new(config.variant.clone(), &spec, d)?),
        };
        let unlabeled = match &config.unlabeled {
            None => None,
            Some(u) => Some(
                spec.index_of(&u.attribute)
                    .ok_or_else(|| Error::Config(format!("unlabeled attribute {:?} is not in the spec", u.attribute)))?,
            ),
        };
        let cond_width = match config.mode {
            ModeTag::CvaeBaseline => spec.num_combos(),
            _ => cards.iter().sum(),
        };
        let mut enc_sizes = vec![image.len() + cond_width];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(2 * d);
        let mut dec_sizes = vec![d + if config.mode == ModeTag::CvaeBaseline { cond_width } else { 0 }];
        dec_sizes.extend(config.hidden.iter().rev());
        dec_sizes.push(image.len());
        let infer = match (&config.unlabeled, unlabeled) {
            (Some(u), Some(i)) => Some(Mlp::new("infer", &[image.len(), u.hidden, cards[i]])),
            _ => None,
        };
        Ok(Self {
            spec,
            image,
            encoder: Mlp::new("enc", &enc_sizes),
            decoder: Mlp::new("dec", &dec_sizes),
            conditioning,
            unlabeled,
            infer,
            config,
            store: ParamStore::new(),
            seed,
            epoch: 0,
        })
    }

    pub fn spec(&self) -> &AttributeSpec {
        &self.spec
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ModeTag {
        self.config.mode
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn conditioning(&self) -> Option<&ConditioningParams> {
        self.conditioning.as_ref()
    }

    pub fn unlabeled_attribute(&self) -> Option<usize> {
        self.unlabeled
    }

    fn label_decoder_attrs(&self) -> Vec<usize> {
        if self.config.mode == ModeTag::CvaeBaseline {
            return vec![];
        }
        (0..self.spec.len()).filter(|&i| Some(i) != self.unlabeled).collect()
    }

    /// Joint one-hot of the combination, combinations ordered as in
    /// [`AttributeSpec::combos`].
    fn joint_index(&self, labels: &[usize]) -> usize {
        let cards = self.spec.cardinalities();
        labels.iter().zip(&cards).fold(0, |acc, (&j, &d)| acc * d + j)
    }

    /// Joint one-hot rows for the cVAE baseline from per-attribute rows.
    fn joint_rows(&self, ys: &[Array2<f64>]) -> Array2<f64> {
        let rows = ys[0].nrows();
        let mut out = Array2::zeros((rows, self.spec.num_combos()));
        for r in 0..rows {
            let labels: Vec<usize> = ys
                .iter()
                .map(|y| y.row(r).iter().position(|&v| v == 1.0).unwrap_or(0))
                .collect();
            out[[r, self.joint_index(&labels)]] = 1.0;
        }
        out
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        let rows = b.x.nrows();
        if b.x.ncols() != self.image.len() {
            return Err(Error::dim(format!("images have {} values, model expects {}", b.x.ncols(), self.image.len())));
        }
        if b.ys.len() != self.spec.len() {
            return Err(Error::contract(format!("{} label blocks for {} attributes", b.ys.len(), self.spec.len())));
        }
        for (i, (y, card)) in b.ys.iter().zip(self.spec.cardinalities()).enumerate() {
            if Some(i) != self.unlabeled && y.dim() != (rows, card) {
                return Err(Error::dim(format!("labels of attribute {i} have shape {:?}", y.dim())));
            }
        }
        if b.eps.dim() != (rows, self.latent_dim()) {
            return Err(Error::dim(format!("noise has shape {:?}", b.eps.dim())));
        }
        if self.unlabeled.is_some() && b.gumbel_u.as_ref().map(|u| u.nrows()) != Some(rows) {
            return Err(Error::contract("a model with an unlabeled attribute needs Gumbel draws"));
        }
        Ok(())
    }

    /// Encoder statistics `(μ, clamped logσ²)` on the tape.
    fn encode_vars(&self, tape: &mut Tape, x: Var, cond_input: &[Var]) -> Result<(Var, Var)> {
        let mut parts = vec![x];
        parts.extend_from_slice(cond_input);
        let input = tape.concat(&parts)?;
        let h = self.encoder.forward(tape, input)?;
        let d = self.latent_dim();
        let mu = tape.slice_cols(h, 0, d)?;
        let lv = tape.slice_cols(h, d, d)?;
        let lv = tape.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        Ok((mu, lv))
    }

    fn decode_vars(&self, tape: &mut Tape, z: Var, joint: Option<Var>) -> Result<Var> {
        let input = match joint {
            Some(j) => tape.concat(&[z, j])?,
            None => z,
        };
        self.decoder.forward(tape, input)
    }

    /// Records the negative ELBO of a batch.
    pub fn elbo_graph(&self, tape: &mut Tape, batch: &Batch) -> Result<LossVars> {
        self.elbo_graph_with(tape, batch, None)
    }

    /// `enc_c` fixes the unlabeled attribute's encoder input; by default it is
    /// the detached relaxed sample.
    fn elbo_graph_with(&self, tape: &mut Tape, batch: &Batch, enc_c: Option<&Array2<f64>>) -> Result<LossVars> {
        self.check_batch(batch)?;
        let rows = batch.x.nrows() as f64;
        let x = tape.constant(batch.x.clone());
        let mut ys: Vec<Var> = batch.ys.iter().map(|y| tape.constant(y.clone())).collect();

        let mut entropy = None;
        if let (Some(u_idx), Some(infer), Some(cfg)) = (self.unlabeled, &self.infer, &self.config.unlabeled) {
            let logits = infer.forward(tape, x)?;
            let u = batch.gumbel_u.as_ref().expect("checked");
            let g = tape.constant(u.mapv(|v| -(-v.ln()).ln()));
            let perturbed = tape.add(logits, g)?;
            let scaled = tape.scale(perturbed, 1.0 / cfg.tau);
            ys[u_idx] = tape.softmax(scaled);

            let q = tape.softmax(logits);
            let avg = tape.constant(Array2::from_elem((1, batch.x.nrows()), 1.0 / rows));
            let marginal = tape.matmul(avg, q)?;
            let shifted = tape.add_scalar(marginal, 1e-12);
            let log_m = tape.log(shifted);
            let plogp = tape.mul(marginal, log_m)?;
            let neg_h = tape.sum(plogp);
            entropy = Some(tape.scale(neg_h, -1.0));
        }

        let joint = match self.config.mode {
            ModeTag::CvaeBaseline => Some(tape.constant(self.joint_rows(&batch.ys))),
            _ => None,
        };
        let mut cond_input: Vec<Var> = match joint {
            Some(j) => vec![j],
            None => ys.clone(),
        };
        // The relaxed sample reaches the encoder as data. Its gradient through
        // the encoder favors one constant cluster for every image (noise in the
        // encoder input hurts reconstruction), so the inference network only
        // learns through the prior mean and the entropy bonus.
        if let Some(u_idx) = self.unlabeled {
            cond_input[u_idx] = match enc_c {
                Some(c) => tape.constant(c.clone()),
                None => tape.detach(cond_input[u_idx]),
            };
        }
        let (mu, lv) = self.encode_vars(tape, x, &cond_input)?;
        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let eps = tape.constant(batch.eps.clone());
        let noise = tape.mul(std, eps)?;
        let z = tape.add(mu, noise)?;

        let logits = self.decode_vars(tape, z, joint)?;
        let bce = tape.bce_with_logits(logits, x)?;
        let bce_sum = tape.sum(bce);
        let recon = tape.scale(bce_sum, 1.0 / rows);

        let mut label_ce = None;
        for i in self.label_decoder_attrs() {
            let w = tape.param(&format!("label{i}.w"))?;
            let b = tape.param(&format!("label{i}.b"))?;
            let lg = tape.affine(z, w, b)?;
            let ls = tape.log_softmax(lg);
            let picked = tape.mul(ls, ys[i])?;
            let s = tape.sum(picked);
            let ce = tape.scale(s, -1.0 / rows);
            label_ce = Some(match label_ce {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }

        let diff = match &self.conditioning {
            Some(cond) => {
                let m = cond.build(tape, &ys)?;
                tape.sub(mu, m)?
            }
            None => mu,
        };
        let sq = tape.square(diff);
        let var = tape.exp(lv);
        let a = tape.add(var, sq)?;
        let b = tape.sub(a, lv)?;
        let c = tape.add_scalar(b, -1.0);
        let kl_sum = tape.sum(c);
        let kl = tape.scale(kl_sum, 0.5 / rows);

        let weighted_kl = tape.scale(kl, self.config.beta);
        let mut total = tape.add(recon, weighted_kl)?;
        if let Some(ce) = label_ce {
            total = tape.add(total, ce)?;
        }
        if let (Some(h), Some(cfg)) = (entropy, &self.config.unlabeled) {
            let bonus = tape.scale(h, -cfg.entropy_weight);
            total = tape.add(total, bonus)?;
        }
        tape.set_output("loss", total);
        Ok(LossVars {
            total,
            recon,
            label_ce,
            kl,
            entropy,
        })
    }

    /// Negative ELBO and its breakdown.
    pub fn elbo_loss(&self, batch: &Batch) -> Result<LossTerms> {
        let mut tape = Tape::with_params(&self.store);
        let vars = self.elbo_graph(&mut tape, batch)?;
        Ok(vars.terms(&tape))
    }

    /// Draws the noise for a batch of the given samples.
    pub fn make_batch(&self, ds: &LabeledDataset, indices: &[usize], rng: &mut impl Rng, exec: Exec) -> Batch {
        let x = ds.image_batch(indices, exec);
        let eps = standard_normal(rng, (indices.len(), self.latent_dim()));
        let gumbel_u = self
            .unlabeled
            .map(|u| open_uniform(rng, (indices.len(), self.spec.cardinalities()[u])));
        Batch {
            x,
            ys: ds.one_hot_batch(indices),
            eps,
            gumbel_u,
        }
    }

    fn check_dataset(&self, ds: &LabeledDataset) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        if ds.spec() != &self.spec {
            return Err(Error::contract("dataset attributes differ from the model's"));
        }
        if ds.pixel_len() != self.image.len() {
            return Err(Error::dim(format!("dataset images have {} values, model expects {}", ds.pixel_len(), self.image.len())));
        }
        Ok(())
    }

    /// One pass of minibatch Adam over `ds`.
    pub fn train_epoch(&mut self, ds: &LabeledDataset, cfg: &TrainConfig, exec: Exec) -> Result<EpochMetrics> {
        self.check_dataset(ds)?;
        cfg.validate()?;
        let epoch_seed = rng::derive(cfg.seed, self.epoch as u64);
        let batches = make_batches(ds.len(), cfg.batch_size, epoch_seed)?;
        let mut noise = rng::stream(epoch_seed, rng::streams::NOISE);
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let mut terms = Vec::with_capacity(batches.len());
        for idx in &batches {
            let batch = self.make_batch(ds, idx, &mut noise, exec);
            let grads = {
                let mut tape = Tape::with_params(&self.store);
                let vars = self.elbo_graph(&mut tape, &batch)?;
                terms.push(vars.terms(&tape));
                tape.backward(vars.total)?
            };
            grads.accumulate_into(&mut self.store);
            self.store.adam_step(&adam);
        }
        self.epoch += 1;
        let n = terms.len() as f64;
        let mean = terms.iter().fold(LossTerms::default(), |acc, t| LossTerms {
            total: acc.total + t.total / n,
            recon: acc.recon + t.recon / n,
            label_ce: acc.label_ce + t.label_ce / n,
            kl: acc.kl + t.kl / n,
            entropy: acc.entropy + t.entropy / n,
        });
        Ok(EpochMetrics {
            epoch: self.epoch,
            mean,
            batches: terms,
        })
    }

    /// Runs `cfg.epochs` epochs, reporting each through `on_epoch`.
    pub fn train(
        &mut self,
        ds: &LabeledDataset,
        cfg: &TrainConfig,
        exec: Exec,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            let m = self.train_epoch(ds, cfg, exec)?;
            on_epoch(&m);
            out.push(m);
        }
        Ok(out)
    }

    fn label_rows(&self, ys: &[Array1<f64>]) -> Result<Vec<Array2<f64>>> {
        if ys.len() != self.spec.len() {
            return Err(Error::dim(format!("{} label vectors for {} attributes", ys.len(), self.spec.len())));
        }
        for (y, card) in ys.iter().zip(self.spec.cardinalities()) {
            if y.len() != card {
                return Err(Error::dim(format!("label vector of length {} for cardinality {card}", y.len())));
            }
        }
        Ok(ys.iter().map(|y| y.clone().insert_axis(Axis(0))).collect())
    }

    fn encode_rows(&self, x: &Array2<f64>, ys: &[Array2<f64>]) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.image.len() {
            return Err(Error::dim(format!("images have {} values, model expects {}", x.ncols(), self.image.len())));
        }
        let mut tape = Tape::with_params(&self.store);
        let xv = tape.constant(x.clone());
        let cond: Vec<Var> = match self.config.mode {
            ModeTag::CvaeBaseline => vec![tape.constant(self.joint_rows(ys))],
            _ => ys.iter().map(|y| tape.constant(y.clone())).collect(),
        };
        let (mu, lv) = self.encode_vars(&mut tape, xv, &cond)?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    /// Posterior statistics for one image and its labels (one-hot vectors).
    pub fn encode(&self, x: &[f64], ys: &[Array1<f64>]) -> Result<GaussianParams> {
        let rows = self.label_rows(ys)?;
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        let (mu, lv) = self.encode_rows(&x, &rows)?;
        Ok(GaussianParams {
            mean: mu.row(0).to_owned(),
            logvar: lv.row(0).to_owned(),
        })
    }

    /// Posterior means of a batch of images with their combinations.
    pub fn encode_means(&self, x: &Array2<f64>, combos: &[LabelCombo]) -> Result<Array2<f64>> {
        let ys = self.spec.one_hot_batch(combos)?;
        Ok(self.encode_rows(x, &ys)?.0)
    }

    fn decode_rows(&self, z: &Array2<f64>, joint: Option<Array2<f64>>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::dim(format!("latent codes have {} values, model expects {}", z.ncols(), self.latent_dim())));
        }
        let mut tape = Tape::with_params(&self.store);
        let zv = tape.constant(z.clone());
        let jv = joint.map(|j| tape.constant(j));
        let logits = self.decode_vars(&mut tape, zv, jv)?;
        let px = tape.sigmoid(logits);
        Ok(tape.value(px).clone())
    }

    fn joint_for(&self, combos: &[LabelCombo]) -> Result<Option<Array2<f64>>> {
        if self.config.mode != ModeTag::CvaeBaseline {
            return Ok(None);
        }
        let mut j = Array2::zeros((combos.len(), self.spec.num_combos()));
        for (r, c) in combos.iter().enumerate() {
            self.spec.validate(c)?;
            j[[r, self.joint_index(&c.0)]] = 1.0;
        }
        Ok(Some(j))
    }

    /// Pixel means in (0, 1) for one latent code. The cVAE baseline needs
    /// the combination it decodes for; use [`MlcVaeModel::decode_for`].
    pub fn decode_image(&self, z: &Array1<f64>) -> Result<Vec<f64>> {
        if self.config.mode == ModeTag::CvaeBaseline {
            return Err(Error::contract("the cVAE decoder also takes the attribute combination"));
        }
        Ok(self.decode_rows(&z.clone().insert_axis(Axis(0)), None)?.row(0).to_vec())
    }

    /// Decodes rows of `z`, each paired with a combination (only used by
    /// the cVAE baseline).
    pub fn decode_for(&self, z: &Array2<f64>, combos: &[LabelCombo]) -> Result<Array2<f64>> {
        if z.nrows() != combos.len() {
            return Err(Error::dim(format!("{} codes for {} combinations", z.nrows(), combos.len())));
        }
        let joint = self.joint_for(combos)?;
        self.decode_rows(z, joint)
    }

    /// Class logits per attribute from the affine label decoders.
    pub fn decode_labels(&self, z: &Array1<f64>) -> Result<Vec<Array1<f64>>> {
        if self.config.mode == ModeTag::CvaeBaseline {
            return Err(Error::contract("the cVAE baseline has no label decoders"));
        }
        if z.len() != self.latent_dim() {
            return Err(Error::dim(format!("latent code of size {}", z.len())));
        }
        self.label_decoder_attrs()
            .into_iter()
            .map(|i| {
                let w = self.store.get(&format!("label{i}.w")).expect("registered");
                let b = self.store.get(&format!("label{i}.b")).expect("registered");
                Ok(w.dot(z) + b.row(0))
            })
            .collect()
    }

    /// Prior means `M(y)` for a batch of combinations (zeros for the cVAE).
    pub fn prior_means(&self, combos: &[LabelCombo]) -> Result<Array2<f64>> {
        for c in combos {
            self.spec.validate(c)?;
        }
        match &self.conditioning {
            Some(cond) => cond.mean_batch(&self.store, combos),
            None => Ok(Array2::zeros((combos.len(), self.latent_dim()))),
        }
    }

    pub fn prior_mean(&self, combo: &LabelCombo) -> Result<Array1<f64>> {
        Ok(self.prior_means(std::slice::from_ref(combo))?.row(0).to_owned())
    }

    /// Decodes `M(combo) + ε` for each row of `eps`.
    pub fn sample_with_noise(&self, combo: &LabelCombo, eps: &Array2<f64>) -> Result<Array2<f64>> {
        let mean = self.prior_mean(combo)?;
        let z = eps + &mean;
        self.decode_for(&z, &vec![combo.clone(); eps.nrows()])
    }

    /// `n` images of `combo` from `z ~ N(M(combo), I)`.
    pub fn sample_combo(&self, combo: &LabelCombo, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.spec.validate(combo)?;
        let mut rng = rng::stream(seed, rng::streams::SAMPLE);
        let eps = standard_normal(&mut rng, (n, self.latent_dim()));
        self.sample_with_noise(combo, &eps)
    }

    /// Encodes `x` under `src` (posterior mean), moves the code by
    /// `M(tgt) − M(src)` and decodes. The cVAE baseline decodes the
    /// unshifted code with the target combination instead.
    pub fn transfer(&self, x: &[f64], src: &LabelCombo, tgt: &LabelCombo) -> Result<Vec<f64>> {
        self.spec.validate(src)?;
        self.spec.validate(tgt)?;
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        let mu = self.encode_means(&xm, std::slice::from_ref(src))?;
        let shift = &self.prior_mean(tgt)? - &self.prior_mean(src)?;
        let z = mu + &shift;
        Ok(self.decode_for(&z, std::slice::from_ref(tgt))?.row(0).to_vec())
    }

    /// Latent codes on the segment from `M(a)` to `M(b)`.
    pub fn interpolation_codes(&self, a: &LabelCombo, b: &LabelCombo, steps: usize) -> Result<Array2<f64>> {
        if steps < 2 {
            return Err(Error::contract(format!("interpolation needs at least 2 steps, got {steps}")));
        }
        let ma = self.prior_mean(a)?;
        let mb = self.prior_mean(b)?;
        let mut z = Array2::zeros((steps, self.latent_dim()));
        for (s, mut row) in z.rows_mut().into_iter().enumerate() {
            let t = s as f64 / (steps - 1) as f64;
            row.assign(&(&ma * (1.0 - t) + &mb * t));
        }
        Ok(z)
    }

    /// Decoded images along the segment from `M(a)` to `M(b)`. For the
    /// cVAE baseline the code stays at zero and the condition is blended.
    pub fn interpolate(&self, a: &LabelCombo, b: &LabelCombo, steps: usize) -> Result<Array2<f64>> {
        let z = self.interpolation_codes(a, b, steps)?;
        match self.joint_for(&[a.clone(), b.clone()])? {
            None => self.decode_rows(&z, None),
            Some(ends) => {
                let mut joint = Array2::zeros((steps, ends.ncols()));
                for (s, mut row) in joint.rows_mut().into_iter().enumerate() {
                    let t = s as f64 / (steps - 1) as f64;
                    row.assign(&(&ends.row(0) * (1.0 - t) + &ends.row(1) * t));
                }
                self.decode_rows(&z, Some(joint))
            }
        }
    }

    /// Class probabilities of the unlabeled attribute for each row of `x`.
    pub fn infer_unlabeled_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let infer = self
            .infer
            .as_ref()
            .ok_or_else(|| Error::contract("model has no unlabeled attribute"))?;
        let mut tape = Tape::with_params(&self.store);
        let xv = tape.constant(x.clone());
        let logits = infer.forward(&mut tape, xv)?;
        let q = tape.softmax(logits);
        Ok(tape.value(q).clone())
    }

    pub fn infer_unlabeled(&self, x: &[f64]) -> Result<Array1<f64>> {
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.infer_unlabeled_batch(&xm)?.row(0).to_owned())
    }
}
