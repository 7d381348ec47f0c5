//! The end-to-end recognizer: shared encoder with optional posteriorgram
//! input concatenation, attention decoder, multi-task CTC+attention training
//! objective with an optional label-smoothing KL penalty, hybrid rescoring
//! beam search, and checkpointing.

use std::collections::BTreeMap;
use std::path::Path;

use crate::ckpt::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::corpus::{spec_augment, SpecAugmentPolicy};
use crate::ctc::{ctc_forward_backward, ctc_label_logprob, CtcTarget};
use crate::error::{Error, Result};
use crate::inventory::PhoneInventory;
use crate::labelaug::{kl_penalty, SmoothingDistribution};
use crate::matrix::Matrix;
use crate::num::{s, Scalar};
use crate::numcore::{
    log_softmax_backward, log_softmax_row, log_softmax_rows, BiGruLayer, GruCell, Linear,
    OptimizerState, ParamStore,
};
use crate::seed::{derive_indexed_seed, derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub use_input_augmentation: bool,
    pub ppg_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub embed_dim: usize,
    pub downsample: usize,
    pub ctc_vocab: usize,
    pub att_vocab: usize,
    pub blank: usize,
    pub sos: usize,
    pub eos: usize,
    pub lambda_train: f64,
    pub lambda_decode: f64,
    pub alpha: f64,
    pub beam: usize,
}

impl ModelConfig {
    /// Defaults sized for the synthetic corpus; vocabulary indices follow the
    /// inventory layout (shared phone prefix in both heads).
    pub fn for_inventory(inv: &PhoneInventory, feature_dim: usize, use_ia: bool) -> Self {
        let n = inv.base_phones().len() + inv.anti_phones().len();
        ModelConfig {
            feature_dim,
            use_input_augmentation: use_ia,
            ppg_dim: inv.base_phones().len(),
            encoder_hidden: 24,
            decoder_hidden: 24,
            attention_dim: 16,
            embed_dim: 12,
            downsample: 4,
            ctc_vocab: n + 1,
            att_vocab: n + 2,
            blank: n,
            sos: n,
            eos: n + 1,
            lambda_train: 0.3,
            lambda_decode: 0.3,
            alpha: 0.1,
            beam: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_train) || !(0.0..=1.0).contains(&self.lambda_decode) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if self.downsample == 0 {
            return Err(Error::Config("downsample factor must be >= 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam width must be >= 1".into()));
        }
        if self.blank >= self.ctc_vocab || self.sos >= self.att_vocab || self.eos >= self.att_vocab
        {
            return Err(Error::Config(
                "special symbol index outside vocabulary".into(),
            ));
        }
        if self.feature_dim == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("zero model dimension".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.feature_dim
            + if self.use_input_augmentation {
                self.ppg_dim
            } else {
                0
            }
    }

    pub fn encoder_out(&self) -> usize {
        2 * self.encoder_hidden
    }

    fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("kind".into(), "md-model".into());
        m.insert("feature_dim".into(), self.feature_dim.to_string());
        m.insert("use_ia".into(), self.use_input_augmentation.to_string());
        m.insert("ppg_dim".into(), self.ppg_dim.to_string());
        m.insert("encoder_hidden".into(), self.encoder_hidden.to_string());
        m.insert("decoder_hidden".into(), self.decoder_hidden.to_string());
        m.insert("attention_dim".into(), self.attention_dim.to_string());
        m.insert("embed_dim".into(), self.embed_dim.to_string());
        m.insert("downsample".into(), self.downsample.to_string());
        m.insert("ctc_vocab".into(), self.ctc_vocab.to_string());
        m.insert("att_vocab".into(), self.att_vocab.to_string());
        m.insert("blank".into(), self.blank.to_string());
        m.insert("sos".into(), self.sos.to_string());
        m.insert("eos".into(), self.eos.to_string());
        m.insert("lambda_train".into(), self.lambda_train.to_string());
        m.insert("lambda_decode".into(), self.lambda_decode.to_string());
        m.insert("alpha".into(), self.alpha.to_string());
        m.insert("beam".into(), self.beam.to_string());
        m
    }

    fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta_get("kind")? != "md-model" {
            return Err(Error::Schema(format!(
                "checkpoint kind '{}' is not a recognizer",
                ckpt.meta_get("kind")?
            )));
        }
        Ok(ModelConfig {
            feature_dim: ckpt.meta_parse("feature_dim")?,
            use_input_augmentation: ckpt.meta_parse("use_ia")?,
            ppg_dim: ckpt.meta_parse("ppg_dim")?,
            encoder_hidden: ckpt.meta_parse("encoder_hidden")?,
            decoder_hidden: ckpt.meta_parse("decoder_hidden")?,
            attention_dim: ckpt.meta_parse("attention_dim")?,
            embed_dim: ckpt.meta_parse("embed_dim")?,
            downsample: ckpt.meta_parse("downsample")?,
            ctc_vocab: ckpt.meta_parse("ctc_vocab")?,
            att_vocab: ckpt.meta_parse("att_vocab")?,
            blank: ckpt.meta_parse("blank")?,
            sos: ckpt.meta_parse("sos")?,
            eos: ckpt.meta_parse("eos")?,
            lambda_train: ckpt.meta_parse("lambda_train")?,
            lambda_decode: ckpt.meta_parse("lambda_decode")?,
            alpha: ckpt.meta_parse("alpha")?,
            beam: ckpt.meta_parse("beam")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MdModel<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

/// Groups of `factor` consecutive frames concatenated into one row; the last
/// group is zero-padded. T' = ceil(T / factor).
pub fn stack_frames<S: Scalar>(input: &Matrix<S>, factor: usize) -> Result<Matrix<S>> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    if input.rows() == 0 {
        return Err(Error::Shape("cannot stack an empty sequence".into()));
    }
    let t = input.rows();
    let w = input.cols();
    let t_out = t.div_ceil(factor);
    let mut out = Matrix::zeros(t_out, factor * w);
    for g in 0..t_out {
        for k in 0..factor {
            let src = g * factor + k;
            if src < t {
                out.row_mut(g)[k * w..(k + 1) * w].copy_from_slice(input.row(src));
            }
        }
    }
    Ok(out)
}

fn unstack_grad<S: Scalar>(d_stacked: &Matrix<S>, t: usize, w: usize, factor: usize) -> Matrix<S> {
    let mut d = Matrix::zeros(t, w);
    for g in 0..d_stacked.rows() {
        for k in 0..factor {
            let dst = g * factor + k;
            if dst < t {
                d.row_mut(dst)
                    .copy_from_slice(&d_stacked.row(g)[k * w..(k + 1) * w]);
            }
        }
    }
    d
}

pub struct EncodeCache<S: Scalar> {
    bi: crate::numcore::BiGruCache<S>,
    t_in: usize,
}

struct DecStepCache<S: Scalar> {
    y_prev: usize,
    s_prev: Matrix<S>,
    tanh_u: Matrix<S>,
    weights: Vec<S>,
    gru: crate::numcore::GruStepCache<S>,
    out_in: Matrix<S>,
    s_new: Matrix<S>,
}

pub struct TeacherForced<S: Scalar> {
    /// (L+1) × V_att per-step log distributions; the final step scores eos.
    pub log_dists: Matrix<S>,
    /// (L+1) × T' attention weights, each row a distribution.
    pub att_weights: Matrix<S>,
    steps: Vec<DecStepCache<S>>,
}

/// Per-utterance loss breakdown (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Breakdown {
    pub ctc_nll: f64,
    pub att_nll: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Phone indices shared by both heads; never blank, sos, or eos.
    pub symbols: Vec<usize>,
    pub att_logp: f64,
    pub ctc_logp: f64,
    pub combined: f64,
}

/// Eq.-style affine combination in the log domain.
pub fn combined_score(lambda: f64, ctc_logp: f64, att_logp: f64) -> f64 {
    lambda * ctc_logp + (1.0 - lambda) * att_logp
}

impl<S: Scalar> MdModel<S> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = rng_from(derive_seed(seed, "md-init"));
        let enc_in = config.downsample * config.input_width();
        BiGruLayer::init(&mut ps, "enc", enc_in, config.encoder_hidden, &mut rng)?;
        Linear::init(
            &mut ps,
            "ctc",
            config.encoder_out(),
            config.ctc_vocab,
            &mut rng,
        )?;
        ps.register_init(
            "embed",
            config.att_vocab,
            config.embed_dim,
            config.embed_dim,
            &mut rng,
        )?;
        ps.register_init(
            "att.ws",
            config.attention_dim,
            config.decoder_hidden,
            config.decoder_hidden,
            &mut rng,
        )?;
        ps.register_init(
            "att.wh",
            config.attention_dim,
            config.encoder_out(),
            config.encoder_out(),
            &mut rng,
        )?;
        ps.register_init(
            "att.b",
            1,
            config.attention_dim,
            config.attention_dim,
            &mut rng,
        )?;
        ps.register_init(
            "att.v",
            1,
            config.attention_dim,
            config.attention_dim,
            &mut rng,
        )?;
        GruCell::init(
            &mut ps,
            "dec",
            config.embed_dim + config.encoder_out(),
            config.decoder_hidden,
            &mut rng,
        )?;
        Linear::init(
            &mut ps,
            "out",
            config.decoder_hidden + config.encoder_out(),
            config.att_vocab,
            &mut rng,
        )?;
        Ok(MdModel { config, params: ps })
    }

    fn encoder(&self) -> BiGruLayer {
        BiGruLayer::descriptor(
            "enc",
            self.config.downsample * self.config.input_width(),
            self.config.encoder_hidden,
        )
    }

    fn ctc_head(&self) -> Linear {
        Linear {
            w: "ctc.w".into(),
            b: "ctc.b".into(),
            in_dim: self.config.encoder_out(),
            out_dim: self.config.ctc_vocab,
        }
    }

    fn dec_cell(&self) -> GruCell {
        GruCell::descriptor(
            "dec",
            self.config.embed_dim + self.config.encoder_out(),
            self.config.decoder_hidden,
        )
    }

    fn out_head(&self) -> Linear {
        Linear {
            w: "out.w".into(),
            b: "out.b".into(),
            in_dim: self.config.decoder_hidden + self.config.encoder_out(),
            out_dim: self.config.att_vocab,
        }
    }

    fn assemble_input(&self, features: &Matrix<S>, ppg: Option<&Matrix<S>>) -> Result<Matrix<S>> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "expected {} features per frame, got {}",
                self.config.feature_dim,
                features.cols()
            )));
        }
        match (self.config.use_input_augmentation, ppg) {
            (false, None) => Ok(features.clone()),
            (false, Some(_)) => Err(Error::Config(
                "model was built without input augmentation; posteriorgram rejected".into(),
            )),
            (true, None) => Err(Error::Config("model requires a posteriorgram input".into())),
            (true, Some(p)) => {
                if p.rows() != features.rows() || p.cols() != self.config.ppg_dim {
                    return Err(Error::Shape(format!(
                        "posteriorgram is {}x{}, expected {}x{}",
                        p.rows(),
                        p.cols(),
                        features.rows(),
                        self.config.ppg_dim
                    )));
                }
                features.concat_cols(p)
            }
        }
    }

    /// Encoder output H (T' × 2·hidden).
    pub fn encode(
        &self,
        features: &Matrix<S>,
        ppg: Option<&Matrix<S>>,
    ) -> Result<(Matrix<S>, EncodeCache<S>)> {
        let input = self.assemble_input(features, ppg)?;
        let stacked = stack_frames(&input, self.config.downsample)?;
        let (h, bi) = self.encoder().forward(&self.params, &stacked)?;
        Ok((
            h,
            EncodeCache {
                bi,
                t_in: input.rows(),
            },
        ))
    }

    fn encode_backward(&mut self, cache: &EncodeCache<S>, dh: &Matrix<S>) -> Result<()> {
        let enc = self.encoder();
        let d_stacked = enc.backward(&mut self.params, &cache.bi, dh)?;
        // gradients w.r.t. the raw inputs are discarded
        let _ = unstack_grad(
            &d_stacked,
            cache.t_in,
            self.config.input_width(),
            self.config.downsample,
        );
        Ok(())
    }

    /// CTC head log distributions per encoder frame.
    pub fn ctc_log_probs(&self, h: &Matrix<S>) -> Result<Matrix<S>> {
        Ok(log_softmax_rows(&self.ctc_head().forward(&self.params, h)?))
    }

    fn attend(&self, h: &Matrix<S>, s_prev: &Matrix<S>) -> Result<(Matrix<S>, Vec<S>, Matrix<S>)> {
        let ws = self.params.value("att.ws")?;
        let wh = self.params.value("att.wh")?;
        let b = self.params.value("att.b")?;
        let v = self.params.value("att.v")?;
        let su = s_prev.matmul_nt(ws)?; // 1×A
        let mut u = h.matmul_nt(wh)?; // T'×A
        u.add_row_broadcast(&su)?;
        u.add_row_broadcast(b)?;
        let tanh_u = u.map(|x| x.tanh());
        let e = tanh_u.matmul_nt(v)?; // T'×1
        let weights = crate::numcore::softmax_row(e.data());
        let mut ctx = Matrix::zeros(1, h.cols());
        for t in 0..h.rows() {
            for j in 0..h.cols() {
                let v0 = ctx.get(0, j) + weights[t] * h.get(t, j);
                ctx.set(0, j, v0);
            }
        }
        Ok((ctx, weights, tanh_u))
    }

    fn decoder_step(
        &self,
        h: &Matrix<S>,
        s_prev: &Matrix<S>,
        y_prev: usize,
    ) -> Result<(Vec<S>, DecStepCache<S>)> {
        if y_prev >= self.config.att_vocab {
            return Err(Error::Shape("decoder input symbol out of range".into()));
        }
        let (ctx, weights, tanh_u) = self.attend(h, s_prev)?;
        let embed = self.params.value("embed")?;
        let emb = embed.row_matrix(y_prev);
        let cell_in = emb.concat_cols(&ctx)?;
        let (s_new, gru) = self.dec_cell().step(&self.params, &cell_in, s_prev)?;
        let out_in = s_new.concat_cols(&ctx)?;
        let logits = self.out_head().forward(&self.params, &out_in)?;
        let log_row = log_softmax_row(logits.row(0));
        Ok((
            log_row,
            DecStepCache {
                y_prev,
                s_prev: s_prev.clone(),
                tanh_u,
                weights,
                gru,
                out_in,
                s_new,
            },
        ))
    }

    /// Teacher-forced pass over `reference` (phone indices, no sos/eos);
    /// emits L+1 step distributions, the last predicting eos.
    pub fn decode_teacher_forced(
        &self,
        h: &Matrix<S>,
        reference: &[usize],
    ) -> Result<TeacherForced<S>> {
        if reference.is_empty() {
            return Err(Error::Config("reference sequence is empty".into()));
        }
        let l = reference.len();
        let mut log_dists = Matrix::zeros(l + 1, self.config.att_vocab);
        let mut att_weights = Matrix::zeros(l + 1, h.rows());
        let mut steps = Vec::with_capacity(l + 1);
        let mut state = Matrix::zeros(1, self.config.decoder_hidden);
        for step in 0..=l {
            let y_prev = if step == 0 {
                self.config.sos
            } else {
                reference[step - 1]
            };
            let (log_row, cache) = self.decoder_step(h, &state, y_prev)?;
            log_dists.row_mut(step).copy_from_slice(&log_row);
            att_weights.row_mut(step).copy_from_slice(&cache.weights);
            state = cache.s_new.clone();
            steps.push(cache);
        }
        Ok(TeacherForced {
            log_dists,
            att_weights,
            steps,
        })
    }

    /// Backpropagates d(loss)/d(log_dists) through the decoder; returns dH.
    fn decoder_backward(
        &mut self,
        h: &Matrix<S>,
        tf: &TeacherForced<S>,
        d_log: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let cell = self.dec_cell();
        let out_head = self.out_head();
        let embed_dim = self.config.embed_dim;
        let dec_hidden = self.config.decoder_hidden;
        let enc_out = self.config.encoder_out();
        let mut dh = Matrix::zeros(h.rows(), h.cols());
        let mut d_embed = Matrix::zeros(self.config.att_vocab, embed_dim);
        let mut ds_carry = Matrix::zeros(1, dec_hidden);
        for step in (0..tf.steps.len()).rev() {
            let cache = &tf.steps[step];
            let d_logits =
                log_softmax_backward(&tf.log_dists.row_matrix(step), &d_log.row_matrix(step));
            let d_out_in = out_head.backward(&mut self.params, &cache.out_in, &d_logits)?;
            let mut ds_new = Matrix::zeros(1, dec_hidden);
            ds_new
                .row_mut(0)
                .copy_from_slice(&d_out_in.row(0)[..dec_hidden]);
            ds_new.add_assign(&ds_carry)?;
            let mut d_ctx = Matrix::zeros(1, enc_out);
            d_ctx
                .row_mut(0)
                .copy_from_slice(&d_out_in.row(0)[dec_hidden..]);

            let (d_cell_in, ds_prev_gru) =
                cell.backward_step(&mut self.params, &cache.gru, &ds_new)?;
            for j in 0..embed_dim {
                let v = d_embed.get(cache.y_prev, j) + d_cell_in.get(0, j);
                d_embed.set(cache.y_prev, j, v);
            }
            for j in 0..enc_out {
                let v = d_ctx.get(0, j) + d_cell_in.get(0, embed_dim + j);
                d_ctx.set(0, j, v);
            }

            // context: ctx = sum_t w_t H_t
            let t_len = h.rows();
            let mut dw = vec![S::zero(); t_len];
            for t in 0..t_len {
                let mut acc = S::zero();
                for j in 0..enc_out {
                    acc += d_ctx.get(0, j) * h.get(t, j);
                    let v = dh.get(t, j) + cache.weights[t] * d_ctx.get(0, j);
                    dh.set(t, j, v);
                }
                dw[t] = acc;
            }
            // softmax backward over the scores
            let dot: S = cache.weights.iter().zip(&dw).map(|(&w, &d)| w * d).sum();
            let de: Vec<S> = cache
                .weights
                .iter()
                .zip(&dw)
                .map(|(&w, &d)| w * (d - dot))
                .collect();
            // e_t = v · tanh(u_t)
            let att_dim = self.config.attention_dim;
            let v_param = self.params.value("att.v")?.clone();
            let mut dv = Matrix::zeros(1, att_dim);
            let mut du = Matrix::zeros(t_len, att_dim);
            for t in 0..t_len {
                for a in 0..att_dim {
                    let th = cache.tanh_u.get(t, a);
                    dv.set(0, a, dv.get(0, a) + de[t] * th);
                    du.set(t, a, de[t] * v_param.get(0, a) * (S::one() - th * th));
                }
            }
            self.params.add_grad("att.v", &dv)?;
            // u = s_prev Ws^T + H Wh^T + b
            let du_sum = du.col_sum();
            self.params.add_grad("att.b", &du_sum)?;
            self.params.add_grad("att.wh", &du.matmul_tn(h)?)?;
            self.params
                .add_grad("att.ws", &du_sum.matmul_tn(&cache.s_prev)?)?;
            dh.add_assign(&du.matmul(self.params.value("att.wh")?)?)?;
            let mut ds_prev = du_sum.matmul(self.params.value("att.ws")?)?;
            ds_prev.add_assign(&ds_prev_gru)?;
            ds_carry = ds_prev;
        }
        self.params.add_grad("embed", &d_embed)?;
        Ok(dh)
    }
}

/// One training utterance: features, optional posteriorgram, and the target
/// phone sequence as shared phone indices.
#[derive(Debug, Clone)]
pub struct TrainUtt {
    pub features: Matrix<f32>,
    pub ppg: Option<Matrix<f32>>,
    pub target: Vec<usize>,
}

/// Multi-task objective over a batch, with gradients accumulated into the
/// model's parameter store (which is zeroed first):
/// total = lambda·CTC_NLL + (1−lambda)·ATT_NLL + alpha·mean-step-KL.
pub fn training_objective<S: Scalar>(
    model: &mut MdModel<S>,
    batch: &[(&Matrix<S>, Option<&Matrix<S>>, &[usize])],
    smoothing: Option<&SmoothingDistribution>,
) -> Result<Breakdown> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    if let Some(sm) = smoothing {
        sm.validate()?;
        if sm.probs.len() != model.config.att_vocab {
            return Err(Error::Shape(
                "smoothing distribution does not match the output vocabulary".into(),
            ));
        }
    }
    let lambda = model.config.lambda_train;
    let alpha = model.config.alpha;
    let b = batch.len() as f64;
    model.params.zero_grads();
    let mut sums = Breakdown::default();
    for &(features, ppg, target) in batch {
        let (h, enc_cache) = model.encode(features, ppg)?;

        // CTC branch
        let ctc_logits_logp = model.ctc_log_probs(&h)?;
        let ctc_target = CtcTarget::new(target.to_vec(), model.config.blank)?;
        let (ctc_nll, d_ctc_logp) =
            ctc_forward_backward(&ctc_logits_logp, &ctc_target, model.config.blank)?;
        let mut dh = Matrix::zeros(h.rows(), h.cols());
        if lambda > 0.0 {
            let scaled = d_ctc_logp.map(|v| v * s::<S>(lambda / b));
            let d_logits = log_softmax_backward(&ctc_logits_logp, &scaled);
            let head = model.ctc_head();
            dh.add_assign(&head.backward(&mut model.params, &h, &d_logits)?)?;
        }

        // attention branch
        let tf = model.decode_teacher_forced(&h, target)?;
        let steps = target.len() + 1;
        let mut att_nll = S::zero();
        let mut d_log = Matrix::zeros(steps, model.config.att_vocab);
        for l in 0..steps {
            let tgt = if l < target.len() {
                target[l]
            } else {
                model.config.eos
            };
            att_nll -= tf.log_dists.get(l, tgt);
            d_log.set(l, tgt, -s::<S>((1.0 - lambda) / b));
        }

        // label-smoothing penalty
        let mut kl_mean = 0.0f64;
        if alpha > 0.0 {
            if let Some(sm) = smoothing {
                let coef = s::<S>(alpha / (steps as f64 * b));
                for l in 0..steps {
                    let (kl, grad) = kl_penalty(&sm.probs, tf.log_dists.row(l))?;
                    kl_mean += kl.to_f64_lossy() / steps as f64;
                    for (j, g) in grad.iter().enumerate() {
                        d_log.set(l, j, d_log.get(l, j) + coef * *g);
                    }
                }
            }
        }

        dh.add_assign(&model.decoder_backward(&h, &tf, &d_log)?)?;
        model.encode_backward(&enc_cache, &dh)?;

        sums.ctc_nll += ctc_nll.to_f64_lossy() / b;
        sums.att_nll += att_nll.to_f64_lossy() / b;
        sums.kl += kl_mean / b;
    }
    sums.total = lambda * sums.ctc_nll + (1.0 - lambda) * sums.att_nll + alpha * sums.kl;
    if !sums.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", sums.total)));
    }
    Ok(sums)
}

/// Mean per-utterance attention NLL (forward only); the early-stopping metric.
pub fn dev_attention_nll<S: Scalar>(
    model: &MdModel<S>,
    items: &[(&Matrix<S>, Option<&Matrix<S>>, &[usize])],
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Config("empty dev set".into()));
    }
    let mut total = 0.0;
    for &(features, ppg, target) in items {
        let (h, _) = model.encode(features, ppg)?;
        let tf = model.decode_teacher_forced(&h, target)?;
        for l in 0..=target.len() {
            let tgt = if l < target.len() {
                target[l]
            } else {
                model.config.eos
            };
            total -= tf.log_dists.get(l, tgt).to_f64_lossy();
        }
    }
    Ok(total / items.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    /// Applied to the spectral features each epoch when present.
    pub spec_augment: Option<SpecAugmentPolicy>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 30,
            lr: 3e-3,
            patience: 5,
            seed: 0,
            spec_augment: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub dev_metric: f64,
}

fn as_refs(items: &[TrainUtt]) -> Vec<(&Matrix<f32>, Option<&Matrix<f32>>, &[usize])> {
    items
        .iter()
        .map(|u| (&u.features, u.ppg.as_ref(), u.target.as_slice()))
        .collect()
}

/// Deterministic training loop: per-epoch seeded shuffling, per-utterance
/// optimizer steps, early stopping on the dev attention NLL.
pub fn train(
    config: ModelConfig,
    train_set: &[TrainUtt],
    dev_set: &[TrainUtt],
    smoothing: Option<&SmoothingDistribution>,
    opts: &TrainOptions,
) -> Result<(MdModel<f32>, TrainSummary)> {
    if train_set.is_empty() {
        return Err(Error::Config("empty train split".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("empty dev split".into()));
    }
    let mut model = MdModel::<f32>::init(config, opts.seed)?;
    let mut opt = OptimizerState::new(&model.params, opts.lr);
    let dev_refs = as_refs(dev_set);
    let mut best_metric = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;
    for epoch in 0..opts.max_epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        let mut erng = rng_from(derive_indexed_seed(opts.seed, "md-epoch", epoch as u64));
        order.shuffle(&mut erng);
        for &i in &order {
            let u = &train_set[i];
            let masked;
            let features: &Matrix<f32> = match &opts.spec_augment {
                Some(policy) => {
                    let seed = derive_indexed_seed(
                        opts.seed,
                        "spec-augment",
                        (epoch * train_set.len() + i) as u64,
                    );
                    masked = spec_augment(&u.features, policy, seed)?;
                    &masked
                }
                None => &u.features,
            };
            let batch = [(features, u.ppg.as_ref(), u.target.as_slice())];
            let breakdown =
                training_objective(&mut model, &batch, smoothing).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
            }
            opt.step(&mut model.params)?;
        }
        let metric = dev_attention_nll(&model, &dev_refs)?;
        if metric < best_metric {
            best_metric = metric;
            best_params = model.params.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > opts.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((
        model,
        TrainSummary {
            best_epoch,
            epochs_run,
            dev_metric: best_metric,
        },
    ))
}

struct Beam<S: Scalar> {
    state: Matrix<S>,
    prev: usize,
    seq: Vec<usize>,
    logp: f64,
}

/// Attention-driven beam search with hybrid rescoring: complete hypotheses
/// are re-ranked by lambda·log P_CTC + (1−lambda)·log P_ATT.
pub fn beam_decode<S: Scalar>(
    model: &MdModel<S>,
    features: &Matrix<S>,
    ppg: Option<&Matrix<S>>,
    lambda: f64,
    beam_width: usize,
) -> Result<(Hypothesis, Vec<Hypothesis>)> {
    if beam_width == 0 {
        return Err(Error::Config("beam width must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config("lambda must lie in [0, 1]".into()));
    }
    let (h, _) = model.encode(features, ppg)?;
    let ctc_logp = model.ctc_log_probs(&h)?;
    let max_len = 2 * h.rows();
    let eos = model.config.eos;
    let sos = model.config.sos;
    let n_phones = model.config.ctc_vocab - 1; // shared phone prefix

    let mut active = vec![Beam {
        state: Matrix::zeros(1, model.config.decoder_hidden),
        prev: sos,
        seq: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    while !active.is_empty() {
        let mut expanded: Vec<Beam<S>> = Vec::new();
        for b in &active {
            let (log_row, cache) = model.decoder_step(&h, &b.state, b.prev)?;
            let mut scored: Vec<(usize, f64)> = (0..model.config.att_vocab)
                .filter(|&sym| sym != sos)
                .filter(|&sym| sym == eos || sym < n_phones)
                .map(|sym| (sym, log_row[sym].to_f64_lossy()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(sym, lp) in scored.iter().take(beam_width) {
                let logp = b.logp + lp;
                if sym == eos {
                    finished.push((b.seq.clone(), logp));
                } else if b.seq.len() + 1 >= max_len {
                    // length cap: force-close with eos
                    let mut seq = b.seq.clone();
                    seq.push(sym);
                    let (next_row, _) = model.decoder_step(&h, &cache.s_new, sym)?;
                    finished.push((seq, logp + next_row[eos].to_f64_lossy()));
                } else {
                    let mut seq = b.seq.clone();
                    seq.push(sym);
                    expanded.push(Beam {
                        state: cache.s_new.clone(),
                        prev: sym,
                        seq,
                        logp,
                    });
                }
            }
        }
        expanded.sort_by(|a, b| b.logp.total_cmp(&a.logp).then(a.seq.cmp(&b.seq)));
        expanded.truncate(beam_width);
        active = expanded;
        if finished.len() >= beam_width
            && active.iter().all(|b| {
                finished
                    .iter()
                    .map(|f| f.1)
                    .fold(f64::NEG_INFINITY, f64::max)
                    > b.logp
            })
        {
            break;
        }
    }
    if finished.is_empty() {
        return Err(Error::Numeric("beam search produced no hypotheses".into()));
    }
    let mut hyps: Vec<Hypothesis> = Vec::with_capacity(finished.len());
    for (seq, att_logp) in finished {
        let ctc = if seq.is_empty() {
            f64::NEG_INFINITY
        } else {
            let target = CtcTarget::new(seq.clone(), model.config.blank)?;
            ctc_label_logprob(&ctc_logp, &target, model.config.blank)?.to_f64_lossy()
        };
        hyps.push(Hypothesis {
            combined: combined_score(lambda, ctc, att_logp),
            symbols: seq,
            att_logp,
            ctc_logp: ctc,
        });
    }
    hyps.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then(a.symbols.cmp(&b.symbols))
    });
    Ok((hyps[0].clone(), hyps))
}

/// Greedy attention decoding (argmax each step until eos or the length cap).
pub fn greedy_attention_decode<S: Scalar>(
    model: &MdModel<S>,
    features: &Matrix<S>,
    ppg: Option<&Matrix<S>>,
) -> Result<Vec<usize>> {
    let (h, _) = model.encode(features, ppg)?;
    let max_len = 2 * h.rows();
    let mut state = Matrix::zeros(1, model.config.decoder_hidden);
    let mut prev = model.config.sos;
    let mut seq = Vec::new();
    let n_phones = model.config.ctc_vocab - 1;
    loop {
        let (log_row, cache) = model.decoder_step(&h, &state, prev)?;
        let best = (0..model.config.att_vocab)
            .filter(|&sym| sym != model.config.sos)
            .filter(|&sym| sym == model.config.eos || sym < n_phones)
            .max_by(|&a, &b| log_row[a].partial_cmp(&log_row[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        if best == model.config.eos || seq.len() >= max_len {
            return Ok(seq);
        }
        seq.push(best);
        state = cache.s_new;
        prev = best;
    }
}

impl MdModel<f32> {
    pub fn to_checkpoint(&self, epoch: usize, dev_metric: f64, seed: u64) -> Result<Checkpoint> {
        let mut meta = self.config.to_meta();
        meta.insert("epoch".into(), epoch.to_string());
        meta.insert("dev_metric".into(), dev_metric.to_string());
        meta.insert("seed".into(), seed.to_string());
        Checkpoint::from_params(&self.params, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_checkpoint(ckpt)?;
        config.validate()?;
        Ok(MdModel {
            config,
            params: ckpt.to_params()?,
        })
    }

    pub fn save(&self, path: &Path, epoch: usize, dev_metric: f64, seed: u64) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint(epoch, dev_metric, seed)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }
}
