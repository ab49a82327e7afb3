//! Convolutional encoder/decoder pair around the residual quantizer, plus
//! checkpoint serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::EegRecording;
use crate::io::{read_container, write_container, ArrayReader, ArrayWriter, ContainerHeader};
use crate::nn::{conv_out_width, relu, Conv1d, ConvTranspose1d, Param};
use crate::rng::{rng_from_seed, subseed};

use super::{quantize, EegTokenSequence, LatentSequence, RvqError, RvqStack};

pub(crate) const TOKENIZER_KIND: &[u8; 4] = b"RVQC";

/// One strided convolution layer in the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

/// Shape of the encoder (and, mirrored, the decoder).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Flattened feature width per position (channels · bands).
    pub input_width: usize,
    pub layers: Vec<ConvSpec>,
    pub latent_dim: usize,
}

impl EncoderConfig {
    /// Two stride-2 layers: 4× temporal downsampling, small latent.
    pub fn desk_default(input_width: usize) -> Self {
        Self {
            input_width,
            layers: vec![
                ConvSpec { kernel: 4, stride: 2, channels: 32 },
                ConvSpec { kernel: 4, stride: 2, channels: 32 },
            ],
            latent_dim: 8,
        }
    }

    /// Stride-1 config usable down to single-position inputs (sentence mode).
    pub fn pointwise(input_width: usize, channels: usize, latent_dim: usize) -> Self {
        Self {
            input_width,
            layers: vec![ConvSpec { kernel: 1, stride: 1, channels }],
            latent_dim,
        }
    }

    /// Product of all strides.
    pub fn downsample(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn validate(&self) -> Result<(), RvqError> {
        if self.input_width == 0 {
            return Err(RvqError::BadConfig("input_width must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(RvqError::BadConfig("need at least one conv layer".into()));
        }
        if self.latent_dim < 2 {
            return Err(RvqError::BadConfig("latent_dim must be at least 2".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.channels == 0 {
                return Err(RvqError::BadConfig(format!(
                    "layer {i}: kernel, stride, channels must be positive"
                )));
            }
            if l.kernel < l.stride {
                return Err(RvqError::BadConfig(format!(
                    "layer {i}: kernel {} smaller than stride {} leaves gaps",
                    l.kernel, l.stride
                )));
            }
        }
        Ok(())
    }

    /// Widths after each layer: `[W, ceil(W/s_1), ..., T′]`.
    pub fn width_chain(&self, w: usize) -> Vec<usize> {
        let mut chain = Vec::with_capacity(self.layers.len() + 1);
        chain.push(w);
        let mut cur = w;
        for l in &self.layers {
            cur = conv_out_width(cur, l.stride);
            chain.push(cur);
        }
        chain
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Recording features as a `(input_width, W)` channel-major f64 matrix.
pub fn rec_to_matrix(rec: &EegRecording) -> (Vec<f64>, usize) {
    let fw = rec.frame_width();
    let w = rec.words;
    let mut x = vec![0.0; fw * w];
    for t in 0..w {
        let frame = rec.frame(t);
        for c in 0..fw {
            x[c * w + t] = frame[c] as f64;
        }
    }
    (x, w)
}

#[derive(Debug, Clone)]
pub(crate) struct EncCache {
    /// Input to each conv layer (`xs[0]` is the raw input).
    pub xs: Vec<Vec<f64>>,
    /// Pre-activation output of each conv layer.
    pub pre: Vec<Vec<f64>>,
    /// `width_chain` of the input.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct DecCache {
    /// Latent in channel-major layout (input to the projection).
    pub z_chan: Vec<f64>,
    /// Pre-ReLU input to each transposed stage.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU input actually fed to each transposed conv.
    pub acts: Vec<Vec<f64>>,
    pub widths: Vec<usize>,
}

/// The trained tokenizer: encoder convs, residual codebooks, mirrored decoder.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub config: EncoderConfig,
    pub enc: Vec<Conv1d>,
    /// 1×1 conv mapping the last layer's channels to the latent dimension.
    pub enc_proj: Conv1d,
    /// 1×1 conv mapping the latent dimension back to the last layer's channels.
    pub dec_proj: Conv1d,
    /// Transposed mirrors of `enc`, stored in decode order (deepest first).
    pub dec: Vec<ConvTranspose1d>,
    pub stack: RvqStack,
    pub seed: u64,
}

impl Tokenizer {
    pub fn new(
        config: EncoderConfig,
        stages: usize,
        codebook_size: usize,
        beta: f64,
        seed: u64,
    ) -> Result<Self, RvqError> {
        config.validate()?;
        if stages == 0 {
            return Err(RvqError::BadConfig("need at least one stage".into()));
        }
        if codebook_size < 2 {
            return Err(RvqError::BadConfig("codebook size must be at least 2".into()));
        }
        let mut rng = rng_from_seed(subseed(seed, "tokenizer-init"));
        let mut enc = Vec::new();
        let mut c_in = config.input_width;
        for l in &config.layers {
            enc.push(Conv1d::new(c_in, l.channels, l.kernel, l.stride, &mut rng));
            c_in = l.channels;
        }
        let enc_proj = Conv1d::new(c_in, config.latent_dim, 1, 1, &mut rng);
        let dec_proj = Conv1d::new(config.latent_dim, c_in, 1, 1, &mut rng);
        let mut dec = Vec::new();
        for (i, l) in config.layers.iter().enumerate().rev() {
            let out_ch = if i == 0 {
                config.input_width
            } else {
                config.layers[i - 1].channels
            };
            dec.push(ConvTranspose1d::new(
                l.channels, out_ch, l.kernel, l.stride, &mut rng,
            ));
        }
        let sizes = vec![codebook_size; stages];
        let stack = RvqStack::zeros(stages, &sizes, config.latent_dim, beta);
        Ok(Self {
            config,
            enc,
            enc_proj,
            dec_proj,
            dec,
            stack,
            seed,
        })
    }

    pub(crate) fn encode_matrix(&self, x: &[f64], w: usize) -> (LatentSequence, EncCache) {
        let widths = self.config.width_chain(w);
        let mut xs = vec![x.to_vec()];
        let mut pre = Vec::new();
        for (i, conv) in self.enc.iter().enumerate() {
            let p = conv.forward(&xs[i], widths[i]);
            pre.push(p.clone());
            xs.push(p.into_iter().map(relu).collect());
        }
        let t_len = *widths.last().unwrap();
        let z_chan = self.enc_proj.forward(xs.last().unwrap(), t_len);
        let latent = LatentSequence::new(
            transpose(&z_chan, self.config.latent_dim, t_len),
            t_len,
            self.config.latent_dim,
        );
        (latent, EncCache { xs, pre, widths })
    }

    /// Backpropagate a latent gradient through the encoder, accumulating
    /// parameter gradients; returns nothing (input grads are not needed).
    pub(crate) fn encoder_backward(&mut self, cache: &EncCache, dlatent: &[f64]) {
        let t_len = *cache.widths.last().unwrap();
        let dz_chan = transpose(dlatent, t_len, self.config.latent_dim);
        let mut dx = self
            .enc_proj
            .backward(cache.xs.last().unwrap(), t_len, &dz_chan);
        for i in (0..self.enc.len()).rev() {
            let dp: Vec<f64> = dx
                .iter()
                .zip(&cache.pre[i])
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect();
            dx = self.enc[i].backward(&cache.xs[i], cache.widths[i], &dp);
        }
    }

    pub(crate) fn decode_matrix(
        &self,
        z_q: &LatentSequence,
        target_w: usize,
    ) -> Result<(Vec<f64>, DecCache), RvqError> {
        let widths = self.config.width_chain(target_w);
        if *widths.last().unwrap() != z_q.t_len {
            return Err(RvqError::BadConfig(format!(
                "latent length {} cannot decode to width {target_w}",
                z_q.t_len
            )));
        }
        let z_chan = transpose(&z_q.values, z_q.t_len, z_q.dim);
        let mut h = self.dec_proj.forward(&z_chan, z_q.t_len);
        let mut pre = Vec::new();
        let mut acts = Vec::new();
        // dec[j] mirrors enc layer (n-1-j): maps widths[n-j] → widths[n-1-j].
        let n = self.dec.len();
        for (j, up) in self.dec.iter().enumerate() {
            pre.push(h.clone());
            let a: Vec<f64> = h.into_iter().map(relu).collect();
            let t_in = widths[n - j];
            let w_out = widths[n - 1 - j];
            h = up.forward(&a, t_in, w_out);
            acts.push(a);
        }
        Ok((
            h,
            DecCache {
                z_chan,
                pre,
                acts,
                widths,
            },
        ))
    }

    /// Backpropagate a reconstruction gradient through the decoder; returns
    /// the gradient with respect to the latent (row-major `t_len × dim`).
    pub(crate) fn decoder_backward(&mut self, cache: &DecCache, dx_hat: &[f64]) -> Vec<f64> {
        let n = self.dec.len();
        let mut dh = dx_hat.to_vec();
        for j in (0..n).rev() {
            let t_in = cache.widths[n - j];
            let w_out = cache.widths[n - 1 - j];
            let da = self.dec[j].backward(&cache.acts[j], t_in, w_out, &dh);
            dh = da
                .iter()
                .zip(&cache.pre[j])
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect();
        }
        let t_len = *cache.widths.last().unwrap();
        let dz_chan = self.dec_proj.backward(&cache.z_chan, t_len, &dh);
        transpose(&dz_chan, self.config.latent_dim, t_len)
    }

    /// Encode one recording to its latent sequence.
    pub fn encode(&self, rec: &EegRecording) -> Result<LatentSequence, RvqError> {
        let fw = rec.frame_width();
        if fw != self.config.input_width {
            return Err(RvqError::WidthMismatch {
                expected: self.config.input_width,
                got: fw,
            });
        }
        let ds = self.config.downsample();
        if rec.words < ds {
            return Err(RvqError::InputTooShort {
                width: rec.words,
                downsample: ds,
            });
        }
        let (x, w) = rec_to_matrix(rec);
        Ok(self.encode_matrix(&x, w).0)
    }

    /// Encode → quantize, the full recording-to-tokens path.
    pub fn tokenize(&self, rec: &EegRecording) -> Result<EegTokenSequence, RvqError> {
        let z_e = self.encode(rec)?;
        let (_, tokens) = quantize(&z_e, &self.stack)?;
        Ok(tokens)
    }

    /// Decode a (quantized) latent back to the `(input_width, W)` matrix.
    pub fn decode(&self, z_q: &LatentSequence, target_w: usize) -> Result<Vec<f64>, RvqError> {
        Ok(self.decode_matrix(z_q, target_w)?.0)
    }

    /// Full round trip; returns the reconstruction and its MSE against the
    /// input.
    pub fn reconstruct(&self, rec: &EegRecording) -> Result<(Vec<f64>, f64), RvqError> {
        let (x, w) = rec_to_matrix(rec);
        let z_e = self.encode(rec)?;
        let (z_q, _) = quantize(&z_e, &self.stack)?;
        let x_hat = self.decode(&z_q, w)?;
        let err = crate::linalg::mse(&x, &x_hat);
        Ok((x_hat, err))
    }

    /// All trainable tensors in a fixed order: encoder convs, encoder
    /// projection, decoder projection, decoder convs, then codebooks.
    pub fn collect_params(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for c in &mut self.enc {
            out.extend(c.collect_params());
        }
        out.extend(self.enc_proj.collect_params());
        out.extend(self.dec_proj.collect_params());
        for c in &mut self.dec {
            out.extend(c.collect_params());
        }
        for cb in &mut self.stack.codebooks {
            out.push(&mut cb.vectors);
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.collect_params().iter().map(|p| p.w.len()).sum()
    }

    /// Spectral norm of each linear stage (encoder convs then the projection)
    /// at input width `w`, measured by power iteration through the conv and
    /// its exact adjoint. ReLU is 1-Lipschitz, so the product bounds the
    /// encoder's end-to-end Lipschitz constant.
    pub fn encoder_operator_norms(&self, w: usize, iters: usize) -> Vec<f64> {
        let widths = self.config.width_chain(w);
        let mut norms = Vec::new();
        for (i, conv) in self.enc.iter().enumerate() {
            norms.push(operator_norm(conv, widths[i], iters, self.seed ^ i as u64));
        }
        norms.push(operator_norm(
            &self.enc_proj,
            *widths.last().unwrap(),
            iters,
            self.seed ^ 0xABCD,
        ));
        norms
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), RvqError> {
        let header = ContainerHeader {
            config_hash: config_hash.to_string(),
            seed: self.seed,
            body: TokenizerHeader {
                config: self.config.clone(),
                stages: self.stack.stages(),
                codebook_sizes: self.stack.sizes(),
                beta: self.stack.beta,
            },
        };
        let mut w = ArrayWriter::new();
        let mut me = self.clone();
        for p in me.collect_params() {
            w.push(&p.w);
        }
        write_container(path, TOKENIZER_KIND, &header, &w.finish())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, String), RvqError> {
        let (header, payload): (ContainerHeader<TokenizerHeader>, _) =
            read_container(path, TOKENIZER_KIND)?;
        let sizes = header.body.codebook_sizes.clone();
        if sizes.is_empty() {
            return Err(RvqError::BadConfig("checkpoint has no codebooks".into()));
        }
        let mut tok = Tokenizer::new(
            header.body.config,
            header.body.stages,
            sizes[0],
            header.body.beta,
            header.seed,
        )?;
        let mut r = ArrayReader::new(&payload);
        for p in tok.collect_params() {
            let arr = r.next()?;
            if arr.len() != p.w.len() {
                return Err(RvqError::BadConfig(format!(
                    "checkpoint tensor length {} does not match model ({})",
                    arr.len(),
                    p.w.len()
                )));
            }
            p.w.copy_from_slice(&arr);
        }
        if r.remaining() != 0 {
            return Err(RvqError::BadConfig(
                "checkpoint holds extra unread tensors".into(),
            ));
        }
        Ok((tok, header.config_hash))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenizerHeader {
    config: EncoderConfig,
    stages: usize,
    codebook_sizes: Vec<usize>,
    beta: f64,
}

/// Largest singular value of a conv layer (bias ignored) via power iteration
/// with the layer's exact adjoint.
fn operator_norm(conv: &Conv1d, w: usize, iters: usize, seed: u64) -> f64 {
    use rand::Rng;
    let mut rng = rng_from_seed(subseed(seed, "opnorm"));
    let mut adjoint = ConvTranspose1d::new(conv.c_out, conv.c_in, conv.k, conv.stride, &mut rng);
    adjoint.w.w.copy_from_slice(&conv.w.w);
    adjoint.b.w.iter_mut().for_each(|b| *b = 0.0);
    let mut bias_free = conv.clone();
    bias_free.b.w.iter_mut().for_each(|b| *b = 0.0);

    let t_out = conv_out_width(w, conv.stride);
    let mut v: Vec<f64> = (0..conv.c_in * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut norm = 0.0;
    for _ in 0..iters {
        let av = bias_free.forward(&v, w);
        let atav = adjoint.forward(&av, t_out, w);
        let n = crate::linalg::norm2(&atav);
        if n == 0.0 {
            return 0.0;
        }
        v = atav.iter().map(|x| x / n).collect();
        norm = crate::linalg::norm2(&bias_free.forward(&v, w));
    }
    norm
}
