//! Teacher and student sequence classifiers: per-mask CNN embedding,
//! GRU encoder-decoder over the mask sequence, residual multi-head
//! attention on the teacher's decoded representations, and a shared
//! per-slot classification head emitting a C×(J+1) probability matrix.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    apply_bn_updates, batch_norm, conv2d, gru_step, init_batch_norm, init_conv2d, init_gru,
    init_layer_norm, init_linear, init_mha, layer_norm, linear, mha, BnUpdate,
};
use crate::nn::{Binder, Graph, ParamStore, Var};
use crate::preprocess::MotionMaskSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

/// One embedding convolution: output channels, square kernel, stride.
/// Padding is always kernel/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn s2(out_channels: usize) -> Self {
        ConvSpec { out_channels, kernel: 3, stride: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub role: Role,
    /// Mask dimensions (d_H', d_W').
    pub input_dims: (usize, usize),
    /// Number of input masks L_in.
    pub window: usize,
    /// Future slots J; the model emits J+1 predictions.
    pub horizon: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub gru_layers: usize,
    pub mha_heads: usize,
    pub cnn_spec: Vec<ConvSpec>,
    /// Student-only adaptive max-pool target grid.
    pub pool_grid: (usize, usize),
    pub head_hidden: usize,
}

impl ModelConfig {
    /// Teacher over the desk-scale synthetic scene (64×64 motion
    /// masks).
    pub fn desk_teacher(window: usize, horizon: usize, n_classes: usize) -> Self {
        ModelConfig {
            role: Role::Teacher,
            input_dims: (64, 64),
            window,
            horizon,
            n_classes,
            feature_dim: 64,
            hidden_dim: 64,
            gru_layers: 2,
            mha_heads: 8,
            cnn_spec: vec![
                ConvSpec::s2(8),
                ConvSpec::s2(16),
                ConvSpec::s2(32),
                ConvSpec::s2(32),
                ConvSpec::s2(32),
            ],
            pool_grid: (4, 4),
            head_hidden: 128,
        }
    }

    /// Student over the desk-scale synthetic scene (64×64 motion
    /// masks).
    pub fn desk_student(window: usize, horizon: usize, n_classes: usize) -> Self {
        ModelConfig {
            role: Role::Student,
            input_dims: (64, 64),
            window,
            horizon,
            n_classes,
            feature_dim: 64,
            hidden_dim: 64,
            gru_layers: 1,
            mha_heads: 0,
            cnn_spec: vec![ConvSpec::s2(8), ConvSpec::s2(16), ConvSpec::s2(16)],
            pool_grid: (4, 4),
            head_hidden: 128,
        }
    }

    /// Full-scale teacher: 54×96 masks, 64 beams, widths sized for
    /// roughly 1.9M trainable parameters.
    pub fn paper_teacher() -> Self {
        ModelConfig {
            role: Role::Teacher,
            input_dims: (54, 96),
            window: 8,
            horizon: 6,
            n_classes: 64,
            feature_dim: 64,
            hidden_dim: 64,
            gru_layers: 2,
            mha_heads: 8,
            cnn_spec: vec![
                ConvSpec::s2(32),
                ConvSpec::s2(64),
                ConvSpec::s2(128),
                ConvSpec::s2(256),
                ConvSpec::s2(512),
            ],
            pool_grid: (4, 4),
            head_hidden: 128,
        }
    }

    /// Full-scale student: under a tenth of the teacher's parameters.
    pub fn paper_student(window: usize) -> Self {
        ModelConfig {
            role: Role::Student,
            input_dims: (54, 96),
            window,
            horizon: 6,
            n_classes: 64,
            feature_dim: 64,
            hidden_dim: 64,
            gru_layers: 1,
            mha_heads: 0,
            cnn_spec: vec![ConvSpec::s2(16), ConvSpec::s2(32), ConvSpec::s2(64)],
            pool_grid: (4, 4),
            head_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must contain at least one mask".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two beam classes".into()));
        }
        if self.cnn_spec.is_empty() {
            return Err(Error::Config("embedding needs at least one convolution".into()));
        }
        match self.role {
            Role::Teacher => {
                if self.mha_heads == 0 {
                    return Err(Error::Config("teacher requires attention heads".into()));
                }
                if self.feature_dim % self.mha_heads != 0 {
                    return Err(Error::Config(format!(
                        "{} heads do not divide feature size {}",
                        self.mha_heads, self.feature_dim
                    )));
                }
            }
            Role::Student => {
                if self.mha_heads != 0 {
                    return Err(Error::Config("student carries no attention module".into()));
                }
            }
        }
        if self.gru_layers == 0 {
            return Err(Error::Config("need at least one recurrent layer".into()));
        }
        let (h, w) = self.embed_output_dims();
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "convolution stack collapses {}x{} input to nothing",
                self.input_dims.0, self.input_dims.1
            )));
        }
        if self.role == Role::Student {
            let (ph, pw) = self.pool_grid;
            if ph == 0 || pw == 0 || ph > h || pw > w {
                return Err(Error::Config(format!(
                    "pool grid {}x{} incompatible with {}x{} convolution output",
                    ph, pw, h, w
                )));
            }
        }
        Ok(())
    }

    /// Spatial dims after the convolution stack.
    fn embed_output_dims(&self) -> (usize, usize) {
        let (mut h, mut w) = self.input_dims;
        for conv in &self.cnn_spec {
            let pad = conv.kernel / 2;
            if h + 2 * pad < conv.kernel || w + 2 * pad < conv.kernel {
                return (0, 0);
            }
            h = (h + 2 * pad - conv.kernel) / conv.stride + 1;
            w = (w + 2 * pad - conv.kernel) / conv.stride + 1;
        }
        (h, w)
    }

    /// Flattened feature size entering the embedding's linear map.
    fn flatten_dim(&self) -> usize {
        let last = self.cnn_spec.last().unwrap().out_channels;
        match self.role {
            Role::Teacher => {
                let (h, w) = self.embed_output_dims();
                last * h * w
            }
            Role::Student => last * self.pool_grid.0 * self.pool_grid.1,
        }
    }

    /// Digest of the architecture-defining fields, stamped into
    /// checkpoints to reject loads into a mismatched configuration.
    pub fn digest(&self) -> String {
        use sha2::Digest;
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = sha2::Sha256::digest(json.as_bytes());
        hex_string(&hash[..8])
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A configured model with its parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from a seeded stream, registered in a
    /// fixed order so initialization is reproducible.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let mut in_ch = 1usize;
        for (i, conv) in config.cnn_spec.iter().enumerate() {
            init_conv2d(&mut params, &format!("embed.conv{i}"), in_ch, conv.out_channels, conv.kernel, &mut rng);
            if config.role == Role::Teacher {
                init_batch_norm(&mut params, &format!("embed.bn{i}"), conv.out_channels);
            }
            in_ch = conv.out_channels;
        }
        init_linear(&mut params, "embed.fc", config.flatten_dim(), config.feature_dim, &mut rng);

        for l in 0..config.gru_layers {
            let in_dim = if l == 0 { config.feature_dim } else { config.hidden_dim };
            init_gru(&mut params, &format!("enc.l{l}"), in_dim, config.hidden_dim, &mut rng);
        }
        for l in 0..config.gru_layers {
            let in_dim = if l == 0 { config.feature_dim } else { config.hidden_dim };
            init_gru(&mut params, &format!("dec.l{l}"), in_dim, config.hidden_dim, &mut rng);
        }

        if config.role == Role::Teacher {
            init_mha(&mut params, "att", config.feature_dim, &mut rng);
            init_layer_norm(&mut params, "att.ln", config.feature_dim);
        }

        init_linear(&mut params, "head.fc1", config.feature_dim, config.head_hidden, &mut rng);
        init_linear(&mut params, "head.fc2", config.head_hidden, config.n_classes, &mut rng);

        Ok(Model { config, params })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_trainable()
    }

    /// Evaluation-mode forward for one sample. Returns the logit and
    /// probability matrices, both C×(J+1).
    pub fn forward_sample(&self, masks: &MotionMaskSequence) -> Result<(Array2<f64>, Array2<f64>)> {
        let input = masks_to_batch(std::slice::from_ref(masks), &self.config)?;
        let mut g = Graph::new();
        let mut binder = Binder::new(&self.params);
        let x = g.constant(input);
        let logits = forward_rows(&mut g, &mut binder, &self.config, x, 1, None);
        let rows = g.value(logits);
        let slots = self.config.horizon + 1;
        let c = self.config.n_classes;
        let mut logit_matrix = Array2::<f64>::zeros((c, slots));
        let mut prob_matrix = Array2::<f64>::zeros((c, slots));
        for j in 0..slots {
            let column: Vec<f64> = (0..c).map(|k| rows[[j, k]]).collect();
            let probs = crate::losses::softmax_temperature(&column, 1.0)?;
            for k in 0..c {
                logit_matrix[(k, j)] = column[k];
                prob_matrix[(k, j)] = probs[k];
            }
        }
        Ok((logit_matrix, prob_matrix))
    }

    /// Evaluation-mode forward over a batch of mask sequences.
    /// Returns slot-major logit rows `[(J+1)·B, C]` (row j·B + b).
    pub fn forward_batch(&self, masks: &[MotionMaskSequence]) -> Result<ArrayD<f64>> {
        let input = masks_to_batch(masks, &self.config)?;
        let mut g = Graph::new();
        let mut binder = Binder::new(&self.params);
        let x = g.constant(input);
        let logits = forward_rows(&mut g, &mut binder, &self.config, x, masks.len(), None);
        Ok(g.value(logits).clone())
    }
}

/// Stack mask sequences into the `[B, L_in, H, W]` input tensor,
/// keeping only each sequence's most recent `L_in` masks (a student
/// consumes the suffix of a teacher-length window).
pub fn masks_to_batch(sequences: &[MotionMaskSequence], config: &ModelConfig) -> Result<ArrayD<f64>> {
    let (h, w) = config.input_dims;
    let l = config.window;
    let b = sequences.len();
    if b == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let mut out = ArrayD::zeros(IxDyn(&[b, l, h, w]));
    for (bi, seq) in sequences.iter().enumerate() {
        if seq.len() < l {
            return Err(Error::Usage(format!(
                "sample provides {} masks but the model consumes {l}",
                seq.len()
            )));
        }
        let skip = seq.len() - l;
        for (li, mask) in seq.masks[skip..].iter().enumerate() {
            if mask.dim() != (h, w) {
                return Err(Error::Usage(format!(
                    "mask is {}x{} but the model expects {h}x{w}",
                    mask.dim().0,
                    mask.dim().1
                )));
            }
            for ((i, j), &v) in mask.indexed_iter() {
                out[[bi, li, i, j]] = v;
            }
        }
    }
    Ok(out)
}

/// CNN embedding applied independently per mask: input `[B, L, H, W]`,
/// output `[B·L, D]` with sample-major rows (row b·L + l).
pub fn embed_sequence(
    g: &mut Graph,
    binder: &mut Binder,
    config: &ModelConfig,
    input: Var,
    mut bn_updates: Option<&mut Vec<BnUpdate>>,
) -> Var {
    let shape = g.value(input).shape().to_vec();
    assert_eq!(shape.len(), 4, "embedding expects [B, L, H, W]");
    let (b, l) = (shape[0], shape[1]);
    let mut x = g.reshape(input, &[b * l, 1, shape[2], shape[3]]);
    for (i, conv) in config.cnn_spec.iter().enumerate() {
        x = conv2d(g, binder, &format!("embed.conv{i}"), x, conv.stride, conv.kernel / 2);
        if config.role == Role::Teacher {
            x = batch_norm(g, binder, &format!("embed.bn{i}"), x, bn_updates.as_deref_mut());
        }
        x = g.relu(x);
    }
    if config.role == Role::Student {
        let (ph, pw) = config.pool_grid;
        x = g.adaptive_max_pool2d(x, ph, pw);
    }
    let flat = config.flatten_dim();
    let x = g.reshape(x, &[b * l, flat]);
    linear(g, binder, "embed.fc", x)
}

/// Encoder-decoder pass: the encoder consumes the embedded masks
/// chronologically, its final hidden stack seeds the decoder, the
/// decoder's first input is the newest embedding and afterwards its
/// own previous output. Output `[(J+1)·B, D']`, slot-major rows.
pub fn seq2seq_decode(
    g: &mut Graph,
    binder: &mut Binder,
    config: &ModelConfig,
    features: Var,
    batch: usize,
) -> Var {
    let l = config.window;
    let hd = config.hidden_dim;
    let zeros = g.constant(ArrayD::zeros(IxDyn(&[batch, hd])));
    let mut hidden: Vec<Var> = vec![zeros; config.gru_layers];
    let step_rows = |t: usize| -> Vec<usize> { (0..batch).map(|bi| bi * l + t).collect() };

    let mut last_input = None;
    for t in 0..l {
        let mut x = g.gather_rows(features, &step_rows(t));
        if t == l - 1 {
            last_input = Some(x);
        }
        for (layer, h) in hidden.iter_mut().enumerate() {
            let next = gru_step(g, binder, &format!("enc.l{layer}"), x, *h);
            *h = next;
            x = next;
        }
    }

    let mut dec_hidden = hidden;
    let mut dec_input = last_input.expect("window is nonempty by config validation");
    let mut outputs = Vec::with_capacity(config.horizon + 1);
    for _ in 0..=config.horizon {
        let mut x = dec_input;
        for (layer, h) in dec_hidden.iter_mut().enumerate() {
            let next = gru_step(g, binder, &format!("dec.l{layer}"), x, *h);
            *h = next;
            x = next;
        }
        outputs.push(x);
        dec_input = x;
    }
    g.concat_rows(&outputs)
}

/// Teacher-only residual attention over the J+1 decoded slots; the
/// student passes through unchanged.
pub fn attention_refine(
    g: &mut Graph,
    binder: &mut Binder,
    config: &ModelConfig,
    reps: Var,
    batch: usize,
) -> Var {
    if config.role == Role::Student {
        return reps;
    }
    let refined = mha(g, binder, "att", reps, config.horizon + 1, batch, config.mha_heads);
    let summed = g.add(reps, refined);
    layer_norm(g, binder, "att.ln", summed)
}

/// Shared classification head per slot: `[(J+1)·B, D']` representations
/// to `[(J+1)·B, C]` logits.
pub fn head_logits(g: &mut Graph, binder: &mut Binder, _config: &ModelConfig, reps: Var) -> Var {
    let x = linear(g, binder, "head.fc1", reps);
    let x = g.relu(x);
    linear(g, binder, "head.fc2", x)
}

/// Full forward: `[B, L, H, W]` masks to slot-major `[(J+1)·B, C]`
/// logit rows. `bn_updates = Some(..)` selects training-mode batch
/// normalization; `None` uses the stored running statistics.
pub fn forward_rows(
    g: &mut Graph,
    binder: &mut Binder,
    config: &ModelConfig,
    input: Var,
    batch: usize,
    bn_updates: Option<&mut Vec<BnUpdate>>,
) -> Var {
    let features = embed_sequence(g, binder, config, input, bn_updates);
    let reps = seq2seq_decode(g, binder, config, features, batch);
    let refined = attention_refine(g, binder, config, reps, batch);
    head_logits(g, binder, config, refined)
}

/// Run one training-mode forward and fold the recorded batch-norm
/// statistics into the store afterwards.
pub fn commit_bn_updates(params: &mut ParamStore, updates: Vec<BnUpdate>) {
    apply_bn_updates(params, &updates);
}

/// Per-column argmax of a probability matrix, ties toward the lowest
/// index.
pub fn predicted_beams(probabilities: &Array2<f64>) -> Vec<usize> {
    let (c, slots) = probabilities.dim();
    (0..slots)
        .map(|j| {
            let mut best = 0usize;
            for k in 1..c {
                if probabilities[(k, j)] > probabilities[(best, j)] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Beam indices ranked by descending logit, stable ties by index.
pub fn rank_beams(column: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[b].partial_cmp(&column[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Analytic multiply-accumulate count for one forward pass, used to
/// compare architectures.
pub fn count_macs(config: &ModelConfig) -> u64 {
    let (mut h, mut w) = config.input_dims;
    let mut in_ch = 1usize;
    let mut macs: u64 = 0;
    for conv in &config.cnn_spec {
        let pad = conv.kernel / 2;
        h = (h + 2 * pad - conv.kernel) / conv.stride + 1;
        w = (w + 2 * pad - conv.kernel) / conv.stride + 1;
        macs += (conv.out_channels * h * w * in_ch * conv.kernel * conv.kernel) as u64;
        in_ch = conv.out_channels;
    }
    macs += (config.flatten_dim() * config.feature_dim) as u64;
    macs *= config.window as u64;

    let d = config.feature_dim as u64;
    let hd = config.hidden_dim as u64;
    let gru_cell = 3 * (d * hd + hd * hd);
    macs += gru_cell * config.gru_layers as u64 * config.window as u64;
    let slots = (config.horizon + 1) as u64;
    macs += gru_cell * config.gru_layers as u64 * slots;
    if config.role == Role::Teacher {
        macs += 4 * d * d * slots + 2 * slots * slots * d;
    }
    macs += slots * (d * config.head_hidden as u64 + config.head_hidden as u64 * config.n_classes as u64);
    macs
}
