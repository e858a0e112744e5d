//! Set-transformer that regresses per-state process-noise scale factors
//! from a window of inertial data and filter velocity.
//!
//! Pipeline: standardize -> 1-D convolutional patch embedding -> `b` set
//! attention blocks -> pooling by multihead attention -> set attention block
//! -> feed-forward -> linear head -> `max(0, x)` with zeros replaced by one.

pub mod checkpoint;
pub mod tape;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Convolution kernel length.
    pub kernel: usize,
    pub stride: usize,
    /// Time steps per pre-patch unit.
    pub patch: usize,
    /// Convolution filters, equal to the latent width.
    pub filters: usize,
    pub heads: usize,
    /// Hidden width of every feed-forward block.
    pub ffe: usize,
    /// Stacked set attention blocks in the encoder.
    pub blocks: usize,
    /// PMA seed vectors.
    pub seeds: usize,
    pub in_channels: usize,
    pub out_dim: usize,
    pub dropout: f64,
    /// Input window length in samples.
    pub window: usize,
    pub layer_norm_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            kernel: 5,
            stride: 1,
            patch: 1,
            filters: 32,
            heads: 2,
            ffe: 64,
            blocks: 2,
            seeds: 1,
            in_channels: 9,
            out_dim: 12,
            dropout: 0.1,
            window: 100,
            layer_norm_eps: 1e-9,
        }
    }
}

impl TransformerConfig {
    pub fn d(&self) -> usize {
        self.filters
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.heads == 0 || !self.filters.is_multiple_of(self.heads) {
            return bad("latent width must be divisible by the head count");
        }
        if self.seeds == 0 || self.kernel == 0 || self.stride == 0 || self.patch == 0 {
            return bad("kernel, stride, patch and seed count must be positive");
        }
        if self.window / self.patch < self.kernel {
            return bad("window shorter than the convolution kernel");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Number of tokens after the patch embedding.
    pub fn tokens(&self) -> usize {
        (self.window / self.patch - self.kernel) / self.stride + 1
    }
}

/// Parameter tensors in a fixed order, addressed through [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub names: Vec<String>,
    pub tensors: Vec<DMatrix<f64>>,
}

impl TransformerParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in &self.tensors {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for t in &mut self.tensors {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn zeros_like(&self) -> Vec<DMatrix<f64>> {
        self.tensors
            .iter()
            .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct MabIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    ffn: FfnIdx,
    ln2_g: usize,
    ln2_b: usize,
}

/// Positions of every parameter tensor.
#[derive(Debug, Clone)]
struct Layout {
    conv_w: usize,
    conv_b: usize,
    encoder: Vec<MabIdx>,
    pma_seed: usize,
    pma_ffn: FfnIdx,
    pma: MabIdx,
    dec_sab: MabIdx,
    dec_ffn: FfnIdx,
    head_w: usize,
    head_b: usize,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, bool)>,
}

impl Builder {
    /// `glorot` marks weights drawn from the uniform Xavier range.
    fn add(&mut self, name: String, r: usize, c: usize, glorot: bool) -> usize {
        self.names.push(name);
        self.shapes.push((r, c, glorot));
        self.names.len() - 1
    }

    fn ffn(&mut self, p: &str, d: usize, h: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{p}.w1"), d, h, true),
            b1: self.add(format!("{p}.b1"), 1, h, false),
            w2: self.add(format!("{p}.w2"), h, d, true),
            b2: self.add(format!("{p}.b2"), 1, d, false),
        }
    }

    fn mab(&mut self, p: &str, d: usize, ffe: usize) -> MabIdx {
        MabIdx {
            wq: self.add(format!("{p}.wq"), d, d, true),
            wk: self.add(format!("{p}.wk"), d, d, true),
            wv: self.add(format!("{p}.wv"), d, d, true),
            wo: self.add(format!("{p}.wo"), d, d, true),
            ln1_g: self.add(format!("{p}.ln1.gamma"), 1, d, false),
            ln1_b: self.add(format!("{p}.ln1.beta"), 1, d, false),
            ffn: self.ffn(&format!("{p}.ffn"), d, ffe),
            ln2_g: self.add(format!("{p}.ln2.gamma"), 1, d, false),
            ln2_b: self.add(format!("{p}.ln2.beta"), 1, d, false),
        }
    }
}

fn layout(cfg: &TransformerConfig) -> (Layout, Builder) {
    let d = cfg.d();
    let mut b = Builder {
        names: vec![],
        shapes: vec![],
    };
    let conv_w = b.add(
        "embed.w".into(),
        cfg.kernel * cfg.patch * cfg.in_channels,
        d,
        true,
    );
    let conv_b = b.add("embed.b".into(), 1, d, false);
    let encoder = (0..cfg.blocks)
        .map(|i| b.mab(&format!("enc{i}"), d, cfg.ffe))
        .collect();
    let pma_seed = b.add("pma.seed".into(), cfg.seeds, d, true);
    let pma_ffn = b.ffn("pma.ffn", d, cfg.ffe);
    let pma = b.mab("pma", d, cfg.ffe);
    let dec_sab = b.mab("dec.sab", d, cfg.ffe);
    let dec_ffn = b.ffn("dec.ffn", d, cfg.ffe);
    let head_w = b.add("head.w".into(), cfg.seeds * d, cfg.out_dim, true);
    let head_b = b.add("head.b".into(), 1, cfg.out_dim, false);
    (
        Layout {
            conv_w,
            conv_b,
            encoder,
            pma_seed,
            pma_ffn,
            pma,
            dec_sab,
            dec_ffn,
            head_w,
            head_b,
        },
        b,
    )
}

/// Per-channel affine standardization of the raw input window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            shift: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Mean and standard deviation of every channel over a set of windows.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a DMatrix<f64>>, channels: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for w in windows {
            for r in 0..w.nrows() {
                for c in 0..channels {
                    sum[c] += w[(r, c)];
                    sq[c] += w[(r, c)] * w[(r, c)];
                }
            }
            n += w.nrows();
        }
        if n == 0 {
            return Self::identity(channels);
        }
        let shift: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let sd = (q / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.shift[c]) / self.scale[c]
        })
    }
}

/// Network definition plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SetTransformer {
    pub config: TransformerConfig,
    pub params: TransformerParams,
    pub standardizer: Standardizer,
}

/// Result of a forward pass kept for the reverse pass.
pub struct Forward {
    pub tape: Tape,
    pub output: Var,
    pub param_vars: Vec<Var>,
    pub pooled: Var,
    pub encoded: Var,
}

impl Forward {
    pub fn output(&self) -> &DMatrix<f64> {
        self.tape.value(self.output)
    }

    /// Parameter gradients for an output adjoint `seed` (`1 x out_dim`).
    pub fn backward(&self, seed: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let g = self.tape.backward(self.output, seed);
        self.param_vars
            .iter()
            .map(|v| {
                g.get(*v).cloned().unwrap_or_else(|| {
                    DMatrix::zeros(self.tape.value(*v).nrows(), self.tape.value(*v).ncols())
                })
            })
            .collect()
    }
}

/// Initial gain of the output head weights.
pub const HEAD_INIT_GAIN: f64 = 0.01;

/// Dropout RNG; `None` runs in inference mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

impl SetTransformer {
    /// Xavier-uniform weights, zero biases, unit LayerNorm scales. The head
    /// starts near the identity scale: bias one, weights shrunk by
    /// [`HEAD_INIT_GAIN`].
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, b) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .names
            .iter()
            .zip(&b.shapes)
            .map(|(name, &(r, c, glorot))| {
                if glorot {
                    let gain = if name == "head.w" {
                        HEAD_INIT_GAIN
                    } else {
                        1.0
                    };
                    let a = gain * (6.0 / (r + c) as f64).sqrt();
                    DMatrix::from_fn(r, c, |_, _| rng.random_range(-a..a))
                } else if name.ends_with("gamma") || name == "head.b" {
                    DMatrix::from_element(r, c, 1.0)
                } else {
                    DMatrix::zeros(r, c)
                }
            })
            .collect();
        Ok(Self {
            standardizer: Standardizer::identity(config.in_channels),
            params: TransformerParams {
                names: b.names,
                tensors,
            },
            config,
        })
    }

    /// Network whose output is exactly one for every input: the head
    /// weights and bias are zero, so the final rule maps every entry to 1.
    pub fn all_ones(config: TransformerConfig, seed: u64) -> Result<Self> {
        let mut net = Self::new(config, seed)?;
        let (l, _) = layout(&config);
        net.params.tensors[l.head_w].fill(0.0);
        net.params.tensors[l.head_b].fill(0.0);
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Scale factors for one raw input window (`window x in_channels`).
    pub fn predict(&self, window: &DMatrix<f64>) -> Result<Vec<f64>> {
        let f = self.forward(window, None)?;
        let out = f.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out.iter().copied().collect())
    }

    pub fn forward(&self, window: &DMatrix<f64>, mut rng: DropoutRng<'_>) -> Result<Forward> {
        let cfg = &self.config;
        if window.ncols() != cfg.in_channels || window.nrows() != cfg.window {
            return Err(Error::ShapeMismatch(format!(
                "input window {}x{}, expected {}x{}",
                window.nrows(),
                window.ncols(),
                cfg.window,
                cfg.in_channels
            )));
        }
        let (l, _) = layout(cfg);
        let mut t = Tape::new();
        let p: Vec<Var> = self
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();

        let x = t.leaf(patchify(&self.standardizer.apply(window), cfg.patch));
        let z = patch_embed(&mut t, x, p[l.conv_w], p[l.conv_b], cfg.kernel, cfg.stride);
        let mut z = z;
        for m in &l.encoder {
            z = sab(&mut t, &p, m, z, cfg, rng.as_deref_mut());
        }
        let encoded = z;
        let pooled = pma(&mut t, &p, &l, z, cfg, rng.as_deref_mut());
        let s = sab(&mut t, &p, &l.dec_sab, pooled, cfg, rng.as_deref_mut());
        let s = ffn(&mut t, &p, &l.dec_ffn, s, cfg.dropout, rng);
        let flat = t.flatten_rows(s);
        let y = t.matmul(flat, p[l.head_w]);
        let y = t.add_row(y, p[l.head_b]);
        let y = t.relu(y);
        let output = t.positive_or_one(y);
        Ok(Forward {
            tape: t,
            output,
            param_vars: p,
            pooled,
            encoded,
        })
    }
}

/// Group `patch` consecutive rows into one row (`L/patch x patch*c`).
pub fn patchify(x: &DMatrix<f64>, patch: usize) -> DMatrix<f64> {
    if patch == 1 {
        return x.clone();
    }
    let (l, c) = x.shape();
    let n = l / patch;
    DMatrix::from_fn(n, patch * c, |i, j| x[(i * patch + j / c, j % c)])
}

/// One-dimensional convolution over time realized as unfold + matmul.
pub fn patch_embed(t: &mut Tape, x: Var, w: Var, b: Var, kernel: usize, stride: usize) -> Var {
    let cols = t.im2col(x, kernel, stride);
    let y = t.matmul(cols, w);
    t.add_row(y, b)
}

/// `softmax(Q K^T / sqrt(d_q)) V`.
pub fn attention(t: &mut Tape, q: Var, k: Var, v: Var) -> Var {
    let dq = t.value(q).ncols() as f64;
    let s = t.matmul_bt(q, k);
    let s = t.scale(s, 1.0 / dq.sqrt());
    let a = t.softmax_rows(s);
    t.matmul(a, v)
}

/// Heads are column blocks of the shared projections, concatenated and
/// mixed by `W^O`.
pub fn multihead(t: &mut Tape, q: Var, k: Var, v: Var, w: [Var; 4], heads: usize) -> Var {
    let qp = t.matmul(q, w[0]);
    let kp = t.matmul(k, w[1]);
    let vp = t.matmul(v, w[2]);
    let d = t.value(qp).ncols();
    let dh = d / heads;
    let outs: Vec<Var> = (0..heads)
        .map(|j| {
            let qj = t.slice_cols(qp, j * dh, dh);
            let kj = t.slice_cols(kp, j * dh, dh);
            let vj = t.slice_cols(vp, j * dh, dh);
            attention(t, qj, kj, vj)
        })
        .collect();
    let cat = if heads == 1 {
        outs[0]
    } else {
        t.concat_cols(&outs)
    };
    t.matmul(cat, w[3])
}

fn ffn(t: &mut Tape, p: &[Var], f: &FfnIdx, x: Var, dropout: f64, rng: DropoutRng<'_>) -> Var {
    let h = t.matmul(x, p[f.w1]);
    let h = t.add_row(h, p[f.b1]);
    let mut h = t.relu(h);
    if let Some(rng) = rng {
        if dropout > 0.0 {
            let keep = 1.0 - dropout;
            let v = t.value(h);
            let mask = DMatrix::from_fn(v.nrows(), v.ncols(), |_, _| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            h = t.mask(h, mask);
        }
    }
    let y = t.matmul(h, p[f.w2]);
    t.add_row(y, p[f.b2])
}

fn mab(
    t: &mut Tape,
    p: &[Var],
    m: &MabIdx,
    x: Var,
    y: Var,
    cfg: &TransformerConfig,
    rng: DropoutRng<'_>,
) -> Var {
    let mh = multihead(t, x, y, y, [p[m.wq], p[m.wk], p[m.wv], p[m.wo]], cfg.heads);
    let r = t.add(x, mh);
    let l = t.layer_norm_rows(r, p[m.ln1_g], p[m.ln1_b], cfg.layer_norm_eps);
    let f = ffn(t, p, &m.ffn, l, cfg.dropout, rng);
    let r = t.add(l, f);
    t.layer_norm_rows(r, p[m.ln2_g], p[m.ln2_b], cfg.layer_norm_eps)
}

fn sab(
    t: &mut Tape,
    p: &[Var],
    m: &MabIdx,
    x: Var,
    cfg: &TransformerConfig,
    rng: DropoutRng<'_>,
) -> Var {
    mab(t, p, m, x, x, cfg, rng)
}

fn pma(
    t: &mut Tape,
    p: &[Var],
    l: &Layout,
    z: Var,
    cfg: &TransformerConfig,
    mut rng: DropoutRng<'_>,
) -> Var {
    let fz = ffn(t, p, &l.pma_ffn, z, cfg.dropout, rng.as_deref_mut());
    mab(t, p, &l.pma, p[l.pma_seed], fz, cfg, rng)
}

/// Stand-alone block evaluators over fresh tapes, for property tests.
pub mod blocks {
    use super::*;

    /// Encoder output for already-embedded tokens.
    pub fn encode(net: &SetTransformer, tokens: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, _) = layout(&net.config);
        let mut t = Tape::new();
        let p: Vec<Var> = net
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();
        let mut z = t.leaf(tokens.clone());
        for m in &l.encoder {
            z = sab(&mut t, &p, m, z, &net.config, None);
        }
        t.value(z).clone()
    }

    /// First encoder block evaluated as `MAB(X, Y)`.
    pub fn mab_first(net: &SetTransformer, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, _) = layout(&net.config);
        let mut t = Tape::new();
        let p: Vec<Var> = net
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();
        let xv = t.leaf(x.clone());
        let yv = if x == y { xv } else { t.leaf(y.clone()) };
        let out = mab(&mut t, &p, &l.encoder[0], xv, yv, &net.config, None);
        t.value(out).clone()
    }

    /// First encoder block evaluated as `SAB(X)`.
    pub fn sab_first(net: &SetTransformer, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, _) = layout(&net.config);
        let mut t = Tape::new();
        let p: Vec<Var> = net
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();
        let xv = t.leaf(x.clone());
        let out = sab(&mut t, &p, &l.encoder[0], xv, &net.config, None);
        t.value(out).clone()
    }

    /// Pooled `k x d` representation of encoder tokens.
    pub fn pool(net: &SetTransformer, tokens: &DMatrix<f64>) -> DMatrix<f64> {
        let (l, _) = layout(&net.config);
        let mut t = Tape::new();
        let p: Vec<Var> = net
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();
        let z = t.leaf(tokens.clone());
        let out = pma(&mut t, &p, &l, z, &net.config, None);
        t.value(out).clone()
    }

    /// FFN of the first encoder block, optionally in training mode.
    pub fn ffn_first(net: &SetTransformer, x: &DMatrix<f64>, rng: DropoutRng<'_>) -> DMatrix<f64> {
        let (l, _) = layout(&net.config);
        let mut t = Tape::new();
        let p: Vec<Var> = net
            .params
            .tensors
            .iter()
            .map(|m| t.leaf(m.clone()))
            .collect();
        let xv = t.leaf(x.clone());
        let out = ffn(&mut t, &p, &l.encoder[0].ffn, xv, net.config.dropout, rng);
        t.value(out).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(100, 9, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_shapes() {
        let cfg = TransformerConfig::default();
        assert_eq!(cfg.tokens(), 96);
        let net = SetTransformer::new(cfg, 1).unwrap();
        let f = net.forward(&window(2), None).unwrap();
        assert_eq!(f.tape.value(f.encoded).shape(), (96, 32));
        assert_eq!(f.tape.value(f.pooled).shape(), (1, 32));
        assert_eq!(f.output().shape(), (1, 12));
        assert!(f.output().iter().all(|v| *v > 0.0));
        let count = net.parameter_count();
        assert!((40_000..50_000).contains(&count), "{count}");
    }

    #[test]
    fn config_validation() {
        let mut c = TransformerConfig::default();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = TransformerConfig::default();
        c.window = 4;
        assert!(c.validate().is_err());
        let mut c = TransformerConfig::default();
        c.stride = 5;
        assert_eq!(c.tokens(), 20);
    }

    #[test]
    fn wrong_window_shape_rejected() {
        let net = SetTransformer::new(TransformerConfig::default(), 1).unwrap();
        assert!(matches!(
            net.predict(&DMatrix::zeros(50, 9)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn all_ones_network() {
        let net = SetTransformer::all_ones(TransformerConfig::default(), 4).unwrap();
        for s in 0..3 {
            assert_eq!(net.predict(&window(s)).unwrap(), vec![1.0; 12]);
        }
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let net = SetTransformer::new(TransformerConfig::default(), 9).unwrap();
        let w = window(5);
        assert_eq!(net.predict(&w).unwrap(), net.predict(&w).unwrap());
        let x = DMatrix::from_fn(10, 32, |i, j| ((i * 3 + j) % 7) as f64 - 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = blocks::ffn_first(&net, &x, Some(&mut rng));
        let b = blocks::ffn_first(&net, &x, None);
        assert_ne!(a, b);
    }

    #[test]
    fn standardizer_fit() {
        let w = DMatrix::from_fn(4, 2, |i, j| if j == 0 { i as f64 } else { 5.0 });
        let s = Standardizer::fit([&w], 2);
        assert_eq!(s.shift, vec![1.5, 5.0]);
        assert!((s.scale[0] - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.scale[1], 1.0);
        let a = s.apply(&w);
        assert!(a.column(0).sum().abs() < 1e-15);
    }

    #[test]
    fn patchify_groups_rows() {
        let x = DMatrix::from_fn(4, 2, |i, j| (10 * i + j) as f64);
        let p = patchify(&x, 2);
        assert_eq!(p.shape(), (2, 4));
        assert_eq!(
            p.row(1).iter().copied().collect::<Vec<_>>(),
            vec![20.0, 21.0, 30.0, 31.0]
        );
    }
}
