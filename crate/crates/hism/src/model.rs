//! HISM-lite network: conv encoder over the stacked raster, a recurrent or
//! self-attention branch over the temporal vectors, and a fused
//! fully-connected head with logistic output.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::inputs::{StackedInput, TemporalInput, DEFAULT_IMAGE_SIZE};
use crate::HismError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Lstm,
    TranEnc,
    TranEncTask,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lstm, Variant::TranEnc, Variant::TranEncTask];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::TranEnc => "tran_enc",
            Variant::TranEncTask => "tran_enc_task",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Lstm => 0,
            Variant::TranEnc => 1,
            Variant::TranEncTask => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    /// Features per time step: highlight only, or highlight and state.
    pub fn input_dim(self) -> usize {
        match self {
            Variant::TranEncTask => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = HismError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lstm" => Ok(Variant::Lstm),
            "tran_enc" | "tranenc" => Ok(Variant::TranEnc),
            "tran_enc_task" | "tranenc_task" => Ok(Variant::TranEncTask),
            _ => Err(HismError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub fusion: [usize; 2],
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::TranEncTask,
            image_size: DEFAULT_IMAGE_SIZE,
            in_channels: 4,
            conv_channels: [8, 16, 32],
            seq_len: 60,
            hidden: 32,
            heads: 4,
            layers: 2,
            ffn: 64,
            fusion: [128, 64],
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), HismError> {
        if self.image_size < 8 || self.in_channels == 0 || self.seq_len == 0 || self.hidden == 0 {
            return Err(HismError::Shape("degenerate model dimensions".into()));
        }
        if self.variant != Variant::Lstm && !self.hidden.is_multiple_of(self.heads) {
            return Err(HismError::Shape("hidden size not divisible by heads".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HismError::Shape("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Uniform on `±sqrt(6 / fan_in) * gain`.
    He { fan_in: usize, gain: f64 },
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Uniform(f64),
    /// Zero except ones on the forget-gate block.
    ForgetBias(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

fn specs(cfg: &ModelConfig) -> Vec<(ParamSpec, Init)> {
    let mut out = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((ParamSpec { name, shape }, init));
    let mut cin = cfg.in_channels;
    for (i, &co) in cfg.conv_channels.iter().enumerate() {
        add(format!("conv{i}.w"), vec![co, cin, 3, 3], Init::He { fan_in: cin * 9, gain: 1.0 });
        add(format!("conv{i}.b"), vec![co], Init::Zeros);
        cin = co;
    }
    let h = cfg.hidden;
    let din = cfg.variant.input_dim();
    match cfg.variant {
        Variant::Lstm => {
            let r = 1.0 / (h as f64).sqrt();
            add("lstm.wx".into(), vec![din, 4 * h], Init::Uniform(r));
            add("lstm.wh".into(), vec![h, 4 * h], Init::Uniform(r));
            add("lstm.b".into(), vec![4 * h], Init::ForgetBias(h));
        }
        Variant::TranEnc | Variant::TranEncTask => {
            add("embed.w".into(), vec![din, h], Init::Glorot { fan_in: din, fan_out: h });
            add("embed.b".into(), vec![h], Init::Zeros);
            for l in 0..cfg.layers {
                add(format!("enc{l}.qkv.w"), vec![h, 3 * h], Init::Glorot { fan_in: h, fan_out: 3 * h });
                add(format!("enc{l}.qkv.b"), vec![3 * h], Init::Zeros);
                add(format!("enc{l}.out.w"), vec![h, h], Init::Glorot { fan_in: h, fan_out: h });
                add(format!("enc{l}.out.b"), vec![h], Init::Zeros);
                add(format!("enc{l}.ln1.g"), vec![h], Init::Ones);
                add(format!("enc{l}.ln1.b"), vec![h], Init::Zeros);
                add(format!("enc{l}.ff1.w"), vec![h, cfg.ffn], Init::He { fan_in: h, gain: 1.0 });
                add(format!("enc{l}.ff1.b"), vec![cfg.ffn], Init::Zeros);
                add(format!("enc{l}.ff2.w"), vec![cfg.ffn, h], Init::Glorot { fan_in: cfg.ffn, fan_out: h });
                add(format!("enc{l}.ff2.b"), vec![h], Init::Zeros);
                add(format!("enc{l}.ln2.g"), vec![h], Init::Ones);
                add(format!("enc{l}.ln2.b"), vec![h], Init::Zeros);
            }
        }
    }
    let fused = cfg.conv_channels[2] + h;
    add("fc0.w".into(), vec![fused, cfg.fusion[0]], Init::He { fan_in: fused, gain: 1.0 });
    add("fc0.b".into(), vec![cfg.fusion[0]], Init::Zeros);
    add("fc1.w".into(), vec![cfg.fusion[0], cfg.fusion[1]], Init::He { fan_in: cfg.fusion[0], gain: 1.0 });
    add("fc1.b".into(), vec![cfg.fusion[1]], Init::Zeros);
    // Small output weights keep an untrained model near the logistic midpoint.
    add("out.w".into(), vec![cfg.fusion[1], 1], Init::He { fan_in: cfg.fusion[1], gain: 0.1 });
    add("out.b".into(), vec![1], Init::Zeros);
    out
}

/// Dropout switch for a forward pass.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// One prediction request inside a batch: index of its raster in the shared
/// image list plus its temporal vectors.
#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    pub image: usize,
    pub temporal: &'a TemporalInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HismModel {
    pub config: ModelConfig,
    pub specs: Vec<ParamSpec>,
    pub params: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl HismModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, HismError> {
        config.validate()?;
        let mut sp = Vec::new();
        let mut params = Vec::new();
        for (spec, init) in specs(&config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::He { fan_in, gain } => {
                    let r = (6.0 / fan_in as f64).sqrt() * gain;
                    (0..n).map(|_| rng.random_range(-r..r)).collect()
                }
                Init::Glorot { fan_in, fan_out } => {
                    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-r..r)).collect()
                }
                Init::Uniform(r) => (0..n).map(|_| rng.random_range(-r..r)).collect(),
                Init::ForgetBias(h) => (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect(),
            };
            params.push(Tensor::new(spec.shape.clone(), data));
            sp.push(spec);
        }
        Ok(Self::from_parts(config, sp, params))
    }

    pub(crate) fn from_parts(config: ModelConfig, specs: Vec<ParamSpec>, params: Vec<Tensor>) -> Self {
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        HismModel {
            config,
            specs,
            params,
            index,
        }
    }

    /// Specs the configuration implies, for checkpoint validation.
    pub fn expected_specs(config: &ModelConfig) -> Vec<ParamSpec> {
        specs(config).into_iter().map(|(s, _)| s).collect()
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_shapes(&self, images: &[StackedInput], items: &[Item<'_>]) -> Result<(), HismError> {
        let c = &self.config;
        for im in images {
            if im.size != c.image_size || im.channels != c.in_channels || im.data.len() != c.in_channels * im.size * im.size {
                return Err(HismError::Shape(format!(
                    "raster {}x{}x{} does not match model {}x{}x{}",
                    im.channels, im.size, im.size, c.in_channels, c.image_size, c.image_size
                )));
            }
        }
        for it in items {
            if it.image >= images.len() {
                return Err(HismError::Shape(format!("image index {} out of range", it.image)));
            }
            if it.temporal.v.len() != c.seq_len || it.temporal.c.len() != c.seq_len {
                return Err(HismError::Shape(format!(
                    "temporal length {} does not match model {}",
                    it.temporal.v.len(),
                    c.seq_len
                )));
            }
        }
        if items.is_empty() {
            return Err(HismError::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Records the forward pass on `g`. Parameters become the first leaves
    /// of the tape, in spec order. Returns the `[N, 1]` prediction node.
    pub fn build(&self, g: &mut Graph, images: &[StackedInput], items: &[Item<'_>], mode: Mode<'_>) -> Result<Var, HismError> {
        self.check_shapes(images, items)?;
        let c = &self.config;
        let vars: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let p = |name: &str| vars[self.index[name]];

        // Spatial branch on the distinct rasters only.
        let mut uniq: Vec<usize> = Vec::new();
        let mut slot = HashMap::new();
        let rows: Vec<usize> = items
            .iter()
            .map(|it| {
                *slot.entry(it.image).or_insert_with(|| {
                    uniq.push(it.image);
                    uniq.len() - 1
                })
            })
            .collect();
        let s = c.image_size;
        let mut x = Vec::with_capacity(uniq.len() * c.in_channels * s * s);
        for &u in &uniq {
            x.extend_from_slice(&images[u].data);
        }
        let mut h = g.leaf(Tensor::new(vec![uniq.len(), c.in_channels, s, s], x));
        for i in 0..3 {
            h = g.conv3x3(h, p(&format!("conv{i}.w")), p(&format!("conv{i}.b")));
            h = g.relu(h);
            h = g.maxpool2(h);
        }
        let pooled = g.global_avg_pool(h);
        let spatial = g.select_rows(pooled, rows);

        let temporal = match c.variant {
            Variant::Lstm => self.lstm(g, items, &p),
            Variant::TranEnc | Variant::TranEncTask => self.encoder(g, items, &p),
        };

        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        let mut f = g.concat_cols(spatial, temporal);
        for i in 0..2 {
            let m = g.matmul(f, p(&format!("fc{i}.w")));
            let a = g.add_row(m, p(&format!("fc{i}.b")));
            f = g.relu(a);
            if let Some(r) = rng.as_deref_mut() {
                if c.dropout > 0.0 {
                    let keep = 1.0 - c.dropout;
                    let mask = (0..g.value(f).len())
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    f = g.scale(f, mask);
                }
            }
        }
        let m = g.matmul(f, p("out.w"));
        let z = g.add_row(m, p("out.b"));
        Ok(g.sigmoid(z))
    }

    /// `[N, T * din]` step features, step-major within each row.
    fn step_features(&self, items: &[Item<'_>]) -> Tensor {
        let t = self.config.seq_len;
        let din = self.config.variant.input_dim();
        let mut data = Vec::with_capacity(items.len() * t * din);
        for it in items {
            for k in 0..t {
                data.push(it.temporal.v[k]);
                if din == 2 {
                    data.push(it.temporal.c[k]);
                }
            }
        }
        Tensor::new(vec![items.len(), t * din], data)
    }

    fn lstm(&self, g: &mut Graph, items: &[Item<'_>], p: &dyn Fn(&str) -> Var) -> Var {
        let c = &self.config;
        let (n, hd, din) = (items.len(), c.hidden, c.variant.input_dim());
        let xs = g.leaf(self.step_features(items));
        let (wx, wh, b) = (p("lstm.wx"), p("lstm.wh"), p("lstm.b"));
        let mut h = g.leaf(Tensor::zeros(vec![n, hd]));
        let mut cell = g.leaf(Tensor::zeros(vec![n, hd]));
        for k in 0..c.seq_len {
            let x = g.slice_cols(xs, k * din, din);
            let a = g.matmul(x, wx);
            let r = g.matmul(h, wh);
            let s = g.add(a, r);
            let z = g.add_row(s, b);
            let zi = g.slice_cols(z, 0, hd);
            let zf = g.slice_cols(z, hd, hd);
            let zg = g.slice_cols(z, 2 * hd, hd);
            let zo = g.slice_cols(z, 3 * hd, hd);
            let (i, f, o) = (g.sigmoid(zi), g.sigmoid(zf), g.sigmoid(zo));
            let gg = g.tanh(zg);
            let keep = g.mul(f, cell);
            let write = g.mul(i, gg);
            cell = g.add(keep, write);
            let tc = g.tanh(cell);
            h = g.mul(o, tc);
        }
        h
    }

    fn encoder(&self, g: &mut Graph, items: &[Item<'_>], p: &dyn Fn(&str) -> Var) -> Var {
        let c = &self.config;
        let (n, t, d, din) = (items.len(), c.seq_len, c.hidden, c.variant.input_dim());
        let feats = self.step_features(items);
        let x = g.leaf(Tensor::new(vec![n * t, din], feats.data));
        let e = g.matmul(x, p("embed.w"));
        let e = g.add_row(e, p("embed.b"));
        let pe = positional_encoding(t, d);
        let mut pos = Vec::with_capacity(n * t * d);
        for _ in 0..n {
            pos.extend_from_slice(&pe);
        }
        let pos = g.leaf(Tensor::new(vec![n * t, d], pos));
        let mut h = g.add(e, pos);
        for l in 0..c.layers {
            let q = g.matmul(h, p(&format!("enc{l}.qkv.w")));
            let q = g.add_row(q, p(&format!("enc{l}.qkv.b")));
            let a = g.attention(q, c.heads, t);
            let a = g.matmul(a, p(&format!("enc{l}.out.w")));
            let a = g.add_row(a, p(&format!("enc{l}.out.b")));
            let r = g.add(h, a);
            h = g.layer_norm(r, p(&format!("enc{l}.ln1.g")), p(&format!("enc{l}.ln1.b")));
            let f = g.matmul(h, p(&format!("enc{l}.ff1.w")));
            let f = g.add_row(f, p(&format!("enc{l}.ff1.b")));
            let f = g.relu(f);
            let f = g.matmul(f, p(&format!("enc{l}.ff2.w")));
            let f = g.add_row(f, p(&format!("enc{l}.ff2.b")));
            let r = g.add(h, f);
            h = g.layer_norm(r, p(&format!("enc{l}.ln2.g")), p(&format!("enc{l}.ln2.b")));
        }
        // The query time is the last step.
        g.select_rows(h, (0..n).map(|i| i * t + t - 1).collect())
    }

    /// Predictions for a batch.
    pub fn forward_batch(&self, images: &[StackedInput], items: &[Item<'_>], mode: Mode<'_>) -> Result<Vec<f64>, HismError> {
        let mut g = Graph::new();
        let y = self.build(&mut g, images, items, mode)?;
        Ok(g.value(y).data.clone())
    }

    pub fn forward(&self, s: &StackedInput, tin: &TemporalInput, mode: Mode<'_>) -> Result<f64, HismError> {
        let items = [Item { image: 0, temporal: tin }];
        Ok(self.forward_batch(std::slice::from_ref(s), &items, mode)?[0])
    }

    /// MSE loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        images: &[StackedInput],
        items: &[Item<'_>],
        targets: &[f64],
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<Vec<f64>>), HismError> {
        let mut g = Graph::new();
        let y = self.build(&mut g, images, items, mode)?;
        let loss = g.mse(y, targets.to_vec());
        g.backward(loss);
        let grads = (0..self.params.len())
            .map(|i| g.grad(Var(i)).map_or_else(|| vec![0.0; self.params[i].len()], <[f64]>::to_vec))
            .collect();
        Ok((g.value(loss).data[0], grads))
    }

    /// MSE loss in eval mode plus the branch signature of the pass.
    pub fn eval_loss(&self, images: &[StackedInput], items: &[Item<'_>], targets: &[f64]) -> Result<(f64, u64), HismError> {
        let mut g = Graph::new();
        let y = self.build(&mut g, images, items, Mode::Eval)?;
        let loss = g.mse(y, targets.to_vec());
        Ok((g.value(loss).data[0], g.kink_signature()))
    }
}

/// Sinusoidal position table `[t, d]`: sine on even, cosine on odd columns.
pub fn positional_encoding(t: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; t * d];
    for pos in 0..t {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnlab_core::rng;

    fn small(variant: Variant) -> HismModel {
        let cfg = ModelConfig {
            variant,
            image_size: 16,
            ..Default::default()
        };
        HismModel::new(cfg, &mut rng::stream(1, 2)).unwrap()
    }

    fn random_inputs(n: usize, size: usize, seed: u64) -> (Vec<StackedInput>, Vec<TemporalInput>) {
        let mut r = rng::stream(seed, 9);
        let images = (0..n)
            .map(|_| StackedInput {
                size,
                channels: 4,
                data: (0..4 * size * size).map(|_| r.random::<f64>()).collect(),
            })
            .collect();
        let temporal = (0..n)
            .map(|_| {
                let pad = r.random_range(0..60);
                let v = (0..60).map(|k| if k < pad { 0.0 } else { [-1.0, 1.0][r.random_range(0..2)] }).collect();
                let c = (0..60).map(|k| if k < pad { 0.0 } else { r.random::<f64>() }).collect();
                TemporalInput { v, c }
            })
            .collect();
        (images, temporal)
    }

    #[test]
    fn parameter_counts() {
        let counts: Vec<usize> = Variant::ALL.iter().map(|&v| small(v).param_count()).collect();
        let conv = (8 * 4 * 9 + 8) + (16 * 8 * 9 + 16) + (32 * 16 * 9 + 32);
        let head = (64 * 128 + 128) + (128 * 64 + 64) + (64 + 1);
        assert_eq!(counts[0], conv + head + (4 * 32 + 32 * 128 + 128));
        let layer = (32 * 96 + 96) + (32 * 32 + 32) + 64 + (32 * 64 + 64) + (64 * 32 + 32) + 64;
        assert_eq!(counts[1], conv + head + (32 + 32) + 2 * layer);
        assert_eq!(counts[2], counts[1] + 32);
    }

    #[test]
    fn eval_is_deterministic_and_bounded() {
        for v in Variant::ALL {
            let m = small(v);
            let (ims, tins) = random_inputs(4, 16, 3);
            let a = m.forward(&ims[0], &tins[0], Mode::Eval).unwrap();
            let b = m.forward(&ims[0], &tins[0], Mode::Eval).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn batch_equals_single_calls() {
        for v in Variant::ALL {
            let m = small(v);
            let (ims, tins) = random_inputs(5, 16, 4);
            let items: Vec<Item> = (0..5).map(|i| Item { image: [0, 1, 0, 3, 4][i], temporal: &tins[i] }).collect();
            let batch = m.forward_batch(&ims, &items, Mode::Eval).unwrap();
            for (it, b) in items.iter().zip(&batch) {
                let single = m.forward(&ims[it.image], it.temporal, Mode::Eval).unwrap();
                assert!((single - b).abs() < 1e-12, "{v}: {single} vs {b}");
            }
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let m = small(Variant::Lstm);
        let (ims, tins) = random_inputs(1, 16, 5);
        let mut r = rng::stream(3, 3);
        let outs: Vec<f64> = (0..5).map(|_| m.forward(&ims[0], &tins[0], Mode::Train(&mut r)).unwrap()).collect();
        assert!(outs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = small(Variant::TranEnc);
        let (ims, tins) = random_inputs(1, 20, 6);
        assert!(matches!(m.forward(&ims[0], &tins[0], Mode::Eval), Err(HismError::Shape(_))));
        let (ims, mut tins) = random_inputs(1, 16, 6);
        tins[0].v.pop();
        assert!(matches!(m.forward(&ims[0], &tins[0], Mode::Eval), Err(HismError::Shape(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert_eq!("tranenc-task".parse::<Variant>().unwrap(), Variant::TranEncTask);
        assert!("gru".parse::<Variant>().is_err());
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[6] - (0.01f64).sin()).abs() < 1e-15);
    }
}
