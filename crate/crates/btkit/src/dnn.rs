//! DNN workload definition and reference execution: model specs (LeNet and
//! a DarkNet-style reduction), weight initialization or file loading,
//! quantization, a reference forward pass, and enumeration of the
//! (input, weight) pair streams that feed ordering and the NoC.
//!
//! The forward pass is the semantic oracle for order invariance: permuting a
//! neuron's pairs must not change its output (exactly for fixed-8 integer
//! accumulation, within rounding for float-32).

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{encode_float32, quantize_fixed8, BitWord};
use crate::error::{BtError, Result};
use crate::ordering::PairBlock;

/// Payload precision for traffic and arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    Float32,
    Fixed8,
}

impl Precision {
    pub fn word_bits(self) -> u32 {
        match self {
            Precision::Float32 => 32,
            Precision::Fixed8 => 8,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Precision::Float32 => "float32",
            Precision::Fixed8 => "fixed8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    Linear,
    Pool,
    Activation,
}

/// One layer's geometry. Spatial fields are in elements; linear layers use
/// `in_channels`/`out_channels` as feature counts with 1x1 spatial extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl LayerSpec {
    pub fn conv2d(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        input_h: usize,
        input_w: usize,
    ) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            kind: LayerKind::Conv2D,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            input_h,
            input_w,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            kind: LayerKind::Linear,
            in_channels: in_features,
            out_channels: out_features,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            input_h: 1,
            input_w: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn pool2x2(name: &str, channels: usize, input_h: usize, input_w: usize) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            kind: LayerKind::Pool,
            in_channels: channels,
            out_channels: channels,
            kernel_h: 2,
            kernel_w: 2,
            stride: 2,
            input_h,
            input_w,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn relu(name: &str, channels: usize, input_h: usize, input_w: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            kind: LayerKind::Activation,
            in_channels: channels,
            out_channels: channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            input_h,
            input_w,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(BtError::InvalidLayer(format!(
                "{}: zero-sized dimension",
                self.name
            )));
        }
        if self.kind != LayerKind::Linear
            && (self.input_h < self.kernel_h || self.input_w < self.kernel_w)
        {
            return Err(BtError::InvalidLayer(format!(
                "{}: kernel larger than input",
                self.name
            )));
        }
        let (oh, ow) = self.output_hw();
        if oh < 1 || ow < 1 {
            return Err(BtError::InvalidLayer(format!("{}: empty output", self.name)));
        }
        Ok(())
    }

    pub fn output_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Linear | LayerKind::Activation => (self.input_h, self.input_w),
            _ => (
                (self.input_h - self.kernel_h) / self.stride + 1,
                (self.input_w - self.kernel_w) / self.stride + 1,
            ),
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let (oh, ow) = self.output_hw();
        [self.out_channels, oh, ow]
    }

    /// Shape of this layer's weight tensor, if it has one.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2D => Some(vec![
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w,
            ]),
            LayerKind::Linear => Some(vec![self.out_channels, self.in_channels]),
            _ => None,
        }
    }

    /// Incoming fan per output neuron (one neuron's MAC pair count).
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2D => self.in_channels * self.kernel_h * self.kernel_w,
            LayerKind::Linear => self.in_channels,
            _ => 0,
        }
    }

    /// Output neurons that own a pair block.
    pub fn neuron_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv2D => {
                let (oh, ow) = self.output_hw();
                self.out_channels * oh * ow
            }
            LayerKind::Linear => self.out_channels,
            _ => 0,
        }
    }

    /// Total multiply-accumulate pairs of the layer.
    pub fn mac_pairs(&self) -> usize {
        self.neuron_count() * self.fan_in()
    }
}

/// A composed model: layers whose shapes chain, plus the payload precision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub precision: Precision,
    pub input_shape: [usize; 3],
}

impl ModelSpec {
    pub fn new(
        name: &str,
        layers: Vec<LayerSpec>,
        precision: Precision,
        input_shape: [usize; 3],
    ) -> Result<Self> {
        let mut shape = input_shape;
        for layer in &layers {
            let expected_features = shape[0] * shape[1] * shape[2];
            match layer.kind {
                LayerKind::Linear => {
                    if layer.in_channels != expected_features {
                        return Err(BtError::InvalidLayer(format!(
                            "{}: expects {} features, previous layer provides {}",
                            layer.name, layer.in_channels, expected_features
                        )));
                    }
                }
                _ => {
                    if layer.in_channels != shape[0]
                        || layer.input_h != shape[1]
                        || layer.input_w != shape[2]
                    {
                        return Err(BtError::InvalidLayer(format!(
                            "{}: expects {}x{}x{}, previous layer provides {}x{}x{}",
                            layer.name,
                            layer.in_channels,
                            layer.input_h,
                            layer.input_w,
                            shape[0],
                            shape[1],
                            shape[2]
                        )));
                    }
                }
            }
            shape = layer.output_shape();
        }
        Ok(Self {
            name: name.to_string(),
            layers,
            precision,
            input_shape,
        })
    }
}

/// Built-in workload selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Lenet,
    DarknetMini,
}

impl ModelKind {
    pub fn build(self, precision: Precision) -> ModelSpec {
        match self {
            ModelKind::Lenet => make_lenet(precision),
            ModelKind::DarknetMini => make_darknet_mini(precision),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Lenet => "lenet",
            ModelKind::DarknetMini => "darknet-mini",
        }
    }
}

/// Classic LeNet-5 geometry on 32x32 single-channel input.
pub fn make_lenet(precision: Precision) -> ModelSpec {
    let layers = vec![
        LayerSpec::conv2d("conv1", 1, 6, 5, 1, 32, 32).unwrap(),
        LayerSpec::pool2x2("pool1", 6, 28, 28).unwrap(),
        LayerSpec::conv2d("conv2", 6, 16, 5, 1, 14, 14).unwrap(),
        LayerSpec::pool2x2("pool2", 16, 10, 10).unwrap(),
        LayerSpec::linear("fc1", 400, 120).unwrap(),
        LayerSpec::linear("fc2", 120, 84).unwrap(),
        LayerSpec::linear("fc3", 84, 10).unwrap(),
    ];
    ModelSpec::new("lenet", layers, precision, [1, 32, 32]).unwrap()
}

/// DarkNet-style reduction: 3x3 convolutions doubling 16→128 channels with
/// 2x2 pooling after each, a linear classifier head, 64x64x3 input.
pub fn make_darknet_mini(precision: Precision) -> ModelSpec {
    let layers = vec![
        LayerSpec::conv2d("conv1", 3, 16, 3, 1, 64, 64).unwrap(),
        LayerSpec::pool2x2("pool1", 16, 62, 62).unwrap(),
        LayerSpec::conv2d("conv2", 16, 32, 3, 1, 31, 31).unwrap(),
        LayerSpec::pool2x2("pool2", 32, 29, 29).unwrap(),
        LayerSpec::conv2d("conv3", 32, 64, 3, 1, 14, 14).unwrap(),
        LayerSpec::pool2x2("pool3", 64, 12, 12).unwrap(),
        LayerSpec::conv2d("conv4", 64, 128, 3, 1, 6, 6).unwrap(),
        LayerSpec::pool2x2("pool4", 128, 4, 4).unwrap(),
        LayerSpec::linear("fc", 512, 10).unwrap(),
    ];
    ModelSpec::new("darknet-mini", layers, precision, [3, 64, 64]).unwrap()
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(BtError::ShapeMismatch {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Symmetric per-tensor quantization scale, max|v|/127. All-zero
    /// tensors get scale 1 so quantization stays defined.
    pub fn fixed8_scale(&self) -> f32 {
        let max = self.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        if max == 0.0 {
            1.0
        } else {
            max / 127.0
        }
    }
}

/// Where weights come from. The seed is echoed in outputs so every run is
/// reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    RandomInit { seed: u64 },
    FromFile { path: String },
}

/// Per-layer weight tensors, aligned with `model.layers`; `None` for layers
/// without weights.
pub type Weights = Vec<Option<Tensor>>;

/// Initialize weights: random draws are uniform in [-1/sqrt(fan_in),
/// +1/sqrt(fan_in)] per layer from one seeded stream; files load raw
/// little-endian float-32 tensors in layer order (see [`load_weights`]).
pub fn init_weights(model: &ModelSpec, source: &WeightSource) -> Result<Weights> {
    match source {
        WeightSource::RandomInit { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(model
                .layers
                .iter()
                .map(|layer| {
                    layer.weight_shape().map(|shape| {
                        let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                        let len: usize = shape.iter().product();
                        let data = (0..len)
                            .map(|_| rng.gen_range(-bound..=bound) as f32)
                            .collect();
                        Tensor { shape, data }
                    })
                })
                .collect())
        }
        WeightSource::FromFile { path } => load_weights(model, Path::new(path)),
    }
}

fn manifest_path(data_path: &Path) -> std::path::PathBuf {
    let mut p = data_path.as_os_str().to_owned();
    p.push(".manifest");
    std::path::PathBuf::from(p)
}

/// Write weights as one concatenated little-endian float-32 file plus a
/// plain-text manifest (`layer_name dim0 dim1 ...` per line) alongside it.
pub fn save_weights(model: &ModelSpec, weights: &Weights, data_path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| BtError::WeightFile(e.to_string());
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for (layer, tensor) in model.layers.iter().zip(weights) {
        if let Some(tensor) = tensor {
            manifest.push_str(&layer.name);
            for d in &tensor.shape {
                manifest.push_str(&format!(" {d}"));
            }
            manifest.push('\n');
            for v in &tensor.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::File::create(data_path)
        .map_err(io_err)?
        .write_all(&blob)
        .map_err(io_err)?;
    std::fs::write(manifest_path(data_path), manifest).map_err(io_err)?;
    Ok(())
}

/// Load weights saved in the [`save_weights`] layout; shapes must match the
/// model layer by layer.
pub fn load_weights(model: &ModelSpec, data_path: &Path) -> Result<Weights> {
    let io_err = |e: std::io::Error| BtError::WeightFile(e.to_string());
    let manifest = std::fs::read_to_string(manifest_path(data_path)).map_err(io_err)?;
    let mut blob = Vec::new();
    std::fs::File::open(data_path)
        .map_err(io_err)?
        .read_to_end(&mut blob)
        .map_err(io_err)?;

    let mut entries = Vec::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| BtError::WeightFile("empty manifest line".into()))?;
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse()
                    .map_err(|_| BtError::WeightFile(format!("bad dimension '{p}'")))
            })
            .collect::<Result<_>>()?;
        entries.push((name.to_string(), shape));
    }

    let mut offset = 0usize;
    let mut by_layer = Weights::new();
    let mut entry_iter = entries.iter();
    for layer in &model.layers {
        match layer.weight_shape() {
            None => by_layer.push(None),
            Some(expected) => {
                let (name, shape) = entry_iter.next().ok_or_else(|| {
                    BtError::WeightFile(format!("manifest missing entry for {}", layer.name))
                })?;
                if *name != layer.name || *shape != expected {
                    return Err(BtError::ShapeMismatch {
                        expected,
                        got: shape.clone(),
                    });
                }
                let len: usize = shape.iter().product();
                let bytes = len * 4;
                if offset + bytes > blob.len() {
                    return Err(BtError::WeightFile(format!(
                        "data file too short for {}: need {} bytes at offset {}",
                        layer.name, bytes, offset
                    )));
                }
                let data = blob[offset..offset + bytes]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                offset += bytes;
                by_layer.push(Some(Tensor {
                    shape: shape.clone(),
                    data,
                }));
            }
        }
    }
    if offset != blob.len() {
        return Err(BtError::WeightFile(format!(
            "data file has {} trailing bytes",
            blob.len() - offset
        )));
    }
    Ok(by_layer)
}

/// Deterministic synthetic input tensor, uniform in [0, 1).
pub fn random_input(model: &ModelSpec, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A9E_55ED);
    let shape = model.input_shape.to_vec();
    let len = shape.iter().product();
    Tensor {
        shape,
        data: (0..len).map(|_| rng.gen::<f32>()).collect(),
    }
}

/// Accumulation order of each neuron's pairs in the reference forward pass.
#[derive(Debug, Clone, Copy)]
pub enum PairOrder {
    Natural,
    /// The affiliated transform: pairs sorted by weight-word popcount
    /// descending (stable), keyed on the precision's encoding.
    AffiliatedByWeight,
    /// Deterministic per-neuron shuffle.
    Shuffled(u64),
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

fn order_rng(seed: u64, neuron_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ neuron_id.wrapping_mul(0x9E37_79B9))
}

fn apply_pair_order_f32(order: PairOrder, neuron_id: u64, pairs: &mut [(f32, f32)]) {
    match order {
        PairOrder::Natural => {}
        PairOrder::AffiliatedByWeight => {
            pairs.sort_by_key(|&(_, w)| {
                std::cmp::Reverse(encode_float32(w).map(|b| b.popcount()).unwrap_or(0))
            });
        }
        PairOrder::Shuffled(seed) => shuffle(pairs, &mut order_rng(seed, neuron_id)),
    }
}

fn apply_pair_order_q(order: PairOrder, neuron_id: u64, pairs: &mut [(i8, i8)]) {
    match order {
        PairOrder::Natural => {}
        PairOrder::AffiliatedByWeight => {
            pairs.sort_by_key(|&(_, w)| std::cmp::Reverse((w as u8).count_ones()));
        }
        PairOrder::Shuffled(seed) => shuffle(pairs, &mut order_rng(seed, neuron_id)),
    }
}

/// Enumerate one neuron's (input, weight) value pairs in the canonical
/// order: input channel major, then kernel row major.
fn gather_pairs(
    layer: &LayerSpec,
    input: &Tensor,
    weights: &Tensor,
    neuron: usize,
    out: &mut Vec<(f32, f32)>,
) {
    out.clear();
    match layer.kind {
        LayerKind::Conv2D => {
            let (oh, ow) = layer.output_hw();
            let oc = neuron / (oh * ow);
            let oy = (neuron / ow) % oh;
            let ox = neuron % ow;
            let ih = layer.input_h;
            let iw = layer.input_w;
            let kh = layer.kernel_h;
            let kw = layer.kernel_w;
            for ic in 0..layer.in_channels {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = oy * layer.stride + ky;
                        let ix = ox * layer.stride + kx;
                        let a = input.data[ic * ih * iw + iy * iw + ix];
                        let w =
                            weights.data[((oc * layer.in_channels + ic) * kh + ky) * kw + kx];
                        out.push((a, w));
                    }
                }
            }
        }
        LayerKind::Linear => {
            let n_in = layer.in_channels;
            for i in 0..n_in {
                out.push((input.data[i], weights.data[neuron * n_in + i]));
            }
        }
        _ => {}
    }
}

fn forward_layer(
    layer: &LayerSpec,
    weights: Option<&Tensor>,
    input: &Tensor,
    precision: Precision,
    order: PairOrder,
) -> Result<Tensor> {
    let expected_len: usize = match layer.kind {
        LayerKind::Linear => layer.in_channels,
        _ => layer.in_channels * layer.input_h * layer.input_w,
    };
    if input.len() != expected_len {
        return Err(BtError::ShapeMismatch {
            expected: vec![expected_len],
            got: vec![input.len()],
        });
    }
    match layer.kind {
        LayerKind::Pool => {
            let (oh, ow) = layer.output_hw();
            let mut out = Tensor::zeros(vec![layer.out_channels, oh, ow]);
            let ih = layer.input_h;
            let iw = layer.input_w;
            for c in 0..layer.in_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut m = f32::NEG_INFINITY;
                        for ky in 0..layer.kernel_h {
                            for kx in 0..layer.kernel_w {
                                let iy = oy * layer.stride + ky;
                                let ix = ox * layer.stride + kx;
                                m = m.max(input.data[c * ih * iw + iy * iw + ix]);
                            }
                        }
                        out.data[c * oh * ow + oy * ow + ox] = m;
                    }
                }
            }
            Ok(out)
        }
        LayerKind::Activation => {
            let mut out = input.clone();
            for v in &mut out.data {
                *v = v.max(0.0);
            }
            Ok(out)
        }
        LayerKind::Conv2D | LayerKind::Linear => {
            let w = weights
                .ok_or_else(|| BtError::InvalidLayer(format!("{}: missing weights", layer.name)))?;
            let expected_shape = layer.weight_shape().unwrap();
            if w.shape != expected_shape {
                return Err(BtError::ShapeMismatch {
                    expected: expected_shape,
                    got: w.shape.clone(),
                });
            }
            let mut out = Tensor::zeros(layer.output_shape().to_vec());
            let mut pairs = Vec::with_capacity(layer.fan_in());
            match precision {
                Precision::Float32 => {
                    for neuron in 0..layer.neuron_count() {
                        gather_pairs(layer, input, w, neuron, &mut pairs);
                        apply_pair_order_f32(order, neuron as u64, &mut pairs);
                        // f32 products are exact in f64; only the running sum
                        // rounds, keeping reorder drift at f64 scale.
                        let sum: f64 = pairs.iter().map(|&(a, b)| a as f64 * b as f64).sum();
                        out.data[neuron] = sum as f32;
                    }
                }
                Precision::Fixed8 => {
                    let a_scale = input.fixed8_scale();
                    let w_scale = w.fixed8_scale();
                    let dequant = a_scale as f64 * w_scale as f64;
                    let mut qpairs = Vec::with_capacity(layer.fan_in());
                    for neuron in 0..layer.neuron_count() {
                        gather_pairs(layer, input, w, neuron, &mut pairs);
                        qpairs.clear();
                        qpairs.extend(pairs.iter().map(|&(a, b)| {
                            (
                                quantize_fixed8(a, a_scale).raw() as u8 as i8,
                                quantize_fixed8(b, w_scale).raw() as u8 as i8,
                            )
                        }));
                        apply_pair_order_q(order, neuron as u64, &mut qpairs);
                        let sum: i64 = qpairs.iter().map(|&(a, b)| a as i64 * b as i64).sum();
                        out.data[neuron] = (sum as f64 * dequant) as f32;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Straightforward layer-by-layer evaluation in the model's precision.
pub fn reference_forward(model: &ModelSpec, weights: &Weights, input: &Tensor) -> Result<Tensor> {
    forward_with_order(model, weights, input, PairOrder::Natural)
}

/// Reference forward with a chosen per-neuron pair accumulation order; the
/// vehicle for order-invariance checks.
pub fn forward_with_order(
    model: &ModelSpec,
    weights: &Weights,
    input: &Tensor,
    order: PairOrder,
) -> Result<Tensor> {
    if input.shape != model.input_shape {
        return Err(BtError::ShapeMismatch {
            expected: model.input_shape.to_vec(),
            got: input.shape.clone(),
        });
    }
    let mut current = input.clone();
    for (layer, w) in model.layers.iter().zip(weights) {
        current = forward_layer(layer, w.as_ref(), &current, model.precision, order)?;
    }
    Ok(current)
}

/// The activation tensor feeding each layer (index i = input of layer i),
/// evaluated in natural order.
pub fn layer_activations(
    model: &ModelSpec,
    weights: &Weights,
    input: &Tensor,
) -> Result<Vec<Tensor>> {
    Ok(activation_trace(model, weights, input)?.0)
}

/// Per-layer input activations plus the final model output.
pub fn activation_trace(
    model: &ModelSpec,
    weights: &Weights,
    input: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut acts = Vec::with_capacity(model.layers.len());
    let mut current = input.clone();
    for (layer, w) in model.layers.iter().zip(weights) {
        acts.push(current.clone());
        current = forward_layer(layer, w.as_ref(), &current, model.precision, PairOrder::Natural)?;
    }
    Ok((acts, current))
}

/// One PairBlock per output neuron of a conv/linear layer, each holding the
/// neuron's kernel-volume pairs encoded at the given precision. Pool and
/// activation layers yield no blocks.
pub fn neuron_pair_stream(
    layer: &LayerSpec,
    precision: Precision,
    input: &Tensor,
    weights: Option<&Tensor>,
) -> Result<Vec<PairBlock>> {
    if layer.weight_shape().is_none() {
        return Ok(Vec::new());
    }
    let w = weights
        .ok_or_else(|| BtError::InvalidLayer(format!("{}: missing weights", layer.name)))?;
    let encode: Box<dyn Fn(f32, f32) -> (BitWord, BitWord)> = match precision {
        Precision::Float32 => Box::new(|a, b| {
            (
                encode_float32(a).expect("activation must be finite"),
                encode_float32(b).expect("weight must be finite"),
            )
        }),
        Precision::Fixed8 => {
            let a_scale = input.fixed8_scale();
            let w_scale = w.fixed8_scale();
            Box::new(move |a, b| (quantize_fixed8(a, a_scale), quantize_fixed8(b, w_scale)))
        }
    };
    let mut blocks = Vec::with_capacity(layer.neuron_count());
    let mut pairs = Vec::with_capacity(layer.fan_in());
    for neuron in 0..layer.neuron_count() {
        gather_pairs(layer, input, w, neuron, &mut pairs);
        let encoded = pairs.iter().map(|&(a, b)| encode(a, b)).collect();
        blocks.push(PairBlock::new(encoded, neuron as u64)?);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_composes_and_counts() {
        let model = make_lenet(Precision::Float32);
        assert_eq!(model.layers.len(), 7);
        // conv1 weight count: 6*1*5*5
        let conv1 = &model.layers[0];
        assert_eq!(conv1.weight_shape().unwrap().iter().product::<usize>(), 150);
        // fc3 MAC pair count: 84*10
        let fc3 = &model.layers[6];
        assert_eq!(fc3.mac_pairs(), 840);
    }

    #[test]
    fn darknet_mini_composes() {
        let model = make_darknet_mini(Precision::Fixed8);
        assert_eq!(model.input_shape, [3, 64, 64]);
        // first conv pair-stream length per output pixel: 3*3*3
        assert_eq!(model.layers[0].fan_in(), 27);
        // classifier sees 128*2*2 features
        assert_eq!(model.layers.last().unwrap().in_channels, 512);
    }

    #[test]
    fn layer_rejects_empty_output() {
        assert!(LayerSpec::conv2d("c", 1, 1, 5, 1, 4, 4).is_err());
        assert!(LayerSpec::conv2d("c", 1, 1, 3, 1, 3, 3).is_ok());
    }

    #[test]
    fn model_rejects_bad_composition() {
        let layers = vec![
            LayerSpec::conv2d("conv1", 1, 6, 5, 1, 32, 32).unwrap(),
            LayerSpec::linear("fc", 100, 10).unwrap(), // should be 6*28*28
        ];
        assert!(ModelSpec::new("bad", layers, Precision::Float32, [1, 32, 32]).is_err());
    }

    #[test]
    fn init_weights_deterministic_and_bounded() {
        let model = make_lenet(Precision::Float32);
        let a = init_weights(&model, &WeightSource::RandomInit { seed: 7 }).unwrap();
        let b = init_weights(&model, &WeightSource::RandomInit { seed: 7 }).unwrap();
        assert_eq!(a, b);
        let c = init_weights(&model, &WeightSource::RandomInit { seed: 8 }).unwrap();
        assert_ne!(a, c);
        // conv1 fan_in = 25 -> bound 0.2
        let conv1 = a[0].as_ref().unwrap();
        assert!(conv1.data.iter().all(|v| v.abs() <= 0.2));
        assert!(conv1.data.iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn weight_file_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("btkit-wt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let model = make_lenet(Precision::Float32);
        let weights = init_weights(&model, &WeightSource::RandomInit { seed: 3 }).unwrap();
        let path = dir.join("lenet.bin");
        save_weights(&model, &weights, &path).unwrap();
        let loaded = load_weights(&model, &path).unwrap();
        assert_eq!(weights, loaded);

        // Truncated data -> error
        let blob = std::fs::read(&path).unwrap();
        std::fs::write(&path, &blob[..blob.len() - 4]).unwrap();
        assert!(load_weights(&model, &path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn forward_zero_weights_gives_zero() {
        let layers = vec![LayerSpec::linear("fc", 4, 2).unwrap()];
        let model = ModelSpec::new("m", layers, Precision::Float32, [4, 1, 1]).unwrap();
        let weights = vec![Some(Tensor::zeros(vec![2, 4]))];
        let input = Tensor::from_data(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = reference_forward(&model, &weights, &input).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0]);
    }

    #[test]
    fn conv_single_window_is_dot_product() {
        let layers = vec![LayerSpec::conv2d("c", 1, 1, 3, 1, 3, 3).unwrap()];
        let model = ModelSpec::new("m", layers, Precision::Float32, [1, 3, 3]).unwrap();
        let input = Tensor::from_data(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let kernel =
            Tensor::from_data(vec![1, 1, 3, 3], (1..=9).map(|v| 0.5 * v as f32).collect()).unwrap();
        let out = reference_forward(&model, &vec![Some(kernel)], &input).unwrap();
        // sum of elementwise products: 0.5 * (1+4+...+81) = 0.5 * 285
        assert_eq!(out.data, vec![142.5]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let model = make_lenet(Precision::Float32);
        let weights = init_weights(&model, &WeightSource::RandomInit { seed: 1 }).unwrap();
        let bad = Tensor::zeros(vec![1, 28, 28]);
        assert!(reference_forward(&model, &weights, &bad).is_err());
    }

    #[test]
    fn fixed8_forward_invariant_under_pair_permutation() {
        let model = make_lenet(Precision::Fixed8);
        let weights = init_weights(&model, &WeightSource::RandomInit { seed: 11 }).unwrap();
        let input = random_input(&model, 11);
        let natural = reference_forward(&model, &weights, &input).unwrap();
        let shuffled = forward_with_order(&model, &weights, &input, PairOrder::Shuffled(99)).unwrap();
        let affiliated =
            forward_with_order(&model, &weights, &input, PairOrder::AffiliatedByWeight).unwrap();
        assert_eq!(natural.data, shuffled.data);
        assert_eq!(natural.data, affiliated.data);
    }

    #[test]
    fn float32_forward_matches_under_permutation() {
        let model = make_lenet(Precision::Float32);
        let weights = init_weights(&model, &WeightSource::RandomInit { seed: 13 }).unwrap();
        let input = random_input(&model, 13);
        let natural = reference_forward(&model, &weights, &input).unwrap();
        let affiliated =
            forward_with_order(&model, &weights, &input, PairOrder::AffiliatedByWeight).unwrap();
        for (a, b) in natural.data.iter().zip(&affiliated.data) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(f32::MIN_POSITIVE);
            assert!(
                rel <= 1e-6 || (a - b).abs() <= 1e-9,
                "outputs diverge: {a} vs {b}"
            );
        }
    }

    #[test]
    fn pair_stream_counts() {
        let lin = LayerSpec::linear("fc", 4, 2).unwrap();
        let input = Tensor::from_data(vec![4, 1, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let w = Tensor::from_data(vec![2, 4], vec![0.5; 8]).unwrap();
        let blocks = neuron_pair_stream(&lin, Precision::Float32, &input, Some(&w)).unwrap();
        assert_eq!(blocks.len(), 2);
        assert!(blocks.iter().all(|b| b.len() == 4));

        let conv = LayerSpec::conv2d("c", 1, 1, 3, 1, 3, 3).unwrap();
        let input = Tensor::from_data(vec![1, 3, 3], vec![0.5; 9]).unwrap();
        let w = Tensor::from_data(vec![1, 1, 3, 3], vec![0.25; 9]).unwrap();
        let blocks = neuron_pair_stream(&conv, Precision::Fixed8, &input, Some(&w)).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].len(), 9);
    }

    #[test]
    fn pair_stream_total_matches_mac_count() {
        let model = make_lenet(Precision::Fixed8);
        let weights = init_weights(&model, &WeightSource::RandomInit { seed: 5 }).unwrap();
        let input = random_input(&model, 5);
        let acts = layer_activations(&model, &weights, &input).unwrap();
        for (i, layer) in model.layers.iter().enumerate() {
            let blocks =
                neuron_pair_stream(layer, model.precision, &acts[i], weights[i].as_ref()).unwrap();
            let total: usize = blocks.iter().map(|b| b.len()).sum();
            assert_eq!(total, layer.mac_pairs(), "layer {}", layer.name);
        }
    }

    #[test]
    fn relu_layer_clamps_negatives() {
        let layer = LayerSpec::relu("act", 2, 1, 1).unwrap();
        let input = Tensor::from_data(vec![2, 1, 1], vec![-1.5, 2.5]).unwrap();
        let out = forward_layer(&layer, None, &input, Precision::Float32, PairOrder::Natural)
            .unwrap();
        assert_eq!(out.data, vec![0.0, 2.5]);
    }
}
