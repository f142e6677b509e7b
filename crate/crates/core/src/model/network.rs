use crate::error::{Error, Result};
use crate::model::config::{HeadSpec, ModelConfig};
use crate::numcore::{Graph, ParamId, ParameterSet, Tensor, ValueId};

/// Layer-norm variance stabilizer used throughout the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Parameter bindings for one graph: `ValueId` per `ParamId`, in slot order.
pub struct Bound(Vec<ValueId>);

impl Bound {
    pub fn of(&self, id: ParamId) -> ValueId {
        // ParamIds are dense slot indices in creation order.
        self.0[id.0]
    }
}

/// Binds every parameter into the graph once; all layers share the bindings.
pub fn bind_all(g: &mut Graph, params: &ParameterSet) -> Bound {
    Bound(params.ids().map(|id| g.param(params, id)).collect())
}

/// Same-length 1-D convolution layer: weight `[C_out, C_in, k]` + bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        let weight = params.add_uniform(
            format!("{name}.weight"),
            vec![c_out, c_in, kernel],
            c_in * kernel,
            seed,
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![c_out]))?;
        Ok(ConvLayer { weight, bias, kernel })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        g.conv1d_same(x, bound.of(self.weight), bound.of(self.bias))
    }
}

/// Dense layer: weight `[D_in, D_out]` + bias.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        seed: u64,
    ) -> Result<Self> {
        let weight =
            params.add_uniform(format!("{name}.weight"), vec![d_in, d_out], d_in, seed)?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![d_out]))?;
        Ok(DenseLayer { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        g.linear(x, bound.of(self.weight), bound.of(self.bias))
    }
}

/// Gain/shift pair for layer normalization; gain starts at 1, shift at 0.
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl NormLayer {
    pub fn new(params: &mut ParameterSet, name: &str, dim: usize) -> Result<Self> {
        let gain = params.add(format!("{name}.gain"), Tensor::filled(vec![dim], 1.0))?;
        let shift = params.add(format!("{name}.shift"), Tensor::zeros(vec![dim]))?;
        Ok(NormLayer { gain, shift })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        g.layer_norm(x, bound.of(self.gain), bound.of(self.shift), LN_EPS)
    }
}

/// Parallel conv branches of different kernel sizes, relu, channel concat,
/// plus an optional 1x1-projection residual.
#[derive(Clone, Debug)]
pub struct MultiScaleConvBlock {
    pub branches: Vec<ConvLayer>,
    pub skip: Option<ConvLayer>,
    pub out_channels: usize,
}

impl MultiScaleConvBlock {
    pub fn new(
        params: &mut ParameterSet,
        kernels: &[usize],
        c_in: usize,
        branch_channels: usize,
        residual: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut branches = Vec::with_capacity(kernels.len());
        for &k in kernels {
            branches.push(ConvLayer::new(
                params,
                &format!("msc.k{k}"),
                branch_channels,
                c_in,
                k,
                seed,
            )?);
        }
        let out_channels = kernels.len() * branch_channels;
        let skip = if residual {
            Some(ConvLayer::new(params, "msc.skip", out_channels, c_in, 1, seed)?)
        } else {
            None
        };
        Ok(MultiScaleConvBlock { branches, skip, out_channels })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let mut parts = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(g, bound, x)?;
            parts.push(g.relu(y));
        }
        let z = g.concat_channels(&parts)?;
        match &self.skip {
            Some(skip) => {
                let proj = skip.forward(g, bound, x)?;
                g.add(z, proj)
            }
            None => Ok(z),
        }
    }
}

/// Channel-preserving residual block: `relu(conv3(x)) + x`.
#[derive(Clone, Debug)]
pub struct ResidualConvBlock {
    pub conv: ConvLayer,
}

impl ResidualConvBlock {
    pub fn new(params: &mut ParameterSet, name: &str, channels: usize, seed: u64) -> Result<Self> {
        Ok(ResidualConvBlock { conv: ConvLayer::new(params, name, channels, channels, 3, seed)? })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let y = self.conv.forward(g, bound, x)?;
        let a = g.relu(y);
        g.add(a, x)
    }
}

/// One (feature conv, gate conv) pair inside an attention head.
#[derive(Clone, Debug)]
pub struct MhmsBranch {
    pub feature: ConvLayer,
    pub gate: ConvLayer,
}

/// Multi-head multi-scale gated attention.
///
/// Per head `i` and scale `k_j`: a feature map `F_ij = Conv_{k_j}(x)`, a
/// same-shape attention map `A_ij = sigmoid(Conv_{k_j}(F_ij))`, the gated
/// product `W_ij = A_ij (x) F_ij`, concatenated per head and then across
/// heads. Attention entries below `tau` are zeroed before the product when
/// `tau > 0`.
#[derive(Clone, Debug)]
pub struct MhmsAttention {
    pub heads: Vec<Vec<MhmsBranch>>,
    pub out_channels: usize,
    pub tau: f64,
}

impl MhmsAttention {
    pub fn new(
        params: &mut ParameterSet,
        head_specs: &[HeadSpec],
        c_in: usize,
        head_channels: usize,
        tau: f64,
        seed: u64,
    ) -> Result<Self> {
        if head_specs.is_empty() {
            return Err(Error::config("mhms attention needs at least one head".to_string()));
        }
        let mut heads = Vec::with_capacity(head_specs.len());
        let mut out_channels = 0;
        for (i, spec) in head_specs.iter().enumerate() {
            let mut branches = Vec::with_capacity(spec.scales().len());
            for &k in spec.scales() {
                let feature = ConvLayer::new(
                    params,
                    &format!("mhms.h{i}.k{k}.feat"),
                    head_channels,
                    c_in,
                    k,
                    seed,
                )?;
                let gate = ConvLayer::new(
                    params,
                    &format!("mhms.h{i}.k{k}.gate"),
                    head_channels,
                    head_channels,
                    k,
                    seed,
                )?;
                branches.push(MhmsBranch { feature, gate });
                out_channels += head_channels;
            }
            heads.push(branches);
        }
        Ok(MhmsAttention { heads, out_channels, tau })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        for branches in &self.heads {
            let mut weighted = Vec::with_capacity(branches.len());
            for branch in branches {
                let feature = branch.feature.forward(g, bound, x)?;
                let gate_raw = branch.gate.forward(g, bound, feature)?;
                let mut attention = g.sigmoid(gate_raw);
                if self.tau > 0.0 {
                    attention = g.mask_below(attention, self.tau);
                }
                weighted.push(g.hadamard(attention, feature)?);
            }
            head_outputs.push(g.concat_channels(&weighted)?);
        }
        g.concat_channels(&head_outputs)
    }

    /// The ungated feature maps, concatenated in output order. Diagnostic
    /// counterpart of `forward` for checking the gating algebra.
    pub fn feature_maps(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let mut parts = Vec::new();
        for branches in &self.heads {
            for branch in branches {
                parts.push(branch.feature.forward(g, bound, x)?);
            }
        }
        g.concat_channels(&parts)
    }

    /// The attention maps after thresholding, concatenated in output order.
    pub fn attention_maps(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let mut parts = Vec::new();
        for branches in &self.heads {
            for branch in branches {
                let feature = branch.feature.forward(g, bound, x)?;
                let gate_raw = branch.gate.forward(g, bound, feature)?;
                let mut attention = g.sigmoid(gate_raw);
                if self.tau > 0.0 {
                    attention = g.mask_below(attention, self.tau);
                }
                parts.push(attention);
            }
        }
        g.concat_channels(&parts)
    }
}

/// Sinusoidal positional encoding: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(same)`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::config(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, d_model], data)
}

/// One scaled-dot-product head with its own Q/K/V projections.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub query: DenseLayer,
    pub key: DenseLayer,
    pub value: DenseLayer,
}

/// Post-norm transformer encoder layer: self-attention with residual and
/// layer norm, then a 4x-wide relu feed-forward with residual and layer norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub heads: Vec<AttentionHead>,
    pub out_proj: DenseLayer,
    pub norm1: NormLayer,
    pub ffn1: DenseLayer,
    pub ffn2: DenseLayer,
    pub norm2: NormLayer,
    pub d_head: usize,
}

impl EncoderLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_model: usize,
        n_heads: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} must be divisible by encoder head count {n_heads}"
            )));
        }
        let d_head = d_model / n_heads;
        let mut heads = Vec::with_capacity(n_heads);
        for a in 0..n_heads {
            heads.push(AttentionHead {
                query: DenseLayer::new(params, &format!("{name}.attn.h{a}.q"), d_model, d_head, seed)?,
                key: DenseLayer::new(params, &format!("{name}.attn.h{a}.k"), d_model, d_head, seed)?,
                value: DenseLayer::new(params, &format!("{name}.attn.h{a}.v"), d_model, d_head, seed)?,
            });
        }
        Ok(EncoderLayer {
            heads,
            out_proj: DenseLayer::new(params, &format!("{name}.attn.out"), d_model, d_model, seed)?,
            norm1: NormLayer::new(params, &format!("{name}.norm1"), d_model)?,
            ffn1: DenseLayer::new(params, &format!("{name}.ffn.fc1"), d_model, 4 * d_model, seed)?,
            ffn2: DenseLayer::new(params, &format!("{name}.ffn.fc2"), 4 * d_model, d_model, seed)?,
            norm2: NormLayer::new(params, &format!("{name}.norm2"), d_model)?,
            d_head,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: ValueId) -> Result<ValueId> {
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut head_cols = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = head.query.forward(g, bound, x)?;
            let k = head.key.forward(g, bound, x)?;
            let v = head.value.forward(g, bound, x)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scaled = g.scale(scores, scale);
            let weights = g.softmax_rows(scaled)?;
            let mixed = g.matmul(weights, v)?; // [L, d_head]
            head_cols.push(g.transpose(mixed)?); // [d_head, L]
        }
        let stacked = g.concat_channels(&head_cols)?; // [d_model, L]
        let concat = g.transpose(stacked)?; // [L, d_model]
        let attn = self.out_proj.forward(g, bound, concat)?;

        let sum1 = g.add(x, attn)?;
        let y = self.norm1.forward(g, bound, sum1)?;

        let hidden = self.ffn1.forward(g, bound, y)?;
        let act = g.relu(hidden);
        let ffn = self.ffn2.forward(g, bound, act)?;
        let sum2 = g.add(y, ffn)?;
        self.norm2.forward(g, bound, sum2)
    }
}

/// The assembled network: conv front end, optional gated attention,
/// projection + positional encoding, transformer encoder, output heads.
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    conv_block: MultiScaleConvBlock,
    residual_blocks: Vec<ResidualConvBlock>,
    mhms: Option<MhmsAttention>,
    projection: DenseLayer,
    encoder: Vec<EncoderLayer>,
    fc1: DenseLayer,
    fc2: DenseLayer,
    pos_encoding: Tensor,
}

impl Model {
    /// Resolves the configured variant into a concrete layer pipeline with
    /// seeded parameter initialization.
    pub fn build(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let seed = config.seed;
        let mut params = ParameterSet::new();

        let conv_block = MultiScaleConvBlock::new(
            &mut params,
            &config.conv_kernels(),
            config.input_channels,
            config.branch_channels,
            config.effective_residual(),
            seed,
        )?;
        let mut residual_blocks = Vec::new();
        for j in 0..config.variant.extra_depth() {
            residual_blocks.push(ResidualConvBlock::new(
                &mut params,
                &format!("res{j}"),
                conv_block.out_channels,
                seed,
            )?);
        }

        let head_specs = config.active_head_specs();
        let mhms = if head_specs.is_empty() {
            None
        } else {
            Some(MhmsAttention::new(
                &mut params,
                &head_specs,
                conv_block.out_channels,
                config.branch_channels,
                config.prune_threshold,
                seed,
            )?)
        };

        let feature_channels = mhms.as_ref().map_or(conv_block.out_channels, |m| m.out_channels);
        let projection = DenseLayer::new(&mut params, "proj", feature_channels, config.d_model, seed)?;

        let mut encoder = Vec::with_capacity(config.effective_encoder_layers());
        for l in 0..config.effective_encoder_layers() {
            encoder.push(EncoderLayer::new(
                &mut params,
                &format!("enc{l}"),
                config.d_model,
                config.encoder_heads,
                seed,
            )?);
        }

        let flat = config.history * config.d_model;
        let hidden = 4 * config.d_model;
        let fc1 = DenseLayer::new(&mut params, "fc1", flat, hidden, seed)?;
        let fc2 = DenseLayer::new(
            &mut params,
            "fc2",
            hidden,
            config.input_channels * config.horizon,
            seed,
        )?;

        let pos_encoding = positional_encoding(config.history, config.d_model)?;

        Ok(Model {
            config,
            params,
            conv_block,
            residual_blocks,
            mhms,
            projection,
            encoder,
            fc1,
            fc2,
            pos_encoding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Total number of scalar parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.total_len()
    }

    /// Builds the forward pipeline for one `[C_in, h]` sample and returns
    /// the `[C_in, t]` prediction node.
    pub fn forward_sample(
        &self,
        g: &mut Graph,
        bound: &Bound,
        pe: ValueId,
        x: ValueId,
    ) -> Result<ValueId> {
        let shape = g.value(x).shape().to_vec();
        if shape != [self.config.input_channels, self.config.history] {
            return Err(Error::config(format!(
                "sample shape {:?} does not match configured [{}, {}]",
                shape, self.config.input_channels, self.config.history
            )));
        }
        let mut z = self.conv_block.forward(g, bound, x)?;
        for block in &self.residual_blocks {
            z = block.forward(g, bound, z)?;
        }
        if let Some(mhms) = &self.mhms {
            z = mhms.forward(g, bound, z)?;
        }
        let seq = g.transpose(z)?; // [h, C_feat]
        let projected = self.projection.forward(g, bound, seq)?;
        let mut s = g.add(projected, pe)?;
        for layer in &self.encoder {
            s = layer.forward(g, bound, s)?;
        }
        let flat = g.reshape(s, vec![1, self.config.history * self.config.d_model])?;
        let h1 = self.fc1.forward(g, bound, flat)?;
        let act = g.relu(h1);
        let out = self.fc2.forward(g, bound, act)?;
        g.reshape(out, vec![self.config.input_channels, self.config.horizon])
    }

    /// Binds parameters and runs every sample of a `[B, C_in, h]` batch,
    /// returning the per-sample prediction nodes.
    pub fn forward_batch(&self, g: &mut Graph, batch: &Tensor) -> Result<Vec<ValueId>> {
        if batch.rank() != 3 {
            return Err(Error::config(format!(
                "batch must be [B, C_in, h], got shape {:?}",
                batch.shape()
            )));
        }
        let bound = bind_all(g, &self.params);
        let pe = g.leaf(self.pos_encoding.clone());
        let mut outputs = Vec::with_capacity(batch.shape()[0]);
        for b in 0..batch.shape()[0] {
            let x = g.leaf(batch.sub2(b));
            outputs.push(self.forward_sample(g, &bound, pe, x)?);
        }
        Ok(outputs)
    }

    /// Inference: `[B, C_in, h]` to `[B, C_in, t]` predictions in
    /// normalized units.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let outputs = self.forward_batch(&mut g, batch)?;
        let b = batch.shape()[0];
        let (c, t) = (self.config.input_channels, self.config.horizon);
        let mut data = Vec::with_capacity(b * c * t);
        for id in outputs {
            data.extend_from_slice(g.value(id).data());
        }
        Tensor::new(vec![b, c, t], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(4, 6).unwrap();
        assert_eq!(pe.shape(), &[4, 6]);
        assert_eq!(pe.at2(0, 0), 0.0); // sin(0)
        assert_eq!(pe.at2(0, 1), 1.0); // cos(0)
        assert_abs_diff_eq!(pe.at2(1, 0), 1.0f64.sin(), epsilon = 1e-15);
        assert!(pe.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(positional_encoding(4, 5).is_err());
    }

    #[test]
    fn bound_maps_params_in_slot_order() {
        let mut params = ParameterSet::new();
        let a = params.add("a", Tensor::vector(&[1.0])).unwrap();
        let b = params.add("b", Tensor::vector(&[2.0])).unwrap();
        let mut g = Graph::new();
        let bound = bind_all(&mut g, &params);
        assert_eq!(g.value(bound.of(a)).data(), &[1.0]);
        assert_eq!(g.value(bound.of(b)).data(), &[2.0]);
    }
}
