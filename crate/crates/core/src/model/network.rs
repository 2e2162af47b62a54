//! Construction and forward passes of the cascaded network.
//!
//! Stage 1 estimates the descriptor maps: a shared encoder with one
//! decoder per descriptor channel, each ending in a linear 1-channel
//! head. Stage 2 classifies from the estimated maps concatenated with the
//! input image: one more encoder/decoder pair ending in a softmax head.
//! Long skip connections concatenate encoder features into the decoder at
//! matching resolution. With `descriptor_order = 0` only stage 2 exists,
//! fed by the raw image (the plain U-Net baseline).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelError, NetworkConfig};
use crate::autodiff::{Graph, Scalar, Tensor, TensorRef};
use crate::eval::PosteriorMap;
use crate::io::GrayImage;
use crate::maps::DescriptorMap;

const DROPOUT_RATE: f64 = 0.2;

/// Weight/bias indices of one convolution into the parameter table.
#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Block {
    convs: [ConvIds; 2],
}

#[derive(Debug, Clone)]
struct Encoder {
    levels: Vec<Block>,
    bottleneck: Block,
}

#[derive(Debug, Clone)]
struct Decoder {
    /// Deepest level first.
    levels: Vec<Block>,
    head: ConvIds,
}

#[derive(Debug, Clone)]
struct Stage {
    encoder: Encoder,
    decoders: Vec<Decoder>,
}

/// Tape handles of one forward pass.
pub struct ModelOutputs {
    /// One estimated descriptor map per decoder, each [1, 1, H, W].
    pub regressions: Vec<TensorRef>,
    /// Per-pixel class posteriors, [1, num_classes, H, W].
    pub posteriors: TensorRef,
}

/// Parameters plus architecture wiring of the cascaded model.
pub struct CascadedModel<S: Scalar> {
    pub config: NetworkConfig,
    params: Vec<Tensor<S>>,
    names: Vec<String>,
    stage1: Option<Stage>,
    stage2: Stage,
}

/// Builds parameter tensors with He-uniform weights and zero biases.
struct Builder<S: Scalar> {
    params: Vec<Tensor<S>>,
    names: Vec<String>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<S> {
    fn conv(&mut self, name: String, in_c: usize, out_c: usize) -> ConvIds {
        let fan_in = (in_c * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weight = Tensor::from_vec(
            &[out_c, in_c, 3, 3],
            (0..out_c * in_c * 9)
                .map(|_| S::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * limit))
                .collect(),
        );
        let bias = Tensor::zeros(&[out_c]);
        self.params.push(weight);
        self.names.push(format!("{name}.weight"));
        self.params.push(bias);
        self.names.push(format!("{name}.bias"));
        ConvIds { weight: self.params.len() - 2, bias: self.params.len() - 1 }
    }

    fn block(&mut self, name: String, in_c: usize, out_c: usize) -> Block {
        Block {
            convs: [
                self.conv(format!("{name}.conv0"), in_c, out_c),
                self.conv(format!("{name}.conv1"), out_c, out_c),
            ],
        }
    }

    fn encoder(&mut self, name: &str, in_c: usize, depth: usize, base: usize) -> Encoder {
        let mut levels = Vec::with_capacity(depth);
        let mut ch = in_c;
        for level in 0..depth {
            let out = base << level;
            levels.push(self.block(format!("{name}.level{level}"), ch, out));
            ch = out;
        }
        let bottleneck = self.block(format!("{name}.bottleneck"), ch, base << depth);
        Encoder { levels, bottleneck }
    }

    fn decoder(&mut self, name: &str, depth: usize, base: usize, head_channels: usize) -> Decoder {
        let mut levels = Vec::with_capacity(depth);
        for (li, level) in (0..depth).rev().enumerate() {
            let skip_c = base << level;
            let in_c = (base << (level + 1)) + skip_c;
            levels.push(self.block(format!("{name}.level{li}"), in_c, skip_c));
        }
        let head = self.conv(format!("{name}.head"), base, head_channels);
        Decoder { levels, head }
    }
}

impl<S: Scalar> CascadedModel<S> {
    /// Build a freshly initialized model. The seed fixes every initial
    /// weight.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder::<S> {
            params: Vec::new(),
            names: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (depth, base) = (config.depth, config.base_channels);
        let order = config.descriptor_order;

        let stage1 = (order > 0).then(|| Stage {
            encoder: b.encoder("stage1.encoder", 1, depth, base),
            decoders: (0..order)
                .map(|d| b.decoder(&format!("stage1.decoder{d}"), depth, base, 1))
                .collect(),
        });
        let stage2_in = if order > 0 { order + 1 } else { 1 };
        let stage2 = Stage {
            encoder: b.encoder("stage2.encoder", stage2_in, depth, base),
            decoders: vec![b.decoder("stage2.decoder", depth, base, config.num_classes)],
        };

        Ok(Self { config: config.clone(), params: b.params, names: b.names, stage1, stage2 })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|t| t.numel()).sum()
    }

    pub fn parameters(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut Vec<Tensor<S>> {
        &mut self.params
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|t| t.numel()).collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    /// Replace parameters from named tensors (e.g. a checkpoint). Names
    /// and shapes must match the built architecture exactly.
    pub fn load_parameters(&mut self, tensors: Vec<(String, Tensor<S>)>) -> Result<(), ModelError> {
        if tensors.len() != self.params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (i, (name, tensor)) in tensors.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {i}: checkpoint name '{name}' vs model '{}'",
                    self.names[i]
                )));
            }
            if tensor.shape() != self.params[i].shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor '{name}': checkpoint shape {:?} vs model {:?}",
                    tensor.shape(),
                    self.params[i].shape()
                )));
            }
            self.params[i] = tensor;
        }
        Ok(())
    }

    /// Register every parameter as a leaf on a fresh tape.
    pub fn register_params(&self, graph: &mut Graph<S>, requires_grad: bool) -> Vec<TensorRef> {
        self.params.iter().map(|t| graph.leaf(t.clone(), requires_grad)).collect()
    }

    /// Run the cascade. `params` must come from [`Self::register_params`]
    /// on the same graph. The rng drives dropout in training mode only.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<S>,
        params: &[TensorRef],
        image: TensorRef,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutputs, ModelError> {
        let regressions = match &self.stage1 {
            Some(stage) => stage_forward(graph, params, stage, image, training, rng)?,
            None => Vec::new(),
        };
        let stage2_input = if regressions.is_empty() {
            image
        } else {
            let mut inputs = regressions.clone();
            inputs.push(image);
            graph.concat_channels(&inputs)?
        };
        let mut logits = stage_forward(graph, params, &self.stage2, stage2_input, training, rng)?;
        let posteriors = graph.softmax_channels(logits.pop().expect("stage 2 has one decoder"));
        Ok(ModelOutputs { regressions, posteriors })
    }

    /// Inference on one image: estimated descriptor maps plus class
    /// posteriors. Dropout is off; the pass is deterministic.
    pub fn predict(&self, image: &GrayImage) -> Result<(DescriptorMap, PosteriorMap), ModelError> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        if image.height != h || image.width != w {
            return Err(ModelError::ShapeMismatch(format!(
                "image {}x{} vs configured {}x{}",
                image.height, image.width, h, w
            )));
        }
        let mut graph: Graph<S> = Graph::new();
        let params = self.register_params(&mut graph, false);
        let image_leaf = graph.leaf(
            Tensor::from_vec(&[1, 1, h, w], image.pixels.iter().map(|&v| S::from_f64(v as f64)).collect()),
            false,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: dropout is off
        let outputs = self.forward(&mut graph, &params, image_leaf, false, &mut rng)?;

        let order = self.config.descriptor_order;
        let mut map_data = vec![0.0f32; h * w * order];
        for (n, &reg) in outputs.regressions.iter().enumerate() {
            let plane = graph.value(reg).data();
            for rc in 0..h * w {
                map_data[rc * order + n] = plane[rc].to_f64() as f32;
            }
        }
        let maps = DescriptorMap::from_vec(h, w, order, map_data);

        let post_value = graph.value(outputs.posteriors);
        let classes = self.config.num_classes;
        let post_data: Vec<f32> = post_value.data().iter().map(|&v| v.to_f64() as f32).collect();
        let posteriors = PosteriorMap::new(h, w, classes, post_data);
        Ok((maps, posteriors))
    }
}

/// Encoder + every decoder of one stage; returns one head output per
/// decoder (linear activation).
fn stage_forward<S: Scalar, R: Rng + ?Sized>(
    graph: &mut Graph<S>,
    params: &[TensorRef],
    stage: &Stage,
    input: TensorRef,
    training: bool,
    rng: &mut R,
) -> Result<Vec<TensorRef>, ModelError> {
    let conv_relu = |graph: &mut Graph<S>, ids: ConvIds, x: TensorRef| -> Result<TensorRef, ModelError> {
        let y = graph.conv2d(x, params[ids.weight], params[ids.bias])?;
        Ok(graph.relu(y))
    };
    let block = |graph: &mut Graph<S>, b: &Block, x: TensorRef| -> Result<TensorRef, ModelError> {
        let y = conv_relu(graph, b.convs[0], x)?;
        conv_relu(graph, b.convs[1], y)
    };

    let mut skips = Vec::with_capacity(stage.encoder.levels.len());
    let mut x = input;
    for level in &stage.encoder.levels {
        x = block(graph, level, x)?;
        skips.push(x);
        x = graph.maxpool2(x)?;
    }
    x = block(graph, &stage.encoder.bottleneck, x)?;
    x = graph.dropout(x, DROPOUT_RATE, training, rng);

    let mut outputs = Vec::with_capacity(stage.decoders.len());
    for decoder in &stage.decoders {
        let mut d = x;
        for (li, level) in decoder.levels.iter().enumerate() {
            d = graph.upsample2(d)?;
            let skip = skips[skips.len() - 1 - li];
            d = graph.concat_channels(&[d, skip])?;
            d = block(graph, level, d)?;
        }
        // Linear head: no activation.
        outputs.push(graph.conv2d(d, params[decoder.head.weight], params[decoder.head.bias])?);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(order: usize) -> NetworkConfig {
        NetworkConfig {
            depth: 2,
            base_channels: 4,
            num_classes: 2,
            descriptor_order: order,
            input_height: 16,
            input_width: 32,
        }
    }

    /// Parameters of one U-Net (encoder + one decoder + head) from the
    /// channel ladder, counted independently of the builder.
    fn unet_param_count(depth: usize, base: usize, in_c: usize, head_c: usize) -> usize {
        let conv = |ic: usize, oc: usize| ic * oc * 9 + oc;
        let mut total = 0;
        let mut ch = in_c;
        for level in 0..depth {
            let out = base << level;
            total += conv(ch, out) + conv(out, out);
            ch = out;
        }
        total += conv(ch, base << depth) + conv(base << depth, base << depth);
        for level in (0..depth).rev() {
            let skip = base << level;
            total += conv((base << (level + 1)) + skip, skip) + conv(skip, skip);
        }
        total + conv(base, head_c)
    }

    #[test]
    fn baseline_is_single_unet_by_parameter_count() {
        let model = CascadedModel::<f32>::build(&tiny_config(0), 1).unwrap();
        assert_eq!(model.parameter_count(), unet_param_count(2, 4, 1, 2));
    }

    #[test]
    fn cascaded_parameter_count_formula() {
        let model = CascadedModel::<f32>::build(&tiny_config(2), 1).unwrap();
        // Stage 1: encoder & bottleneck + 2 decoders; stage 2: full U-Net
        // with 3 input channels.
        let conv = |ic: usize, oc: usize| ic * oc * 9 + oc;
        let (depth, base) = (2usize, 4usize);
        let mut stage1 = 0;
        let mut ch = 1;
        for level in 0..depth {
            let out = base << level;
            stage1 += conv(ch, out) + conv(out, out);
            ch = out;
        }
        stage1 += conv(ch, base << depth) + conv(base << depth, base << depth);
        let mut decoder = 0;
        for level in (0..depth).rev() {
            let skip = base << level;
            decoder += conv((base << (level + 1)) + skip, skip) + conv(skip, skip);
        }
        decoder += conv(base, 1);
        let expected = stage1 + 2 * decoder + unet_param_count(depth, base, 3, 2);
        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn stage2_receives_order_plus_one_channels() {
        let model = CascadedModel::<f32>::build(&tiny_config(1), 3).unwrap();
        // First stage-2 conv weight has order + 1 input channels.
        let first_stage2 = model
            .names
            .iter()
            .position(|n| n == "stage2.encoder.level0.conv0.weight")
            .unwrap();
        assert_eq!(model.params[first_stage2].shape()[1], 2);
    }

    #[test]
    fn forward_on_zero_image_is_finite_and_normalized() {
        let cfg = tiny_config(1);
        let model = CascadedModel::<f32>::build(&cfg, 7).unwrap();
        let image = GrayImage::new(16, 32);
        let (maps, post) = model.predict(&image).unwrap();
        assert_eq!(maps.height, 16);
        assert_eq!(maps.order, 1);
        for rc in 0..16 * 32 {
            let mut sum = 0.0f64;
            for c in 0..2 {
                let v = post.class_plane(c)[rc] as f64;
                assert!(v.is_finite() && v > 0.0 && v < 1.0);
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-6);
        }
        for &v in maps.data() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn predict_is_deterministic() {
        let cfg = tiny_config(1);
        let model = CascadedModel::<f32>::build(&cfg, 7).unwrap();
        let mut image = GrayImage::new(16, 32);
        for (i, p) in image.pixels.iter_mut().enumerate() {
            *p = (i % 7) as f32 / 7.0;
        }
        let (m1, p1) = model.predict(&image).unwrap();
        let (m2, p2) = model.predict(&image).unwrap();
        assert_eq!(m1.data(), m2.data());
        assert_eq!(p1.class_plane(1), p2.class_plane(1));
    }

    #[test]
    fn predict_rejects_wrong_size() {
        let model = CascadedModel::<f32>::build(&tiny_config(1), 1).unwrap();
        assert!(model.predict(&GrayImage::new(8, 32)).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let a = CascadedModel::<f32>::build(&tiny_config(1), 11).unwrap();
        let b = CascadedModel::<f32>::build(&tiny_config(1), 11).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.data(), y.data());
        }
        let c = CascadedModel::<f32>::build(&tiny_config(1), 12).unwrap();
        assert!(a.params[0].data() != c.params[0].data());
    }

    #[test]
    fn checkpoint_roundtrip_through_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fnck");
        let model = CascadedModel::<f32>::build(&tiny_config(1), 5).unwrap();
        crate::autodiff::write_checkpoint(&path, &model.named_parameters()).unwrap();
        let mut fresh = CascadedModel::<f32>::build(&tiny_config(1), 99).unwrap();
        fresh.load_parameters(crate::autodiff::read_checkpoint(&path).unwrap()).unwrap();
        for (a, b) in model.params.iter().zip(&fresh.params) {
            assert_eq!(a.data(), b.data());
        }
    }
}
