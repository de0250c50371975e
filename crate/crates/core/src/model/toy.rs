//! Seeded miniature ResNets for desk-scale experiments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{
    BnSpec, BottleneckSpec, ConvSpec, FcSpec, ModelGraph, NodeSpec, PoolSpec, Preprocess, SkipSpec,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Builder {
    rng: ChaCha8Rng,
    tensors: BTreeMap<String, Tensor>,
}

impl Builder {
    fn uniform(&mut self, name: &str, shape: &[usize]) -> String {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-0.5f32..=0.5)).collect();
        self.tensors.insert(
            name.to_string(),
            Tensor::new(shape.to_vec(), data).expect("positive extents"),
        );
        name.to_string()
    }

    fn constant(&mut self, name: &str, len: usize, value: f32) -> String {
        self.tensors.insert(
            name.to_string(),
            Tensor::filled(&[len], value).expect("positive extent"),
        );
        name.to_string()
    }

    fn conv(&mut self, prefix: &str, c_out: usize, c_in: usize, k: usize) -> ConvSpec {
        ConvSpec {
            weight: self.uniform(&format!("{prefix}.w"), &[c_out, c_in, k, k]),
            bias: None,
            stride: 1,
            padding: k / 2,
        }
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnSpec {
        BnSpec {
            gamma: self.constant(&format!("{prefix}.gamma"), c, 1.0),
            beta: self.constant(&format!("{prefix}.beta"), c, 0.0),
            mean: self.constant(&format!("{prefix}.mean"), c, 0.0),
            var: self.constant(&format!("{prefix}.var"), c, 1.0),
            eps: 1e-5,
        }
    }
}

/// Builds a seeded ResNet in the ResNet50 mould, scaled down.
///
/// Stem: 3×3 conv → bn → relu → 3×3/stride-1 max-pool (overlapping windows).
/// Block 0 is a D-Bottleneck widening `channels` to `2·channels` through a
/// conv+bn projection; every later block is an S-Bottleneck. Each main path
/// is 1×1 → 3×3 → 1×1 conv with bn, and relu between. Head: GAP → fc → softmax.
/// Conv and fc weights (and the fc bias) are uniform in [−0.5, 0.5]; bn layers
/// start as identity (gamma 1, beta 0, mean 0, var 1).
pub fn generate_toy_resnet(
    seed: u64,
    channels: usize,
    blocks: usize,
    num_classes: usize,
    input_hw: usize,
) -> Result<ModelGraph> {
    if channels == 0 || blocks == 0 || num_classes == 0 || input_hw == 0 {
        return Err(Error::InvalidConfig(
            "toy resnet needs channels, blocks, num_classes and input_hw all ≥ 1".into(),
        ));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        tensors: BTreeMap::new(),
    };
    let width = 2 * channels;

    let stem = vec![
        NodeSpec::Conv(b.conv("stem.conv", channels, 3, 3)),
        NodeSpec::Bn(b.bn("stem.bn", channels)),
        NodeSpec::Relu,
        NodeSpec::Maxpool(PoolSpec {
            k: 3,
            stride: 1,
            padding: 1,
        }),
    ];

    let mut specs = Vec::with_capacity(blocks);
    for i in 0..blocks {
        let c_in = if i == 0 { channels } else { width };
        let p = format!("block{i}");
        let main = vec![
            NodeSpec::Conv(b.conv(&format!("{p}.conv1"), channels, c_in, 1)),
            NodeSpec::Bn(b.bn(&format!("{p}.bn1"), channels)),
            NodeSpec::Relu,
            NodeSpec::Conv(b.conv(&format!("{p}.conv2"), channels, channels, 3)),
            NodeSpec::Bn(b.bn(&format!("{p}.bn2"), channels)),
            NodeSpec::Relu,
            NodeSpec::Conv(b.conv(&format!("{p}.conv3"), width, channels, 1)),
            NodeSpec::Bn(b.bn(&format!("{p}.bn3"), width)),
        ];
        let skip = if i == 0 {
            SkipSpec::Projection {
                conv: b.conv(&format!("{p}.proj"), width, c_in, 1),
                bn: b.bn(&format!("{p}.proj_bn"), width),
            }
        } else {
            SkipSpec::Identity
        };
        specs.push(BottleneckSpec {
            main,
            skip,
            post_merge_relu: true,
        });
    }

    let head = vec![
        NodeSpec::Gap,
        NodeSpec::Fc(FcSpec {
            weight: b.uniform("fc.w", &[num_classes, width]),
            bias: Some(b.uniform("fc.b", &[num_classes])),
        }),
        NodeSpec::Softmax,
    ];

    let graph = ModelGraph {
        preprocess: Preprocess {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        },
        input_shape: Some([3, input_hw, input_hw]),
        stem,
        blocks: specs,
        head,
        num_classes,
        tensors: b.tensors,
    };
    graph.validate()?;
    Ok(graph)
}
