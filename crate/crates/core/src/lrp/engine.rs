//! Full-network relevance propagation.

use serde::{Deserialize, Serialize};

use super::quantize::{AttributionMap, QuantizeMode};
use super::rules::{lrp_conv, lrp_gap, lrp_linear, lrp_maxpool, passthrough, LayerRule};
use super::split::{split_relevance, Splitting};
use crate::error::{Error, Result};
use crate::model::exec::{forward_traced, BlockTrace, NodeTrace};
use crate::model::graph::{BottleneckSpec, ModelGraph, NodePath, NodeSpec, SkipSpec};
use crate::model::image::ImageSample;
use crate::tensor::{Relevance, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Zplus,
    Epsilon,
    /// ε in the head and in blocks at or past the boundary, z⁺ everywhere else.
    Mixture,
}

/// Which rules run where, how merges split, and how the map is quantized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub rule: RuleKind,
    pub epsilon: f64,
    pub mixture_boundary: usize,
    pub splitting: Splitting,
    pub include_identity: bool,
    pub quantize: QuantizeMode,
    pub bins: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            rule: RuleKind::Zplus,
            epsilon: 1e-6,
            mixture_boundary: 8,
            splitting: Splitting::Ratio,
            include_identity: true,
            quantize: QuantizeMode::Paper,
            bins: 8,
        }
    }
}

/// Part of the network a layer belongs to, for rule selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Stem,
    Block(usize),
    Head,
}

impl RuleConfig {
    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if self.rule != RuleKind::Zplus && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.rule == RuleKind::Mixture && self.mixture_boundary > num_blocks {
            return Err(Error::InvalidConfig(format!(
                "mixture boundary {} exceeds the {num_blocks} blocks of this model",
                self.mixture_boundary
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidConfig("bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layer_rule(&self, stage: Stage) -> LayerRule {
        let eps = LayerRule::Epsilon(self.epsilon);
        match (self.rule, stage) {
            (RuleKind::Zplus, _) => LayerRule::ZPlus,
            (RuleKind::Epsilon, _) => eps,
            (RuleKind::Mixture, Stage::Head) => eps,
            (RuleKind::Mixture, Stage::Block(b)) if b >= self.mixture_boundary => eps,
            (RuleKind::Mixture, _) => LayerRule::ZPlus,
        }
    }

    /// True when every layer runs z⁺, so relevance must be conserved exactly.
    pub fn is_conserving(&self) -> bool {
        self.rule == RuleKind::Zplus
    }
}

/// Relevance at the network input plus the sums recorded on the way down.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceState {
    pub current: Relevance,
    pub checkpoint_sums: Vec<(String, f64)>,
}

impl RelevanceState {
    fn record(&mut self, label: impl Into<String>, r: &Relevance) {
        self.checkpoint_sums.push((label.into(), r.sum()));
    }

    pub fn checkpoint(&self, label: &str) -> Option<f64> {
        self.checkpoint_sums
            .iter()
            .find_map(|(l, s)| (l == label).then_some(*s))
    }
}

/// Result of explaining one image.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub map: AttributionMap,
    pub state: RelevanceState,
    pub class: usize,
    /// Predicted probability of `class`, the total relevance injected at the top.
    pub p_c: f64,
    pub probs: Tensor,
}

/// Initial relevance: `probs[c]` at index `c`, zero elsewhere.
pub fn seed_relevance(probs: &Tensor, class: usize) -> Result<Relevance> {
    if class >= probs.len() {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: probs.len(),
        });
    }
    let mut r = Relevance::zeros(&[probs.len()])?;
    r.data_mut()[class] = probs.data()[class] as f64;
    Ok(r)
}

fn backward_node(
    graph: &ModelGraph,
    node: &NodeSpec,
    trace: &NodeTrace,
    r: &Relevance,
    rule: LayerRule,
) -> Result<Relevance> {
    let h = &trace.input;
    match node {
        NodeSpec::Conv(c) => lrp_conv(h, graph.tensor(&c.weight)?, c.stride, c.padding, r, rule),
        NodeSpec::Bn(_) | NodeSpec::Relu => {
            r.expect_shape("passthrough", "relevance", h.shape())?;
            Ok(passthrough(r))
        }
        NodeSpec::Maxpool(_) => {
            let idx = trace
                .pool
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing cached pool indices".into()))?;
            lrp_maxpool(idx, r, h.shape())
        }
        NodeSpec::Gap => lrp_gap(h, r, rule),
        NodeSpec::Fc(f) => lrp_linear(h, graph.tensor(&f.weight)?, r, rule),
        NodeSpec::Softmax => Err(Error::InvalidConfig(
            "relevance is seeded below softmax, not propagated through it".into(),
        )),
    }
}

fn backward_chain(
    graph: &ModelGraph,
    nodes: &[NodeSpec],
    traces: &[NodeTrace],
    mut r: Relevance,
    rule: LayerRule,
    path: impl Fn(usize) -> NodePath,
) -> Result<Relevance> {
    if traces.len() != nodes.len() {
        return Err(Error::InvalidConfig(format!(
            "missing cached activation: {} nodes but {} cached inputs",
            nodes.len(),
            traces.len()
        ))
        .in_layer(path(traces.len().min(nodes.len())).to_string()));
    }
    for (i, (node, trace)) in nodes.iter().zip(traces).enumerate().rev() {
        r = backward_node(graph, node, trace, &r, rule)
            .map_err(|e| e.in_layer(format!("{} ({})", path(i), node.kind())))?;
    }
    Ok(r)
}

/// Relevance from a Bottleneck's output back to its input.
///
/// The post-merge ReLU passes relevance through, the merge splits it between
/// skip and main path, each path is propagated separately and the two
/// input-side relevances are added.
pub fn propagate_bottleneck(
    graph: &ModelGraph,
    index: usize,
    block: &BottleneckSpec,
    cached: &BlockTrace,
    r_out: &Relevance,
    config: &RuleConfig,
) -> Result<Relevance> {
    let rule = config.layer_rule(Stage::Block(index));
    let r = passthrough(r_out);
    let (r_s, r_m) = split_relevance(
        &r,
        &cached.h_s,
        &cached.h_m,
        config.splitting,
        config.include_identity,
        block.skip.is_identity(),
    )
    .map_err(|e| e.in_layer(NodePath::BlockMerge(index).to_string()))?;

    let main = backward_chain(graph, &block.main, &cached.main, r_m, rule, |i| {
        NodePath::BlockMain(index, i)
    })?;
    let skip = match &block.skip {
        SkipSpec::Identity => r_s,
        SkipSpec::Projection { conv, .. } => {
            let r_bn = passthrough(&r_s);
            lrp_conv(
                &cached.input,
                graph.tensor(&conv.weight)?,
                conv.stride,
                conv.padding,
                &r_bn,
                rule,
            )
            .map_err(|e| e.in_layer(NodePath::BlockSkipConv(index).to_string()))?
        }
    };
    main.add(&skip)
}

pub fn block_input_label(index: usize) -> String {
    format!("block{index}.input")
}

pub const SEED_LABEL: &str = "seed";
pub const INPUT_LABEL: &str = "input";

/// Explains `class` (or the predicted class when `None`) for a normalised input tensor.
pub fn explain_input(
    graph: &ModelGraph,
    input: &Tensor,
    class: Option<usize>,
    config: &RuleConfig,
) -> Result<Explanation> {
    config.validate(graph.blocks.len())?;
    let trace = forward_traced(graph, input)?;
    let class = class.unwrap_or_else(|| trace.predicted_class());
    let seed = seed_relevance(&trace.probs, class)?;
    let p_c = seed.data()[class];

    let mut state = RelevanceState {
        current: seed.clone(),
        checkpoint_sums: Vec::new(),
    };
    state.record(SEED_LABEL, &seed);

    let n_head = graph.head.len() - 1;
    let mut r = backward_chain(
        graph,
        &graph.head[..n_head],
        &trace.head[..n_head],
        seed,
        config.layer_rule(Stage::Head),
        NodePath::Head,
    )?;
    for (b, (block, cached)) in graph.blocks.iter().zip(&trace.blocks).enumerate().rev() {
        r = propagate_bottleneck(graph, b, block, cached, &r, config)?;
        state.record(block_input_label(b), &r);
    }
    r = backward_chain(
        graph,
        &graph.stem,
        &trace.stem,
        r,
        config.layer_rule(Stage::Stem),
        NodePath::Stem,
    )?;
    state.record(INPUT_LABEL, &r);

    let map = AttributionMap::from_relevance(&r, config.quantize, config.bins)?;
    state.current = r;
    Ok(Explanation {
        map,
        state,
        class,
        p_c,
        probs: trace.probs,
    })
}

/// Explains an image sample; see [`explain_input`].
pub fn explain(
    graph: &ModelGraph,
    sample: &ImageSample,
    class: Option<usize>,
    config: &RuleConfig,
) -> Result<Explanation> {
    explain_input(graph, &sample.normalized, class, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_toy_resnet;
    use crate::model::graph::{BnSpec, ConvSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_image(seed: u64, hw: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![3, hw, hw],
            (0..3 * hw * hw).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn seed_cases() {
        let p = Tensor::from_slice(&[2], &[0.5, 0.5]).unwrap();
        assert_eq!(seed_relevance(&p, 0).unwrap().data(), &[0.5, 0.0]);
        let p = Tensor::from_slice(&[2], &[0.9, 0.1]).unwrap();
        assert_eq!(seed_relevance(&p, 1).unwrap().data(), &[0.0, 0.1f32 as f64]);
        assert!(matches!(
            seed_relevance(&p, 2),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn toy_conservation_all_checkpoints() {
        let g = generate_toy_resnet(5, 4, 3, 5, 8).unwrap();
        for s in 0..5 {
            let e = explain_input(&g, &random_image(s, 8), None, &RuleConfig::default()).unwrap();
            assert_eq!(e.state.checkpoint_sums.len(), 5);
            for (label, sum) in &e.state.checkpoint_sums {
                assert!(
                    ((sum - e.p_c) / e.p_c).abs() < 1e-5,
                    "{label}: {sum} vs {}",
                    e.p_c
                );
            }
        }
    }

    #[test]
    fn epsilon_rule_drifts() {
        let g = generate_toy_resnet(5, 4, 2, 5, 8).unwrap();
        let cfg = RuleConfig {
            rule: RuleKind::Epsilon,
            epsilon: 0.1,
            ..RuleConfig::default()
        };
        let e = explain_input(&g, &random_image(1, 8), None, &cfg).unwrap();
        let input = e.state.checkpoint(INPUT_LABEL).unwrap();
        assert!(input.is_finite());
        assert!((input - e.p_c).abs() > 0.0);
    }

    #[test]
    fn mixture_rule_selection() {
        let cfg = RuleConfig {
            rule: RuleKind::Mixture,
            mixture_boundary: 2,
            epsilon: 0.01,
            ..RuleConfig::default()
        };
        assert_eq!(cfg.layer_rule(Stage::Stem), LayerRule::ZPlus);
        assert_eq!(cfg.layer_rule(Stage::Block(1)), LayerRule::ZPlus);
        assert_eq!(cfg.layer_rule(Stage::Block(2)), LayerRule::Epsilon(0.01));
        assert_eq!(cfg.layer_rule(Stage::Head), LayerRule::Epsilon(0.01));
        assert!(cfg.validate(1).is_err());
        assert!(cfg.validate(2).is_ok());
    }

    /// Single S-Bottleneck whose main path is one conv with `main_weight`.
    fn single_block(main_weight: Vec<f32>, c: usize) -> (ModelGraph, BlockTrace) {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "w".to_string(),
            Tensor::new(vec![c, c, 1, 1], main_weight).unwrap(),
        );
        let block = BottleneckSpec {
            main: vec![NodeSpec::Conv(ConvSpec {
                weight: "w".into(),
                bias: None,
                stride: 1,
                padding: 0,
            })],
            skip: SkipSpec::Identity,
            post_merge_relu: true,
        };
        let graph = ModelGraph {
            preprocess: Default::default(),
            input_shape: None,
            stem: vec![],
            blocks: vec![block],
            head: vec![],
            num_classes: 1,
            tensors,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Tensor::new(
            vec![c, 3, 3],
            (0..c * 9).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let h_m = crate::ops::conv2d_forward(&x, graph.tensor("w").unwrap(), None, 1, 0).unwrap();
        let trace = BlockTrace {
            input: x.clone(),
            main: vec![NodeTrace {
                input: x.clone(),
                pool: None,
            }],
            h_m,
            h_s: x,
        };
        (graph, trace)
    }

    fn rel(c: usize, seed: u64) -> Relevance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Relevance::new(
            vec![c, 3, 3],
            (0..c * 9).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_main_path_leaves_relevance_on_skip() {
        let (g, t) = single_block(vec![0.0; 4], 2);
        let r = rel(2, 1);
        let out =
            propagate_bottleneck(&g, 0, &g.blocks[0], &t, &r, &RuleConfig::default()).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn symmetric_identity_block_conserves() {
        let (g, t) = single_block(vec![0.3, -0.2, 0.4, 0.1], 2);
        let r = rel(2, 2);
        let cfg = RuleConfig {
            splitting: Splitting::Symmetric,
            ..RuleConfig::default()
        };
        let out = propagate_bottleneck(&g, 0, &g.blocks[0], &t, &r, &cfg).unwrap();
        assert!(((out.sum() - r.sum()) / r.sum()).abs() < 1e-6);
    }

    #[test]
    fn excluded_identity_equals_main_path_only() {
        let (g, t) = single_block(vec![0.3, -0.2, 0.4, 0.1], 2);
        let r = rel(2, 3);
        let cfg = RuleConfig {
            include_identity: false,
            ..RuleConfig::default()
        };
        let out = propagate_bottleneck(&g, 0, &g.blocks[0], &t, &r, &cfg).unwrap();
        let main_only =
            lrp_conv(&t.input, g.tensor("w").unwrap(), 1, 0, &r, LayerRule::ZPlus).unwrap();
        assert_eq!(out, main_only);
    }

    #[test]
    fn projection_skip_is_propagated() {
        let (mut g, mut t) = single_block(vec![0.3, -0.2, 0.4, 0.1], 2);
        for (name, v) in [
            ("pw", vec![0.5, 0.1, -0.3, 0.7]),
            ("g", vec![1.0; 2]),
            ("b", vec![0.0; 2]),
            ("m", vec![0.0; 2]),
            ("v", vec![1.0; 2]),
        ] {
            let shape = if name == "pw" {
                vec![2, 2, 1, 1]
            } else {
                vec![2]
            };
            g.tensors
                .insert(name.into(), Tensor::new(shape, v).unwrap());
        }
        g.blocks[0].skip = SkipSpec::Projection {
            conv: ConvSpec {
                weight: "pw".into(),
                bias: None,
                stride: 1,
                padding: 0,
            },
            bn: BnSpec {
                gamma: "g".into(),
                beta: "b".into(),
                mean: "m".into(),
                var: "v".into(),
                eps: 1e-5,
            },
        };
        t.h_s = crate::ops::conv2d_forward(&t.input, g.tensor("pw").unwrap(), None, 1, 0).unwrap();
        let r = rel(2, 4);
        // Projection skips split even when identity skips are excluded.
        let cfg = RuleConfig {
            include_identity: false,
            ..RuleConfig::default()
        };
        let out = propagate_bottleneck(&g, 0, &g.blocks[0], &t, &r, &cfg).unwrap();
        assert!(((out.sum() - r.sum()) / r.sum()).abs() < 1e-6);
        let main_only =
            lrp_conv(&t.input, g.tensor("w").unwrap(), 1, 0, &r, LayerRule::ZPlus).unwrap();
        assert_ne!(out, main_only);
    }

    #[test]
    fn missing_cache_is_an_error() {
        let (g, mut t) = single_block(vec![0.3, -0.2, 0.4, 0.1], 2);
        t.main.clear();
        let r = rel(2, 5);
        let err =
            propagate_bottleneck(&g, 0, &g.blocks[0], &t, &r, &RuleConfig::default()).unwrap_err();
        assert!(
            err.to_string().contains("missing cached activation"),
            "{err}"
        );
    }

    #[test]
    fn class_out_of_range() {
        let g = generate_toy_resnet(1, 4, 1, 3, 4).unwrap();
        assert!(explain_input(&g, &random_image(0, 4), Some(3), &RuleConfig::default()).is_err());
    }
}
