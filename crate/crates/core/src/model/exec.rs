//! Forward execution, optionally caching every activation the relevance pass needs.

use super::graph::{BottleneckSpec, ModelGraph, NodePath, NodeSpec, SkipSpec};
use crate::error::Result;
use crate::ops;
use crate::tensor::{PoolIndices, Tensor};

/// Input to a single node, plus max-pool winners when the node pools.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub input: Tensor,
    pub pool: Option<PoolIndices>,
}

/// Cached activations of one Bottleneck.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub input: Tensor,
    /// Input of each main-path node, in forward order.
    pub main: Vec<NodeTrace>,
    /// Main-path output before the merge.
    pub h_m: Tensor,
    /// Skip-path output before the merge.
    pub h_s: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub stem: Vec<NodeTrace>,
    pub blocks: Vec<BlockTrace>,
    pub head: Vec<NodeTrace>,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        argmax(self.probs.data())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn apply(graph: &ModelGraph, node: &NodeSpec, x: &Tensor) -> Result<(Tensor, Option<PoolIndices>)> {
    Ok(match node {
        NodeSpec::Conv(c) => {
            let bias = c.bias.as_deref().map(|b| graph.tensor(b)).transpose()?;
            (
                ops::conv2d_forward(x, graph.tensor(&c.weight)?, bias, c.stride, c.padding)?,
                None,
            )
        }
        NodeSpec::Bn(b) => (ops::bn_forward(x, graph.bn_params(b)?)?, None),
        NodeSpec::Relu => (ops::relu_forward(x), None),
        NodeSpec::Maxpool(p) => {
            let (y, idx) = ops::maxpool_forward(x, p.k, p.stride, p.padding)?;
            (y, Some(idx))
        }
        NodeSpec::Gap => (ops::gap_forward(x)?, None),
        NodeSpec::Fc(f) => {
            let bias = f.bias.as_deref().map(|b| graph.tensor(b)).transpose()?;
            (ops::fc_forward(x, graph.tensor(&f.weight)?, bias)?, None)
        }
        NodeSpec::Softmax => (ops::softmax(x)?, None),
    })
}

fn run_chain(
    graph: &ModelGraph,
    nodes: &[NodeSpec],
    mut x: Tensor,
    path: impl Fn(usize) -> NodePath,
    trace: Option<&mut Vec<NodeTrace>>,
) -> Result<Tensor> {
    let mut cache = trace;
    for (i, node) in nodes.iter().enumerate() {
        let (y, pool) = apply(graph, node, &x)
            .map_err(|e| e.in_layer(format!("{} ({})", path(i), node.kind())))?;
        if let Some(c) = cache.as_deref_mut() {
            c.push(NodeTrace { input: x, pool });
        }
        x = y;
    }
    Ok(x)
}

fn run_block(
    graph: &ModelGraph,
    b: usize,
    block: &BottleneckSpec,
    input: Tensor,
    keep: bool,
) -> Result<(Tensor, Option<BlockTrace>)> {
    let mut main_trace = Vec::new();
    let h_m = run_chain(
        graph,
        &block.main,
        input.clone(),
        |i| NodePath::BlockMain(b, i),
        keep.then_some(&mut main_trace),
    )?;
    let h_s = match &block.skip {
        SkipSpec::Identity => input.clone(),
        SkipSpec::Projection { conv, bn } => {
            let bias = conv.bias.as_deref().map(|n| graph.tensor(n)).transpose()?;
            let s = ops::conv2d_forward(
                &input,
                graph.tensor(&conv.weight)?,
                bias,
                conv.stride,
                conv.padding,
            )
            .map_err(|e| e.in_layer(NodePath::BlockSkipConv(b).to_string()))?;
            ops::bn_forward(&s, graph.bn_params(bn)?)
                .map_err(|e| e.in_layer(NodePath::BlockSkipBn(b).to_string()))?
        }
    };
    h_s.expect_shape("merge", "skip output", h_m.shape())
        .map_err(|e| e.in_layer(NodePath::BlockMerge(b).to_string()))?;
    let merged: Vec<f32> = h_m
        .data()
        .iter()
        .zip(h_s.data())
        .map(|(m, s)| m + s)
        .collect();
    let mut out = Tensor::new(h_m.shape().to_vec(), merged)?;
    if block.post_merge_relu {
        out = ops::relu_forward(&out);
    }
    let trace = keep.then_some(BlockTrace {
        input,
        main: main_trace,
        h_m,
        h_s,
    });
    Ok((out, trace))
}

fn check_input(graph: &ModelGraph, input: &Tensor) -> Result<()> {
    match graph.input_shape {
        Some(shape) => input.expect_shape("forward", "input", &shape),
        None => input.chw("forward").map(|_| ()),
    }
}

/// Class probabilities for an already-normalised input.
pub fn forward(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    check_input(graph, input)?;
    let mut x = run_chain(graph, &graph.stem, input.clone(), NodePath::Stem, None)?;
    for (b, block) in graph.blocks.iter().enumerate() {
        x = run_block(graph, b, block, x, false)?.0;
    }
    run_chain(graph, &graph.head, x, NodePath::Head, None)
}

/// Forward pass retaining every node input.
pub fn forward_traced(graph: &ModelGraph, input: &Tensor) -> Result<ForwardTrace> {
    check_input(graph, input)?;
    let mut stem = Vec::with_capacity(graph.stem.len());
    let mut x = run_chain(
        graph,
        &graph.stem,
        input.clone(),
        NodePath::Stem,
        Some(&mut stem),
    )?;
    let mut blocks = Vec::with_capacity(graph.blocks.len());
    for (b, block) in graph.blocks.iter().enumerate() {
        let (y, t) = run_block(graph, b, block, x, true)?;
        blocks.extend(t);
        x = y;
    }
    let mut head = Vec::with_capacity(graph.head.len());
    let probs = run_chain(graph, &graph.head, x, NodePath::Head, Some(&mut head))?;
    let logits = head
        .last()
        .map(|t| t.input.clone())
        .expect("validated head ends with softmax");
    Ok(ForwardTrace {
        stem,
        blocks,
        head,
        logits,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::generate_toy_resnet;

    #[test]
    fn declared_input_shape_is_enforced() {
        let mut g = generate_toy_resnet(1, 2, 1, 3, 4).unwrap();
        let wrong = Tensor::zeros(&[3, 5, 5]).unwrap();
        assert!(forward(&g, &wrong).is_err());
        assert!(forward_traced(&g, &wrong).is_err());
        g.input_shape = None;
        assert_eq!(forward(&g, &wrong).unwrap().len(), 3);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn trace_records_every_layer_input() {
        let g = generate_toy_resnet(2, 2, 2, 3, 4).unwrap();
        let x = Tensor::filled(&[3, 4, 4], 0.5).unwrap();
        let t = forward_traced(&g, &x).unwrap();
        assert_eq!(t.stem.len(), g.stem.len());
        assert_eq!(t.blocks.len(), 2);
        assert!(t
            .blocks
            .iter()
            .zip(&g.blocks)
            .all(|(bt, b)| bt.main.len() == b.main.len()));
        assert_eq!(t.probs, forward(&g, &x).unwrap());
    }
}
