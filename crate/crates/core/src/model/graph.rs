use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{output_extent, BatchNormParams};
use crate::tensor::Tensor;

/// Per-channel input normalisation: `(x/255 − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub weight: String,
    #[serde(default)]
    pub bias: Option<String>,
    pub stride: usize,
    pub padding: usize,
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnSpec {
    pub gamma: String,
    pub beta: String,
    pub mean: String,
    pub var: String,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    pub weight: String,
    #[serde(default)]
    pub bias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeSpec {
    Conv(ConvSpec),
    Bn(BnSpec),
    Relu,
    Maxpool(PoolSpec),
    Gap,
    Fc(FcSpec),
    Softmax,
}

impl NodeSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeSpec::Conv(_) => "conv",
            NodeSpec::Bn(_) => "bn",
            NodeSpec::Relu => "relu",
            NodeSpec::Maxpool(_) => "maxpool",
            NodeSpec::Gap => "gap",
            NodeSpec::Fc(_) => "fc",
            NodeSpec::Softmax => "softmax",
        }
    }

    fn tensor_refs(&self) -> Vec<&str> {
        match self {
            NodeSpec::Conv(c) => c.tensor_refs(),
            NodeSpec::Bn(b) => b.tensor_refs(),
            NodeSpec::Fc(f) => std::iter::once(f.weight.as_str())
                .chain(f.bias.as_deref())
                .collect(),
            _ => Vec::new(),
        }
    }
}

impl ConvSpec {
    fn tensor_refs(&self) -> Vec<&str> {
        std::iter::once(self.weight.as_str())
            .chain(self.bias.as_deref())
            .collect()
    }
}

impl BnSpec {
    fn tensor_refs(&self) -> Vec<&str> {
        vec![&self.gamma, &self.beta, &self.mean, &self.var]
    }
}

/// Skip branch of a Bottleneck: identity (S-Bottleneck) or conv+bn projection (D-Bottleneck).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SkipSpec {
    Identity,
    Projection { conv: ConvSpec, bn: BnSpec },
}

impl SkipSpec {
    pub fn is_identity(&self) -> bool {
        matches!(self, SkipSpec::Identity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    pub main: Vec<NodeSpec>,
    pub skip: SkipSpec,
    pub post_merge_relu: bool,
}

/// Where a node sits in the graph; used to label errors and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePath {
    Stem(usize),
    BlockMain(usize, usize),
    BlockSkipConv(usize),
    BlockSkipBn(usize),
    BlockMerge(usize),
    Head(usize),
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodePath::Stem(i) => write!(f, "stem[{i}]"),
            NodePath::BlockMain(b, i) => write!(f, "blocks[{b}].main[{i}]"),
            NodePath::BlockSkipConv(b) => write!(f, "blocks[{b}].skip.conv"),
            NodePath::BlockSkipBn(b) => write!(f, "blocks[{b}].skip.bn"),
            NodePath::BlockMerge(b) => write!(f, "blocks[{b}].merge"),
            NodePath::Head(i) => write!(f, "head[{i}]"),
        }
    }
}

/// A validated residual CNN: stem, Bottleneck blocks, head ending in fc → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub preprocess: Preprocess,
    /// Declared C×H×W input. When absent, spatial extents are checked at run time.
    pub input_shape: Option<[usize; 3]>,
    pub stem: Vec<NodeSpec>,
    pub blocks: Vec<BottleneckSpec>,
    pub head: Vec<NodeSpec>,
    pub num_classes: usize,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Symbolic activation shape used while validating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SymShape {
    Chw(usize, Option<(usize, usize)>),
    Flat(usize),
}

impl SymShape {
    fn describe(&self) -> String {
        match self {
            SymShape::Chw(c, Some((h, w))) => format!("{c}×{h}×{w}"),
            SymShape::Chw(c, None) => format!("{c}×?×?"),
            SymShape::Flat(n) => format!("{n}"),
        }
    }
}

fn invalid(path: NodePath, kind: &str, reason: impl Into<String>) -> Error {
    Error::InvalidGraph {
        node: format!("{path} ({kind})"),
        reason: reason.into(),
    }
}

impl ModelGraph {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnresolvedTensor(name.to_string()))
    }

    pub(crate) fn bn_params(&self, spec: &BnSpec) -> Result<BatchNormParams<'_>> {
        Ok(BatchNormParams {
            gamma: self.tensor(&spec.gamma)?,
            beta: self.tensor(&spec.beta)?,
            mean: self.tensor(&spec.mean)?,
            var: self.tensor(&spec.var)?,
            eps: spec.eps,
        })
    }

    /// Number of weight tensors referenced by nodes.
    pub fn num_weight_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Checks tensor references, kind-specific shapes and the end-to-end shape chain.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if let Some(p) = self
            .preprocess
            .std
            .iter()
            .position(|&s| !(s.is_finite() && s > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "preprocess std[{p}] must be positive"
            )));
        }
        let mut shape = SymShape::Chw(3, self.input_shape.map(|[_, h, w]| (h, w)));
        if let Some([c, h, w]) = self.input_shape {
            if c != 3 || h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "input_shape must be 3×H×W with positive extents, got {c}×{h}×{w}"
                )));
            }
        }

        for (i, node) in self.stem.iter().enumerate() {
            shape = self.check_node(NodePath::Stem(i), node, shape)?;
        }
        for (b, block) in self.blocks.iter().enumerate() {
            shape = self.check_block(b, block, shape)?;
        }
        let n = self.head.len();
        if n < 2
            || !matches!(self.head[n - 1], NodeSpec::Softmax)
            || !matches!(self.head[n - 2], NodeSpec::Fc(_))
        {
            return Err(invalid(
                NodePath::Head(n.saturating_sub(1)),
                "head",
                "head must end with fc followed by softmax",
            ));
        }
        for (i, node) in self.head.iter().enumerate() {
            shape = self.check_node(NodePath::Head(i), node, shape)?;
        }
        Ok(())
    }

    fn resolve(&self, path: NodePath, node: &NodeSpec) -> Result<()> {
        for name in node.tensor_refs() {
            self.tensor(name)
                .map_err(|e| e.in_layer(format!("{path} ({})", node.kind())))?;
        }
        Ok(())
    }

    fn check_node(&self, path: NodePath, node: &NodeSpec, input: SymShape) -> Result<SymShape> {
        self.resolve(path, node)?;
        let kind = node.kind();
        if matches!(node, NodeSpec::Softmax)
            && !matches!(path, NodePath::Head(i) if i + 1 == self.head.len())
        {
            return Err(invalid(path, kind, "softmax may only terminate the head"));
        }
        match node {
            NodeSpec::Conv(spec) => self.check_conv(path, spec, input),
            NodeSpec::Bn(spec) => self.check_bn(path, spec, input),
            NodeSpec::Relu => Ok(input),
            NodeSpec::Maxpool(p) => {
                let SymShape::Chw(c, hw) = input else {
                    return Err(invalid(
                        path,
                        kind,
                        format!("needs C×H×W input, got {}", input.describe()),
                    ));
                };
                if p.k == 0 || p.stride == 0 {
                    return Err(invalid(path, kind, "k and stride must be positive"));
                }
                if p.padding >= p.k {
                    return Err(invalid(path, kind, "padding must be smaller than k"));
                }
                let hw = match hw {
                    Some((h, w)) => Some((
                        output_extent("maxpool", h, p.k, p.stride, p.padding)
                            .map_err(|e| e.in_layer(format!("{path} ({kind})")))?,
                        output_extent("maxpool", w, p.k, p.stride, p.padding)
                            .map_err(|e| e.in_layer(format!("{path} ({kind})")))?,
                    )),
                    None => None,
                };
                Ok(SymShape::Chw(c, hw))
            }
            NodeSpec::Gap => match input {
                SymShape::Chw(c, _) => Ok(SymShape::Flat(c)),
                SymShape::Flat(_) => Err(invalid(path, kind, "needs C×H×W input")),
            },
            NodeSpec::Fc(spec) => {
                let w = self.tensor(&spec.weight)?;
                let &[e, d] = w.shape() else {
                    return Err(invalid(
                        path,
                        kind,
                        format!("weight {} must be E×D, got {:?}", spec.weight, w.shape()),
                    ));
                };
                let ok = match input {
                    SymShape::Flat(n) => n == d,
                    SymShape::Chw(c, Some((h, wd))) => c * h * wd == d,
                    SymShape::Chw(c, None) => d % c == 0,
                };
                if !ok {
                    return Err(invalid(
                        path,
                        kind,
                        format!(
                            "weight {} expects {d} inputs, previous node yields {}",
                            spec.weight,
                            input.describe()
                        ),
                    ));
                }
                if let Some(b) = &spec.bias {
                    self.expect_vec(path, kind, b, e)?;
                }
                Ok(SymShape::Flat(e))
            }
            NodeSpec::Softmax => match input {
                SymShape::Flat(n) if n == self.num_classes => Ok(input),
                _ => Err(invalid(
                    path,
                    kind,
                    format!(
                        "expects {} logits, got {}",
                        self.num_classes,
                        input.describe()
                    ),
                )),
            },
        }
    }

    fn expect_vec(&self, path: NodePath, kind: &str, name: &str, len: usize) -> Result<()> {
        let t = self.tensor(name)?;
        if t.shape() != [len] {
            return Err(invalid(
                path,
                kind,
                format!("tensor {name} must have shape [{len}], got {:?}", t.shape()),
            ));
        }
        Ok(())
    }

    fn check_conv(&self, path: NodePath, spec: &ConvSpec, input: SymShape) -> Result<SymShape> {
        let kind = "conv";
        for name in spec.tensor_refs() {
            self.tensor(name)
                .map_err(|e| e.in_layer(format!("{path} ({kind})")))?;
        }
        let SymShape::Chw(c, hw) = input else {
            return Err(invalid(
                path,
                kind,
                format!("needs C×H×W input, got {}", input.describe()),
            ));
        };
        let w = self.tensor(&spec.weight)?;
        let &[o, wc, kh, kw] = w.shape() else {
            return Err(invalid(
                path,
                kind,
                format!("weight {} must be rank 4, got {:?}", spec.weight, w.shape()),
            ));
        };
        if wc != c {
            return Err(invalid(
                path,
                kind,
                format!(
                    "weight {} expects {wc} input channels, previous node yields {}",
                    spec.weight,
                    input.describe()
                ),
            ));
        }
        if kh != kw {
            return Err(invalid(
                path,
                kind,
                format!(
                    "weight {} kernel must be square, got {kh}×{kw}",
                    spec.weight
                ),
            ));
        }
        if spec.stride == 0 {
            return Err(invalid(path, kind, "stride must be positive"));
        }
        if let Some(b) = &spec.bias {
            self.expect_vec(path, kind, b, o)?;
        }
        let hw = match hw {
            Some((h, wd)) => Some((
                output_extent("conv2d", h, kh, spec.stride, spec.padding)
                    .map_err(|e| e.in_layer(format!("{path} ({kind})")))?,
                output_extent("conv2d", wd, kw, spec.stride, spec.padding)
                    .map_err(|e| e.in_layer(format!("{path} ({kind})")))?,
            )),
            None => None,
        };
        Ok(SymShape::Chw(o, hw))
    }

    fn check_bn(&self, path: NodePath, spec: &BnSpec, input: SymShape) -> Result<SymShape> {
        let kind = "bn";
        for name in spec.tensor_refs() {
            self.tensor(name)
                .map_err(|e| e.in_layer(format!("{path} ({kind})")))?;
        }
        let SymShape::Chw(c, _) = input else {
            return Err(invalid(
                path,
                kind,
                format!("needs C×H×W input, got {}", input.describe()),
            ));
        };
        for name in spec.tensor_refs() {
            self.expect_vec(path, kind, name, c)?;
        }
        if !(spec.eps >= 0.0 && spec.eps.is_finite()) {
            return Err(invalid(path, kind, "eps must be finite and non-negative"));
        }
        if self.tensor(&spec.var)?.data().iter().any(|&v| v < 0.0) {
            return Err(invalid(
                path,
                kind,
                format!("tensor {} has negative variance", spec.var),
            ));
        }
        Ok(input)
    }

    fn check_block(&self, b: usize, block: &BottleneckSpec, input: SymShape) -> Result<SymShape> {
        if !matches!(input, SymShape::Chw(..)) {
            return Err(invalid(
                NodePath::BlockMerge(b),
                "bottleneck",
                "block input must be C×H×W",
            ));
        }
        if block.main.is_empty() {
            return Err(invalid(
                NodePath::BlockMerge(b),
                "bottleneck",
                "main path is empty",
            ));
        }
        let mut main = input;
        for (i, node) in block.main.iter().enumerate() {
            let path = NodePath::BlockMain(b, i);
            if !matches!(node, NodeSpec::Conv(_) | NodeSpec::Bn(_) | NodeSpec::Relu) {
                return Err(invalid(
                    path,
                    node.kind(),
                    "main path may only hold conv, bn and relu",
                ));
            }
            main = self.check_node(path, node, main)?;
        }
        let skip = match &block.skip {
            SkipSpec::Identity => input,
            SkipSpec::Projection { conv, bn } => {
                let s = self.check_conv(NodePath::BlockSkipConv(b), conv, input)?;
                self.check_bn(NodePath::BlockSkipBn(b), bn, s)?
            }
        };
        let compatible = match (main, skip) {
            (SymShape::Chw(c1, Some(a)), SymShape::Chw(c2, Some(b2))) => c1 == c2 && a == b2,
            (SymShape::Chw(c1, _), SymShape::Chw(c2, _)) => c1 == c2,
            _ => false,
        };
        if !compatible {
            return Err(invalid(
                NodePath::BlockMerge(b),
                "bottleneck",
                format!(
                    "main path yields {}, skip yields {}",
                    main.describe(),
                    skip.describe()
                ),
            ));
        }
        Ok(main)
    }
}
