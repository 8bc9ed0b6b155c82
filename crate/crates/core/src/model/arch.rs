//! Backbone architecture registry.
//!
//! Node names follow the Keras application naming (`conv2d_N`,
//! `batch_normalization_N`, `activation_N`, `mixedK`, ...) in layer creation
//! order, so weights exported from a fresh Keras session map one-to-one.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, GraphBuilder, Layer, NodeId, Padding, Shape3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Inception-v3 feature trunk, 11 mixed blocks (`mixed0` … `mixed10`).
    InceptionV3,
    /// A three-block stand-in with the same node kinds, small enough for tests.
    Tiny,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::InceptionV3 => "inception_v3",
            Architecture::Tiny => "tiny",
        }
    }

    pub fn default_input_size(self) -> (usize, usize) {
        match self {
            Architecture::InceptionV3 => (299, 299),
            Architecture::Tiny => (32, 32),
        }
    }

    pub fn default_truncation(self) -> &'static str {
        match self {
            Architecture::InceptionV3 => "mixed4",
            Architecture::Tiny => "mixed1",
        }
    }

    /// The complete (untruncated) node graph for an `h×w×3` input.
    pub fn graph(self, input_size: (usize, usize)) -> Result<Graph> {
        let (h, w) = input_size;
        if h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!("input size {h}x{w} must be positive")));
        }
        let mut k = KerasBuilder::new(Shape3::new(h, w, 3));
        match self {
            Architecture::InceptionV3 => inception_v3(&mut k)?,
            Architecture::Tiny => tiny(&mut k)?,
        }
        Ok(k.b.build())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inception_v3" => Ok(Architecture::InceptionV3),
            "tiny" => Ok(Architecture::Tiny),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture `{other}` (expected inception_v3 or tiny)"
            ))),
        }
    }
}

struct KerasBuilder {
    b: GraphBuilder,
    counters: HashMap<&'static str, usize>,
}

impl KerasBuilder {
    fn new(input: Shape3) -> Self {
        KerasBuilder {
            b: GraphBuilder::new("input", input),
            counters: HashMap::new(),
        }
    }

    fn name(&mut self, base: &'static str) -> String {
        let n = self.counters.entry(base).or_insert(0);
        let name = if *n == 0 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        };
        *n += 1;
        name
    }

    /// Conv (no bias) → BatchNorm (no scale) → ReLU.
    fn conv_bn(
        &mut self,
        x: NodeId,
        filters: usize,
        rows: usize,
        cols: usize,
        strides: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let name = self.name("conv2d");
        let c = self.b.add(
            name,
            Layer::Conv2d {
                input: x,
                filters,
                kernel: (rows, cols),
                strides: (strides, strides),
                padding,
                bias: false,
            },
        )?;
        let name = self.name("batch_normalization");
        let n = self.b.add(
            name,
            Layer::BatchNorm {
                input: c,
                epsilon: 1e-3,
                scale: false,
            },
        )?;
        let name = self.name("activation");
        self.b.add(name, Layer::Relu { input: n })
    }

    fn same(&mut self, x: NodeId, filters: usize, rows: usize, cols: usize) -> Result<NodeId> {
        self.conv_bn(x, filters, rows, cols, 1, Padding::Same)
    }

    fn max_pool(&mut self, x: NodeId, size: usize, stride: usize, padding: Padding) -> Result<NodeId> {
        let name = self.name("max_pooling2d");
        self.b.add(
            name,
            Layer::MaxPool {
                input: x,
                pool: (size, size),
                strides: (stride, stride),
                padding,
            },
        )
    }

    fn avg_pool_same(&mut self, x: NodeId) -> Result<NodeId> {
        let name = self.name("average_pooling2d");
        self.b.add(
            name,
            Layer::AvgPool {
                input: x,
                pool: (3, 3),
                strides: (1, 1),
                padding: Padding::Same,
            },
        )
    }

    fn concat(&mut self, inputs: Vec<NodeId>) -> Result<NodeId> {
        let name = self.name("concatenate");
        self.b.add(name, Layer::Concat { inputs })
    }
}

fn inception_v3(k: &mut KerasBuilder) -> Result<()> {
    use Padding::Valid;
    let x = k.b.input();
    let x = k.conv_bn(x, 32, 3, 3, 2, Valid)?;
    let x = k.conv_bn(x, 32, 3, 3, 1, Valid)?;
    let x = k.same(x, 64, 3, 3)?;
    let x = k.max_pool(x, 3, 2, Valid)?;
    let x = k.conv_bn(x, 80, 1, 1, 1, Valid)?;
    let x = k.conv_bn(x, 192, 3, 3, 1, Valid)?;
    let mut x = k.max_pool(x, 3, 2, Valid)?;

    // mixed0..mixed2: 35x35
    for (i, pool_filters) in [32, 64, 64].into_iter().enumerate() {
        let b1 = k.same(x, 64, 1, 1)?;
        let b5 = k.same(x, 48, 1, 1)?;
        let b5 = k.same(b5, 64, 5, 5)?;
        let bd = k.same(x, 64, 1, 1)?;
        let bd = k.same(bd, 96, 3, 3)?;
        let bd = k.same(bd, 96, 3, 3)?;
        let bp = k.avg_pool_same(x)?;
        let bp = k.same(bp, pool_filters, 1, 1)?;
        x = k.b.endpoint(&format!("mixed{i}"), vec![b1, b5, bd, bp])?;
    }

    // mixed3: 17x17
    let b3 = k.conv_bn(x, 384, 3, 3, 2, Valid)?;
    let bd = k.same(x, 64, 1, 1)?;
    let bd = k.same(bd, 96, 3, 3)?;
    let bd = k.conv_bn(bd, 96, 3, 3, 2, Valid)?;
    let bp = k.max_pool(x, 3, 2, Valid)?;
    x = k.b.endpoint("mixed3", vec![b3, bd, bp])?;

    // mixed4..mixed7: 17x17x768 with factorized 7x7 convolutions
    for (i, f) in [128, 160, 160, 192].into_iter().enumerate() {
        let b1 = k.same(x, 192, 1, 1)?;
        let b7 = k.same(x, f, 1, 1)?;
        let b7 = k.same(b7, f, 1, 7)?;
        let b7 = k.same(b7, 192, 7, 1)?;
        let bd = k.same(x, f, 1, 1)?;
        let bd = k.same(bd, f, 7, 1)?;
        let bd = k.same(bd, f, 1, 7)?;
        let bd = k.same(bd, f, 7, 1)?;
        let bd = k.same(bd, 192, 1, 7)?;
        let bp = k.avg_pool_same(x)?;
        let bp = k.same(bp, 192, 1, 1)?;
        x = k.b.endpoint(&format!("mixed{}", 4 + i), vec![b1, b7, bd, bp])?;
    }

    // mixed8: 8x8
    let b3 = k.same(x, 192, 1, 1)?;
    let b3 = k.conv_bn(b3, 320, 3, 3, 2, Valid)?;
    let b7 = k.same(x, 192, 1, 1)?;
    let b7 = k.same(b7, 192, 1, 7)?;
    let b7 = k.same(b7, 192, 7, 1)?;
    let b7 = k.conv_bn(b7, 192, 3, 3, 2, Valid)?;
    let bp = k.max_pool(x, 3, 2, Valid)?;
    x = k.b.endpoint("mixed8", vec![b3, b7, bp])?;

    // mixed9, mixed10: 8x8x2048
    for i in 0..2 {
        let b1 = k.same(x, 320, 1, 1)?;
        let b3 = k.same(x, 384, 1, 1)?;
        let b3a = k.same(b3, 384, 1, 3)?;
        let b3b = k.same(b3, 384, 3, 1)?;
        let b3 =
            k.b.add(format!("mixed9_{i}"), Layer::Concat { inputs: vec![b3a, b3b] })?;
        let bd = k.same(x, 448, 1, 1)?;
        let bd = k.same(bd, 384, 3, 3)?;
        let bda = k.same(bd, 384, 1, 3)?;
        let bdb = k.same(bd, 384, 3, 1)?;
        let bd = k.concat(vec![bda, bdb])?;
        let bp = k.avg_pool_same(x)?;
        let bp = k.same(bp, 192, 1, 1)?;
        x = k.b.endpoint(&format!("mixed{}", 9 + i), vec![b1, b3, bd, bp])?;
    }
    Ok(())
}

fn tiny(k: &mut KerasBuilder) -> Result<()> {
    use Padding::{Same, Valid};
    let x = k.b.input();
    let x = k.conv_bn(x, 8, 3, 3, 2, Same)?;

    let b1 = k.same(x, 4, 1, 1)?;
    let b3 = k.same(x, 4, 3, 3)?;
    let bp = k.max_pool(x, 3, 1, Same)?;
    let x = k.b.endpoint("mixed0", vec![b1, b3, bp])?;

    let b3 = k.conv_bn(x, 8, 3, 3, 2, Valid)?;
    let bp = k.max_pool(x, 3, 2, Valid)?;
    let x = k.b.endpoint("mixed1", vec![b3, bp])?;

    let b1 = k.same(x, 8, 1, 1)?;
    let bp = k.avg_pool_same(x)?;
    let bp = k.same(bp, 8, 1, 1)?;
    k.b.endpoint("mixed2", vec![b1, bp])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inception_endpoints_and_shapes() {
        let g = Architecture::InceptionV3.graph((299, 299)).unwrap();
        let names: Vec<String> = (0..11).map(|i| format!("mixed{i}")).collect();
        assert_eq!(g.endpoints(), names.as_slice());
        let shape = |n: &str| g.node(n).unwrap().output;
        assert_eq!(shape("mixed0"), Shape3::new(35, 35, 256));
        assert_eq!(shape("mixed1"), Shape3::new(35, 35, 288));
        assert_eq!(shape("mixed2"), Shape3::new(35, 35, 288));
        assert_eq!(shape("mixed3"), Shape3::new(17, 17, 768));
        for i in 4..=7 {
            assert_eq!(shape(&format!("mixed{i}")), Shape3::new(17, 17, 768));
        }
        assert_eq!(shape("mixed8"), Shape3::new(8, 8, 1280));
        assert_eq!(shape("mixed9"), Shape3::new(8, 8, 2048));
        assert_eq!(shape("mixed10"), Shape3::new(8, 8, 2048));
    }

    #[test]
    fn inception_parameter_total_matches_keras_without_top() {
        // Keras reports 21,802,784 parameters for InceptionV3(include_top=False).
        let g = Architecture::InceptionV3.graph((299, 299)).unwrap();
        assert_eq!(g.param_count(), 21_802_784);
        let trainable: usize = g.param_decls().iter().filter(|d| d.trainable).map(|d| d.len()).sum();
        assert_eq!(trainable, 21_768_352);
        let convs = g
            .nodes()
            .iter()
            .filter(|n| matches!(n.layer, Layer::Conv2d { .. }))
            .count();
        assert_eq!(convs, 94);
        assert!(g.node("conv2d_93").is_some());
    }

    #[test]
    fn inception_rejects_tiny_inputs() {
        assert!(Architecture::InceptionV3.graph((74, 74)).is_err());
        assert!(Architecture::InceptionV3.graph((75, 75)).is_ok());
    }

    #[test]
    fn tiny_shapes() {
        let g = Architecture::Tiny.graph((32, 32)).unwrap();
        assert_eq!(g.node("mixed0").unwrap().output, Shape3::new(16, 16, 16));
        assert_eq!(g.node("mixed1").unwrap().output, Shape3::new(7, 7, 24));
        assert_eq!(g.node("mixed2").unwrap().output, Shape3::new(7, 7, 16));
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "inception_v3".parse::<Architecture>().unwrap(),
            Architecture::InceptionV3
        );
        assert!("resnet".parse::<Architecture>().is_err());
    }
}
