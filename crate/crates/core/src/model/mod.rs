//! Classifier construction: a frozen backbone truncated at a named node,
//! followed by the dense head.

pub mod arch;
pub mod graph;
pub mod head;
pub mod weights;

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView4, IxDyn};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use arch::Architecture;
pub use graph::{Graph, Shape3};
pub use head::{Activation, DenseHead, HeadGradients, HeadSpec};

use crate::error::{Error, Result};
use crate::Scalar;
use graph::ParamStore;

/// Where backbone weights come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum WeightsSource {
    /// Seeded random initialization (tests, smoke runs).
    #[default]
    Random,
    /// A named-tensor archive, see [`weights`].
    Archive(PathBuf),
}

impl From<String> for WeightsSource {
    fn from(s: String) -> Self {
        if s.eq_ignore_ascii_case("random") {
            WeightsSource::Random
        } else {
            WeightsSource::Archive(PathBuf::from(s))
        }
    }
}

impl From<WeightsSource> for String {
    fn from(w: WeightsSource) -> String {
        match w {
            WeightsSource::Random => "random".into(),
            WeightsSource::Archive(p) => p.to_string_lossy().into_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    pub weights: WeightsSource,
    /// Defaults to the architecture's standard cut (`mixed4` for inception_v3).
    pub truncation_node: Option<String>,
    pub frozen: bool,
    /// `[height, width]`; images are resized to this on load.
    pub input_size: [usize; 2],
    /// Seed for [`WeightsSource::Random`]; `None` defers to the pipeline seed.
    pub seed: Option<u64>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            architecture: Architecture::InceptionV3,
            weights: WeightsSource::Random,
            truncation_node: None,
            frozen: true,
            input_size: [299, 299],
            seed: None,
        }
    }
}

impl BackboneSpec {
    pub fn tiny() -> Self {
        BackboneSpec {
            architecture: Architecture::Tiny,
            input_size: [32, 32],
            ..Default::default()
        }
    }

    pub fn node(&self) -> &str {
        self.truncation_node
            .as_deref()
            .unwrap_or_else(|| self.architecture.default_truncation())
    }

    pub fn input_hw(&self) -> (usize, usize) {
        (self.input_size[0], self.input_size[1])
    }

    /// Truncated graph for this spec, without allocating any parameters.
    pub fn graph(&self) -> Result<Graph> {
        let full = self.architecture.graph(self.input_hw())?;
        truncate_backbone(&full, self.node())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Unsupported(
                "backbone fine-tuning; set frozen = true (only the head is trained)".into(),
            ));
        }
        self.graph().map(|_| ())
    }
}

/// Keeps the sub-network up to and including `node`.
///
/// The error for an unknown name lists the architecture's mixed endpoints.
pub fn truncate_backbone(full: &Graph, node: &str) -> Result<Graph> {
    full.truncate(node)
}

/// Frozen feature extractor.
#[derive(Clone, Debug)]
pub struct Backbone<T> {
    pub spec: BackboneSpec,
    graph: Graph,
    params: ParamStore<T>,
}

impl<T: Scalar> Backbone<T> {
    pub fn build(spec: &BackboneSpec, default_seed: u64) -> Result<Self> {
        spec.validate()?;
        let graph = spec.graph()?;
        let params = match &spec.weights {
            WeightsSource::Random => weights::random_params(&graph, spec.seed.unwrap_or(default_seed)),
            WeightsSource::Archive(path) => weights::params_from_archive(&graph, &weights::read_archive(path)?)?,
        };
        Ok(Backbone {
            spec: spec.clone(),
            graph,
            params,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn feature_shape(&self) -> Shape3 {
        self.graph.output().output
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.param_count()
    }

    /// Flattened features, `N × (h·w·c)` in row-major `h, w, c` order.
    pub fn features(&self, batch: ArrayView4<'_, T>) -> Result<Array2<T>> {
        let maps = graph::forward(&self.graph, &self.params, batch)?;
        let n = maps.dim().0;
        let f = self.feature_shape().len();
        Ok(maps.into_shape_with_order((n, f)).expect("contiguous feature maps"))
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut dyn RngCore),
}

/// Gradients of the loss with respect to every model parameter.
#[derive(Clone, Debug)]
pub struct ModelGradients<T> {
    pub head: HeadGradients<T>,
    /// Always zero: the backbone sits behind a stop-gradient.
    pub backbone: ParamStore<T>,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel<T> {
    pub backbone: Backbone<T>,
    pub head: DenseHead<T>,
    pub head_spec: HeadSpec,
}

/// Builds truncated backbone → flatten → dense → dropout → dense(1, sigmoid).
pub fn build_classifier<T: Scalar>(backbone: &BackboneSpec, head: &HeadSpec, seed: u64) -> Result<ClassifierModel<T>> {
    let bb = Backbone::build(backbone, seed)?;
    let features = bb.feature_shape().len();
    let head_model = DenseHead::init(head, features, head.seed.unwrap_or(seed))?;
    Ok(ClassifierModel {
        backbone: bb,
        head: head_model,
        head_spec: head.clone(),
    })
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn feature_shape(&self) -> Shape3 {
        self.backbone.feature_shape()
    }

    pub fn parameter_count(&self) -> usize {
        self.backbone.parameter_count() + self.head.parameter_count()
    }

    /// Per-parameter trainable flags, backbone first.
    pub fn trainable_mask(&self) -> Vec<(String, bool)> {
        let mut mask: Vec<(String, bool)> = self
            .backbone
            .graph
            .param_decls()
            .into_iter()
            .map(|d| (d.name, !self.backbone.spec.frozen && d.trainable))
            .collect();
        for name in HEAD_TENSORS {
            mask.push((name.to_string(), true));
        }
        mask
    }

    pub fn trainable_parameter_count(&self) -> usize {
        let sizes = self.param_sizes();
        self.trainable_mask()
            .iter()
            .filter(|(_, t)| *t)
            .map(|(n, _)| sizes(n))
            .sum()
    }

    fn param_sizes(&self) -> impl Fn(&str) -> usize + '_ {
        move |name| match name {
            "dense/kernel" => self.head.w1.len(),
            "dense/bias" => self.head.b1.len(),
            "dense_1/kernel" => self.head.w2.len(),
            "dense_1/bias" => self.head.b2.len(),
            other => self.backbone.params.get(other).map_or(0, |a| a.len()),
        }
    }

    pub fn forward(&self, batch: ArrayView4<'_, T>, mode: Mode<'_>) -> Result<Array1<T>> {
        let features = self.backbone.features(batch)?;
        let mask = match mode {
            Mode::Inference => None,
            Mode::Training(rng) => self.head.dropout_mask(features.nrows(), rng),
        };
        Ok(self.head.forward(features.view(), mask.as_ref())?.probabilities)
    }

    pub fn predict(&self, batch: ArrayView4<'_, T>) -> Result<Array1<T>> {
        self.forward(batch, Mode::Inference)
    }

    /// Loss and gradients for a batch, with an optional fixed dropout mask.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView4<'_, T>,
        targets: ArrayView1<'_, T>,
        mask: Option<&Array2<T>>,
    ) -> Result<(T, ModelGradients<T>)> {
        let features = self.backbone.features(batch)?;
        let (loss, head, _) = self.head.loss_and_gradients(features.view(), targets, mask)?;
        let backbone = self
            .backbone
            .params
            .iter()
            .map(|(k, v)| (k.clone(), ArrayD::zeros(IxDyn(v.shape()))))
            .collect();
        Ok((loss, ModelGradients { head, backbone }))
    }

    pub fn summary(&self) -> ModelSummary {
        let g = &self.backbone.graph;
        let trainable_backbone = !self.backbone.spec.frozen;
        let mut layers: Vec<LayerSummary> = g
            .nodes()
            .iter()
            .map(|n| LayerSummary {
                name: n.name.clone(),
                kind: n.layer.kind().to_string(),
                output_shape: vec![n.output.h, n.output.w, n.output.c],
                params: g.node_params(n).iter().map(|d| d.len()).sum(),
                trainable: trainable_backbone && !g.node_params(n).is_empty(),
            })
            .collect();
        let f = self.feature_shape().len();
        let u = self.head.units();
        let head_layer = |name: &str, kind: &str, shape: usize, params: usize| LayerSummary {
            name: name.into(),
            kind: kind.into(),
            output_shape: vec![shape],
            params,
            trainable: params > 0,
        };
        layers.push(head_layer("flatten", "Flatten", f, 0));
        layers.push(head_layer("dense", "Dense", u, f * u + u));
        layers.push(head_layer("dropout", "Dropout", u, 0));
        layers.push(head_layer("dense_1", "Dense", 1, u + 1));
        ModelSummary {
            architecture: self.backbone.spec.architecture.name().into(),
            truncation_node: self.backbone.spec.node().into(),
            feature_shape: self.feature_shape(),
            total_params: self.parameter_count(),
            trainable_params: self.trainable_parameter_count(),
            layers,
        }
    }

    /// Head parameters as a weights archive (the saved-model artifact).
    pub fn head_archive(&self) -> weights::WeightsArchive {
        let h = &self.head;
        let mut store: ParamStore<T> = ParamStore::new();
        store.insert("dense/kernel".into(), h.w1.clone().into_dyn());
        store.insert("dense/bias".into(), h.b1.clone().into_dyn());
        store.insert(
            "dense_1/kernel".into(),
            h.w2.clone()
                .into_shape_with_order((h.units(), 1))
                .expect("vector")
                .into_dyn(),
        );
        store.insert("dense_1/bias".into(), h.b2.clone().into_dyn());
        weights::archive_from_params(&store)
    }

    pub fn load_head_archive(&mut self, archive: &weights::WeightsArchive) -> Result<()> {
        let f = self.head.input_features();
        let u = self.head.units();
        let fetch = |name: &str, shape: Vec<usize>| -> Result<Vec<T>> {
            let t = archive.get(name).ok_or_else(|| Error::MissingTensor(name.into()))?;
            if t.shape != shape {
                return Err(Error::WeightsMismatch {
                    tensor: name.into(),
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
            Ok(t.data.iter().map(|&v| T::of(f64::from(v))).collect())
        };
        let w1 = Array2::from_shape_vec((f, u), fetch("dense/kernel", vec![f, u])?).expect("shape checked");
        let b1 = Array1::from(fetch("dense/bias", vec![u])?);
        let w2 = Array1::from(fetch("dense_1/kernel", vec![u, 1])?);
        let b2 = Array1::from(fetch("dense_1/bias", vec![1])?);
        self.head.w1 = w1;
        self.head.b1 = b1;
        self.head.w2 = w2;
        self.head.b2 = b2;
        Ok(())
    }
}

const HEAD_TENSORS: [&str; 4] = ["dense/kernel", "dense/bias", "dense_1/kernel", "dense_1/bias"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub architecture: String,
    pub truncation_node: String,
    pub feature_shape: Shape3,
    pub total_params: usize,
    pub trainable_params: usize,
    pub layers: Vec<LayerSummary>,
}
