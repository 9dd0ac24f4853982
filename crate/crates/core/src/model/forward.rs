use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::layers::{cheb_layer, gat_layer, gcn_layer, log_softmax_rows, sgc_propagate, GatCombine};
use super::{Arch, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphOperators, LabeledSplit};
use crate::tensor::Matrix;

/// A layer's output matrix as seen at the layer boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub layer_id: String,
    pub matrix: Matrix,
    pub post_nonlinearity: bool,
}

/// A runtime transform over activation records.
///
/// Implementations may rewrite values in place but must keep the matrix shape.
pub trait Interceptor {
    fn name(&self) -> &str;
    fn intercept(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()>;
}

impl<T: Interceptor + ?Sized> Interceptor for &mut T {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn intercept(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()> {
        (**self).intercept(record, graph)
    }
}

impl<T: Interceptor + ?Sized> Interceptor for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn intercept(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()> {
        (**self).intercept(record, graph)
    }
}

/// Adapts a closure into an [`Interceptor`].
pub struct FnInterceptor<F> {
    name: String,
    f: F,
}

impl<F> FnInterceptor<F>
where
    F: FnMut(&mut ActivationRecord, &Graph) -> Result<()>,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnInterceptor {
            name: name.into(),
            f,
        }
    }
}

impl<F> Interceptor for FnInterceptor<F>
where
    F: FnMut(&mut ActivationRecord, &Graph) -> Result<()>,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn intercept(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()> {
        (self.f)(record, graph)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LayerSelector {
    All,
    Layer(String),
}

impl LayerSelector {
    pub fn layer(id: impl Into<String>) -> Self {
        LayerSelector::Layer(id.into())
    }

    pub fn matches(&self, layer_id: &str) -> bool {
        match self {
            LayerSelector::All => true,
            LayerSelector::Layer(id) => id == layer_id,
        }
    }
}

/// Interceptors applied in registration order to every matching record.
#[derive(Default)]
pub struct InterceptorRegistry<'a> {
    entries: Vec<(LayerSelector, Box<dyn Interceptor + 'a>)>,
}

impl<'a> InterceptorRegistry<'a> {
    pub fn new() -> Self {
        InterceptorRegistry {
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, selector: LayerSelector, interceptor: impl Interceptor + 'a) {
        self.entries.push((selector, Box::new(interceptor)));
    }

    pub fn register_fn<F>(&mut self, name: &str, selector: LayerSelector, f: F)
    where
        F: FnMut(&mut ActivationRecord, &Graph) -> Result<()> + 'a,
    {
        self.register(selector, FnInterceptor::new(name, f));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn apply(&mut self, record: &mut ActivationRecord, graph: &Graph) -> Result<()> {
        for (selector, interceptor) in &mut self.entries {
            if !selector.matches(&record.layer_id) {
                continue;
            }
            let before = record.matrix.shape();
            interceptor.intercept(record, graph)?;
            let after = record.matrix.shape();
            if before != after {
                return Err(Error::InterceptorShape {
                    name: interceptor.name().to_string(),
                    layer: record.layer_id.clone(),
                    before,
                    after,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub records: Vec<ActivationRecord>,
}

struct Pass<'r, 'a> {
    registry: &'r mut InterceptorRegistry<'a>,
    graph: &'r Graph,
    keep: bool,
    records: Vec<ActivationRecord>,
}

impl Pass<'_, '_> {
    fn boundary(&mut self, layer_id: &str, matrix: Matrix) -> Result<Matrix> {
        let mut record = ActivationRecord {
            layer_id: layer_id.to_string(),
            matrix,
            post_nonlinearity: true,
        };
        self.registry.apply(&mut record, self.graph)?;
        if self.keep {
            self.records.push(record.clone());
        }
        Ok(record.matrix)
    }
}

fn check_inputs(ckpt: &ModelCheckpoint, ops: &GraphOperators, features: &Matrix) -> Result<()> {
    ckpt.validate()?;
    if features.rows() != ops.num_nodes() {
        return Err(Error::shape("model_forward features", ops.num_nodes(), features.rows()));
    }
    if features.cols() != ckpt.hyper.in_features {
        return Err(Error::shape(
            "model_forward feature width",
            ckpt.hyper.in_features,
            features.cols(),
        ));
    }
    Ok(())
}

fn run(
    ckpt: &ModelCheckpoint,
    ops: &GraphOperators,
    features: &Matrix,
    registry: &mut InterceptorRegistry<'_>,
    keep: bool,
) -> Result<ForwardOutput> {
    check_inputs(ckpt, ops, features)?;
    let mut pass = Pass {
        registry,
        graph: &ops.graph,
        keep,
        records: Vec::new(),
    };
    let h = &ckpt.hyper;
    let logits = match ckpt.arch {
        Arch::Gcn => {
            let hidden = gcn_layer(features, &ops.adjacency, &ckpt.matrix("conv1.weight")?, true)?;
            let hidden = pass.boundary("conv1", hidden)?;
            let mut out = gcn_layer(&hidden, &ops.adjacency, &ckpt.matrix("conv2.weight")?, false)?;
            log_softmax_rows(&mut out);
            pass.boundary("conv2", out)?
        }
        Arch::Gat => {
            let hidden = gat_layer(
                features,
                &ops.graph,
                &ckpt.matrix("conv1.weight")?,
                &ckpt.matrix("conv1.att")?,
                h.heads,
                GatCombine::Concat,
                true,
            )?;
            let hidden = pass.boundary("conv1", hidden)?;
            let mut out = gat_layer(
                &hidden,
                &ops.graph,
                &ckpt.matrix("conv2.weight")?,
                &ckpt.matrix("conv2.att")?,
                1,
                GatCombine::Single,
                false,
            )?;
            log_softmax_rows(&mut out);
            pass.boundary("conv2", out)?
        }
        Arch::Cheb => {
            let weights = |layer: &str| -> Result<Vec<Matrix>> {
                (0..h.cheb_order)
                    .map(|k| ckpt.matrix(&format!("{layer}.weight.{k}")))
                    .collect()
            };
            let hidden = cheb_layer(features, &ops.laplacian, &weights("conv1")?, true)?;
            let hidden = pass.boundary("conv1", hidden)?;
            let mut out = cheb_layer(&hidden, &ops.laplacian, &weights("conv2")?, false)?;
            log_softmax_rows(&mut out);
            pass.boundary("conv2", out)?
        }
        Arch::Sgc => {
            if h.sgc_hops == 0 {
                return Err(Error::InvalidParameter("SGC needs at least one propagation step".into()));
            }
            let propagated = sgc_propagate(features, &ops.adjacency, h.sgc_hops)?;
            let mut out = propagated.matmul(&ckpt.matrix("conv1.weight")?)?;
            log_softmax_rows(&mut out);
            pass.boundary("conv1", out)?
        }
    };
    Ok(ForwardOutput {
        logits,
        records: pass.records,
    })
}

/// Runs the two-stage pipeline of `ckpt.arch`, passing each layer output
/// through the matching interceptors before it feeds the next layer.
///
/// Returned records hold post-interception values.
pub fn model_forward(
    ckpt: &ModelCheckpoint,
    ops: &GraphOperators,
    features: &Matrix,
    registry: &mut InterceptorRegistry<'_>,
) -> Result<ForwardOutput> {
    run(ckpt, ops, features, registry, true)
}

/// Like [`model_forward`] but only keeps the final logits.
pub fn model_logits(
    ckpt: &ModelCheckpoint,
    ops: &GraphOperators,
    features: &Matrix,
    registry: &mut InterceptorRegistry<'_>,
) -> Result<Matrix> {
    run(ckpt, ops, features, registry, false).map(|o| o.logits)
}

/// `(layer_id, element count)` for every activation record of one forward pass.
pub fn activation_census(records: &[ActivationRecord]) -> Vec<(String, usize)> {
    records
        .iter()
        .map(|r| (r.layer_id.clone(), r.matrix.len()))
        .collect()
}

/// Fraction of test nodes whose arg-max class equals the label.
///
/// Rows containing NaN never count as correct. Ties resolve to the lowest class.
pub fn evaluate_accuracy(logits: &Matrix, split: &LabeledSplit) -> Result<f64> {
    if logits.rows() != split.num_nodes() {
        return Err(Error::shape("evaluate_accuracy", split.num_nodes(), logits.rows()));
    }
    let test = split.test_indices();
    if test.is_empty() {
        return Err(Error::Structural("test mask is empty".into()));
    }
    let correct = test
        .iter()
        .filter(|&&i| predict(logits.row(i)) == Some(split.labels[i]))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub(crate) fn predict(row: &[f32]) -> Option<usize> {
    if row.is_empty() || row.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    Some(best)
}
