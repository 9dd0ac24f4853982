//! Full-batch training with hand-written gradients.
//!
//! Training runs in double precision on a shadow copy of the weights; the
//! returned checkpoint is rounded to binary32 once, at the end.

pub mod dense;
mod grad;

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use self::dense::{Csr, Dense};
use self::grad::{run, Dropout};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::model::{tensor_layout, Arch, Hyper, ModelCheckpoint, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Applied to the input features and hidden activations, and to the
    /// attention weights of GAT. Training only.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Per-architecture defaults: GAT uses a smaller step and heavier
    /// dropout, SGC a large step with light regularization and no dropout.
    pub fn recipe(arch: Arch) -> Self {
        let base = TrainConfig::default();
        match arch {
            Arch::Gat => TrainConfig {
                learning_rate: 0.005,
                dropout: 0.6,
                ..base
            },
            Arch::Sgc => TrainConfig {
                learning_rate: 0.2,
                weight_decay: 5e-5,
                epochs: 100,
                dropout: 0.0,
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Double-precision views of a dataset shaped for one architecture.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub(crate) features: Csr,
    /// Self-looped normalized adjacency; its pattern is the GAT neighborhood.
    pub(crate) adjacency: Csr,
    pub(crate) laplacian: Csr,
    /// `Â^K X` for SGC.
    pub(crate) propagated: Option<Dense>,
    pub(crate) labels: Vec<usize>,
    pub(crate) heads: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TrainData {
    pub fn new(dataset: &Dataset, arch: Arch, hyper: &Hyper) -> Result<Self> {
        if hyper.in_features != dataset.num_features() || hyper.num_classes != dataset.num_classes() {
            return Err(Error::shape(
                "TrainData hyperparameters",
                format!("{}x{}", dataset.num_features(), dataset.num_classes()),
                format!("{}x{}", hyper.in_features, hyper.num_classes),
            ));
        }
        let g = dataset.graph();
        let features = Csr::from_matrix(&dataset.features);
        let adjacency = dense::adjacency(g);
        let propagated = (arch == Arch::Sgc).then(|| {
            let mut s = features.to_dense();
            for _ in 0..hyper.sgc_hops {
                s = adjacency.spmm(&s);
            }
            s
        });
        Ok(TrainData {
            laplacian: dense::laplacian(g),
            features,
            adjacency,
            propagated,
            labels: dataset.split.labels.clone(),
            heads: hyper.heads,
            train: dataset.split.train_indices(),
            val: dataset.split.val_indices(),
            test: dataset.split.test_indices(),
        })
    }
}

/// Weights of one model held in double precision, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel {
    pub arch: Arch,
    pub hyper: Hyper,
    pub params: Vec<Dense>,
}

impl ShadowModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        ckpt.validate()?;
        let params = ckpt
            .tensors
            .iter()
            .map(|t| t.to_matrix().map(|m| Dense::from_f32(&m)))
            .collect::<Result<_>>()?;
        Ok(ShadowModel {
            arch: ckpt.arch,
            hyper: ckpt.hyper,
            params,
        })
    }

    pub fn to_checkpoint(&self) -> Result<ModelCheckpoint> {
        let tensors = tensor_layout(self.arch, &self.hyper)
            .into_iter()
            .zip(&self.params)
            .map(|((name, shape), p)| Tensor::new(name, shape, p.to_f32()))
            .collect::<Result<_>>()?;
        ModelCheckpoint::new(self.arch, self.hyper, tensors)
    }

    fn l2(&self) -> f64 {
        self.params.iter().flat_map(|p| &p.data).map(|w| w * w).sum::<f64>()
    }

    /// Training loss without dropout: mean NLL over the training nodes plus
    /// `weight_decay / 2 · ‖w‖²`.
    pub fn loss(&self, data: &TrainData, weight_decay: f64) -> f64 {
        run(self.arch, &self.params, data, &data.train, None, false).loss + 0.5 * weight_decay * self.l2()
    }

    /// [`ShadowModel::loss`] and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, data: &TrainData, weight_decay: f64) -> (f64, Vec<Dense>) {
        let pass = run(self.arch, &self.params, data, &data.train, None, true);
        let mut grads = pass.grads.expect("gradients requested");
        add_decay(&mut grads, &self.params, weight_decay);
        (pass.loss + 0.5 * weight_decay * self.l2(), grads)
    }

    /// Log-probabilities without dropout.
    pub fn log_probabilities(&self, data: &TrainData) -> Dense {
        run(self.arch, &self.params, data, &[], None, false).logp
    }
}

fn add_decay(grads: &mut [Dense], params: &[Dense], weight_decay: f64) {
    if weight_decay == 0.0 {
        return;
    }
    for (g, p) in grads.iter_mut().zip(params) {
        for (gi, &pi) in g.data.iter_mut().zip(&p.data) {
            *gi += weight_decay * pi;
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Dense]) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![0.0; p.data.len()]).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Dense], grads: &[Dense], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(Self::BETA2, f64::from(self.t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi;
                *w -= lr * (*mi / c1) / (libm::sqrt(*vi / c2) + Self::EPS);
            }
        }
    }
}

/// Fraction of `rows` whose arg-max (first on ties) matches the label.
fn accuracy(logp: &Dense, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&i| {
            let row = logp.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best == labels[i]
        })
        .count();
    correct as f64 / rows.len() as f64
}

fn mean_nll(logp: &Dense, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    -rows.iter().map(|&i| logp.row(i)[labels[i]]).sum::<f64>() / rows.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub final_train_loss: f64,
}

/// Trains with Adam and keeps the weights of the epoch with the best
/// validation accuracy, breaking ties by lower validation loss.
pub fn train_model(arch: Arch, dataset: &Dataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    train_model_with_report(arch, dataset, cfg).map(|(c, _)| c)
}

pub fn train_model_with_report(arch: Arch, dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelCheckpoint, TrainReport)> {
    cfg.validate()?;
    let hyper = Hyper::standard(arch, dataset.num_features(), dataset.num_classes());
    let data = TrainData::new(dataset, arch, &hyper)?;
    if data.train.is_empty() {
        return Err(Error::Structural("training mask is empty".into()));
    }
    let mut model = ShadowModel::from_checkpoint(&ModelCheckpoint::init(arch, hyper, cfg.seed))?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let select_rows = if data.val.is_empty() { &data.train } else { &data.val };
    let mut best: Option<(Vec<Dense>, TrainReport)> = None;
    let mut final_train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let drop = Dropout {
            rng: &mut rng,
            p: cfg.dropout,
        };
        let pass = run(arch, &model.params, &data, &data.train, Some(drop), true);
        if !pass.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: pass.loss,
            });
        }
        final_train_loss = pass.loss;
        let mut grads = pass.grads.expect("gradients requested");
        add_decay(&mut grads, &model.params, cfg.weight_decay);
        adam.step(&mut model.params, &grads, cfg.learning_rate);

        let logp = model.log_probabilities(&data);
        let val_accuracy = accuracy(&logp, &data.labels, select_rows);
        let val_loss = mean_nll(&logp, &data.labels, select_rows);
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        let better = match &best {
            None => true,
            Some((_, r)) => val_accuracy > r.val_accuracy || (val_accuracy == r.val_accuracy && val_loss < r.val_loss),
        };
        if better {
            let report = TrainReport {
                best_epoch: epoch,
                val_accuracy,
                val_loss,
                final_train_loss,
            };
            best = Some((model.params.clone(), report));
        }
    }
    let (params, mut report) = best.expect("at least one epoch ran");
    report.final_train_loss = final_train_loss;
    model.params = params;
    let ckpt = model.to_checkpoint()?;
    if !ckpt.all_finite() {
        return Err(Error::Diverged {
            epoch: report.best_epoch,
            loss: f64::INFINITY,
        });
    }
    Ok((ckpt, report))
}
