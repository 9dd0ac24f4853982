//! Two-stage GNN architectures and their weight checkpoints.

mod forward;
pub mod layers;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use forward::{
    activation_census, evaluate_accuracy, model_forward, model_logits, ActivationRecord,
    FnInterceptor, ForwardOutput, Interceptor, InterceptorRegistry, LayerSelector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Gcn,
    Gat,
    Cheb,
    Sgc,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gcn, Arch::Gat, Arch::Cheb, Arch::Sgc];

    pub fn tag(self) -> u8 {
        match self {
            Arch::Gcn => 0,
            Arch::Gat => 1,
            Arch::Cheb => 2,
            Arch::Sgc => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
            Arch::Cheb => "cheb",
            Arch::Sgc => "sgc",
        }
    }

    /// Layer identifiers, shared by weight tensor prefixes and activation records.
    pub fn layers(self) -> &'static [&'static str] {
        match self {
            Arch::Sgc => &["conv1"],
            _ => &["conv1", "conv2"],
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" => Ok(Arch::Gat),
            "cheb" | "chebyshev" => Ok(Arch::Cheb),
            "sgc" => Ok(Arch::Sgc),
            other => Err(Error::InvalidParameter(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
///
/// `hidden` is the hidden width for GCN and Chebyshev and the per-head width
/// for GAT. Fields that an architecture does not use are stored as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hyper {
    pub in_features: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub heads: usize,
    pub cheb_order: usize,
    pub sgc_hops: usize,
}

impl Hyper {
    /// Widths used throughout: GCN/Chebyshev hidden 16, Chebyshev order 2,
    /// GAT 8 heads of width 8, SGC two propagation steps.
    pub fn standard(arch: Arch, in_features: usize, num_classes: usize) -> Hyper {
        let base = Hyper {
            in_features,
            num_classes,
            hidden: 16,
            heads: 1,
            cheb_order: 2,
            sgc_hops: 2,
        };
        match arch {
            Arch::Gat => Hyper {
                hidden: 8,
                heads: 8,
                ..base
            },
            _ => base,
        }
    }
}

/// Closed-form weight count; there are no bias terms.
pub fn parameter_count(arch: Arch, h: &Hyper) -> usize {
    let (f, c) = (h.in_features, h.num_classes);
    match arch {
        Arch::Gcn => f * h.hidden + h.hidden * c,
        Arch::Sgc => f * c,
        Arch::Cheb => h.cheb_order * (f * h.hidden + h.hidden * c),
        Arch::Gat => {
            let width = h.heads * h.hidden;
            f * width + 2 * width + width * c + 2 * c
        }
    }
}

/// Tensor shapes an architecture expects, in storage order.
pub fn tensor_layout(arch: Arch, h: &Hyper) -> Vec<(String, Vec<usize>)> {
    let (f, c) = (h.in_features, h.num_classes);
    let t = |name: &str, shape: &[usize]| (name.to_string(), shape.to_vec());
    match arch {
        Arch::Gcn => vec![
            t("conv1.weight", &[f, h.hidden]),
            t("conv2.weight", &[h.hidden, c]),
        ],
        Arch::Sgc => vec![t("conv1.weight", &[f, c])],
        Arch::Cheb => {
            let mut v = Vec::new();
            for k in 0..h.cheb_order {
                v.push((format!("conv1.weight.{k}"), vec![f, h.hidden]));
            }
            for k in 0..h.cheb_order {
                v.push((format!("conv2.weight.{k}"), vec![h.hidden, c]));
            }
            v
        }
        Arch::Gat => {
            let width = h.heads * h.hidden;
            vec![
                t("conv1.weight", &[f, width]),
                t("conv1.att", &[h.heads, 2 * h.hidden]),
                t("conv2.weight", &[width, c]),
                t("conv2.att", &[1, 2 * c]),
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", expected, data.len()));
        }
        Ok(Tensor { name, shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Layer this tensor belongs to: the name up to the first `.`.
    pub fn layer(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Matrix::new(*r, *c, self.data.clone()),
            other => Err(Error::shape("Tensor::to_matrix", "rank 2", other.len())),
        }
    }

    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Architecture tag, hyperparameters and the ordered weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub arch: Arch,
    pub hyper: Hyper,
    pub tensors: Vec<Tensor>,
}

impl ModelCheckpoint {
    pub fn new(arch: Arch, hyper: Hyper, tensors: Vec<Tensor>) -> Result<Self> {
        let ckpt = ModelCheckpoint {
            arch,
            hyper,
            tensors,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Glorot-uniform initialization.
    pub fn init(arch: Arch, hyper: Hyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = tensor_layout(arch, &hyper)
            .into_iter()
            .map(|(name, shape)| {
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64) as f32;
                let n = fan_in * fan_out;
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor { name, shape, data }
            })
            .collect();
        ModelCheckpoint {
            arch,
            hyper,
            tensors,
        }
    }

    /// Checks tensor names and shapes against the architecture layout.
    pub fn validate(&self) -> Result<()> {
        let layout = tensor_layout(self.arch, &self.hyper);
        if layout.len() != self.tensors.len() {
            return Err(Error::Structural(format!(
                "{} checkpoint needs {} tensors, found {}",
                self.arch,
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Structural(format!(
                    "expected tensor {name} {shape:?}, found {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape("checkpoint tensor", name, t.data.len()));
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        self.tensor(name)?.to_matrix()
    }

    pub fn total_weights(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn bit_eq(&self, other: &ModelCheckpoint) -> bool {
        self.arch == other.arch
            && self.hyper == other.hyper
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }
}
