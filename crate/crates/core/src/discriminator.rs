//! Linear attribute head over frozen-LM pooled hidden states.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, Tape, Var};
use crate::corpus::split;
use crate::error::{positive, Error, Result};
use crate::lm::argmax_index;
use crate::optim::{Adam, ParamSet};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.05, batch_size: 16, test_fraction: 0.2, seed: 0 }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !positive(self.lr) || !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0
        {
            return Err(Error::InvalidConfig(format!("discriminator: invalid settings {self:?}")));
        }
        Ok(())
    }
}

const W: usize = 0;
const B: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    /// Topic id of each class, ascending.
    classes: Vec<usize>,
    params: ParamSet,
}

impl Discriminator {
    pub fn zeros(classes: Vec<usize>, d_model: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Precondition(format!("discriminator needs >= 2 classes, got {}", classes.len())));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("class topic ids must be strictly ascending".into()));
        }
        let mut params = ParamSet::new();
        params.push("weight", Tensor::zeros(&[classes.len(), d_model]));
        params.push("bias", Tensor::zeros(&[classes.len()]));
        Ok(Self { classes, params })
    }

    pub fn from_tensors(classes: Vec<usize>, weight: Tensor, bias: Tensor) -> Result<Self> {
        let k = classes.len();
        if weight.shape().len() != 2 || weight.shape()[0] != k || bias.shape() != [k] {
            return Err(Error::Precondition(format!(
                "discriminator tensors {:?}/{:?} do not match {k} classes",
                weight.shape(),
                bias.shape()
            )));
        }
        let mut d = Self::zeros(classes, weight.shape()[1])?;
        {
            let mut it = d.params.iter_mut();
            it.next().expect("weight").value = weight;
            it.next().expect("bias").value = bias;
        }
        Ok(d)
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn d_model(&self) -> usize {
        self.weight().shape()[1]
    }

    pub fn class_of(&self, topic: usize) -> Option<usize> {
        self.classes.iter().position(|&t| t == topic)
    }

    pub fn weight(&self) -> &Tensor {
        self.params.value(W)
    }

    pub fn bias(&self) -> &Tensor {
        self.params.value(B)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    /// Class logits `[n, K]` for features `h: [n, d]`.
    pub fn logits_var(&self, tape: &mut Tape<'_>, vars: &[Var], h: Var) -> Result<Var> {
        let z = tape.matmul_t(h, vars[W])?;
        tape.add(z, vars[B])
    }

    /// `softmax(W h + b)`.
    pub fn predict(&self, h: &[f64]) -> Result<Vec<f64>> {
        let d = self.d_model();
        if h.len() != d {
            return Err(Error::ShapeMismatch { op: "predict", detail: format!("feature of length {} vs {d}", h.len()) });
        }
        let w = self.weight();
        let z: Vec<f64> = (0..self.classes.len())
            .map(|c| w.row(c).iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.bias().data()[c])
            .collect();
        let mut p = vec![0.0; z.len()];
        softmax_row(&z, &mut p);
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscReport {
    pub classes: Vec<usize>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub support: Vec<usize>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub epochs: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub loss_curve: Vec<f64>,
}

/// Accuracy and per-class precision/recall of `disc` on labelled features.
/// `labels` are topic ids; they must all be classes of `disc`.
pub fn evaluate(disc: &Discriminator, features: &[Vec<f64>], labels: &[usize]) -> Result<DiscReport> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Empty("labelled evaluation set"));
    }
    let k = disc.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for (h, &t) in features.iter().zip(labels) {
        let truth = disc.class_of(t).ok_or(Error::OutOfRange { what: "topic label", index: t, size: k })?;
        let pred = argmax_index(&disc.predict(h)?);
        confusion[truth][pred] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = (0..k).map(|c| ratio(confusion[c][c], (0..k).map(|r| confusion[r][c]).sum())).collect();
    let recall = (0..k).map(|c| ratio(confusion[c][c], support[c])).collect();
    Ok(DiscReport {
        classes: disc.classes.clone(),
        accuracy: trace as f64 / total as f64,
        precision,
        recall,
        support,
        confusion,
        epochs: 0,
        train_size: 0,
        test_size: total,
        loss_curve: Vec::new(),
    })
}

/// Fits the head by cross-entropy on a stratified train split and reports on
/// the held-out part. `labels` are topic ids.
pub fn train_discriminator(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &DiscConfig,
) -> Result<(Discriminator, DiscReport)> {
    config.validate()?;
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Precondition("one label per feature vector required".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Precondition("ragged feature vectors".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Precondition(format!("need >= 2 classes, got {}", classes.len())));
    }
    let parts = split(labels.len(), Some(labels), (1.0 - config.test_fraction, config.test_fraction), config.seed)?;
    let mut disc = Discriminator::zeros(classes, d)?;
    let class_ids: Vec<usize> = labels.iter().map(|&t| disc.class_of(t).expect("label in classes")).collect();
    let mut opt = Adam::with_lr(config.lr)?;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut r = rng::rng_from(config.seed, &[rng::tag("disc-epoch"), epoch as u64]);
        let order = rng::permutation(&mut r, parts.train.len());
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let idx: Vec<usize> = batch.iter().map(|&i| parts.train[i]).collect();
            let mut x = Vec::with_capacity(idx.len() * d);
            idx.iter().for_each(|&i| x.extend_from_slice(&features[i]));
            let x = Tensor::matrix(idx.len(), d, x)?;
            let targets: Vec<Option<usize>> = idx.iter().map(|&i| Some(class_ids[i])).collect();
            let (vars, grads, loss) = {
                let mut tape = Tape::new();
                let vars = disc.bind(&mut tape, true);
                let xv = tape.borrowed(&x, false);
                let z = disc.logits_var(&mut tape, &vars, xv)?;
                let loss = tape.cross_entropy(z, &targets)?;
                let grads = tape.backward(loss)?;
                (vars, grads, tape.value(loss)[0])
            };
            disc.params.zero_grad();
            disc.params.accumulate(&vars, &grads);
            opt.step(&mut disc.params)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / parts.train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("discriminator loss"));
        }
        curve.push(mean);
    }
    let test_f: Vec<Vec<f64>> = parts.test.iter().map(|&i| features[i].clone()).collect();
    let test_l: Vec<usize> = parts.test.iter().map(|&i| labels[i]).collect();
    let mut report = evaluate(&disc, &test_f, &test_l)?;
    report.epochs = config.epochs;
    report.train_size = parts.train.len();
    report.loss_curve = curve;
    Ok((disc, report))
}

/// Feature label strings for CSV headers.
pub fn class_names(disc: &Discriminator) -> Vec<String> {
    disc.classes.iter().map(|t| format!("topic_{t}")).collect()
}
