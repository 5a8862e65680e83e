//! Finite-dataset classification objectives.
//!
//! The empirical distribution over a stored dataset stands in for the data
//! distribution, so `F(w)` and `∇F(w)` are exact finite means and gradient
//! variances are population quantities rather than estimates.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::labels::{
    argmax, cross_entropy_class, mix_into, softmax, LabelDistribution,
    LabelSource, Logits,
};
use crate::oracle::{stream, LabelMode, Oracle, SampleStreams};

#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    teacher: Option<Vec<LabelDistribution>>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} of example {i} is out of range for {num_classes} classes",
                labels[i]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
            teacher: None,
        })
    }

    pub fn with_teacher_labels(mut self, teacher: Vec<LabelDistribution>) -> Result<Self> {
        if teacher.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} teacher labels for {} examples",
                teacher.len(),
                self.len()
            )));
        }
        if let Some(i) = teacher
            .iter()
            .position(|t| t.num_classes() != self.num_classes)
        {
            return Err(Error::invalid(format!(
                "teacher label {i} has {} classes, expected {}",
                teacher[i].num_classes(),
                self.num_classes
            )));
        }
        self.teacher = Some(teacher);
        Ok(self)
    }

    /// Stores the softmax output of `teacher` for every example.
    pub fn with_teacher_model(self, teacher: &Model) -> Result<Self> {
        check_model(teacher, &self)?;
        let labels = (0..self.len())
            .map(|i| {
                let z = teacher.arch().logits(teacher.params(), self.example(i));
                LabelDistribution::new(softmax(&z))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_teacher_labels(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn teacher_labels(&self) -> Option<&[LabelDistribution]> {
        self.teacher.as_deref()
    }

    /// The dataset repeated `k` times.
    pub fn repeated(&self, k: usize) -> Result<Self> {
        let mut out = Self::new(
            self.dim,
            self.num_classes,
            self.features.repeat(k),
            self.labels.repeat(k),
        )?;
        if let Some(t) = &self.teacher {
            out = out.with_teacher_labels((0..k).flat_map(|_| t.iter().cloned()).collect())?;
        }
        Ok(out)
    }

    /// The dataset with its examples reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let features = order.iter().flat_map(|&i| self.example(i).to_vec()).collect();
        let labels = order.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new(self.dim, self.num_classes, features, labels)?;
        if let Some(t) = &self.teacher {
            out = out.with_teacher_labels(order.iter().map(|&i| t[i].clone()).collect())?;
        }
        Ok(out)
    }

    /// Writes one example per line: features, `label`, then teacher
    /// probabilities when present. Reals carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push(format!("label:{}", self.num_classes));
        if self.teacher.is_some() {
            header.extend((0..self.num_classes).map(|k| format!("t{k}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.len() {
            for v in self.example(i) {
                let _ = write!(out, "{v:.16e},");
            }
            let _ = write!(out, "{}", self.labels[i]);
            if let Some(t) = &self.teacher {
                for p in t[i].probs() {
                    let _ = write!(out, ",{p:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("dataset file has no header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let label_col = cols
            .iter()
            .position(|c| c.starts_with("label:"))
            .ok_or_else(|| Error::Parse("header has no `label:K` column".into()))?;
        let num_classes: usize = cols[label_col]["label:".len()..]
            .parse()
            .map_err(|_| Error::Parse(format!("bad class count in `{}`", cols[label_col])))?;
        let dim = label_col;
        let extra = cols.len() - label_col - 1;
        if extra != 0 && extra != num_classes {
            return Err(Error::Parse(format!(
                "expected 0 or {num_classes} teacher columns, found {extra}"
            )));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut teacher = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    fields.len(),
                    cols.len()
                )));
            }
            let real = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", lineno + 1)))
            };
            for f in &fields[..dim] {
                features.push(real(f)?);
            }
            labels.push(fields[dim].parse::<usize>().map_err(|_| {
                Error::Parse(format!("line {}: bad label `{}`", lineno + 1, fields[dim]))
            })?);
            if extra > 0 {
                let probs = fields[dim + 1..].iter().map(|f| real(f)).collect::<Result<_>>()?;
                teacher.push(LabelDistribution::new(probs)?);
            }
        }
        let data = Self::new(dim, num_classes, features, labels)?;
        if extra > 0 {
            data.with_teacher_labels(teacher)
        } else {
            Ok(data)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n: usize,
    pub class_separation: f64,
    pub label_noise_rate: f64,
    pub seed: u64,
}

/// Mean of component `k`: `±separation` along axis `k/2` for the first `2d`
/// components, a seeded random direction beyond that.
fn component_mean(k: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    if k < 2 * dim {
        m[k / 2] = if k % 2 == 0 { separation } else { -separation };
    } else {
        let mut rng = stream(0x6d65_616e, k as u64);
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (mj, vj) in m.iter_mut().zip(v) {
            *mj = separation * vj / norm;
        }
    }
    m
}

/// Samples `n` points from `K` unit-variance spherical Gaussians whose means
/// have norm `class_separation`. Components are balanced to within one
/// example; a `label_noise_rate` fraction of labels is then redrawn
/// uniformly over all classes. The component means depend only on
/// `(K, d, separation)`, so datasets drawn with different seeds share them.
pub fn generate_gaussian_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    let MixtureSpec {
        num_classes,
        dim,
        n,
        class_separation,
        label_noise_rate,
        seed,
    } = *spec;
    if num_classes < 2 || dim == 0 || n < num_classes {
        return Err(Error::invalid(format!(
            "need K >= 2, d >= 1, n >= K; got K={num_classes}, d={dim}, n={n}"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(Error::invalid("class separation must be nonnegative"));
    }
    if !(0.0..1.0).contains(&label_noise_rate) {
        return Err(Error::invalid(format!(
            "label noise rate {label_noise_rate} outside [0, 1)"
        )));
    }
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|k| component_mean(k, dim, class_separation))
        .collect();
    let mut rng = stream(seed, 0);
    let mut components: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    components.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * dim);
    for &c in &components {
        for mj in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(mj + z);
        }
    }
    let mut labels = components;
    let flips = (label_noise_rate * n as f64).round() as usize;
    if flips > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..flips] {
            labels[i] = rng.random_range(0..num_classes);
        }
    }
    Dataset::new(dim, num_classes, features, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxLinear,
    MlpOneHidden { hidden: usize },
}

/// Shape of a model: how the flat parameter vector is laid out.
///
/// Softmax-linear stores `K` rows of `d` weights followed by a bias. The
/// one-hidden-layer MLP stores `h` rows of `d + 1` (tanh layer) followed by
/// `K` rows of `h + 1` (output layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Arch {
    pub fn param_count(&self) -> usize {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::SoftmaxLinear => k * (d + 1),
            ModelKind::MlpOneHidden { hidden: h } => h * (d + 1) + k * (h + 1),
        }
    }

    fn hidden(&self, w: &[f64], x: &[f64], h: usize) -> Vec<f64> {
        let d = self.input_dim;
        (0..h)
            .map(|j| {
                let row = &w[j * (d + 1)..(j + 1) * (d + 1)];
                (affine(row, x)).tanh()
            })
            .collect()
    }

    pub fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        match self.kind {
            ModelKind::SoftmaxLinear => (0..self.num_classes)
                .map(|k| affine(&w[k * (d + 1)..(k + 1) * (d + 1)], x))
                .collect(),
            ModelKind::MlpOneHidden { hidden: h } => {
                let z = self.hidden(w, x, h);
                let out = &w[h * (d + 1)..];
                (0..self.num_classes)
                    .map(|k| affine(&out[k * (h + 1)..(k + 1) * (h + 1)], &z))
                    .collect()
            }
        }
    }

    /// Adds `scale · ∇_w ℓ(label, f(w; x))` to `grad`.
    fn accumulate_grad(&self, w: &[f64], x: &[f64], label: &[f64], scale: f64, grad: &mut [f64]) {
        let d = self.input_dim;
        match self.kind {
            ModelKind::SoftmaxLinear => {
                let p = softmax(&self.logits(w, x));
                for k in 0..self.num_classes {
                    let gk = scale * (p[k] - label[k]);
                    let row = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
                    for (r, xi) in row.iter_mut().zip(x) {
                        *r += gk * xi;
                    }
                    row[d] += gk;
                }
            }
            ModelKind::MlpOneHidden { hidden: h } => {
                let z = self.hidden(w, x, h);
                let out = &w[h * (d + 1)..];
                let logits: Vec<f64> = (0..self.num_classes)
                    .map(|k| affine(&out[k * (h + 1)..(k + 1) * (h + 1)], &z))
                    .collect();
                let p = softmax(&logits);
                let mut dz = vec![0.0; h];
                let (g_hidden, g_out) = grad.split_at_mut(h * (d + 1));
                for k in 0..self.num_classes {
                    let gk = scale * (p[k] - label[k]);
                    let row = &out[k * (h + 1)..(k + 1) * (h + 1)];
                    let grow = &mut g_out[k * (h + 1)..(k + 1) * (h + 1)];
                    for j in 0..h {
                        grow[j] += gk * z[j];
                        dz[j] += gk * row[j];
                    }
                    grow[h] += gk;
                }
                for j in 0..h {
                    let da = dz[j] * (1.0 - z[j] * z[j]);
                    let grow = &mut g_hidden[j * (d + 1)..(j + 1) * (d + 1)];
                    for (r, xi) in grow.iter_mut().zip(x) {
                        *r += da * xi;
                    }
                    grow[d] += da;
                }
            }
        }
    }
}

fn affine(row: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    row[..n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[n]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Arch,
    params: Vec<f64>,
}

impl Model {
    pub fn new(arch: Arch, params: Vec<f64>) -> Result<Self> {
        if let ModelKind::MlpOneHidden { hidden: 0 } = arch.kind {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "{} parameters given, model needs {}",
                params.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::new(arch, vec![0.0; arch.param_count()])
    }

    /// Independent `N(0, scale²)` parameters.
    pub fn random(arch: Arch, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, 7);
        let params = (0..arch.param_count())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(arch, params)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }
}

fn check_model(model: &Model, data: &Dataset) -> Result<()> {
    if model.arch.input_dim != data.dim() || model.arch.num_classes != data.num_classes() {
        return Err(Error::invalid(format!(
            "model expects d={}, K={} but dataset has d={}, K={}",
            model.arch.input_dim,
            model.arch.num_classes,
            data.dim(),
            data.num_classes()
        )));
    }
    Ok(())
}

pub fn logits(model: &Model, x: &[f64]) -> Result<Logits> {
    if x.len() != model.arch.input_dim {
        return Err(Error::invalid(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            model.arch.input_dim
        )));
    }
    Logits::new(model.arch.logits(&model.params, x))
}

/// Exact mean one-hot cross-entropy over the dataset.
pub fn full_objective(model: &Model, data: &Dataset) -> Result<f64> {
    check_model(model, data)?;
    Ok(objective_raw(&model.arch, &model.params, data))
}

/// Exact mean of the per-example one-hot gradients, summed in index order.
pub fn full_gradient(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    check_model(model, data)?;
    Ok(gradient_raw(&model.arch, &model.params, data))
}

/// Gradient of the single-example loss under `mode`.
pub fn stochastic_gradient(
    model: &Model,
    data: &Dataset,
    index: usize,
    mode: &LabelMode,
) -> Result<Vec<f64>> {
    check_model(model, data)?;
    if index >= data.len() {
        return Err(Error::invalid(format!(
            "index {index} out of range for {} examples",
            data.len()
        )));
    }
    check_label_mode(data, mode)?;
    Ok(example_gradient(&model.arch, &model.params, data, index, mode))
}

/// Fraction of examples whose lowest-index maximal logit is the label.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    check_model(model, data)?;
    Ok(accuracy_raw(&model.arch, &model.params, data))
}

pub(crate) fn check_label_mode(data: &Dataset, mode: &LabelMode) -> Result<()> {
    match mode.source() {
        Some(LabelSource::Teacher) if data.teacher_labels().is_none() => Err(Error::config(
            "teacher smoothing requested but the dataset has no teacher labels",
        )),
        Some(LabelSource::Fixed(d)) if d.num_classes() != data.num_classes() => {
            Err(Error::config(format!(
                "fixed smoothing distribution has {} classes, dataset has {}",
                d.num_classes(),
                data.num_classes()
            )))
        }
        _ => Ok(()),
    }
}

fn objective_raw(arch: &Arch, w: &[f64], data: &Dataset) -> f64 {
    let sum: f64 = (0..data.len())
        .map(|i| cross_entropy_class(data.label(i), &arch.logits(w, data.example(i))))
        .sum();
    sum / data.len() as f64
}

fn gradient_raw(arch: &Arch, w: &[f64], data: &Dataset) -> Vec<f64> {
    let mut grad = vec![0.0; w.len()];
    let mut label = vec![0.0; data.num_classes()];
    for i in 0..data.len() {
        label[data.label(i)] = 1.0;
        arch.accumulate_grad(w, data.example(i), &label, 1.0, &mut grad);
        label[data.label(i)] = 0.0;
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    grad
}

fn accuracy_raw(arch: &Arch, w: &[f64], data: &Dataset) -> f64 {
    let hits = (0..data.len())
        .filter(|&i| argmax(&arch.logits(w, data.example(i))) == data.label(i))
        .count();
    hits as f64 / data.len() as f64
}

/// The smoothing distribution for example `i`.
fn hat_label(data: &Dataset, i: usize, source: &LabelSource) -> Vec<f64> {
    match source {
        LabelSource::Uniform => vec![1.0 / data.num_classes() as f64; data.num_classes()],
        LabelSource::Fixed(d) => d.probs().to_vec(),
        LabelSource::Teacher => data.teacher_labels().expect("checked")[i].probs().to_vec(),
    }
}

/// The label vector example `i` is trained against under `mode`.
pub(crate) fn mode_label(data: &Dataset, i: usize, mode: &LabelMode) -> Vec<f64> {
    let mut y = vec![0.0; data.num_classes()];
    y[data.label(i)] = 1.0;
    match mode {
        LabelMode::OneHot => y,
        LabelMode::HatOnly(source) => hat_label(data, i, source),
        LabelMode::Smoothed(spec) => {
            let hat = hat_label(data, i, spec.source());
            let mut out = vec![0.0; y.len()];
            mix_into(&mut out, &y, &hat, spec.theta());
            out
        }
    }
}

pub(crate) fn example_gradient(
    arch: &Arch,
    w: &[f64],
    data: &Dataset,
    i: usize,
    mode: &LabelMode,
) -> Vec<f64> {
    let label = mode_label(data, i, mode);
    let mut grad = vec![0.0; w.len()];
    arch.accumulate_grad(w, data.example(i), &label, 1.0, &mut grad);
    grad
}

#[cfg(test)]
pub(crate) fn example_loss(arch: &Arch, w: &[f64], data: &Dataset, i: usize, mode: &LabelMode) -> f64 {
    crate::labels::cross_entropy_raw(&mode_label(data, i, mode), &arch.logits(w, data.example(i)))
}

/// Cross-entropy training on a stored dataset, with an optional held-out
/// set for accuracy.
#[derive(Debug, Clone)]
pub struct ClassificationOracle {
    arch: Arch,
    data: Dataset,
    holdout: Option<Dataset>,
}

impl ClassificationOracle {
    pub fn new(kind: ModelKind, data: Dataset) -> Result<Self> {
        let arch = Arch {
            kind,
            input_dim: data.dim(),
            num_classes: data.num_classes(),
        };
        Model::zeros(arch)?;
        Ok(Self {
            arch,
            data,
            holdout: None,
        })
    }

    pub fn with_holdout(mut self, holdout: Dataset) -> Result<Self> {
        if holdout.dim() != self.data.dim() || holdout.num_classes() != self.data.num_classes() {
            return Err(Error::invalid("held-out set shape differs from training set"));
        }
        self.holdout = Some(holdout);
        Ok(self)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn holdout(&self) -> Option<&Dataset> {
        self.holdout.as_ref()
    }

    pub fn model(&self, w: &[f64]) -> Result<Model> {
        Model::new(self.arch, w.to_vec())
    }

    /// Gradient of example `i` under `mode`, without re-validating inputs.
    pub fn example_gradient(&self, w: &[f64], i: usize, mode: &LabelMode) -> Vec<f64> {
        example_gradient(&self.arch, w, &self.data, i, mode)
    }

    pub fn train_accuracy(&self, w: &[f64]) -> f64 {
        accuracy_raw(&self.arch, w, &self.data)
    }
}

impl Oracle for ClassificationOracle {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn value(&self, w: &[f64]) -> f64 {
        objective_raw(&self.arch, w, &self.data)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        gradient_raw(&self.arch, w, &self.data)
    }

    fn check_mode(&self, mode: &LabelMode) -> Result<()> {
        check_label_mode(&self.data, mode)
    }

    fn sample_gradient(
        &self,
        w: &[f64],
        mode: &LabelMode,
        streams: &mut SampleStreams,
    ) -> Result<Vec<f64>> {
        let i = streams.index.random_range(0..self.data.len());
        Ok(example_gradient(&self.arch, w, &self.data, i, mode))
    }

    fn accuracy(&self, w: &[f64]) -> Option<f64> {
        Some(accuracy_raw(
            &self.arch,
            w,
            self.holdout.as_ref().unwrap_or(&self.data),
        ))
    }

    fn default_eval_stride(&self) -> usize {
        self.data.len()
    }
}
