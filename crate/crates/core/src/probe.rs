//! Linear probe on frozen embeddings: L2-regularized multinomial logistic
//! regression, macro F1, and session-level train/test splits.
//!
//! The objective is the (optionally class-weighted) sum of per-frame
//! cross-entropies plus (lambda/2)·||W||², with unpenalized intercepts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EmbeddingMatrix, FrameTable, Task};
use crate::select::SelectionManifest;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("training data has a single class ({0})")]
    SingleClass(usize),
    #[error("feature row {0} is not finite")]
    NonFiniteFeature(usize),
    #[error("no training frames after restricting the selection to train sessions")]
    EmptySelection,
    #[error("{rows} feature rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("training frame {0:?} belongs to a test session")]
    Leakage(String),
    #[error("test side has no labelled frames for task {0}")]
    EmptyTestSet(Task),
    #[error("frame {0:?} has no embedding row")]
    MissingEmbedding(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    Uniform,
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Lbfgs,
    GradientDescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    /// Stop when the gradient's Euclidean norm falls below this.
    pub tol: f64,
    pub class_weighting: ClassWeighting,
    pub optimizer: Optimizer,
    /// Standardize features with train-set mean and standard deviation.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_lambda: 1.0,
            max_iters: 1000,
            tol: 1e-6,
            class_weighting: ClassWeighting::Uniform,
            optimizer: Optimizer::Lbfgs,
            standardize: true,
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Matrix::new(rows.len(), cols, rows.concat())
    }
}

/// Per-feature affine map learned on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows.max(1) as f64;
        let mut mean = vec![0.0; x.cols];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn identity(cols: usize) -> Self {
        Standardizer { mean: vec![0.0; cols], scale: vec![1.0; cols] }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in out.data.chunks_mut(x.cols.max(1)) {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Weighted multinomial logistic loss over a fixed design.
pub struct Objective<'a> {
    pub x: &'a Matrix,
    /// Class position in 0..k for each row.
    pub y: &'a [usize],
    pub sample_weight: &'a [f64],
    pub k: usize,
    pub lambda: f64,
}

impl Objective<'_> {
    pub fn n_params(&self) -> usize {
        self.k * (self.x.cols + 1)
    }

    /// Loss and gradient at `theta` = [W (k x d, row-major), b (k)].
    pub fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (k, d) = (self.k, self.x.cols);
        let (w, b) = theta.split_at(k * d);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut z = vec![0.0; k];
        for i in 0..self.x.rows {
            let xi = self.x.row(i);
            for c in 0..k {
                z[c] = b[c] + dot(&w[c * d..(c + 1) * d], xi);
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - zmax).exp();
                sum += *v;
            }
            let sw = self.sample_weight[i];
            loss += sw * (sum.ln() - (z[self.y[i]].ln()));
            let (gw, gb) = grad.split_at_mut(k * d);
            for c in 0..k {
                let p = z[c] / sum;
                let r = sw * (p - if c == self.y[i] { 1.0 } else { 0.0 });
                if r != 0.0 {
                    gb[c] += r;
                    for (g, x) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                        *g += r * x;
                    }
                }
            }
        }
        let (gw, _) = grad.split_at_mut(k * d);
        for (g, wv) in gw.iter_mut().zip(w) {
            *g += self.lambda * wv;
        }
        loss + 0.5 * self.lambda * dot(w, w)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.eval(theta, &mut g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Backtracks from `step` until the Armijo condition holds. Near the optimum
/// the decrease drops below floating-point resolution; a step is then also
/// accepted if the objective is unchanged to roundoff and the gradient
/// shrinks.
#[allow(clippy::too_many_arguments)]
fn armijo(
    obj: &Objective<'_>,
    x: &[f64],
    f: f64,
    g: &[f64],
    dir: &[f64],
    mut step: f64,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<(f64, f64)> {
    let slope = dot(g, dir);
    let g_norm = norm(g);
    let roundoff = 1e-14 * f.abs().max(1.0);
    for _ in 0..MAX_HALVINGS {
        for ((xn, xi), di) in x_new.iter_mut().zip(x).zip(dir) {
            *xn = xi + step * di;
        }
        let f_new = obj.eval(x_new, g_new);
        if f_new <= f + ARMIJO_C1 * step * slope || (f_new - f <= roundoff && norm(g_new) < g_norm) {
            return Some((step, f_new));
        }
        step *= 0.5;
    }
    None
}

/// Limited-memory BFGS (two-loop recursion, memory 10) with Armijo
/// backtracking.
pub fn minimize_lbfgs(obj: &Objective<'_>, theta0: Vec<f64>, max_iters: usize, tol: f64) -> OptResult {
    const MEMORY: usize = 10;
    let n = theta0.len();
    let mut x = theta0;
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut history = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    while iterations < max_iters && norm(&g) >= tol {
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for j in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            alpha[j] = rho * dot(&s_hist[j], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[j]) {
                *d -= alpha[j] * y;
            }
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for j in 0..m {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            let beta = rho * dot(&y_hist[j], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[j]) {
                *d += (alpha[j] - beta) * s;
            }
        }
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            s_hist.clear();
            y_hist.clear();
        }
        let step0 = if s_hist.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let Some((_, f_new)) = armijo(obj, &x, f, &g, &dir, step0, &mut x_new, &mut g_new) else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        history.push(f);
        iterations += 1;
    }
    let grad_norm = norm(&g);
    OptResult { theta: x, objective: f, iterations, grad_norm, converged: grad_norm < tol, history }
}

/// Steepest descent with Armijo backtracking and step growth after each
/// accepted step.
pub fn minimize_gd(obj: &Objective<'_>, theta0: Vec<f64>, max_iters: usize, tol: f64) -> OptResult {
    let n = theta0.len();
    let mut x = theta0;
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut history = vec![f];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut step = 1.0 / norm(&g).max(1.0);
    let mut iterations = 0;
    while iterations < max_iters && norm(&g) >= tol {
        let dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let Some((accepted, f_new)) = armijo(obj, &x, f, &g, &dir, step, &mut x_new, &mut g_new) else {
            break;
        };
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        history.push(f);
        step = accepted * 2.0;
        iterations += 1;
    }
    let grad_norm = norm(&g);
    OptResult { theta: x, objective: f, iterations, grad_norm, converged: grad_norm < tol, history }
}

/// Per-sample weights: all ones, or n / (K * n_c) for balanced weighting.
pub fn sample_weights(y: &[usize], k: usize, weighting: ClassWeighting) -> Vec<f64> {
    match weighting {
        ClassWeighting::Uniform => vec![1.0; y.len()],
        ClassWeighting::Balanced => {
            let mut counts = vec![0usize; k];
            for &c in y {
                counts[c] += 1;
            }
            let n = y.len() as f64;
            y.iter().map(|&c| n / (k as f64 * counts[c] as f64)).collect()
        }
    }
}

/// Fitted linear classifier over the original label space.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// Original class labels, one per output.
    pub classes: Vec<usize>,
    pub dim: usize,
    /// k x d, row-major, in standardized feature space.
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub standardizer: Standardizer,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub trait Classifier {
    fn predict(&self, x: &Matrix) -> Vec<usize>;
}

/// Plug-in point for alternative probe families.
pub trait Trainer: Sync {
    type Model: Classifier;
    fn fit(&self, x: &Matrix, y: &[usize]) -> Result<Self::Model, ProbeError>;
}

impl Classifier for LinearModel {
    fn predict(&self, x: &Matrix) -> Vec<usize> {
        let d = self.dim;
        let xs = self.standardizer.apply(x);
        (0..xs.rows)
            .map(|i| {
                let xi = xs.row(i);
                let mut best = (f64::NEG_INFINITY, 0);
                for c in 0..self.classes.len() {
                    let z = self.intercepts[c] + dot(&self.weights[c * d..(c + 1) * d], xi);
                    if z > best.0 {
                        best = (z, c);
                    }
                }
                self.classes[best.1]
            })
            .collect()
    }
}

/// Always predicts one class; used when a selection contains a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantModel(pub usize);

impl Classifier for ConstantModel {
    fn predict(&self, x: &Matrix) -> Vec<usize> {
        vec![self.0; x.rows]
    }
}

pub fn train(x: &Matrix, labels: &[usize], cfg: &ProbeConfig) -> Result<LinearModel, ProbeError> {
    if x.rows != labels.len() {
        return Err(ProbeError::LabelMismatch { rows: x.rows, labels: labels.len() });
    }
    if let Some(i) = (0..x.rows).find(|&i| x.row(i).iter().any(|v| !v.is_finite())) {
        return Err(ProbeError::NonFiniteFeature(i));
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    match classes.len() {
        0 => return Err(ProbeError::EmptySelection),
        1 => return Err(ProbeError::SingleClass(classes[0])),
        _ => {}
    }
    let pos: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let y: Vec<usize> = labels.iter().map(|c| pos[c]).collect();
    let standardizer = if cfg.standardize { Standardizer::fit(x) } else { Standardizer::identity(x.cols) };
    let xs = standardizer.apply(x);
    let k = classes.len();
    let weights = sample_weights(&y, k, cfg.class_weighting);
    let obj = Objective { x: &xs, y: &y, sample_weight: &weights, k, lambda: cfg.l2_lambda };
    let theta0 = vec![0.0; obj.n_params()];
    let res = match cfg.optimizer {
        Optimizer::Lbfgs => minimize_lbfgs(&obj, theta0, cfg.max_iters, cfg.tol),
        Optimizer::GradientDescent => minimize_gd(&obj, theta0, cfg.max_iters, cfg.tol),
    };
    let (w, b) = res.theta.split_at(k * x.cols);
    Ok(LinearModel {
        classes,
        dim: x.cols,
        weights: w.to_vec(),
        intercepts: b.to_vec(),
        standardizer,
        objective: res.objective,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// The shipped trainer: L2 logistic regression.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogisticTrainer(pub ProbeConfig);

impl Trainer for LogisticTrainer {
    type Model = LinearModel;
    fn fit(&self, x: &Matrix, y: &[usize]) -> Result<LinearModel, ProbeError> {
        train(x, y, &self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<(usize, f64)>,
    /// Classes listed but absent from the ground truth; excluded from the mean.
    pub absent: Vec<usize>,
}

/// Unweighted mean of per-class F1 over classes present in `actual`.
pub fn macro_f1(predicted: &[usize], actual: &[usize], classes: &[usize]) -> F1Report {
    let mut per_class = Vec::new();
    let mut absent = Vec::new();
    for &c in classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p == c, a == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fn_ == 0 {
            absent.push(c);
            continue;
        }
        per_class.push((c, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64));
    }
    let macro_f1 = if per_class.is_empty() {
        f64::NAN
    } else {
        per_class.iter().map(|(_, f)| f).sum::<f64>() / per_class.len() as f64
    };
    F1Report { macro_f1, per_class, absent }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_sessions: BTreeSet<String>,
    pub test_sessions: BTreeSet<String>,
    pub seed: u64,
    /// Classes that could not be placed on the test side.
    pub absent_from_test: Vec<usize>,
    /// Classes that could not be kept on the train side.
    pub absent_from_train: Vec<usize>,
}

/// Assigns whole sessions to train or test. Sessions are shuffled by seed;
/// the test side first takes sessions that add an uncovered class, then
/// fills up in shuffled order, never removing the last train holder of a
/// class while an alternative exists.
pub fn session_split(
    tallies: &BTreeMap<String, BTreeMap<usize, usize>>,
    test_fraction: f64,
    seed: u64,
) -> SplitPlan {
    let mut order: Vec<&String> = tallies.keys().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_test = if n < 2 { 0 } else { ((test_fraction * n as f64).round() as usize).clamp(1, n - 1) };
    let classes_of = |s: &str| tallies[s].iter().filter(|(_, &c)| c > 0).map(|(&k, _)| k).collect::<Vec<_>>();
    let mut holders: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &order {
        for c in classes_of(s) {
            *holders.entry(c).or_default() += 1;
        }
    }
    let mut in_test = vec![false; n];
    let mut n_in = 0;
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    let keeps_train = |s: &str, holders: &BTreeMap<usize, usize>| classes_of(s).iter().all(|c| holders[c] > 1);
    for pass in 0..3 {
        for (i, &s) in order.iter().enumerate() {
            if n_in >= n_test {
                break;
            }
            if in_test[i] {
                continue;
            }
            let ok = match pass {
                0 => classes_of(s).iter().any(|c| !covered.contains(c)) && keeps_train(s, &holders),
                1 => keeps_train(s, &holders),
                _ => true,
            };
            if ok {
                for c in classes_of(s) {
                    covered.insert(c);
                    *holders.get_mut(&c).expect("counted") -= 1;
                }
                in_test[i] = true;
                n_in += 1;
            }
        }
    }
    let test = order.iter().zip(&in_test).filter(|(_, t)| **t).map(|(s, _)| *s);
    let test_sessions: BTreeSet<String> = test.cloned().collect();
    let train_sessions: BTreeSet<String> =
        tallies.keys().filter(|s| !test_sessions.contains(*s)).cloned().collect();
    let side_classes = |side: &BTreeSet<String>| side.iter().flat_map(|s| classes_of(s)).collect::<BTreeSet<_>>();
    let all: BTreeSet<usize> = holders.keys().copied().collect();
    let (te, tr) = (side_classes(&test_sessions), side_classes(&train_sessions));
    let absent_from_test: Vec<usize> = all.difference(&te).copied().collect();
    let absent_from_train: Vec<usize> = all.difference(&tr).copied().collect();
    if !absent_from_test.is_empty() {
        warn!("classes absent from the test split: {absent_from_test:?}");
    }
    SplitPlan { train_sessions, test_sessions, seed, absent_from_test, absent_from_train }
}

/// Errors if any training frame id is also a test frame or comes from a test
/// session.
pub fn leakage_check<'a>(
    train: impl IntoIterator<Item = (&'a str, &'a str)>,
    split: &SplitPlan,
) -> Result<(), ProbeError> {
    for (frame_id, session) in train {
        if split.test_sessions.contains(session) {
            return Err(ProbeError::Leakage(frame_id.to_string()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub f1: F1Report,
    pub n_train_frames: usize,
    pub train_sessions: BTreeSet<String>,
    /// Training data held one class; a constant predictor was used.
    pub single_class: bool,
    pub converged: bool,
}

/// Held-out design for one task and split, reused across cells.
pub struct EvalContext<'a> {
    pub task: Task,
    pub split: &'a SplitPlan,
    embeddings: &'a EmbeddingMatrix,
    /// frame_id -> (session, label, embedding row)
    frames: HashMap<&'a str, (&'a str, Option<usize>, Option<usize>)>,
    test_x: Matrix,
    test_y: Vec<usize>,
    test_ids: BTreeSet<&'a str>,
    classes: Vec<usize>,
}

fn embedding_row(m: &EmbeddingMatrix, row: usize) -> Vec<f64> {
    m.row(row).iter().map(|&v| v as f64).collect()
}

impl<'a> EvalContext<'a> {
    pub fn new(
        task: Task,
        split: &'a SplitPlan,
        frames: &'a FrameTable,
        embeddings: &'a EmbeddingMatrix,
    ) -> Result<Self, ProbeError> {
        let mut index = HashMap::new();
        let mut test_rows = Vec::new();
        let mut test_y = Vec::new();
        let mut test_ids = BTreeSet::new();
        for (session, list) in frames {
            let is_test = split.test_sessions.contains(session);
            for f in list {
                index.insert(f.frame_id.as_str(), (session.as_str(), f.label(task), f.embedding_row));
                if is_test {
                    test_ids.insert(f.frame_id.as_str());
                    if let (Some(label), Some(row)) = (f.label(task), f.embedding_row) {
                        test_rows.push(embedding_row(embeddings, row));
                        test_y.push(label);
                    }
                }
            }
        }
        if test_y.is_empty() {
            return Err(ProbeError::EmptyTestSet(task));
        }
        let classes: Vec<usize> = test_y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(EvalContext {
            task,
            split,
            embeddings,
            frames: index,
            test_x: Matrix::from_rows(&test_rows),
            test_y,
            test_ids,
            classes,
        })
    }

    pub fn n_test(&self) -> usize {
        self.test_y.len()
    }

    /// Trains on the manifest's labelled train-session frames and scores
    /// macro F1 on every labelled test-session frame.
    pub fn run_cell<T: Trainer>(&self, manifest: &SelectionManifest, trainer: &T) -> Result<CellOutcome, ProbeError> {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut used: Vec<(&str, &str)> = Vec::new();
        for s in &manifest.selected {
            let Some(&(session, label, emb)) = self.frames.get(s.frame_id.as_str()) else { continue };
            if !self.split.train_sessions.contains(session) {
                continue;
            }
            let Some(label) = label else { continue };
            let row = emb.ok_or_else(|| ProbeError::MissingEmbedding(s.frame_id.clone()))?;
            rows.push(embedding_row(self.embeddings, row));
            y.push(label);
            used.push((s.frame_id.as_str(), session));
        }
        if y.is_empty() {
            return Err(ProbeError::EmptySelection);
        }
        leakage_check(used.iter().copied(), self.split)?;
        if let Some((id, _)) = used.iter().find(|(id, _)| self.test_ids.contains(id)) {
            return Err(ProbeError::Leakage(id.to_string()));
        }
        let x = Matrix::from_rows(&rows);
        let (pred, single_class, converged) = match trainer.fit(&x, &y) {
            Ok(model) => (model.predict(&self.test_x), false, true),
            Err(ProbeError::SingleClass(c)) => (ConstantModel(c).predict(&self.test_x), true, true),
            Err(e) => return Err(e),
        };
        Ok(CellOutcome {
            f1: macro_f1(&pred, &self.test_y, &self.classes),
            n_train_frames: y.len(),
            train_sessions: used.iter().map(|(_, s)| s.to_string()).collect(),
            single_class,
            converged,
        })
    }
}
