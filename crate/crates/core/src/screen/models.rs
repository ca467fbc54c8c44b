//! From-scratch binary classifiers. Every model scores in [0, 1] with
//! higher meaning more case-like, and predicts positive at 0.5.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelKind, ModelSpec, ScreenError};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln σ(z) + (1-y) ln(1-σ(z))]`.
fn log_loss_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregParams {
    pub l2: f64,
    pub iterations: usize,
    pub step: f64,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self { l2: 1e-2, iterations: 500, step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub l2: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { l2: 1e-2, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: usize,
    pub epochs: usize,
    pub step: f64,
    pub init_scale: f64,
    pub l2: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: 16, epochs: 300, step: 0.05, init_scale: 0.5, l2: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub logreg: LogregParams,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub svm: SvmParams,
    pub mlp: MlpParams,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ScreenError> {
        let bad = |m: &str| Err(ScreenError::Hyperparams(m.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !non_negative(self.logreg.l2) || !positive(self.logreg.step) || self.logreg.iterations == 0 {
            return bad("logreg: l2 >= 0, step > 0 and iterations >= 1 required");
        }
        if self.tree.max_depth == 0 || self.tree.min_leaf == 0 {
            return bad("tree: max_depth and min_leaf must be at least 1");
        }
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 || self.forest.min_leaf == 0 {
            return bad("forest: n_trees, max_depth and min_leaf must be at least 1");
        }
        if !positive(self.svm.l2) || self.svm.epochs == 0 {
            return bad("svm: l2 > 0 and epochs >= 1 required");
        }
        let m = &self.mlp;
        if m.hidden == 0 || m.epochs == 0 || !positive(m.step) || !positive(m.init_scale) || !non_negative(m.l2) {
            return bad("mlp: hidden, epochs >= 1, step and init_scale > 0, l2 >= 0 required");
        }
        Ok(())
    }
}

/// Per-feature z-scoring fitted on training data. Constant features carry
/// no information and are dropped from the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    active: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let active: Vec<usize> = (0..d).filter(|&j| var[j] > 1e-24).collect();
        Self {
            mean: active.iter().map(|&j| mean[j]).collect(),
            scale: active.iter().map(|&j| 1.0 / var[j].sqrt()).collect(),
            active,
        }
    }

    /// Number of output features.
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.active.iter().zip(&self.mean).zip(&self.scale).map(|((&j, m), s)| (x[j] - m) * s).collect()
    }
}

/// Regularized mean log-loss of a linear model; `params` is `[w.., b]`.
pub fn logreg_loss(params: &[f64], x: &[Vec<f64>], y: &[f64], l2: f64) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let n = x.len() as f64;
    let data: f64 = x.iter().zip(y).map(|(xi, &yi)| log_loss_from_logit(dot(w, xi) + b[0], yi)).sum::<f64>() / n;
    data + 0.5 * l2 * dot(w, w)
}

/// Analytic gradient of [`logreg_loss`].
pub fn logreg_grad(params: &[f64], x: &[Vec<f64>], y: &[f64], l2: f64) -> Vec<f64> {
    let d = params.len() - 1;
    let (w, b) = params.split_at(d);
    let n = x.len() as f64;
    let mut g = vec![0.0; d + 1];
    for (xi, &yi) in x.iter().zip(y) {
        let r = (sigmoid(dot(w, xi) + b[0]) - yi) / n;
        for (gj, xj) in g.iter_mut().zip(xi) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    for (gj, wj) in g.iter_mut().zip(w) {
        *gj += l2 * wj;
    }
    g
}

/// Shape of a single-hidden-layer network's flat parameter vector:
/// `[W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub inputs: usize,
    pub hidden: usize,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], f64) {
        let (w1, rest) = p.split_at(self.hidden * self.inputs);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    fn forward(&self, p: &[f64], x: &[f64], hidden: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split(p);
        for (j, h) in hidden.iter_mut().enumerate() {
            *h = (dot(&w1[j * self.inputs..(j + 1) * self.inputs], x) + b1[j]).tanh();
        }
        dot(w2, hidden) + b2
    }
}

pub fn mlp_loss(shape: MlpShape, params: &[f64], x: &[Vec<f64>], y: &[f64], l2: f64) -> f64 {
    let mut h = vec![0.0; shape.hidden];
    let n = x.len() as f64;
    let data: f64 =
        x.iter().zip(y).map(|(xi, &yi)| log_loss_from_logit(shape.forward(params, xi, &mut h), yi)).sum::<f64>() / n;
    let (w1, _, w2, _) = shape.split(params);
    data + 0.5 * l2 * (dot(w1, w1) + dot(w2, w2))
}

/// Backpropagated gradient of [`mlp_loss`].
pub fn mlp_grad(shape: MlpShape, params: &[f64], x: &[Vec<f64>], y: &[f64], l2: f64) -> Vec<f64> {
    let MlpShape { inputs, hidden } = shape;
    let (w1, _, w2, _) = shape.split(params);
    let n = x.len() as f64;
    let mut g = vec![0.0; shape.len()];
    let mut h = vec![0.0; hidden];
    let (o_b1, o_w2, o_b2) = (hidden * inputs, hidden * inputs + hidden, hidden * inputs + 2 * hidden);
    for (xi, &yi) in x.iter().zip(y) {
        let z = shape.forward(params, xi, &mut h);
        let dz = (sigmoid(z) - yi) / n;
        g[o_b2] += dz;
        for j in 0..hidden {
            g[o_w2 + j] += dz * h[j];
            let da = dz * w2[j] * (1.0 - h[j] * h[j]);
            g[o_b1 + j] += da;
            for (k, xk) in xi.iter().enumerate() {
                g[j * inputs + k] += da * xk;
            }
        }
    }
    for (gj, wj) in g[..o_b1].iter_mut().zip(w1) {
        *gj += l2 * wj;
    }
    for (gj, wj) in g[o_w2..o_b2].iter_mut().zip(w2) {
        *gj += l2 * wj;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(p) => *p,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.score(x)
                } else {
                    right.score(x)
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: usize,
    min_leaf: usize,
    /// Features examined per node; `None` means all of them.
    max_features: Option<usize>,
}

impl TreeBuilder<'_> {
    fn build(&self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let leaf = Node::Leaf(if n == 0 { 0.5 } else { pos as f64 / n as f64 });
        if depth >= self.max_depth || pos == 0 || pos == n || n < 2 * self.min_leaf {
            return leaf;
        }
        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        if let Some(m) = self.max_features {
            features.shuffle(rng);
            features.truncate(m.clamp(1, d));
            features.sort_unstable();
        }

        let parent = gini(pos, n);
        // (impurity, feature, threshold); strict improvement keeps the lowest
        // feature and then the lowest threshold on ties
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_pos = 0;
            for split in 1..n {
                left_pos += usize::from(self.y[idx[split - 1]]);
                let (lo, hi) = (self.x[idx[split - 1]][f], self.x[idx[split]][f]);
                if lo == hi || split < self.min_leaf || n - split < self.min_leaf {
                    continue;
                }
                let impurity = (split as f64 * gini(left_pos, split)
                    + (n - split) as f64 * gini(pos - left_pos, n - split))
                    / n as f64;
                if best.is_none_or(|(b, _, _)| impurity < b - 1e-12) {
                    best = Some((impurity, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else { return leaf };
        if impurity >= parent - 1e-12 {
            return leaf;
        }
        let mut left: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] <= threshold).collect();
        let mut right: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][feature] > threshold).collect();
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(&mut left, depth + 1, rng)),
            right: Box::new(self.build(&mut right, depth + 1, rng)),
        }
    }
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// Fallback for single-class training data.
    Constant(f64),
    Logreg {
        standardizer: Standardizer,
        params: Vec<f64>,
    },
    Tree(Node),
    Forest(Vec<Node>),
    LinearSvm {
        standardizer: Standardizer,
        w: Vec<f64>,
        platt: (f64, f64),
    },
    Mlp {
        standardizer: Standardizer,
        shape: MlpShape,
        params: Vec<f64>,
    },
}

impl Model {
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Constant(p) => *p,
            Model::Logreg { standardizer, params } => {
                let z = standardizer.apply(x);
                let (w, b) = params.split_at(params.len() - 1);
                sigmoid(dot(w, &z) + b[0])
            }
            Model::Tree(root) => root.score(x),
            Model::Forest(trees) => trees.iter().map(|t| t.score(x)).sum::<f64>() / trees.len() as f64,
            Model::LinearSvm { standardizer, w, platt } => {
                let m = svm_margin(w, &standardizer.apply(x));
                sigmoid(platt.0 * m + platt.1)
            }
            Model::Mlp { standardizer, shape, params } => {
                let mut h = vec![0.0; shape.hidden];
                sigmoid(shape.forward(params, &standardizer.apply(x), &mut h))
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) >= 0.5
    }
}

fn svm_margin(w: &[f64], x: &[f64]) -> f64 {
    // last weight multiplies a constant 1 input
    let d = w.len() - 1;
    dot(&w[..d], x) + w[d]
}

fn gradient_descent(mut params: Vec<f64>, steps: usize, step: f64, grad: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    for _ in 0..steps {
        let g = grad(&params);
        for (p, gi) in params.iter_mut().zip(g) {
            *p -= step * gi;
        }
    }
    params
}

/// Fits `σ(a·m + c)` to labels by gradient descent on log-loss.
fn fit_platt(margins: &[f64], y: &[f64]) -> (f64, f64) {
    let x: Vec<Vec<f64>> = margins.iter().map(|&m| vec![m]).collect();
    let p = gradient_descent(vec![1.0, 0.0], 500, 0.5, |p| logreg_grad(p, &x, y, 0.0));
    (p[0], p[1])
}

pub fn train(spec: &ModelSpec, x: &[Vec<f64>], y: &[bool]) -> Result<Model, ScreenError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ScreenError::Shape(format!("{} rows for {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(ScreenError::Shape("rows differ in dimension".into()));
    }
    spec.hyperparams.validate()?;
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        log::warn!("training {:?} on single-class data; using a constant model", spec.kind);
        return Ok(Model::Constant(if pos == 0 { 0.0 } else { 1.0 }));
    }
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
    let hp = &spec.hyperparams;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    Ok(match spec.kind {
        ModelKind::Logreg | ModelKind::BowLogregBaseline => {
            let standardizer = Standardizer::fit(x);
            let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
            let p = &hp.logreg;
            let params = gradient_descent(vec![0.0; standardizer.dim() + 1], p.iterations, p.step, |w| {
                logreg_grad(w, &z, &yf, p.l2)
            });
            Model::Logreg { standardizer, params }
        }
        ModelKind::Tree => {
            let builder =
                TreeBuilder { x, y, max_depth: hp.tree.max_depth, min_leaf: hp.tree.min_leaf, max_features: None };
            let mut idx: Vec<usize> = (0..x.len()).collect();
            Model::Tree(builder.build(&mut idx, 0, &mut rng))
        }
        ModelKind::Forest => {
            let p = &hp.forest;
            let builder = TreeBuilder {
                x,
                y,
                max_depth: p.max_depth,
                min_leaf: p.min_leaf,
                max_features: Some(((d as f64).sqrt().round() as usize).max(1)),
            };
            let trees = (0..p.n_trees)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
                    builder.build(&mut idx, 0, &mut rng)
                })
                .collect();
            Model::Forest(trees)
        }
        ModelKind::LinearSvm => {
            let standardizer = Standardizer::fit(x);
            let z: Vec<Vec<f64>> = x
                .iter()
                .map(|r| {
                    let mut v = standardizer.apply(r);
                    v.push(1.0);
                    v
                })
                .collect();
            let lambda = hp.svm.l2;
            let mut w = vec![0.0; standardizer.dim() + 1];
            let mut order: Vec<usize> = (0..z.len()).collect();
            let mut t = 0.0;
            for _ in 0..hp.svm.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    t += 1.0;
                    let eta = 1.0 / (lambda * t);
                    let yi = if y[i] { 1.0 } else { -1.0 };
                    let hinge_active = yi * dot(&w, &z[i]) < 1.0;
                    for (wj, zj) in w.iter_mut().zip(&z[i]) {
                        *wj *= 1.0 - eta * lambda;
                        if hinge_active {
                            *wj += eta * yi * zj;
                        }
                    }
                }
            }
            let margins: Vec<f64> = z.iter().map(|r| dot(&w, r)).collect();
            let platt = fit_platt(&margins, &yf);
            Model::LinearSvm { standardizer, w, platt }
        }
        ModelKind::Mlp => {
            let standardizer = Standardizer::fit(x);
            let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
            let p = &hp.mlp;
            let shape = MlpShape { inputs: standardizer.dim(), hidden: p.hidden };
            let init: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-p.init_scale..p.init_scale)).collect();
            let params = gradient_descent(init, p.epochs, p.step, |w| mlp_grad(shape, w, &z, &yf, p.l2));
            Model::Mlp { standardizer, shape, params }
        }
    })
}
