//! Cosine-similarity classifier: a small tanh MLP feature extractor scored
//! against a frozen table of unit-norm class embeddings.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector, Segment};

pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;
pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;

const UNIT_NORM_TOL: f64 = 1e-9;

/// Anything that carries globally unique sample ids.
pub trait Samples {
    fn sample_ids(&self) -> &[u64];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    sample_ids: Vec<u64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, sample_ids: Vec<u64>) -> Result<Self> {
        let b = inputs.nrows();
        if b == 0 {
            return Err(Error::shape("batch must hold at least one sample"));
        }
        if labels.len() != b || sample_ids.len() != b {
            return Err(Error::shape(format!(
                "batch has {b} rows, {} labels, {} sample ids",
                labels.len(),
                sample_ids.len()
            )));
        }
        let mut sorted = sample_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Task("duplicate sample id within batch".into()));
        }
        Ok(Batch {
            inputs,
            labels,
            sample_ids,
        })
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenates batches in order. Sample ids must stay unique.
    pub fn concat(batches: &[&Batch]) -> Result<Batch> {
        let first = batches
            .first()
            .ok_or_else(|| Error::shape("cannot concatenate zero batches"))?;
        let views: Vec<_> = batches.iter().map(|b| b.inputs.view()).collect();
        let inputs = ndarray::concatenate(Axis(0), &views)
            .map_err(|_| Error::shape(format!("input widths differ from {}", first.inputs.ncols())))?;
        let labels = batches.iter().flat_map(|b| b.labels.iter().copied()).collect();
        let ids = batches.iter().flat_map(|b| b.sample_ids.iter().copied()).collect();
        Batch::new(inputs, labels, ids)
    }
}

impl Samples for Batch {
    fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }
}

/// `B x K` cosine similarities between features and class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        let bound = 1.0 + 1e-9;
        if let Some(v) = scores.iter().find(|v| !(v.abs() <= bound)) {
            return Err(Error::numeric("scores", format!("{v} outside [-1, 1]")));
        }
        Ok(ScoreMatrix { scores })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityClassifier {
    class_embeddings: Array2<f64>,
    extractor_dims: Vec<usize>,
    logit_scale: f64,
    norm_epsilon: f64,
}

impl SimilarityClassifier {
    /// Validates that every class row already has unit norm.
    pub fn new(class_embeddings: Array2<f64>, extractor_dims: Vec<usize>, logit_scale: f64) -> Result<Self> {
        for (k, row) in class_embeddings.outer_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::config(format!("class embedding {k} has norm {n}, expected 1")));
            }
        }
        let clf = SimilarityClassifier {
            class_embeddings,
            extractor_dims,
            logit_scale,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        };
        clf.validate()?;
        Ok(clf)
    }

    /// Normalizes each class row before construction.
    pub fn from_raw_embeddings(
        mut class_embeddings: Array2<f64>,
        extractor_dims: Vec<usize>,
        logit_scale: f64,
    ) -> Result<Self> {
        for mut row in class_embeddings.outer_iter_mut() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0) {
                return Err(Error::config("class embedding with zero norm"));
            }
            row /= n;
        }
        SimilarityClassifier::new(class_embeddings, extractor_dims, logit_scale)
    }

    pub fn with_norm_epsilon(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::config("norm_epsilon must be positive"));
        }
        self.norm_epsilon = eps;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let (k, d) = self.class_embeddings.dim();
        if k < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {k}")));
        }
        if d == 0 {
            return Err(Error::config("embedding width must be positive"));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::config(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        check_dims(&self.extractor_dims)?;
        if *self.extractor_dims.last().unwrap() != d {
            return Err(Error::config(format!(
                "extractor output width {} differs from embedding width {d}",
                self.extractor_dims.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor_dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.class_embeddings.ncols()
    }

    pub fn extractor_dims(&self) -> &[usize] {
        &self.extractor_dims
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn norm_epsilon(&self) -> f64 {
        self.norm_epsilon
    }

    pub fn class_embeddings(&self) -> ArrayView2<'_, f64> {
        self.class_embeddings.view()
    }

    /// Parameter layout implied by the extractor widths.
    pub fn layout(&self) -> Layout {
        layout_for(&self.extractor_dims).expect("dims validated at construction")
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config(format!(
            "extractor_dims needs an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::config(format!("zero width in extractor_dims {dims:?}")));
    }
    Ok(())
}

/// `W1, b1, W2, b2, ...` with `Wl` stored as `[out, in]`.
pub fn layout_for(dims: &[usize]) -> Result<Layout> {
    check_dims(dims)?;
    let mut segs = Vec::with_capacity(2 * (dims.len() - 1));
    for (l, pair) in dims.windows(2).enumerate() {
        segs.push(Segment::new(format!("W{}", l + 1), vec![pair[1], pair[0]]));
        segs.push(Segment::new(format!("b{}", l + 1), vec![pair[1]]));
    }
    Layout::new(segs)
}

/// Recovers extractor widths from a layout produced by [`layout_for`].
pub fn dims_from_layout(layout: &Layout) -> Result<Vec<usize>> {
    let segs = layout.segments();
    if segs.is_empty() || !segs.len().is_multiple_of(2) {
        return Err(Error::Layout(format!("{layout} is not an extractor layout")));
    }
    let mut dims = vec![segs[0].shape.get(1).copied().unwrap_or(0)];
    for (l, pair) in segs.chunks(2).enumerate() {
        let (w, b) = (&pair[0], &pair[1]);
        let ok = w.name == format!("W{}", l + 1)
            && b.name == format!("b{}", l + 1)
            && w.shape.len() == 2
            && w.shape[1] == *dims.last().unwrap()
            && b.shape == [w.shape[0]];
        if !ok {
            return Err(Error::Layout(format!("{layout} is not an extractor layout")));
        }
        dims.push(w.shape[0]);
    }
    Ok(dims)
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(classifier: &SimilarityClassifier, seed: u64) -> Result<ParamVector> {
    init_extractor(classifier.extractor_dims(), seed)
}

pub fn init_extractor(dims: &[usize], seed: u64) -> Result<ParamVector> {
    let layout = layout_for(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(layout.size());
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(values, layout)
}

struct LayerView<'a> {
    w: ArrayView2<'a, f64>,
    b: ArrayView1<'a, f64>,
}

fn layer_views<'a>(params: &'a ParamVector, classifier: &SimilarityClassifier) -> Result<Vec<LayerView<'a>>> {
    let expected = classifier.layout();
    if params.layout() != &expected {
        return Err(Error::shape(format!(
            "parameter layout {} does not match extractor {}",
            params.layout(),
            expected
        )));
    }
    let dims = classifier.extractor_dims();
    let mut off = 0;
    let vals = params.values();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = ArrayView2::from_shape((n_out, n_in), &vals[off..off + n_in * n_out]).expect("layout checked");
        off += n_in * n_out;
        let b = ArrayView1::from(&vals[off..off + n_out]);
        off += n_out;
        layers.push(LayerView { w, b });
    }
    Ok(layers)
}

/// Activations of every layer; `acts[0]` is the input, the last is the
/// affine output.
fn forward(layers: &[LayerView<'_>], inputs: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(inputs.to_owned());
    for (l, layer) in layers.iter().enumerate() {
        let mut a = acts[l].dot(&layer.w.t());
        a += &layer.b;
        if l + 1 < layers.len() {
            a.mapv_inplace(f64::tanh);
        }
        acts.push(a);
    }
    acts
}

pub fn extract_features(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    classifier: &SimilarityClassifier,
) -> Result<Array2<f64>> {
    let layers = layer_views(params, classifier)?;
    if inputs.ncols() != classifier.input_dim() {
        return Err(Error::shape(format!(
            "inputs have width {}, extractor expects {}",
            inputs.ncols(),
            classifier.input_dim()
        )));
    }
    Ok(forward(&layers, inputs).pop().unwrap())
}

fn guarded_norms(features: ArrayView2<'_, f64>, eps: f64) -> Array1<f64> {
    features.map_axis(Axis(1), |v| v.dot(&v).sqrt().max(eps))
}

fn class_norms(classifier: &SimilarityClassifier) -> Array1<f64> {
    classifier.class_embeddings.map_axis(Axis(1), |t| t.dot(&t).sqrt())
}

/// `s[i][j] = <v_i, t_j> / (max(|v_i|, eps) * |t_j|)`.
pub fn cosine_scores(features: ArrayView2<'_, f64>, classifier: &SimilarityClassifier) -> Result<ScoreMatrix> {
    if features.ncols() != classifier.embed_dim() {
        return Err(Error::shape(format!(
            "features have width {}, embeddings {}",
            features.ncols(),
            classifier.embed_dim()
        )));
    }
    let vn = guarded_norms(features, classifier.norm_epsilon);
    let tn = class_norms(classifier);
    let mut s = features.dot(&classifier.class_embeddings.t());
    for (mut row, v) in s.outer_iter_mut().zip(vn.iter()) {
        for (x, t) in row.iter_mut().zip(tn.iter()) {
            *x /= v * t;
        }
    }
    ScoreMatrix::new(s)
}

/// Mean softmax cross-entropy of `tau * scores`, plus the softmax rows.
pub fn cross_entropy_loss(scores: &ScoreMatrix, labels: &[usize], logit_scale: f64) -> Result<(f64, Array2<f64>)> {
    let s = scores.view();
    let (b, k) = s.dim();
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::shape(format!("label {y} out of range for {k} classes")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("scores", "non-finite score"));
    }
    let mut probs = Array2::zeros((b, k));
    let mut total = 0.0;
    for (i, (row, &y)) in s.outer_iter().zip(labels).enumerate() {
        let z = row.mapv(|v| logit_scale * v);
        let m = z.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let e = z.mapv(|v| (v - m).exp());
        let sum = e.sum();
        total -= z[y] - m - sum.ln();
        probs.row_mut(i).assign(&(e / sum));
    }
    Ok((total / b as f64, probs))
}

fn check_labels(batch: &Batch, classifier: &SimilarityClassifier) -> Result<()> {
    let k = classifier.num_classes();
    match batch.labels().iter().find(|&&y| y >= k) {
        Some(y) => Err(Error::shape(format!("label {y} out of range for {k} classes"))),
        None => Ok(()),
    }
}

pub fn loss(params: &ParamVector, batch: &Batch, classifier: &SimilarityClassifier) -> Result<f64> {
    check_labels(batch, classifier)?;
    let feats = extract_features(params, batch.inputs(), classifier)?;
    let scores = cosine_scores(feats.view(), classifier)?;
    let (l, _) = cross_entropy_loss(&scores, batch.labels(), classifier.logit_scale)?;
    Ok(l)
}

/// Loss and its reverse-mode gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &Batch,
    classifier: &SimilarityClassifier,
) -> Result<(f64, ParamVector)> {
    check_labels(batch, classifier)?;
    let layers = layer_views(params, classifier)?;
    if batch.inputs().ncols() != classifier.input_dim() {
        return Err(Error::shape(format!(
            "inputs have width {}, extractor expects {}",
            batch.inputs().ncols(),
            classifier.input_dim()
        )));
    }
    let acts = forward(&layers, batch.inputs());
    let feats = acts.last().unwrap();
    if feats.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("features", "non-finite extractor output"));
    }
    let scores = cosine_scores(feats.view(), classifier)?;
    let tau = classifier.logit_scale;
    let (loss, probs) = cross_entropy_loss(&scores, batch.labels(), tau)?;
    if !loss.is_finite() {
        return Err(Error::numeric("loss", format!("loss is {loss}")));
    }

    let b = batch.len() as f64;
    // dL/ds
    let mut g_scores = probs;
    for (i, &y) in batch.labels().iter().enumerate() {
        g_scores[[i, y]] -= 1.0;
    }
    g_scores.mapv_inplace(|v| v * tau / b);

    // dL/dv through the cosine; the clamp is constant below eps.
    let eps = classifier.norm_epsilon;
    let tn = class_norms(classifier);
    let units = &classifier.class_embeddings / &tn.view().insert_axis(Axis(1));
    let mut g_feats = g_scores.dot(&units);
    let s = scores.view();
    for (i, mut gv) in g_feats.outer_iter_mut().enumerate() {
        let v = feats.row(i);
        let raw = v.dot(&v).sqrt();
        let n = raw.max(eps);
        if raw > eps {
            let proj: f64 = g_scores.row(i).dot(&s.row(i));
            gv.scaled_add(-proj / n, &v);
        }
        gv /= n;
    }

    let mut grad = params.zeros_like();
    let mut delta = g_feats;
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let prev = &acts[l];
        let gw = delta.t().dot(prev);
        let gb = delta.sum_axis(Axis(0));
        grads.push((gw, gb));
        if l > 0 {
            let mut dprev = delta.dot(&layers[l].w);
            dprev.zip_mut_with(prev, |d, &h| *d *= 1.0 - h * h);
            delta = dprev;
        }
    }
    grads.reverse();
    for (l, (gw, gb)) in grads.into_iter().enumerate() {
        let w = grad.segment_mut(&format!("W{}", l + 1)).unwrap();
        for (dst, src) in w.iter_mut().zip(gw.iter()) {
            *dst = *src;
        }
        let bseg = grad.segment_mut(&format!("b{}", l + 1)).unwrap();
        for (dst, src) in bseg.iter_mut().zip(gb.iter()) {
            *dst = *src;
        }
    }
    grad.check_finite()?;
    Ok((loss, grad))
}

/// Rows `classes` of the embedding table, in the given order.
pub fn class_subset_embeddings(classifier: &SimilarityClassifier, classes: &[usize]) -> Array2<f64> {
    let d = classifier.embed_dim();
    let mut out = Array2::zeros((classes.len(), d));
    for (r, &c) in classes.iter().enumerate() {
        out.row_mut(r).assign(&classifier.class_embeddings.slice(s![c, ..]));
    }
    out
}
