//! Graph-convolutional encoder, symmetric pair interaction, hop-category
//! classifier, and the exact gradient of the batch loss.
//!
//! Layer `l` computes `H_l = ReLU(Â H_{l-1} W_l)` with `H_0 = X`. For the first
//! layer the constant product `Â X` is precomputed as a sparse matrix, which
//! is what makes full-graph forward passes cheap on bag-of-words features.
//! A pair `(t, c)` is represented by `|z_t - z_c|` and classified by an
//! affine layer followed by softmax; the loss is the batch mean of
//! per-pair cross-entropy.

use rand::Rng;

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{dot, CsrMatrix, DenseMatrix, Parallelism};
use crate::sampler::PairBatch;
use crate::scalar::{sign0, Scalar};

/// Encoder weights (no bias) and the affine hop classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: Vec<DenseMatrix<T>>,
    /// `embedding_dim × alpha`.
    pub classifier_weight: DenseMatrix<T>,
    pub classifier_bias: Vec<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;

/// Uniform Glorot initialization, bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix<T> {
    assert!(fan_in > 0 && fan_out > 0, "Glorot init needs positive fan-in and fan-out");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| T::of(rng.gen_range(-bound..=bound)))
}

impl<T: Scalar> ModelParams<T> {
    /// `layers` graph-convolutional layers of width `embedding_dim` on top of
    /// `input_dim` features, then a classifier onto `alpha` categories.
    pub fn init<R: Rng>(input_dim: usize, embedding_dim: usize, layers: usize, alpha: usize, rng: &mut R) -> Result<Self> {
        if layers == 0 || input_dim == 0 || embedding_dim == 0 || alpha < 2 {
            return Err(Error::Config(format!(
                "bad model shape: input {input_dim}, embedding {embedding_dim}, layers {layers}, alpha {alpha}"
            )));
        }
        let mut encoder = Vec::with_capacity(layers);
        let mut fan_in = input_dim;
        for _ in 0..layers {
            encoder.push(glorot_init(fan_in, embedding_dim, rng));
            fan_in = embedding_dim;
        }
        Ok(Self { encoder, classifier_weight: glorot_init(embedding_dim, alpha, rng), classifier_bias: vec![T::zero(); alpha] })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(|w| DenseMatrix::zeros(w.rows(), w.cols())).collect(),
            classifier_weight: DenseMatrix::zeros(self.classifier_weight.rows(), self.classifier_weight.cols()),
            classifier_bias: vec![T::zero(); self.classifier_bias.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.classifier_weight.rows()
    }

    pub fn alpha(&self) -> usize {
        self.classifier_bias.len()
    }

    pub fn layers(&self) -> usize {
        self.encoder.len()
    }

    /// Flat views of every tensor, encoder layers first, then classifier
    /// weight and bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.encoder.iter().map(DenseMatrix::as_slice).collect();
        v.push(self.classifier_weight.as_slice());
        v.push(&self.classifier_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.encoder.iter_mut().map(DenseMatrix::as_mut_slice).collect();
        v.push(self.classifier_weight.as_mut_slice());
        v.push(&mut self.classifier_bias);
        v
    }

    /// `(rows, cols)` of every tensor in [`tensors`](Self::tensors) order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.encoder.iter().map(DenseMatrix::shape).collect();
        v.push(self.classifier_weight.shape());
        v.push((1, self.classifier_bias.len()));
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }
}

/// Fixed per-graph operands of the encoder: `Â` and the sparse product `Â X`
/// (plus its transpose, for the first-layer weight gradient).
#[derive(Debug, Clone)]
pub struct EncoderInput<T> {
    adj: NormalizedAdjacency<T>,
    propagated: CsrMatrix<T>,
    propagated_t: CsrMatrix<T>,
}

impl<T: Scalar> EncoderInput<T> {
    pub fn new(adj: NormalizedAdjacency<T>, features: &FeatureMatrix<T>) -> Result<Self> {
        if features.rows() != adj.num_nodes() {
            return Err(Error::Dimension(format!("{} feature rows for {} nodes", features.rows(), adj.num_nodes())));
        }
        let propagated = adj.matrix().matmul_sparse(&features.to_csr())?;
        let propagated_t = propagated.transpose();
        Ok(Self { adj, propagated, propagated_t })
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency<T> {
        &self.adj
    }

    /// `Â X`.
    pub fn propagated(&self) -> &CsrMatrix<T> {
        &self.propagated
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.num_nodes()
    }

    pub fn input_dim(&self) -> usize {
        self.propagated.cols()
    }
}

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    /// Pre-activations `Â H_{l-1} W_l`.
    pub pre: Vec<DenseMatrix<T>>,
    /// `Â H_{l-1}` for layers after the first.
    pub propagated_hidden: Vec<DenseMatrix<T>>,
    /// Final embeddings `Z` (n × q).
    pub embeddings: DenseMatrix<T>,
}

fn relu<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    m.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn check_encoder_shapes<T: Scalar>(input: &EncoderInput<T>, params: &ModelParams<T>) -> Result<()> {
    if params.input_dim() != input.input_dim() {
        return Err(Error::shape(
            "encode",
            format!("input dim {}", input.input_dim()),
            format!("weights with {} rows", params.input_dim()),
        ));
    }
    for w in params.encoder.windows(2) {
        if w[0].cols() != w[1].rows() {
            return Err(Error::shape("encode", w[0].cols(), w[1].rows()));
        }
    }
    if params.encoder.last().unwrap().cols() != params.embedding_dim() {
        return Err(Error::shape("encode", params.embedding_dim(), params.encoder.last().unwrap().cols()));
    }
    Ok(())
}

/// Full-graph encoder pass.
pub fn encode_cached<T: Scalar>(input: &EncoderInput<T>, params: &ModelParams<T>, par: Parallelism) -> Result<EncoderCache<T>> {
    check_encoder_shapes(input, params)?;
    let mut pre = Vec::with_capacity(params.layers());
    let mut propagated_hidden = Vec::with_capacity(params.layers() - 1);
    let mut h = relu(&{
        let p = input.propagated.spmm(&params.encoder[0], par)?;
        pre.push(p.clone());
        p
    });
    for w in &params.encoder[1..] {
        let ah = input.adj.spmm(&h, par)?;
        let p = ah.matmul(w, par)?;
        propagated_hidden.push(ah);
        h = relu(&p);
        pre.push(p);
    }
    if !h.all_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok(EncoderCache { pre, propagated_hidden, embeddings: h })
}

/// Embeddings `Z` for every node.
pub fn encode_input<T: Scalar>(input: &EncoderInput<T>, params: &ModelParams<T>, par: Parallelism) -> Result<DenseMatrix<T>> {
    Ok(encode_cached(input, params, par)?.embeddings)
}

/// Embeddings from the normalized adjacency and raw features.
pub fn encode<T: Scalar>(
    adj: &NormalizedAdjacency<T>,
    features: &FeatureMatrix<T>,
    params: &ModelParams<T>,
) -> Result<DenseMatrix<T>> {
    let input = EncoderInput::new(adj.clone(), features)?;
    encode_input(&input, params, Parallelism::Sequential)
}

/// Element-wise `|a - b|`.
pub fn interact<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    assert_eq!(a.len(), b.len(), "interaction of vectors with different lengths");
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).collect()
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Class probabilities of the hop classifier for one pair.
pub fn pair_probabilities<T: Scalar>(params: &ModelParams<T>, zi: &[T], zj: &[T]) -> Vec<T> {
    let x = interact(zi, zj);
    let w = &params.classifier_weight;
    let mut logits = params.classifier_bias.clone();
    for (k, &xk) in x.iter().enumerate() {
        if xk != T::zero() {
            for (l, &wv) in logits.iter_mut().zip(w.row(k)) {
                *l += xk * wv;
            }
        }
    }
    softmax_in_place(&mut logits);
    logits
}

/// Per-call options of the loss.
#[derive(Debug, Clone, Default)]
pub struct LossOptions<T> {
    /// Multiplies each pair's cross-entropy term; defaults to 1.
    pub pair_weights: Option<Vec<T>>,
    /// Multiplies the classifier input element-wise (inverted dropout mask).
    pub interaction_mask: Option<DenseMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub encoder: EncoderCache<T>,
    pub interaction_mask: Option<DenseMatrix<T>>,
    pub logits: DenseMatrix<T>,
    pub probabilities: DenseMatrix<T>,
    pub pair_weights: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn embeddings(&self) -> &DenseMatrix<T> {
        &self.encoder.embeddings
    }

    /// Classifier input of pair `i`: `|z_t - z_c|`, times the mask row if any.
    fn classifier_input_into(&self, batch: &PairBatch, i: usize, out: &mut [T]) {
        let z = self.embeddings();
        let (zt, zc) = (z.row(batch.targets[i] as usize), z.row(batch.contexts[i] as usize));
        for ((o, &x), &y) in out.iter_mut().zip(zt).zip(zc) {
            *o = (x - y).abs();
        }
        if let Some(m) = &self.interaction_mask {
            for (o, &k) in out.iter_mut().zip(m.row(i)) {
                *o *= k;
            }
        }
    }
}

fn check_batch<T: Scalar>(batch: &PairBatch, n: usize, params: &ModelParams<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.targets.len() != batch.len() || batch.contexts.len() != batch.len() {
        return Err(Error::InvalidArgument("batch arrays differ in length".into()));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l as usize >= params.alpha()) {
        return Err(Error::InvalidArgument(format!("label {l} outside 0..{}", params.alpha())));
    }
    if batch.targets.iter().chain(&batch.contexts).any(|&v| v as usize >= n) {
        return Err(Error::InvalidArgument("batch references a node outside the graph".into()));
    }
    Ok(())
}

/// Mean weighted cross-entropy of the batch and everything backward needs.
pub fn forward_loss<T: Scalar>(
    batch: &PairBatch,
    input: &EncoderInput<T>,
    params: &ModelParams<T>,
    options: LossOptions<T>,
    par: Parallelism,
) -> Result<(T, ForwardCache<T>)> {
    check_batch(batch, input.num_nodes(), params)?;
    let b = batch.len();
    let q = params.embedding_dim();
    let weights = options.pair_weights.unwrap_or_else(|| vec![T::one(); b]);
    if weights.len() != b {
        return Err(Error::shape("forward_loss pair weights", b, weights.len()));
    }
    if let Some(m) = &options.interaction_mask {
        if m.shape() != (b, q) {
            return Err(Error::shape("forward_loss interaction mask", format!("{b}x{q}"), format!("{:?}", m.shape())));
        }
    }
    let encoder = encode_cached(input, params, par)?;
    let alpha = params.alpha();
    let mut cache = ForwardCache {
        encoder,
        interaction_mask: options.interaction_mask,
        logits: DenseMatrix::zeros(b, alpha),
        probabilities: DenseMatrix::zeros(b, alpha),
        pair_weights: weights,
    };
    // Pairs are processed one at a time so no B × q array is materialized.
    let wt = params.classifier_weight.transpose();
    let mut x = vec![T::zero(); q];
    let mut total = T::zero();
    for i in 0..b {
        cache.classifier_input_into(batch, i, &mut x);
        let row = cache.logits.row_mut(i);
        for (k, l) in row.iter_mut().enumerate() {
            *l = dot(&x, wt.row(k)) + params.classifier_bias[k];
        }
        let row = cache.logits.row(i);
        total += cache.pair_weights[i] * (log_sum_exp(row) - row[batch.labels[i] as usize]);
        let p = cache.probabilities.row_mut(i);
        p.copy_from_slice(cache.logits.row(i));
        softmax_in_place(p);
    }
    let loss = total / T::of(b as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss ({b} pairs)")));
    }
    Ok((loss, cache))
}

/// Exact gradient of the loss computed by [`forward_loss`]. Subgradients of
/// `|·|` and ReLU are taken as 0 at 0.
pub fn backward<T: Scalar>(
    cache: &ForwardCache<T>,
    batch: &PairBatch,
    input: &EncoderInput<T>,
    params: &ModelParams<T>,
    par: Parallelism,
) -> Result<Gradients<T>> {
    let b = batch.len();
    let alpha = params.alpha();
    if cache.probabilities.shape() != (b, alpha) {
        return Err(Error::shape("backward", format!("cache for {b} pairs"), cache.probabilities.rows()));
    }
    let inv_b = T::one() / T::of(b as f64);

    let mut d_logits = cache.probabilities.clone();
    for i in 0..b {
        let row = d_logits.row_mut(i);
        row[batch.labels[i] as usize] -= T::one();
        let s = cache.pair_weights[i] * inv_b;
        row.iter_mut().for_each(|v| *v *= s);
    }

    let mut grads = params.zeros_like();
    let z = cache.embeddings();
    let (n, q) = z.shape();
    let wt = params.classifier_weight.transpose();
    let mut gwt = DenseMatrix::<T>::zeros(alpha, q);
    let mut d_act = DenseMatrix::zeros(n, q);
    let mut active = vec![false; n];
    let mut x = vec![T::zero(); q];
    let mut scratch = vec![T::zero(); q];
    for i in 0..b {
        let d = d_logits.row(i);
        cache.classifier_input_into(batch, i, &mut x);
        for (k, &dk) in d.iter().enumerate() {
            for (g, &xv) in gwt.row_mut(k).iter_mut().zip(&x) {
                *g += dk * xv;
            }
            grads.classifier_bias[k] += dk;
        }
        // d interaction = W · d_logits, then the mask, then the sign of z_t - z_c
        let (t, c) = (batch.targets[i] as usize, batch.contexts[i] as usize);
        let (zt, zc) = (z.row(t), z.row(c));
        scratch.iter_mut().for_each(|v| *v = T::zero());
        for (k, &dk) in d.iter().enumerate() {
            for (v, &wv) in scratch.iter_mut().zip(wt.row(k)) {
                *v += dk * wv;
            }
        }
        for ((v, &a), &b) in scratch.iter_mut().zip(zt).zip(zc) {
            *v *= sign0(a - b);
        }
        if let Some(m) = &cache.interaction_mask {
            for (v, &mk) in scratch.iter_mut().zip(m.row(i)) {
                *v *= mk;
            }
        }
        active[t] = true;
        active[c] = true;
        for (dv, &v) in d_act.row_mut(t).iter_mut().zip(&scratch) {
            *dv += v;
        }
        for (dv, &v) in d_act.row_mut(c).iter_mut().zip(&scratch) {
            *dv -= v;
        }
    }
    grads.classifier_weight = gwt.transpose();

    for l in (0..params.layers()).rev() {
        let mut d_pre = d_act;
        for (g, &p) in d_pre.as_mut_slice().iter_mut().zip(cache.encoder.pre[l].as_slice()) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        if l == 0 {
            grads.encoder[0] = input.propagated_t.spmm_active(&d_pre, Some(&active), par)?;
            break;
        }
        grads.encoder[l] = cache.encoder.propagated_hidden[l - 1].t_matmul(&d_pre, par)?;
        // Â is symmetric, so Âᵀ · (dPre Wᵀ) = Â · (dPre Wᵀ).
        d_act = input.adj.spmm(&d_pre.matmul_t(&params.encoder[l], par)?, par)?;
        active.iter_mut().for_each(|a| *a = true);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (EncoderInput<f64>, ModelParams<f64>, PairBatch) {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = FeatureMatrix::new(DenseMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        let input = EncoderInput::new(NormalizedAdjacency::new(&g, true), &x).unwrap();
        let params = ModelParams::init(3, 4, 1, 3, &mut rng).unwrap();
        let batch = PairBatch { targets: vec![0, 1, 2, 5], contexts: vec![1, 3, 5, 0], labels: vec![0, 1, 2, 2] };
        (input, params, batch)
    }

    #[test]
    fn identity_propagation_and_zero_weights() {
        let g = Graph::empty(2);
        let adj = NormalizedAdjacency::new(&g, true);
        let x = FeatureMatrix::new(DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap()).unwrap();
        let mut p = ModelParams {
            encoder: vec![DenseMatrix::identity(2)],
            classifier_weight: DenseMatrix::zeros(2, 2),
            classifier_bias: vec![0.0; 2],
        };
        assert_eq!(encode(&adj, &x, &p).unwrap(), *x.matrix());
        p.encoder[0].fill(0.0);
        assert!(encode(&adj, &x, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_node_path_encoding() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let adj = NormalizedAdjacency::new(&g, true);
        let x = FeatureMatrix::new(DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap()).unwrap();
        let p = ModelParams {
            encoder: vec![DenseMatrix::identity(2)],
            classifier_weight: DenseMatrix::zeros(2, 2),
            classifier_bias: vec![0.0; 2],
        };
        assert_eq!(encode(&adj, &x, &p).unwrap().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn interaction_cases() {
        assert_eq!(interact(&[1.0, -2.0], &[3.0, 1.0]), vec![2.0, 3.0]);
        assert_eq!(interact(&[0.5, 7.0], &[0.5, 7.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_classifier_gives_log_alpha() {
        let (input, mut params, batch) = toy();
        params.classifier_weight.fill(0.0);
        let (loss, cache) = forward_loss(&batch, &input, &params, LossOptions::default(), Parallelism::Sequential).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-14);
        for row in cache.probabilities.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let (input, mut params, batch) = toy();
        params.classifier_weight.fill(0.0);
        let one = PairBatch { targets: vec![batch.targets[0]], contexts: vec![batch.contexts[0]], labels: vec![1] };
        params.classifier_bias = vec![0.0, 60.0, 0.0];
        let (loss, _) = forward_loss(&one, &input, &params, LossOptions::default(), Parallelism::Sequential).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn bias_gradient_vanishes_without_signal() {
        let (input, mut params, _) = toy();
        params.classifier_weight.fill(0.0);
        params.classifier_bias = vec![0.0, 0.0];
        params.classifier_weight = DenseMatrix::zeros(4, 2);
        let batch = PairBatch { targets: vec![0, 1, 2, 3], contexts: vec![1, 2, 3, 4], labels: vec![0, 1, 0, 1] };
        let (_, cache) = forward_loss(&batch, &input, &params, LossOptions::default(), Parallelism::Sequential).unwrap();
        let g = backward(&cache, &batch, &input, &params, Parallelism::Sequential).unwrap();
        assert!(g.classifier_bias.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn doubled_pair_weights_double_gradients() {
        let (input, params, batch) = toy();
        let run = |w: f64| {
            let opts = LossOptions { pair_weights: Some(vec![w; batch.len()]), interaction_mask: None };
            let (_, c) = forward_loss(&batch, &input, &params, opts, Parallelism::Sequential).unwrap();
            backward(&c, &batch, &input, &params, Parallelism::Sequential).unwrap()
        };
        let (g1, g2) = (run(1.0), run(2.0));
        for (a, b) in g1.tensors().into_iter().zip(g2.tensors()) {
            for (&x, &y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-14 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn swapping_pair_order_leaves_loss_unchanged() {
        let (input, params, batch) = toy();
        let swapped =
            PairBatch { targets: batch.contexts.clone(), contexts: batch.targets.clone(), labels: batch.labels.clone() };
        let (a, _) = forward_loss(&batch, &input, &params, LossOptions::default(), Parallelism::Sequential).unwrap();
        let (b, _) = forward_loss(&swapped, &input, &params, LossOptions::default(), Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finite_differences_agree_for_two_layers_with_mask() {
        let (input, _, batch) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = ModelParams::<f64>::init(3, 4, 2, 3, &mut rng).unwrap();
        let mask = DenseMatrix::from_fn(batch.len(), 4, |i, j| if (i + j) % 3 == 0 { 0.0 } else { 1.5 });
        let opts = || LossOptions { pair_weights: None, interaction_mask: Some(mask.clone()) };
        let (_, cache) = forward_loss(&batch, &input, &params, opts(), Parallelism::Sequential).unwrap();
        let grads = backward(&cache, &batch, &input, &params, Parallelism::Sequential).unwrap();
        let h = 1e-6;
        for (ti, g) in grads.tensors().into_iter().enumerate() {
            for (k, &analytic) in g.iter().enumerate() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][k] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][k] -= h;
                let lp = forward_loss(&batch, &input, &plus, opts(), Parallelism::Sequential).unwrap().0;
                let lm = forward_loss(&batch, &input, &minus, opts(), Parallelism::Sequential).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!((analytic - fd).abs() / fd.abs().max(1.0) < 1e-5, "tensor {ti} entry {k}: {analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn bad_labels_are_rejected() {
        let (input, params, mut batch) = toy();
        batch.labels[0] = 9;
        assert!(forward_loss(&batch, &input, &params, LossOptions::default(), Parallelism::Sequential).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: DenseMatrix<f64> = glorot_init(1, 5, &mut rng);
        assert!(w.as_slice().iter().all(|v| v.abs() <= 1.0));
        let big: DenseMatrix<f64> = glorot_init(3, 3, &mut rng);
        assert!(big.as_slice().iter().all(|v| v.abs() <= 1.0));
    }
}
