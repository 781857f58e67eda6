//! The single Transformer block `t^{h,m,r}`: multi-head attention with a
//! residual connection followed by a ReLU feed-forward layer with a second
//! residual connection. Inputs are `d × n` matrices whose columns are tokens.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::numeric::{self, apply_permutation, matmul, relu, softmax_columns, Matrix, NumericError, Permutation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("{what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("expected {expected} heads, got {actual}")]
    HeadCount { expected: usize, actual: usize },
    #[error("parameter vector has length {actual}, block needs {expected}")]
    ParamLength { expected: usize, actual: usize },
    #[error("block dimensions must be positive: {0:?}")]
    Dimensions(BlockShape),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, BlockError>;

/// Model width `d`, sequence length `n`, head count `h`, head size `m` and
/// hidden feed-forward width `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockShape {
    pub d: usize,
    pub n: usize,
    pub h: usize,
    pub m: usize,
    pub r: usize,
}

impl BlockShape {
    pub fn new(d: usize, n: usize, h: usize, m: usize, r: usize) -> Result<Self> {
        let shape = Self { d, n, h, m, r };
        if [d, n, h, m, r].contains(&0) {
            return Err(BlockError::Dimensions(shape));
        }
        Ok(shape)
    }

    /// `h(3md + dm) + rd + dr + r`.
    pub fn param_count(&self) -> usize {
        let Self { d, h, m, r, .. } = *self;
        h * (3 * m * d + d * m) + r * d + d * r + r
    }

    pub fn input_len(&self) -> usize {
        self.d * self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d × m`
    pub w_o: Matrix,
    /// `m × d`
    pub w_v: Matrix,
    /// `m × d`
    pub w_k: Matrix,
    /// `m × d`
    pub w_q: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    /// `r × d`
    pub w1: Matrix,
    /// `d × r`
    pub w2: Matrix,
    pub b1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    shape: BlockShape,
    heads: Vec<HeadParams>,
    ff: FeedForwardParams,
    /// Fixed additive input encoding `E`; the block computes `t(X + E)`.
    positional: Option<Matrix>,
}

fn expect_shape(what: impl Into<String>, m: &Matrix, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(BlockError::Shape {
            what: what.into(),
            expected,
            actual: m.shape(),
        });
    }
    Ok(())
}

impl TransformerBlock {
    pub fn new(shape: BlockShape, heads: Vec<HeadParams>, ff: FeedForwardParams) -> Result<Self> {
        let BlockShape { d, h, m, r, .. } = shape;
        if heads.len() != h {
            return Err(BlockError::HeadCount {
                expected: h,
                actual: heads.len(),
            });
        }
        for (i, head) in heads.iter().enumerate() {
            expect_shape(format!("head {i} W_O"), &head.w_o, (d, m))?;
            expect_shape(format!("head {i} W_V"), &head.w_v, (m, d))?;
            expect_shape(format!("head {i} W_K"), &head.w_k, (m, d))?;
            expect_shape(format!("head {i} W_Q"), &head.w_q, (m, d))?;
        }
        expect_shape("W_1", &ff.w1, (r, d))?;
        expect_shape("W_2", &ff.w2, (d, r))?;
        if ff.b1.len() != r {
            return Err(BlockError::Shape {
                what: "b_1".into(),
                expected: (r, 1),
                actual: (ff.b1.len(), 1),
            });
        }
        Ok(Self {
            shape,
            heads,
            ff,
            positional: None,
        })
    }

    pub fn zeros(shape: BlockShape) -> Self {
        Self::unflatten(shape, &vec![0.0; shape.param_count()]).expect("length matches by construction")
    }

    /// Entries uniform in `[-0.5, 0.5] / √d`.
    pub fn random(shape: BlockShape, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (shape.d as f64).sqrt();
        let params: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.gen_range(-0.5..=0.5) * scale)
            .collect();
        Self::unflatten(shape, &params).expect("length matches by construction")
    }

    pub fn with_positional(mut self, e: Matrix) -> Result<Self> {
        expect_shape("positional encoding", &e, (self.shape.d, self.shape.n))?;
        self.positional = Some(e);
        Ok(self)
    }

    pub fn shape(&self) -> BlockShape {
        self.shape
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn feed_forward(&self) -> &FeedForwardParams {
        &self.ff
    }

    pub fn positional(&self) -> Option<&Matrix> {
        self.positional.as_ref()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        expect_shape("input", x, (self.shape.d, self.shape.n))
    }

    fn encoded(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(match &self.positional {
            Some(e) => x.add(e)?,
            None => x.clone(),
        })
    }

    fn attention(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for head in &self.heads {
            let keys = matmul(&head.w_k, x)?;
            let queries = matmul(&head.w_q, x)?;
            let weights = softmax_columns(&matmul(&keys.transpose(), &queries)?);
            let values = matmul(&head.w_o, &matmul(&head.w_v, x)?)?;
            out = out.add(&matmul(&values, &weights)?)?;
        }
        Ok(out)
    }

    /// `X + Σᵢ W_Oⁱ W_Vⁱ X · σ[(W_Kⁱ X)ᵀ W_Qⁱ X]`
    pub fn attn(&self, x: &Matrix) -> Result<Matrix> {
        self.attention(&self.encoded(x)?)
    }

    /// `Attn(X) + W₂ ReLU(W₁ Attn(X) + b₁ 1ᵀ)`
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let a = self.attn(x)?;
        let hidden = relu(&matmul(&self.ff.w1, &a)?.add_row_bias(&self.ff.b1)?);
        Ok(a.add(&matmul(&self.ff.w2, &hidden)?)?)
    }

    /// `‖forward(XP) − forward(X)P‖∞`.
    pub fn check_equivariance(&self, x: &Matrix, p: &Permutation) -> Result<f64> {
        let lhs = self.forward(&apply_permutation(x, p)?)?;
        let rhs = apply_permutation(&self.forward(x)?, p)?;
        Ok(lhs.max_abs_diff(&rhs)?)
    }

    /// Heads in order, each `W_O, W_V, W_K, W_Q` row-major, then `W₁, W₂, b₁`.
    /// The positional encoding is not a trainable parameter and is not included.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape.param_count());
        for head in &self.heads {
            for w in [&head.w_o, &head.w_v, &head.w_k, &head.w_q] {
                v.extend_from_slice(w.as_slice());
            }
        }
        v.extend_from_slice(self.ff.w1.as_slice());
        v.extend_from_slice(self.ff.w2.as_slice());
        v.extend_from_slice(&self.ff.b1);
        v
    }

    pub fn unflatten(shape: BlockShape, params: &[f64]) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(BlockError::ParamLength {
                expected: shape.param_count(),
                actual: params.len(),
            });
        }
        let BlockShape { d, h, m, r, .. } = shape;
        let mut rest = params;
        let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
            let (head, tail) = rest.split_at(rows * cols);
            rest = tail;
            Ok(Matrix::new(rows, cols, head.to_vec())?)
        };
        let mut heads = Vec::with_capacity(h);
        for _ in 0..h {
            heads.push(HeadParams {
                w_o: take(d, m)?,
                w_v: take(m, d)?,
                w_k: take(m, d)?,
                w_q: take(m, d)?,
            });
        }
        let w1 = take(r, d)?;
        let w2 = take(d, r)?;
        let b1 = take(r, 1)?.into_vec();
        Self::new(shape, heads, FeedForwardParams { w1, w2, b1 })
    }

    /// Same block with its trainable parameters replaced.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut block = Self::unflatten(self.shape, params)?;
        block.positional = self.positional.clone();
        Ok(block)
    }

    /// Parses the text form written by [`fmt::Display`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(BlockError::Parse {
            line: 0,
            message: "empty block text".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| BlockError::Parse {
                line,
                message: format!("bad header {header:?}: {e}"),
            })?;
        let [d, n, h, m, r] = dims[..] else {
            return Err(BlockError::Parse {
                line,
                message: "header must be `d n h m r`".into(),
            });
        };
        let shape = BlockShape::new(d, n, h, m, r)?;
        let mut params = Vec::with_capacity(shape.param_count());
        while let Some(peek) = lines.next() {
            let mut chained = std::iter::once(peek).chain(&mut lines);
            params.extend(numeric::Matrix::parse_lines(&mut chained)?.into_vec());
        }
        Self::unflatten(shape, &params)
    }
}

impl fmt::Display for TransformerBlock {
    /// `d n h m r`, then every parameter matrix in flatten order (`b₁` as an
    /// `r × 1` matrix) in the matrix text form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let BlockShape { d, n, h, m, r } = self.shape;
        writeln!(f, "{d} {n} {h} {m} {r}")?;
        for head in &self.heads {
            for w in [&head.w_o, &head.w_v, &head.w_k, &head.w_q] {
                write!(f, "{w}")?;
            }
        }
        write!(f, "{}", self.ff.w1)?;
        write!(f, "{}", self.ff.w2)?;
        write!(f, "{}", Matrix::from_raw(r, 1, self.ff.b1.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(d: usize, n: usize, h: usize, m: usize, r: usize) -> BlockShape {
        BlockShape::new(d, n, h, m, r).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, d: usize, n: usize, range: f64) -> Matrix {
        Matrix::from_fn(d, n, |_, _| rng.gen_range(-range..range))
    }

    /// Straight-line evaluation of the block equations with explicit loops,
    /// sharing no code with the matrix path.
    fn reference_forward(block: &TransformerBlock, x: &Matrix) -> Vec<Vec<f64>> {
        let BlockShape { d, n, m, r, .. } = block.shape();
        let mut attn: Vec<Vec<f64>> = (0..d).map(|i| (0..n).map(|j| x.get(i, j)).collect()).collect();
        for head in block.heads() {
            let proj = |w: &Matrix, rows: usize| -> Vec<Vec<f64>> {
                (0..rows)
                    .map(|a| (0..n).map(|j| (0..d).map(|k| w.get(a, k) * x.get(k, j)).sum()).collect())
                    .collect()
            };
            let k = proj(&head.w_k, m);
            let q = proj(&head.w_q, m);
            let v = proj(&head.w_v, m);
            let mut weights = vec![vec![0.0; n]; n];
            for col in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|row| (0..m).map(|c| k[c][row] * q[c][col]).sum())
                    .collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for row in 0..n {
                    weights[row][col] = (scores[row] - max).exp() / total;
                }
            }
            for i in 0..d {
                for j in 0..n {
                    let mut s = 0.0;
                    for t in 0..n {
                        let ov: f64 = (0..m).map(|c| head.w_o.get(i, c) * v[c][t]).sum();
                        s += ov * weights[t][j];
                    }
                    attn[i][j] += s;
                }
            }
        }
        let ff = block.feed_forward();
        let mut out = attn.clone();
        for j in 0..n {
            let hidden: Vec<f64> = (0..r)
                .map(|a| ((0..d).map(|k| ff.w1.get(a, k) * attn[k][j]).sum::<f64>() + ff.b1[a]).max(0.0))
                .collect();
            for i in 0..d {
                out[i][j] += (0..r).map(|a| ff.w2.get(i, a) * hidden[a]).sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn zero_block_is_identity() {
        let s = shape(4, 3, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_input(&mut rng, 4, 3, 5.0);
        let block = TransformerBlock::zeros(s);
        assert_eq!(block.attn(&x).unwrap(), x);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_feed_forward_weights_leave_attention_output() {
        let s = shape(3, 4, 1, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random = TransformerBlock::random(s, &mut rng);
        let mut params = random.flatten();
        let ff_start = s.h * 4 * s.m * s.d;
        for p in &mut params[ff_start..ff_start + 2 * s.r * s.d] {
            *p = 0.0;
        }
        let block = TransformerBlock::unflatten(s, &params).unwrap();
        assert!(block.feed_forward().b1.iter().any(|b| *b != 0.0));
        let x = random_input(&mut rng, 3, 4, 2.0);
        assert_eq!(block.forward(&x).unwrap(), block.attn(&x).unwrap());
    }

    #[test]
    fn zero_scores_average_tokens_uniformly() {
        let (d, n) = (3, 4);
        let s = shape(d, n, 1, d, 2);
        let head = HeadParams {
            w_o: Matrix::identity(d),
            w_v: Matrix::identity(d),
            w_k: Matrix::zeros(d, d),
            w_q: Matrix::zeros(d, d),
        };
        let ff = FeedForwardParams {
            w1: Matrix::zeros(2, d),
            w2: Matrix::zeros(d, 2),
            b1: vec![0.0; 2],
        };
        let block = TransformerBlock::new(s, vec![head], ff).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_input(&mut rng, d, n, 3.0);
        let out = block.attn(&x).unwrap();
        for i in 0..d {
            let mean: f64 = (0..n).map(|j| x.get(i, j)).sum::<f64>() / n as f64;
            for j in 0..n {
                assert!((out.get(i, j) - (x.get(i, j) + mean)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let s = shape(4, 3, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let block = TransformerBlock::random(s, &mut rng);
            let x = random_input(&mut rng, 4, 3, 2.0);
            let out = block.forward(&x).unwrap();
            let reference = reference_forward(&block, &x);
            for i in 0..4 {
                for j in 0..3 {
                    assert!((out.get(i, j) - reference[i][j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn equivariance_examples() {
        let s = shape(4, 2, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = TransformerBlock::random(s, &mut rng);
        let x = random_input(&mut rng, 4, 2, 3.0);
        assert_eq!(block.check_equivariance(&x, &Permutation::identity(2)).unwrap(), 0.0);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert!(block.check_equivariance(&x, &swap).unwrap() <= 1e-8);

        let s = shape(4, 5, 2, 2, 4);
        for _ in 0..100 {
            let block = TransformerBlock::random(s, &mut rng);
            let x = random_input(&mut rng, 4, 5, 3.0);
            let p = Permutation::random(5, &mut rng);
            assert!(block.check_equivariance(&x, &p).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn positional_encoding_shifts_the_input() {
        let s = shape(2, 3, 1, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let block = TransformerBlock::random(s, &mut rng);
        let e = random_input(&mut rng, 2, 3, 1.0);
        let x = random_input(&mut rng, 2, 3, 1.0);
        let encoded = block.clone().with_positional(e.clone()).unwrap();
        assert_eq!(encoded.forward(&x).unwrap(), block.forward(&x.add(&e).unwrap()).unwrap());
        assert!(block.with_positional(Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn parameter_count_and_round_trip() {
        let s = shape(4, 3, 2, 2, 4);
        assert_eq!(s.param_count(), 100);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let block = TransformerBlock::random(s, &mut rng);
        let flat = block.flatten();
        assert_eq!(flat.len(), 100);
        assert_eq!(TransformerBlock::unflatten(s, &flat).unwrap(), block);
        assert_eq!(TransformerBlock::unflatten(s, &vec![0.0; 100]).unwrap(), TransformerBlock::zeros(s));
        assert_eq!(
            TransformerBlock::unflatten(s, &flat[1..]).unwrap_err(),
            BlockError::ParamLength { expected: 100, actual: 99 }
        );
    }

    #[test]
    fn flatten_order_is_documented_order() {
        let s = shape(2, 2, 1, 1, 1);
        let params: Vec<f64> = (0..s.param_count()).map(|i| i as f64).collect();
        let block = TransformerBlock::unflatten(s, &params).unwrap();
        let head = &block.heads()[0];
        assert_eq!(head.w_o.as_slice(), &[0.0, 1.0]);
        assert_eq!(head.w_v.as_slice(), &[2.0, 3.0]);
        assert_eq!(head.w_k.as_slice(), &[4.0, 5.0]);
        assert_eq!(head.w_q.as_slice(), &[6.0, 7.0]);
        assert_eq!(block.feed_forward().w1.as_slice(), &[8.0, 9.0]);
        assert_eq!(block.feed_forward().w2.as_slice(), &[10.0, 11.0]);
        assert_eq!(block.feed_forward().b1, vec![12.0]);
    }

    #[test]
    fn text_form_round_trips() {
        let s = shape(3, 2, 2, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = TransformerBlock::random(s, &mut rng);
        let text = block.to_string();
        assert!(text.starts_with("3 2 2 1 2\n"));
        assert_eq!(TransformerBlock::parse(&text).unwrap(), block);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let s = shape(2, 2, 1, 1, 1);
        let block = TransformerBlock::zeros(s);
        assert!(matches!(block.forward(&Matrix::zeros(2, 3)), Err(BlockError::Shape { .. })));
        let mut heads = block.heads().to_vec();
        heads[0].w_o = Matrix::zeros(1, 2);
        assert!(TransformerBlock::new(s, heads, block.feed_forward().clone()).is_err());
        assert!(TransformerBlock::new(s, vec![], block.feed_forward().clone()).is_err());
    }

    #[test]
    fn forward_stays_finite_and_continuous() {
        let s = shape(4, 3, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let block = TransformerBlock::random(s, &mut rng);
            let x = random_input(&mut rng, 4, 3, 10.0);
            let y = block.forward(&x).unwrap();
            assert!(y.is_finite());
            let delta = 1e-7;
            let nudged = block.forward(&x.add(&Matrix::from_fn(4, 3, |_, _| delta)).unwrap()).unwrap();
            assert!(nudged.max_abs_diff(&y).unwrap() < 1e3 * delta);
        }
    }
}
