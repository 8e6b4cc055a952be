use super::params::{InitScheme, ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::{TensorError, TensorResult};

/// `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> TensorResult<Self> {
        let w = ps.add(&format!("{name}.w"), in_dim, out_dim, InitScheme::FanInUniform)?;
        let b = if bias { Some(ps.add(&format!("{name}.b"), 1, out_dim, InitScheme::Zeros)?) } else { None };
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> TensorResult<Var> {
        let w = tape.param(ps, self.w)?;
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(ps, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> TensorResult<Self> {
        Ok(LayerNorm {
            gamma: ps.add(&format!("{name}.gamma"), 1, dim, InitScheme::Ones)?,
            beta: ps.add(&format!("{name}.beta"), 1, dim, InitScheme::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> TensorResult<Var> {
        let g = tape.param(ps, self.gamma)?;
        let b = tape.param(ps, self.beta)?;
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, d_model: usize, heads: usize) -> TensorResult<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(TensorError::Config(format!("model width {d_model} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(ps, &format!("{name}.q"), d_model, d_model, true)?,
            wk: Linear::new(ps, &format!("{name}.k"), d_model, d_model, true)?,
            wv: Linear::new(ps, &format!("{name}.v"), d_model, d_model, true)?,
            wo: Linear::new(ps, &format!("{name}.o"), d_model, d_model, true)?,
            heads,
        })
    }

    /// `q_in` holds groups of `lq` rows and `kv_in` groups of `lk` rows.
    /// When `rope` is given, queries and keys are rotated by the supplied
    /// per-row positions before the dot products.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        q_in: Var,
        kv_in: Var,
        lq: usize,
        lk: usize,
        rope: Option<(&[f64], &[f64], f64)>,
    ) -> TensorResult<Var> {
        let mut q = self.wq.forward(tape, ps, q_in)?;
        let mut k = self.wk.forward(tape, ps, kv_in)?;
        let v = self.wv.forward(tape, ps, kv_in)?;
        if let Some((qpos, kpos, base)) = rope {
            q = tape.rope(q, qpos, self.heads, base)?;
            k = tape.rope(k, kpos, self.heads, base)?;
        }
        let a = tape.attention(q, k, v, self.heads, lq, lk)?;
        self.wo.forward(tape, ps, a)
    }
}

/// Two-layer GELU feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, d_model: usize, hidden: usize) -> TensorResult<Self> {
        Ok(FeedForward {
            l1: Linear::new(ps, &format!("{name}.fc1"), d_model, hidden, true)?,
            l2: Linear::new(ps, &format!("{name}.fc2"), hidden, d_model, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> TensorResult<Var> {
        let h = self.l1.forward(tape, ps, x)?;
        let h = tape.gelu(h)?;
        self.l2.forward(tape, ps, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn row_major_matmul(x: &Tensor, w: &Tensor) -> Vec<Vec<f64>> {
        (0..x.rows())
            .map(|i| (0..w.cols()).map(|j| (0..x.cols()).map(|p| x.get(i, p) * w.get(p, j)).sum()).collect())
            .collect()
    }

    #[test]
    fn attention_matches_per_head_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new(3);
        let (d, heads, lq, lk) = (6, 2, 3, 4);
        let mha = MultiHeadAttention::new(&mut ps, "att", d, heads).unwrap();
        for id in [mha.wq.b, mha.wk.b, mha.wv.b, mha.wo.b].into_iter().flatten() {
            let vals: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
            ps.set_values(id, &vals).unwrap();
        }
        let xq = rand_tensor(&mut rng, lq, d);
        let xkv = rand_tensor(&mut rng, lk, d);
        let mut tape = Tape::default();
        let q_in = tape.constant(xq.clone()).unwrap();
        let kv_in = tape.constant(xkv.clone()).unwrap();
        let out = mha.forward(&mut tape, &ps, q_in, kv_in, lq, lk, None).unwrap();

        let proj = |x: &Tensor, l: &Linear| -> Vec<Vec<f64>> {
            let mut y = row_major_matmul(x, ps.value(l.w));
            let b = ps.value(l.b.unwrap());
            for row in &mut y {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += b.data()[j];
                }
            }
            y
        };
        let (q, k, v) = (proj(&xq, &mha.wq), proj(&xkv, &mha.wk), proj(&xkv, &mha.wv));
        let hd = d / heads;
        let mut concat = vec![vec![0.0; d]; lq];
        for h in 0..heads {
            for i in 0..lq {
                let scores: Vec<f64> = (0..lk)
                    .map(|j| (0..hd).map(|c| q[i][h * hd + c] * k[j][h * hd + c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..hd {
                    concat[i][h * hd + c] = (0..lk).map(|j| e[j] / z * v[j][h * hd + c]).sum();
                }
            }
        }
        let flat: Vec<f64> = concat.into_iter().flatten().collect();
        let expect = proj(&Tensor::matrix(lq, d, flat).unwrap(), &mha.wo);
        for i in 0..lq {
            for j in 0..d {
                assert!((tape.value(out).get(i, j) - expect[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_keys_give_uniform_weights() {
        let mut tape = Tape::default();
        let q = tape.constant(Tensor::matrix(2, 4, vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -1.0, 0.0]).unwrap()).unwrap();
        let k = tape.constant(Tensor::filled(5, 4, 0.7)).unwrap();
        let v = tape.constant(Tensor::matrix(5, 4, (0..20).map(f64::from).collect()).unwrap()).unwrap();
        let o = tape.attention(q, k, v, 2, 2, 5).unwrap();
        for p in tape.attention_weights(o).unwrap() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut ps = ParamSet::new(0);
        assert!(matches!(MultiHeadAttention::new(&mut ps, "a", 10, 4), Err(TensorError::Config(_))));
    }
}
