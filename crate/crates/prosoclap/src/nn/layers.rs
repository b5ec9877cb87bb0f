//! Layer builders: each struct owns parameter ids in a [`ParamStore`] and
//! knows how to append its forward pass to a [`Tape`].

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::params::{normal_init, xavier_uniform, Binds, ParamStore};
use super::tape::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Forward-pass regime: training enables dropout, driven by the shared rng.
pub struct FwdCtx<'a> {
    pub train: bool,
    pub dropout: f64,
    pub rng: Option<&'a mut ChaCha20Rng>,
}

impl<'a> FwdCtx<'a> {
    pub fn eval() -> FwdCtx<'static> {
        FwdCtx { train: false, dropout: 0.0, rng: None }
    }

    pub fn train(dropout: f64, rng: &'a mut ChaCha20Rng) -> Self {
        FwdCtx { train: true, dropout, rng: Some(rng) }
    }

    fn apply_dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        if !self.train || self.dropout <= 0.0 {
            return x;
        }
        let rng = self.rng.as_mut().expect("train ctx carries an rng");
        let keep = 1.0 - self.dropout;
        let dim = tape.shape(x);
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.gen_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.dropout(x, mask)
    }
}

pub struct LinearP {
    pub w: usize,
    pub b: usize,
}

impl LinearP {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.register(&format!("{name}.w"), xavier_uniform(rng, in_dim, out_dim, in_dim, out_dim));
        let b = store.register(&format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self { w, b }
    }

    /// Zero-initialized variant for residual-branch outputs: blocks start as
    /// identities, which keeps early contrastive training off the uniform
    /// collapse shortcut.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.register(&format!("{name}.w"), Array2::zeros((in_dim, out_dim)));
        let b = store.register(&format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        let h = tape.matmul(x, binds.var(self.w));
        tape.add_row(h, binds.var(self.b))
    }
}

pub struct LayerNormP {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNormP {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.register(&format!("{name}.gamma"), Array2::from_elem((1, dim), 1.0));
        let beta = store.register(&format!("{name}.beta"), Array2::zeros((1, dim)));
        Self { gamma, beta }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        tape.layer_norm(x, binds.var(self.gamma), binds.var(self.beta), LN_EPS)
    }
}

pub struct Conv1dP {
    pub w: usize,
    pub b: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1dP {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let w = store.register(
            &format!("{name}.w"),
            xavier_uniform(rng, out_ch, kernel * in_ch, fan_in, out_ch),
        );
        let b = store.register(&format!("{name}.b"), Array2::zeros((1, out_ch)));
        // "same"-style padding: output covers ceil(T/stride) positions
        Self { w, b, kernel, stride, pad: (kernel - 1) / 2 }
    }

    /// Zero-initialized variant for residual-branch outputs.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let w = store.register(&format!("{name}.w"), Array2::zeros((out_ch, kernel * in_ch)));
        let b = store.register(&format!("{name}.b"), Array2::zeros((1, out_ch)));
        Self { w, b, kernel, stride: 1, pad: (kernel - 1) / 2 }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        let h = tape.conv1d(x, binds.var(self.w), self.kernel, self.stride, self.pad);
        tape.add_row(h, binds.var(self.b))
    }
}

pub struct EmbeddingP {
    pub table: usize,
}

impl EmbeddingP {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, vocab: usize, dim: usize) -> Self {
        let table = store.register(&format!("{name}.table"), normal_init(rng, vocab, dim, 1.0));
        Self { table }
    }

    pub fn lookup(&self, tape: &mut Tape, binds: &Binds, ids: &[u32]) -> Var {
        let rows = ids.iter().map(|&i| i as usize).collect();
        tape.gather(binds.var(self.table), rows)
    }
}

pub struct MhaP {
    pub wq: LinearP,
    pub wk: LinearP,
    pub wv: LinearP,
    pub wo: LinearP,
    pub heads: usize,
    pub model_dim: usize,
}

impl MhaP {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, model_dim: usize, heads: usize) -> Self {
        assert_eq!(model_dim % heads, 0, "model dim must divide across heads");
        Self {
            wq: LinearP::new(store, rng, &format!("{name}.q"), model_dim, model_dim),
            wk: LinearP::new(store, rng, &format!("{name}.k"), model_dim, model_dim),
            wv: LinearP::new(store, rng, &format!("{name}.v"), model_dim, model_dim),
            wo: LinearP::new_zeroed(store, &format!("{name}.o"), model_dim, model_dim),
            heads,
            model_dim,
        }
    }

    /// Cross attention from `q_in` (Tq x C) over `kv_in` (Tk x C). Padded key
    /// positions are dropped before the key/value projections, which keeps the
    /// attention arithmetic bitwise identical to the unpadded sequence.
    pub fn apply(&self, tape: &mut Tape, binds: &Binds, q_in: Var, kv_in: Var, key_pad: Option<&[bool]>) -> Var {
        let kv = match key_pad {
            Some(pad) if pad.iter().any(|&b| b) => {
                let keep: Vec<usize> = pad
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| !p)
                    .map(|(i, _)| i)
                    .collect();
                tape.gather(kv_in, keep)
            }
            _ => kv_in,
        };
        let q = self.wq.apply(tape, binds, q_in);
        let k = self.wk.apply(tape, binds, kv);
        let v = self.wv.apply(tape, binds, kv);
        let dh = self.model_dim / self.heads;
        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            heads_out.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&heads_out);
        self.wo.apply(tape, binds, cat)
    }
}

/// Feed-forward transformer block: self-attention plus a 1-D convolutional
/// feed-forward, post-norm residuals. Padded rows are re-zeroed after each
/// layer norm so appended padding cannot leak into convolution windows.
pub struct FftBlockP {
    pub attn: MhaP,
    pub ln1: LayerNormP,
    pub conv1: Conv1dP,
    pub conv2: Conv1dP,
    pub ln2: LayerNormP,
}

impl FftBlockP {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        hidden: usize,
        ffn: usize,
        kernel: usize,
        heads: usize,
    ) -> Self {
        Self {
            attn: MhaP::new(store, rng, &format!("{name}.attn"), hidden, heads),
            ln1: LayerNormP::new(store, &format!("{name}.ln1"), hidden),
            conv1: Conv1dP::new(store, rng, &format!("{name}.conv1"), hidden, ffn, kernel, 1),
            conv2: Conv1dP::new_zeroed(store, &format!("{name}.conv2"), ffn, hidden, kernel),
            ln2: LayerNormP::new(store, &format!("{name}.ln2"), hidden),
        }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var, pad: Option<&[bool]>, ctx: &mut FwdCtx) -> Var {
        let pad_rows: Vec<usize> = pad
            .map(|p| p.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect())
            .unwrap_or_default();
        let zero_pads = |tape: &mut Tape, v: Var| -> Var {
            if pad_rows.is_empty() {
                v
            } else {
                tape.zero_rows(v, pad_rows.clone())
            }
        };

        let attn = self.attn.apply(tape, binds, x, x, pad);
        let attn = ctx.apply_dropout(tape, attn);
        let h = tape.add(x, attn);
        let h = self.ln1.apply(tape, binds, h);
        let h = zero_pads(tape, h);

        let ff = self.conv1.apply(tape, binds, h);
        let ff = tape.gelu(ff);
        let ff = zero_pads(tape, ff);
        let ff = ctx.apply_dropout(tape, ff);
        let ff = self.conv2.apply(tape, binds, ff);
        let ff = ctx.apply_dropout(tape, ff);
        let out = tape.add(h, ff);
        let out = self.ln2.apply(tape, binds, out);
        zero_pads(tape, out)
    }
}

/// Pre-activation residual unit of two convolutions; the first may downsample,
/// in which case the shortcut is a strided 1x1 convolution.
pub struct ResUnitP {
    pub ln1: LayerNormP,
    pub conv1: Conv1dP,
    pub ln2: LayerNormP,
    pub conv2: Conv1dP,
    pub shortcut: Option<Conv1dP>,
}

impl ResUnitP {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        hidden: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let shortcut = (stride > 1)
            .then(|| Conv1dP::new(store, rng, &format!("{name}.sc"), hidden, hidden, 1, stride));
        Self {
            ln1: LayerNormP::new(store, &format!("{name}.ln1"), hidden),
            conv1: Conv1dP::new(store, rng, &format!("{name}.conv1"), hidden, hidden, kernel, stride),
            ln2: LayerNormP::new(store, &format!("{name}.ln2"), hidden),
            conv2: Conv1dP::new_zeroed(store, &format!("{name}.conv2"), hidden, hidden, kernel),
            shortcut,
        }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        let h = self.ln1.apply(tape, binds, x);
        let h = tape.gelu(h);
        let h = self.conv1.apply(tape, binds, h);
        let h = self.ln2.apply(tape, binds, h);
        let h = tape.gelu(h);
        let h = self.conv2.apply(tape, binds, h);
        let sc = match &self.shortcut {
            Some(conv) => conv.apply(tape, binds, x),
            None => x,
        };
        tape.add(sc, h)
    }
}

/// Single-query multi-head attention pooling over time steps, with a learned
/// positional embedding on the inputs.
pub struct AttnPoolP {
    pub query: usize,
    pub pos: usize,
    pub wk: LinearP,
    pub wv: LinearP,
    pub wo: LinearP,
    pub heads: usize,
    pub pool_dim: usize,
}

impl AttnPoolP {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_dim: usize,
        pool_dim: usize,
        heads: usize,
        time_steps: usize,
    ) -> Self {
        assert_eq!(pool_dim % heads, 0, "pool dim must divide across heads");
        let query = store.register(
            &format!("{name}.query"),
            normal_init(rng, 1, pool_dim, 1.0 / (pool_dim as f64).sqrt()),
        );
        let pos = store.register(
            &format!("{name}.pos"),
            normal_init(rng, time_steps, in_dim, 0.02),
        );
        Self {
            query,
            pos,
            wk: LinearP::new(store, rng, &format!("{name}.k"), in_dim, pool_dim),
            wv: LinearP::new(store, rng, &format!("{name}.v"), in_dim, pool_dim),
            wo: LinearP::new(store, rng, &format!("{name}.o"), pool_dim, pool_dim),
            heads,
            pool_dim,
        }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        let x = tape.add(x, binds.var(self.pos));
        let k = self.wk.apply(tape, binds, x);
        let v = self.wv.apply(tape, binds, x);
        let q = binds.var(self.query);
        let dh = self.pool_dim / self.heads;
        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            heads_out.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&heads_out);
        self.wo.apply(tape, binds, cat)
    }
}

/// Sinusoidal positional encoding table (T x dim).
pub fn sinusoidal_pe(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let exponent = (2 * (i / 2)) as f64 / dim as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Layer norm + bias-free linear map + L2 normalization: the projection into
/// the joint embedding space used on both the text and speech sides. No bias:
/// a shared output offset would shrink the normalized between-item spread
/// without any loss penalty.
pub struct JointProjectionP {
    pub ln: LayerNormP,
    pub w: usize,
}

impl JointProjectionP {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, in_dim: usize, joint_dim: usize) -> Self {
        Self {
            ln: LayerNormP::new(store, &format!("{name}.ln"), in_dim),
            w: store.register(
                &format!("{name}.proj.w"),
                xavier_uniform(rng, in_dim, joint_dim, in_dim, joint_dim),
            ),
        }
    }

    pub fn apply(&self, tape: &mut Tape, binds: &Binds, x: Var) -> Var {
        let h = self.ln.apply(tape, binds, x);
        let h = tape.matmul(h, binds.var(self.w));
        tape.l2_normalize_rows(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::bind_all;
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn fft_block_keeps_length_and_is_finite() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let block = FftBlockP::new(&mut store, &mut r, "b", 16, 32, 5, 2);
        let mut tape = Tape::new();
        let binds = bind_all(&mut tape, &store);
        let x = tape.constant(Array2::from_shape_fn((9, 16), |(i, j)| ((i + j) as f64 * 0.3).sin()));
        let y = block.apply(&mut tape, &binds, x, None, &mut FwdCtx::eval());
        assert_eq!(tape.shape(y), (9, 16));
        assert!(tape.value(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_mask_blocks_padded_keys_exactly() {
        // Outputs at non-pad rows must be bitwise identical however much
        // padding is appended.
        let mut store = ParamStore::new();
        let mut r = rng();
        let block = FftBlockP::new(&mut store, &mut r, "b", 8, 16, 3, 2);

        let base = Array2::from_shape_fn((5, 8), |(i, j)| ((i * 7 + j) as f64 * 0.21).cos());
        let run = |rows: usize, pad_from: usize| {
            let mut tape = Tape::new();
            let binds = bind_all(&mut tape, &store);
            let mut x = Array2::zeros((rows, 8));
            for i in 0..pad_from {
                x.row_mut(i).assign(&base.row(i));
            }
            let pad: Vec<bool> = (0..rows).map(|i| i >= pad_from).collect();
            let xv = tape.constant(x);
            let xv = tape.zero_rows(xv, (pad_from..rows).collect());
            let y = block.apply(&mut tape, &binds, xv, Some(&pad), &mut FwdCtx::eval());
            tape.value(y).clone()
        };

        let y0 = run(5, 5);
        let y2 = run(8, 5);
        for i in 0..5 {
            for j in 0..8 {
                assert_eq!(y0[(i, j)].to_bits(), y2[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn res_unit_downsamples_by_stride() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let unit = ResUnitP::new(&mut store, &mut r, "u", 8, 3, 2);
        let mut tape = Tape::new();
        let binds = bind_all(&mut tape, &store);
        let x = tape.constant(Array2::from_shape_fn((16, 8), |(i, j)| ((i + 2 * j) as f64 * 0.13).sin()));
        let y = unit.apply(&mut tape, &binds, x);
        assert_eq!(tape.shape(y), (8, 8));
    }

    #[test]
    fn attention_forward_matches_naive_reference() {
        // Independent loop-based attention for one block on a fixed 3 x hidden
        // input; agreement to 1e-5.
        let hidden = 6;
        let heads = 2;
        let mut store = ParamStore::new();
        let mut r = rng();
        let mha = MhaP::new(&mut store, &mut r, "m", hidden, heads);
        let x = Array2::from_shape_fn((3, hidden), |(i, j)| ((i * 5 + j) as f64 * 0.17).sin());

        let mut tape = Tape::new();
        let binds = bind_all(&mut tape, &store);
        let xv = tape.constant(x.clone());
        let y = mha.apply(&mut tape, &binds, xv, xv, None);
        let got = tape.value(y).clone();

        // naive reference
        let lin = |x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>| -> Array2<f64> {
            let mut out = x.dot(w);
            for mut row in out.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += b[(0, j)];
                }
            }
            out
        };
        let q = lin(&x, store.value(mha.wq.w), store.value(mha.wq.b));
        let k = lin(&x, store.value(mha.wk.w), store.value(mha.wk.b));
        let v = lin(&x, store.value(mha.wv.w), store.value(mha.wv.b));
        let dh = hidden / heads;
        let mut cat = Array2::zeros((3, hidden));
        for h in 0..heads {
            for i in 0..3 {
                let mut scores = [0.0f64; 3];
                for t in 0..3 {
                    let mut s = 0.0;
                    for d in 0..dh {
                        s += q[(i, h * dh + d)] * k[(t, h * dh + d)];
                    }
                    scores[t] = s / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = ex.iter().sum();
                for d in 0..dh {
                    let mut o = 0.0;
                    for t in 0..3 {
                        o += ex[t] / z * v[(t, h * dh + d)];
                    }
                    cat[(i, h * dh + d)] = o;
                }
            }
        }
        let want = lin(&cat, store.value(mha.wo.w), store.value(mha.wo.b));
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn joint_projection_outputs_unit_norm_and_absorbs_scale() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let proj = JointProjectionP::new(&mut store, &mut r, "p", 8, 4);
        let x = Array2::from_shape_fn((1, 8), |(_, j)| (j as f64 * 0.4).sin() + 0.2);

        let run = |input: &Array2<f64>| {
            let mut tape = Tape::new();
            let binds = bind_all(&mut tape, &store);
            let xv = tape.constant(input.clone());
            let y = proj.apply(&mut tape, &binds, xv);
            tape.value(y).clone()
        };
        let y1 = run(&x);
        let norm: f64 = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);

        let y2 = run(&x.mapv(|v| v * 2.0));
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn sinusoidal_pe_layout() {
        let pe = sinusoidal_pe(4, 6);
        assert_eq!(pe[(0, 0)], 0.0);
        assert_eq!(pe[(0, 1)], 1.0);
        assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-12);
        assert!((pe[(2, 1)] - 2f64.cos()).abs() < 1e-12);
    }
}
