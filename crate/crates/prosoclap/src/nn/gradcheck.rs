//! Central finite-difference verification of analytic gradients.
//!
//! The same harness backs the unit tests, the acceptance suite and the
//! `gradcheck` CLI subcommand.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub struct CoordCheck {
    pub param: String,
    pub coord: (usize, usize),
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Coordinates whose difference sits below this are indistinguishable from
/// central-difference roundoff (eps * |f| / h ~ 1e-11 at h = 1e-5) and count
/// as exact; attention key biases, for instance, have a true gradient of zero.
const ABS_TOL: f64 = 1e-8;

fn rel_err(a: f64, b: f64) -> f64 {
    if (a - b).abs() <= ABS_TOL {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare analytic gradients of `build` (a fresh tape returning the loss)
/// against central differences on up to `coords_per_tensor` coordinates of
/// every parameter.
pub fn check_param_grads<F>(
    store: &mut ParamStore,
    build: F,
    coords_per_tensor: usize,
    h: f64,
    tol: f64,
    rng: &mut ChaCha20Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    let (mut tape, loss) = build(store)?;
    let grads = tape.backward(loss, store.len())?;

    let mut checks = Vec::new();
    let mut max_rel = 0.0f64;
    for id in 0..store.len() {
        let Some(g) = &grads.by_param[id] else { continue };
        let (rows, cols) = store.value(id).dim();
        let n = rows * cols;
        let picks: Vec<usize> = if n <= coords_per_tensor {
            (0..n).collect()
        } else {
            (0..coords_per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for flat in picks {
            let (i, j) = (flat / cols, flat % cols);
            let x0 = store.value(id)[(i, j)];
            store.value_mut(id)[(i, j)] = x0 + h;
            let fp = eval_loss(store, &build)?;
            store.value_mut(id)[(i, j)] = x0 - h;
            let fm = eval_loss(store, &build)?;
            store.value_mut(id)[(i, j)] = x0;
            let fd = (fp - fm) / (2.0 * h);
            let an = g[(i, j)];
            let e = rel_err(an, fd);
            max_rel = max_rel.max(e);
            checks.push(CoordCheck {
                param: store.name(id).to_string(),
                coord: (i, j),
                analytic: an,
                fd,
                rel_err: e,
            });
        }
    }
    Ok(GradCheckReport { checks, max_rel_err: max_rel, tol })
}

fn eval_loss<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    let (tape, loss) = build(store)?;
    Ok(tape.scalar(loss))
}

/// Gradient check for a loss over plain arrays (no parameter store): used for
/// the loss-level oracle on T, S and log-tau.
pub fn check_array_grads<F>(
    inputs: &mut [Array2<f64>],
    f: F,
    h: f64,
) -> Vec<(usize, Array2<f64>, Array2<f64>)>
where
    F: Fn(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>),
{
    let (_, analytic) = f(inputs);
    let mut out = Vec::new();
    for idx in 0..inputs.len() {
        let dim = inputs[idx].dim();
        let mut fd = Array2::zeros(dim);
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let x0 = inputs[idx][(i, j)];
                inputs[idx][(i, j)] = x0 + h;
                let (fp, _) = f(inputs);
                inputs[idx][(i, j)] = x0 - h;
                let (fm, _) = f(inputs);
                inputs[idx][(i, j)] = x0;
                fd[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        out.push((idx, analytic[idx].clone(), fd));
    }
    out
}

pub fn max_rel_err(pairs: &[(usize, Array2<f64>, Array2<f64>)]) -> f64 {
    pairs
        .iter()
        .flat_map(|(_, a, b)| a.iter().zip(b.iter()))
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
