//! Named parameter store shared by the encoders and the optimizer.
//!
//! Values live as f64 arrays but are quantized to f32 on registration and
//! after every optimizer update, so the f32 checkpoint format round-trips
//! bit-exactly.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::tape::{Tape, Var};

#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name. Panics on duplicates: parameter
    /// names are construction-time constants.
    pub fn register(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value.mapv(|v| v as f32 as f64));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn set_value(&mut self, id: usize, value: Array2<f64>) {
        self.values[id] = value;
    }

    /// Quantize every tensor to f32 (applied after optimizer updates).
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Simple checksum over all parameter bits; used to assert frozen models
    /// really stay frozen.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for x in v.iter() {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }
}

/// Tape leaves for every parameter, in store order.
pub struct Binds(pub Vec<Var>);

pub fn bind_all(tape: &mut Tape, store: &ParamStore) -> Binds {
    let vars = (0..store.len())
        .map(|id| tape.param_leaf(store.value(id).clone(), id))
        .collect();
    Binds(vars)
}

impl Binds {
    pub fn var(&self, id: usize) -> Var {
        self.0[id]
    }
}

pub fn xavier_uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

pub fn normal_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    // Box-Muller keeps us off extra distribution deps and stays reproducible.
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std
    })
}
