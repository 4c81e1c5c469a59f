//! Flat parameter storage, dense layers and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Which part of a network a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    /// Trained by every loss term.
    Shared,
    /// Private to output head `j` (1-based).
    Head(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub owner: Owner,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All parameters of a network in one contiguous vector, partitioned into
/// named blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    blocks: Vec<Block>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` block; weights get `N(0, 1 / cols)` entries,
    /// single-column blocks (biases) start at zero.
    pub(crate) fn add(&mut self, name: impl Into<String>, owner: Owner, rows: usize, cols: usize, rng: &mut RngStream) -> usize {
        let offset = self.values.len();
        let scale = (1.0 / cols as f64).sqrt();
        for _ in 0..rows * cols {
            let v = if cols == 1 { 0.0 } else { rng.next_normal() * scale };
            self.values.push(v);
        }
        self.blocks.push(Block {
            name: name.into(),
            owner,
            rows,
            cols,
            offset,
        });
        self.blocks.len() - 1
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn slice(&self, id: usize) -> &[f64] {
        &self.values[self.blocks[id].range()]
    }

    /// Replaces all values, keeping the block layout.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::format(
                "parameters",
                format!("expected {} values, found {}", self.values.len(), values.len()),
            ));
        }
        self.values = values;
        Ok(())
    }
}

/// `y = W x (+ b)` over blocks of a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: Option<usize>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(p: &mut ParamStore, name: &str, owner: Owner, inputs: usize, outputs: usize, bias: bool, rng: &mut RngStream) -> Self {
        let w = p.add(format!("{name}.weight"), owner, outputs, inputs, rng);
        let b = bias.then(|| p.add(format!("{name}.bias"), owner, outputs, 1, rng));
        Self { w, b, inputs, outputs }
    }

    /// `y += W x + b`.
    pub fn forward_add(&self, p: &ParamStore, x: &[f64], y: &mut [f64]) {
        let w = p.slice(self.w);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(b) = self.b {
            for (yo, bo) in y.iter_mut().zip(p.slice(b)) {
                *yo += bo;
            }
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.outputs];
        self.forward_add(p, x, &mut y);
        y
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad` and, if given,
    /// `dx += W^T dy`.
    pub fn backward(&self, p: &ParamStore, x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let wb = p.block(self.w);
        let gw = &mut grad[wb.range()];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for (r, xv) in row.iter_mut().zip(x) {
                *r += g * xv;
            }
        }
        if let Some(b) = self.b {
            let gb = &mut grad[p.block(b).range()];
            for (r, g) in gb.iter_mut().zip(dy) {
                *r += g;
            }
        }
        if let Some(dx) = dx {
            let w = p.slice(self.w);
            for (o, &g) in dy.iter().enumerate() {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                for (d, wv) in dx.iter_mut().zip(row) {
                    *d += g * wv;
                }
            }
        }
    }
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Multiplies an upstream gradient by `1 - y^2` for `y = tanh(.)`.
pub(crate) fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_backward_matches_manual() {
        let mut rng = RngStream::new(0, 0);
        let mut p = ParamStore::new();
        let d = Dense::new(&mut p, "l", Owner::Shared, 3, 2, true, &mut rng);
        p.values_mut()[6] = 0.5;
        let x = [1.0, -2.0, 0.5];
        let y = d.forward(&p, &x);
        let w = p.slice(d.w).to_vec();
        assert!((y[0] - (w[0] - 2.0 * w[1] + 0.5 * w[2] + 0.5)).abs() < 1e-15);
        let mut g = vec![0.0; p.len()];
        let mut dx = vec![0.0; 3];
        d.backward(&p, &x, &[1.0, 0.0], &mut g, Some(&mut dx));
        assert_eq!(&g[0..3], &x);
        assert_eq!(&g[3..6], &[0.0; 3]);
        assert_eq!(g[6], 1.0);
        assert_eq!(dx, w[0..3].to_vec());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
