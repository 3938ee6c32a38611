use rayon::prelude::*;

use super::{CrfParams, MessagePassing};
use crate::imagery::ImageRgb;

/// Kernel matrices up to this many entries are tabulated once.
const TABLE_LIMIT: usize = 1 << 24;

/// Exact pairwise kernel, summed directly over all pixel pairs.
pub struct NaiveKernel {
    n: usize,
    positions: Vec<[f64; 2]>,
    colors: Vec<[f64; 3]>,
    params: CrfParams,
    /// Row-major `n * n` kernel values with a zero diagonal, when small enough.
    table: Option<Vec<f32>>,
}

impl NaiveKernel {
    pub fn new(img: &ImageRgb, params: &CrfParams) -> Self {
        let n = img.pixel_count();
        let positions = (0..n)
            .map(|i| [(i / img.width) as f64, (i % img.width) as f64])
            .collect();
        let colors = img
            .data
            .chunks_exact(3)
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        let mut kernel = Self {
            n,
            positions,
            colors,
            params: *params,
            table: None,
        };
        if n * n <= TABLE_LIMIT {
            let mut table = vec![0f32; n * n];
            table.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    if i != j {
                        *v = kernel.value(i, j) as f32;
                    }
                }
            });
            kernel.table = Some(table);
        }
        kernel
    }

    /// `k(i, j)` for `i != j`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        let p = &self.params;
        let [yi, xi] = self.positions[i];
        let [yj, xj] = self.positions[j];
        let dp = (yi - yj).powi(2) + (xi - xj).powi(2);
        let mut k = 0.0;
        if p.w1 > 0.0 {
            let ci = self.colors[i];
            let cj = self.colors[j];
            let dc = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
            k += p.w1
                * (-dp / (2.0 * p.sigma_alpha * p.sigma_alpha)
                    - dc / (2.0 * p.sigma_beta * p.sigma_beta))
                    .exp();
        }
        if p.w2 > 0.0 {
            k += p.w2 * (-dp / (2.0 * p.sigma_gamma * p.sigma_gamma)).exp();
        }
        k
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot(row: &[f32], q: &[f64]) -> f64 {
    let mut acc = [0f64; 8];
    let rows = row.chunks_exact(8);
    let qs = q.chunks_exact(8);
    let tail: f64 = rows
        .remainder()
        .iter()
        .zip(qs.remainder())
        .map(|(&k, &v)| k as f64 * v)
        .sum();
    for (r, v) in rows.zip(qs) {
        for t in 0..8 {
            acc[t] += r[t] as f64 * v[t];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl MessagePassing for NaiveKernel {
    fn messages(&self, q: &[f64], classes: usize, out: &mut [f64]) {
        let n = self.n;
        match &self.table {
            Some(table) => {
                let mut by_class = vec![0f64; n * classes];
                for (j, qj) in q.chunks_exact(classes).enumerate() {
                    for (k, &v) in qj.iter().enumerate() {
                        by_class[k * n + j] = v;
                    }
                }
                out.par_chunks_mut(classes).enumerate().for_each(|(i, acc)| {
                    let row = &table[i * n..(i + 1) * n];
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a = dot(row, &by_class[k * n..(k + 1) * n]);
                    }
                });
            }
            None => {
                out.par_chunks_mut(classes).enumerate().for_each(|(i, acc)| {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for j in (0..n).filter(|&j| j != i) {
                        let k = self.value(i, j);
                        let qj = &q[j * classes..(j + 1) * classes];
                        for (a, &v) in acc.iter_mut().zip(qj) {
                            *a += k * v;
                        }
                    }
                });
            }
        }
    }
}
