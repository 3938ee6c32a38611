//! Permutohedral lattice for approximate high-dimensional Gaussian filtering.
//!
//! Points are embedded in the `d`-dimensional hyperplane `H_d` of
//! `R^(d+1)` whose coordinates sum to zero, splatted onto the vertices of
//! their enclosing simplex with barycentric weights, blurred with a
//! `[1/2, 1, 1/2]` stencil along each of the `d + 1` lattice directions, and
//! sliced back with the same weights.

use std::collections::HashMap;

/// Largest supported feature dimension.
pub const MAX_DIM: usize = 7;

type Key = [i32; MAX_DIM];

const MISSING: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct Lattice {
    dim: usize,
    points: usize,
    vertices: usize,
    /// `points * (dim + 1)` vertex indices.
    offsets: Vec<u32>,
    /// `points * (dim + 1)` barycentric weights, matching `offsets`.
    weights: Vec<f32>,
    /// For direction `j` and vertex `v`: the two neighbours at `(dim + 1) * v + j`.
    neighbours: Vec<[u32; 2]>,
}

impl Lattice {
    /// Builds the lattice for `points` feature vectors of length `dim`,
    /// stored row-major in `features`. Features must already be divided by
    /// their kernel standard deviations.
    pub fn new(features: &[f32], dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "feature dimension {dim} unsupported");
        assert_eq!(features.len() % dim, 0);
        let points = features.len() / dim;
        let d1 = dim + 1;

        // Expected std of the lattice blur, so that unit-std features match it.
        let inv_std = (2.0f64 / 3.0).sqrt() * d1 as f64;
        let scale: Vec<f64> = (0..dim)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();

        let mut canonical = vec![0i32; d1 * d1];
        for i in 0..d1 {
            for j in 0..d1 - i {
                canonical[i * d1 + j] = i as i32;
            }
            for j in d1 - i..d1 {
                canonical[i * d1 + j] = i as i32 - d1 as i32;
            }
        }

        let mut table: HashMap<Key, u32> = HashMap::with_capacity(points * d1);
        let mut keys: Vec<Key> = Vec::with_capacity(points * d1);
        let mut offsets = Vec::with_capacity(points * d1);
        let mut weights = Vec::with_capacity(points * d1);

        let mut elevated = vec![0f64; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0f64; d1 + 1];
        let down = 1.0 / d1 as f64;

        for p in 0..points {
            let f = &features[p * dim..(p + 1) * dim];

            // Elevate onto H_d.
            let mut sm = 0.0;
            for j in (1..=dim).rev() {
                let cf = f[j - 1] as f64 * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Nearest remainder-0 point.
            let mut sum = 0i32;
            for i in 0..d1 {
                let v = down * elevated[i];
                let up = v.ceil() * d1 as f64;
                let dn = v.floor() * d1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - dn { up as i32 } else { dn as i32 };
                sum += rem0[i];
            }
            sum /= d1 as i32;

            // Rank the differential to find the enclosing simplex.
            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..dim {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..d1 {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            if sum > 0 {
                for i in 0..d1 {
                    if rank[i] >= d1 as i32 - sum {
                        rem0[i] -= d1 as i32;
                        rank[i] += sum - d1 as i32;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..d1 {
                    if rank[i] < -sum {
                        rem0[i] += d1 as i32;
                        rank[i] += d1 as i32 + sum;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..d1 {
                let v = (elevated[i] - rem0[i] as f64) * down;
                bary[dim - rank[i] as usize] += v;
                bary[d1 - rank[i] as usize] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for r in 0..d1 {
                let mut key: Key = [0; MAX_DIM];
                for i in 0..dim {
                    key[i] = rem0[i] + canonical[r * d1 + rank[i] as usize];
                }
                let next = keys.len() as u32;
                let idx = *table.entry(key).or_insert_with(|| {
                    keys.push(key);
                    next
                });
                offsets.push(idx);
                weights.push(bary[r] as f32);
            }
        }

        let vertices = keys.len();
        let mut neighbours = vec![[MISSING; 2]; vertices * d1];
        for (v, key) in keys.iter().enumerate() {
            for j in 0..d1 {
                let mut n1: Key = [0; MAX_DIM];
                let mut n2: Key = [0; MAX_DIM];
                for i in 0..dim {
                    n1[i] = key[i] - 1;
                    n2[i] = key[i] + 1;
                }
                if j < dim {
                    n1[j] = key[j] + dim as i32;
                    n2[j] = key[j] - dim as i32;
                }
                neighbours[v * d1 + j] = [
                    table.get(&n1).copied().unwrap_or(MISSING),
                    table.get(&n2).copied().unwrap_or(MISSING),
                ];
            }
        }

        Self {
            dim,
            points,
            vertices,
            offsets,
            weights,
            neighbours,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    /// Filters `channels` values per point (point-major, `points * channels`).
    pub fn filter(&self, input: &[f64], channels: usize) -> Vec<f64> {
        assert_eq!(input.len(), self.points * channels);
        let d1 = self.dim + 1;
        let vc = channels;

        let mut values = vec![0f64; (self.vertices + 1) * vc];
        // Slot `vertices` is a permanent zero for missing neighbours.
        let zero_slot = self.vertices;

        for p in 0..self.points {
            let src = &input[p * vc..(p + 1) * vc];
            for r in 0..d1 {
                let o = self.offsets[p * d1 + r] as usize;
                let w = self.weights[p * d1 + r] as f64;
                for c in 0..vc {
                    values[o * vc + c] += w * src[c];
                }
            }
        }

        let mut scratch = vec![0f64; values.len()];
        for j in 0..d1 {
            for v in 0..self.vertices {
                let [n1, n2] = self.neighbours[v * d1 + j];
                let n1 = if n1 == MISSING { zero_slot } else { n1 as usize };
                let n2 = if n2 == MISSING { zero_slot } else { n2 as usize };
                for c in 0..vc {
                    scratch[v * vc + c] = values[v * vc + c]
                        + 0.5 * (values[n1 * vc + c] + values[n2 * vc + c]);
                }
            }
            std::mem::swap(&mut values, &mut scratch);
        }

        let alpha = 1.0 / (1.0 + 2f64.powi(-(self.dim as i32)));
        let mut out = vec![0f64; self.points * vc];
        for p in 0..self.points {
            let dst = &mut out[p * vc..(p + 1) * vc];
            for r in 0..d1 {
                let o = self.offsets[p * d1 + r] as usize;
                let w = self.weights[p * d1 + r] as f64 * alpha;
                for c in 0..vc {
                    dst[c] += w * values[o * vc + c];
                }
            }
        }
        out
    }
}
