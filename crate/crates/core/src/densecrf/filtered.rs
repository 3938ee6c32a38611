use super::permutohedral::Lattice;
use super::{CrfParams, MessagePassing};
use crate::imagery::ImageRgb;

struct Term {
    weight: f64,
    lattice: Lattice,
}

/// Pairwise messages via permutohedral filtering: a 5-D (position, color)
/// lattice for the appearance kernel and a 2-D position lattice for the
/// smoothness kernel.
pub struct LatticeKernel {
    terms: Vec<Term>,
}

impl LatticeKernel {
    pub fn new(img: &ImageRgb, params: &CrfParams) -> Self {
        let n = img.pixel_count();
        let w = img.width;
        let mut terms = Vec::new();
        if params.w1 > 0.0 {
            let mut feats = Vec::with_capacity(n * 5);
            for i in 0..n {
                let p = &img.data[i * 3..i * 3 + 3];
                feats.extend_from_slice(&[
                    ((i / w) as f64 / params.sigma_alpha) as f32,
                    ((i % w) as f64 / params.sigma_alpha) as f32,
                    (p[0] as f64 / params.sigma_beta) as f32,
                    (p[1] as f64 / params.sigma_beta) as f32,
                    (p[2] as f64 / params.sigma_beta) as f32,
                ]);
            }
            terms.push(Term {
                weight: params.w1,
                lattice: Lattice::new(&feats, 5),
            });
        }
        if params.w2 > 0.0 {
            let mut feats = Vec::with_capacity(n * 2);
            for i in 0..n {
                feats.push(((i / w) as f64 / params.sigma_gamma) as f32);
                feats.push(((i % w) as f64 / params.sigma_gamma) as f32);
            }
            terms.push(Term {
                weight: params.w2,
                lattice: Lattice::new(&feats, 2),
            });
        }
        Self { terms }
    }
}

impl MessagePassing for LatticeKernel {
    fn messages(&self, q: &[f64], classes: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for term in &self.terms {
            let filtered = term.lattice.filter(q, classes);
            for ((o, f), v) in out.iter_mut().zip(&filtered).zip(q) {
                // The filter includes each pixel's own unit-weight contribution.
                *o += term.weight * (f - v);
            }
        }
    }
}
