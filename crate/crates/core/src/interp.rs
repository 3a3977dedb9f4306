//! Piecewise Chebyshev interpolation of smooth vector-valued curves whose
//! samples are expensive (each one an inversion of the share map).

use crate::error::Result;

#[derive(Clone, Debug)]
struct Piece {
    mid: f64,
    half: f64,
    /// Row-major `dim x nodes` coefficients, first one halved.
    coeffs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct PiecewiseChebyshev {
    start: f64,
    width: f64,
    nodes: usize,
    dim: usize,
    pieces: Vec<Piece>,
}

/// Chebyshev points of the first kind on `[-1, 1]`, ascending.
fn unit_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -(std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
        .collect()
}

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c[1..].iter().rev() {
        let b0 = 2.0 * u * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    u * b1 - b2 + c[0]
}

impl PiecewiseChebyshev {
    /// Fit on `[lo, hi]` split into equal pieces no wider than `max_width`.
    /// `sample` receives the ascending nodes of each piece, in order, and
    /// returns `dim` values per node (row-major).
    pub fn fit(
        lo: f64,
        hi: f64,
        max_width: f64,
        nodes: usize,
        dim: usize,
        mut sample: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let n_pieces = ((hi - lo) / max_width).ceil().max(1.0) as usize;
        let width = (hi - lo) / n_pieces as f64;
        let unit = unit_nodes(nodes);
        let mut pieces = Vec::with_capacity(n_pieces);
        for k in 0..n_pieces {
            let (mid, half) = (lo + width * (k as f64 + 0.5), width / 2.0);
            let at: Vec<f64> = unit.iter().map(|u| mid + half * u).collect();
            let values = sample(&at)?;
            let mut coeffs = vec![0.0; dim * nodes];
            for p in 0..dim {
                for order in 0..nodes {
                    let mut acc = 0.0;
                    for (i, _) in at.iter().enumerate() {
                        // Ascending node i is cos(pi (nodes - 1 - i + 1/2) / nodes).
                        let theta = std::f64::consts::PI * ((nodes - 1 - i) as f64 + 0.5) / nodes as f64;
                        acc += values[i * dim + p] * (order as f64 * theta).cos();
                    }
                    let scale = if order == 0 { 1.0 } else { 2.0 } / nodes as f64;
                    coeffs[p * nodes + order] = acc * scale;
                }
            }
            pieces.push(Piece { mid, half, coeffs });
        }
        Ok(PiecewiseChebyshev {
            start: lo,
            width: if hi > lo { width } else { 1.0 },
            nodes,
            dim,
            pieces,
        })
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let k = (((t - self.start) / self.width).floor().max(0.0) as usize).min(self.pieces.len() - 1);
        let piece = &self.pieces[k];
        let u = if piece.half > 0.0 {
            ((t - piece.mid) / piece.half).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        for (o, c) in out.iter_mut().zip(piece.coeffs.chunks(self.nodes)) {
            *o = clenshaw(c, u);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}
