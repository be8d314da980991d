use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::GeometryError;
use crate::jet::Jet;

/// Flat row-major index of a multi-index.
pub fn flat_index(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

/// Multi-index of a flat row-major position.
pub fn multi_index(mut flat: usize, rank: usize, n: usize) -> Vec<usize> {
    let mut idx = vec![0; rank];
    for slot in (0..rank).rev() {
        idx[slot] = flat % n;
        flat /= n;
    }
    idx
}

/// A fully covariant tensor whose components are Taylor jets.
#[derive(Debug, Clone)]
pub struct TensorJet {
    pub n: usize,
    pub rank: usize,
    pub comps: Vec<Jet>,
}

impl TensorJet {
    pub fn new(n: usize, rank: usize, comps: Vec<Jet>) -> TensorJet {
        assert_eq!(
            comps.len(),
            n.pow(rank as u32),
            "component count must be n^rank"
        );
        TensorJet { n, rank, comps }
    }

    pub fn order(&self) -> usize {
        self.comps.iter().map(Jet::order).min().unwrap_or(0)
    }

    pub fn get(&self, idx: &[usize]) -> &Jet {
        &self.comps[flat_index(idx, self.n)]
    }

    pub fn sample(&self, point: &[f64]) -> TensorSample {
        TensorSample {
            n: self.n,
            rank: self.rank,
            comps: self.comps.iter().map(Jet::value).collect(),
            point: point.to_vec(),
        }
    }

    pub fn scale_jet(&self, s: &Jet) -> TensorJet {
        TensorJet {
            n: self.n,
            rank: self.rank,
            comps: self.comps.iter().map(|c| s * c).collect(),
        }
    }
}

/// Values of a fully covariant tensor at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorSample {
    pub n: usize,
    pub rank: usize,
    pub comps: Vec<f64>,
    pub point: Vec<f64>,
}

impl TensorSample {
    pub fn zeros(n: usize, rank: usize, point: &[f64]) -> TensorSample {
        TensorSample {
            n,
            rank,
            comps: vec![0.0; n.pow(rank as u32)],
            point: point.to_vec(),
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.comps[flat_index(idx, self.n)]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest component difference relative to `1 + max|self|`.
    pub fn relative_difference(&self, other: &TensorSample) -> f64 {
        let scale = self.max_abs().max(other.max_abs());
        let diff = self
            .comps
            .iter()
            .zip(&other.comps)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    /// Reorders slots so that new slot `s` reads old slot `perm[s]`.
    pub fn permute(&self, perm: &[usize]) -> TensorSample {
        let mut out = self.clone();
        for (flat, v) in out.comps.iter_mut().enumerate() {
            let idx = multi_index(flat, self.rank, self.n);
            let mut src = vec![0; self.rank];
            for (s, &p) in perm.iter().enumerate() {
                src[p] = idx[s];
            }
            *v = self.get(&src);
        }
        out
    }
}

/// Returns `(⟨T,T⟩_h, |⟨T,T⟩_h|^{1/2})`, contracting every slot with `h⁻¹`.
pub fn inner_and_norm(t: &TensorSample, h: &DMatrix<f64>) -> Result<(f64, f64), GeometryError> {
    let hinv = h
        .clone()
        .try_inverse()
        .ok_or_else(|| GeometryError::Singular(t.point.clone()))?;
    Ok(inner_with_inverse(t, &hinv))
}

/// As [`inner_and_norm`] with a precomputed inverse metric.
pub fn inner_with_inverse(t: &TensorSample, hinv: &DMatrix<f64>) -> (f64, f64) {
    let n = t.n;
    let mut raised = t.comps.clone();
    let mut scratch = vec![0.0; raised.len()];
    // Raise one slot at a time: stride separates slot s from the slots after it.
    for slot in 0..t.rank {
        let stride = n.pow((t.rank - slot - 1) as u32);
        let block = stride * n;
        for (base_flat, out) in scratch.iter_mut().enumerate() {
            let outer = base_flat / block;
            let a = (base_flat / stride) % n;
            let inner = base_flat % stride;
            let mut acc = 0.0;
            for b in 0..n {
                acc += hinv[(a, b)] * raised[outer * block + b * stride + inner];
            }
            *out = acc;
        }
        std::mem::swap(&mut raised, &mut scratch);
    }
    let ip: f64 = t.comps.iter().zip(&raised).map(|(x, y)| x * y).sum();
    (ip, ip.abs().sqrt())
}

/// Kulkarni–Nomizu product of symmetric 2-tensors given as row-major `n × n` arrays:
/// `(h⊘k)_{xyzt} = h_xz k_yt + h_yt k_xz − h_xt k_yz − h_yz k_xt`.
pub fn kulkarni_nomizu(h: &[Jet], k: &[Jet], n: usize) -> Vec<Jet> {
    let mut out = Vec::with_capacity(n.pow(4));
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                for t in 0..n {
                    let a = &h[x * n + z] * &k[y * n + t];
                    let b = &h[y * n + t] * &k[x * n + z];
                    let c = &h[x * n + t] * &k[y * n + z];
                    let d = &h[y * n + z] * &k[x * n + t];
                    out.push(&(&a + &b) - &(&c + &d));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn minkowski_covector() {
        let t = TensorSample {
            n: 2,
            rank: 1,
            comps: vec![1.0, 0.0],
            point: vec![0.0, 0.0],
        };
        let (ip, norm) = inner_and_norm(&t, &dmatrix![-1.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(ip, -1.0);
        assert_eq!(norm, 1.0);
    }

    #[test]
    fn zero_tensor() {
        let t = TensorSample::zeros(3, 4, &[0.0; 3]);
        assert_eq!(
            inner_and_norm(&t, &DMatrix::identity(3, 3)).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn contraction_matches_brute_force() {
        let h = dmatrix![2.0, 0.3, 0.1; 0.3, 1.5, -0.2; 0.1, -0.2, 0.7];
        let hinv = h.clone().try_inverse().unwrap();
        let comps: Vec<f64> = (0..27).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let t = TensorSample {
            n: 3,
            rank: 3,
            comps,
            point: vec![0.0; 3],
        };
        let mut brute = 0.0;
        for a in 0..27 {
            let ia = multi_index(a, 3, 3);
            for b in 0..27 {
                let ib = multi_index(b, 3, 3);
                let w: f64 = (0..3).map(|s| hinv[(ia[s], ib[s])]).product();
                brute += w * t.comps[a] * t.comps[b];
            }
        }
        let (ip, _) = inner_with_inverse(&t, &hinv);
        assert!((ip - brute).abs() < 1e-10 * brute.abs());
    }

    #[test]
    fn index_roundtrip() {
        for f in 0..81 {
            assert_eq!(flat_index(&multi_index(f, 4, 3), 3), f);
        }
    }
}
