use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GeometryError;
use crate::expr::Expr;

use super::metric::MetricField;

/// Symbolic inverse of a component grid by cofactors (dimension ≤ 4).
pub fn symbolic_inverse(comps: &[Expr], n: usize) -> Vec<Expr> {
    let det = determinant(comps, n);
    let mut inv = vec![Expr::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let minor = minor_of(comps, n, j, i);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let cof = determinant(&minor, n - 1).scale(sign);
            inv[i * n + j] = cof.div(&det);
        }
    }
    inv
}

fn minor_of(comps: &[Expr], n: usize, row: usize, col: usize) -> Vec<Expr> {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != row && j != col {
                out.push(comps[i * n + j].clone());
            }
        }
    }
    out
}

pub fn determinant(comps: &[Expr], n: usize) -> Expr {
    match n {
        0 => Expr::one(),
        1 => comps[0].clone(),
        _ => {
            let mut acc = Expr::zero();
            for j in 0..n {
                let term = comps[j].mul(&determinant(&minor_of(comps, n, 0, j), n - 1));
                acc = if j % 2 == 0 {
                    acc.add(&term)
                } else {
                    acc.sub(&term)
                };
            }
            acc
        }
    }
}

/// `Wick(g,t)_{ij} = g_ij − 2 ∂_i t ∂_j t / ⟨dt,dt⟩_g`.
///
/// `⟨dt,dt⟩_g < 0` is checked at `samples` seeded interior points.
pub fn wick_rotation(
    g: &MetricField,
    t: &Expr,
    samples: usize,
    seed: u64,
) -> Result<MetricField, GeometryError> {
    let n = g.dim();
    let dt: Vec<Expr> = (0..n).map(|a| t.differentiate(a)).collect();
    let ginv = symbolic_inverse(g.components(), n);
    let mut norm = Expr::zero();
    for a in 0..n {
        for b in 0..n {
            norm = norm.add(&ginv[a * n + b].mul(&dt[a]).mul(&dt[b]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre: Vec<f64> = g.domain().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let mut points = vec![centre];
    points.extend((0..samples).map(|_| g.random_interior_point(&mut rng)));
    for x in &points {
        if !(norm.eval(x)? < 0.0) {
            return Err(GeometryError::NotTimelike(x.clone()));
        }
    }
    let mut comps = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let corr = dt[i].mul(&dt[j]).scale(2.0).div(&norm);
            comps.push(g.component(i, j).sub(&corr));
        }
    }
    let wick = MetricField::new(g.scope().clone(), comps, vec![1; n], g.domain().to_vec())?;
    Ok(wick
        .with_periods(g.periods().to_vec())
        .with_leaf_dim(g.leaf_dim()))
}
