use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::GeometryError;
use crate::expr::{Expr, Scope};
use crate::jet::{Jet, JetSpace};

/// Highest jet order any metric supports (∇³ of curvature needs 5).
pub const MAX_METRIC_ORDER: usize = 6;

/// Jet orders served by symbolic partials in [`MetricField::jet`].
pub const SYMBOLIC_ORDER: usize = 2;

/// A metric on a chart box, given by component expressions.
pub struct MetricField {
    scope: Scope,
    components: Vec<Expr>,
    signature: Vec<i8>,
    domain: Vec<(f64, f64)>,
    periods: Vec<Option<f64>>,
    leaf_dim: Option<usize>,
    // partials[c][m] = ∂^α g_c for component c = i*n + j (i ≤ j), monomial m.
    partials: RwLock<Vec<Vec<Expr>>>,
}

impl Clone for MetricField {
    fn clone(&self) -> MetricField {
        MetricField {
            scope: self.scope.clone(),
            components: self.components.clone(),
            signature: self.signature.clone(),
            domain: self.domain.clone(),
            periods: self.periods.clone(),
            leaf_dim: self.leaf_dim,
            partials: RwLock::new(self.partials.read().expect("partials lock").clone()),
        }
    }
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let comps: Vec<String> = self
            .components
            .iter()
            .map(|c| c.display(&self.scope).to_string())
            .collect();
        f.debug_struct("MetricField")
            .field("variables", &self.scope.names())
            .field("components", &comps)
            .field("signature", &self.signature)
            .field("domain", &self.domain)
            .finish()
    }
}

impl MetricField {
    /// `components` is row-major `n × n`; the lower triangle must match the upper.
    pub fn new(
        scope: Scope,
        components: Vec<Expr>,
        signature: Vec<i8>,
        domain: Vec<(f64, f64)>,
    ) -> Result<MetricField, GeometryError> {
        let n = scope.len();
        if !(1..=4).contains(&n) {
            return Err(GeometryError::Dimension(n));
        }
        if components.len() != n * n || signature.len() != n || domain.len() != n {
            return Err(GeometryError::Invalid(format!(
                "expected {} components, {n} signature entries and {n} domain intervals",
                n * n
            )));
        }
        if signature.iter().any(|s| *s != 1 && *s != -1) {
            return Err(GeometryError::Invalid(
                "signature entries must be +1 or -1".into(),
            ));
        }
        if domain.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(GeometryError::Invalid(
                "domain intervals must satisfy lo < hi".into(),
            ));
        }
        let metric = MetricField {
            scope,
            components,
            signature,
            domain,
            periods: vec![None; n],
            leaf_dim: None,
            partials: RwLock::new(Vec::new()),
        };
        metric.check_symmetry()?;
        Ok(metric)
    }

    /// Diagonal metric `diag(d_0, …)`; signature inferred from the sign at the domain centre.
    pub fn diagonal(
        scope: Scope,
        diag: Vec<Expr>,
        domain: Vec<(f64, f64)>,
    ) -> Result<MetricField, GeometryError> {
        let n = diag.len();
        let mut comps = vec![Expr::zero(); n * n];
        for (i, d) in diag.into_iter().enumerate() {
            comps[i * n + i] = d;
        }
        let centre: Vec<f64> = domain.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let mut signature = Vec::with_capacity(n);
        for i in 0..n {
            let v = comps[i * n + i].eval(&centre)?;
            signature.push(if v < 0.0 { -1 } else { 1 });
        }
        MetricField::new(scope, comps, signature, domain)
    }

    /// Parses a row-major component grid of expression strings.
    pub fn parse(
        variables: &[&str],
        components: &[&[&str]],
        signature: Vec<i8>,
        domain: Vec<(f64, f64)>,
    ) -> Result<MetricField, crate::error::InputError> {
        let scope = Scope::new(variables.iter().copied());
        let mut exprs = Vec::new();
        for (i, row) in components.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                let e = scope
                    .parse(src)
                    .map_err(|source| crate::error::InputError::Parse {
                        context: format!("component [{i}][{j}]"),
                        source,
                    })?;
                exprs.push(e);
            }
        }
        Ok(MetricField::new(scope, exprs, signature, domain)?)
    }

    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> MetricField {
        assert_eq!(periods.len(), self.dim());
        self.periods = periods;
        self
    }

    pub fn with_leaf_dim(mut self, p: Option<usize>) -> MetricField {
        self.leaf_dim = p;
        self
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> MetricField {
        assert_eq!(domain.len(), self.dim());
        self.domain = domain;
        self
    }

    fn check_symmetry(&self) -> Result<(), GeometryError> {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = &self.components[i * n + j];
                let b = &self.components[j * n + i];
                if a == b {
                    continue;
                }
                for _ in 0..8 {
                    let x = self.random_interior_point(&mut rng);
                    match (a.eval(&x), b.eval(&x)) {
                        (Ok(p), Ok(q)) if (p - q).abs() <= 1e-12 * (1.0 + p.abs()) => {}
                        (Err(_), Err(_)) => {}
                        _ => return Err(GeometryError::Asymmetric(i * n + j, j * n + i)),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.scope.len()
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn component(&self, i: usize, j: usize) -> &Expr {
        &self.components[i * self.dim() + j]
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn signature(&self) -> &[i8] {
        &self.signature
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn leaf_dim(&self) -> Option<usize> {
        self.leaf_dim
    }

    pub fn is_riemannian(&self) -> bool {
        self.signature.iter().all(|&s| s == 1)
    }

    /// True when `x` lies in the domain box; periodic axes always qualify.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.domain)
            .zip(&self.periods)
            .all(|((v, (lo, hi)), p)| p.is_some() || (lo <= v && v <= hi))
    }

    pub fn random_interior_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.domain
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * (0.05 + 0.9 * rng.gen::<f64>()))
            .collect()
    }

    pub fn metric_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.component(i, j).eval(x)?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Checks invertibility and the eigenvalue sign pattern at `x`.
    pub fn check_point(&self, x: &[f64]) -> Result<(), GeometryError> {
        let m = self.metric_matrix(x)?;
        let found = signature_of(&m).ok_or_else(|| GeometryError::Singular(x.to_vec()))?;
        let mut declared = self.signature.clone();
        declared.sort();
        if found != declared {
            return Err(GeometryError::SignatureMismatch {
                point: x.to_vec(),
                declared: self.signature.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Runs [`MetricField::check_point`] on `samples` seeded interior points.
    pub fn validate(&self, samples: usize, seed: u64) -> Result<(), GeometryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let x = self.random_interior_point(&mut rng);
            self.check_point(&x)?;
        }
        Ok(())
    }

    fn ensure_partials(&self, order: usize) {
        let space = JetSpace::get(self.dim(), MAX_METRIC_ORDER);
        let needed = space.len(order);
        if self
            .partials
            .read()
            .expect("partials lock")
            .first()
            .is_some_and(|p| p.len() >= needed)
        {
            return;
        }
        let mut guard = self.partials.write().expect("partials lock");
        let n = self.dim();
        if guard.is_empty() {
            *guard = (0..n * n)
                .map(|c| {
                    if c / n <= c % n {
                        vec![self.components[c].clone()]
                    } else {
                        Vec::new()
                    }
                })
                .collect();
        }
        for (c, list) in guard.iter_mut().enumerate() {
            if c / n > c % n {
                continue;
            }
            while list.len() < needed {
                let m = list.len();
                let alpha = &space.exponents()[m];
                let v = alpha
                    .iter()
                    .position(|&a| a > 0)
                    .expect("non-constant monomial");
                let mut parent = alpha.clone();
                parent[v] -= 1;
                let p = space.index_of(&parent).expect("parent monomial");
                let d = list[p].differentiate(v);
                list.push(d);
            }
        }
    }

    /// Symbolic partial `∂^α g_ij`.
    pub fn partial_expr(&self, i: usize, j: usize, alpha: &[u8]) -> Expr {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let order: usize = alpha.iter().map(|&a| a as usize).sum();
        self.ensure_partials(order);
        let space = JetSpace::get(self.dim(), MAX_METRIC_ORDER);
        let m = space.index_of(alpha).expect("multi-index within cap");
        self.partials.read().expect("partials lock")[i * self.dim() + j][m].clone()
    }

    /// Taylor jets of all components at `x`.
    ///
    /// Orders up to [`SYMBOLIC_ORDER`] come from cached symbolic partials; higher
    /// orders use Taylor-mode evaluation of the component trees.
    pub fn jet(&self, x: &[f64], order: usize) -> Result<MetricJet, GeometryError> {
        if order > SYMBOLIC_ORDER {
            if order > MAX_METRIC_ORDER {
                return Err(GeometryError::OrderCap {
                    requested: order,
                    cap: MAX_METRIC_ORDER,
                });
            }
            return self.jet_taylor(x, order);
        }
        self.jet_symbolic(x, order)
    }

    /// Jets seeded only from symbolic partials, at any order up to the cap.
    pub fn jet_symbolic(&self, x: &[f64], order: usize) -> Result<MetricJet, GeometryError> {
        if order > MAX_METRIC_ORDER {
            return Err(GeometryError::OrderCap {
                requested: order,
                cap: MAX_METRIC_ORDER,
            });
        }
        let n = self.dim();
        self.ensure_partials(order);
        let space = JetSpace::get(n, MAX_METRIC_ORDER);
        let len = space.len(order);
        let partials = self.partials.read().expect("partials lock");
        let mut g: Vec<Jet> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if i > j {
                    let mirrored = g[j * n + i].clone();
                    g.push(mirrored);
                    continue;
                }
                let vals = partials[i * n + j][..len]
                    .iter()
                    .map(|e| e.eval(x))
                    .collect::<Result<Vec<f64>, _>>()?;
                g.push(Jet::from_partials(&space, order, &vals));
            }
        }
        Ok(MetricJet {
            n,
            point: x.to_vec(),
            g,
        })
    }

    /// Taylor-mode jets straight from the component trees (no symbolic partials).
    pub fn jet_taylor(&self, x: &[f64], order: usize) -> Result<MetricJet, GeometryError> {
        let n = self.dim();
        let space = JetSpace::get(n, MAX_METRIC_ORDER);
        let mut g: Vec<Jet> = Vec::with_capacity(n * n);
        for c in 0..n * n {
            let (i, j) = (c / n, c % n);
            if i > j {
                let mirrored: Jet = g[j * n + i].clone();
                g.push(mirrored);
            } else {
                g.push(crate::jet::eval_expr(
                    &self.components[c],
                    &space,
                    order,
                    x,
                )?);
            }
        }
        Ok(MetricJet {
            n,
            point: x.to_vec(),
            g,
        })
    }

    /// The metric `e^{2u} g`.
    pub fn conformal_rescale(&self, u: &Expr) -> MetricField {
        let factor = u.scale(2.0).exp();
        let components = self.components.iter().map(|c| factor.mul(c)).collect();
        MetricField {
            scope: self.scope.clone(),
            components,
            signature: self.signature.clone(),
            domain: self.domain.clone(),
            periods: self.periods.clone(),
            leaf_dim: self.leaf_dim,
            partials: RwLock::new(Vec::new()),
        }
    }

    /// Leaf metric through `x`: the upper-left `p × p` block in the first `p` variables,
    /// with the remaining coordinates frozen at `x`.
    pub fn leaf_metric(&self, p: usize, x: &[f64]) -> Result<MetricField, GeometryError> {
        let n = self.dim();
        if p == 0 || p > n {
            return Err(GeometryError::Foliation(p));
        }
        let subs: Vec<Expr> = (0..n)
            .map(|v| {
                if v < p {
                    Expr::var(v)
                } else {
                    Expr::constant(x[v])
                }
            })
            .collect();
        let mut comps = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                comps.push(self.component(i, j).substitute(&subs));
            }
        }
        let scope = Scope::new(self.scope.names()[..p].iter().cloned());
        let m = self.metric_matrix(x)?.view((0, 0), (p, p)).into_owned();
        let mut signature =
            signature_of(&m).ok_or_else(|| GeometryError::LeafDegenerate(x.to_vec()))?;
        signature.reverse();
        let domain = self.domain[..p].to_vec();
        let mut leaf = MetricField::new(scope, comps, signature, domain)?;
        leaf.periods = self.periods[..p].to_vec();
        Ok(leaf)
    }
}

/// Sorted eigenvalue signs, or `None` when an eigenvalue is (relatively) zero.
pub fn signature_of(m: &DMatrix<f64>) -> Option<Vec<i8>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut signs = Vec::new();
    for v in eig.eigenvalues.iter() {
        if v.abs() <= 1e-13 * scale {
            return None;
        }
        signs.push(if *v < 0.0 { -1 } else { 1 });
    }
    signs.sort();
    Some(signs)
}

/// Component jets of a metric at one point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub(crate) n: usize,
    pub(crate) point: Vec<f64>,
    pub(crate) g: Vec<Jet>,
}

impl MetricJet {
    pub fn from_components(point: Vec<f64>, g: Vec<Jet>) -> MetricJet {
        let n = point.len();
        assert_eq!(g.len(), n * n);
        MetricJet { n, point, g }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn order(&self) -> usize {
        self.g[0].order()
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        self.g[0].space()
    }

    pub fn at(&self, i: usize, j: usize) -> &Jet {
        &self.g[i * self.n + j]
    }

    pub fn components(&self) -> &[Jet] {
        &self.g
    }

    pub fn truncate(&self, order: usize) -> MetricJet {
        MetricJet {
            n: self.n,
            point: self.point.clone(),
            g: self.g.iter().map(|j| j.truncate(order)).collect(),
        }
    }

    pub fn value_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.at(i, j).value())
    }

    /// Jets of `e^{2u} g`.
    pub fn conformal(&self, u: &Jet) -> MetricJet {
        let factor = u.scale(2.0).exp();
        MetricJet {
            n: self.n,
            point: self.point.clone(),
            g: self.g.iter().map(|c| &factor * c).collect(),
        }
    }

    /// Jets of the inverse matrix.
    pub fn inverse(&self) -> Result<Vec<Jet>, GeometryError> {
        invert_jet_matrix(&self.g, self.n)
            .ok_or_else(|| GeometryError::Singular(self.point.clone()))
    }

    /// Restriction to the first `p` coordinates (leaf metric jets).
    pub fn restrict(&self, p: usize) -> MetricJet {
        let mut g = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                g.push(self.at(i, j).restrict(p));
            }
        }
        MetricJet {
            n: p,
            point: self.point[..p].to_vec(),
            g,
        }
    }
}

/// Inverse of a matrix of jets via the series `X ← A − A·N·X` with `A = M₀⁻¹`.
pub fn invert_jet_matrix(m: &[Jet], n: usize) -> Option<Vec<Jet>> {
    let m0 = DMatrix::from_fn(n, n, |i, j| m[i * n + j].value());
    let a = m0.clone().try_inverse()?;
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let space = m[0].space().clone();
    let order = m.iter().map(Jet::order).min().unwrap_or(0);
    let a_jets: Vec<Jet> = (0..n * n)
        .map(|idx| Jet::constant(&space, order, a[(idx / n, idx % n)]))
        .collect();
    let nil: Vec<Jet> = m
        .iter()
        .map(|j| {
            let t = j.truncate(order);
            t.add_constant(-t.value())
        })
        .collect();
    // A·N is fixed across iterations.
    let an = mat_mul(&a_jets, &nil, n);
    let mut x = a_jets.clone();
    for _ in 0..order {
        let anx = mat_mul(&an, &x, n);
        x = a_jets.iter().zip(&anx).map(|(p, q)| p - q).collect();
    }
    Some(x)
}

pub(crate) fn mat_mul(a: &[Jet], b: &[Jet], n: usize) -> Vec<Jet> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = &a[i * n] * &b[j];
            for k in 1..n {
                acc = &acc + &(&a[i * n + k] * &b[k * n + j]);
            }
            out.push(acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_plane() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-5.0, 5.0), (0.1, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn symbolic_and_taylor_jets_agree() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["exp(x*y)", "sin(x)"], &["sin(x)", "2 + cos(y)"]],
            vec![1, 1],
            vec![(-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let x = [0.3, 0.4];
        let a = g.jet_symbolic(&x, 4).unwrap();
        let b = g.jet_taylor(&x, 4).unwrap();
        for (p, q) in a.components().iter().zip(b.components()) {
            for (u, v) in p.coefficients().iter().zip(q.coefficients()) {
                assert!((u - v).abs() < 1e-11 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn inverse_jet() {
        let g = half_plane();
        let mj = g.jet(&[0.0, 2.0], 3).unwrap();
        let inv = mj.inverse().unwrap();
        let prod = mat_mul(mj.components(), &inv, 2);
        for (idx, p) in prod.iter().enumerate() {
            let expect = if idx % 3 == 0 { 1.0 } else { 0.0 };
            assert!((p.value() - expect).abs() < 1e-13);
            for c in &p.coefficients()[1..] {
                assert!(c.abs() < 1e-12);
            }
        }
        // g^{11} = y², so ∂_y g^{11} = 2y = 4.
        assert!((inv[0].partial(&[0, 1]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn signature_checks() {
        let g = half_plane();
        g.validate(20, 1).unwrap();
        let mink = MetricField::parse(
            &["t", "x"],
            &[&["-1", "0"], &["0", "1"]],
            vec![1, 1],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        assert!(matches!(
            mink.check_point(&[0.5, 0.5]),
            Err(GeometryError::SignatureMismatch { .. })
        ));
        let singular = MetricField::parse(
            &["x", "y"],
            &[&["1", "1"], &["1", "1"]],
            vec![1, 1],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        assert!(matches!(
            singular.check_point(&[0.5, 0.5]),
            Err(GeometryError::Singular(_))
        ));
        let asym = MetricField::parse(
            &["x", "y"],
            &[&["1", "x"], &["0", "1"]],
            vec![1, 1],
            vec![(0.1, 1.0), (0.0, 1.0)],
        );
        assert!(asym.is_err());
    }

    #[test]
    fn rescaling_hyperbolic_by_ln_y_is_flat() {
        let g = half_plane();
        let u = g.scope().parse("ln(y)").unwrap();
        let flat = g.conformal_rescale(&u);
        let m = flat.metric_matrix(&[0.3, 1.7]).unwrap();
        assert!(
            (m[(0, 0)] - 1.0).abs() < 1e-14 && (m[(1, 1)] - 1.0).abs() < 1e-14 && m[(0, 1)] == 0.0
        );
    }
}
