use super::{Expr, Func, Node};

pub(super) fn differentiate(e: &Expr, var: usize) -> Expr {
    match e.node() {
        Node::Const(_) => Expr::zero(),
        Node::Var(i) => {
            if *i == var {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Neg(a) => differentiate(a, var).neg(),
        Node::Add(a, b) => differentiate(a, var).add(&differentiate(b, var)),
        Node::Sub(a, b) => differentiate(a, var).sub(&differentiate(b, var)),
        Node::Mul(a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            da.mul(b).add(&a.mul(&db))
        }
        Node::Div(a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            if db.is_zero() {
                return da.div(b);
            }
            da.mul(b).sub(&a.mul(&db)).div(&b.powf(2.0))
        }
        Node::Pow(a, p) => {
            let da = differentiate(a, var);
            if da.is_zero() {
                return Expr::zero();
            }
            Expr::constant(*p).mul(&a.powf(p - 1.0)).mul(&da)
        }
        Node::Func(f, a) => {
            let da = differentiate(a, var);
            if da.is_zero() {
                return Expr::zero();
            }
            let outer = match f {
                Func::Exp => e.clone(),
                Func::Ln => return da.div(a),
                Func::Sin => a.cos(),
                Func::Cos => a.sin().neg(),
                Func::Sqrt => return da.div(&Expr::constant(2.0).mul(e)),
                Func::Abs => return da.mul(a).div(e),
            };
            outer.mul(&da)
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::Scope;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn matches_central_differences() {
        let s = Scope::new(["x"]);
        for src in [
            "sin(x)*exp(x)",
            "ln(1 + x^2)",
            "sqrt(2 + cos(x))/x",
            "x^-2.5",
            "abs(x - 3)",
        ] {
            let e = s.parse(src).unwrap();
            let d = e.differentiate(0);
            for x in [0.3, 0.9, 1.7] {
                let fd = central(|t| e.eval(&[t]).unwrap(), x, 1e-5);
                let exact = d.eval(&[x]).unwrap();
                assert!(
                    (fd - exact).abs() < 1e-6 * (1.0 + exact.abs()),
                    "{src} at {x}"
                );
            }
        }
    }

    #[test]
    fn smooth_step_derivative_at_half() {
        let s = Scope::new(["t"]);
        let xi = s.parse("exp(-1/t)/(exp(-1/t) + exp(-1/(1-t)))").unwrap();
        let d = xi.differentiate(0).eval(&[0.5]).unwrap();
        let fd = central(|t| xi.eval(&[t]).unwrap(), 0.5, 1e-6);
        assert!((d - fd).abs() < 1e-8, "{d} vs {fd}");
    }
}
