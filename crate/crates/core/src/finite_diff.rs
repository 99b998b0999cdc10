//! Central finite differences over every parameter coordinate.

use crate::params::ParamBlocks;

/// `(f(θ + ε e_k) − f(θ − ε e_k)) / 2ε` for every coordinate `k`, returned in
/// the layout of `params`.
pub fn central_difference<P, F>(params: &P, eps: f64, f: F) -> P
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    let mut out = params.clone();
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
    for (block, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let orig = probe.blocks()[block].1[k];
            probe.blocks_mut()[block].1[k] = orig + eps;
            let plus = f(&probe);
            probe.blocks_mut()[block].1[k] = orig - eps;
            let minus = f(&probe);
            probe.blocks_mut()[block].1[k] = orig;
            out.blocks_mut()[block].1[k] = (plus - minus) / (2.0 * eps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RealVector;

    #[derive(Clone)]
    struct Pair {
        a: RealVector,
        b: RealVector,
    }
    crate::impl_param_blocks!(Pair { a, b });

    #[test]
    fn quadratic_gradient() {
        let p = Pair { a: RealVector::new(vec![1.0, 2.0]).unwrap(), b: RealVector::new(vec![-3.0]).unwrap() };
        let g = central_difference(&p, 1e-5, |q| q.a[0] * q.a[0] + 3.0 * q.a[1] * q.b[0]);
        assert!((g.a[0] - 2.0).abs() < 1e-8);
        assert!((g.a[1] + 9.0).abs() < 1e-8);
        assert!((g.b[0] - 6.0).abs() < 1e-8);
    }
}
