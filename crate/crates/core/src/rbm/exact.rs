//! Brute-force oracles over the joint `(x, h)` or visible hypercube.

use super::{ln_2cosh, Rbm};
use crate::error::Result;
use crate::hypercube::{check_cap, decode_into, fourier_coefficients, Pmf, ENUMERATION_CAP};
use crate::poly::{SparsePolynomial, Subset};

/// Largest hidden layer the conditional-mean oracle will enumerate.
pub const ORACLE_HIDDEN_CAP: usize = 20;

/// `E[X_i | X_{~i} = x_rest]` by summing the unnormalized joint law over
/// `X_i ∈ {±1}` and every hidden configuration.
pub fn conditional_mean_oracle(model: &Rbm, i: usize, x_rest: &[i8]) -> Result<f64> {
    check_cap(model.n_hidden(), ORACLE_HIDDEN_CAP)?;
    let mut x = model.expand_rest(i, x_rest)?;
    let nh = model.n_hidden();
    let mut h = vec![0i8; nh];
    let mut energies = [Vec::with_capacity(1 << nh), Vec::with_capacity(1 << nh)];
    for (slot, xi) in [(0usize, 1i8), (1, -1)] {
        x[i] = xi;
        let visible: f64 = x.iter().zip(model.b_vis()).map(|(&s, b)| s as f64 * b).sum();
        for state in 0..1usize << nh {
            decode_into(state, &mut h);
            let mut e = visible;
            for (j, &hj) in h.iter().enumerate() {
                let field = model.hidden_field(j, &x);
                e += hj as f64 * field;
            }
            energies[slot].push(e);
        }
    }
    let max = energies
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let plus: f64 = energies[0].iter().map(|e| (e - max).exp()).sum();
    let minus: f64 = energies[1].iter().map(|e| (e - max).exp()).sum();
    Ok((plus - minus) / (plus + minus))
}

/// Unnormalized log marginal of every visible state, hidden units summed out:
/// `⟨b_vis, x⟩ + Σ_j ln 2cosh(b_hid_j + Σ_i W_ij x_i)`.
pub(crate) fn visible_log_weights(model: &Rbm) -> Vec<f64> {
    let nv = model.n_visible();
    let mut x = vec![0i8; nv];
    (0..1usize << nv)
        .map(|state| {
            decode_into(state, &mut x);
            let mut lw: f64 = x.iter().zip(model.b_vis()).map(|(&s, b)| s as f64 * b).sum();
            for j in 0..model.n_hidden() {
                lw += ln_2cosh(model.hidden_field(j, &x));
            }
            lw
        })
        .collect()
}

/// Exact visible marginal of a model with `n_visible + n_hidden` within the enumeration cap.
pub fn exact_visible_pmf(model: &Rbm) -> Result<Pmf> {
    check_cap(model.n_visible() + model.n_hidden(), ENUMERATION_CAP)?;
    Ok(Pmf::from_log_weights(model.n_visible(), &visible_log_weights(model)))
}

impl Rbm {
    /// Multilinear expansion of the visible log-marginal with the constant term dropped
    /// and coefficients of magnitude ≤ `tol` removed.
    pub fn visible_potential(&self, tol: f64) -> Result<SparsePolynomial> {
        check_cap(self.n_visible() + self.n_hidden(), ENUMERATION_CAP)?;
        let coeffs = fourier_coefficients(&visible_log_weights(self));
        let mut p = SparsePolynomial::new(self.n_visible());
        for (mask, c) in coeffs.into_iter().enumerate() {
            if mask != 0 && c.abs() > tol {
                p.set(Subset::new(crate::hypercube::mask_members(mask).collect()), c);
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::conditional_mean;

    #[test]
    fn oracle_matches_network_on_reference_model() {
        let m = Rbm::new(2, 1, vec![0.8, 0.6], vec![0.0, 0.0], vec![0.0]).unwrap();
        let a = conditional_mean(&m, 0, &[1]).unwrap();
        let b = conditional_mean_oracle(&m, 0, &[1]).unwrap();
        assert!((a - b).abs() < 1e-10);
        // Ising coupling of one shared hidden unit: atanh(tanh 0.8 tanh 0.6)
        let j = (0.8f64.tanh() * 0.6f64.tanh()).atanh();
        assert!((a - j.tanh()).abs() < 1e-12);
    }

    #[test]
    fn disconnected_hidden_unit_gives_zero() {
        let m = Rbm::new(2, 1, vec![0.5, 0.0], vec![0.0, 0.0], vec![0.0]).unwrap();
        assert!(conditional_mean_oracle(&m, 0, &[1]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = exact_visible_pmf(&Rbm::zeros(3, 2)).unwrap();
        assert!(p.probs().iter().all(|&q| (q - 0.125).abs() < 1e-15));
    }

    #[test]
    fn cap_is_enforced() {
        assert!(exact_visible_pmf(&Rbm::zeros(20, 5)).is_err());
        assert!(conditional_mean_oracle(&Rbm::zeros(2, 21), 0, &[1]).is_err());
    }

    #[test]
    fn potential_of_single_shared_unit() {
        let m = Rbm::new(2, 1, vec![0.7, -0.4], vec![0.2, 0.0], vec![0.0]).unwrap();
        let p = m.visible_potential(1e-12).unwrap();
        let j = (0.7f64.tanh() * (-0.4f64).tanh()).atanh();
        assert!((p.get(&Subset::new(vec![0, 1])) - j).abs() < 1e-12);
        assert!((p.get(&Subset::singleton(0)) - 0.2).abs() < 1e-12);
        assert_eq!(p.get(&Subset::singleton(1)), 0.0);
    }
}
