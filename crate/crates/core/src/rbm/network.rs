//! Embedding a one-hidden-layer tanh network as the conditional mean of an RBM.
//!
//! A hidden unit with a small coupling `u/K` to the target contributes
//! `tanh(u/K) f_{|tanh(u/K)|}(field) ≈ (u/K) tanh(field)`, so `K` copies of it add
//! up to `u tanh(field)` as `K → ∞`.

use super::Rbm;
use crate::error::{Error, Result};
use crate::hypercube::decode_into;

pub const DEFAULT_REPLICATION: usize = 64;

/// An RBM whose target unit approximates a tanh network of the other units.
#[derive(Clone, Debug)]
pub struct NetworkEmbedding {
    pub model: Rbm,
    /// Index of the predicted visible unit (always the last one).
    pub target: usize,
    /// `max_x |conditional_mean − network(x)|` over every input configuration.
    pub sup_deviation: f64,
}

/// Evaluates `tanh(u0 + Σ_j u_j tanh(c_j + ⟨M_j, x⟩))`.
pub fn tanh_network(u0: f64, u: &[f64], c: &[f64], m: &[Vec<f64>], x: &[i8]) -> f64 {
    let inner: f64 = u
        .iter()
        .zip(c)
        .zip(m)
        .map(|((uj, cj), row)| {
            let z = cj + row.iter().zip(x).map(|(w, &s)| w * s as f64).sum::<f64>();
            uj * z.tanh()
        })
        .sum();
    (u0 + inner).tanh()
}

/// Builds the replicated RBM. Inputs are visible units `0..n_in`, the target is `n_in`.
/// The sup-norm deviation is measured exhaustively when `n_in ≤ 20`, else reported as NaN.
pub fn rbm_from_tanh_network(
    u0: f64,
    u: &[f64],
    hidden_biases: &[f64],
    m: &[Vec<f64>],
    k: usize,
) -> Result<NetworkEmbedding> {
    if k == 0 {
        return Err(Error::InvalidParameter("replication count K must be at least 1".into()));
    }
    let t = u.len();
    if hidden_biases.len() != t || m.len() != t {
        return Err(Error::DimensionMismatch {
            what: "network hidden layer",
            expected: t,
            found: hidden_biases.len().min(m.len()),
        });
    }
    let n_in = m.first().map_or(0, Vec::len);
    if let Some(row) = m.iter().find(|r| r.len() != n_in) {
        return Err(Error::DimensionMismatch {
            what: "network weight row",
            expected: n_in,
            found: row.len(),
        });
    }
    let nv = n_in + 1;
    let nh = k * t;
    let mut w = vec![0.0; nv * nh];
    let mut b_hid = vec![0.0; nh];
    for j in 0..t {
        for r in 0..k {
            let col = j * k + r;
            b_hid[col] = hidden_biases[j];
            for (i, &wij) in m[j].iter().enumerate() {
                w[i * nh + col] = wij;
            }
            w[n_in * nh + col] = u[j] / k as f64;
        }
    }
    let mut b_vis = vec![0.0; nv];
    b_vis[n_in] = u0;
    let model = Rbm::new(nv, nh, w, b_vis, b_hid)?;

    let sup_deviation = if n_in <= 20 {
        let mut x = vec![1i8; nv];
        let mut dev: f64 = 0.0;
        for state in 0..1usize << n_in {
            decode_into(state, &mut x[..n_in]);
            let got = model.conditional_mean_full(n_in, &x);
            let want = tanh_network(u0, u, hidden_biases, m, &x[..n_in]);
            dev = dev.max((got - want).abs());
        }
        dev
    } else {
        f64::NAN
    };
    Ok(NetworkEmbedding {
        model,
        target: n_in,
        sup_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_top_weights_give_top_bias() {
        let e = rbm_from_tanh_network(0.4, &[0.0], &[0.0], &[vec![1.0]], 5).unwrap();
        assert!(e.sup_deviation < 1e-15);
        let x = [1i8, 1];
        assert!((e.model.conditional_mean_full(1, &x) - 0.4f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn deviation_shrinks_with_replication() {
        let dev = |k| rbm_from_tanh_network(0.0, &[0.5], &[0.0], &[vec![1.0]], k).unwrap().sup_deviation;
        let (d8, d64) = (dev(8), dev(64));
        assert!(d64 <= d8, "{d64} vs {d8}");
        assert!(d64 < 1e-3);
    }

    #[test]
    fn negating_top_weights_negates_output() {
        let m = vec![vec![0.7, -0.2]];
        let a = rbm_from_tanh_network(0.0, &[0.9], &[0.1], &m, 16).unwrap();
        let b = rbm_from_tanh_network(0.0, &[-0.9], &[0.1], &m, 16).unwrap();
        for x in [[1i8, 1, 1], [1, -1, 1], [-1, -1, 1]] {
            let pa = a.model.conditional_mean_full(2, &x);
            let pb = b.model.conditional_mean_full(2, &x);
            assert!((pa + pb).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_zero_replication() {
        assert!(rbm_from_tanh_network(0.0, &[1.0], &[0.0], &[vec![1.0]], 0).is_err());
    }
}
