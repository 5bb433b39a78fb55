//! Pauli-basis encoding of Hermitian matrices.
//!
//! A 2^n x 2^n Hermitian matrix expands uniquely over the 4^n tensor products
//! of {I, X, Y, Z} with real coefficients coeff(P) = tr(P H) / 2^n. The
//! resulting weighted term list converts into the probability distribution
//! that drives the linear-combination-of-unitaries program: each coefficient's
//! sign is absorbed into its controlled unitary, leaving nonnegative weights
//! that sum to one.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qsim::{Pauli, PauliString};

/// One weighted term of a decomposition.
#[derive(Debug, Clone)]
pub struct PauliTerm {
    pub string: PauliString,
    pub coeff: f64,
}

/// Weighted Pauli-string expansion of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct PauliDecomposition {
    /// System qubit count (matrix dimension 2^n).
    pub num_qubits: usize,
    /// Retained terms, every |coeff| >= tolerance.
    pub terms: Vec<PauliTerm>,
    /// Drop threshold that was applied.
    pub tolerance: f64,
    /// Nonzero term count before the drop threshold was applied.
    pub raw_term_count: usize,
}

/// LCU probability distribution derived from a decomposition.
#[derive(Debug, Clone)]
pub struct LcuDistribution {
    /// Ancilla qubit count; the distribution is zero-padded to 2^m entries.
    pub num_ancillas: usize,
    /// Probabilities alpha_l >= 0, summing to exactly 1.
    pub alpha: Vec<f64>,
    /// Unit phase (here +-1) absorbed into each controlled unitary; padded
    /// entries carry +1.
    pub phases: Vec<f64>,
    /// Sum of |coeff| over terms; undoes the normalization of H's action.
    pub scale: f64,
}

/// Enumerate the i-th of 4^n Pauli strings in base-4 digit order
/// (digit q selects the axis on qubit q).
fn string_from_index(mut i: usize, n: usize) -> PauliString {
    let mut axes = Vec::with_capacity(n);
    for _ in 0..n {
        axes.push(match i & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        });
        i >>= 2;
    }
    PauliString::new(axes)
}

fn check_hermitian(h: &DMatrix<Complex64>) -> Result<usize> {
    if h.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, need square",
            h.nrows(),
            h.ncols()
        )));
    }
    let dim = h.nrows();
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "dimension {dim} is not a positive power of two"
        )));
    }
    let mut asym = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            let d = (h[(r, c)] - h[(c, r)].conj()).norm();
            if d > asym {
                asym = d;
            }
        }
    }
    if asym > 1e-9 {
        return Err(Error::NotHermitian(asym));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Expand a Hermitian matrix over the Pauli basis, dropping terms with
/// |coeff| < tolerance. Cost is O(8^n) by direct trace evaluation.
pub fn decompose(h: &DMatrix<Complex64>, tolerance: f64) -> Result<PauliDecomposition> {
    let n = check_hermitian(h)?;
    let dim = h.nrows();
    let mut terms = Vec::new();
    let mut raw = 0usize;
    for i in 0..(1usize << (2 * n)) {
        let p = string_from_index(i, n);
        let flip = p.flip_mask();
        // tr(P H) = sum_k P[k^flip, k] * H[k, k^flip]
        let mut tr = Complex64::new(0.0, 0.0);
        for k in 0..dim {
            tr += p.phase_from_source(k) * h[(k, k ^ flip)];
        }
        let coeff = tr.re / dim as f64;
        if coeff != 0.0 {
            raw += 1;
            if coeff.abs() >= tolerance {
                terms.push(PauliTerm { string: p, coeff });
            }
        }
    }
    Ok(PauliDecomposition {
        num_qubits: n,
        terms,
        tolerance,
        raw_term_count: raw,
    })
}

/// Decompose a real symmetric matrix (the usual case for KKT systems).
pub fn decompose_real(h: &DMatrix<f64>, tolerance: f64) -> Result<PauliDecomposition> {
    let hc = h.map(|x| Complex64::new(x, 0.0));
    decompose(&hc, tolerance)
}

/// Default drop threshold: removes numerically-zero strings relative to the
/// largest matrix entry.
pub fn default_tolerance(h: &DMatrix<f64>) -> f64 {
    1e-10 * h.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Dense matrix Sum coeff * Operator(string).
pub fn reconstruct(d: &PauliDecomposition) -> DMatrix<Complex64> {
    let dim = 1usize << d.num_qubits;
    let mut out = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for term in &d.terms {
        let flip = term.string.flip_mask();
        for k in 0..dim {
            out[(k ^ flip, k)] += term.coeff * term.string.phase_from_source(k);
        }
    }
    out
}

/// Embed a square system in the leading block of the next power-of-two
/// dimension: ones on the padded diagonal, zeros elsewhere, rhs zero-extended.
/// Padded solution components are exactly zero, so truncation recovers the
/// original solution.
pub fn pad_to_power_of_two(
    m: &DMatrix<f64>,
    rhs: &nalgebra::DVector<f64>,
) -> Result<(DMatrix<f64>, nalgebra::DVector<f64>, usize)> {
    let dim = m.nrows();
    if m.ncols() != dim {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, need square",
            m.nrows(),
            m.ncols()
        )));
    }
    if rhs.len() != dim {
        return Err(Error::Dimension(format!(
            "rhs length {} != matrix dimension {dim}",
            rhs.len()
        )));
    }
    if dim == 0 {
        return Err(Error::Dimension("empty system".into()));
    }
    let padded = dim.next_power_of_two();
    if padded == dim {
        return Ok((m.clone(), rhs.clone(), dim));
    }
    let mut mp = DMatrix::zeros(padded, padded);
    mp.view_mut((0, 0), (dim, dim)).copy_from(m);
    for k in dim..padded {
        mp[(k, k)] = 1.0;
    }
    let mut rp = nalgebra::DVector::zeros(padded);
    rp.rows_mut(0, dim).copy_from(rhs);
    Ok((mp, rp, dim))
}

/// Convert term weights into the LCU distribution with absorbed signs.
pub fn to_lcu_distribution(d: &PauliDecomposition) -> Result<LcuDistribution> {
    if d.terms.is_empty() {
        return Err(Error::Domain(
            "cannot form an LCU distribution from an empty decomposition".into(),
        ));
    }
    let scale: f64 = d.terms.iter().map(|t| t.coeff.abs()).sum();
    if scale == 0.0 {
        return Err(Error::Domain("all coefficients are zero".into()));
    }
    let count = d.terms.len();
    let m = usize::max(1, count.next_power_of_two().trailing_zeros() as usize);
    let padded = 1usize << m;
    let mut alpha = vec![0.0f64; padded];
    let mut phases = vec![1.0f64; padded];
    for (l, term) in d.terms.iter().enumerate() {
        alpha[l] = term.coeff.abs() / scale;
        phases[l] = term.coeff.signum();
    }
    // The last real entry absorbs rounding so a natural-order sum is exactly
    // one; any residual ulp gets folded into the largest entry, which stays
    // positive.
    let head: f64 = alpha[..count - 1].iter().sum();
    alpha[count - 1] = (1.0 - head).max(0.0);
    let largest = (0..count)
        .max_by(|&a, &b| alpha[a].partial_cmp(&alpha[b]).unwrap())
        .unwrap();
    for _ in 0..16 {
        let sum: f64 = alpha.iter().sum();
        if sum == 1.0 {
            break;
        }
        alpha[largest] -= sum - 1.0;
    }
    Ok(LcuDistribution {
        num_ancillas: m,
        alpha,
        phases,
        scale,
    })
}

/// Render the expansion in textual form, sorted by |coeff| descending:
/// `2.6953 · I − 1.3333 · X − 0.2509 · Z`.
pub fn format_expansion(d: &PauliDecomposition) -> String {
    let mut terms: Vec<&PauliTerm> = d.terms.iter().collect();
    terms.sort_by(|a, b| {
        b.coeff
            .abs()
            .partial_cmp(&a.coeff.abs())
            .unwrap()
            .then_with(|| a.string.to_string().cmp(&b.string.to_string()))
    });
    let mut out = String::new();
    for (i, t) in terms.iter().enumerate() {
        if i == 0 {
            if t.coeff < 0.0 {
                out.push_str("\u{2212}");
            }
        } else if t.coeff < 0.0 {
            out.push_str(" \u{2212} ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&format!("{:.4} \u{00b7} {}", t.coeff.abs(), t.string));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        let dim = 1usize << n;
        let a = DMatrix::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    fn random_symmetric(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn identity_decomposes_to_single_term() {
        let h = DMatrix::<f64>::identity(2, 2);
        let d = decompose_real(&h, 1e-12).unwrap();
        assert_eq!(d.terms.len(), 1);
        assert_eq!(d.terms[0].string.to_string(), "I");
        assert!((d.terms[0].coeff - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_flow_2x2_coefficients() {
        // Decomposing [[2.4444, -1.3333], [-1.3333, 2.9462]] must give
        // I: 2.6953, X: -1.3333, Z: -0.2509 and nothing else.
        let h = DMatrix::from_row_slice(2, 2, &[2.4444, -1.3333, -1.3333, 2.9462]);
        let d = decompose_real(&h, default_tolerance(&h)).unwrap();
        assert_eq!(d.terms.len(), 3);
        let mut by_string = std::collections::BTreeMap::new();
        for t in &d.terms {
            by_string.insert(t.string.to_string(), t.coeff);
        }
        assert!((by_string["I"] - 2.6953).abs() < 1e-4);
        assert!((by_string["X"] + 1.3333).abs() < 1e-4);
        assert!((by_string["Z"] + 0.2509).abs() < 1e-4);
    }

    #[test]
    fn round_trip_real_symmetric_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_symmetric(16, &mut rng);
        let d = decompose_real(&h, 0.0).unwrap();
        let r = reconstruct(&d);
        let mut err = 0.0f64;
        for i in 0..16 {
            for j in 0..16 {
                err += (r[(i, j)] - Complex64::new(h[(i, j)], 0.0)).norm_sqr();
            }
        }
        assert!(err.sqrt() < 1e-10, "frobenius error {}", err.sqrt());
    }

    #[test]
    fn round_trip_complex_hermitian_up_to_five_qubits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=5usize {
            let h = random_hermitian(n, &mut rng);
            let d = decompose(&h, 0.0).unwrap();
            let r = reconstruct(&d);
            let err: f64 = (&r - &h).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-10, "n={n} frobenius error {err}");
        }
    }

    #[test]
    fn reconstruct_basics() {
        let d = PauliDecomposition {
            num_qubits: 1,
            terms: vec![PauliTerm {
                string: PauliString::parse("I").unwrap(),
                coeff: 1.0,
            }],
            tolerance: 0.0,
            raw_term_count: 1,
        };
        let r = reconstruct(&d);
        assert_eq!(r.nrows(), 2);
        assert!((r[(0, 0)].re - 1.0).abs() < 1e-15 && (r[(1, 1)].re - 1.0).abs() < 1e-15);

        let d = PauliDecomposition {
            num_qubits: 2,
            terms: vec![PauliTerm {
                string: PauliString::parse("ZZ").unwrap(),
                coeff: 1.0,
            }],
            tolerance: 0.0,
            raw_term_count: 1,
        };
        let r = reconstruct(&d);
        let diag: Vec<f64> = (0..4).map(|k| r[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn rejects_non_hermitian_and_bad_dims() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(
            decompose_real(&h, 0.0),
            Err(Error::NotHermitian(_))
        ));
        let h = DMatrix::<f64>::identity(3, 3);
        assert!(decompose_real(&h, 0.0).is_err());
    }

    #[test]
    fn diagonal_matrices_use_only_i_and_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let diag: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let h = DMatrix::from_diagonal(&DVector::from_vec(diag));
        let d = decompose_real(&h, 1e-12).unwrap();
        for t in &d.terms {
            for a in t.string.axes() {
                assert!(matches!(a, Pauli::I | Pauli::Z));
            }
        }
    }

    #[test]
    fn pad_3x3_to_4x4() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (mp, rp, d0) = pad_to_power_of_two(&m, &rhs).unwrap();
        assert_eq!(d0, 3);
        assert_eq!(mp.nrows(), 4);
        assert_eq!(mp[(3, 3)], 1.0);
        assert_eq!(mp[(3, 0)], 0.0);
        assert_eq!(mp[(0, 3)], 0.0);
        assert_eq!(rp[3], 0.0);
    }

    #[test]
    fn pad_is_identity_on_power_of_two() {
        let m = DMatrix::<f64>::identity(4, 4);
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let (mp, rp, d0) = pad_to_power_of_two(&m, &rhs).unwrap();
        assert_eq!(d0, 4);
        assert_eq!(mp, m);
        assert_eq!(rp, rhs);
    }

    #[test]
    fn padded_solve_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = random_symmetric(5, &mut rng);
        for k in 0..5 {
            m[(k, k)] += 3.0; // keep well-conditioned
        }
        let rhs = DVector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
        let direct = m.clone().lu().solve(&rhs).unwrap();
        let (mp, rp, d0) = pad_to_power_of_two(&m, &rhs).unwrap();
        let padded = mp.lu().solve(&rp).unwrap();
        for k in 0..d0 {
            assert!((padded[k] - direct[k]).abs() < 1e-9);
        }
        for k in d0..8 {
            assert!(padded[k].abs() < 1e-12);
        }
    }

    #[test]
    fn lcu_distribution_small_example() {
        // terms {I: 3, X: -1} -> alpha (0.75, 0.25), phases (+1, -1), m=1, scale=4
        let d = PauliDecomposition {
            num_qubits: 1,
            terms: vec![
                PauliTerm {
                    string: PauliString::parse("I").unwrap(),
                    coeff: 3.0,
                },
                PauliTerm {
                    string: PauliString::parse("X").unwrap(),
                    coeff: -1.0,
                },
            ],
            tolerance: 0.0,
            raw_term_count: 2,
        };
        let lcu = to_lcu_distribution(&d).unwrap();
        assert_eq!(lcu.num_ancillas, 1);
        assert_eq!(lcu.alpha, vec![0.75, 0.25]);
        assert_eq!(lcu.phases, vec![1.0, -1.0]);
        assert_eq!(lcu.scale, 4.0);
    }

    #[test]
    fn lcu_distribution_power_flow_coefficients() {
        let h = DMatrix::from_row_slice(2, 2, &[2.4444, -1.3333, -1.3333, 2.9462]);
        let d = decompose_real(&h, default_tolerance(&h)).unwrap();
        let lcu = to_lcu_distribution(&d).unwrap();
        assert_eq!(lcu.num_ancillas, 2);
        assert!((lcu.scale - 4.2795).abs() < 1e-4);
        let mut sorted = lcu.alpha.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sorted[0] - 0.6298).abs() < 1e-3);
        assert!((sorted[1] - 0.3115).abs() < 1e-3);
        assert!((sorted[2] - 0.0586).abs() < 1e-3);
        assert_eq!(sorted[3], 0.0);
        let sum: f64 = lcu.alpha.iter().sum();
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn lcu_single_term() {
        let d = PauliDecomposition {
            num_qubits: 1,
            terms: vec![PauliTerm {
                string: PauliString::parse("Z").unwrap(),
                coeff: 5.0,
            }],
            tolerance: 0.0,
            raw_term_count: 1,
        };
        let lcu = to_lcu_distribution(&d).unwrap();
        assert_eq!(lcu.num_ancillas, 1);
        assert_eq!(lcu.alpha, vec![1.0, 0.0]);
        assert_eq!(lcu.scale, 5.0);
    }

    #[test]
    fn lcu_sum_is_exactly_one_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let h = random_symmetric(8, &mut rng);
            let d = decompose_real(&h, 1e-9).unwrap();
            let lcu = to_lcu_distribution(&d).unwrap();
            assert!(lcu.alpha.iter().all(|&a| a >= 0.0));
            let sum: f64 = lcu.alpha.iter().sum();
            assert_eq!(sum, 1.0);
        }
    }

    #[test]
    fn scaled_phase_weighted_terms_reconstruct_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = random_symmetric(8, &mut rng);
        let d = decompose_real(&h, 0.0).unwrap();
        let lcu = to_lcu_distribution(&d).unwrap();
        // scale * sum_l alpha_l phase_l Operator(string_l) == H
        let dim = 8;
        let mut acc = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
        for (l, term) in d.terms.iter().enumerate() {
            let flip = term.string.flip_mask();
            let w = lcu.scale * lcu.alpha[l] * lcu.phases[l];
            for k in 0..dim {
                acc[(k ^ flip, k)] += w * term.string.phase_from_source(k);
            }
        }
        let err: f64 = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .map(|(i, j)| (acc[(i, j)] - Complex64::new(h[(i, j)], 0.0)).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "frobenius error {err}");
    }

    #[test]
    fn term_count_bounded_by_4_pow_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let h = random_symmetric(16, &mut rng);
        let d = decompose_real(&h, 0.0).unwrap();
        assert!(d.terms.len() <= 256);
    }

    #[test]
    fn expansion_formatting() {
        let h = DMatrix::from_row_slice(2, 2, &[2.4444, -1.3333, -1.3333, 2.9462]);
        let d = decompose_real(&h, default_tolerance(&h)).unwrap();
        let text = format_expansion(&d);
        assert_eq!(text, "2.6953 \u{00b7} I \u{2212} 1.3333 \u{00b7} X \u{2212} 0.2509 \u{00b7} Z");
    }
}
