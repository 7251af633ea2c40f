//! Alamouti distributed space-time coding at the relays.
//!
//! The Alamouti codeword contains conjugated symbols, so the received
//! `N×T` matrix is not linear in the relay input. Conjugating the second
//! time slot before column-stacking restores a linear model
//! `vec(G·M(s̃)) ↦ G_eq·s̃`. The conjugation pattern travels with the
//! equivalent channel so the same transform is applied to live noise.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{CMatrix, CVector};

/// Alamouti block length and relay antenna count.
pub const ALAMOUTI_DIM: usize = 2;

/// `B×T` space-time codeword (rows: antennas, columns: slots).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix(pub CMatrix);

/// Linear equivalent of "encode, then propagate through `G`".
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel {
    /// `NT×B`.
    pub g_eq: CMatrix,
    /// Entries of the column-stacked reception to conjugate, length `NT`.
    pub conj_mask: Vec<bool>,
}

/// `M = [[s̃₁, −s̃₂*], [s̃₂, s̃₁*]]`.
pub fn alamouti_encode(s_tilde: &[Complex64]) -> Result<CodeMatrix> {
    if s_tilde.len() != ALAMOUTI_DIM {
        return Err(Error::Dimension(format!(
            "Alamouti encodes 2 symbols, got {}",
            s_tilde.len()
        )));
    }
    let (a, b) = (s_tilde[0], s_tilde[1]);
    Ok(CodeMatrix(CMatrix::from_row_slice(
        2,
        2,
        &[a, -b.conj(), b, a.conj()],
    )))
}

/// Builds `G_eq` for an `N×2` relay-to-destination channel.
pub fn build_equivalent_channel(g: &CMatrix) -> Result<EquivalentChannel> {
    if g.ncols() != ALAMOUTI_DIM || g.nrows() == 0 {
        return Err(Error::UnsupportedScheme(format!(
            "Alamouti needs B = T = 2 transmit antennas, channel is {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let n = g.nrows();
    let mut g_eq = CMatrix::zeros(2 * n, 2);
    for i in 0..n {
        let (g0, g1) = (g[(i, 0)], g[(i, 1)]);
        // slot 1: g0 s1 + g1 s2
        g_eq[(i, 0)] = g0;
        g_eq[(i, 1)] = g1;
        // slot 2 conjugated: g1* s1 - g0* s2
        g_eq[(n + i, 0)] = g1.conj();
        g_eq[(n + i, 1)] = -g0.conj();
    }
    let conj_mask = (0..2 * n).map(|idx| idx >= n).collect();
    Ok(EquivalentChannel { g_eq, conj_mask })
}

/// Column-stacks `R` and conjugates the entries flagged by `conj_mask`.
pub fn apply_conjugation(r: &CMatrix, conj_mask: &[bool]) -> Result<CVector> {
    if r.len() != conj_mask.len() {
        return Err(Error::Dimension(format!(
            "received matrix has {} entries, mask has {}",
            r.len(),
            conj_mask.len()
        )));
    }
    // nalgebra storage is column-major, i.e. already vec(R)
    Ok(CVector::from_iterator(
        r.len(),
        r.iter()
            .zip(conj_mask)
            .map(|(z, &c)| if c { z.conj() } else { *z }),
    ))
}

/// Same transform applied to an already stacked vector.
pub fn conjugate_masked(v: &mut CVector, conj_mask: &[bool]) {
    for (z, &c) in v.iter_mut().zip(conj_mask) {
        if c {
            *z = z.conj();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{complex_gaussian, stream_rng};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix<R: Rng>(rng: &mut R, r: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(r, cols, |_, _| complex_gaussian(rng, 1.0))
    }

    #[test]
    fn encode_examples() {
        let m = alamouti_encode(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(m.0, CMatrix::identity(2, 2));

        let m = alamouti_encode(&[c(0.0, 0.0), c(0.0, 1.0)]).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        assert_eq!(m.0, expected);
        assert!((&m.0 * m.0.adjoint() - CMatrix::identity(2, 2)).norm() < 1e-15);

        assert!(matches!(
            alamouti_encode(&[c(1.0, 0.0)]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn codeword_is_orthogonal() {
        let mut rng = stream_rng(11, &[]);
        for _ in 0..100 {
            let s = [complex_gaussian(&mut rng, 1.0), complex_gaussian(&mut rng, 1.0)];
            let m = alamouti_encode(&s).unwrap().0;
            let e = s[0].norm_sqr() + s[1].norm_sqr();
            assert!((&m * m.adjoint() - CMatrix::identity(2, 2) * c(e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn equivalent_channel_examples() {
        let eq = build_equivalent_channel(&CMatrix::identity(2, 2)).unwrap();
        let gram = eq.g_eq.adjoint() * &eq.g_eq;
        assert!((gram - CMatrix::identity(2, 2) * c(2.0, 0.0)).norm() < 1e-15);

        let eq = build_equivalent_channel(&CMatrix::zeros(2, 2)).unwrap();
        assert_eq!(eq.g_eq, CMatrix::zeros(4, 2));

        assert!(matches!(
            build_equivalent_channel(&CMatrix::zeros(2, 3)),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn linearization_is_exact() {
        let mut rng = stream_rng(12, &[]);
        for trial in 0..1000 {
            let n = 1 + trial % 4;
            let g = random_matrix(&mut rng, n, 2);
            let s = [complex_gaussian(&mut rng, 1.0), complex_gaussian(&mut rng, 1.0)];
            let eq = build_equivalent_channel(&g).unwrap();
            let physical = &g * alamouti_encode(&s).unwrap().0;
            let lin = apply_conjugation(&physical, &eq.conj_mask).unwrap();
            let model = &eq.g_eq * CVector::from_column_slice(&s);
            assert!((lin - model).camax() < 1e-12);
            let gram = eq.g_eq.adjoint() * &eq.g_eq;
            let fro = g.norm_squared();
            assert!((gram - CMatrix::identity(2, 2) * c(fro, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugation_examples() {
        let r = CMatrix::from_row_slice(1, 2, &[c(1.0, 2.0), c(3.0, 4.0)]);
        let plain = apply_conjugation(&r, &[false, false]).unwrap();
        assert_eq!(plain.as_slice(), &[c(1.0, 2.0), c(3.0, 4.0)]);

        let eq = build_equivalent_channel(&CMatrix::identity(1, 1).insert_column(1, c(0.0, 0.0))).unwrap();
        let v = apply_conjugation(&r, &eq.conj_mask).unwrap();
        assert_eq!(v.as_slice(), &[c(1.0, 2.0), c(3.0, -4.0)]);

        let mut twice = v.clone();
        conjugate_masked(&mut twice, &eq.conj_mask);
        assert_eq!(twice.as_slice(), plain.as_slice());

        assert!(apply_conjugation(&r, &[true]).is_err());
    }

    #[test]
    fn conjugation_preserves_white_noise_statistics() {
        // covariance and pseudo-covariance of conj-masked circular noise
        let mut rng = stream_rng(13, &[]);
        let eq = build_equivalent_channel(&CMatrix::identity(2, 2)).unwrap();
        let draws = 20_000;
        let var = 1.5;
        let mut cov = CMatrix::zeros(4, 4);
        let mut pseudo = CMatrix::zeros(4, 4);
        for _ in 0..draws {
            let r = CMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, var));
            let v = apply_conjugation(&r, &eq.conj_mask).unwrap();
            cov += &v * v.adjoint();
            pseudo += &v * v.transpose();
        }
        cov /= c(draws as f64, 0.0);
        pseudo /= c(draws as f64, 0.0);
        // per-component standard error is at most var/√draws; 4σ over 64 checks
        let se = var / (draws as f64).sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { var } else { 0.0 };
                let d = cov[(i, j)] - c(target, 0.0);
                assert!(d.re.abs() < 4.0 * se && d.im.abs() < 4.0 * se, "cov {i}{j}");
                let p = pseudo[(i, j)];
                assert!(p.re.abs() < 4.0 * se && p.im.abs() < 4.0 * se, "pseudo {i}{j}");
            }
        }
    }
}
