//! Exact finite-n moments of the matching objective under the bit-flip
//! model, pattern counts, the block-model expected trace, and the COSIE
//! misalignment check.
//!
//! Throughout, `p` is a candidate matching and `p_star` the true alignment
//! (both map observed vertices to reference vertices). They enter only
//! through the pair map `σ = p_star ∘ p⁻¹`, for which
//! `tr(S · M A Mᵀ) = Σ_{h,l} S[h][l] · A[σ(h)][σ(l)]` with `M` the matrix of
//! `p ∘ p_star⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, GraphError, MatrixLike, Permutation};
use crate::numeric::{compensated_sum, next_permutation, CompensatedSum};
use crate::rng::RngSeed;

/// Exhaustive search over `Π_d` is limited to this order.
pub const LEMMA_MAX_DIM: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("binary graphs required")]
    RequiresBinary,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
    #[error("cannot certify: ε = {epsilon} is not below 1/2")]
    Uncertifiable { epsilon: f64 },
    #[error("dimension {d} exceeds the exhaustive limit {max}")]
    TooLarge { d: usize, max: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `σ = p_star ∘ p⁻¹`.
pub fn pair_map(p: &Permutation, p_star: &Permutation) -> Permutation {
    p_star.compose(&p.inverse())
}

fn same_order(a: usize, b: usize) -> Result<(), TheoryError> {
    if a != b {
        return Err(TheoryError::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<(), TheoryError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TheoryError::InvalidArgument(format!("{name} = {p} is outside [0, 1]")));
    }
    Ok(())
}

fn overlap_sigma(bi: &DMatrix<f64>, bj: &DMatrix<f64>, sigma: &Permutation) -> f64 {
    let n = bi.nrows();
    let s = sigma.as_slice();
    let mut acc = CompensatedSum::default();
    for l in 0..n {
        for h in 0..n {
            let w = bi[(h, l)];
            if w != 0.0 {
                acc.add(w * (bj[(s[h], s[l])] - bj[(h, l)]));
            }
        }
    }
    acc.value()
}

/// `h(Bi, Bj, P) = tr(Bi · M Bj Mᵀ) − tr(Bi Bj)` with `M` the matrix of
/// `p ∘ p_star⁻¹`.
pub fn h_overlap<A, B>(
    bi: &A,
    bj: &B,
    p: &Permutation,
    p_star: &Permutation,
) -> Result<f64, TheoryError>
where
    A: MatrixLike + ?Sized,
    B: MatrixLike + ?Sized,
{
    let (bi, bj) = (bi.matrix(), bj.matrix());
    same_order(bi.nrows(), bj.nrows())?;
    same_order(bi.nrows(), p.len())?;
    same_order(p.len(), p_star.len())?;
    Ok(overlap_sigma(bi, bj, &pair_map(p, p_star)))
}

/// Conditional mean of `f(P) − f(P*)` given the backgrounds, where class
/// `c` contributes `counts[c]` graphs flipped at rate `flips[c]` and the
/// observed graph is a flip of `backgrounds[0]` at rate `p_target`.
pub fn expected_gap(
    backgrounds: &[Graph],
    counts: &[usize],
    flips: &[f64],
    p_target: f64,
    p: &Permutation,
    p_star: &Permutation,
) -> Result<f64, TheoryError> {
    same_order(p.len(), p_star.len())?;
    expected_gap_sigma(backgrounds, counts, flips, p_target, &pair_map(p, p_star))
}

/// [`expected_gap`] with the pair map given directly.
pub fn expected_gap_sigma(
    backgrounds: &[Graph],
    counts: &[usize],
    flips: &[f64],
    p_target: f64,
    sigma: &Permutation,
) -> Result<f64, TheoryError> {
    let first = backgrounds
        .first()
        .ok_or_else(|| TheoryError::InvalidArgument("no backgrounds".into()))?;
    same_order(backgrounds.len(), counts.len())?;
    same_order(backgrounds.len(), flips.len())?;
    check_probability("p_target", p_target)?;
    let n = first.n();
    same_order(n, sigma.len())?;
    let mut acc = CompensatedSum::default();
    for ((b, &m), &f) in backgrounds.iter().zip(counts).zip(flips) {
        same_order(n, b.n())?;
        check_probability("flip", f)?;
        // m·h is formed before scaling so that its sign is exact for binary
        // backgrounds.
        let mh = m as f64 * overlap_sigma(b.weights(), first.weights(), sigma);
        acc.add((1.0 - 2.0 * p_target) * (1.0 - 2.0 * f) * mh);
    }
    Ok(acc.value())
}

/// The sixteen pattern counts `N_x` over unordered vertex pairs `{h, l}`,
/// with `x = (B1[σh,σl], B1[h,l], B2[σh,σl], B2[h,l])`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PatternCounts {
    counts: [u64; 16],
}

impl PatternCounts {
    fn index(x: [u8; 4]) -> usize {
        ((x[0] << 3) | (x[1] << 2) | (x[2] << 1) | x[3]) as usize
    }

    /// Count for a pattern written as four bits, e.g. `"0110"`.
    pub fn get(&self, pattern: &str) -> u64 {
        let bits: Vec<u8> = pattern
            .bytes()
            .map(|b| match b {
                b'0' => 0,
                b'1' => 1,
                _ => panic!("pattern must be four binary digits, got {pattern:?}"),
            })
            .collect();
        assert_eq!(bits.len(), 4, "pattern must be four binary digits, got {pattern:?}");
        self.counts[Self::index([bits[0], bits[1], bits[2], bits[3]])]
    }

    pub fn as_array(&self) -> &[u64; 16] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn sum(&self, patterns: &[&str]) -> i64 {
        patterns.iter().map(|p| self.get(p) as i64).sum()
    }

    /// Both parity identities: moving the first background's edges out of
    /// and into place balances, and likewise for the second background.
    pub fn parity_holds(&self) -> bool {
        self.sum(&["0110", "0111", "0100", "0101"]) == self.sum(&["1010", "1011", "1000", "1001"])
            && self.sum(&["0001", "1101", "1001", "0101"])
                == self.sum(&["0010", "1110", "1010", "0110"])
    }

    /// Half of `h(B1, B1, ·)`: minus the first background's edges moved onto
    /// non-edges.
    pub fn self_overlap_half(&self) -> i64 {
        -self.sum(&["0100", "0101", "0110", "0111"])
    }

    /// Half of `h(B2, B1, ·)`.
    pub fn cross_overlap_half(&self) -> i64 {
        self.sum(&["1001", "1011"]) - self.sum(&["0101", "0111"])
    }

    /// With equal flip rates (not 1/2), the mean gap is positive exactly
    /// when this holds.
    pub fn gap_positive(&self, m1: u64, m2: u64) -> bool {
        (m2 as i64) * self.cross_overlap_half() > -(m1 as i64) * self.self_overlap_half()
    }

    /// The inequality `m2(N0110+N1110−N0101−N1101) > m1(N0110+N0111+N0100+N0101)`.
    /// Its left side is half of `h(B1, B2, ·)`, which equals half of
    /// `h(B2, B1, ·)` only when `σ` is an involution.
    pub fn involution_form(&self, m1: u64, m2: u64) -> bool {
        (m2 as i64) * (self.sum(&["0110", "1110"]) - self.sum(&["0101", "1101"]))
            > (m1 as i64) * self.sum(&["0110", "0111", "0100", "0101"])
    }
}

fn binary_bit(g: &Graph, i: usize, j: usize) -> u8 {
    (g.get(i, j) != 0.0) as u8
}

pub fn pattern_counts(
    b1: &Graph,
    b2: &Graph,
    sigma: &Permutation,
) -> Result<PatternCounts, TheoryError> {
    if !b1.is_binary() || !b2.is_binary() {
        return Err(TheoryError::RequiresBinary);
    }
    same_order(b1.n(), b2.n())?;
    same_order(b1.n(), sigma.len())?;
    let n = b1.n();
    let s = sigma.as_slice();
    let mut counts = [0u64; 16];
    for h in 0..n {
        for l in (h + 1)..n {
            let x = [
                binary_bit(b1, s[h], s[l]),
                binary_bit(b1, h, l),
                binary_bit(b2, s[h], s[l]),
                binary_bit(b2, h, l),
            ];
            counts[PatternCounts::index(x)] += 1;
        }
    }
    Ok(PatternCounts { counts })
}

/// Mean and variance of `f(P) − f(P*)` for two classes with a common flip
/// rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapMoments {
    pub mean: f64,
    /// Variance of the full ordered-pair objective difference, `4 (v1 + c2)`.
    pub variance: f64,
    /// Sum of per-pair variances over unordered moved pairs.
    pub v1: f64,
    /// Covariance between each moved pair and its image.
    pub c2: f64,
    /// Vertices moved by `σ`.
    pub k_shuffled: usize,
}

/// Unordered pairs moved by `σ`, with the index of each pair's image.
struct MovedPairs {
    pairs: Vec<(usize, usize)>,
    image: Vec<usize>,
}

impl MovedPairs {
    fn new(sigma: &Permutation) -> Self {
        let n = sigma.len();
        let s = sigma.as_slice();
        let canon = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
        let mut pairs = Vec::new();
        let mut slot = vec![usize::MAX; n * n];
        for h in 0..n {
            for l in (h + 1)..n {
                if canon(s[h], s[l]) != (h, l) {
                    slot[h * n + l] = pairs.len();
                    pairs.push((h, l));
                }
            }
        }
        let image = pairs
            .iter()
            .map(|&(h, l)| {
                let (a, b) = canon(s[h], s[l]);
                slot[a * n + b]
            })
            .collect();
        Self { pairs, image }
    }
}

struct TwoClass<'a> {
    b1: &'a Graph,
    b2: &'a Graph,
    m1: u64,
    m2: u64,
    p: f64,
}

impl TwoClass<'_> {
    fn check(&self, sigma: &Permutation) -> Result<(), TheoryError> {
        if !self.b1.is_binary() || !self.b2.is_binary() {
            return Err(TheoryError::RequiresBinary);
        }
        same_order(self.b1.n(), self.b2.n())?;
        same_order(self.b1.n(), sigma.len())?;
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(TheoryError::Degenerate(format!(
                "flip rate {} must lie strictly between 0 and 1",
                self.p
            )));
        }
        Ok(())
    }

    fn edge_mean(&self, b: f64) -> f64 {
        (1.0 - 2.0 * self.p) * b + self.p
    }

    fn alpha_mean(&self, h: usize, l: usize) -> f64 {
        self.m1 as f64 * self.edge_mean(self.b1.get(h, l))
            + self.m2 as f64 * self.edge_mean(self.b2.get(h, l))
    }
}

pub fn exact_gap_variance(
    b1: &Graph,
    b2: &Graph,
    m1: usize,
    m2: usize,
    p: f64,
    sigma: &Permutation,
) -> Result<GapMoments, TheoryError> {
    let model = TwoClass {
        b1,
        b2,
        m1: m1 as u64,
        m2: m2 as u64,
        p,
    };
    model.check(sigma)?;
    let moved = MovedPairs::new(sigma);
    let var_alpha = (m1 + m2) as f64 * p * (1.0 - p);
    let var_beta = 2.0 * p * (1.0 - p);
    let alpha: Vec<f64> = moved.pairs.iter().map(|&(h, l)| model.alpha_mean(h, l)).collect();
    let mut v1 = CompensatedSum::default();
    let mut cross = CompensatedSum::default();
    for (e, &(h, l)) in moved.pairs.iter().enumerate() {
        let (a, b) = moved.pairs[moved.image[e]];
        let mean_beta = (1.0 - 2.0 * p) * (b1.get(a, b) - b1.get(h, l));
        let second_beta = var_beta + mean_beta * mean_beta;
        v1.add(second_beta * var_alpha + var_beta * alpha[e] * alpha[e]);
        cross.add(alpha[e] * alpha[moved.image[e]]);
    }
    let v1 = v1.value();
    let c2 = -2.0 * p * (1.0 - p) * cross.value();
    let mean = expected_gap_sigma(
        &[b1.clone(), b2.clone()],
        &[m1, m2],
        &[p, p],
        p,
        sigma,
    )?;
    Ok(GapMoments {
        mean,
        variance: 4.0 * (v1 + c2),
        v1,
        c2,
        k_shuffled: sigma.moved_count(),
    })
}

fn simulate_gap(model: &TwoClass, moved: &MovedPairs, seed: RngSeed) -> f64 {
    let mut rng = seed.rng();
    let p = model.p;
    let a: Vec<f64> = moved
        .pairs
        .iter()
        .map(|&(h, l)| {
            let flip = rng.random::<f64>() < p;
            let edge = model.b1.get(h, l) != 0.0;
            (edge ^ flip) as u8 as f64
        })
        .collect();
    let mut total = CompensatedSum::default();
    for (e, &(h, l)) in moved.pairs.iter().enumerate() {
        let q1 = model.edge_mean(model.b1.get(h, l));
        let q2 = model.edge_mean(model.b2.get(h, l));
        let alpha = Binomial::new(model.m1, q1).expect("valid binomial").sample(&mut rng)
            + Binomial::new(model.m2, q2).expect("valid binomial").sample(&mut rng);
        total.add(alpha as f64 * (a[moved.image[e]] - a[e]));
    }
    2.0 * total.value()
}

/// Simulated `f(P) − f(P*)` draws standardized by the exact mean and
/// variance. Replicate `r` uses `rng.child(r)`.
#[allow(clippy::too_many_arguments)]
pub fn standardized_gap_samples(
    b1: &Graph,
    b2: &Graph,
    m1: usize,
    m2: usize,
    p: f64,
    sigma: &Permutation,
    reps: usize,
    rng: RngSeed,
) -> Result<Vec<f64>, TheoryError> {
    if reps == 0 {
        return Err(TheoryError::InvalidArgument("reps must be at least 1".into()));
    }
    let moments = exact_gap_variance(b1, b2, m1, m2, p, sigma)?;
    if moments.variance <= 0.0 {
        return Err(TheoryError::Degenerate("gap variance is zero".into()));
    }
    let model = TwoClass {
        b1,
        b2,
        m1: m1 as u64,
        m2: m2 as u64,
        p,
    };
    let moved = MovedPairs::new(sigma);
    let sd = moments.variance.sqrt();
    Ok((0..reps)
        .into_par_iter()
        .map(|r| (simulate_gap(&model, &moved, rng.child(r as u64)) - moments.mean) / sd)
        .collect())
}

/// Leading coefficient of `n²` in `𝔼 tr(A · M C Mᵀ)` for block models on
/// common blocks, where block `b` has `sizes[b]·n` vertices, `C` averages
/// `counts[c]` flips (rate `flips[c]`) of class `c`, `A` flips class
/// `target_class` at rate `p_target`, and `M` moves whole blocks by
/// `block_sigma`.
#[allow(clippy::too_many_arguments)]
pub fn expected_trace_sbm(
    lambdas: &[Vec<Vec<f64>>],
    sizes: &[f64],
    counts: &[usize],
    flips: &[f64],
    p_target: f64,
    block_sigma: &Permutation,
    target_class: usize,
) -> Result<f64, TheoryError> {
    let k = sizes.len();
    if lambdas.is_empty() {
        return Err(TheoryError::InvalidArgument("no classes".into()));
    }
    same_order(lambdas.len(), counts.len())?;
    same_order(lambdas.len(), flips.len())?;
    if block_sigma.len() != k {
        return Err(TheoryError::InvalidArgument(format!(
            "block permutation acts on {} blocks, model has {k}",
            block_sigma.len()
        )));
    }
    if target_class >= lambdas.len() {
        return Err(TheoryError::InvalidArgument(format!(
            "target class {target_class} out of range"
        )));
    }
    if sizes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(TheoryError::InvalidArgument("block sizes must be positive".into()));
    }
    check_probability("p_target", p_target)?;
    for (c, lam) in lambdas.iter().enumerate() {
        check_probability("flip", flips[c])?;
        if lam.len() != k || lam.iter().any(|row| row.len() != k) {
            return Err(TheoryError::InvalidArgument(format!(
                "class {c} block matrix is not {k}x{k}"
            )));
        }
        for a in 0..k {
            for b in 0..k {
                check_probability("block probability", lam[a][b])?;
                if lam[a][b] != lam[b][a] {
                    return Err(TheoryError::InvalidArgument(format!(
                        "class {c} block matrix is not symmetric"
                    )));
                }
            }
        }
    }
    for a in 0..k {
        let b = block_sigma.apply(a);
        if sizes[a] != sizes[b] {
            return Err(TheoryError::InvalidArgument(format!(
                "blocks {a} and {b} have different sizes and cannot be exchanged"
            )));
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(TheoryError::InvalidArgument("no in-sample graphs".into()));
    }
    let mean = |lam: f64, p: f64| lam * (1.0 - 2.0 * p) + p;
    let lam_a = &lambdas[target_class];
    let mut acc = CompensatedSum::default();
    for (c, lam_c) in lambdas.iter().enumerate() {
        if counts[c] == 0 {
            continue;
        }
        let pc = flips[c];
        let mut class_sum = CompensatedSum::default();
        for a in 0..k {
            for b in 0..k {
                let (sa, sb) = (block_sigma.apply(a), block_sigma.apply(b));
                let weight = sizes[a] * sizes[b];
                let term = if c == target_class && sa == a && sb == b {
                    // Same background edge under both flips.
                    let l = lam_a[a][b];
                    l * (1.0 - p_target) * (1.0 - pc) + (1.0 - l) * p_target * pc
                } else {
                    mean(lam_a[a][b], p_target) * mean(lam_c[sa][sb], pc)
                };
                class_sum.add(weight * term);
            }
        }
        acc.add(counts[c] as f64 / total as f64 * class_sum.value());
    }
    Ok(acc.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lemma1Outcome {
    pub hypothesis_holds: bool,
    pub conclusion_holds: bool,
    pub epsilon: f64,
}

fn diag_trace(r1: &[f64], rj: &[f64], v: &Permutation) -> f64 {
    // tr(R1 V Rj Vᵀ) = Σ_a r1[v(a)] rj[a].
    compensated_sum((0..r1.len()).map(|a| r1[v.apply(a)] * rj[a]))
}

fn diag_distance_sq(r1: &[f64], rj: &[f64], v: &Permutation) -> f64 {
    // ‖R1 − V Rj Vᵀ‖² with (V Rj Vᵀ)[v(a)] = rj[a].
    compensated_sum((0..r1.len()).map(|a| (r1[v.apply(a)] - rj[a]).powi(2)))
}

/// Checks the misalignment lemma for diagonal scores `r1`, `rj`, a block
/// permutation `q ∈ Π_d`, a basis `u` (n×d, orthonormal) and `p ∈ Π_n`.
///
/// `ε = ‖Uᵀ P U − Q‖_F`. The hypothesis requires `ε < 1/2` (otherwise the
/// instance is rejected), `q` to be a minimizer and the identity a
/// non-minimizer of `‖R1 − V Rj Vᵀ‖_F` over `Π_d`, and
/// `tr(R1 Q Rj Qᵀ) > tr(R1 Rj) / (1 − 2ε)`. The conclusion is
/// `tr(Pᵀ E1 P Ej) > tr(E1 Ej)` with `E = U diag(r) Uᵀ`.
pub fn lemma1_check(
    r1: &[f64],
    rj: &[f64],
    q: &Permutation,
    u: &DMatrix<f64>,
    p: &Permutation,
) -> Result<Lemma1Outcome, TheoryError> {
    let d = r1.len();
    if d == 0 {
        return Err(TheoryError::InvalidArgument("empty score vectors".into()));
    }
    if d > LEMMA_MAX_DIM {
        return Err(TheoryError::TooLarge {
            d,
            max: LEMMA_MAX_DIM,
        });
    }
    same_order(d, rj.len())?;
    same_order(d, q.len())?;
    same_order(d, u.ncols())?;
    same_order(u.nrows(), p.len())?;
    if r1.iter().chain(rj).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(TheoryError::InvalidArgument("scores must be nonnegative".into()));
    }
    if r1.windows(2).any(|w| w[0] > w[1]) {
        return Err(TheoryError::InvalidArgument("r1 must be non-decreasing".into()));
    }
    let gram = u.transpose() * u;
    if (gram - DMatrix::<f64>::identity(d, d)).abs().max() > 1e-10 {
        return Err(TheoryError::InvalidArgument("basis is not orthonormal".into()));
    }

    let pm = p.to_matrix();
    let w = u.transpose() * &pm * u;
    let epsilon = (&w - q.to_matrix()).norm();
    if epsilon >= 0.5 {
        return Err(TheoryError::Uncertifiable { epsilon });
    }

    let mut v: Vec<usize> = (0..d).collect();
    let mut best = f64::INFINITY;
    loop {
        let perm = Permutation::new(v.clone()).expect("enumerated");
        best = best.min(diag_distance_sq(r1, rj, &perm));
        if !next_permutation(&mut v) {
            break;
        }
    }
    let slack = 1e-12 * (1.0 + best);
    let q_optimal = diag_distance_sq(r1, rj, q) <= best + slack;
    let identity_optimal = diag_distance_sq(r1, rj, &Permutation::identity(d)) <= best + slack;
    let gap_ok = diag_trace(r1, rj, q) > diag_trace(r1, rj, &Permutation::identity(d)) / (1.0 - 2.0 * epsilon);
    let hypothesis_holds = q_optimal && !identity_optimal && gap_ok;

    let e1 = u * DMatrix::from_diagonal(&DVector::from_column_slice(r1)) * u.transpose();
    let ej = u * DMatrix::from_diagonal(&DVector::from_column_slice(rj)) * u.transpose();
    let moved = (pm.transpose() * &e1 * &pm * &ej).trace();
    let base = (&e1 * &ej).trace();
    Ok(Lemma1Outcome {
        hypothesis_holds,
        conclusion_holds: moved > base,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::trace_objective;
    use crate::models::{bitflip, sample_er, NoiseSpec};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_binary(n: usize, rng: &mut ChaCha8Rng) -> Graph {
        sample_er(n, 0.5, RngSeed::new(rng.random())).unwrap()
    }

    #[test]
    fn h_vanishes_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_binary(9, &mut rng);
        let p = Permutation::random(9, &mut rng);
        assert_eq!(h_overlap(&b, &b, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn h_negative_for_asymmetric_self_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = loop {
            let g = random_binary(7, &mut rng);
            if g.is_asymmetric().unwrap() {
                break g;
            }
        };
        let id = Permutation::identity(7);
        let mut map: Vec<usize> = (0..7).collect();
        while next_permutation(&mut map) {
            let p = Permutation::new(map.clone()).unwrap();
            assert!(h_overlap(&b, &b, &p, &id).unwrap() < 0.0);
        }
    }

    #[test]
    fn h_matches_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let bi = random_binary(6, &mut rng);
            let bj = random_binary(6, &mut rng);
            let p = Permutation::random(6, &mut rng);
            let ps = Permutation::random(6, &mut rng);
            let pm = p.to_matrix();
            let psm = ps.to_matrix();
            let direct = (bi.weights() * &pm * psm.transpose() * bj.weights() * &psm * pm.transpose()).trace()
                - (bi.weights() * bj.weights()).trace();
            assert!((h_overlap(&bi, &bj, &p, &ps).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_vanishes_at_half_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bs = vec![random_binary(8, &mut rng), random_binary(8, &mut rng)];
        let p = Permutation::random(8, &mut rng);
        let g = expected_gap(&bs, &[3, 4], &[0.5, 0.5], 0.2, &p, &Permutation::identity(8)).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn gap_sign_matches_ratio_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..200 {
            let bs = vec![random_binary(8, &mut rng), random_binary(8, &mut rng)];
            let (m1, m2) = (rng.random_range(1..6usize), rng.random_range(1..6usize));
            let (p1, p2) = (0.1 + 0.3 * rng.random::<f64>(), 0.1 + 0.3 * rng.random::<f64>());
            let p = Permutation::random(8, &mut rng);
            let id = Permutation::identity(8);
            let h11 = h_overlap(&bs[0], &bs[0], &p, &id).unwrap();
            if h11 >= 0.0 {
                continue;
            }
            let h21 = h_overlap(&bs[1], &bs[0], &p, &id).unwrap();
            let gap = expected_gap(&bs, &[m1, m2], &[p1, p2], p1, &p, &id).unwrap();
            let lhs = -h21 / h11;
            let rhs = m1 as f64 * (1.0 - 2.0 * p1) / (m2 as f64 * (1.0 - 2.0 * p2));
            if (lhs - rhs).abs() > 1e-9 {
                assert_eq!(gap < 0.0, lhs < rhs);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn gap_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 20;
        let b1 = random_binary(n, &mut rng);
        let b2 = random_binary(n, &mut rng);
        let (m1, m2, p1, p2, pt) = (3usize, 2usize, 0.2, 0.3, 0.25);
        let p = Permutation::random(n, &mut rng);
        let id = Permutation::identity(n);
        let want = expected_gap(&[b1.clone(), b2.clone()], &[m1, m2], &[p1, p2], pt, &p, &id).unwrap();
        let reps = 20_000u64;
        let draws: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let s = RngSeed::new(7).child(r);
                let a = bitflip(&b1, &NoiseSpec::uniform(pt).unwrap(), s.child(0)).unwrap();
                let r_obs = a.clone();
                let mut sum = DMatrix::<f64>::zeros(n, n);
                for k in 0..m1 {
                    sum += bitflip(&b1, &NoiseSpec::uniform(p1).unwrap(), s.child(1 + k as u64)).unwrap().weights();
                }
                for k in 0..m2 {
                    sum += bitflip(&b2, &NoiseSpec::uniform(p2).unwrap(), s.child(100 + k as u64)).unwrap().weights();
                }
                trace_objective(&r_obs, &sum, &p).unwrap() - trace_objective(&r_obs, &sum, &id).unwrap()
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "{mean} vs {want} (se {se})");
    }

    #[test]
    fn pattern_counts_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b1 = random_binary(10, &mut rng);
        let b2 = random_binary(10, &mut rng);
        let id = Permutation::identity(10);
        let c = pattern_counts(&b1, &b2, &id).unwrap();
        assert_eq!(c.total(), 45);
        for x in 0..16usize {
            let bits = [(x >> 3) & 1, (x >> 2) & 1, (x >> 1) & 1, x & 1];
            if bits[0] != bits[1] || bits[2] != bits[3] {
                assert_eq!(c.as_array()[x], 0);
            }
        }
        let sigma = Permutation::random(10, &mut rng);
        let same = pattern_counts(&b1, &b1, &sigma).unwrap();
        for x in 0..16usize {
            let bits = [(x >> 3) & 1, (x >> 2) & 1, (x >> 1) & 1, x & 1];
            if bits[0] != bits[2] || bits[1] != bits[3] {
                assert_eq!(same.as_array()[x], 0);
            }
        }
    }

    #[test]
    fn pattern_counts_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b1 = random_binary(8, &mut rng);
        let b2 = random_binary(8, &mut rng);
        let sigma = Permutation::random(8, &mut rng);
        let c = pattern_counts(&b1, &b2, &sigma).unwrap();
        let mut reference = std::collections::HashMap::new();
        for h in 0..8 {
            for l in 0..8 {
                if h < l {
                    let (a, b) = (sigma.apply(h), sigma.apply(l));
                    let key = format!(
                        "{}{}{}{}",
                        b1.get(a, b) as u8,
                        b1.get(h, l) as u8,
                        b2.get(a, b) as u8,
                        b2.get(h, l) as u8
                    );
                    *reference.entry(key).or_insert(0u64) += 1;
                }
            }
        }
        for x in 0..16usize {
            let key = format!("{:04b}", x);
            assert_eq!(c.get(&key), *reference.get(&key).unwrap_or(&0));
        }
        assert!(pattern_counts(&b1, &Graph::weighted(DMatrix::zeros(8, 8)).unwrap(), &sigma).is_err());
    }

    #[test]
    fn pattern_halves_match_overlaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let b1 = random_binary(9, &mut rng);
            let b2 = random_binary(9, &mut rng);
            let p = Permutation::random(9, &mut rng);
            let id = Permutation::identity(9);
            let sigma = pair_map(&p, &id);
            let c = pattern_counts(&b1, &b2, &sigma).unwrap();
            assert!(c.parity_holds());
            assert_eq!(2 * c.self_overlap_half(), h_overlap(&b1, &b1, &p, &id).unwrap() as i64);
            assert_eq!(2 * c.cross_overlap_half(), h_overlap(&b2, &b1, &p, &id).unwrap() as i64);
        }
    }

    #[test]
    fn involution_form_agrees_on_involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(4..=12);
            let b1 = random_binary(n, &mut rng);
            let b2 = random_binary(n, &mut rng);
            // Product of disjoint transpositions.
            let mut verts: Vec<usize> = (0..n).collect();
            verts.shuffle(&mut rng);
            let mut map: Vec<usize> = (0..n).collect();
            let swaps = rng.random_range(1..=n / 2);
            for t in 0..swaps {
                map.swap(verts[2 * t], verts[2 * t + 1]);
            }
            let sigma = Permutation::new(map).unwrap();
            let (m1, m2) = (rng.random_range(1..8u64), rng.random_range(1..8u64));
            let c = pattern_counts(&b1, &b2, &sigma).unwrap();
            assert_eq!(c.involution_form(m1, m2), c.gap_positive(m1, m2));
        }
    }

    #[test]
    fn variance_zero_for_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b1 = random_binary(10, &mut rng);
        let b2 = random_binary(10, &mut rng);
        let g = exact_gap_variance(&b1, &b2, 5, 5, 0.3, &Permutation::identity(10)).unwrap();
        assert_eq!(g.variance, 0.0);
        assert_eq!(g.k_shuffled, 0);
        assert!(exact_gap_variance(&b1, &b2, 5, 5, 0.0, &Permutation::identity(10)).is_err());
    }

    #[test]
    fn variance_rearranged_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let n = 15;
            let b1 = random_binary(n, &mut rng);
            let b2 = random_binary(n, &mut rng);
            let sigma = Permutation::random(n, &mut rng);
            let (m1, m2, p) = (4usize, 6usize, 0.3);
            let g = exact_gap_variance(&b1, &b2, m1, m2, p, &sigma).unwrap();
            // Σ* E(β²) Var(α) + p(1−p) Σ* (Eα_e − Eα_σe)².
            let q = |b: f64| (1.0 - 2.0 * p) * b + p;
            let ea = |h: usize, l: usize| m1 as f64 * q(b1.get(h, l)) + m2 as f64 * q(b2.get(h, l));
            let mut rhs = 0.0;
            for h in 0..n {
                for l in (h + 1)..n {
                    let (a, b) = (sigma.apply(h), sigma.apply(l));
                    if (a.min(b), a.max(b)) == (h, l) {
                        continue;
                    }
                    let eb = (1.0 - 2.0 * p) * (b1.get(a, b) - b1.get(h, l));
                    let eb2 = 2.0 * p * (1.0 - p) + eb * eb;
                    rhs += eb2 * (m1 + m2) as f64 * p * (1.0 - p);
                    rhs += p * (1.0 - p) * (ea(h, l) - ea(a, b)).powi(2);
                }
            }
            assert!((g.v1 + g.c2 - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn variance_matches_monte_carlo_on_transposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 30;
        let b1 = random_binary(n, &mut rng);
        let b2 = random_binary(n, &mut rng);
        let (m1, m2, p) = (5usize, 5usize, 0.3);
        let p_match = Permutation::transposition(n, 3, 17);
        let id = Permutation::identity(n);
        let sigma = pair_map(&p_match, &id);
        let g = exact_gap_variance(&b1, &b2, m1, m2, p, &sigma).unwrap();
        let reps = 20_000u64;
        let draws: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let s = RngSeed::new(15).child(r);
                let a = bitflip(&b1, &NoiseSpec::uniform(p).unwrap(), s.child(0)).unwrap();
                let mut sum = DMatrix::<f64>::zeros(n, n);
                for k in 0..m1 {
                    sum += bitflip(&b1, &NoiseSpec::uniform(p).unwrap(), s.child(1 + k as u64)).unwrap().weights();
                }
                for k in 0..m2 {
                    sum += bitflip(&b2, &NoiseSpec::uniform(p).unwrap(), s.child(100 + k as u64)).unwrap().weights();
                }
                trace_objective(&a, &sum, &p_match).unwrap() - trace_objective(&a, &sum, &id).unwrap()
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((var - g.variance).abs() <= 0.05 * g.variance, "{var} vs {}", g.variance);
    }

    #[test]
    fn standardized_samples_are_centered_and_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 40;
        let b1 = random_binary(n, &mut rng);
        let b2 = random_binary(n, &mut rng);
        let sigma = Permutation::random(n, &mut rng);
        let reps = 10_000;
        let z = standardized_gap_samples(&b1, &b2, 4, 4, 0.2, &sigma, reps, RngSeed::new(17)).unwrap();
        let mean = z.iter().sum::<f64>() / reps as f64;
        let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean.abs() <= 3.0 / (reps as f64).sqrt(), "{mean}");
        assert!((sd - 1.0).abs() <= 0.05, "{sd}");
        assert!(standardized_gap_samples(&b1, &b2, 4, 4, 0.2, &Permutation::identity(n), 10, RngSeed::new(1)).is_err());
    }

    fn three_class_blocks() -> Vec<Vec<Vec<f64>>> {
        let (a, eps, r) = (0.3, 0.5, 0.1);
        vec![
            vec![vec![a, r, r], vec![r, r, r], vec![r, r, r]],
            vec![vec![r, r, r], vec![r, a + eps, r], vec![r, r, r]],
            vec![vec![r, r, r], vec![r, r, r], vec![r, r, a + eps]],
        ]
    }

    #[test]
    fn block_model_constants() {
        let lams = three_class_blocks();
        let sizes = [1.0, 1.0, 1.0];
        let flips = [0.4, 0.1, 0.1];
        let id = Permutation::identity(3);
        let swap = Permutation::transposition(3, 0, 1);
        let run = |counts: &[usize], s: &Permutation| {
            expected_trace_sbm(&lams, &sizes, counts, &flips, 0.4, s, 0).unwrap()
        };
        assert!((run(&[1, 2, 0], &id) - 1.168533).abs() < 1e-6);
        assert!((run(&[1, 2, 0], &swap) - 1.171733).abs() < 1e-6);
        assert!((run(&[1, 1, 1], &id) - 1.168533).abs() < 1e-6);
        assert!((run(&[1, 1, 1], &swap) - 1.164267).abs() < 1e-6);
        assert!(expected_trace_sbm(&lams, &[1.0, 2.0, 1.0], &[1, 1, 1], &flips, 0.4, &swap, 0).is_err());
    }

    #[test]
    fn block_model_matches_hand_sum() {
        // Class 1 alone, identity: Σ λ(1−p)² + (1−λ)p² over the nine block pairs.
        let lams = three_class_blocks();
        let got = expected_trace_sbm(&lams, &[1.0; 3], &[1, 0, 0], &[0.4, 0.1, 0.1], 0.4, &Permutation::identity(3), 0)
            .unwrap();
        let second = |l: f64| l * 0.36 + (1.0 - l) * 0.16;
        let want = second(0.3) + 8.0 * second(0.1);
        assert!((got - want).abs() < 1e-15);
    }

    fn block_basis(d: usize, per: usize) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(d * per, d);
        for b in 0..d {
            for v in 0..per {
                u[(b * per + v, b)] = 1.0 / (per as f64).sqrt();
            }
        }
        u
    }

    fn block_lift(q: &Permutation, per: usize) -> Permutation {
        let d = q.len();
        Permutation::new(
            (0..d * per)
                .map(|v| q.apply(v / per) * per + v % per)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn lemma_exact_lift() {
        let (d, per) = (3, 4);
        let u = block_basis(d, per);
        let r1 = [1.0, 2.0, 5.0];
        let rj = [4.0, 1.0, 2.0];
        // Sorting rj onto r1: v maps rj index a to r1 index v(a).
        let q = Permutation::new(vec![2, 0, 1]).unwrap();
        let p = block_lift(&q, per);
        let out = lemma1_check(&r1, &rj, &q, &u, &p).unwrap();
        assert!(out.epsilon < 1e-12);
        assert!(out.hypothesis_holds);
        assert!(out.conclusion_holds);
    }

    #[test]
    fn lemma_rejects_large_epsilon_and_bad_input() {
        let (d, per) = (3, 4);
        let u = block_basis(d, per);
        let q = Permutation::new(vec![2, 0, 1]).unwrap();
        let id = Permutation::identity(d * per);
        assert!(matches!(
            lemma1_check(&[1.0, 2.0, 5.0], &[4.0, 1.0, 2.0], &q, &u, &id),
            Err(TheoryError::Uncertifiable { .. })
        ));
        assert!(lemma1_check(&[3.0, 2.0, 5.0], &[4.0, 1.0, 2.0], &q, &u, &id).is_err());
        let big = block_basis(6, 2);
        assert!(matches!(
            lemma1_check(&[1.0; 6], &[1.0; 6], &Permutation::identity(6), &big, &Permutation::identity(12)),
            Err(TheoryError::TooLarge { .. })
        ));
    }
}
