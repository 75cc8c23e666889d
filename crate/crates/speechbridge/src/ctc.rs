//! CTC: loss with analytic gradient, the collapse operator, exact path
//! sampling, greedy decoding, and a brute-force enumeration oracle for small
//! lattices.
//!
//! The loss is the standard forward-backward recursion over the
//! blank-interleaved target, done entirely in log domain (log-add-exp, no
//! per-frame rescaling). The gradient is returned with respect to the
//! log-probability entries treated as free variables, which is what the
//! training bridge seeds into the autodiff graph behind the log-softmax.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{log_add_exp, Matrix};

/// Per-frame log-probabilities over a label vocabulary of size V plus the
/// blank, which is always the last column.
#[derive(Clone, Debug)]
pub struct FramePosteriors {
    log_probs: Matrix, // T x (V+1)
}

impl FramePosteriors {
    /// Validates that every row exponentiates and sums to 1 within 1e-9.
    pub fn new(log_probs: Matrix) -> Result<FramePosteriors> {
        if log_probs.rows() == 0 || log_probs.cols() < 2 {
            return Err(Error::InvalidSpec(format!(
                "posteriors need T >= 1 and V >= 1, got {}",
                log_probs.shape_str()
            )));
        }
        for r in 0..log_probs.rows() {
            let lse = row_lse(log_probs.row(r));
            if lse.abs() > 1e-9 {
                return Err(Error::RowNotNormalized { row: r, lse });
            }
        }
        Ok(FramePosteriors { log_probs })
    }

    /// Normalize raw logits row-wise; always satisfies the row invariant.
    pub fn from_logits(logits: &Matrix) -> Result<FramePosteriors> {
        FramePosteriors::new(logits.log_softmax_rows())
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    /// Label vocabulary size, blank excluded.
    pub fn vocab(&self) -> usize {
        self.log_probs.cols() - 1
    }

    pub fn blank(&self) -> usize {
        self.vocab()
    }

    pub fn log_probs(&self) -> &Matrix {
        &self.log_probs
    }
}

fn row_lse(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// The collapse operator B: merge consecutive duplicates, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &label in path {
        if Some(label) != prev && label != blank {
            out.push(label);
        }
        prev = Some(label);
    }
    out
}

fn validate_target(target: &[usize], vocab: usize) -> Result<()> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    for &l in target {
        if l >= vocab {
            return Err(Error::LabelOutOfRange { label: l, vocab });
        }
    }
    Ok(())
}

fn required_frames(target: &[usize]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// CTC negative log-likelihood and its gradient with respect to the
/// log-probability inputs. Rows are re-checked for normalization.
pub fn ctc_loss(posteriors: &FramePosteriors, target: &[usize]) -> Result<(f64, Matrix)> {
    for r in 0..posteriors.frames() {
        let lse = row_lse(posteriors.log_probs.row(r));
        if lse.abs() > 1e-9 {
            return Err(Error::RowNotNormalized { row: r, lse });
        }
    }
    ctc_loss_from_log_probs(&posteriors.log_probs, target)
}

/// Same recursion on a raw T x (V+1) log-weight matrix (no normalization
/// check), treating the last column as blank. Finite-difference oracles and
/// the training bridge go through here.
pub fn ctc_loss_from_log_probs(log_probs: &Matrix, target: &[usize]) -> Result<(f64, Matrix)> {
    let t_len = log_probs.rows();
    let vocab = log_probs.cols() - 1;
    let blank = vocab;
    validate_target(target, vocab)?;
    let required = required_frames(target);
    if t_len < required {
        return Err(Error::CtcInfeasible {
            target_len: target.len(),
            required,
            got: t_len,
        });
    }

    // Blank-interleaved expanded target: blank at even slots.
    let s_len = 2 * target.len() + 1;
    let expanded: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    // A skip transition into slot s is allowed when its label is not blank
    // and differs from the label two slots back.
    let skip_ok: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && expanded[s] != blank && expanded[s] != expanded[s - 2])
        .collect();

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = log_probs.get(0, expanded[0]);
    if s_len > 1 {
        alpha[1] = log_probs.get(0, expanded[1]);
    }
    for t in 1..t_len {
        let (prev_rows, rows) = alpha.split_at_mut(t * s_len);
        let prev = &prev_rows[(t - 1) * s_len..];
        let row = &mut rows[..s_len];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add_exp(acc, prev[s - 1]);
            }
            if skip_ok[s] {
                acc = log_add_exp(acc, prev[s - 2]);
            }
            row[s] = if acc == neg {
                neg
            } else {
                acc + log_probs.get(t, expanded[s])
            };
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let mut log_lik = last[s_len - 1];
    if s_len >= 2 {
        log_lik = log_add_exp(log_lik, last[s_len - 2]);
    }
    if log_lik == neg {
        return Err(Error::ZeroProbabilityTarget);
    }

    // Backward variable, also including the emission at its own frame.
    let mut beta = vec![neg; t_len * s_len];
    {
        let lastrow = &mut beta[(t_len - 1) * s_len..];
        lastrow[s_len - 1] = log_probs.get(t_len - 1, expanded[s_len - 1]);
        if s_len >= 2 {
            lastrow[s_len - 2] = log_probs.get(t_len - 1, expanded[s_len - 2]);
        }
    }
    for t in (0..t_len - 1).rev() {
        let (rows, next_rows) = beta.split_at_mut((t + 1) * s_len);
        let next = &next_rows[..s_len];
        let row = &mut rows[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add_exp(acc, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok[s + 2] {
                acc = log_add_exp(acc, next[s + 2]);
            }
            row[s] = if acc == neg {
                neg
            } else {
                acc + log_probs.get(t, expanded[s])
            };
        }
    }

    // d loss / d x[t][k] = -exp(lse_{s: l's=k}(alpha+beta) - x[t][k] - loglik);
    // alpha(t,s)*beta(t,s) counts the frame-t emission twice, the -x corrects.
    let mut grad = Matrix::zeros(t_len, vocab + 1);
    let mut occupancy = vec![neg; vocab + 1];
    for t in 0..t_len {
        occupancy.fill(neg);
        let arow = &alpha[t * s_len..(t + 1) * s_len];
        let brow = &beta[t * s_len..(t + 1) * s_len];
        for s in 0..s_len {
            let ab = arow[s] + brow[s];
            if ab != neg && !ab.is_nan() {
                occupancy[expanded[s]] = log_add_exp(occupancy[expanded[s]], ab);
            }
        }
        let grow = grad.row_mut(t);
        for k in 0..=vocab {
            if occupancy[k] != neg {
                grow[k] = -(occupancy[k] - log_probs.get(t, k) - log_lik).exp();
            }
        }
    }
    Ok((-log_lik, grad))
}

/// Exhaustive oracle: sums the probability of every alignment path whose
/// collapse equals `target`. Only for small lattices.
pub fn brute_force_loss(posteriors: &FramePosteriors, target: &[usize]) -> Result<f64> {
    validate_target(target, posteriors.vocab())?;
    let dist = enumerate_collapsed(posteriors)?;
    let p = dist.get(target).copied().unwrap_or(0.0);
    if p <= 0.0 {
        return Err(Error::ZeroProbabilityTarget);
    }
    Ok(-p.ln())
}

/// Probability of every collapsed label sequence, by enumerating all
/// (V+1)^T paths. Errors when that exceeds 1e7 paths.
pub fn enumerate_collapsed(posteriors: &FramePosteriors) -> Result<HashMap<Vec<usize>, f64>> {
    let t_len = posteriors.frames();
    let width = posteriors.vocab() + 1;
    let total = (width as f64).powi(t_len as i32);
    if total > 1e7 {
        return Err(Error::LatticeTooLarge { paths: total });
    }
    let lp = &posteriors.log_probs;
    let mut dist: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; t_len];
    loop {
        let logp: f64 = path.iter().enumerate().map(|(t, &l)| lp.get(t, l)).sum();
        let key = collapse(&path, posteriors.blank());
        *dist.entry(key).or_insert(0.0) += logp.exp();
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == t_len {
                return Ok(dist);
            }
            path[pos] += 1;
            if path[pos] < width {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// How many times an empty collapse is redrawn before falling back to the
/// greedy decode (downstream prompts must be non-empty).
pub const EMPTY_SAMPLE_RETRIES: usize = 10;

/// Draw `k` alignment paths frame-independently from the row distributions
/// (exact under the CTC factorization), collapse each, and replace empty
/// results per the retry-then-greedy policy. Deterministic given the seed.
pub fn sample_paths(posteriors: &FramePosteriors, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_paths_with_rng(posteriors, k, &mut rng)
}

pub fn sample_paths_with_rng<R: Rng>(
    posteriors: &FramePosteriors,
    k: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    assert!(k >= 1, "need at least one sample");
    let lp = &posteriors.log_probs;
    let width = posteriors.vocab() + 1;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut chosen = Vec::new();
        for _attempt in 0..=EMPTY_SAMPLE_RETRIES {
            let mut path = Vec::with_capacity(posteriors.frames());
            for t in 0..posteriors.frames() {
                let r: f64 = rng.gen();
                let row = lp.row(t);
                let mut acc = 0.0;
                let mut label = width - 1;
                for (i, &v) in row.iter().enumerate() {
                    acc += v.exp();
                    if r < acc {
                        label = i;
                        break;
                    }
                }
                path.push(label);
            }
            chosen = collapse(&path, posteriors.blank());
            if !chosen.is_empty() {
                break;
            }
        }
        if chosen.is_empty() {
            chosen = greedy_decode(posteriors);
        }
        out.push(chosen);
    }
    out
}

/// Collapse of the per-frame argmax path; argmax ties break toward the lower
/// index.
pub fn greedy_decode(posteriors: &FramePosteriors) -> Vec<usize> {
    let lp = &posteriors.log_probs;
    let mut path = Vec::with_capacity(posteriors.frames());
    for t in 0..posteriors.frames() {
        let row = lp.row(t);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        path.push(best);
    }
    collapse(&path, posteriors.blank())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize, v: usize) -> FramePosteriors {
        let p = ((v + 1) as f64).recip().ln();
        FramePosteriors::new(Matrix::from_vec(t, v + 1, vec![p; t * (v + 1)])).unwrap()
    }

    fn random_lattice(seed: u64, t: usize, v: usize) -> FramePosteriors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::randn(t, v + 1, 1.5, &mut rng);
        FramePosteriors::from_logits(&logits).unwrap()
    }

    #[test]
    fn collapse_examples() {
        let blank = 9;
        assert_eq!(collapse(&[0, 0, blank, 1], blank), vec![0, 1]);
        assert_eq!(collapse(&[blank, blank], blank), Vec::<usize>::new());
        assert_eq!(collapse(&[0, blank, 0], blank), vec![0, 0]);
    }

    #[test]
    fn collapse_is_identity_without_blanks_or_repeats() {
        let x = vec![0, 1, 2, 1, 0];
        assert_eq!(collapse(&x, 9), x);
    }

    #[test]
    fn single_frame_uniform_loss_is_ln_2() {
        let (loss, _) = ctc_loss(&uniform(1, 1), &[0]).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn two_frame_uniform_loss_enumerates_three_paths() {
        // Paths collapsing to [a]: aa, a-, -a, each 1/4.
        let (loss, _) = ctc_loss(&uniform(2, 1), &[0]).unwrap();
        assert!((loss + 0.75_f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn repeated_label_needs_a_separating_blank() {
        // T=3 uniform, target [a,a]: only path a-a, prob 1/8.
        let (loss, _) = ctc_loss(&uniform(3, 1), &[0, 0]).unwrap();
        assert!((loss - 8.0_f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn infeasible_target_reports_required_frames() {
        let err = ctc_loss(&uniform(2, 1), &[0, 0]).unwrap_err();
        match err {
            Error::CtcInfeasible { required, got, .. } => {
                assert_eq!(required, 3);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unnormalized_rows_are_rejected() {
        let m = Matrix::from_vec(1, 2, vec![-0.1, -0.2]);
        assert!(matches!(
            FramePosteriors::new(m),
            Err(Error::RowNotNormalized { .. })
        ));
    }

    #[test]
    fn matches_brute_force_on_random_lattices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..30 {
            let t = rng.gen_range(1..=6);
            let v = rng.gen_range(1..=4);
            let post = random_lattice(1000 + case, t, v);
            let len = rng.gen_range(1..=3.min(t));
            let target: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v)).collect();
            let fast = ctc_loss(&post, &target);
            let brute = brute_force_loss(&post, &target);
            match (fast, brute) {
                (Ok((a, _)), Ok(b)) => {
                    assert!((a - b).abs() < 1e-9, "case {case}: {a} vs {b}")
                }
                (Err(Error::CtcInfeasible { .. }), Err(Error::ZeroProbabilityTarget)) => {}
                (f, b) => panic!("case {case}: disagreement {f:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn brute_force_rejects_unproducible_target() {
        let post = uniform(2, 1);
        assert!(matches!(
            brute_force_loss(&post, &[0, 0]),
            Err(Error::ZeroProbabilityTarget)
        ));
    }

    #[test]
    fn brute_force_rejects_huge_lattices() {
        let post = uniform(20, 4);
        assert!(matches!(
            brute_force_loss(&post, &[0]),
            Err(Error::LatticeTooLarge { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(2..=5);
            let v = rng.gen_range(1..=3);
            let post = random_lattice(500 + seed, t, v);
            let target: Vec<usize> = (0..rng.gen_range(1..=t.min(3)))
                .map(|_| rng.gen_range(0..v))
                .collect();
            if required_frames(&target) > t {
                continue;
            }
            let base = post.log_probs().clone();
            let (_, grad) = ctc_loss_from_log_probs(&base, &target).unwrap();
            let eps = 1e-6;
            let mut pert = base.clone();
            for i in 0..base.len() {
                let orig = pert.data()[i];
                pert.data_mut()[i] = orig + eps;
                let (up, _) = ctc_loss_from_log_probs(&pert, &target).unwrap();
                pert.data_mut()[i] = orig - eps;
                let (down, _) = ctc_loss_from_log_probs(&pert, &target).unwrap();
                pert.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (grad.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
                assert!(rel < 1e-5, "seed {seed} coord {i}: rel {rel}");
            }
        }
    }

    #[test]
    fn total_probability_over_targets_and_empty_is_one() {
        for seed in [3u64, 17, 92] {
            let post = random_lattice(seed, 4, 2);
            let blank_mass: f64 = (0..post.frames())
                .map(|t| post.log_probs().get(t, post.blank()))
                .sum();
            let mut total = blank_mass.exp(); // all-blank path = empty collapse
            // All label sequences of length 1..=T.
            let v = post.vocab();
            for len in 1..=post.frames() {
                let mut target = vec![0usize; len];
                loop {
                    if required_frames(&target) <= post.frames() {
                        let (loss, _) = ctc_loss(&post, &target).unwrap();
                        total += (-loss).exp();
                    }
                    let mut pos = 0;
                    loop {
                        if pos == len {
                            break;
                        }
                        target[pos] += 1;
                        if target[pos] < v {
                            break;
                        }
                        target[pos] = 0;
                        pos += 1;
                    }
                    if pos == len {
                        break;
                    }
                }
            }
            assert!((total - 1.0).abs() < 1e-6, "seed {seed}: total {total}");
        }
    }

    #[test]
    fn one_hot_rows_sample_deterministically() {
        // Rows nearly one-hot on label 0; every sample collapses to [0].
        let row = vec![(1.0 - 2e-12_f64).ln(), 1e-12_f64.ln(), 1e-12_f64.ln()];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let post = FramePosteriors::new(Matrix::from_vec(4, 3, data)).unwrap();
        for s in sample_paths(&post, 8, 123) {
            assert_eq!(s, vec![0]);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let post = random_lattice(7, 5, 3);
        assert_eq!(sample_paths(&post, 8, 99), sample_paths(&post, 8, 99));
        assert_ne!(sample_paths(&post, 8, 99), sample_paths(&post, 8, 100));
    }

    #[test]
    fn greedy_decode_examples() {
        let mut m = Matrix::from_vec(4, 3, vec![f64::NEG_INFINITY; 12]);
        // spells a, a, blank, b with blank index 2
        for (t, l) in [(0usize, 0usize), (1, 0), (2, 2), (3, 1)] {
            m.set(t, l, 0.0);
        }
        // Make rows normalized-ish by construction: one-hot rows are exact.
        let post = FramePosteriors::new(m).unwrap();
        assert_eq!(greedy_decode(&post), vec![0, 1]);

        let all_blank = FramePosteriors::from_logits(&Matrix::from_vec(
            2,
            3,
            vec![0.0, 0.0, 5.0, 0.0, 0.0, 5.0],
        ))
        .unwrap();
        assert_eq!(greedy_decode(&all_blank), Vec::<usize>::new());
    }

    #[test]
    fn greedy_matches_best_single_path_by_enumeration() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(1..=6);
            let v = rng.gen_range(1..=3);
            let post = random_lattice(2000 + seed, t, v);
            // Best path under the frame-factorized distribution.
            let width = v + 1;
            let mut best_path = Vec::new();
            let mut best_lp = f64::NEG_INFINITY;
            let mut path = vec![0usize; t];
            'outer: loop {
                let lp: f64 = path
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| post.log_probs().get(i, l))
                    .sum();
                if lp > best_lp {
                    best_lp = lp;
                    best_path = path.clone();
                }
                let mut pos = 0;
                loop {
                    if pos == t {
                        break 'outer;
                    }
                    path[pos] += 1;
                    if path[pos] < width {
                        break;
                    }
                    path[pos] = 0;
                    pos += 1;
                }
            }
            assert_eq!(greedy_decode(&post), collapse(&best_path, post.blank()));
        }
    }
}
