//! Slow reference implementations used as independent oracles by the test
//! suites and the `selfcheck` command.

use crate::gradcore::{bce_value, ops::feature_map, Tensor};
use crate::meetingsim::MeetingSpec;
use crate::types::{DiarizationLabels, DiarizationProbs};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut cur, &mut used, &mut out);
    out
}

/// PIT by enumerating every permutation; first minimum in lexicographic
/// order wins.
pub fn brute_force_pit(p: &DiarizationProbs, y: &DiarizationLabels) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(y.slots()) {
        let mut loss = 0.0;
        for (s, &o) in perm.iter().enumerate() {
            for t in 0..y.frames() {
                loss += bce_value(p.get(o, t), y.get(s, t) as u8 as f64);
            }
        }
        if loss < best.0 {
            best = (loss, perm);
        }
    }
    best
}

/// Softmax attention by explicit loops.
pub fn naive_attention_full(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (t, dh, dv) = (q.rows(), q.cols(), v.cols());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[t, dv]);
    for i in 0..t {
        let scores: Vec<f64> = (0..k.rows())
            .map(|j| (0..dh).map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() * scale)
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (j, w) in e.iter().enumerate() {
            for c in 0..dv {
                out.data_mut()[i * dv + c] += w / z * v.at(j, c);
            }
        }
    }
    out
}

/// Linear attention in its quadratic form: weights `φ(q_i)·φ(k_j)`,
/// normalized over `j`.
pub fn naive_attention_linear(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (t, dh, dv) = (q.rows(), q.cols(), v.cols());
    let mut out = Tensor::zeros(&[t, dv]);
    for i in 0..t {
        let w: Vec<f64> = (0..k.rows())
            .map(|j| {
                (0..dh)
                    .map(|c| feature_map(q.at(i, c)) * feature_map(k.at(j, c)))
                    .sum()
            })
            .collect();
        let z: f64 = w.iter().sum();
        for (j, wj) in w.iter().enumerate() {
            for c in 0..dv {
                out.data_mut()[i * dv + c] += wj / z * v.at(j, c);
            }
        }
    }
    out
}

/// Overlap ratio by inclusion-exclusion over utterance pairs, valid when no
/// three utterances are simultaneously active.
pub fn pairwise_overlap_ratio(spec: &MeetingSpec) -> f64 {
    let u = &spec.schedule;
    let total: f64 = u.iter().map(|x| x.duration_s).sum();
    let mut pair = 0.0;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            pair += (u[i].end_s().min(u[j].end_s()) - u[i].onset_s.max(u[j].onset_s)).max(0.0);
        }
    }
    let speech = total - pair;
    if speech <= 0.0 {
        0.0
    } else {
        pair / speech
    }
}

/// True when some instant has three or more utterances active.
pub fn has_triple_overlap(spec: &MeetingSpec) -> bool {
    let u = &spec.schedule;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            for k in j + 1..u.len() {
                let start = u[i].onset_s.max(u[j].onset_s).max(u[k].onset_s);
                let end = u[i].end_s().min(u[j].end_s()).min(u[k].end_s());
                if end > start {
                    return true;
                }
            }
        }
    }
    false
}

/// True when one speaker's utterances overlap each other.
pub fn has_self_overlap(spec: &MeetingSpec) -> bool {
    let u = &spec.schedule;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            if u[i].speaker == u[j].speaker
                && u[i].end_s().min(u[j].end_s()) > u[i].onset_s.max(u[j].onset_s)
            {
                return true;
            }
        }
    }
    false
}

/// Frame DER with the speaker mapping found by enumerating every
/// permutation of hypothesis slots (reference and hypothesis padded to the
/// same slot count). Returns `(errors, reference speech frames)`.
pub fn brute_force_der(reference: &DiarizationLabels, hyp: &DiarizationLabels) -> (usize, usize) {
    let n = reference.slots().max(hyp.slots());
    let frames = reference.frames();
    let r = |s: usize, t: usize| s < reference.slots() && reference.get(s, t);
    let h = |s: usize, t: usize| s < hyp.slots() && t < hyp.frames() && hyp.get(s, t);
    let speech: usize = (0..frames).map(|t| reference.active_count(t)).sum();
    let mut best = usize::MAX;
    for perm in permutations(n) {
        let mut err = 0;
        for t in 0..frames {
            let nr = (0..n).filter(|&s| r(s, t)).count();
            let nh = (0..n).filter(|&s| h(s, t)).count();
            let correct = (0..n).filter(|&s| r(s, t) && h(perm[s], t)).count();
            err += nr.max(nh) - correct;
        }
        best = best.min(err);
    }
    (best, speech)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[1], vec![0, 2, 1]);
    }
}
