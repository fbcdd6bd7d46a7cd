//! Deliberately naive reference implementations used as test oracles.
//! Nothing here shares code with the library.
#![allow(dead_code)]

pub fn confusion(gold: &[Vec<bool>], pred: &[Vec<bool>], label: Option<usize>) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for d in 0..gold.len() {
        for l in 0..gold[d].len() {
            if label.is_some_and(|x| x != l) {
                continue;
            }
            if gold[d][l] && pred[d][l] {
                tp += 1.0;
            } else if !gold[d][l] && pred[d][l] {
                fp += 1.0;
            } else if gold[d][l] && !pred[d][l] {
                fn_ += 1.0;
            }
        }
    }
    (tp, fp, fn_)
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn micro_f1(gold: &[Vec<bool>], pred: &[Vec<bool>]) -> f64 {
    let (tp, fp, fn_) = confusion(gold, pred, None);
    f1(tp, fp, fn_)
}

pub fn macro_f1(gold: &[Vec<bool>], pred: &[Vec<bool>]) -> f64 {
    let n = gold[0].len();
    let mut total = 0.0;
    for l in 0..n {
        let (tp, fp, fn_) = confusion(gold, pred, Some(l));
        total += f1(tp, fp, fn_);
    }
    total / n as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating every pair.
pub fn auc(cells: &[(f64, bool)]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(sp, yp) in cells {
        if !yp {
            continue;
        }
        for &(sn, yn) in cells {
            if yn {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        None
    } else {
        Some(wins / pairs)
    }
}

pub fn micro_auc(gold: &[Vec<bool>], scores: &[Vec<f64>]) -> Option<f64> {
    let mut cells = Vec::new();
    for d in 0..gold.len() {
        for l in 0..gold[d].len() {
            cells.push((scores[d][l], gold[d][l]));
        }
    }
    auc(&cells)
}

pub fn macro_auc(gold: &[Vec<bool>], scores: &[Vec<f64>]) -> Option<f64> {
    let mut values = Vec::new();
    for l in 0..gold[0].len() {
        let cells: Vec<_> = (0..gold.len()).map(|d| (scores[d][l], gold[d][l])).collect();
        if let Some(a) = auc(&cells) {
            values.push(a);
        }
    }
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Repeated argmax with ties to the lower label id.
pub fn precision_at_k(gold: &[Vec<bool>], scores: &[Vec<f64>], k: usize) -> f64 {
    let mut total = 0.0;
    for d in 0..gold.len() {
        let mut taken = vec![false; scores[d].len()];
        let mut hits = 0.0;
        for _ in 0..k.min(scores[d].len()) {
            let mut best: Option<usize> = None;
            for l in 0..scores[d].len() {
                if taken[l] {
                    continue;
                }
                if best.is_none() || scores[d][l] > scores[d][best.unwrap()] {
                    best = Some(l);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            if gold[d][b] {
                hits += 1.0;
            }
        }
        total += hits / k as f64;
    }
    total / gold.len() as f64
}

/// Exhaustive scan of `{0.02, …, 0.98}` keeping the first maximum.
pub fn best_threshold(gold: &[Vec<bool>], scores: &[Vec<f64>]) -> f64 {
    let mut best_t = 0.0;
    let mut best_f = -1.0;
    for i in 1..50 {
        let t = i as f64 * 0.02;
        let t = (t * 50.0).round() / 50.0;
        let pred: Vec<Vec<bool>> = scores.iter().map(|s| s.iter().map(|&p| p >= t).collect()).collect();
        let f = micro_f1(gold, &pred);
        if f > best_f {
            best_f = f;
            best_t = t;
        }
    }
    best_t
}

/// Scalar LAAT forward for one label: `H` given as columns.
pub fn laat_scalar(h_cols: &[Vec<f64>], v: &[Vec<f64>], w: &[f64], l: &[f64], b: f64) -> (Vec<f64>, f64) {
    let n = h_cols.len();
    let mut scores = vec![0.0; n];
    for j in 0..n {
        for a in 0..v.len() {
            let mut z = 0.0;
            for k in 0..h_cols[j].len() {
                z += v[a][k] * h_cols[j][k];
            }
            scores[j] += w[a] * z.tanh();
        }
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let att: Vec<f64> = e.iter().map(|x| x / sum).collect();
    let mut logit = b;
    for k in 0..l.len() {
        let mut d = 0.0;
        for j in 0..n {
            d += att[j] * h_cols[j][k];
        }
        logit += l[k] * d;
    }
    (att, 1.0 / (1.0 + (-logit).exp()))
}

pub fn bce(y: &[bool], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..y.len() {
        let q = p[i].clamp(1e-7, 1.0 - 1e-7);
        total -= if y[i] { q.ln() } else { (1.0 - q).ln() };
    }
    total / y.len() as f64
}

/// Plain AdamW on a flat parameter vector.
pub struct ScratchAdamW {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl ScratchAdamW {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        for i in 0..theta.len() {
            theta[i] -= lr * wd * theta[i];
            self.m[i] = 0.9 * self.m[i] + 0.1 * g[i];
            self.v[i] = 0.999 * self.v[i] + 0.001 * g[i] * g[i];
            let mh = self.m[i] / (1.0 - 0.9f64.powi(self.t));
            let vh = self.v[i] / (1.0 - 0.999f64.powi(self.t));
            theta[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; x.len()];
        for i in 0..x.len() {
            let less = x.iter().filter(|&&y| y < x[i]).count() as f64;
            let equal = x.iter().filter(|&&y| y == x[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}
