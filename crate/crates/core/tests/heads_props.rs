//! Head fixtures and invariants.

#[path = "common/oracles.rs"]
mod oracles;

use labelattn_core::heads::{Head, HeadConfig, HeadKind, Prediction};
use labelattn_core::rng::{stream, truncated_normal_matrix};
use labelattn_core::segmenter::HiddenStates;
use labelattn_core::tensor::{Matrix, ParamStore};
use proptest::prelude::*;

fn hidden(h: Matrix<f64>, spans: &[usize]) -> HiddenStates<f64> {
    let mut ranges = Vec::new();
    let mut off = 0;
    for &s in spans {
        ranges.push(off..off + s);
        off += s;
    }
    HiddenStates {
        positions: (0..h.cols()).map(Some).collect(),
        cls: ranges.iter().map(|r| h.col(r.start)).collect(),
        h,
        spans: ranges,
    }
}

fn set(store: &mut ParamStore<f64>, name: &str, m: Matrix<f64>) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).value = m;
}

fn random_head(kind: HeadKind, d: usize, labels: usize, seed: u64) -> (Head, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let config = HeadConfig { kind, seed, ..Default::default() };
    let head = Head::register(&config, d, labels, &mut store).unwrap();
    // widen the init so attention is far from uniform
    let mut rng = stream(seed, 3, 3);
    for p in store.iter_mut() {
        p.value = truncated_normal_matrix(&mut rng, p.value.rows(), p.value.cols(), 1.0);
    }
    (head, store)
}

#[test]
#[allow(clippy::approx_constant)]
fn laat_worked_example() {
    let mut store = ParamStore::<f64>::new();
    let head = Head::register(&HeadConfig::default(), 2, 1, &mut store).unwrap();
    set(&mut store, "head.v", Matrix::identity(2));
    set(&mut store, "head.w", Matrix::from_rows(&[[1.0, 0.0]]).unwrap());
    set(&mut store, "head.l", Matrix::from_rows(&[[1.0, 1.0]]).unwrap());
    set(&mut store, "head.bias", Matrix::zeros(1, 1));
    let h = Matrix::identity(2);
    let p = head.predict(&store, &hidden(h.clone(), &[2])).unwrap();

    let (att, prob) = oracles::laat_scalar(
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[1.0, 0.0],
        &[1.0, 1.0],
        0.0,
    );
    let a = p.attention[0].row(0);
    for (x, y) in a.iter().zip(&att) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((a[0] - 0.6817).abs() < 1e-3 && (a[1] - 0.3183).abs() < 1e-3, "{a:?}");
    assert!((p.probs[0] - 0.7311).abs() < 1e-3 && (p.probs[0] - prob).abs() < 1e-12);
}

#[test]
fn laat_matches_the_scalar_oracle_on_random_inputs() {
    for seed in 0..20 {
        let (head, store) = random_head(HeadKind::Laat, 3, 1, seed);
        let h = truncated_normal_matrix::<f64, _>(&mut stream(seed, 9, 9), 3, 5, 1.0);
        let p = head.predict(&store, &hidden(h.clone(), &[5])).unwrap();
        let rows = |name: &str| {
            let m = store.value(store.find(name).unwrap());
            (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>()
        };
        let cols: Vec<Vec<f64>> = (0..5).map(|c| h.col(c)).collect();
        let (att, prob) = oracles::laat_scalar(
            &cols,
            &rows("head.v"),
            &rows("head.w")[0],
            &rows("head.l")[0],
            store.value(store.find("head.bias").unwrap()).get(0, 0),
        );
        for (x, y) in p.attention[0].row(0).iter().zip(&att) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((p.probs[0] - prob).abs() < 1e-12);
    }
}

fn assert_rows_stochastic(p: &Prediction) {
    for a in &p.attention {
        for r in 0..a.rows() {
            let row = a.row(r);
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    for kind in [HeadKind::Laat, HeadKind::Caml, HeadKind::BertXml] {
        for seed in 0..100 {
            let (head, store) = random_head(kind, 4, 3, seed);
            let n = 1 + (seed as usize % 9);
            let h = truncated_normal_matrix::<f64, _>(&mut stream(seed, 1, 2), 4, n, 3.0);
            let spans = if n > 2 { vec![n / 2, n - n / 2] } else { vec![n] };
            let p = head.predict(&store, &hidden(h, &spans)).unwrap();
            assert!(!p.attention.is_empty());
            assert_rows_stochastic(&p);
        }
    }
}

#[test]
fn caml_and_laat_agree_in_the_linear_regime() {
    let d = 4;
    let (laat, mut ls) = random_head(HeadKind::Laat, d, 3, 5);
    let (caml, cs) = random_head(HeadKind::Caml, d, 3, 6);
    set(&mut ls, "head.v", Matrix::identity(d));
    let u = cs.value(cs.find("head.u").unwrap()).clone();
    set(&mut ls, "head.w", u);
    let h = truncated_normal_matrix::<f64, _>(&mut stream(8, 8, 8), d, 6, 1.0).map(|x| x * 1e-3 / 2.0);
    let a = laat.predict(&ls, &hidden(h.clone(), &[6])).unwrap();
    let b = caml.predict(&cs, &hidden(h, &[6])).unwrap();
    assert!(a.attention[0].max_abs_diff(&b.attention[0]) < 1e-4);
}

#[test]
fn bert_xml_two_segment_max() {
    // With one token per segment D_i = h, and L = I gives p_i = sigmoid(h_i).
    let mut store = ParamStore::<f64>::new();
    let config = HeadConfig { kind: HeadKind::BertXml, ..Default::default() };
    let head = Head::register(&config, 2, 2, &mut store).unwrap();
    set(&mut store, "head.l", Matrix::identity(2));
    set(&mut store, "head.bias", Matrix::zeros(2, 1));
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let h = Matrix::from_rows(&[[logit(0.2), logit(0.5)], [logit(0.9), logit(0.1)]]).unwrap();
    let p = head.predict(&store, &hidden(h, &[1, 1])).unwrap();
    assert!((p.probs[0] - 0.5).abs() < 1e-12);
    assert!((p.probs[1] - 0.9).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laat_is_invariant_to_token_permutation(seed in 0u64..10_000, n in 1usize..8, shift in 0usize..8) {
        let (head, store) = random_head(HeadKind::Laat, 3, 4, seed);
        let h = truncated_normal_matrix::<f64, _>(&mut stream(seed, 4, 4), 3, n, 1.0);
        let perm: Vec<usize> = (0..n).map(|j| (j * 5 + shift) % n).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == n);
        let hp = Matrix::from_fn(3, n, |r, c| h.get(r, perm[c]));
        let a = head.predict(&store, &hidden(h, &[n])).unwrap();
        let b = head.predict(&store, &hidden(hp, &[n])).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn probability_increases_with_label_score(seed in 0u64..10_000, bump in 0.01f64..2.0) {
        let (head, mut store) = random_head(HeadKind::Laat, 3, 2, seed);
        let h = truncated_normal_matrix::<f64, _>(&mut stream(seed, 5, 5), 3, 4, 1.0);
        let hs = hidden(h, &[4]);
        let before = head.predict(&store, &hs).unwrap();
        // the bias enters the sigmoid argument additively, like <L_i, D_i>
        let id = store.find("head.bias").unwrap();
        let v = store.value(id).get(0, 0);
        store.get_mut(id).value.set(0, 0, v + bump);
        let after = head.predict(&store, &hs).unwrap();
        prop_assert!(after.probs[0] > before.probs[0]);
        prop_assert_eq!(after.probs[1], before.probs[1]);
    }

    #[test]
    fn bert_xml_dominates_each_segment(seed in 0u64..10_000, a in 1usize..5, b in 1usize..5) {
        let (head, store) = random_head(HeadKind::BertXml, 3, 3, seed);
        let h = truncated_normal_matrix::<f64, _>(&mut stream(seed, 6, 6), 3, a + b, 1.0);
        let doc = head.predict(&store, &hidden(h.clone(), &[a, b])).unwrap();
        for (start, len) in [(0, a), (a, b)] {
            let sub = Matrix::from_fn(3, len, |r, c| h.get(r, start + c));
            let seg = head.predict(&store, &hidden(sub, &[len])).unwrap();
            for i in 0..3 {
                prop_assert!(doc.probs[i] >= seg.probs[i]);
            }
        }
        prop_assert!(doc.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
