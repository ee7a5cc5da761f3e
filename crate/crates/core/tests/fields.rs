//! Fields, Hamiltonians and energies against per-particle double loops and
//! finite differences.

use accel_attn::dynamics::{self, ConservativeField};
use accel_attn::instances::{commuting_weights, gaussian_matrix, rng, spd};
use accel_attn::{AttentionWeights, Ensemble, LinearAttention, Matrix, SoftmaxAttention, Vector};
use proptest::prelude::*;

fn row(m: &Matrix, i: usize) -> Vector {
    m.row(i).transpose()
}

fn assert_close(got: &Matrix, want: &Matrix, tol: f64) {
    let err = (got - want).abs().max();
    let scale = want.abs().max().max(1.0);
    assert!(err <= tol * scale, "max deviation {err:e} (scale {scale:e})");
}

/// Weights with generic (non-commuting) symmetric `A` and `V`.
fn generic_weights(seed: u64, d: usize) -> AttentionWeights {
    let mut r = rng(seed);
    let a = spd(&mut r, d, 0.2, 0.8);
    let g = gaussian_matrix(&mut r, d, d, 0.3);
    AttentionWeights::new(a, &g + g.transpose()).unwrap()
}

fn sample(seed: u64, n: usize, d: usize) -> (Matrix, Matrix) {
    let mut r = rng(seed ^ 0xabc);
    (gaussian_matrix(&mut r, n, d, 0.5), gaussian_matrix(&mut r, n, d, 0.5))
}

struct Loops {
    m: Matrix,
    s: Vec<f64>,
}

impl Loops {
    fn new(x: &Matrix, a: &Matrix) -> Self {
        let n = x.nrows();
        let m = Matrix::from_fn(n, n, |i, j| row(x, i).dot(&(a * row(x, j))).exp());
        let s = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).sum()).collect();
        Self { m, s }
    }
}

#[test]
fn linear_fields_match_pair_sums() {
    let (n, d) = (7, 3);
    let w = generic_weights(1, d);
    let (x, y) = sample(1, n, d);
    let (a, v) = (w.a(), w.v());
    let nf = n as f64;
    let mut f = Matrix::zeros(n, d);
    let mut g = Matrix::zeros(n, d);
    for i in 0..n {
        let mut fi = Vector::zeros(d);
        let mut gi = v * row(&x, i);
        for j in 0..n {
            fi += row(&y, j) * row(&x, i).dot(&(a * row(&x, j))) / nf;
            gi -= a * row(&x, j) * row(&y, i).dot(&row(&y, j)) / nf;
        }
        f.set_row(i, &fi.transpose());
        g.set_row(i, &gi.transpose());
    }
    let got = dynamics::linear_fields(&Ensemble::new(x.clone(), y.clone(), 0.0).unwrap(), &w).unwrap();
    assert_close(&got.f, &f, 1e-13);
    assert_close(&got.g, &g, 1e-13);

    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for i in 0..n {
        potential += row(&x, i).dot(&(v * row(&x, i)));
        for j in 0..n {
            kinetic += row(&y, i).dot(&row(&y, j)) * row(&x, i).dot(&(a * row(&x, j)));
        }
    }
    let sys = LinearAttention::new(w.clone());
    let h = sys.hamiltonian(&x, &y).unwrap();
    assert!((h - (kinetic / (2.0 * nf) - potential / 2.0)).abs() < 1e-12);
    let e = sys.energy(&x).unwrap();
    assert!((e + potential / (2.0 * nf)).abs() < 1e-13);
}

#[test]
fn softmax_fields_match_pair_sums() {
    let (n, d) = (6, 3);
    let w = generic_weights(2, d);
    let (x, y) = sample(2, n, d);
    let (a, b) = (w.a(), w.b());
    let nf = n as f64;
    let Loops { m, s } = Loops::new(&x, a);
    let r: Vec<f64> = (0..n).map(|i| row(&y, i).dot(&(b * row(&y, i))) / (s[i] * s[i])).collect();
    let mut f = Matrix::zeros(n, d);
    let mut g = Matrix::zeros(n, d);
    let mut kinetic = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        f.set_row(i, &(b * row(&y, i) * (nf / s[i])).transpose());
        let mut gi = Vector::zeros(d);
        for j in 0..n {
            gi += a * row(&x, j) * ((r[i] + r[j] + 2.0) * m[(i, j)]);
            total += m[(i, j)];
        }
        g.set_row(i, &(gi * (nf / 2.0)).transpose());
        kinetic += row(&y, i).dot(&(b * row(&y, i))) / s[i];
    }
    let got = dynamics::softmax_fields(&Ensemble::new(x.clone(), y.clone(), 0.0).unwrap(), &w).unwrap();
    assert_close(&got.f, &f, 1e-13);
    assert_close(&got.g, &g, 1e-13);

    let sys = SoftmaxAttention::new(w.clone());
    let h = sys.hamiltonian(&x, &y).unwrap();
    let want = nf / 2.0 * kinetic - nf / 2.0 * total;
    assert!((h - want).abs() < 1e-12 * want.abs());
    let e = sys.energy(&x).unwrap();
    assert!((e + total / (2.0 * nf * nf)).abs() < 1e-14);
}

#[test]
fn baseline_matches_pair_sums() {
    let (n, d) = (5, 2);
    let w = generic_weights(3, d);
    let (x, _) = sample(3, n, d);
    let Loops { m, s } = Loops::new(&x, w.a());
    let mut want = Matrix::zeros(n, d);
    for i in 0..n {
        let mut acc = Vector::zeros(d);
        for j in 0..n {
            acc += w.v() * row(&x, j) * m[(i, j)];
        }
        want.set_row(i, &(acc / s[i]).transpose());
    }
    let got = dynamics::baseline_field(&Ensemble::at_rest(x, 0.0).unwrap(), &w).unwrap();
    assert_close(&got, &want, 1e-13);
}

#[test]
fn causal_scores_keep_lower_triangle() {
    let logits = Matrix::from_fn(4, 4, |i, j| (i as f64 - j as f64) * 0.1);
    let s = accel_attn::ScoreMatrix::from_logits(&logits, 700.0, true).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if j <= i { logits[(i, j)].exp() } else { 0.0 };
            assert_eq!(s.m[(i, j)], want);
        }
        assert!((s.rowsum[i] - (0..=i).map(|j| logits[(i, j)].exp()).sum::<f64>()).abs() < 1e-15);
    }
}

fn fd(f: &dyn Fn(&Matrix) -> f64, m: &Matrix) -> Matrix {
    let eps = 1e-5;
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        let mut up = m.clone();
        up[(i, j)] += eps;
        let mut down = m.clone();
        down[(i, j)] -= eps;
        (f(&up) - f(&down)) / (2.0 * eps)
    })
}

fn gradient_error<S: ConservativeField>(sys: &S, x: &Matrix, y: &Matrix) -> f64 {
    let fp = sys.fields(x, y).unwrap();
    let dy = fd(&|yy| sys.hamiltonian(x, yy).unwrap(), y);
    let dx = fd(&|xx| sys.hamiltonian(xx, y).unwrap(), x);
    let rel = |a: &Matrix, b: &Matrix| (a - b).norm() / b.norm().max(1e-12);
    rel(&dy, &fp.f).max(rel(&(-dx), &fp.g))
}

fn permute_rows(m: &Matrix, p: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(p[i], j)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fields_are_hamiltonian_gradients(seed in any::<u64>(), n in 2usize..7, d in 1usize..4) {
        let (x, y) = sample(seed, n, d);
        // the softmax kinetic term is a gradient only for symmetric B
        let w = commuting_weights(&mut rng(seed), d, (0.2, 1.0), (0.2, 1.0)).unwrap();
        prop_assert!(gradient_error(&SoftmaxAttention::new(w), &x, &y) < 1e-6);
        prop_assert!(gradient_error(&LinearAttention::new(generic_weights(seed, d)), &x, &y) < 1e-6);
    }

    #[test]
    fn permutation_equivariance(seed in any::<u64>(), n in 2usize..8, d in 1usize..4, shuffle in any::<u64>()) {
        let w = generic_weights(seed, d);
        let (x, y) = sample(seed, n, d);
        let mut p: Vec<usize> = (0..n).collect();
        let mut state = shuffle;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            p.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (px, py) = (permute_rows(&x, &p), permute_rows(&y, &p));
        let e = Ensemble::new(x.clone(), y.clone(), 0.0).unwrap();
        let pe = Ensemble::new(px.clone(), py.clone(), 0.0).unwrap();

        for (base, perm) in [
            (dynamics::softmax_fields(&e, &w).unwrap(), dynamics::softmax_fields(&pe, &w).unwrap()),
            (dynamics::linear_fields(&e, &w).unwrap(), dynamics::linear_fields(&pe, &w).unwrap()),
        ] {
            prop_assert!((permute_rows(&base.f, &p) - perm.f).abs().max() < 1e-12);
            prop_assert!((permute_rows(&base.g, &p) - perm.g).abs().max() < 1e-10);
        }
        let gamma = dynamics::baseline_field(&e, &w).unwrap();
        prop_assert!((permute_rows(&gamma, &p) - dynamics::baseline_field(&pe, &w).unwrap()).abs().max() < 1e-12);
        let (h, ph) = (
            dynamics::hamiltonian_softmax(&e, &w).unwrap(),
            dynamics::hamiltonian_softmax(&pe, &w).unwrap(),
        );
        prop_assert!((h - ph).abs() <= 1e-12 * h.abs());
    }

    #[test]
    fn scores_are_symmetric_and_positive(seed in any::<u64>(), n in 1usize..9, d in 1usize..4) {
        let mut r = rng(seed);
        let w = commuting_weights(&mut r, d, (-1.0, 1.0), (0.1, 1.0)).unwrap_or_else(|_| generic_weights(seed, d));
        let x = gaussian_matrix(&mut r, n, d, 0.7);
        let s = dynamics::softmax_scores(&Ensemble::at_rest(x, 0.0).unwrap(), &w).unwrap();
        prop_assert!((&s.m - s.m.transpose()).abs().max() <= 1e-12 * s.m.max());
        prop_assert!(s.m.iter().all(|&v| v > 0.0));
    }
}
