//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's linear algebra, kernels or selection code.
#![allow(dead_code)]

use crowdenhance_core::gpr::{features_from_map, KeyPixels, PixelFeatures};
use crowdenhance_core::illumination::IlluminationMap;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Gauss-Jordan elimination with partial pivoting; `b` holds one or more
/// right-hand sides as columns.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        assert!(d.abs() > 1e-14, "singular system");
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..b[row].len() {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    (0..n).map(|i| b[i].iter().map(|v| v / a[i][i]).collect()).collect()
}

pub fn exp_kernel(a: &[f64; 3], b: &[f64; 3], ell: f64) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    (-d / ell).exp()
}

/// Raw rows of an `w x h` grid with uniformly random illumination.
pub fn random_rows(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Vec<[f64; 3]>, PixelFeatures) {
    let t: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let map = IlluminationMap::new(w, h, t.clone()).unwrap();
    let features = features_from_map(&map, [1.0; 3]).unwrap();
    let rows = (0..w * h)
        .map(|n| [(n % w) as f64 / (w - 1) as f64, (n / w) as f64 / (h - 1) as f64, t[n]])
        .collect();
    (rows, features)
}

pub fn random_keys(rng: &mut ChaCha8Rng, n: usize, l: usize) -> (Vec<usize>, KeyPixels) {
    let idx = sample(rng, n, l).into_vec();
    (idx.clone(), KeyPixels::new(idx, n).unwrap())
}

/// `(k_x^T K^-1 Q)^T` by direct per-point evaluation.
pub fn direct_prediction(rows: &[[f64; 3]], keys: &[usize], q: &[[f64; 3]], x: &[f64; 3], ell: f64, r: f64) -> [f64; 3] {
    let l = keys.len();
    let gram: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| exp_kernel(&rows[keys[i]], &rows[keys[j]], ell) + if i == j { r } else { 0.0 })
                .collect()
        })
        .collect();
    let alpha = solve_dense(gram, q.iter().map(|p| p.to_vec()).collect());
    let mut out = [0.0; 3];
    for (i, &key) in keys.iter().enumerate() {
        let k = exp_kernel(x, &rows[key], ell);
        for c in 0..3 {
            out[c] += k * alpha[i][c];
        }
    }
    out
}

/// Monte-Carlo expected model output change of adding each candidate to
/// `selected`: the GP is refitted with a label drawn from the current
/// predictive distribution (noise `r` included) and the mean absolute change
/// of the posterior mean over all points is averaged. The same standard
/// normal draws are shared by every candidate.
pub fn monte_carlo_emoc(
    rows: &[[f64; 3]],
    selected: &[usize],
    labels: &[f64],
    candidates: &[usize],
    ell: f64,
    r: f64,
    normals: &[f64],
) -> Vec<f64> {
    let n = rows.len();
    let gram_of = |set: &[usize]| -> Vec<Vec<f64>> {
        set.iter()
            .enumerate()
            .map(|(i, &a)| {
                set.iter()
                    .enumerate()
                    .map(|(j, &b)| exp_kernel(&rows[a], &rows[b], ell) + if i == j { r } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let identity = |m: usize| -> Vec<Vec<f64>> {
        (0..m).map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect()).collect()
    };
    let old_mean: Vec<f64> = if selected.is_empty() {
        vec![0.0; n]
    } else {
        let alpha = solve_dense(gram_of(selected), labels.iter().map(|y| vec![*y]).collect());
        (0..n)
            .map(|p| selected.iter().enumerate().map(|(i, &s)| exp_kernel(&rows[p], &rows[s], ell) * alpha[i][0]).sum())
            .collect()
    };
    let old_inv = if selected.is_empty() {
        Vec::new()
    } else {
        solve_dense(gram_of(selected), identity(selected.len()))
    };

    candidates
        .iter()
        .map(|&c| {
            // predictive distribution of the candidate's noisy label
            let kc: Vec<f64> = selected.iter().map(|&s| exp_kernel(&rows[c], &rows[s], ell)).collect();
            let mut reduction = 0.0;
            for i in 0..selected.len() {
                for j in 0..selected.len() {
                    reduction += kc[i] * old_inv[i][j] * kc[j];
                }
            }
            let sd = (1.0 + r - reduction).sqrt();
            let mu = old_mean[c];

            let mut aug: Vec<usize> = selected.to_vec();
            aug.push(c);
            let aug_inv = solve_dense(gram_of(&aug), identity(aug.len()));
            let k_all: Vec<Vec<f64>> = (0..n)
                .map(|p| aug.iter().map(|&s| exp_kernel(&rows[p], &rows[s], ell)).collect())
                .collect();
            // posterior mean weights per point: k_p^T K_aug^-1
            let w: Vec<Vec<f64>> = k_all
                .iter()
                .map(|k| (0..aug.len()).map(|j| (0..aug.len()).map(|i| k[i] * aug_inv[i][j]).sum()).collect())
                .collect();
            let fixed: Vec<f64> = w
                .iter()
                .map(|wp| labels.iter().enumerate().map(|(i, y)| wp[i] * y).sum())
                .collect();
            let last = aug.len() - 1;
            let mut total = 0.0;
            for z in normals {
                let y = mu + sd * z;
                let mut change = 0.0;
                for p in 0..n {
                    change += (fixed[p] + w[p][last] * y - old_mean[p]).abs();
                }
                total += change / n as f64;
            }
            total / normals.len() as f64
        })
        .collect()
}
