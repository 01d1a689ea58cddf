//! Independent, deliberately naive reference implementations used as test
//! oracles. Nothing here calls into the library's numerical code.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Rank with ties averaged: 1 + #smaller + (#equal others) / 2.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64 - 1.0;
            1.0 + smaller + equal / 2.0
        })
        .collect()
}

/// Textbook Pearson r.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

fn permute(v: &mut Vec<f64>, k: usize, visit: &mut dyn FnMut(&[f64])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Two-sided permutation p of Spearman's rho over all n! orderings of y.
pub fn brute_exact_spearman_p(x: &[f64], y: &[f64]) -> f64 {
    let rx = brute_ranks(x);
    let ry = brute_ranks(y);
    let observed = brute_pearson(&rx, &ry).abs();
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut v = ry.clone();
    permute(&mut v, 0, &mut |perm| {
        total += 1;
        if brute_pearson(&rx, perm).abs() >= observed - 1e-9 {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

fn icc(theta: f64, b: f64) -> f64 {
    1.0 / (1.0 + (-(theta - b)).exp())
}

/// Rasch MML by EM on 61 equally spaced points over [-6, 6] with normal
/// weights. The M-step solves each item's score equation by bisection.
/// `x` is respondents x items, complete.
pub fn brute_force_em(x: &[Vec<u8>]) -> Vec<f64> {
    let n_q = 61;
    let grid: Vec<f64> = (0..n_q).map(|q| -6.0 + 12.0 * q as f64 / (n_q - 1) as f64).collect();
    let raw: Vec<f64> = grid.iter().map(|t| (-t * t / 2.0).exp()).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let k = x[0].len();
    let n = x.len() as f64;
    let mut b: Vec<f64> = (0..k)
        .map(|i| {
            let p = x.iter().map(|row| row[i] as f64).sum::<f64>() / n;
            -(p / (1.0 - p)).ln()
        })
        .collect();
    for _ in 0..200_000 {
        let mut nq = vec![0.0; n_q];
        let mut rq = vec![vec![0.0; n_q]; k];
        for row in x {
            let mut post: Vec<f64> = (0..n_q)
                .map(|q| {
                    let mut l = w[q];
                    for i in 0..k {
                        let p = icc(grid[q], b[i]);
                        l *= if row[i] == 1 { p } else { 1.0 - p };
                    }
                    l
                })
                .collect();
            let s: f64 = post.iter().sum();
            post.iter_mut().for_each(|v| *v /= s);
            for q in 0..n_q {
                nq[q] += post[q];
                for i in 0..k {
                    rq[i][q] += post[q] * row[i] as f64;
                }
            }
        }
        let mut change: f64 = 0.0;
        for i in 0..k {
            // observed minus expected correct; increasing in b
            let g = |bb: f64| (0..n_q).map(|q| rq[i][q] - nq[q] * icc(grid[q], bb)).sum::<f64>();
            let (mut lo, mut hi) = (-30.0, 30.0);
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let nb = 0.5 * (lo + hi);
            change = change.max((nb - b[i]).abs());
            b[i] = nb;
        }
        if change < 1e-10 {
            break;
        }
    }
    b
}

/// Block-structured correlation matrix: `c_in` within blocks, `c_out`
/// between. Items are dealt round-robin so blocks are not contiguous.
pub fn block_fixture(sizes: &[usize], c_in: f64, c_out: f64) -> (Vec<String>, Vec<usize>, Vec<Vec<f64>>) {
    let n: usize = sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    let mut left = sizes.to_vec();
    while block.len() < n {
        for (b, l) in left.iter_mut().enumerate() {
            if *l > 0 {
                block.push(b);
                *l -= 1;
            }
        }
    }
    let ids: Vec<String> = (0..n).map(|i| format!("item{i:02}")).collect();
    let dense = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if block[i] == block[j] {
                        c_in
                    } else {
                        c_out
                    }
                })
                .collect()
        })
        .collect();
    (ids, block, dense)
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
