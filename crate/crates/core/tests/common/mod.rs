//! Reference computations shared by the integration tests. None of them call
//! into the library's probability code.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All `k`-subsets of `0..m` as bit masks.
pub fn subsets(m: u32, k: u32) -> Vec<u32> {
    (0u32..1 << m).filter(|s| s.count_ones() == k).collect()
}

/// Delivery probability of device 0 by walking every placement of `n`
/// devices with `k` distinct channels each out of `m`.
pub fn enumerate_success(n: u32, m: u32, k: u32, gamma: f64) -> f64 {
    let sets = subsets(m, k);
    let others = n as usize - 1;
    let mut total = 0.0;
    let mut count = 0u64;
    let mut idx = vec![0usize; others];
    for &mine in &sets {
        loop {
            let hit = idx.iter().fold(0u32, |acc, &i| acc | sets[i]);
            let free = (mine & !hit).count_ones();
            total += 1.0 - gamma.powi(free as i32);
            count += 1;
            let mut d = 0;
            while d < others {
                idx[d] += 1;
                if idx[d] < sets.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == others {
                break;
            }
        }
    }
    total / count as f64
}

/// Distribution of the number of channels left empty by `devices` devices,
/// by enumeration.
pub fn enumerate_empty(devices: u32, m: u32, k: u32) -> Vec<f64> {
    let sets = subsets(m, k);
    let mut hist = vec![0u64; m as usize + 1];
    let mut idx = vec![0usize; devices as usize];
    loop {
        let hit = idx.iter().fold(0u32, |acc, &i| acc | sets[i]);
        hist[(m - hit.count_ones()) as usize] += 1;
        let mut d = 0;
        while d < idx.len() {
            idx[d] += 1;
            if idx[d] < sets.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == idx.len() {
            break;
        }
    }
    let total: u64 = hist.iter().sum();
    hist.into_iter().map(|h| h as f64 / total as f64).collect()
}

pub fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// Exact delivery probability. `S` of the tagged device's channels are all
/// avoided by one other device with probability `C(M-S,K)/C(M,K)`; inclusion
/// and exclusion over `S` gives the law of the number of free channels.
pub fn exact_success(n: u32, m: u32, k: u32, gamma: &BigRational) -> BigRational {
    let (m, k, d) = (u64::from(m), u64::from(k), n as usize - 1);
    let total = binom(m, k);
    let avoid = |s: u64| -> BigRational {
        let r = BigRational::new(binom(m - s, k), total.clone());
        num_traits::pow(r, d)
    };
    let mut p = BigRational::zero();
    for j in 1..=k {
        let mut exactly = BigRational::zero();
        for s in j..=k {
            let term = BigRational::from_integer(binom(s, j) * binom(k, s)) * avoid(s);
            if (s - j) % 2 == 0 {
                exactly += term;
            } else {
                exactly -= term;
            }
        }
        let lost = num_traits::pow(gamma.clone(), j as usize);
        p += exactly * (BigRational::one() - lost);
    }
    p
}

pub fn to_f64(r: &BigRational) -> f64 {
    let scale = BigInt::from(10u64).pow(30);
    let scaled = (r * BigRational::from_integer(scale.clone())).round().to_integer();
    scaled.to_string().parse::<f64>().unwrap() / 1e30
}

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Monte Carlo delivery probability of device 0 and its standard error.
pub fn monte_carlo_success(n: u32, m: u32, k: u32, gamma: f64, trials: u64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    let mut load = vec![0u32; m as usize];
    let mut mine = Vec::with_capacity(k as usize);
    for _ in 0..trials {
        load.iter_mut().for_each(|l| *l = 0);
        mine.clear();
        mine.extend(sample(&mut rng, m as usize, k as usize));
        for &c in &mine {
            load[c] += 1;
        }
        for _ in 1..n {
            for c in sample(&mut rng, m as usize, k as usize).into_iter() {
                load[c] += 1;
            }
        }
        if mine.iter().any(|&c| load[c] == 1 && !rng.gen_bool(gamma)) {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Exact probability of `(idle, singles, collisions)` when `n` devices each
/// pick one of `m` channels, by dynamic programming over devices.
pub fn exact_observation_prob(n: u32, m: u32, idle: u32, singles: u32, collisions: u32) -> f64 {
    let m_us = m as usize;
    // state[(s, c)] with idle = m - s - c.
    let mut state = vec![vec![0.0f64; m_us + 1]; m_us + 1];
    state[0][0] = 1.0;
    let mf = f64::from(m);
    for _ in 0..n {
        let mut next = vec![vec![0.0f64; m_us + 1]; m_us + 1];
        for s in 0..=m_us {
            for c in 0..=(m_us - s) {
                let p = state[s][c];
                if p == 0.0 {
                    continue;
                }
                let i = m_us - s - c;
                if i > 0 {
                    next[s + 1][c] += p * i as f64 / mf;
                }
                if s > 0 {
                    next[s - 1][c + 1] += p * s as f64 / mf;
                }
                if c > 0 {
                    next[s][c] += p * c as f64 / mf;
                }
            }
        }
        state = next;
    }
    let _ = idle;
    state[singles as usize][collisions as usize]
}
