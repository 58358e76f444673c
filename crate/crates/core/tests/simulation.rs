use statrs::distribution::{ChiSquared, ContinuousCDF};
use telegraph::signal::{bin_clicks, histogram};
use telegraph::simulate::*;

/// Kolmogorov–Smirnov distance between a sample and Exp(rate).
fn ks_exponential(mut xs: Vec<f64>, rate: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn holding_times_are_exponential() {
    let spec = make_one_atom_spec(40.0, 18.0, 0.0, 0.0, 200.0).unwrap();
    let traj = sample_trajectory(&spec, 11).unwrap();
    let segs: Vec<(f64, f64, usize)> = traj.segments().collect();
    // the final segment is cut off by the end of the run
    let inner = &segs[..segs.len() - 1];
    for (state, rate) in [(0usize, 18.0), (1, 40.0)] {
        let xs: Vec<f64> = inner.iter().filter(|s| s.2 == state).map(|s| s.1 - s.0).collect();
        assert!(xs.len() > 1000);
        let d = ks_exponential(xs.clone(), rate);
        // 1% critical value
        assert!(d < 1.63 / (xs.len() as f64).sqrt(), "state {state}: D = {d}");
    }
}

#[test]
fn jump_targets_follow_rate_proportions() {
    let spec = make_two_atom_spec(104.0, 52.0, 45.0, [0.0; 3], 100.0).unwrap();
    let traj = sample_trajectory(&spec, 5).unwrap();
    let (mut up, mut down) = (0.0f64, 0.0f64);
    let mut prev = traj.initial_state();
    for j in traj.jumps() {
        if prev == 1 {
            if j.state == 2 {
                up += 1.0;
            } else {
                down += 1.0;
            }
        }
        prev = j.state;
    }
    // from α = 1: up at r_rep = 45, down at r10 = 104
    let p_up = up / (up + down);
    let expect = 45.0 / 149.0;
    let sd = (expect * (1.0 - expect) / (up + down)).sqrt();
    assert!((p_up - expect).abs() < 4.0 * sd, "{p_up} vs {expect}");
}

#[test]
fn constant_state_counts_are_poisson() {
    let spec = make_one_atom_spec(0.0, 0.0, 27_000.0, 27_000.0, 20.0).unwrap();
    let (_, clicks) = simulate(&spec, 3).unwrap();
    let trace = bin_clicks(&clicks, 1e-3).unwrap();
    let h = histogram(&trace);
    let n = trace.len() as f64;
    // Pearson χ² over cells 15..=40 plus the two tails
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut lo_o, mut lo_e, mut hi_o, mut hi_e) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..=80u64 {
        let e = n * telegraph::signal::poisson_pmf(k, 27.0);
        let o = n * h.prob(k);
        if k < 15 {
            lo_o += o;
            lo_e += e;
        } else if k > 40 {
            hi_o += o;
            hi_e += e;
        } else {
            stat += (o - e).powi(2) / e;
            cells += 1;
        }
    }
    stat += (lo_o - lo_e).powi(2) / lo_e + (hi_o - hi_e).powi(2) / hi_e;
    cells += 2;
    let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "χ² = {stat}, p = {p}");
}

#[test]
fn split_state_keeps_alpha_occupation() {
    let base = make_one_atom_spec(40.0, 18.0, 27_000.0, 3_000.0, 100.0).unwrap();
    let split = split_state(&base, 1, &[1_000.0, 5_000.0], 200.0).unwrap();
    let traj = sample_trajectory(&split, 8).unwrap();
    let occ = traj.occupation();
    let alpha1: f64 = split
        .states
        .iter()
        .zip(&occ)
        .filter(|(s, _)| s.alpha == 1)
        .map(|(_, o)| o)
        .sum::<f64>()
        / traj.duration();
    assert!((alpha1 - 18.0 / 58.0).abs() < 0.02, "{alpha1}");
}

#[test]
fn ensemble_is_reproducible_and_order_independent() {
    let spec = make_one_atom_spec(40.0, 18.0, 27_000.0, 3_000.0, 0.2).unwrap();
    let a = simulate_ensemble(&spec, 99, 6).unwrap();
    let b = simulate_ensemble(&spec, 99, 6).unwrap();
    assert_eq!(a, b);
    // repetition i depends only on (seed, i)
    let single = simulate(&spec, derive_seed(99, 4)).unwrap();
    assert_eq!(a[4], single);
}
