use super::*;
use rand_distr::{Distribution, StandardNormal};

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || {
        c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    })
}

fn assert_cp(w: &PrecodingMatrix<f64>) {
    let target = 1.0 / (w.user_count() as f64).sqrt();
    for col in w.matrix().columns() {
        let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((n - target).abs() <= 1e-10);
    }
}

#[test]
fn rho_examples() {
    let h = [c(1.0, 0.0), c(1.0, 0.0)];
    assert!((rho(&[c(1.0, 0.0), c(0.0, 0.0)], &h).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(rho(&[c(2.0, 2.0), c(2.0, 2.0)], &h).unwrap(), 1.0);
    assert_eq!(rho(&[c(1.0, 0.0), c(-1.0, 0.0)], &h).unwrap(), 0.0);
    assert!(matches!(rho(&[c(0.0, 0.0); 2], &h), Err(Error::Domain(_))));
}

#[test]
fn rho_stats_median_mean_and_cdf() {
    let s = RhoStats::<f64>::from_values(vec![0.1, 0.9, 0.5, 0.7]).unwrap();
    assert!((s.median - 0.6).abs() < 1e-15);
    assert!((s.mean - 0.55).abs() < 1e-15);
    assert_eq!(s.cdf.len(), 101);
    assert_eq!(s.cdf[0], (0.0, 0.0));
    assert_eq!(s.cdf[50].1, 0.5);
    assert_eq!(s.cdf[100], (1.0, 1.0));
    assert!(s.cdf.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(RhoStats::<f64>::from_values(vec![]).is_err());
}

#[test]
fn random_unit_precoders_average_one_over_dimension() {
    let na = 64;
    let h = random_matrix(na, 1, 1);
    let h: Vec<_> = h.column(0).to_vec();
    let draws = random_matrix(na, 20_000, 2);
    let mean = draws
        .columns()
        .into_iter()
        .map(|v| rho(&v.to_vec(), &h).unwrap())
        .sum::<f64>()
        / 20_000.0;
    assert!((mean * na as f64 - 1.0).abs() < 0.05, "mean {mean}");
}

#[test]
fn reconstruct_scales_to_norm() {
    let v = linalg::normalized(&[c(3.0, 4.0), c(0.0, 1.0)]).unwrap();
    let r = reconstruct_channel(&v, 5.0).unwrap();
    assert!((linalg::norm(&r) - 5.0).abs() < 1e-14);
    assert_eq!(reconstruct_channel(&v, 1.0).unwrap(), v);
    assert!(reconstruct_channel(&v, 0.0).is_err());
    assert!((rho(&r, &v).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn mrt_examples() {
    let h = random_matrix(4, 1, 3);
    let w = mrt_precoder(&h).unwrap();
    assert_cp(&w);
    assert!((rho(&w.matrix().column(0).to_vec(), &h.column(0).to_vec()).unwrap() - 1.0).abs() < 1e-14);

    let eye = Array2::from_shape_fn((2, 2), |(i, j)| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
    let w = mrt_precoder(&eye).unwrap();
    let gram = w.matrix().t().mapv(|z| z.conj()).dot(w.matrix());
    assert!((gram[(0, 0)].re - 0.5).abs() < 1e-15 && gram[(0, 1)].norm() < 1e-15);

    let mut scaled = random_matrix(3, 2, 4);
    let base = mrt_precoder(&scaled).unwrap();
    scaled.column_mut(1).mapv_inplace(|z| z * 5.0);
    let w = mrt_precoder(&scaled).unwrap();
    assert!((w.matrix() - base.matrix()).iter().all(|z| z.norm() < 1e-15));

    let mut z = random_matrix(3, 2, 5);
    z.column_mut(1).fill(c(0.0, 0.0));
    let err = mrt_precoder(&z).unwrap_err().to_string();
    assert!(err.contains("column 1"), "{err}");
}

#[test]
fn mmse_identity_equals_mrt() {
    let eye = Array2::from_shape_fn((2, 2), |(i, j)| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
    for s2 in [1e-6, 0.3, 10.0] {
        let w = mmse_precoder(&eye, s2).unwrap();
        let expect = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w.matrix()[(0, 0)].re - expect).abs() < 1e-14);
        assert!(w.matrix()[(0, 1)].norm() < 1e-14);
    }
}

#[test]
fn mmse_approaches_mrt_for_large_noise() {
    for seed in 0..20 {
        let h = random_matrix(6, 3, seed);
        let power: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let w = mmse_precoder(&h, 1e9 * power).unwrap();
        let m = mrt_precoder(&h).unwrap();
        assert_cp(&w);
        assert!((w.matrix() - m.matrix()).iter().all(|z| z.norm() <= 1e-6));
    }
}

#[test]
fn mmse_small_noise_is_near_zero_forcing() {
    for seed in 0..20 {
        let h = random_matrix(4, 2, 100 + seed);
        let w = mmse_precoder(&h, 1e-8).unwrap();
        assert_cp(&w);
        let g = h.t().mapv(|z| z.conj()).dot(w.matrix());
        for k in 0..2 {
            let j = 1 - k;
            assert!(g[(k, j)].norm() <= 1e-4 * g[(k, k)].norm());
        }
    }
}

#[test]
fn sum_rate_examples() {
    // K = 1 with |h^H w|^2 / s2 = 1.
    let h = Array2::from_elem((1, 1), c(2.0, 0.0));
    let w = Array2::from_elem((1, 1), c(1.0, 0.0));
    assert!((sum_rate(&h, &w, &[4.0]).unwrap() - 1.0).abs() < 1e-15);
    let zero = Array2::from_elem((1, 1), c(0.0, 0.0));
    assert_eq!(sum_rate(&h, &zero, &[4.0]).unwrap(), 0.0);

    // Orthogonal channels: no cross terms.
    let h = Array2::from_shape_vec((2, 2), vec![c(3.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 3.0)]).unwrap();
    let w = mrt_precoder(&h).unwrap();
    let s2: f64 = 0.7;
    let g: f64 = 9.0 / 2.0 / s2;
    let expect = 2.0 * (1.0 + g).log2();
    assert!((sum_rate(&h, w.matrix(), &[s2, s2]).unwrap() - expect).abs() < 1e-12);
    assert!(sum_rate(&h, w.matrix(), &[s2]).is_err());
}

#[test]
fn sum_rate_decreases_with_noise() {
    let h = random_matrix(4, 3, 9);
    let w = mmse_precoder(&h, 0.1).unwrap();
    let mut prev = f64::INFINITY;
    for s2 in [0.01, 0.1, 1.0, 10.0] {
        let r = sum_rate(&h, w.matrix(), &[0.05, s2, 0.05]).unwrap();
        assert!(r <= prev);
        prev = r;
    }
}

#[test]
fn partition_is_disjoint_and_seeded() {
    let p = GroupPartition::random(10, 3, 7).unwrap();
    assert_eq!(p.groups().len(), 3);
    let mut all: Vec<usize> = p.groups().iter().flatten().copied().collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 9);
    assert_eq!(p, GroupPartition::random(10, 3, 7).unwrap());
    assert!(GroupPartition::random(2, 3, 7).is_err());
    assert!(GroupPartition::new(vec![vec![0, 1], vec![1, 2]]).is_err());
}

fn samples(n: usize, na: usize, seed: u64) -> Vec<ChannelSample<f64>> {
    let h = random_matrix(na * 2, n, seed);
    (0..n)
        .map(|i| ChannelSample::new(h.column(i).to_vec(), [0.0, 0.0], na, crate::datagen::Split::Test).unwrap())
        .collect()
}

#[test]
fn oracle_sweep_matches_true_curves() {
    let data = samples(40, 4, 11);
    let refs: Vec<_> = data.iter().collect();
    let p = GroupPartition::random(refs.len(), 4, 1).unwrap();
    let curve = sum_rate_sweep_by(&refs, 1, &p, &[-10.0, 0.0, 10.0, 20.0], |s| {
        Ok(s.subcarrier(1).to_vec())
    })
    .unwrap();
    assert_eq!(curve.points.len(), 16);
    let lm = curve.rates(PrecoderKind::LearnedMrt);
    let tm = curve.rates(PrecoderKind::TrueMrt);
    let lx = curve.rates(PrecoderKind::LearnedMmse);
    let tx = curve.rates(PrecoderKind::TrueMmse);
    for i in 0..4 {
        assert!((lm[i].1 - tm[i].1).abs() <= 1e-10);
        assert!((lx[i].1 - tx[i].1).abs() <= 1e-10);
        assert!(tm[i].1 >= 0.0);
    }
}

#[test]
fn noise_calibration_sets_mrt_snr() {
    let s2 = noise_variance_for_snr(8.0, 4, 10.0);
    assert!((8.0 / 4.0 / s2 - 10.0).abs() < 1e-12);
}

#[test]
fn compression_ratio_examples() {
    assert_eq!(compression_ratio(1, 1, 1).unwrap(), Ratio::from_integer(1));
    assert_eq!(compression_ratio(64, 16, 3).unwrap(), Ratio::from_integer(512));
    assert_eq!(compression_ratio(64, 16, 2).unwrap(), Ratio::new(2048, 3));
    assert_eq!(
        compression_ratio_without_norm(64, 16, 2).unwrap(),
        Ratio::from_integer(1024)
    );
    assert!(compression_ratio(0, 1, 1).is_err());
}

#[test]
fn summary_serializes_ratio() {
    let s = CompressionSummary::from(Ratio::new(2048u64, 3));
    assert_eq!((s.numerator, s.denominator), (2048, 3));
    assert!((s.value - 682.666_666_666_666_6).abs() < 1e-9);
}
