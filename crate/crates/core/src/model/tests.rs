use super::*;
use crate::charting::Chart;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn tiny_model(seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (n, dim, d, na) = (5, 8, 2, 4);
    let cal: Vec<Vec<Complex<f64>>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| c(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect()
        })
        .collect();
    let locs = Array2::from_shape_simple_fn((n, d), || normal.sample(&mut rng));
    let chart = Chart::from_locations(locs).unwrap();
    let cfg = ModelConfig {
        embedding_dim: d,
        frequency_count: 4,
        hidden_width: 6,
        sigma_b: 0.5,
        target_subcarrier: None,
        initial_beta: 3.0,
        rng_seed: seed,
    };
    init_model(&cfg, &chart, &cal, na).unwrap()
}

fn random_channel(seed: u64, dim: usize) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..dim)
        .map(|_| c(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect()
}

#[test]
fn softmax_worked_example() {
    let w = softmax(&[0.9, 0.5, 0.1], 2.0);
    let e: Vec<f64> = [1.8f64, 1.0, 0.2].iter().map(|x| x.exp()).collect();
    let total: f64 = e.iter().sum();
    for (wi, ei) in w.iter().zip(&e) {
        assert!(close(*wi, ei / total, 1e-15));
    }
    assert!(close(w[0], 0.6056, 1e-4));
}

#[test]
fn softmax_saturates_to_one_hot() {
    let w = softmax(&[0.2, 0.9, 0.5], 1e6);
    assert_eq!(w, vec![0.0, 1.0, 0.0]);
}

#[test]
fn softmax_small_beta_is_uniform() {
    let w = softmax(&[0.2, 0.9, 0.5, 0.0], 1e-12);
    for x in w {
        assert!(close(x, 0.25, 1e-12));
    }
}

#[test]
fn encode_with_tiny_beta_gives_chart_mean() {
    let mut m = tiny_model(3);
    m.encoder.beta = 1e-12;
    let h = random_channel(9, 8);
    let z = m.encode(&h).unwrap().z;
    let mean = m.encoder.chart.mean_axis(ndarray::Axis(0)).unwrap();
    for (a, b) in z.iter().zip(mean.iter()) {
        assert!(close(*a, *b, 1e-10));
    }
}

#[test]
fn encode_calibration_channel_with_large_beta_returns_its_location() {
    let mut m = tiny_model(4);
    m.encoder.beta = 1e5;
    let h: Vec<_> = m.encoder.calibration.row(2).to_vec();
    let z = m.encode(&h).unwrap().z;
    for (a, b) in z.iter().zip(m.encoder.chart.row(2).iter()) {
        assert!(close(*a, *b, 1e-12));
    }
}

#[test]
fn encoder_is_phase_and_scale_invariant() {
    let m = tiny_model(5);
    let h = random_channel(11, 8);
    let rot = Complex::from_polar(3.7, 1.234);
    let h2: Vec<_> = h.iter().map(|x| x * rot).collect();
    let a = m.encode(&h).unwrap();
    let b = m.encode(&h2).unwrap();
    for (x, y) in a.z.iter().zip(&b.z) {
        assert!(close(*x, *y, 1e-12));
    }
}

#[test]
fn encoder_rejects_zero_channel_and_bad_length() {
    let m = tiny_model(6);
    assert!(matches!(m.encode(&[c(0.0, 0.0); 8]), Err(Error::Domain(_))));
    assert!(matches!(m.encode(&[c(1.0, 0.0); 7]), Err(Error::Dimension { .. })));
}

#[test]
fn relu_c_examples() {
    let out = relu_c(&[c(-1.0, 2.0), c(3.0, -4.0), c(-0.5, -0.5), c(1.5, 2.5)]);
    assert_eq!(out, vec![c(0.0, 2.0), c(3.0, 0.0), c(0.0, 0.0), c(1.5, 2.5)]);
}

#[test]
fn rff_features_have_unit_modulus() {
    let b = Array2::from_shape_vec((3, 2), vec![0.3, -1.2, 2.5, 0.7, -0.1, 4.0]).unwrap();
    for f in rff_features(&b, &[0.37, -2.1]) {
        assert!(close(f.norm(), 1.0, 1e-14));
    }
    let f = rff_features(&b, &[0.0, 0.0]);
    assert!(f.iter().all(|x| *x == c(1.0, 0.0)));
}

#[test]
fn rff_matches_hand_computation() {
    let b = Array2::from_shape_vec((1, 2), vec![0.25, 0.5]).unwrap();
    let f = rff_features(&b, &[1.0, 0.5]);
    // 2pi * (0.25 + 0.25) = pi
    assert!(close(f[0].re, -1.0, 1e-15));
    assert!(close(f[0].im, 0.0, 1e-15));
}

#[test]
fn zero_mlp_outputs_zero_and_decode_is_degenerate() {
    let dec = DecoderParams::new(
        Array2::zeros((3, 2)),
        [
            ComplexDense::zeros(4, 3),
            ComplexDense::zeros(4, 4),
            ComplexDense::zeros(2, 4),
        ],
    )
    .unwrap();
    let features = rff_features(&dec.frequencies, &[0.1, 0.2]);
    assert!(dec.mlp_forward(&features).iter().all(|z| *z == c(0.0, 0.0)));
    assert!(matches!(dec.decode(&[0.1, 0.2]), Err(Error::DegenerateOutput)));
}

#[test]
fn one_by_one_chain_matches_hand_computation() {
    let layer = |w: Complex<f64>, b: Complex<f64>| ComplexDense {
        weights: Array2::from_elem((1, 1), w),
        bias: Array1::from_elem(1, b),
    };
    let dec = DecoderParams::new(
        Array2::from_elem((1, 1), 0.25),
        [
            layer(c(1.0, 1.0), c(0.0, 0.0)),
            layer(c(2.0, 0.0), c(-1.0, 0.5)),
            layer(c(0.0, 1.0), c(0.0, 0.0)),
        ],
    )
    .unwrap();
    // z = 1: phase pi/2, f = j; W1 f = -1 + j -> relu (0, 1) = j
    // W2 j + b2 = 2j - 1 + 0.5j = -1 + 2.5j -> relu 2.5j; W3 = j -> -2.5
    let f = rff_features(&dec.frequencies, &[1.0]);
    let raw = dec.mlp_forward(&f);
    assert!(close(raw[0].re, -2.5, 1e-14) && close(raw[0].im, 0.0, 1e-14));
    let v = dec.decode(&[1.0]).unwrap();
    assert!(close(v[0].re, -1.0, 1e-14));
}

#[test]
fn decode_has_unit_norm() {
    let m = tiny_model(7);
    for seed in 0..20 {
        let h = random_channel(seed, 8);
        let v = m.precoder(&h).unwrap();
        assert_eq!(v.len(), 4);
        assert!(close(linalg::norm(&v), 1.0, 1e-12));
    }
}

#[test]
fn init_is_deterministic() {
    assert_eq!(tiny_model(8), tiny_model(8));
    assert_ne!(tiny_model(8).decoder, tiny_model(9).decoder);
}

#[test]
fn zero_sigma_b_makes_output_independent_of_z() {
    let mut m = tiny_model(10);
    m.decoder.frequencies.fill(0.0);
    let a = m.decode(&[0.3, -0.2]).unwrap();
    let b = m.decode(&[-5.0, 8.0]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn frequency_std_matches_sigma_b() {
    let chart = Chart::from_locations(Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap()).unwrap();
    let cal = vec![vec![c(1.0, 0.0); 2]];
    let cfg = ModelConfig {
        frequency_count: 10_000,
        hidden_width: 1,
        sigma_b: 2.5,
        ..ModelConfig::new(1)
    };
    let m = init_model(&cfg, &chart, &cal, 2).unwrap();
    let b = &m.decoder.frequencies;
    let n = b.len() as f64;
    let mean = b.iter().sum::<f64>() / n;
    let std = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std / 2.5 - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn mlp_init_is_bounded_by_fan_in() {
    let m = tiny_model(12);
    for l in &m.decoder.layers {
        let bound = 1.0 / (l.inputs() as f64).sqrt();
        for z in l.weights.iter().chain(l.bias.iter()) {
            assert!(z.re.abs() <= bound && z.im.abs() <= bound);
        }
    }
}

#[test]
fn default_target_subcarrier_is_middle() {
    let m = tiny_model(13);
    assert_eq!(m.subcarrier_count(), 2);
    assert_eq!(m.target_subcarrier, 1);
}

#[test]
fn flat_round_trip_and_lengths() {
    let mut m = tiny_model(14);
    let flat = m.to_flat(true);
    assert_eq!(flat.len() as u64, m.param_count(true));
    assert_eq!(m.to_flat(false).len() as u64, m.param_count(false));
    let shifted: Vec<f64> = flat.iter().map(|x| x + 1.0).collect();
    m.set_flat(true, &shifted);
    assert_eq!(m.to_flat(true), shifted);
}

#[test]
fn f32_tracks_f64() {
    let m = tiny_model(15);
    let m32: Model<f32> = m.cast();
    let h = random_channel(16, 8);
    let h32: Vec<Complex<f32>> = h.iter().map(|z| Complex::new(z.re as f32, z.im as f32)).collect();
    let v = m.precoder(&h).unwrap();
    let v32 = m32.precoder(&h32).unwrap();
    for (a, b) in v.iter().zip(&v32) {
        assert!((a - Complex::new(b.re as f64, b.im as f64)).norm() < 1e-4);
    }
}

#[test]
fn checkpoint_binary_round_trip() {
    let m = tiny_model(17);
    let bytes = write_checkpoint(&m);
    assert_eq!(&bytes[..4], b"CCKP");
    let back: Model<f64> = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = tiny_model(18);
    let bytes = write_checkpoint(&m);
    let mut flipped = bytes.clone();
    let at = bytes.len() - 12;
    flipped[at] ^= 1;
    assert!(matches!(
        read_checkpoint::<f64>(&flipped),
        Err(Error::Format(crate::FormatError::Checksum { .. }))
    ));
    for cut in [0, 3, 5, 20, 70, bytes.len() - 1] {
        assert!(read_checkpoint::<f64>(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut v2 = bytes.clone();
    v2[4] = 2;
    assert!(matches!(
        read_checkpoint::<f64>(&v2),
        Err(Error::Format(crate::FormatError::UnsupportedVersion { found: 2, .. }))
    ));
}

#[test]
fn checkpoint_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(19);
    save_checkpoint(&m, dir.path().join("m.cckp")).unwrap();
    save_checkpoint_json(&m, dir.path().join("m.json")).unwrap();
    assert_eq!(load_checkpoint::<f64>(dir.path().join("m.cckp")).unwrap(), m);
    assert_eq!(load_checkpoint_json::<f64>(dir.path().join("m.json")).unwrap(), m);
}

#[test]
fn param_shape_counts_match_formula() {
    let s = ParamShape {
        channel_dim: 1024,
        embedding_dim: 2,
        frequency_count: 200,
        hidden_width: 128,
        output_dim: 64,
    };
    assert_eq!(s.param_count(10, false), 101_392);
    assert_eq!(s.param_count(10, true), 121_893);
    assert_eq!(s.param_count(100, true), 306_393);
    assert_eq!(s.param_count(5000, true), 10_351_393);
}

#[test]
fn init_stores_unit_calibration_columns_without_changing_encoding() {
    let locs = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let chart = Chart::from_locations(locs).unwrap();
    let cal = vec![
        random_channel(1, 4).iter().map(|z| z * 1e-5).collect::<Vec<_>>(),
        random_channel(2, 4),
    ];
    let cfg = ModelConfig {
        frequency_count: 3,
        hidden_width: 3,
        ..ModelConfig::new(0)
    };
    let m = init_model(&cfg, &chart, &cal, 2).unwrap();
    for (row, h) in m.encoder.calibration.rows().into_iter().zip(&cal) {
        assert!(close(linalg::norm(row.as_slice().unwrap()), 1.0, 1e-14));
        assert!(close(rho_like(row.as_slice().unwrap(), h), 1.0, 1e-14));
    }
    let raw = EncoderParams::new(
        Array2::from_shape_fn((2, 4), |(i, j)| cal[i][j]),
        m.encoder.chart.clone(),
        m.encoder.beta,
    )
    .unwrap();
    let h = random_channel(3, 4);
    let (a, b) = (m.encode(&h).unwrap().z, raw.encode(&h).unwrap().z);
    for (x, y) in a.iter().zip(&b) {
        assert!(close(*x, *y, 1e-12));
    }
}

fn rho_like(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    linalg::inner(a, b).norm_sqr() / (linalg::norm_sqr(a) * linalg::norm_sqr(b))
}
