use std::collections::{BTreeMap, HashSet};

use ladder_hsi::hsi::*;
use ladder_hsi::Rng;
use proptest::prelude::*;

fn small_cube(h: usize, w: usize, bands: usize, classes: u8, seed: u64) -> HsiCube {
    let mut rng = Rng::new(seed);
    let refl = (0..h * w * bands).map(|_| rng.normal()).collect();
    let gt = (0..h * w).map(|i| (i % (classes as usize + 1)) as u8).collect();
    HsiCube::new(h, w, bands, refl, gt, Some(classes as usize)).unwrap()
}

#[test]
fn cube_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (d, g) = (dir.path().join("c.hsi"), dir.path().join("g.hsi"));
    let cube = small_cube(4, 4, 2, 3, 1);
    cube.save(&d, &g).unwrap();
    let back = load_cube(&d, &g, Some(3)).unwrap();
    assert_eq!(back, cube);
    let first = std::fs::read(&d).unwrap();
    back.save(&d, &g).unwrap();
    assert_eq!(std::fs::read(&d).unwrap(), first);
    assert_eq!(&first[..8], b"HSICUBE1");
}

#[test]
fn label_above_declared_classes_is_rejected() {
    let mut gt = vec![0u8; 4];
    gt[2] = 10;
    assert!(HsiCube::new(2, 2, 1, vec![0.0; 4], gt, Some(9)).is_err());
}

#[test]
fn mismatched_ground_truth_dims_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (d, g) = (dir.path().join("c.hsi"), dir.path().join("g.hsi"));
    small_cube(4, 4, 2, 3, 1).data_file().write(&d).unwrap();
    small_cube(4, 5, 2, 3, 1).gt_file().write(&g).unwrap();
    assert!(load_cube(&d, &g, None).is_err());
}

#[test]
fn window_one_patches_are_spectra() {
    let cube = small_cube(5, 6, 3, 2, 2);
    let pixels = cube.pixels(true);
    let p = PatchSet::extract(&cube, 1, &pixels).unwrap();
    for (i, &(r, c)) in pixels.iter().enumerate() {
        assert_eq!(p.patch(i), cube.spectrum(r, c));
    }
}

#[test]
fn corner_patch_is_mirror_padded() {
    let refl: Vec<f64> = (0..3).flat_map(|r| (0..3).map(move |c| (10 * r + c) as f64)).collect();
    let cube = HsiCube::new(3, 3, 1, refl, vec![1; 9], Some(1)).unwrap();
    let p = PatchSet::extract(&cube, 3, &cube.pixels(false)).unwrap();
    assert_eq!(p.len(), 9);
    assert_eq!(p.patch(0), vec![11.0, 10.0, 11.0, 1.0, 0.0, 1.0, 11.0, 10.0, 11.0]);
    assert_eq!(
        p.patch(4),
        (0..9).map(|i| (10 * (i / 3) + i % 3) as f64).collect::<Vec<_>>()
    );
    assert_eq!(p.patch(8), vec![11.0, 12.0, 11.0, 21.0, 22.0, 21.0, 11.0, 12.0, 11.0]);
}

#[test]
fn even_window_is_a_config_error() {
    let cube = small_cube(3, 3, 1, 1, 3);
    assert!(PatchSet::extract(&cube, 4, &cube.pixels(true)).is_err());
}

#[test]
fn patch_count_and_shape_follow_labeled_pixels() {
    let cube = synthetic_cube(&SyntheticSpec {
        background: 0.4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = DataConfig {
        window: 7,
        pca_components: Some(4),
        labels_per_class: Some(5),
        ..DataConfig::default()
    };
    let d = prepare(&cube, &cfg, 1).unwrap();
    assert_eq!(d.patches.len(), cube.labeled_count());
    assert_eq!(d.sample_shape(), vec![7, 7, 4]);
    assert!(d.patches.labels.iter().all(Option::is_some));
}

#[test]
fn pca_on_axis_aligned_data() {
    // Sample variances 4 and 1 along the two axes.
    let a = 6f64.sqrt();
    let b = 1.5f64.sqrt();
    let x = [a, 0.0, -a, 0.0, 0.0, b, 0.0, -b];
    let m = pca_fit(&x, 2, 2).unwrap();
    assert!((m.explained_variance[0] - 4.0).abs() < 1e-12);
    assert!((m.explained_variance[1] - 1.0).abs() < 1e-12);
    for (got, want) in m.components.iter().zip([1.0, 0.0, 0.0, 1.0]) {
        assert!((got.abs() - want).abs() < 1e-12);
    }
    assert!(pca_fit(&x, 2, 3).is_err());
}

fn correlated(n: usize, c: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mix: Vec<f64> = (0..c * c).map(|_| rng.normal()).collect();
    let mut out = Vec::with_capacity(n * c);
    for _ in 0..n {
        let z: Vec<f64> = (0..c).map(|j| rng.normal() * (c - j) as f64).collect();
        for i in 0..c {
            out.push((0..c).map(|j| mix[i * c + j] * z[j]).sum::<f64>() + 3.0);
        }
    }
    out
}

fn recon_error(m: &PcaModel, x: &[f64]) -> f64 {
    let back = m.inverse_transform(&m.transform(x).unwrap()).unwrap();
    back.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum()
}

#[test]
fn pca_components_are_orthonormal_and_errors_shrink() {
    let (n, c) = (200, 6);
    let x = correlated(n, c, 4);
    let mut last = f64::INFINITY;
    for k in 1..=c {
        let m = pca_fit(&x, c, k).unwrap();
        // independent check of the orthonormality, not via the model helper
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = (0..c).map(|i| m.components[i * k + a] * m.components[i * k + b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let e = recon_error(&m, &x);
        assert!(e <= last + 1e-9, "k={k}: {e} > {last}");
        last = e;
    }
    assert!(last < 1e-8 * n as f64, "full-rank reconstruction error {last}");
}

#[test]
fn full_rank_pca_is_invertible() {
    let x = correlated(50, 4, 5);
    let m = pca_fit(&x, 4, 4).unwrap();
    let back = m.inverse_transform(&m.transform(&x).unwrap()).unwrap();
    let worst = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8);
}

fn labels(per_class: &[usize], background: usize) -> Vec<Option<usize>> {
    let mut v: Vec<Option<usize>> = per_class
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| vec![Some(k); n])
        .collect();
    v.extend(std::iter::repeat_n(None, background));
    v
}

#[test]
fn split_draws_five_per_class() {
    let l = labels(&[40; 9], 0);
    let s = make_split(&l, 9, Some(5), 0.25, 3).unwrap();
    assert_eq!(s.labeled_train.len(), 45);
    s.check_partition(l.len()).unwrap();
    let mut per = BTreeMap::new();
    for &i in &s.labeled_train {
        *per.entry(l[i].unwrap()).or_insert(0) += 1;
    }
    assert!(per.values().all(|&n| n == 5));
    assert_eq!(s.test.len(), 90);
}

#[test]
fn split_is_deterministic_per_seed() {
    let l = labels(&[30, 20, 25], 10);
    let a = make_split(&l, 3, Some(4), 0.25, 9).unwrap();
    assert_eq!(a, make_split(&l, 3, Some(4), 0.25, 9).unwrap());
    assert_ne!(a.test, make_split(&l, 3, Some(4), 0.25, 10).unwrap().test);
}

#[test]
fn small_class_error_names_the_class() {
    let l = labels(&[30, 4, 25], 0);
    let err = make_split(&l, 3, Some(5), 0.25, 1).unwrap_err().to_string();
    assert!(err.contains("class 2"), "{err}");
}

#[test]
fn test_pixels_never_reach_fitting() {
    let cube = synthetic_cube(&SyntheticSpec::default()).unwrap();
    let cfg = DataConfig {
        pca_components: Some(3),
        labels_per_class: Some(5),
        ..DataConfig::default()
    };
    let d = prepare(&cube, &cfg, 2).unwrap();
    let test: HashSet<usize> = d.split.test.iter().copied().collect();
    assert!(d.split.train().iter().all(|i| !test.contains(i)));

    // Refit on the training pixels alone and compare with the stored model.
    let pixels = cube.pixels(false);
    let spectra: Vec<f64> = d
        .split
        .train()
        .iter()
        .flat_map(|&i| cube.spectrum(pixels[i].0, pixels[i].1).to_vec())
        .collect();
    let m = pca_fit(&spectra, cube.bands, 3).unwrap();
    assert_eq!(&m, d.pca.as_ref().unwrap());
}

#[test]
fn balance_examples() {
    let l = labels(&[2, 4], 0);
    let idx: Vec<usize> = (0..6).collect();
    let count = |v: &[usize]| {
        let mut c = [0; 2];
        v.iter().for_each(|&i| c[l[i].unwrap()] += 1);
        c
    };
    let up = balance_labels(&idx, &l, Balance::Upsample, &mut Rng::new(1)).unwrap();
    assert_eq!(count(&up), [4, 4]);
    assert!(idx.iter().all(|i| up.contains(i)));
    let down = balance_labels(&idx, &l, Balance::Downsample, &mut Rng::new(1)).unwrap();
    assert_eq!(count(&down), [2, 2]);

    let even = labels(&[3, 3], 0);
    let idx: Vec<usize> = (0..6).collect();
    let mut same = balance_labels(&idx, &even, Balance::Downsample, &mut Rng::new(2)).unwrap();
    same.sort_unstable();
    assert_eq!(same, idx);
}

#[test]
fn pipeline_is_bit_reproducible() {
    let cube = synthetic_cube(&SyntheticSpec::default()).unwrap();
    let cfg = DataConfig {
        window: 3,
        pca_components: Some(5),
        labels_per_class: Some(5),
        ..DataConfig::default()
    };
    let a = prepare(&cube, &cfg, 11).unwrap();
    let b = prepare(&cube, &cfg, 11).unwrap();
    assert_eq!(a.split, b.split);
    assert_eq!(a.pca, b.pca);
    assert_eq!(a.scaler, b.scaler);
    let (x, y) = (a.patches.to_array(), b.patches.to_array());
    assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_partitions_every_index(
        counts in proptest::collection::vec(10usize..40, 2..6),
        bg in 0usize..20,
        n in 1usize..5,
        frac in 0.0..0.4f64,
        seed in any::<u64>(),
    ) {
        let l = labels(&counts, bg);
        let s = make_split(&l, counts.len(), Some(n), frac, seed).unwrap();
        prop_assert!(s.check_partition(l.len()).is_ok());
        prop_assert_eq!(s.labeled_train.len(), n * counts.len());
        prop_assert!(s.labeled_train.iter().all(|&i| l[i].is_some()));
        prop_assert!(s.test.iter().all(|&i| l[i].is_some()));
    }

    #[test]
    fn reflect_index_stays_in_range(i in -200isize..200, n in 1usize..30) {
        let r = reflect_index(i, n);
        prop_assert!(r < n);
        if (0..n as isize).contains(&i) {
            prop_assert_eq!(r, i as usize);
        }
    }

    #[test]
    fn pca_fit_is_orthonormal(seed in any::<u64>(), c in 2usize..7, n in 8usize..40) {
        let x = correlated(n, c, seed);
        let m = pca_fit(&x, c, c).unwrap();
        prop_assert!(m.orthonormality_error() < 1e-8);
    }

    #[test]
    fn upsampling_reaches_the_largest_class(counts in proptest::collection::vec(1usize..8, 1..5), seed in any::<u64>()) {
        let l = labels(&counts, 0);
        let idx: Vec<usize> = (0..l.len()).collect();
        let up = balance_labels(&idx, &l, Balance::Upsample, &mut Rng::new(seed)).unwrap();
        let max = *counts.iter().max().unwrap();
        prop_assert_eq!(up.len(), max * counts.len());
    }
}
