//! Dataset file format, CSV import and synthetic generators.

use std::fmt::Write as _;
use std::path::Path;

use pst_core::dataio::{
    generate_synthetic, generate_synthetic_raw, import_csv, Dataset, LabeledRecording, SyntheticRawSpec,
    SyntheticSpec, MAGIC,
};
use pst_core::features::{differential_entropy, extract_de, BandSet, RawRecording, VARIANCE_FLOOR};
use pst_core::layout::{assemble_4d, ElectrodeGrid, FeatureTensor4D};
use pst_core::Error;
use pst_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_features(n: usize, dims: [usize; 4], seed: u64) -> Vec<FeatureTensor4D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| FeatureTensor4D::new(Tensor::from_fn(&dims, |_| rng.sample(StandardNormal)), i % 3).unwrap())
        .collect()
}

#[test]
fn feature_dataset_round_trip_is_byte_exact() {
    let ds = Dataset::features(3, "seed62", random_features(7, [2, 3, 4, 5], 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn raw_dataset_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let names: Vec<String> = ["FP1", "CZ", "OZ"].iter().map(|s| s.to_string()).collect();
    let recs: Vec<LabeledRecording> = (0..4)
        .map(|i| LabeledRecording {
            recording: RawRecording::new(
                names.clone(),
                (0..3).map(|_| (0..50).map(|_| rng.gen::<f64>()).collect()).collect(),
                200.0,
            )
            .unwrap(),
            label: i % 2,
        })
        .collect();
    let ds = Dataset::raw(2, "custom.layout", recs).unwrap();
    let back = Dataset::from_bytes(&ds.to_bytes(), Path::new("mem")).unwrap();
    assert_eq!(back, ds);
    assert!(back.into_features().is_err());
}

#[test]
fn file_size_is_header_plus_payload() {
    let layout_ref = "seed62";
    let ds = Dataset::features(3, layout_ref, random_features(15, [9, 5, 8, 9], 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    ds.write(&path).unwrap();
    // magic, version, endian, kind, reserved, count, rank, 4 dims,
    // n_classes, 15 labels, sample rate, name count, ref length + ref
    let header = 8 + 4 + 1 + 1 + 2 + 8 + 4 + 4 * 8 + 4 + 15 * 4 + 8 + 4 + 4 + layout_ref.len();
    let payload = 15 * 9 * 5 * 8 * 9 * 8;
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, header + payload);
}

#[test]
fn corrupt_files_are_diagnosed() {
    let ds = Dataset::features(3, "seed62", random_features(2, [1, 2, 2, 2], 4)).unwrap();
    let good = ds.to_bytes();
    let p = Path::new("bad.bin");

    let mut bytes = good.clone();
    bytes[3] = b'X';
    let err = Dataset::from_bytes(&bytes, p).unwrap_err();
    assert!(matches!(err, Error::BadMagic { offset: 0, .. }));
    assert!(err.to_string().contains("offset 0"), "{err}");

    let mut bytes = good.clone();
    bytes[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&7u32.to_le_bytes());
    let err = Dataset::from_bytes(&bytes, p).unwrap_err().to_string();
    assert!(err.contains("unsupported version 7"), "{err}");

    let err = Dataset::from_bytes(&good[..good.len() - 3], p).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");

    let err = Dataset::from_bytes(&good[..20], p).unwrap_err().to_string();
    assert!(err.contains("truncated header"), "{err}");

    let mut bytes = good;
    bytes.push(0);
    let err = Dataset::from_bytes(&bytes, p).unwrap_err().to_string();
    assert!(err.contains("trailing"), "{err}");
}

#[test]
fn labels_out_of_range_rejected() {
    let samples = random_features(4, [1, 1, 2, 2], 5);
    assert!(Dataset::features(2, "", samples).is_err());
}

fn csv_for(samples: &[FeatureTensor4D], grid: &ElectrodeGrid, reverse: bool) -> String {
    let [t, s, _, h] = samples[0].dims();
    let mut rows = Vec::new();
    for (id, x) in samples.iter().enumerate() {
        for ti in 0..t {
            for (c, name) in grid.channels().iter().enumerate() {
                let (r, col) = grid.cell(c);
                let mut line = format!("{id},{},{ti},{}", x.label(), name.to_lowercase());
                for b in 0..s {
                    write!(line, ",{:e}", x.data().data()[((ti * s + b) * grid.rows() + r) * h + col]).unwrap();
                }
                rows.push(line);
            }
        }
    }
    if reverse {
        rows.reverse();
    }
    format!("sample,label,t,channel,delta,theta,alpha,beta,gamma\n{}\n", rows.join("\n"))
}

#[test]
fn csv_import_rebuilds_grid_samples() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticSpec {
        n_samples_per_class: 2,
        t: 3,
        signatures: SyntheticSpec::default()
            .signatures
            .into_iter()
            .map(|sig| sig.into_iter().map(|a| pst_core::dataio::Activation { window: (0, 3), ..a }).collect())
            .collect(),
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec, &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for reverse in [false, true] {
        let path = dir.path().join("de.csv");
        std::fs::write(&path, csv_for(&samples, &grid, reverse)).unwrap();
        let (back, n_classes) = import_csv(&path, &grid).unwrap();
        assert_eq!(n_classes, 3);
        assert_eq!(back, samples);
    }
}

#[test]
fn csv_import_errors() {
    let grid = ElectrodeGrid::seed62();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let cases = [
        ("sample,label,t,chan,alpha\n", "header"),
        ("sample,label,t,channel,alpha\n0,0,0,XX9,1.0\n", "not in the layout"),
        ("sample,label,t,channel,alpha\n0,0,0,FP1,1.0\n", "missing"),
        ("sample,label,t,channel,alpha\n0,0,0,FP1,1.0\n0,0,0,fp1,2.0\n", "duplicate"),
        ("sample,label,t,channel,alpha\n0,0,0,FP1,abc\n", "bad value"),
    ];
    for (text, needle) in cases {
        std::fs::write(&path, text).unwrap();
        let err = import_csv(&path, &grid).unwrap_err().to_string();
        assert!(err.contains(needle), "{needle}: {err}");
    }
}

#[test]
fn noiseless_samples_equal_their_template() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticSpec {
        noise_sigma: 0.0,
        n_samples_per_class: 3,
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec, &grid).unwrap();
    for s in &samples {
        assert_eq!(s.data(), &spec.template(s.label(), &grid));
    }
    // every fill cell stays at the fill value
    let occupied = grid.occupied();
    for s in &samples {
        for (i, v) in s.data().data().iter().enumerate() {
            if !occupied[i % occupied.len()] {
                assert_eq!(*v, grid.fill_value());
            }
        }
    }
}

#[test]
fn zero_amplitude_classes_are_indistinguishable() {
    let grid = ElectrodeGrid::seed62();
    let mut spec = SyntheticSpec {
        n_samples_per_class: 200,
        ..SyntheticSpec::default()
    };
    for sig in &mut spec.signatures {
        for a in sig {
            a.amplitude = 0.0;
        }
    }
    let samples = generate_synthetic(&spec, &grid).unwrap();
    let n = samples[0].data().len();
    let class_mean = |c: usize| {
        let mut m = vec![0.0; n];
        for s in samples.iter().filter(|s| s.label() == c) {
            for (a, b) in m.iter_mut().zip(s.data().data()) {
                *a += b / 200.0;
            }
        }
        m
    };
    let (m0, m1) = (class_mean(0), class_mean(1));
    let mean_abs = m0.iter().zip(&m1).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    // difference of two means of 200 N(0, 0.5^2): typical |d| is about 0.04
    assert!(mean_abs < 0.06, "{mean_abs}");
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticSpec::default();
    assert_eq!(generate_synthetic(&spec, &grid).unwrap(), generate_synthetic(&spec, &grid).unwrap());
    let other = SyntheticSpec { seed: 1, ..spec.clone() };
    assert_ne!(generate_synthetic(&spec, &grid).unwrap(), generate_synthetic(&other, &grid).unwrap());
}

#[test]
fn default_spec_contrast_exceeds_three_sigma() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticSpec::default();
    assert!(spec.min_class_contrast(&grid) > 3.0 * spec.noise_sigma);
    assert_eq!(generate_synthetic(&spec, &grid).unwrap().len(), 90);
}

#[test]
fn decision_stump_separates_default_classes() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticSpec::default();
    let samples = generate_synthetic(&spec, &grid).unwrap();
    let templates: Vec<Tensor> = (0..3).map(|c| spec.template(c, &grid)).collect();
    for c in 0..3 {
        // the cell where class c's template rises furthest above every other class
        let cell = (0..templates[c].len())
            .max_by(|&i, &j| {
                let margin = |k: usize| {
                    (0..3)
                        .filter(|&o| o != c)
                        .map(|o| templates[c].data()[k] - templates[o].data()[k])
                        .fold(f64::INFINITY, f64::min)
                };
                margin(i).total_cmp(&margin(j))
            })
            .unwrap();
        // best threshold on that single cell, one class against the rest
        let mut values: Vec<(f64, bool)> = samples.iter().map(|s| (s.data().data()[cell], s.label() == c)).collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = values.len();
        let best = (0..=n)
            .map(|k| {
                let below_neg = values[..k].iter().filter(|v| !v.1).count();
                let above_pos = values[k..].iter().filter(|v| v.1).count();
                below_neg + above_pos
            })
            .max()
            .unwrap();
        let acc = best as f64 / n as f64;
        assert!(acc >= 0.9, "class {c}: stump accuracy {acc}");
    }
}

#[test]
fn raw_generator_puts_power_in_the_signature_band() {
    let grid = ElectrodeGrid::seed62();
    let spec = SyntheticRawSpec {
        features: SyntheticSpec {
            n_samples_per_class: 1,
            noise_sigma: 0.1,
            ..SyntheticSpec::default()
        },
        ..SyntheticRawSpec::default()
    };
    let recs = generate_synthetic_raw(&spec, &grid).unwrap();
    assert_eq!(recs.len(), 3);
    // class 0 carries alpha over the left fronto-central block
    let rec = &recs[0].recording;
    assert_eq!(rec.n_samples(), 9 * 200);
    let frames = extract_de(rec, &spec.bands, 1.0).unwrap();
    assert_eq!(frames.len(), 9);
    let inside = grid.channel_index("FC3").unwrap();
    let outside = grid.channel_index("O2").unwrap();
    for f in &frames {
        let alpha = f.get(inside, 2);
        for b in [0, 1, 3, 4] {
            assert!(alpha > f.get(inside, b) + 1.0, "band {b}");
        }
        assert!(alpha > f.get(outside, 2) + 1.0);
    }
    // the 4D pipeline sees the same contrast on the grid
    let order = grid.channel_order_for(rec.channels()).unwrap();
    assert_eq!(order, (0..62).collect::<Vec<_>>());
    let x = assemble_4d(&frames, &grid, 9).unwrap();
    assert_eq!(x.shape(), &[9, 5, 8, 9]);
}

#[test]
fn raw_generator_floor_and_determinism() {
    let grid = ElectrodeGrid::seed62();
    let mut spec = SyntheticRawSpec::default();
    spec.features.n_samples_per_class = 1;
    spec.features.noise_sigma = 0.0;
    for sig in &mut spec.features.signatures {
        for a in sig {
            a.amplitude = 0.0;
        }
    }
    let recs = generate_synthetic_raw(&spec, &grid).unwrap();
    let frames = extract_de(&recs[1].recording, &BandSet::default(), 1.0).unwrap();
    let floor = differential_entropy(&[0.0; 4]);
    assert_eq!(floor, 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * VARIANCE_FLOOR).ln());
    assert!(frames.iter().all(|f| f.values.iter().all(|&v| v == floor)));

    let spec = SyntheticRawSpec::default();
    let small = SyntheticRawSpec {
        features: SyntheticSpec {
            n_samples_per_class: 1,
            ..spec.features.clone()
        },
        ..spec
    };
    assert_eq!(generate_synthetic_raw(&small, &grid).unwrap(), generate_synthetic_raw(&small, &grid).unwrap());
}
