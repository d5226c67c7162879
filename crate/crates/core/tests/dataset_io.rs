use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use spamcam::dataset::{
    encode_idx, parse_idx, parse_idx_images, parse_idx_labels, read_sample_dir, synthesize_mnist128, synthesize_range,
    write_sample_dir, BalancedBatches, IdxArray, MnistSet, Split, CANVAS, MAX_OFFSET, POSITIVE_DIGIT,
};
use spamcam::Error;

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SPAMCAM_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if dir.join("t10k-images-idx3-ubyte").exists() {
        Some(dir)
    } else {
        eprintln!("skipping: MNIST files not found in {}", dir.display());
        None
    }
}

fn arb_idx() -> impl Strategy<Value = IdxArray> {
    prop_oneof![
        (0usize..40).prop_map(|n| vec![n]),
        (0usize..5, 1usize..9, 1usize..9).prop_map(|(n, r, c)| vec![n, r, c]),
    ]
    .prop_flat_map(|dims| {
        let len: usize = dims.iter().product();
        (Just(dims), prop::collection::vec(any::<u8>(), len))
    })
    .prop_map(|(dims, data)| IdxArray { dims, data })
}

/// Synthetic digit set with a blob of ink per image, labels cycling 0..9.
fn toy_set(n: usize) -> MnistSet {
    let mut data = Vec::with_capacity(n * 784);
    for i in 0..n {
        for p in 0..784 {
            let (x, y) = (p % 28, p / 28);
            let lit = x >= 4 + i % 5 && x < 20 && y >= 6 && y < 22 - i % 3;
            data.push(if lit { 50 + (i * 7 + p) as u8 % 200 } else { 0 });
        }
    }
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    MnistSet::new(IdxArray { dims: vec![n, 28, 28], data }, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn idx_round_trip(a in arb_idx()) {
        let bytes = encode_idx(&a).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 4 * a.dims.len() + a.data.len());
        prop_assert_eq!(parse_idx(&bytes).unwrap(), a);
    }

    #[test]
    fn any_truncation_or_extension_is_rejected(a in arb_idx(), cut in any::<prop::sample::Index>(), extra in 1usize..5) {
        let bytes = encode_idx(&a).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(parse_idx(&bytes[..n]).is_err());
        let mut longer = bytes.clone();
        longer.extend(std::iter::repeat_n(0, extra));
        prop_assert!(parse_idx(&longer).is_err());
    }

    #[test]
    fn synthesized_canvas_is_the_digit_at_its_offset(seed in any::<u64>()) {
        let set = toy_set(30);
        for s in synthesize_mnist128(&set, seed, 30).unwrap() {
            prop_assert!(s.ox <= MAX_OFFSET && s.oy <= MAX_OFFSET);
            prop_assert_eq!(s.label == 1, s.digit == POSITIVE_DIGIT);
            let canvas = s.canvas_bytes();
            let ink: Vec<(usize, usize)> = (0..CANVAS * CANVAS).filter(|&i| canvas[i] > 0).map(|i| (i % CANVAS, i / CANVAS)).collect();
            // The truth box is the tight box around the nonzero pixels.
            let b = s.gt_box;
            prop_assert_eq!(ink.iter().map(|p| p.0).min().unwrap(), b.x0);
            prop_assert_eq!(ink.iter().map(|p| p.0).max().unwrap() + 1, b.x1);
            prop_assert_eq!(ink.iter().map(|p| p.1).min().unwrap(), b.y0);
            prop_assert_eq!(ink.iter().map(|p| p.1).max().unwrap() + 1, b.y1);
            prop_assert!(b.x0 >= s.ox && b.x1 <= s.ox + 28 && b.y0 >= s.oy && b.y1 <= s.oy + 28);
        }
    }

    #[test]
    fn balanced_batches_hold_half_positives(seed in any::<u64>(), batch in 2usize..40, pos in 1usize..30, neg in 1usize..60) {
        let labels: Vec<u8> = (0..pos + neg).map(|i| u8::from(i < pos)).collect();
        let mut b = BalancedBatches::new(&labels, batch, seed).unwrap();
        let epoch = b.epoch();
        prop_assert_eq!(epoch.len(), (pos + neg).div_ceil(batch));
        for idx in epoch {
            prop_assert_eq!(idx.len(), batch);
            prop_assert_eq!(idx.iter().filter(|&&i| labels[i] == 1).count(), batch.div_ceil(2));
        }
    }
}

#[test]
fn rejects_bad_magic_rank_and_truncation_with_diagnostics() {
    let labels = encode_idx(&IdxArray { dims: vec![3], data: vec![1, 2, 3] }).unwrap();
    let images = encode_idx(&IdxArray { dims: vec![2, 2, 2], data: vec![9; 8] }).unwrap();

    let mut bad = labels.clone();
    bad[2] = 0x0D;
    let msg = parse_idx(&bad).unwrap_err().to_string();
    assert!(msg.contains("magic") && msg.contains("0x00000d01"), "{msg}");

    let mut rank2 = labels.clone();
    rank2[3] = 2;
    let msg = parse_idx(&rank2).unwrap_err().to_string();
    assert!(msg.contains("rank 2"), "{msg}");

    let msg = parse_idx_labels(&images).unwrap_err().to_string();
    assert!(msg.contains("found rank 3"), "{msg}");
    let msg = parse_idx_images(&labels).unwrap_err().to_string();
    assert!(msg.contains("found rank 1"), "{msg}");

    match parse_idx(&images[..images.len() - 3]).unwrap_err() {
        Error::Length { offset, expected, found, .. } => assert_eq!((offset, expected, found), (16, 8, 5)),
        e => panic!("expected a length error, got {e}"),
    }
    assert!(matches!(parse_idx(&labels[..6]).unwrap_err(), Error::Length { offset: 4, expected: 4, found: 2, .. }));
}

#[test]
fn mismatched_counts_and_non_digit_labels_are_rejected() {
    let images = IdxArray { dims: vec![2, 28, 28], data: vec![1; 2 * 784] };
    assert!(MnistSet::new(images.clone(), vec![1]).is_err());
    assert!(MnistSet::new(images, vec![1, 10]).unwrap_err().to_string().contains("not a digit"));
}

#[test]
fn sample_dir_round_trip() {
    let set = toy_set(20);
    let samples = synthesize_range(&set, 9, 5, 12).unwrap();
    assert_eq!(samples[0].id, 5);
    let dir = tempfile::tempdir().unwrap();
    write_sample_dir(dir.path(), &samples).unwrap();
    assert_eq!(read_sample_dir(dir.path()).unwrap(), samples);

    // A stray pixel outside the digit window breaks the manifest contract.
    let f = dir.path().join(spamcam::dataset::sample_file_name(samples[0].id));
    let mut bytes = std::fs::read(&f).unwrap();
    let s = &samples[0];
    let outside = if s.oy > 0 { 0 } else { (CANVAS - 1) * CANVAS + CANVAS - 1 };
    bytes[outside] = 1;
    std::fs::write(&f, bytes).unwrap();
    assert!(read_sample_dir(dir.path()).is_err());
}

#[test]
fn synthesis_is_a_pure_function_of_the_seed() {
    let set = toy_set(50);
    let a = synthesize_mnist128(&set, 42, 40).unwrap();
    assert_eq!(a, synthesize_mnist128(&set, 42, 40).unwrap());
    assert_ne!(a, synthesize_mnist128(&set, 43, 40).unwrap());
    // Consecutive ranges continue the same stream.
    let tail = synthesize_range(&set, 42, 25, 15).unwrap();
    assert_eq!(&a[25..], &tail[..]);
    assert!(synthesize_range(&set, 42, 45, 10).is_err());
}

/// The test file as decoded here agrees with an independent numpy reader.
#[test]
fn t10k_matches_numpy_reader() {
    let Some(dir) = mnist_dir() else { return };
    let set = MnistSet::load(&dir, Split::Test).unwrap();
    assert_eq!(set.len(), 10_000);
    assert_eq!(set.labels()[0], 7);

    let script = r#"
import sys, numpy as np
d = sys.argv[1]
raw = open(d + "/t10k-images-idx3-ubyte", "rb").read()
magic, n, r, c = np.frombuffer(raw[:16], dtype=">u4")
img = np.frombuffer(raw[16:], dtype=np.uint8).reshape(n, r, c)
lab = np.frombuffer(open(d + "/t10k-labels-idx1-ubyte", "rb").read()[8:], dtype=np.uint8)
print(hex(magic), n, r, c, len(lab), lab[0], int(img.astype(np.int64).sum()), int(img[0].astype(np.int64).sum()), int(lab.astype(np.int64).sum()))
"#;
    let out = match Command::new("python3").arg("-c").arg(script).arg(&dir).output() {
        Ok(o) if o.status.success() => o,
        Ok(o) => panic!("numpy reader failed: {}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => {
            eprintln!("skipping numpy cross-check: {e}");
            return;
        }
    };
    let total: u64 = (0..set.len()).flat_map(|i| set.image(i).iter()).map(|&b| b as u64).sum();
    let first: u64 = set.image(0).iter().map(|&b| b as u64).sum();
    let label_sum: u64 = set.labels().iter().map(|&l| l as u64).sum();
    let mine = format!("0x803 {} {} {} {} {} {total} {first} {label_sum}", set.len(), set.rows(), set.cols(), set.len(), set.labels()[0]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), mine);
}
