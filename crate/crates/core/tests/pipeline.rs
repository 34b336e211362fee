mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use compcond::batch::{run_batch, BatchConfig, BatchRecord, RecordStatus};
use compcond::colordist::{preblur, slic_segment, SlicParams};
use compcond::colorspace::srgb_to_lab;
use compcond::condition::{extract_bundle, load_bundle, save_bundle};
use compcond::filtering::KernelSchedule;
use compcond::imageio::write_rgb;
use compcond::metrics::cycle_consistency;

fn slic() -> SlicParams {
    SlicParams {
        region_size: 16,
        iterations: 8,
        blur_k: Some(15),
        ..SlicParams::default()
    }
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

/// Painted cluster means, recomputed from the labels alone.
fn painted_means(blurred: &compcond::LabImage, labels: &[u32]) -> Vec<f64> {
    let n = *labels.iter().max().unwrap() as usize + 1;
    let mut sums = vec![[0.0; 3]; n];
    let mut counts = vec![0usize; n];
    for (i, &l) in labels.iter().enumerate() {
        let p = blurred.data()[i * 3..i * 3 + 3].to_vec();
        for c in 0..3 {
            sums[l as usize][c] += p[c];
        }
        counts[l as usize] += 1;
    }
    labels
        .iter()
        .flat_map(|&l| {
            let (s, c) = (sums[l as usize], counts[l as usize] as f64);
            [s[0] / c, s[1] / c, s[2] / c]
        })
        .collect()
}

#[test]
fn toy_pair_matches_independent_recomputation() {
    let (a, b) = (natural_like(64, 64, 21), natural_like(64, 64, 22));
    let bundle = extract_bundle(&a, &KernelSchedule::fixed(9).unwrap(), &slic(), 5).unwrap();
    let report = cycle_consistency(&bundle, &b).unwrap();

    let lab_b = srgb_to_lab(&b);
    let struct_b = oracle_local(&lab_b, 9);
    let l_struct = rms(bundle.struct_map().values(), &struct_b);

    let blurred = preblur(&lab_b, &slic()).unwrap();
    let seg = slic_segment(&blurred, &slic()).unwrap();
    let color_b = painted_means(&blurred, &seg.labels);
    let l_color = rms(bundle.color_map().lab().data(), &color_b);

    assert!((report.l_struct - l_struct).abs() < 1e-6, "{} vs {l_struct}", report.l_struct);
    assert!((report.l_color - l_color).abs() < 1e-6, "{} vs {l_color}", report.l_color);
    assert!(l_struct > 0.0 && l_color > 0.0);
}

#[test]
fn painted_colors_are_cluster_means_of_the_blurred_image() {
    let img = srgb_to_lab(&natural_like(80, 56, 23));
    let (map, seg, blurred) = compcond::colordist::color_distribution_map_with_segmentation(&img, &slic()).unwrap();
    let want = painted_means(&blurred, &seg.labels);
    let got = map.lab().data();
    assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-6));
}

#[test]
fn saved_bundle_of_the_source_scores_zero() {
    let img = natural_like(72, 48, 24);
    let bundle = extract_bundle(&img, &KernelSchedule::new(9, 33, 8).unwrap(), &slic(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    let loaded = load_bundle(dir.path()).unwrap();
    let r = cycle_consistency(&loaded, &img).unwrap();
    assert_eq!((r.l_struct, r.l_color), (0.0, 0.0));
    assert_eq!(r.params.k, bundle.provenance().structure.k.unwrap());
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.strip_prefix(dir).unwrap().display().to_string();
        if p.is_dir() {
            for (k, v) in tree(&p) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else {
            out.insert(name, std::fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn batch_is_order_and_worker_independent_and_isolates_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for i in 0..6 {
        let name = format!("img{i}.png");
        write_rgb(&dir.path().join(&name), &natural_like(40 + 4 * i, 32, 30 + i as u64)).unwrap();
        records.push(BatchRecord {
            image: name.into(),
            caption: None,
            id: None,
        });
    }
    records.insert(
        3,
        BatchRecord {
            image: "absent.png".into(),
            caption: Some("missing".into()),
            id: Some("gone".into()),
        },
    );
    let cfg = |out: &str, workers| BatchConfig {
        input_root: Some(dir.path().to_path_buf()),
        output_root: dir.path().join(out),
        workers,
        schedule: KernelSchedule::new(5, 29, 4).unwrap(),
        slic: slic(),
        seed: 77,
    };
    let first = run_batch(&records, &cfg("a", 1)).unwrap();
    assert_eq!((first.records.len(), first.succeeded, first.failed), (7, 6, 1));
    for (i, r) in first.records.iter().enumerate() {
        assert_eq!(r.index, i);
        match &r.status {
            RecordStatus::Failed { reason } => {
                assert_eq!(r.id, "gone");
                assert!(reason.contains("absent.png"), "{reason}");
            }
            RecordStatus::Ok {
                structure_ms, color_ms, ..
            } => assert!(*structure_ms >= 0.0 && *color_ms >= 0.0),
        }
    }
    let p = first.structure.unwrap();
    assert!(p.p50_ms <= p.p95_ms);

    let mut reversed = records.clone();
    reversed.reverse();
    let second = run_batch(&reversed, &cfg("b", 3)).unwrap();
    assert_eq!(second.failed, 1);
    assert_eq!(tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert!(!dir.path().join("a/gone").exists());
}
