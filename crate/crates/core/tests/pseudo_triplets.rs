use std::path::Path;

use image::{Rgb, RgbImage};
use ptg_core::captioner::{stub_caption, Captioner, CaptionerConfig};
use ptg_core::hashing::sha256_hex;
use ptg_core::mask_plan::{decode_rgb, encode_png};
use ptg_core::pseudo_triplets::{build_pseudo_triplets, ManifestRow, PseudoGenOptions};

fn corpus(dir: &Path, n: u32) {
    for i in 0..n {
        let img = RgbImage::from_fn(24 + i % 7, 20 + i % 5, |x, y| {
            Rgb([(x * 9 + i) as u8, (y * 11) as u8, (i * 37 % 251) as u8 + 1])
        });
        img.save(dir.join(format!("{i:04}.png"))).unwrap();
    }
}

#[test]
fn rerun_produces_byte_identical_manifest() {
    let src = tempfile::tempdir().unwrap();
    corpus(src.path(), 100);
    let out = tempfile::tempdir().unwrap();
    let captioner = Captioner::new(CaptionerConfig::stub()).unwrap();
    let opts = PseudoGenOptions {
        seed: 2024,
        workers: 8,
        ..PseudoGenOptions::default()
    };

    let run = || {
        let m = build_pseudo_triplets(src.path(), out.path(), &opts, &captioner).unwrap();
        let manifest = std::fs::read(out.path().join("manifest.jsonl")).unwrap();
        let meta = std::fs::read(out.path().join("manifest.meta.json")).unwrap();
        let masked = std::fs::read(out.path().join("masked/0042.png#masked.png")).unwrap();
        (m, sha256_hex(&manifest), sha256_hex(&meta), sha256_hex(&masked))
    };
    let (first, h1, meta1, png1) = run();
    let (second, h2, meta2, png2) = run();
    assert_eq!(first.triplets.len(), 100);
    assert_eq!(h1, h2);
    assert_eq!(meta1, meta2);
    assert_eq!(png1, png2);
    assert_eq!(first.corpus_id, second.corpus_id);
    assert!(first.triplets.iter().all(|t| t.plan.masked_indices.len() == 48));
}

#[test]
fn caption_describes_the_original_not_the_masked_image() {
    let src = tempfile::tempdir().unwrap();
    corpus(src.path(), 6);
    let out = tempfile::tempdir().unwrap();
    let captioner = Captioner::new(CaptionerConfig::stub()).unwrap();
    build_pseudo_triplets(src.path(), out.path(), &PseudoGenOptions::default(), &captioner).unwrap();

    let manifest = std::fs::read_to_string(out.path().join("manifest.jsonl")).unwrap();
    for line in manifest.lines() {
        let row: ManifestRow = serde_json::from_str(line).unwrap();
        let original = decode_rgb(&std::fs::read(&row.target).unwrap()).unwrap();
        let masked = decode_rgb(&std::fs::read(&row.reference).unwrap()).unwrap();
        let original_hash = sha256_hex(&encode_png(&original).unwrap());
        let masked_hash = sha256_hex(&encode_png(&masked).unwrap());
        assert_ne!(original_hash, masked_hash);
        assert_eq!(row.text, stub_caption(&original_hash));
        assert_ne!(row.text, stub_caption(&masked_hash));
        assert_eq!(masked.dimensions(), (256, 256));
    }
}

#[test]
fn sidecars_match_plans() {
    let src = tempfile::tempdir().unwrap();
    corpus(src.path(), 3);
    let out = tempfile::tempdir().unwrap();
    let captioner = Captioner::new(CaptionerConfig::stub()).unwrap();
    let m = build_pseudo_triplets(src.path(), out.path(), &PseudoGenOptions { seed: 5, ..Default::default() }, &captioner).unwrap();
    for t in &m.triplets {
        let sidecar: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.path().join(format!("masked/{}.json", t.reference.id))).unwrap()).unwrap();
        assert_eq!(sidecar["id"], t.reference.id.as_str());
        assert_eq!(sidecar["seed"], 5);
        let idx: Vec<u32> = serde_json::from_value(sidecar["masked_indices"].clone()).unwrap();
        assert_eq!(idx, t.plan.masked_indices);
    }
}
