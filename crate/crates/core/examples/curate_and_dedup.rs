//! Alt-text and image-size filters, then near-duplicate clustering and
//! evaluation-leak detection on image descriptors.

use std::io::Cursor;

use image::ImageFormat;
use kgharvest::curate::{
    cluster_duplicates, describe_bytes, detect_eval_leaks, filter_image, filter_text, DescriptorBackend, DescriptorSet,
    GrayscaleBackend, DEFAULT_DEDUP_THRESHOLD,
};
use kgharvest::mock::SyntheticWeb;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for text in
        ["a tabby cat asleep on a windowsill", "{\"id\": 17, \"alt\": \"photo\"}", &"very long caption ".repeat(40)]
    {
        let verdict = filter_text(text).map_or("kept", |r| r.as_str());
        println!("text  {:<40} {verdict}", text.chars().take(38).collect::<String>());
    }
    for (w, h) in [(640, 480), (63, 65), (1200, 200)] {
        println!("image {w}x{h:<36} {}", filter_image(w, h).map_or("kept", |r| r.as_str()));
    }

    let web = SyntheticWeb::default();
    let backend = GrayscaleBackend::default();
    let mut dataset = DescriptorSet::new(backend.id(), backend.dim());
    // the synthetic web plants img13 as a larger copy of img12
    for n in [10, 11, 12, 13] {
        let bytes = web.image_bytes(n).expect("plain synthetic image");
        dataset.insert(format!("img{n}"), describe_bytes(&backend, &bytes)?)?;
    }
    // a rescaled JPEG re-encode of img11 should land in its cluster
    let original = image::load_from_memory(&web.image_bytes(11).expect("plain synthetic image"))?;
    let mut jpeg = Vec::new();
    original
        .resize(200, 160, image::imageops::FilterType::Lanczos3)
        .write_to(&mut Cursor::new(&mut jpeg), ImageFormat::Jpeg)?;
    dataset.insert("img11-copy".into(), describe_bytes(&backend, &jpeg)?)?;

    println!("\nclusters at cosine >= {DEFAULT_DEDUP_THRESHOLD}:");
    for c in cluster_duplicates(&dataset, DEFAULT_DEDUP_THRESHOLD) {
        println!("  {c:?}");
    }

    let mut eval = DescriptorSet::new(backend.id(), backend.dim());
    eval.insert("eval-a".into(), describe_bytes(&backend, &web.image_bytes(13).expect("plain synthetic image"))?)?;
    for leak in detect_eval_leaks(&dataset, &eval, DEFAULT_DEDUP_THRESHOLD)? {
        println!("leak: {} matches {} (cosine {:.3})", leak.dataset_id, leak.eval_id, leak.similarity);
    }
    Ok(())
}
