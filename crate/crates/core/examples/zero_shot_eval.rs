//! Zero-shot classification and retrieval with a toy bag-of-words encoder.
//! Any image-text model fits behind the same `Encoder` trait; precomputed
//! embeddings load through `LookupEncoder`.

use kgharvest::eval::{best_of_protocols, retrieval_recall1, Encoder, EvalItem, EvalSpec, PromptMean, RetrievalSpec};

const VOCAB: [&str; 6] = ["cat", "dog", "car", "photo", "drawing", "red"];

/// Text: word counts over a tiny vocabulary. Image ids look like
/// `img-3:red car`, and the part after the colon is what the picture shows.
struct Words;

fn bag(text: &str) -> Vec<f32> {
    let mut v = vec![0.05; VOCAB.len()];
    for w in text.split(|c: char| !c.is_alphanumeric()) {
        if let Some(i) = VOCAB.iter().position(|&x| x == w.to_lowercase()) {
            v[i] += 1.0;
        }
    }
    v
}

impl Encoder for Words {
    fn dim(&self) -> usize {
        VOCAB.len()
    }
    fn embed_image(&self, image: &str) -> kgharvest::Result<Vec<f32>> {
        let shows = image.split_once(':').map_or("", |(_, s)| s);
        Ok(bag(&format!("photo {shows}")))
    }
    fn embed_text(&self, text: &str) -> kgharvest::Result<Vec<f32>> {
        Ok(bag(text))
    }
}

fn main() -> kgharvest::Result<()> {
    let images = ["img-0:cat", "img-1:dog", "img-2:red car", "img-3:cat dog", "img-4:car", "img-5:dog"];
    let labels = [0, 1, 2, 0, 2, 1];
    let spec = EvalSpec {
        class_names: vec!["cat".into(), "dog".into(), "car".into()],
        prompt_templates: Some(vec!["a photo of a {}.".into(), "a drawing of a {}.".into()]),
        prompt_mean: PromptMean::NormalizeFirst,
        items: images.iter().zip(labels).map(|(i, label)| EvalItem { image: i.to_string(), label }).collect(),
    };
    let report = best_of_protocols(&spec, &Words)?;
    println!(
        "class names {:.3}, prompt ensemble {:?}, reported {:.3} ({:?})",
        report.class_name_accuracy, report.prompt_accuracy, report.best, report.winner
    );

    let retrieval = RetrievalSpec {
        pairs: vec![
            ("img-0:cat".into(), vec!["a cat".into(), "cat photo".into()]),
            ("img-1:dog".into(), vec!["a dog".into()]),
            ("img-2:red car".into(), vec!["red car".into(), "a red car photo".into()]),
        ],
    };
    let r = retrieval_recall1(&retrieval, &Words)?;
    println!("recall@1 image->text {:.3}, text->image {:.3}, mean {:.3}", r.image_to_text, r.text_to_image, r.average);
    Ok(())
}
