//! Generate a seeded toy ResNet, save it as a manifest, load it back and classify an image.

use relprop::cli::random_raw_image;
use relprop::model::{forward, generate_toy_resnet, load_model, save_model, ImageSample};

fn main() -> relprop::Result<()> {
    let graph = generate_toy_resnet(7, 4, 2, 5, 8)?;
    let dir = std::env::temp_dir().join("relprop-toy-model");
    let manifest = save_model(&graph, &dir)?;
    println!(
        "wrote {} ({} tensors)",
        manifest.display(),
        graph.tensors.len()
    );

    let loaded = load_model(&manifest)?;
    assert_eq!(loaded, graph);

    let sample = ImageSample::from_raw(random_raw_image(1, 8, 8), &loaded.preprocess)?;
    let probs = forward(&loaded, &sample.normalized)?;
    for (class, p) in probs.data().iter().enumerate() {
        println!("class {class}: {p:.4}");
    }
    Ok(())
}
