//! Insertion and deletion curves for one explained image.

use relprop::cli::random_raw_image;
use relprop::eval::evaluate_map;
use relprop::lrp::{explain, RuleConfig};
use relprop::model::{generate_toy_resnet, ImageSample};

fn main() -> relprop::Result<()> {
    let graph = generate_toy_resnet(11, 4, 2, 5, 8)?;
    let sample = ImageSample::from_raw(random_raw_image(5, 8, 8), &graph.preprocess)?;
    let e = explain(&graph, &sample, None, &RuleConfig::default())?;
    let (ins, del, scores) = evaluate_map(&graph, &sample.normalized, &e.map, e.class, 16)?;

    println!("fraction  insertion  deletion");
    for (a, b) in ins.points.iter().zip(&del.points) {
        println!("{:>8.4}  {:>9.5}  {:>8.5}", a.0, a.1, b.1);
    }
    println!(
        "insertion auc {:.5}, deletion auc {:.5}, id score {:.5}",
        scores.insertion_auc, scores.deletion_auc, scores.id_score
    );
    Ok(())
}
