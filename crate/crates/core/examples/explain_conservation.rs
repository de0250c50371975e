//! Explain one prediction and audit relevance conservation at every checkpoint.

use relprop::cli::random_raw_image;
use relprop::eval::conservation_report;
use relprop::lrp::{explain, RuleConfig};
use relprop::model::{generate_toy_resnet, write_attribution, ImageSample};

fn main() -> relprop::Result<()> {
    let graph = generate_toy_resnet(3, 6, 3, 5, 8)?;
    let sample = ImageSample::from_raw(random_raw_image(42, 8, 8), &graph.preprocess)?;
    let e = explain(&graph, &sample, None, &RuleConfig::default())?;
    println!("class {} with p = {:.6}", e.class, e.p_c);

    for row in conservation_report(&e.state, e.p_c).rows {
        println!(
            "{:>14}  sum R = {:.12}  deviation {:.1e}",
            row.label, row.sum_r, row.relative_deviation
        );
    }

    let prefix = std::env::temp_dir().join("relprop-explain");
    let (csv, pgm) = write_attribution(&e.map, &prefix)?;
    println!("wrote {} and {}", csv.display(), pgm.display());
    Ok(())
}
