//! Skip-connection ablation: symmetric vs ratio splitting, with and without identity skips.
//!
//! Scores are mean insertion-minus-deletion over a batch of random images.

use relprop::cli::random_raw_image;
use relprop::eval::{evaluate_map, mean_std};
use relprop::lrp::{explain, RuleConfig, Splitting};
use relprop::model::{generate_toy_resnet, ImageSample};

fn main() -> relprop::Result<()> {
    let graph = generate_toy_resnet(7, 4, 3, 5, 8)?;
    let samples = (0..20)
        .map(|i| ImageSample::from_raw(random_raw_image(100 + i, 8, 8), &graph.preprocess))
        .collect::<relprop::Result<Vec<_>>>()?;

    let configs = [
        ("(i)", Splitting::Symmetric, false),
        ("(ii)", Splitting::Symmetric, true),
        ("(iii)", Splitting::Ratio, false),
        ("(iv)", Splitting::Ratio, true),
    ];
    println!("method  splitting  identity  insertion  deletion  id");
    for (name, splitting, include_identity) in configs {
        let config = RuleConfig {
            splitting,
            include_identity,
            ..RuleConfig::default()
        };
        let mut scores = Vec::new();
        for s in &samples {
            let e = explain(&graph, s, None, &config)?;
            scores.push(evaluate_map(&graph, &s.normalized, &e.map, e.class, 32)?.2);
        }
        let ins = mean_std(&scores.iter().map(|s| s.insertion_auc).collect::<Vec<_>>()).0;
        let del = mean_std(&scores.iter().map(|s| s.deletion_auc).collect::<Vec<_>>()).0;
        let (id, sd) = mean_std(&scores.iter().map(|s| s.id_score).collect::<Vec<_>>());
        println!(
            "{name:<7} {:<10} {include_identity:<9} {ins:.4}     {del:.4}    {id:.4} ± {sd:.4}",
            format!("{splitting:?}")
        );
    }
    Ok(())
}
