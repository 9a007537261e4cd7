//! Overlap and functional-coverage analysis between a synthetic and a test corpus.

use agent_forge::analyzer::{
    coverage, coverage_curve, decompose_all, overlap_report, removal_subsets, CorpusItem,
};
use agent_forge::providers::{sample_instructions, MockChat, MockEmbedder};
use agent_forge::sim::spec::default_suite;

fn corpus(prefix: &str, texts: Vec<String>) -> Vec<CorpusItem> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| CorpusItem {
            id: format!("{prefix}{i:03}"),
            text,
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = default_suite(7);
    let synthetic = corpus(
        "syn",
        specs
            .iter()
            .flat_map(|s| sample_instructions(s, 30, 1))
            .collect(),
    );
    let test = corpus(
        "test",
        specs
            .iter()
            .flat_map(|s| sample_instructions(s, 8, 99))
            .collect(),
    );
    let embedder = MockEmbedder::default();

    let report = overlap_report(&synthetic, &test, &embedder, &[0.5, 0.7, 0.9])?;
    println!(
        "{} synthetic items against {} test items",
        synthetic.len(),
        test.len()
    );
    for t in &report.fraction_above {
        println!("  max similarity > {:.1}: {:.3}", t.threshold, t.fraction);
    }
    for subset in removal_subsets(&synthetic, &report, &[0.1, 0.2], 3)? {
        println!(
            "  removing {:.0}%: {} items left in each ablation subset",
            subset.ratio * 100.0,
            subset.most_similar_removed.len()
        );
    }

    let decomposer = MockChat::new(0);
    let texts = |c: &[CorpusItem]| c.iter().map(|i| i.text.clone()).collect::<Vec<_>>();
    let syn_dec = decompose_all(&texts(&synthetic), &decomposer, &embedder)?;
    let test_dec = decompose_all(&texts(&test), &decomposer, &embedder)?;
    let required: Vec<_> = test_dec
        .iter()
        .map(|d| (d.task.clone(), d.functionalities.clone()))
        .collect();
    let pool: Vec<_> = syn_dec
        .iter()
        .flat_map(|d| d.functionalities.clone())
        .collect();

    let full = coverage(&required, &pool, 0.8);
    println!("\naggregate coverage {:.3}", full.aggregate);
    for point in coverage_curve(&syn_dec, &[10, 20, 40, 80], &required, 0.8)? {
        println!(
            "  {:>3} synthetic tasks -> {:.3}",
            point.size, point.coverage
        );
    }
    Ok(())
}
