use polyflam_core::assets::Assets;
use polyflam_core::descriptors::DescriptorCatalog;
use polyflam_core::pipeline::{filter_fi_table, real_table, run_target, ExperimentConfig, Target, TopK};

const CONFIG: &str = "
seed = 5
sizes = [150, 300]
k_values = [5, 10, 500]
[forest]
n_trees = 10
[cv]
folds = 3
n_trees = [5, 10]
max_depth = [0, 4]
";

fn fi_table() -> polyflam_core::dataset::FeatureTable {
    let assets = Assets::load_default().unwrap();
    let catalog = DescriptorCatalog::chem1();
    let retained: Vec<String> = filter_fi_table(&assets, &catalog)
        .unwrap()
        .kept
        .into_iter()
        .map(|r| r.name)
        .collect();
    real_table(&assets, Target::Fi, &catalog, &retained).unwrap()
}

#[test]
fn grid_search_picks_best_mean_score() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let run = run_target(&fi_table(), &cfg).unwrap();

    let scores = run.cv_scores.as_ref().expect("grid search ran");
    assert_eq!(scores.len(), 4);
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    let hp = &run.model.forest.hyperparams;
    let chosen = [(5, None), (5, Some(4)), (10, None), (10, Some(4))][best];
    assert_eq!((hp.n_trees, hp.max_depth), chosen);

    // k beyond the feature count is skipped rather than failing the run
    assert_eq!(run.top_k_sweep.sweep.points.len(), 2);
    assert_eq!(run.report.n_synthetic, run.size_sweep.best);
    let k = run.top_k_sweep.sweep.best;
    assert_eq!(run.model.feature_names.len(), k);
    let expected = if k == run.top_k_sweep.ranking.len() {
        TopK::All
    } else {
        TopK::Count(k)
    };
    assert_eq!(run.report.top_k, expected);
}

#[test]
fn runs_are_reproducible() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let table = fi_table();
    let a = run_target(&table, &cfg).unwrap();
    let b = run_target(&table, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.cv_scores, b.cv_scores);
    assert_eq!(a.model.forest, b.model.forest);
}
