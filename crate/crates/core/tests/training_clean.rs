use afflow_core::data::Scenario;
use afflow_core::graph::GridGraph;
use afflow_core::training::{train, TrainConfig, TrainSample};

#[test]
fn noiseless_colors_reach_zero_wrong_pixels_within_50_iterations() {
    let img = Scenario::colors(5).with_size(32, 32).with_noise(0.0).generate().unwrap();
    let g = GridGraph::new(32, 32, 1).unwrap();
    let cfg = TrainConfig { max_iters: 50, ..Default::default() };
    let out = train(&g, &[TrainSample::from_labeled(&img, cfg.rho).unwrap()], &cfg).unwrap();
    let first = out.trace.rows[0].wrong_pct;
    let best = out.trace.rows.iter().map(|r| r.wrong_pct).fold(f64::INFINITY, f64::min);
    assert!(first > 0.0, "uniform weights already label the clean image perfectly");
    assert_eq!(best, 0.0, "trace {:?}", out.trace.rows.iter().map(|r| r.wrong_pct).collect::<Vec<_>>());
}

#[test]
fn multi_image_batches_train_on_the_mean_loss() {
    let set = Scenario::colors(8).with_size(16, 16).with_cells(8).generate_set(3).unwrap();
    let g = GridGraph::new(16, 16, 1).unwrap();
    let samples: Vec<TrainSample> = set.iter().map(|i| TrainSample::from_labeled(i, 1.0).unwrap()).collect();
    let cfg = TrainConfig { max_iters: 15, ..Default::default() };
    let out = train(&g, &samples, &cfg).unwrap();
    let rows = &out.trace.rows;
    assert!(rows.windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(rows.last().unwrap().wrong_pct < rows[0].wrong_pct);
    out.omega.validate().unwrap();
}
