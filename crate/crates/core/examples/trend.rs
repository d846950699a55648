use zonetrain::datapipe::NormalizationSpec;
use zonetrain::evalkit::{repeat_experiment, ExperimentPlan};
use zonetrain::synthphantom::{default_class_profiles, default_diffraction, generate_dataset, small_geometry};
use zonetrain::trainer::{DeskProfile, Strategy};

fn main() {
    let n_train: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let start = std::time::Instant::now();
    let (geometry, grid) = small_geometry();
    let frames = generate_dataset(3 * n_train, &default_class_profiles(), &default_diffraction(), &geometry, 42).unwrap();
    let desk = DeskProfile::default();
    let plan = ExperimentPlan {
        frames,
        geometry,
        grid,
        net_config: desk.net_config.clone(),
        norm: NormalizationSpec::default(),
        hp: desk.hyperparams_for(n_train).unwrap(),
        n_train_images: n_train,
        n_repetitions: reps,
        base_seed: 7,
    };
    let result = repeat_experiment(&plan, &[Strategy::Zone, Strategy::Regular]).unwrap();
    for (cell, stats) in &result.cells {
        println!("{cell}: {:.4} +- {:.4}  runs {:?}", stats.mean, stats.std,
            stats.runs.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f32());
}
