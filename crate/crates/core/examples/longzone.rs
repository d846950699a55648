use std::collections::BTreeMap;

use zonetrain::datapipe::{build_dataset, frames_for_ids, split_frames, ExtractionMode, NormalizationSpec};
use zonetrain::evalkit::evaluate;
use zonetrain::geometry::default_zones;
use zonetrain::seeds;
use zonetrain::synthphantom::{default_class_profiles, default_diffraction, generate_dataset, small_geometry};
use zonetrain::trainer::{train_single, DeskProfile};

fn hash_name(name: &str) -> u64 {
    name.as_bytes().iter().fold(0u64, |acc, &b| acc.wrapping_mul(131).wrapping_add(b as u64))
}

// args: zone_index epochs k1 k2 ...
fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let zi: usize = args[0].parse().unwrap();
    let epochs: usize = args[1].parse().unwrap();
    let ks: Vec<u64> = args[2..].iter().map(|a| a.parse().unwrap()).collect();

    let (geometry, grid) = small_geometry();
    let norm = NormalizationSpec::default();
    let desk = DeskProfile::default();
    let mut hp = desk.hyperparams_for(10).unwrap();
    hp.epochs = epochs;
    let frames = generate_dataset(30, &default_class_profiles(), &default_diffraction(), &geometry, 42).unwrap();
    let zones = default_zones(&grid, &geometry).unwrap();
    let zone = zones[zi].clone();
    let mode = ExtractionMode::Zone(zone.clone());

    for &k in &ks {
        let rep_seed = seeds::derive(7u64.wrapping_add(k), "rep", k);
        let mut ids: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for f in &frames {
            ids.entry(f.label.unwrap()).or_default().push(f.frame_id);
        }
        let split = split_frames(&ids, 10, rep_seed).unwrap();
        let cut = |m: &BTreeMap<usize, Vec<u64>>| {
            let fs: Vec<_> = frames_for_ids(&frames, m).into_iter().cloned().collect();
            build_dataset(&fs, &grid, &mode, &norm, false).unwrap()
        };
        let train = cut(&split.train_ids);
        let val = cut(&split.val_ids);
        let test = cut(&split.test_ids);
        let model_seed = seeds::derive(rep_seed, "model", hash_name(&zone.name.to_string()));
        let t0 = std::time::Instant::now();
        let (mut model, hist) = train_single(&train, &val, &desk.net_config, &hp, model_seed).unwrap();
        let test_acc = evaluate(&mut model, &test).unwrap().accuracy();
        let vals: Vec<f64> = hist
            .iter()
            .enumerate()
            .filter(|(i, _)| (i + 1) % 100 == 0)
            .map(|(_, e)| (e.val_accuracy * 1000.0).round() / 1000.0)
            .collect();
        println!(
            "zone {zi} k={k}: test {:.3} val-trace {:?} [{:.0}s]",
            test_acc,
            vals,
            t0.elapsed().as_secs_f32()
        );
    }
}
