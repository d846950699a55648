use zonetrain::datapipe::{build_dataset, frames_for_ids, split_frames, ExtractionMode, NormalizationSpec};
use zonetrain::geometry::default_zones;
use zonetrain::synthphantom::*;
use zonetrain::trainer::{train_single, DeskProfile};
use std::collections::BTreeMap;

fn main() {
    let (geo, grid) = small_geometry();
    let norm = NormalizationSpec::default();
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let mut desk = DeskProfile::default();
    desk.net_config.dropout_p = args[1];
    let mut hp = desk.hyperparams_for(10).unwrap();
    hp.learning_rate = args[0];
    hp.epochs = args[2] as usize;
    let seeds: Vec<u64> = if args.len() > 3 {
        vec![args[3] as u64]
    } else {
        vec![1, 2, 3, 4, 5]
    };
    for seed in seeds {
        let frames = generate_dataset(30, &default_class_profiles(), &default_diffraction(), &geo, seed).unwrap();
        let mut ids: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for f in &frames { ids.entry(f.label.unwrap()).or_default().push(f.frame_id); }
        let split = split_frames(&ids, 10, seed * 100).unwrap();
        let zone = default_zones(&grid, &geo).unwrap()[1].clone();
        for (name, mode) in [("regular", ExtractionMode::Regular), ("zone1", ExtractionMode::Zone(zone.clone()))] {
            let cut = |m: &BTreeMap<usize, Vec<u64>>| {
                let fs: Vec<_> = frames_for_ids(&frames, m).into_iter().cloned().collect();
                build_dataset(&fs, &grid, &mode, &norm, false).unwrap()
            };
            let train = cut(&split.train_ids);
            let val = cut(&split.val_ids);
            let t = std::time::Instant::now();
            let (_, hist) = train_single(&train, &val, &desk.net_config, &hp, seed * 7 + 3).unwrap();
            let escape = hist.iter().position(|e| e.val_accuracy > 0.45);
            let best = hist.iter().map(|e| e.val_accuracy).fold(0.0f64, f64::max);
            let last = hist.last().unwrap().val_accuracy;
            println!("seed {seed} {name}: escape {:?} best {:.2} last {:.2} [{:.0}s]", escape, best, last, t.elapsed().as_secs_f32());
        }
    }
}
