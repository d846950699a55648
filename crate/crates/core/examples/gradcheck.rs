// Oracle probe: per-zone separability of the synthetic classes using
// simple texture statistics, without CNN training.
use ndarray::Array2;
use zonetrain::datapipe::{zscore, NormalizationSpec};
use zonetrain::geometry::{extract_zone, zone_for_center, UltrasoundFrame};
use zonetrain::synthphantom::*;

fn feats(p: &Array2<f32>) -> Vec<f64> {
    let z = zscore(p, &NormalizationSpec::default());
    let (h, w) = z.dim();
    let ac = |di: usize, dj: usize| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..h - di {
            for j in 0..w - dj {
                num += z[[i, j]] as f64 * z[[i + di, j + dj]] as f64;
                den += (z[[i, j]] as f64).powi(2);
            }
        }
        num / den.max(1e-12)
    };
    let kurt = {
        let n = (h * w) as f64;
        let m4: f64 = z.iter().map(|&v| (v as f64).powi(4)).sum::<f64>() / n;
        m4
    };
    vec![ac(1, 0), ac(2, 0), ac(4, 0), ac(0, 1), ac(0, 2), kurt.ln()]
}

fn main() {
    let (geo, grid) = small_geometry();
    let profiles = default_class_profiles();
    let diff = default_diffraction();
    let n = 12;
    let frames = generate_dataset(n, &profiles, &diff, &geo, 99).unwrap();
    let centers = [1.2308, 1.6154, 2.0, 2.3846, 2.7692];
    // per center: nearest-mean accuracy (train on first half frames, test second half)
    for &c in &centers {
        let zone = zone_for_center(c, 3, &grid, &geo).unwrap();
        let collect = |fs: &[&UltrasoundFrame]| -> Vec<(usize, Vec<f64>)> {
            let mut out = Vec::new();
            for f in fs {
                for p in extract_zone(f, &grid, &zone).unwrap() {
                    out.push((f.label.unwrap(), feats(&p.values)));
                }
            }
            out
        };
        let train: Vec<&UltrasoundFrame> = frames.iter().filter(|f| f.frame_id % (n as u64) < (n as u64) / 2).collect();
        let test: Vec<&UltrasoundFrame> = frames.iter().filter(|f| f.frame_id % (n as u64) >= (n as u64) / 2).collect();
        let tr = collect(&train);
        let te = collect(&test);
        let dim = tr[0].1.len();
        // per-feature std for scaling
        let mut means = vec![[0.0f64; 8]; dim];
        let mut counts = [0usize; 8];
        for (l, f) in &tr {
            counts[*l] += 1;
            for (d, v) in f.iter().enumerate() {
                means[d][*l] += v;
            }
        }
        for d in 0..dim {
            for l in 0..3 {
                means[d][l] /= counts[l] as f64;
            }
        }
        let mut sd = vec![0.0f64; dim];
        for (l, f) in &tr {
            for (d, v) in f.iter().enumerate() {
                sd[d] += (v - means[d][*l]).powi(2);
            }
        }
        for d in 0..dim {
            sd[d] = (sd[d] / tr.len() as f64).sqrt().max(1e-9);
        }
        let mut correct = 0;
        let mut conf = [[0usize; 3]; 3];
        for (l, f) in &te {
            let mut best = 0;
            let mut bestd = f64::MAX;
            for cl in 0..3 {
                let d2: f64 = (0..dim).map(|d| ((f[d] - means[d][cl]) / sd[d]).powi(2)).sum();
                if d2 < bestd {
                    bestd = d2;
                    best = cl;
                }
            }
            conf[*l][best] += 1;
            if best == *l {
                correct += 1;
            }
        }
        println!("center {c:.2}: acc {:.3}  conf {:?}", correct as f64 / te.len() as f64, conf);
    }
    // cross-depth drift: train stats at 2.0, test at other centers
    let zone0 = zone_for_center(2.0, 3, &grid, &geo).unwrap();
    let mut means = vec![[0.0f64; 8]; 6];
    let mut sd = vec![0.0f64; 6];
    {
        let mut all = Vec::new();
        for f in &frames {
            for p in extract_zone(f, &grid, &zone0).unwrap() {
                all.push((f.label.unwrap(), feats(&p.values)));
            }
        }
        let mut counts = [0usize; 8];
        for (l, f) in &all {
            counts[*l] += 1;
            for (d, v) in f.iter().enumerate() {
                means[d][*l] += v;
            }
        }
        for d in 0..6 {
            for l in 0..3 {
                means[d][l] /= counts[l] as f64;
            }
        }
        for (l, f) in &all {
            for (d, v) in f.iter().enumerate() {
                sd[d] += (v - means[d][*l]).powi(2);
            }
        }
        for d in 0..6 {
            sd[d] = (sd[d] / all.len() as f64).sqrt().max(1e-9);
        }
    }
    for &c in &centers {
        let zone = zone_for_center(c, 3, &grid, &geo).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for f in &frames {
            for p in extract_zone(f, &grid, &zone).unwrap() {
                let fv = feats(&p.values);
                let mut best = 0;
                let mut bestd = f64::MAX;
                for cl in 0..3 {
                    let d2: f64 = (0..6).map(|d| ((fv[d] - means[d][cl]) / sd[d]).powi(2)).sum();
                    if d2 < bestd {
                        bestd = d2;
                        best = cl;
                    }
                }
                total += 1;
                if best == f.label.unwrap() {
                    correct += 1;
                }
            }
        }
        println!("focus-stats tested at {c:.2}: acc {:.3}", correct as f64 / total as f64);
    }
}
