//! Scratch driver for the full 8-seed, 300-epoch trajectory sweep; writes
//! one trajectory CSV per run under /tmp/fullsweep.

use curl_lab_core::synth::{train_contrastive, write_trajectory_csv, TrainConfig};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

fn main() {
    let seeds: Vec<u64> = (0..8).collect();
    let ks: Vec<usize> = vec![256, 64, 16, 4, 1]; // biggest first
    let epochs = 300;
    std::fs::create_dir_all("/tmp/fullsweep").unwrap();
    let mut jobs: Vec<(u64, usize)> = Vec::new();
    for &k in &ks {
        for &s in &seeds {
            jobs.push((s, k));
        }
    }
    let t = Instant::now();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..2 {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (seed, k) = jobs[i];
                let mut cfg = TrainConfig::new(k, seed);
                cfg.epochs = epochs;
                let run = train_contrastive(&cfg).unwrap();
                let path = format!("/tmp/fullsweep/traj_s{seed}_k{k}.csv");
                let mut f = std::fs::File::create(&path).unwrap();
                write_trajectory_csv(&mut f, &run).unwrap();
                eprintln!("done seed={seed} K={k} at {:?}", t.elapsed());
            });
        }
    });
    println!("full sweep: {:?}", t.elapsed());
}
