//! Calibration harness: prints per-mode metrics over paired seeds on a
//! preset so suite thresholds can be chosen from data.
//!
//! Usage: cargo run --example calibrate [preset] [n_seeds] [view_res]

use mvdlab::pipeline::{run_pipeline, PipelineConfig, PipelineMode, SamplerConfig};
use mvdlab::presets::world_preset;
use mvdlab::recon::FitConfig;
use mvdlab::rng::derive_seed;
use mvdlab::stats::median;

fn suite_fit() -> FitConfig {
    FitConfig {
        steps_per_denoise: 12,
        grid_res: 14,
        march_steps: 48,
        fit_resolution: 16,
        lr_density: 0.12,
        lr_color: 0.08,
        ..Default::default()
    }
}

fn cfg(mode: PipelineMode, lambda_aug: f64) -> PipelineConfig {
    let mut c = PipelineConfig {
        mode,
        sampler: SamplerConfig {
            steps: 30,
            ..Default::default()
        },
        fit: suite_fit(),
        nerf_to_mesh_fraction: 1.0,
        final_fit_steps: 360,
        consistency_fit_steps: 128,
        ..Default::default()
    };
    c.guidance.lambda_aug = lambda_aug;
    c
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset = args.get(1).map(String::as_str).unwrap_or("bimodal-splat");
    let n_seeds: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let res: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let temperature: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let rho: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let deterministic = args.get(6).map(|s| s == "det").unwrap_or(false);
    let world = world_preset(preset, res).unwrap();

    let mut modes: Vec<(String, PipelineConfig)> = vec![
        ("two_stage".into(), cfg(PipelineMode::TwoStage, 1.0)),
        ("io_sync".into(), cfg(PipelineMode::IoSync, 1.0)),
        ("adapter_l1".into(), cfg(PipelineMode::Adapter, 1.0)),
        ("adapter_l2".into(), cfg(PipelineMode::Adapter, 2.0)),
        ("adapter_l4".into(), cfg(PipelineMode::Adapter, 4.0)),
        ("adapter_l8".into(), cfg(PipelineMode::Adapter, 8.0)),
    ];
    for (_, c) in modes.iter_mut() {
        c.likelihood_temperature = temperature;
        c.fit.rho = rho;
        c.sampler.deterministic = deterministic;
    }

    for (id, c) in &modes {
        let start = std::time::Instant::now();
        let mut cons = Vec::new();
        let mut mode_d = Vec::new();
        let mut mdd = Vec::new();
        let mut split = Vec::new();
        for si in 0..n_seeds {
            let seed = derive_seed(4242, si as u64);
            match run_pipeline(&world, c, seed) {
                Ok(r) => {
                    cons.push(r.metrics["cross_view_consistency"]);
                    mode_d.push(r.metrics["mode_distance"]);
                    mdd.push(r.metrics["mdd"]);
                    split.push(r.metrics["terminal_view_split"]);
                }
                Err(e) => println!("{id} seed {si}: FAILED {e}"),
            }
        }
        println!(
            "{id:12} cons {:.4} mode_dist {:.4} mdd {:.5} split {:.2} [{:.1}s]",
            median(&cons),
            median(&mode_d),
            median(&mdd),
            median(&split),
            start.elapsed().as_secs_f64(),
        );
        println!("   cons all {:?}", cons.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
        println!("   mode all {:?}", mode_d.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
        println!("   mdd  all {:?}", mdd.iter().map(|v| (v * 1e5).round() / 1e5).collect::<Vec<_>>());
        println!("   splt all {:?}", split.iter().map(|v| (v * 1e2).round() / 1e2).collect::<Vec<_>>());
    }
}
