//! Per-view trajectory trace for the adapter path.

use mvdlab::diffusion::{euler_ancestral_step, guided_feedback_combine, DiffusionState, GuidanceConfig};
use mvdlab::presets::world_preset;
use mvdlab::recon::{reconstruct_and_render, FitConfig, FitTargets, ReconState};
use mvdlab::sched::NoiseSchedule;
use mvdlab::stack::ViewStack;
use mvdlab::world::{BayesScope, FeedbackPacket};

fn view_dists(x: &ViewStack, renders: &[ViewStack]) -> Vec<(f64, f64)> {
    let sh = x.shape();
    (0..sh.views)
        .map(|v| {
            let d0: f64 = x.view(v).iter().zip(renders[0].view(v)).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.view(v).len() as f64;
            let d1: f64 = x.view(v).iter().zip(renders[1].view(v)).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.view(v).len() as f64;
            (d0, d1)
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let rho: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(7);
    let world = world_preset("bimodal-splat", 64).unwrap();
    let world = world.with_temperature(world.per_pixel_temperature());
    let sched = NoiseSchedule::variance_preserving();
    let fit = FitConfig {
        steps_per_denoise: 12,
        grid_res: 14,
        march_steps: 48,
        fit_resolution: 16,
        lr_density: 0.12,
        lr_color: 0.08,
        rho,
        ..Default::default()
    };
    let guidance = GuidanceConfig {
        lambda_c: 1.0,
        lambda_aug: lambda,
        zero_feedback_prob: 0.2,
    };
    let mut recon = ReconState::new(&fit, world.bounds);
    let mut rng = mvdlab::rng::rng_for(seed, 0);
    let mut state = DiffusionState {
        x_t: ViewStack::noise(world.rgb_shape(), &mut rng),
        t: sched.terminal,
        rng_seed: seed,
    };
    let times = sched.sigma_uniform_times(state.t, 30);
    let renders = world.rgb_renders();
    for (step, pair) in times.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let x_prime = world
            .bayes_denoise(&state.x_t, t, &sched, BayesScope::PerView, None)
            .unwrap();
        let (_, nearest) = mvdlab::losses::mode_distance(&x_prime, &renders).unwrap();
        let targets = FitTargets {
            rgb: x_prime.clone(),
            alpha: world.render_world(nearest).unwrap().select_channels(&[3]),
        };
        let (_, packet) = reconstruct_and_render(
            &mut recon, &targets, &world.cameras, &fit, &world.cameras, None,
        )
        .unwrap();
        let d_fb = world
            .bayes_denoise_augmented(&state.x_t, t, &sched, &packet, fit.rho, None)
            .unwrap();
        let zero = FeedbackPacket::zero(world.rgb_shape());
        let d_zero = world
            .bayes_denoise_augmented(&state.x_t, t, &sched, &zero, fit.rho, None)
            .unwrap();
        let x_hat = guided_feedback_combine(&d_fb, &d_zero, &x_prime, &x_prime, &guidance).unwrap();
        if step % 3 == 0 || step > 26 {
            let vd = view_dists(&x_hat, &renders);
            let fbd = view_dists(&d_fb, &renders);
            print!("step {step:2} t {t:.2} xG/view:");
            for (d0, d1) in &vd {
                print!(" {}", if d0 < d1 { "A" } else { "B" });
            }
            print!("  d_fb/view:");
            for (d0, d1) in &fbd {
                print!(" {}", if d0 < d1 { "A" } else { "B" });
            }
            let tilt = d_fb.max_abs_diff(&d_zero).unwrap();
            println!("  tilt {tilt:.3}  xg0 ({:.4},{:.4})", vd[0].0, vd[0].1);
        }
        let noise = ViewStack::zeros(state.x_t.shape());
        state = euler_ancestral_step(&state, &x_hat, t_next, &noise, &sched, true).unwrap();
    }
    let vd = view_dists(&state.x_t, &renders);
    println!("terminal per-view: {vd:?}");
}
