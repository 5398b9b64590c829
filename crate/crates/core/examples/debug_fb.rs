//! Prints per-step feedback tilt magnitudes for one adapter run.

use mvdlab::pipeline::{PipelineConfig, PipelineMode, SamplerConfig};
use mvdlab::presets::world_preset;
use mvdlab::recon::{reconstruct_and_render, FitConfig, FitTargets, ReconState};
use mvdlab::sched::NoiseSchedule;
use mvdlab::stack::ViewStack;
use mvdlab::world::{BayesScope, FeedbackPacket};

fn main() {
    let world = world_preset("bimodal-splat", 64).unwrap();
    let world = world.with_temperature(500.0);
    let sched = NoiseSchedule::variance_preserving();
    let cfg = PipelineConfig {
        mode: PipelineMode::Adapter,
        sampler: SamplerConfig {
            steps: 30,
            ..Default::default()
        },
        fit: FitConfig {
            steps_per_denoise: 12,
            grid_res: 14,
            march_steps: 48,
            fit_resolution: 16,
            lr_density: 0.12,
            lr_color: 0.08,
            rho: 0.05,
            ..Default::default()
        },
        nerf_to_mesh_fraction: 1.0,
        ..Default::default()
    };
    let mut recon = ReconState::new(&cfg.fit, world.bounds);
    let mut rng = mvdlab::rng::rng_for(7, 0);
    let mut state = mvdlab::diffusion::DiffusionState {
        x_t: ViewStack::noise(world.rgb_shape(), &mut rng),
        t: sched.terminal,
        rng_seed: 7,
    };
    let times = sched.sigma_uniform_times(state.t, 30);
    let renders = world.rgb_renders();
    for (step, pair) in times.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let x_prime = world
            .bayes_denoise(&state.x_t, t, &sched, BayesScope::PerView, None)
            .unwrap();
        let (dist, nearest) = mvdlab::losses::mode_distance(&x_prime, &renders).unwrap();
        let targets = FitTargets {
            rgb: x_prime.clone(),
            alpha: {
                let full = world.render_world(nearest).unwrap();
                full.select_channels(&[3])
            },
        };
        let (_, packet) = reconstruct_and_render(
            &mut recon,
            &targets,
            &world.cameras,
            &cfg.fit,
            &world.cameras,
            None,
        )
        .unwrap();
        let d_fb = world
            .bayes_denoise_augmented(&state.x_t, t, &sched, &packet, cfg.fit.rho, None)
            .unwrap();
        let zero = FeedbackPacket::zero(world.rgb_shape());
        let d_zero = world
            .bayes_denoise_augmented(&state.x_t, t, &sched, &zero, cfg.fit.rho, None)
            .unwrap();
        let tilt = d_fb.max_abs_diff(&d_zero).unwrap();
        // Also print the fb residuals to each prototype to see the tilt raw.
        let y0 = world.rgbd_render(0).unwrap();
        let y1 = world.rgbd_render(1).unwrap();
        let r0 = packet.views.sq_dist(&y0).unwrap() / y0.data().len() as f64;
        let r1 = packet.views.sq_dist(&y1).unwrap() / y1.data().len() as f64;
        println!(
            "step {step:2} t {t:.3} nearest {nearest} dist {dist:.4} tilt {tilt:.3e} fbres ({r0:.4},{r1:.4})"
        );
        let x_hat = d_fb; // lambda = 1, no condition
        let noise = {
            let mut r = mvdlab::rng::rng_for(7, 100 + step as u64);
            ViewStack::noise(state.x_t.shape(), &mut r)
        };
        state = mvdlab::diffusion::euler_ancestral_step(&state, &x_hat, t_next, &noise, &sched, false)
            .unwrap();
    }
}
