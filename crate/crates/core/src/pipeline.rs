//! The three sampling architectures wired end to end over a toy world:
//! two-stage generation, I/O sync, and the feedback-augmented adapter.

use crate::diffusion::{
    cfg_combine, euler_ancestral_step, guided_feedback_combine, DiffusionState, GuidanceConfig,
};
use crate::error::{Error, Result};
use crate::losses::{gaussian_blur, mdd, mode_distance};
use crate::recon::{
    fit_feedforward_quads, reconstruct_and_render, switch_to_mesh, FitConfig, FitTargets, Phase,
    ReconState,
};
use crate::render::camera::Camera;
use crate::render::volume::{raymarch_volume, RaymarchOptions};
use crate::rng::{derive_seed, rng_for};
use crate::sched::NoiseSchedule;
use crate::stack::{StackShape, ViewStack};
use crate::stats::{iqr, median};
use crate::world::{BayesScope, FeedbackPacket, ProtoObject, TexturedQuad, WorldModel, CH_ALPHA};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    TwoStage,
    IoSync,
    Adapter,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Pure noise at the initial time.
    Noise,
    /// Mean latent initialization from the world's prior mean.
    MeanLatent,
    /// SDEdit-style: perturb a template prototype's render.
    Sdedit { prototype: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub deterministic: bool,
    /// Initial time as a fraction of the schedule terminal.
    pub t_init_fraction: f64,
    pub init: InitMode,
    /// Base denoiser scope.
    pub scope: BayesScope,
    /// Optional condition label applied to the conditional branch.
    pub condition: Option<String>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            deterministic: false,
            t_init_fraction: 1.0,
            init: InitMode::Noise,
            scope: BayesScope::PerView,
            condition: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig,
    pub fit: FitConfig,
    /// Phase switch point as a completed fraction of denoising steps.
    pub nerf_to_mesh_fraction: f64,
    /// (step fraction, active view count) schedule for reconstruction.
    pub view_schedule: Vec<(f64, usize)>,
    /// Final reconstruction budget for the two-stage path.
    pub final_fit_steps: usize,
    /// Budget of the cross-view consistency metric's fresh fit.
    pub consistency_fit_steps: usize,
    /// Denoiser likelihood temperature; 0 selects the per-pixel-normalized
    /// default (one view's RGB element count).
    pub likelihood_temperature: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Adapter,
            sampler: SamplerConfig::default(),
            guidance: GuidanceConfig::default(),
            fit: FitConfig::default(),
            nerf_to_mesh_fraction: 0.6,
            view_schedule: vec![(0.0, usize::MAX)],
            final_fit_steps: 384,
            consistency_fit_steps: 256,
            likelihood_temperature: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sampler.steps == 0 {
            return Err(Error::Domain("sampler.steps must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.nerf_to_mesh_fraction) {
            return Err(Error::Domain(
                "nerf_to_mesh_fraction must be in [0,1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sampler.t_init_fraction)
            || self.sampler.t_init_fraction == 0.0
        {
            return Err(Error::Domain("t_init_fraction must be in (0,1]".into()));
        }
        if self.likelihood_temperature < 0.0 {
            return Err(Error::Domain("likelihood_temperature must be >= 0".into()));
        }
        self.guidance.validate()?;
        self.fit.validate()
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub terminal: ViewStack,
    pub metrics: BTreeMap<String, f64>,
    pub traces: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
    /// Final reconstruction (volume worlds).
    pub final_state: Option<ReconState>,
}

/// Quad geometry shared by all prototypes of a quad world, if any.
fn quad_world_geometry(world: &WorldModel) -> Option<TexturedQuad> {
    let mut geo: Option<TexturedQuad> = None;
    for p in &world.prototypes {
        match &p.object {
            ProtoObject::Quad(q) => {
                if geo.is_none() {
                    geo = Some(q.clone());
                }
            }
            ProtoObject::Grid(_) => return None,
        }
    }
    geo
}

/// Blurred per-prototype alpha silhouettes (the declared stand-in for a
/// background-removal network).
fn blurred_silhouettes(world: &WorldModel, sigma: f64) -> Result<Vec<ViewStack>> {
    let sh = world.rgb_shape();
    let sh_a = StackShape {
        channels: 1,
        ..sh
    };
    let mut out = Vec::new();
    for k in 0..world.n_prototypes() {
        let full = world.render_world(k)?;
        let mut alpha = ViewStack::zeros(sh_a);
        for v in 0..sh.views {
            let src: Vec<f64> = (0..sh.height * sh.width)
                .map(|i| full.view(v)[CH_ALPHA * sh.height * sh.width + i])
                .collect();
            let blurred = gaussian_blur(&src, sh.width, sh.height, sigma);
            alpha.view_mut(v).copy_from_slice(&blurred);
        }
        out.push(alpha);
    }
    Ok(out)
}

/// Fit targets from intermediate denoised views: RGB directly, alpha from
/// the nearest prototype's blurred silhouette.
fn fit_targets_for(
    world: &WorldModel,
    silhouettes: &[ViewStack],
    x_hat: &ViewStack,
    renders: &[ViewStack],
) -> Result<FitTargets> {
    let (_, nearest) = mode_distance(x_hat, renders)?;
    Ok(FitTargets {
        rgb: x_hat.clone(),
        alpha: silhouettes[nearest].clone(),
    })
}

fn restrict_views(stack: &ViewStack, n: usize) -> ViewStack {
    let sh = stack.shape();
    let keep = n.min(sh.views);
    let out_shape = StackShape {
        views: keep,
        ..sh
    };
    let mut out = ViewStack::zeros(out_shape);
    for v in 0..keep {
        out.view_mut(v).copy_from_slice(stack.view(v));
    }
    out
}

fn active_views(schedule: &[(f64, usize)], fraction: f64, total: usize) -> usize {
    let mut n = total;
    for &(f, count) in schedule {
        if fraction >= f {
            n = count.min(total);
        }
    }
    n.max(1)
}

struct RunContext<'a> {
    world: &'a WorldModel,
    cfg: &'a PipelineConfig,
    sched: NoiseSchedule,
    silhouettes: Vec<ViewStack>,
    renders: Vec<ViewStack>,
    quad: Option<TexturedQuad>,
    seed: u64,
}

impl<'a> RunContext<'a> {
    fn init_state(&self) -> Result<DiffusionState> {
        let sched = &self.sched;
        let t_init = self.cfg.sampler.t_init_fraction * sched.terminal;
        let shape = self.world.rgb_shape();
        let mut rng = rng_for(self.seed, 0);
        let eps = ViewStack::noise(shape, &mut rng);
        let x_t = match &self.cfg.sampler.init {
            InitMode::Noise => {
                // alpha(t_init) * 0 + sigma * eps is exact at the terminal
                // time of the variance-preserving schedule.
                let mean = ViewStack::zeros(shape);
                crate::diffusion::perturb(&mean, t_init, &eps, sched)?
            }
            InitMode::MeanLatent => {
                crate::diffusion::mean_latent_init(&self.world.mean_stack(), t_init, &eps, sched, self.seed)?
                    .x_t
            }
            InitMode::Sdedit { prototype } => {
                let template = self.world.rgb_render(*prototype)?;
                crate::diffusion::perturb(&template, t_init, &eps, sched)?
            }
        };
        Ok(DiffusionState {
            x_t,
            t: t_init,
            rng_seed: self.seed,
        })
    }

    /// CFG-combined base denoiser at the configured scope.
    fn base_denoise(&self, x_t: &ViewStack, t: f64) -> Result<ViewStack> {
        let sched = &self.sched;
        let scope = self.cfg.sampler.scope;
        match &self.cfg.sampler.condition {
            None => self.world.bayes_denoise(x_t, t, sched, scope, None),
            Some(c) => {
                let d_cond = self.world.bayes_denoise(x_t, t, sched, scope, Some(c))?;
                let d_uncond = self.world.bayes_denoise(x_t, t, sched, scope, None)?;
                cfg_combine(&d_cond, &d_uncond, self.cfg.guidance.lambda_c)
            }
        }
    }

    fn step_noise(&self, step: usize, shape: StackShape) -> ViewStack {
        if self.cfg.sampler.deterministic {
            ViewStack::zeros(shape)
        } else {
            let mut rng = rng_for(self.seed, 100 + step as u64);
            ViewStack::noise(shape, &mut rng)
        }
    }
}

/// Runs one pipeline; pure function of (world, config, seed).
pub fn run_pipeline(world: &WorldModel, cfg: &PipelineConfig, seed: u64) -> Result<RunReport> {
    cfg.validate()?;
    let temperature = if cfg.likelihood_temperature > 0.0 {
        cfg.likelihood_temperature
    } else {
        world.per_pixel_temperature()
    };
    let world = &world.with_temperature(temperature);
    let sched = NoiseSchedule::variance_preserving();
    let ctx = RunContext {
        world,
        cfg,
        sched,
        silhouettes: blurred_silhouettes(world, cfg.fit.alpha_blur_sigma)?,
        renders: world.rgb_renders(),
        quad: quad_world_geometry(world),
        seed,
    };
    let quad_world = ctx.quad.is_some();

    let mut recon = if quad_world {
        ReconState::new_texture_phase(&cfg.fit, world.bounds)
    } else {
        ReconState::new(&cfg.fit, world.bounds)
    };

    let mut state = ctx.init_state()?;
    let times = ctx.sched.sigma_uniform_times(state.t, cfg.sampler.steps);
    let n_steps = cfg.sampler.steps;
    let mut fit_trace: Vec<f64> = Vec::new();
    let mut disagreement_trace: Vec<f64> = Vec::new();

    for (step, pair) in times.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let fraction = step as f64 / n_steps as f64;
        let n_active = active_views(&cfg.view_schedule, fraction, world.cameras.len());

        // Phase switch for volume worlds.
        if !quad_world
            && recon.phase == Phase::Nerf
            && cfg.nerf_to_mesh_fraction < 1.0
            && fraction >= cfg.nerf_to_mesh_fraction
            && matches!(cfg.mode, PipelineMode::Adapter | PipelineMode::IoSync)
        {
            switch_to_mesh(&mut recon, cfg.fit.mesh_iso)?;
        }

        let argmax = world.per_view_argmax(&state.x_t, t, &ctx.sched)?;
        let distinct = argmax
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        disagreement_trace.push(distinct as f64);

        let x_hat = match cfg.mode {
            PipelineMode::TwoStage => ctx.base_denoise(&state.x_t, t)?,
            PipelineMode::IoSync => {
                let x_prime = ctx.base_denoise(&state.x_t, t)?;
                let targets = fit_targets_for(world, &ctx.silhouettes, &x_prime, &ctx.renders)?;
                let targets = FitTargets {
                    rgb: restrict_views(&targets.rgb, n_active),
                    alpha: restrict_views(&targets.alpha, n_active),
                };
                let cams: Vec<Camera> = world.cameras[..n_active.min(world.cameras.len())].to_vec();
                let (report, packet) = reconstruct_and_render(
                    &mut recon,
                    &targets,
                    &cams,
                    &cfg.fit,
                    &world.cameras,
                    ctx.quad.as_ref(),
                )?;
                fit_trace.push(report.rgb + report.alpha);
                // The re-render replaces the denoised output.
                packet.views.select_channels(&[0, 1, 2])
            }
            PipelineMode::Adapter => {
                let x_prime = ctx.base_denoise(&state.x_t, t)?;
                let targets = fit_targets_for(world, &ctx.silhouettes, &x_prime, &ctx.renders)?;
                let targets = FitTargets {
                    rgb: restrict_views(&targets.rgb, n_active),
                    alpha: restrict_views(&targets.alpha, n_active),
                };
                let cams: Vec<Camera> = world.cameras[..n_active.min(world.cameras.len())].to_vec();
                let (report, packet) = reconstruct_and_render(
                    &mut recon,
                    &targets,
                    &cams,
                    &cfg.fit,
                    &world.cameras,
                    ctx.quad.as_ref(),
                )?;
                fit_trace.push(report.rgb + report.alpha);

                // Four denoiser evaluations of the guided combination.
                let d_fb = world.bayes_denoise_augmented(
                    &state.x_t,
                    t,
                    &ctx.sched,
                    &packet,
                    cfg.fit.rho,
                    cfg.sampler.condition.as_deref(),
                )?;
                let zero = FeedbackPacket::zero(world.rgb_shape());
                let d_zero = world.bayes_denoise_augmented(
                    &state.x_t,
                    t,
                    &ctx.sched,
                    &zero,
                    cfg.fit.rho,
                    cfg.sampler.condition.as_deref(),
                )?;
                let d_cond = world.bayes_denoise(
                    &state.x_t,
                    t,
                    &ctx.sched,
                    cfg.sampler.scope,
                    cfg.sampler.condition.as_deref(),
                )?;
                let d_uncond =
                    world.bayes_denoise(&state.x_t, t, &ctx.sched, cfg.sampler.scope, None)?;
                guided_feedback_combine(&d_fb, &d_zero, &d_cond, &d_uncond, &cfg.guidance)?
            }
        };

        let noise = ctx.step_noise(step, state.x_t.shape());
        state = euler_ancestral_step(
            &state,
            &x_hat,
            t_next,
            &noise,
            &ctx.sched,
            cfg.sampler.deterministic,
        )?;
    }

    // Two-stage: one reconstruction at the end.
    if matches!(cfg.mode, PipelineMode::TwoStage) {
        let targets = fit_targets_for(world, &ctx.silhouettes, &state.x_t, &ctx.renders)?;
        let final_cfg = FitConfig {
            steps_per_denoise: cfg.final_fit_steps,
            ..cfg.fit.clone()
        };
        let (_, _packet) = reconstruct_and_render(
            &mut recon,
            &targets,
            &world.cameras,
            &final_cfg,
            &world.cameras,
            ctx.quad.as_ref(),
        )?;
    }

    // Metrics.
    let mut metrics = BTreeMap::new();
    // Terminal per-view commitment: fraction of view pairs whose nearest
    // prototype differs.
    {
        let sh = state.x_t.shape();
        let mut ids = Vec::with_capacity(sh.views);
        for v in 0..sh.views {
            let mut best = (f64::INFINITY, 0usize);
            for (k, r) in ctx.renders.iter().enumerate() {
                let d: f64 = state
                    .x_t
                    .view(v)
                    .iter()
                    .zip(r.view(v))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            ids.push(best.1);
        }
        let mut diff = 0.0f64;
        let mut pairs = 0.0f64;
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                if ids[i] != ids[j] {
                    diff += 1.0;
                }
                pairs += 1.0;
            }
        }
        metrics.insert("terminal_view_split".into(), diff / pairs.max(1.0));
    }
    let (mode_dist, mode_id) = mode_distance(&state.x_t, &ctx.renders)?;
    metrics.insert("mode_distance".into(), mode_dist);
    metrics.insert("mode_id".into(), mode_id as f64);
    metrics.insert(
        "cross_view_consistency".into(),
        cross_view_consistency(world, cfg, &state.x_t, &ctx.silhouettes, &ctx.renders)?,
    );
    metrics.insert("mdd".into(), final_mdd(world, &cfg.fit, &mut recon)?);
    metrics.insert(
        "disagreement_mean".into(),
        disagreement_trace.iter().sum::<f64>() / disagreement_trace.len().max(1) as f64,
    );

    let mut traces = BTreeMap::new();
    traces.insert("fit_data_loss".into(), fit_trace);
    traces.insert("view_disagreement".into(), disagreement_trace);

    Ok(RunReport {
        terminal: state.x_t,
        metrics,
        traces,
        seed,
        final_state: Some(recon),
    })
}

/// Residual between a stack and the re-render of its best-fit
/// reconstruction (fresh state, fixed budget; deterministic).
pub fn cross_view_consistency(
    world: &WorldModel,
    cfg: &PipelineConfig,
    x: &ViewStack,
    silhouettes: &[ViewStack],
    renders: &[ViewStack],
) -> Result<f64> {
    let targets = fit_targets_for(world, silhouettes, x, renders)?;
    let quad = quad_world_geometry(world);
    let rerendered = match &quad {
        Some(q) => {
            let (tex, _) = fit_feedforward_quads(
                &targets,
                &world.cameras,
                q,
                cfg.fit.texture_size,
                cfg.fit.cosine_power,
            )?;
            let mut m = q.mesh();
            m.texture = Some(tex);
            let sh = world.rgb_shape();
            let mut out = ViewStack::zeros(sh);
            for (vi, cam) in world.cameras.iter().enumerate() {
                let r = crate::render::mesh::render_mesh_textured(&m, cam, [0.0; 3])?;
                out.view_mut(vi).copy_from_slice(&r.rgb);
            }
            out
        }
        None => {
            let metric_cfg = FitConfig {
                steps_per_denoise: cfg.consistency_fit_steps,
                ..cfg.fit.clone()
            };
            let mut fresh = ReconState::new(&metric_cfg, world.bounds);
            let (_, packet) = reconstruct_and_render(
                &mut fresh,
                &targets,
                &world.cameras,
                &metric_cfg,
                &world.cameras,
                None,
            )?;
            packet.views.select_channels(&[0, 1, 2])
        }
    };
    x.mean_abs_diff(&rerendered)
}

/// MDD of the final reconstruction, rendered volumetrically (the mesh phase
/// keeps its frozen density grid, so the geometry measure stays comparable
/// across pipelines).
fn final_mdd(world: &WorldModel, fit: &FitConfig, recon: &mut ReconState) -> Result<f64> {
    if recon.phase == Phase::Texture {
        return Ok(0.0);
    }
    let grid = recon.params.to_grid();
    let opts = RaymarchOptions {
        step: recon.params.bounds.diagonal() / fit.march_steps as f64,
        contribs: true,
        ..Default::default()
    };
    let mut total = 0.0;
    for cam in &world.cameras {
        let out = raymarch_volume(&grid, cam, &opts)?;
        total += mdd(&out)?;
    }
    Ok(total / world.cameras.len() as f64)
}

/// One suite entry: a named configuration.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub id: String,
    pub config: PipelineConfig,
}

/// Per-configuration aggregate over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigAggregate {
    pub id: String,
    pub n_runs: usize,
    pub median: BTreeMap<String, f64>,
    pub iqr: BTreeMap<String, f64>,
    pub per_seed: BTreeMap<String, Vec<f64>>,
    pub failures: Vec<String>,
}

/// Runs every configuration over `n_seeds` paired seeds. Seeds derive from
/// `(base_seed, config index, seed index)` so results are independent of
/// scheduling; partial failures are recorded and the suite continues.
pub fn run_suite(
    world: &WorldModel,
    entries: &[SuiteEntry],
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<ConfigAggregate>> {
    let mut out = Vec::new();
    for (ci, entry) in entries.iter().enumerate() {
        let mut per_seed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut failures = Vec::new();
        let mut n_runs = 0;
        for si in 0..n_seeds {
            // Paired seeds: the same seed index maps to the same run seed
            // across configurations.
            let _ = ci;
            let run_seed = derive_seed(base_seed, si as u64);
            match run_pipeline(world, &entry.config, run_seed) {
                Ok(report) => {
                    n_runs += 1;
                    for (k, v) in &report.metrics {
                        per_seed.entry(k.clone()).or_default().push(*v);
                    }
                }
                Err(e) => failures.push(format!("seed {si}: {e}")),
            }
        }
        let median_map = per_seed
            .iter()
            .map(|(k, v)| (k.clone(), median(v)))
            .collect();
        let iqr_map = per_seed.iter().map(|(k, v)| (k.clone(), iqr(v))).collect();
        out.push(ConfigAggregate {
            id: entry.id.clone(),
            n_runs,
            median: median_map,
            iqr: iqr_map,
            per_seed,
            failures,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::world_preset;

    fn fast_cfg(mode: PipelineMode) -> PipelineConfig {
        PipelineConfig {
            mode,
            sampler: SamplerConfig {
                steps: 8,
                ..Default::default()
            },
            fit: FitConfig {
                steps_per_denoise: 4,
                grid_res: 8,
                march_steps: 24,
                fit_resolution: 16,
                ..Default::default()
            },
            final_fit_steps: 32,
            consistency_fit_steps: 32,
            nerf_to_mesh_fraction: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_flag_gives_identical_reports() {
        let world = world_preset("bimodal-texture", 32).unwrap();
        let mut cfg = fast_cfg(PipelineMode::TwoStage);
        cfg.sampler.deterministic = true;
        let a = run_pipeline(&world, &cfg, 5).unwrap();
        let b = run_pipeline(&world, &cfg, 5).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn seeded_ancestral_runs_are_reproducible() {
        let world = world_preset("bimodal-texture", 32).unwrap();
        let cfg = fast_cfg(PipelineMode::Adapter);
        let a = run_pipeline(&world, &cfg, 11).unwrap();
        let b = run_pipeline(&world, &cfg, 11).unwrap();
        assert_eq!(a.terminal, b.terminal);
        let c = run_pipeline(&world, &cfg, 12).unwrap();
        assert!(a.terminal != c.terminal);
    }

    #[test]
    fn adapter_with_zero_aug_matches_two_stage_trajectory() {
        let world = world_preset("bimodal-texture", 32).unwrap();
        let mut adapter = fast_cfg(PipelineMode::Adapter);
        adapter.guidance.lambda_aug = 0.0;
        adapter.sampler.deterministic = true;
        let mut two_stage = fast_cfg(PipelineMode::TwoStage);
        two_stage.sampler.deterministic = true;
        let a = run_pipeline(&world, &adapter, 3).unwrap();
        let b = run_pipeline(&world, &two_stage, 3).unwrap();
        // Bit-identical terminal stacks.
        assert_eq!(a.terminal, b.terminal);
    }

    #[test]
    fn joint_scope_two_stage_lands_on_a_prototype() {
        let world = world_preset("tetra-4", 32).unwrap();
        let mut cfg = fast_cfg(PipelineMode::TwoStage);
        cfg.sampler.scope = BayesScope::Joint;
        cfg.sampler.steps = 12;
        let report = run_pipeline(&world, &cfg, 21).unwrap();
        assert!(
            report.metrics["mode_distance"] < 5e-2,
            "mode distance {}",
            report.metrics["mode_distance"]
        );
    }

    #[test]
    fn single_mode_like_world_io_sync_equals_two_stage() {
        // K = 1 is disallowed by the world invariants; emulate with two
        // identical prototypes, which makes reconstruction lossless in the
        // same way.
        use crate::render::types::{Aabb, VolumeGrid};
        use crate::world::{ProtoObject, Prototype};
        let mut g = VolumeGrid::new(10, Aabb::unit()).unwrap();
        g.fill(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            ((12.0 * (0.5 - r)).clamp(0.0, 12.0), [0.8, 0.4, 0.2])
        });
        let protos = vec![
            Prototype {
                id: 0,
                object: ProtoObject::Grid(g.clone()),
                prior: 0.5,
                label: None,
            },
            Prototype {
                id: 1,
                object: ProtoObject::Grid(g),
                prior: 0.5,
                label: None,
            },
        ];
        let cams = crate::render::camera::camera_ring(3, 3.2, 0.7, 35.0, 32);
        let world = WorldModel::new(protos, cams, 0.0).unwrap();
        let mut a_cfg = fast_cfg(PipelineMode::TwoStage);
        a_cfg.sampler.deterministic = true;
        let b_cfg = PipelineConfig {
            mode: PipelineMode::IoSync,
            ..a_cfg.clone()
        };
        let a = run_pipeline(&world, &a_cfg, 9).unwrap();
        let b = run_pipeline(&world, &b_cfg, 9).unwrap();
        // Identical prototypes: the posterior mean is the common render at
        // every step for both pipelines, and reconstruction of that render
        // re-renders to it up to fit tolerance.
        let diff = a.terminal.mean_abs_diff(&b.terminal).unwrap();
        assert!(diff < 0.05, "terminal difference {diff}");
    }

    #[test]
    fn suite_aggregate_single_seed_equals_run_metrics() {
        let world = world_preset("bimodal-texture", 32).unwrap();
        let entries = vec![
            SuiteEntry {
                id: "two-stage".into(),
                config: fast_cfg(PipelineMode::TwoStage),
            },
            SuiteEntry {
                id: "adapter".into(),
                config: fast_cfg(PipelineMode::Adapter),
            },
        ];
        let agg = run_suite(&world, &entries, 1, 77).unwrap();
        assert_eq!(agg.len(), 2);
        let direct = run_pipeline(
            &world,
            &entries[0].config,
            crate::rng::derive_seed(77, 0),
        )
        .unwrap();
        for (k, v) in &direct.metrics {
            assert_eq!(agg[0].median[k], *v, "metric {k}");
        }
        // Reordering configs keeps per-config rows keyed.
        let rev: Vec<SuiteEntry> = entries.iter().rev().cloned().collect();
        let agg_rev = run_suite(&world, &rev, 1, 77).unwrap();
        assert_eq!(agg_rev[1].median, agg[0].median);
        assert_eq!(agg_rev[1].id, agg[0].id);
    }
}
