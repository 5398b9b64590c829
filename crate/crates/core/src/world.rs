//! Synthetic multi-view worlds: finite prototype mixtures with exactly
//! computable Bayes-optimal denoisers.
//!
//! A world is a set of 3D prototypes (volume grids or textured quads) with
//! priors and a fixed camera rig. Renders are cached at construction, so
//! posterior weights reduce to Gaussian log-likelihoods against the cached
//! stacks. The per-view denoiser models a base model without cross-view
//! coupling; the joint denoiser uses all views at once; the augmented
//! denoiser folds in a rendered feedback packet as extra evidence.

use crate::diffusion::{CleanSampler, Denoiser};
use crate::error::{Error, Result};
use crate::num::softmax;
use crate::render::camera::Camera;
use crate::render::mesh::{quad_mesh, render_mesh_textured};
use crate::render::types::{Aabb, TextureImage, TriMesh, VolumeGrid};
use crate::render::volume::{raymarch_volume, RaymarchOptions};
use crate::rng::Rng;
use crate::sched::NoiseSchedule;
use crate::stack::{StackShape, ViewStack};

/// RGBAD channel indices in world render stacks.
pub const CH_RGB: [usize; 3] = [0, 1, 2];
pub const CH_ALPHA: usize = 3;
pub const CH_DEPTH: usize = 4;

/// Flat textured square.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedQuad {
    pub center: [f64; 3],
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
    pub texture: TextureImage,
}

impl TexturedQuad {
    pub fn mesh(&self) -> TriMesh {
        let mut m = quad_mesh(self.center, self.u_axis, self.v_axis);
        m.texture = Some(self.texture.clone());
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtoObject {
    Grid(VolumeGrid),
    Quad(TexturedQuad),
}

#[derive(Debug, Clone)]
pub struct Prototype {
    pub id: usize,
    pub object: ProtoObject,
    pub prior: f64,
    /// Optional condition tag; conditioning restricts the prior to matching
    /// prototypes.
    pub label: Option<String>,
}

/// Rendered feedback views (RGB + depth) or the zero-source convention.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackSource {
    Reconstruction,
    Zero,
}

#[derive(Debug, Clone)]
pub struct FeedbackPacket {
    /// RGBD stack (4 channels).
    pub views: ViewStack,
    pub source: FeedbackSource,
}

impl FeedbackPacket {
    pub fn zero(shape: StackShape) -> Self {
        Self {
            views: ViewStack::zeros(StackShape {
                channels: 4,
                ..shape
            }),
            source: FeedbackSource::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.shape().channels != 4 {
            return Err(Error::Structural("feedback packet must be RGBD".into()));
        }
        let sh = self.views.shape();
        for v in 0..sh.views {
            for r in 0..sh.height {
                for c in 0..sh.width {
                    if self.views.get(v, 3, r, c) < 0.0 {
                        return Err(Error::Domain("feedback depth must be >= 0".into()));
                    }
                }
            }
        }
        if matches!(self.source, FeedbackSource::Zero)
            && self.views.data().iter().any(|&x| x != 0.0)
        {
            return Err(Error::Structural(
                "zero-source packet must be the all-zero tensor".into(),
            ));
        }
        Ok(())
    }
}

/// Denoiser scope: per-camera weights or one weight vector over all views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesScope {
    PerView,
    Joint,
}

/// Finite-mixture multi-view world.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub prototypes: Vec<Prototype>,
    pub cameras: Vec<Camera>,
    /// Per-view rendering jitter applied to clean samples.
    pub view_noise: f64,
    /// Cached full RGBAD renders per prototype.
    renders: Vec<ViewStack>,
    /// World bounds for depth normalization and reconstruction.
    pub bounds: Aabb,
    /// Raymarch options used for the cached renders.
    pub raymarch: RaymarchOptions,
    /// Likelihood temperature: residual exponents divide by this. 1.0 is
    /// the exact summed Gaussian; setting it to the per-view element count
    /// gives mean-form ("normalized pixel unit") residuals, which keeps the
    /// posterior softness resolution-independent and models a base denoiser
    /// with calibrated per-pixel confidence.
    pub temperature: f64,
}

impl WorldModel {
    pub fn new(
        prototypes: Vec<Prototype>,
        cameras: Vec<Camera>,
        view_noise: f64,
    ) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::Structural("world needs at least 2 prototypes".into()));
        }
        if cameras.len() < 2 {
            return Err(Error::Structural("world needs at least 2 cameras".into()));
        }
        let prior_sum: f64 = prototypes.iter().map(|p| p.prior).sum();
        if (prior_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "priors must sum to 1 (got {prior_sum})"
            )));
        }
        if prototypes.iter().any(|p| p.prior <= 0.0) {
            return Err(Error::Domain("priors must be positive".into()));
        }
        if view_noise < 0.0 {
            return Err(Error::Domain("view_noise must be >= 0".into()));
        }
        for cam in &cameras {
            cam.validate()?;
        }
        let mut bounds = Aabb::unit();
        for p in &prototypes {
            if let ProtoObject::Grid(g) = &p.object {
                bounds = g.bounds;
            }
        }
        let raymarch = RaymarchOptions {
            contribs: false,
            ..Default::default()
        };
        let mut world = Self {
            prototypes,
            cameras,
            view_noise,
            renders: Vec::new(),
            bounds,
            raymarch,
            temperature: 1.0,
        };
        world.renders = (0..world.prototypes.len())
            .map(|k| world.render_prototype(k))
            .collect::<Result<_>>()?;
        Ok(world)
    }

    pub fn n_prototypes(&self) -> usize {
        self.prototypes.len()
    }

    /// Same world at a different likelihood temperature.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        let mut w = self.clone();
        w.temperature = temperature.max(1e-300);
        w
    }

    /// Per-pixel-normalized temperature: one view's RGB element count.
    pub fn per_pixel_temperature(&self) -> f64 {
        self.rgb_shape().view_len() as f64
    }

    pub fn view_shape(&self) -> StackShape {
        StackShape {
            views: self.cameras.len(),
            channels: 5,
            height: self.cameras[0].height,
            width: self.cameras[0].width,
        }
    }

    pub fn rgb_shape(&self) -> StackShape {
        StackShape {
            channels: 3,
            ..self.view_shape()
        }
    }

    /// Scale factor applied to depth residuals so they are commensurate
    /// with color residuals.
    pub fn depth_scale(&self) -> f64 {
        1.0 / self.bounds.diagonal().max(1e-9)
    }

    fn render_prototype(&self, k: usize) -> Result<ViewStack> {
        let proto = self
            .prototypes
            .get(k)
            .ok_or_else(|| Error::Lookup(format!("prototype {k}")))?;
        let shape = self.view_shape();
        let mut stack = ViewStack::zeros(shape);
        for (vi, cam) in self.cameras.iter().enumerate() {
            let out = match &proto.object {
                ProtoObject::Grid(g) => raymarch_volume(g, cam, &self.raymarch)?,
                ProtoObject::Quad(q) => render_mesh_textured(&q.mesh(), cam, [0.0; 3])?,
            };
            let hw = shape.height * shape.width;
            let view = stack.view_mut(vi);
            view[..3 * hw].copy_from_slice(&out.rgb);
            view[3 * hw..4 * hw].copy_from_slice(&out.alpha);
            view[4 * hw..5 * hw].copy_from_slice(&out.depth);
        }
        Ok(stack)
    }

    /// Deterministic multi-view RGBAD render of a prototype (cached).
    pub fn render_world(&self, k: usize) -> Result<&ViewStack> {
        self.renders
            .get(k)
            .ok_or_else(|| Error::Lookup(format!("prototype {k}")))
    }

    /// RGB channels of a prototype's render.
    pub fn rgb_render(&self, k: usize) -> Result<ViewStack> {
        Ok(self.render_world(k)?.select_channels(&CH_RGB))
    }

    /// RGBD channels (feedback-target layout) of a prototype's render.
    pub fn rgbd_render(&self, k: usize) -> Result<ViewStack> {
        Ok(self.render_world(k)?.select_channels(&[0, 1, 2, CH_DEPTH]))
    }

    /// All prototypes' RGB renders.
    pub fn rgb_renders(&self) -> Vec<ViewStack> {
        (0..self.n_prototypes())
            .map(|k| self.rgb_render(k).expect("cached"))
            .collect()
    }

    /// Prior-weighted mean RGB stack (the mean latent).
    pub fn mean_stack(&self) -> ViewStack {
        let mut mean = ViewStack::zeros(self.rgb_shape());
        for (k, p) in self.prototypes.iter().enumerate() {
            let r = self.rgb_render(k).expect("cached");
            mean.add_scaled_assign(&r, p.prior).expect("same shape");
        }
        mean
    }

    /// Indices of prototypes matching a condition label (all when `None`).
    fn active_set(&self, condition: Option<&str>) -> Result<Vec<usize>> {
        match condition {
            None => Ok((0..self.n_prototypes()).collect()),
            Some(c) => {
                let set: Vec<usize> = self
                    .prototypes
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.label.as_deref() == Some(c))
                    .map(|(k, _)| k)
                    .collect();
                if set.is_empty() {
                    return Err(Error::Lookup(format!("condition label {c:?}")));
                }
                Ok(set)
            }
        }
    }

    /// Per-(prototype, view) data log-likelihood terms
    /// `-||x_v - alpha y_kv||^2 / (2 sigma^2)`.
    fn data_loglik(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
        active: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if !x_t.is_finite() {
            return Err(Error::NonFinite("posterior input".into()));
        }
        if x_t.shape() != self.rgb_shape() {
            return Err(Error::ShapeMismatch(format!(
                "x_t {} vs world RGB {}",
                x_t.shape(),
                self.rgb_shape()
            )));
        }
        let alpha = sched.alpha(t);
        let sigma = sched.sigma(t);
        if sigma <= 0.0 {
            return Err(Error::Domain("posterior needs t > 0".into()));
        }
        let inv = 1.0 / (2.0 * sigma * sigma * self.temperature);
        let mut out = Vec::with_capacity(active.len());
        for &k in active {
            let y = self.rgb_render(k)?;
            let mut per_view = Vec::with_capacity(self.cameras.len());
            for v in 0..self.cameras.len() {
                let xv = x_t.view(v);
                let yv = y.view(v);
                let sq: f64 = xv
                    .iter()
                    .zip(yv)
                    .map(|(a, b)| {
                        let d = a - alpha * b;
                        d * d
                    })
                    .sum();
                per_view.push(-sq * inv);
            }
            out.push(per_view);
        }
        Ok(out)
    }

    /// Per-(prototype, view) feedback log-likelihood terms
    /// `-||fb_v - y~_kv||^2 / (2 rho^2)` with depth channels normalized by
    /// the scene diagonal. Zero-source packets contribute the uniform
    /// dataset-bias term (all zeros).
    fn feedback_loglik(
        &self,
        feedback: &FeedbackPacket,
        rho: f64,
        active: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        if matches!(feedback.source, FeedbackSource::Zero) {
            return Ok(vec![vec![0.0; self.cameras.len()]; active.len()]);
        }
        if rho <= 0.0 {
            return Err(Error::Domain("rho must be > 0 with feedback".into()));
        }
        if !feedback.views.is_finite() {
            return Err(Error::NonFinite("feedback packet".into()));
        }
        let sh = feedback.views.shape();
        if sh.channels != 4 || sh.views != self.cameras.len() {
            return Err(Error::ShapeMismatch("feedback packet vs world".into()));
        }
        let inv = 1.0 / (2.0 * rho * rho * self.temperature);
        let ds = self.depth_scale();
        let hw = sh.height * sh.width;
        let mut out = Vec::with_capacity(active.len());
        for &k in active {
            let y = self.rgbd_render(k)?;
            let mut per_view = Vec::with_capacity(self.cameras.len());
            for v in 0..self.cameras.len() {
                let fv = feedback.views.view(v);
                let yv = y.view(v);
                let mut sq = 0.0;
                for i in 0..3 * hw {
                    let d = fv[i] - yv[i];
                    sq += d * d;
                }
                for i in 3 * hw..4 * hw {
                    let d = (fv[i] - yv[i]) * ds;
                    sq += d * d;
                }
                per_view.push(-sq * inv);
            }
            out.push(per_view);
        }
        Ok(out)
    }

    /// Joint posterior weights over prototypes, in log space.
    pub fn posterior_weights(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
        feedback: Option<(&FeedbackPacket, f64)>,
        condition: Option<&str>,
    ) -> Result<Vec<f64>> {
        let active = self.active_set(condition)?;
        let data = self.data_loglik(x_t, t, sched, &active)?;
        let fb = match feedback {
            Some((packet, rho)) => self.feedback_loglik(packet, rho, &active)?,
            None => vec![vec![0.0; self.cameras.len()]; active.len()],
        };
        let log_w: Vec<f64> = active
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                self.prototypes[k].prior.ln()
                    + data[i].iter().sum::<f64>()
                    + fb[i].iter().sum::<f64>()
            })
            .collect();
        let w = softmax(&log_w);
        // Expand over all prototypes (inactive get zero).
        let mut full = vec![0.0; self.n_prototypes()];
        for (i, &k) in active.iter().enumerate() {
            full[k] = w[i];
        }
        Ok(full)
    }

    /// Exact posterior mean under the selected scope. Output is RGB.
    pub fn bayes_denoise(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
        scope: BayesScope,
        condition: Option<&str>,
    ) -> Result<ViewStack> {
        match scope {
            BayesScope::Joint => {
                let w = self.posterior_weights(x_t, t, sched, None, condition)?;
                self.mix_renders_joint(&w)
            }
            BayesScope::PerView => self.bayes_per_view(x_t, t, sched, None, condition),
        }
    }

    /// Per-view posterior mean with the feedback likelihood folded into each
    /// view's weights. Zero-source feedback reduces to the plain per-view
    /// denoiser.
    pub fn bayes_denoise_augmented(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
        feedback: &FeedbackPacket,
        rho: f64,
        condition: Option<&str>,
    ) -> Result<ViewStack> {
        self.bayes_per_view(x_t, t, sched, Some((feedback, rho)), condition)
    }

    fn bayes_per_view(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
        feedback: Option<(&FeedbackPacket, f64)>,
        condition: Option<&str>,
    ) -> Result<ViewStack> {
        let active = self.active_set(condition)?;
        let data = self.data_loglik(x_t, t, sched, &active)?;
        let fb = match feedback {
            Some((packet, rho)) => self.feedback_loglik(packet, rho, &active)?,
            None => vec![vec![0.0; self.cameras.len()]; active.len()],
        };
        // The packet renders one coherent 3D state, so its likelihood is a
        // single joint term over all packet views, shared by every view's
        // weight vector.
        let fb_total: Vec<f64> = fb.iter().map(|per_view| per_view.iter().sum()).collect();
        let renders: Vec<ViewStack> = active
            .iter()
            .map(|&k| self.rgb_render(k))
            .collect::<Result<_>>()?;
        let mut out = ViewStack::zeros(self.rgb_shape());
        for v in 0..self.cameras.len() {
            let log_w: Vec<f64> = active
                .iter()
                .enumerate()
                .map(|(i, &k)| self.prototypes[k].prior.ln() + data[i][v] + fb_total[i])
                .collect();
            let w = softmax(&log_w);
            let dst = out.view_mut(v);
            for (i, weight) in w.iter().enumerate() {
                if *weight == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(renders[i].view(v)) {
                    *d += weight * s;
                }
            }
        }
        Ok(out)
    }

    /// Per-view argmax prototype indices (diagnostic for cross-view
    /// disagreement).
    pub fn per_view_argmax(
        &self,
        x_t: &ViewStack,
        t: f64,
        sched: &NoiseSchedule,
    ) -> Result<Vec<usize>> {
        let active = self.active_set(None)?;
        let data = self.data_loglik(x_t, t, sched, &active)?;
        let mut out = Vec::with_capacity(self.cameras.len());
        for v in 0..self.cameras.len() {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (i, &k) in active.iter().enumerate() {
                let lw = self.prototypes[k].prior.ln() + data[i][v];
                if lw > best.0 {
                    best = (lw, k);
                }
            }
            out.push(best.1);
        }
        Ok(out)
    }

    fn mix_renders_joint(&self, weights: &[f64]) -> Result<ViewStack> {
        let mut out = ViewStack::zeros(self.rgb_shape());
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let r = self.rgb_render(k)?;
            out.add_scaled_assign(&r, w)?;
        }
        Ok(out)
    }
}

impl CleanSampler for WorldModel {
    fn sample_clean(&self, rng: &mut Rng) -> (ViewStack, Option<String>) {
        use rand::Rng as _;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.n_prototypes() - 1;
        for (k, p) in self.prototypes.iter().enumerate() {
            acc += p.prior;
            if u <= acc {
                pick = k;
                break;
            }
        }
        let mut x = self.rgb_render(pick).expect("cached");
        if self.view_noise > 0.0 {
            for v in x.data_mut() {
                *v += self.view_noise * crate::rng::normal(rng);
            }
        }
        (x, self.prototypes[pick].label.clone())
    }
}

/// Bayes denoiser with a fixed scope, usable wherever a [`Denoiser`] is
/// expected.
pub struct BayesDenoiser<'a> {
    pub world: &'a WorldModel,
    pub sched: NoiseSchedule,
    pub scope: BayesScope,
}

impl Denoiser for BayesDenoiser<'_> {
    fn denoise(&self, x_t: &ViewStack, t: f64, condition: Option<&str>) -> Result<ViewStack> {
        self.world
            .bayes_denoise(x_t, t, &self.sched, self.scope, condition)
    }
}
