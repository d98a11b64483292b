//! Synthetic cross-embodiment demonstration generator.
//!
//! A "world" is a vocabulary of G motion primitives living in a shared
//! d_sig-dimensional latent space, plus two embodiments (human, robot) that
//! render that latent through distinct linear feature maps. Tasks are
//! scripts of primitives; episodes blend adjacent primitives with
//! raised-cosine crossfades and record ground-truth activations for
//! evaluation.
//!
//! The two embodiments are deliberately asymmetric: human observations
//! carry the full primitive signatures plus a clock-driven oscillation
//! (so demonstration *content* changes with playback speed), while robot
//! observations carry attenuated signatures plus a segment-progress
//! sawtooth and heavier noise (the robot stream tells you where you are in
//! a segment, but only weakly which segment it is — route information has
//! to come from the prompt).

mod render;
mod success;
mod task;
mod world;

pub mod io;

pub use render::{render_episode, DemoEpisode};
pub use success::{success_check, waypoints_for, SuccessReport};
pub use task::{make_task, TaskCategory, TaskScript};
pub use world::{Embodiment, PrimitiveSpec, World};

use serde::{Deserialize, Serialize};

/// Generator constants. Everything downstream (episode shapes, action
/// scale, success tolerance) derives from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimgenConfig {
    /// Primitive vocabulary size.
    pub g: usize,
    /// Latent signature dimension.
    pub d_sig: usize,
    /// Observation feature dimension.
    pub d_obs: usize,
    /// Workspace speed: every primitive moves this far per frame at x1.0.
    pub speed_per_frame: f64,
    /// Primitive duration bounds in frames at x1.0.
    pub dur_min: usize,
    pub dur_max: usize,
    /// Crossfade width in frames at x1.0.
    pub blend: usize,
    /// Human-side oscillation: cycles per rendered frame, per primitive.
    pub osc_freq_min: f64,
    pub osc_freq_max: f64,
    /// Oscillation amplitudes relative to unit signatures.
    pub amp_human: f64,
    pub amp_robot: f64,
    /// Robot-side signature attenuation (semantic content of the robot
    /// stream; lower = robot sees less of "which primitive").
    pub sig_atten_robot: f64,
    /// Embodiment map mixing: A_e = A0 + map_mix * E_e.
    pub map_mix: f64,
    pub noise_human: f64,
    pub noise_robot: f64,
    pub bias_scale: f64,
    /// Success tolerance as a fraction of the script's mean goal spacing.
    pub rho_frac: f64,
}

impl Default for SimgenConfig {
    fn default() -> Self {
        SimgenConfig {
            g: 10,
            d_sig: 12,
            d_obs: 32,
            speed_per_frame: 0.05,
            dur_min: 12,
            dur_max: 20,
            blend: 6,
            osc_freq_min: 0.08,
            osc_freq_max: 0.14,
            amp_human: 0.5,
            amp_robot: 0.5,
            sig_atten_robot: 0.5,
            map_mix: 0.35,
            noise_human: 0.05,
            noise_robot: 0.2,
            bias_scale: 0.1,
            rho_frac: 0.1,
        }
    }
}

pub const ACTION_DIM: usize = 2;
