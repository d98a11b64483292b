//! Task scripts: ordered primitive compositions drawn per complexity class.

use super::world::World;
use crate::error::{Error, Result};
use crate::numkit::seeded_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskCategory {
    Simple,
    ToolUse,
    MultiStep,
    Complex,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 4] = [
        TaskCategory::Simple,
        TaskCategory::ToolUse,
        TaskCategory::MultiStep,
        TaskCategory::Complex,
    ];

    /// Script length bounds (inclusive).
    pub fn len_range(self) -> (usize, usize) {
        match self {
            TaskCategory::Simple => (1, 2),
            TaskCategory::ToolUse => (2, 3),
            TaskCategory::MultiStep => (3, 5),
            TaskCategory::Complex => (5, 8),
        }
    }

    /// Fraction of the primitive vocabulary this class draws from; the
    /// subsets are nested prefixes so harder classes reuse easy skills.
    pub fn vocab_frac(self) -> f64 {
        match self {
            TaskCategory::Simple => 0.6,
            TaskCategory::ToolUse => 0.7,
            TaskCategory::MultiStep => 0.85,
            TaskCategory::Complex => 1.0,
        }
    }

    pub fn vocab_size(self, g: usize) -> usize {
        ((self.vocab_frac() * g as f64).round() as usize).clamp(2, g)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Simple => "simple",
            TaskCategory::ToolUse => "tool-use",
            TaskCategory::MultiStep => "multi-step",
            TaskCategory::Complex => "complex",
        }
    }

    pub fn parse(s: &str) -> Result<TaskCategory> {
        match s {
            "simple" => Ok(TaskCategory::Simple),
            "tool-use" => Ok(TaskCategory::ToolUse),
            "multi-step" => Ok(TaskCategory::MultiStep),
            "complex" => Ok(TaskCategory::Complex),
            other => Err(Error::InvalidArgument(format!(
                "unknown task category {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScript {
    /// Primitive ids in execution order; adjacent entries are distinct.
    pub primitives: Vec<usize>,
    /// Per-transition crossfade widths in frames at x1.0 (len - 1 entries).
    pub overlaps: Vec<usize>,
    pub complexity: TaskCategory,
}

impl TaskScript {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidArgument("empty script".into()));
        }
        if self.overlaps.len() + 1 != self.primitives.len() {
            return Err(Error::InvalidArgument(
                "overlaps must have one entry per transition".into(),
            ));
        }
        let (lo, hi) = self.complexity.len_range();
        if self.primitives.len() < lo || self.primitives.len() > hi {
            return Err(Error::InvalidArgument(format!(
                "script length {} outside {:?} range {lo}..={hi}",
                self.primitives.len(),
                self.complexity
            )));
        }
        for (i, &p) in self.primitives.iter().enumerate() {
            if p >= world.primitives.len() {
                return Err(Error::InvalidArgument(format!("primitive id {p} out of range")));
            }
            if i > 0 && self.primitives[i - 1] == p {
                return Err(Error::InvalidArgument(
                    "adjacent script entries must be distinct".into(),
                ));
            }
        }
        for (t, &w) in self.overlaps.iter().enumerate() {
            let left = world.primitives[self.primitives[t]].duration;
            let right = world.primitives[self.primitives[t + 1]].duration;
            if w >= left.min(right) {
                return Err(Error::InvalidArgument(format!(
                    "blend width {w} not below neighbor durations at transition {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples a script for the category, deterministic in (category, seed).
pub fn make_task(world: &World, category: TaskCategory, seed: u64) -> Result<TaskScript> {
    let mut rng = seeded_rng(seed, &format!("task:{}", category.name()));
    let (lo, hi) = category.len_range();
    let len = rng.random_range(lo..=hi);
    let vocab = category.vocab_size(world.cfg.g);
    let mut primitives = Vec::with_capacity(len);
    for i in 0..len {
        let mut p = rng.random_range(0..vocab);
        while i > 0 && p == primitives[i - 1] {
            p = rng.random_range(0..vocab);
        }
        primitives.push(p);
    }
    let overlaps = vec![world.cfg.blend; len.saturating_sub(1)];
    let script = TaskScript {
        primitives,
        overlaps,
        complexity: category,
    };
    script.validate(world)?;
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::super::SimgenConfig;
    use super::*;

    fn world() -> World {
        World::generate(&SimgenConfig::default(), 42).unwrap()
    }

    #[test]
    fn lengths_respect_category_ranges() {
        let w = world();
        for cat in TaskCategory::ALL {
            let (lo, hi) = cat.len_range();
            for seed in 0..40 {
                let s = make_task(&w, cat, seed).unwrap();
                assert!(s.len() >= lo && s.len() <= hi, "{cat:?} seed {seed}");
                let vocab = cat.vocab_size(w.cfg.g);
                assert!(s.primitives.iter().all(|&p| p < vocab));
            }
        }
    }

    #[test]
    fn adjacent_entries_distinct() {
        let w = world();
        for seed in 0..60 {
            let s = make_task(&w, TaskCategory::Complex, seed).unwrap();
            for pair in s.primitives.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn same_seed_same_script() {
        let w = world();
        let a = make_task(&w, TaskCategory::MultiStep, 7).unwrap();
        let b = make_task(&w, TaskCategory::MultiStep, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_names_round_trip() {
        for cat in TaskCategory::ALL {
            assert_eq!(TaskCategory::parse(cat.name()).unwrap(), cat);
        }
        assert!(TaskCategory::parse("juggling").is_err());
    }

    #[test]
    fn vocab_sizes_scale_with_g() {
        assert_eq!(TaskCategory::Simple.vocab_size(10), 6);
        assert_eq!(TaskCategory::ToolUse.vocab_size(10), 7);
        assert_eq!(TaskCategory::MultiStep.vocab_size(10), 9);
        assert_eq!(TaskCategory::Complex.vocab_size(10), 10);
        assert_eq!(TaskCategory::Simple.vocab_size(4), 2);
        assert_eq!(TaskCategory::Complex.vocab_size(4), 4);
    }

    #[test]
    fn validate_rejects_broken_scripts() {
        let w = world();
        let mut s = make_task(&w, TaskCategory::ToolUse, 1).unwrap();
        s.primitives = vec![1, 1];
        assert!(s.validate(&w).is_err());
        let mut s2 = make_task(&w, TaskCategory::ToolUse, 2).unwrap();
        s2.overlaps = vec![99; s2.len() - 1];
        assert!(s2.validate(&w).is_err());
    }
}
