//! Clip extraction: uniform temporal resampling followed by sliding
//! windows.

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::simgen::DemoEpisode;

/// One encoder input: a fixed-length window of observation frames plus
/// where it came from.
#[derive(Debug, Clone)]
pub struct ClipWindow {
    /// L x d_obs frame block.
    pub frames: Tensor,
    /// Identifier of the source episode.
    pub episode: String,
    /// Window start on the resampled timeline.
    pub start: usize,
}

/// Indices of a uniform `m`-point resample of a length-`t` sequence,
/// endpoints included. Repeats frames when `t < m`.
pub fn subsample_indices(t: usize, m: usize) -> Vec<usize> {
    assert!(t > 0 && m > 0);
    if m == 1 {
        return vec![0];
    }
    (0..m)
        .map(|j| ((j as f64) * (t as f64 - 1.0) / (m as f64 - 1.0)).round() as usize)
        .collect()
}

/// Splits an episode into overlapping clips: resample to `m` frames, then
/// take windows of `l` frames every `stride`. Yields exactly
/// `(m - l) / stride + 1` clips.
pub fn make_clips(episode: &DemoEpisode, cfg: &EncoderConfig) -> Result<Vec<ClipWindow>> {
    cfg.validate()?;
    let t = episode.len();
    if t < cfg.l {
        return Err(Error::InvalidArgument(format!(
            "episode has {t} frames; need at least {} to window",
            cfg.l
        )));
    }
    let d_obs = episode.frames.cols;
    let idx = subsample_indices(t, cfg.m);
    let mut sub = Tensor::zeros(cfg.m, d_obs);
    for (j, &src) in idx.iter().enumerate() {
        sub.data[j * d_obs..(j + 1) * d_obs]
            .copy_from_slice(&episode.frames.data[src * d_obs..(src + 1) * d_obs]);
    }

    let id = format!(
        "{}|{}|x{}|s{}",
        episode.task_id, episode.embodiment, episode.speed, episode.seed
    );
    let mut out = Vec::with_capacity(cfg.clips_per_episode());
    let mut start = 0;
    while start + cfg.l <= cfg.m {
        let mut frames = Tensor::zeros(cfg.l, d_obs);
        frames
            .data
            .copy_from_slice(&sub.data[start * d_obs..(start + cfg.l) * d_obs]);
        out.push(ClipWindow {
            frames,
            episode: id.clone(),
            start,
        });
        start += cfg.stride;
    }
    Ok(out)
}

/// The `l` frames ending at (and including) row `end`, repeating the first
/// row when the prefix is shorter than the window. This is the streaming
/// path: executors encode the robot's most recent window with it.
pub fn trailing_window(frames: &Tensor, end: usize, l: usize) -> Result<Tensor> {
    if end >= frames.rows {
        return Err(Error::InvalidArgument(format!(
            "window end {end} out of range for {} frames",
            frames.rows
        )));
    }
    let d = frames.cols;
    let mut out = Tensor::zeros(l, d);
    for j in 0..l {
        let want = end as i64 - (l as i64 - 1 - j as i64);
        let src = want.max(0) as usize;
        out.data[j * d..(j + 1) * d].copy_from_slice(&frames.data[src * d..(src + 1) * d]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{make_task, render_episode, SimgenConfig, TaskCategory, World};

    fn tiny_cfg(l: usize, stride: usize, m: usize) -> EncoderConfig {
        EncoderConfig {
            l,
            stride,
            m,
            ..EncoderConfig::default()
        }
    }

    fn episode() -> (World, DemoEpisode) {
        let w = World::generate(&SimgenConfig::default(), 42).unwrap();
        let s = make_task(&w, TaskCategory::MultiStep, 3).unwrap();
        let ep = render_episode(&w, "t", &s, "human", 1.0, 3).unwrap();
        (w, ep)
    }

    #[test]
    fn window_count_and_starts() {
        let (_, ep) = episode();
        let clips = make_clips(&ep, &tiny_cfg(4, 2, 10)).unwrap();
        assert_eq!(clips.len(), 4);
        let starts: Vec<usize> = clips.iter().map(|c| c.start).collect();
        assert_eq!(starts, vec![0, 2, 4, 6]);
        for c in &clips {
            assert_eq!(c.frames.shape(), (4, ep.frames.cols));
        }
    }

    #[test]
    fn m_equals_l_gives_one_clip() {
        let (_, ep) = episode();
        let clips = make_clips(&ep, &tiny_cfg(8, 2, 8)).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].start, 0);
    }

    #[test]
    fn unit_stride_windows_share_all_but_one_frame() {
        let (_, ep) = episode();
        let clips = make_clips(&ep, &tiny_cfg(8, 1, 16)).unwrap();
        assert_eq!(clips.len(), 9);
        let d = ep.frames.cols;
        for pair in clips.windows(2) {
            // Rows 1..8 of clip i equal rows 0..7 of clip i+1.
            assert_eq!(
                &pair[0].frames.data[d..8 * d],
                &pair[1].frames.data[..7 * d]
            );
        }
    }

    #[test]
    fn default_config_yields_expected_count() {
        let (_, ep) = episode();
        let cfg = EncoderConfig::default();
        let clips = make_clips(&ep, &cfg).unwrap();
        assert_eq!(clips.len(), cfg.clips_per_episode());
        assert_eq!(clips.len(), 29);
    }

    #[test]
    fn subsample_spans_endpoints_monotonically() {
        for t in [2usize, 7, 64, 113] {
            for m in [2usize, 8, 64] {
                let idx = subsample_indices(t, m);
                assert_eq!(idx.len(), m);
                assert_eq!(idx[0], 0);
                assert_eq!(*idx.last().unwrap(), t - 1);
                assert!(idx.windows(2).all(|p| p[0] <= p[1]));
                if t >= m {
                    assert!(idx.windows(2).all(|p| p[0] < p[1]), "t={t} m={m}");
                }
            }
        }
    }

    #[test]
    fn short_episode_rejected_with_minimum() {
        let (_, ep) = episode();
        let mut short = ep.clone();
        short.frames = Tensor::zeros(5, ep.frames.cols);
        let err = make_clips(&short, &tiny_cfg(8, 2, 16)).unwrap_err();
        assert!(err.to_string().contains('8'), "{err}");
    }

    #[test]
    fn clip_content_matches_resampled_rows() {
        let (_, ep) = episode();
        let cfg = tiny_cfg(4, 3, 12);
        let idx = subsample_indices(ep.len(), 12);
        let clips = make_clips(&ep, &cfg).unwrap();
        for c in &clips {
            for j in 0..4 {
                assert_eq!(c.frames.row(j), ep.frames.row(idx[c.start + j]));
            }
        }
    }

    #[test]
    fn trailing_window_repeats_left_edge() {
        let f = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 10.0],
            vec![2.0, 20.0],
        ])
        .unwrap();
        let w = trailing_window(&f, 1, 4).unwrap();
        assert_eq!(w.row(0), &[0.0, 0.0]);
        assert_eq!(w.row(1), &[0.0, 0.0]);
        assert_eq!(w.row(2), &[0.0, 0.0]);
        assert_eq!(w.row(3), &[1.0, 10.0]);
        let full = trailing_window(&f, 2, 2).unwrap();
        assert_eq!(full.row(0), &[1.0, 10.0]);
        assert_eq!(full.row(1), &[2.0, 20.0]);
        assert!(trailing_window(&f, 3, 2).is_err());
    }
}
