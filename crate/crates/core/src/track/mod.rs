//! Multi-object tracking of light pairs and single lights, and the per-track
//! "likely present" decision.

mod hungarian;
mod kalman;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use self::hungarian::{assign, Assignment};
pub use self::kalman::{
    asymmetry, diag, identity, kf_predict, kf_update, matmul, matvec, transition, transpose, KalmanState, Mat6, Vec6,
    DIM,
};

use crate::detect::FrameDetections;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Process noise for position and width.
    pub q_position: f64,
    pub q_velocity: f64,
    /// Measurement noise (pixels^2) per measured component.
    pub r: f64,
    /// Initial variance for velocity components of a new track.
    pub init_velocity_var: f64,
    /// Largest center distance (pixels) allowed for association.
    pub gate: f64,
    pub birth_hits: u32,
    pub death_misses: u32,
    pub conf_thresh: f64,
    pub expand_window: usize,
    pub expand_min_slope: f64,
    /// Capacity of each track's confidence ring buffer.
    pub history_len: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            q_position: 1e-2,
            q_velocity: 1e-1,
            r: 1.0,
            init_velocity_var: 10.0,
            gate: 50.0,
            birth_hits: 2,
            death_misses: 3,
            conf_thresh: 0.7,
            expand_window: 5,
            expand_min_slope: 0.5,
            history_len: 10,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.q_position, self.q_velocity, self.r, self.init_velocity_var];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("tracker noise terms must be positive"));
        }
        if !(self.gate > 0.0) || self.birth_hits == 0 || self.death_misses == 0 {
            return Err(Error::invalid("gate, birth_hits and death_misses must be positive"));
        }
        if self.expand_window < 2 || self.history_len == 0 {
            return Err(Error::invalid("expand_window must be >= 2 and history_len >= 1"));
        }
        Ok(())
    }

    pub fn q(&self) -> Vec6 {
        let (p, v) = (self.q_position, self.q_velocity);
        [p, p, p, v, v, v]
    }
}

/// A measurement for the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Detection {
    Pair {
        center: [f64; 2],
        width: f64,
        confidence: f64,
        geometry_pass: bool,
    },
    Single {
        center: [f64; 2],
        confidence: f64,
    },
}

impl Detection {
    pub fn center(&self) -> [f64; 2] {
        match *self {
            Detection::Pair { center, .. } | Detection::Single { center, .. } => center,
        }
    }

    pub fn confidence(&self) -> f64 {
        match *self {
            Detection::Pair { confidence, .. } | Detection::Single { confidence, .. } => confidence,
        }
    }
}

/// Pairs become pair measurements; remaining non-artifact lights become singles.
pub fn detections_from_frame(d: &FrameDetections) -> Vec<Detection> {
    let mut out: Vec<Detection> = d
        .pairs
        .iter()
        .map(|p| Detection::Pair {
            center: p.center(),
            width: p.width(),
            confidence: p.confidence(),
            geometry_pass: true,
        })
        .collect();
    out.extend(d.unpaired().into_iter().map(|i| Detection::Single {
        center: d.classified[i].proposal.centroid,
        confidence: d.classified[i].confidence,
    }));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LikelyPresent,
    Candidate,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    GeometryPass,
    Expanding,
    HighConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub track_id: u64,
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    /// Frames since birth, counting the birth frame.
    pub age: u32,
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
    /// Last measurement was a single light (position only).
    pub single: bool,
    /// The last measurement was a pair passing the geometric test, in this frame.
    pub geometry_pass: bool,
    pub confidence_history: VecDeque<f64>,
    /// Filtered width after each frame, newest last.
    pub width_history: VecDeque<f64>,
}

/// Least-squares slope of `ys` against `0, 1, ..`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let kbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dk = k as f64 - kbar;
        num += dk * (y - ybar);
        den += dk * dk;
    }
    num / den
}

/// Pure decision rule: any reason makes the verdict "likely present".
pub fn verdict_for(
    geometry_pass: bool,
    width_slope: f64,
    mean_confidence: f64,
    cfg: &TrackerConfig,
) -> (Verdict, Vec<Reason>) {
    let mut reasons = Vec::new();
    if geometry_pass {
        reasons.push(Reason::GeometryPass);
    }
    if width_slope >= cfg.expand_min_slope {
        reasons.push(Reason::Expanding);
    }
    if mean_confidence >= cfg.conf_thresh {
        reasons.push(Reason::HighConfidence);
    }
    let verdict = if reasons.is_empty() {
        Verdict::Candidate
    } else {
        Verdict::LikelyPresent
    };
    (verdict, reasons)
}

impl Track {
    pub fn mean_confidence(&self) -> f64 {
        if self.confidence_history.is_empty() {
            return 0.0;
        }
        self.confidence_history.iter().sum::<f64>() / self.confidence_history.len() as f64
    }

    /// Width slope over the last `window` frames, or 0 with fewer samples.
    pub fn width_slope(&self, window: usize) -> f64 {
        if self.width_history.len() < window {
            return 0.0;
        }
        let tail: Vec<f64> = self
            .width_history
            .iter()
            .skip(self.width_history.len() - window)
            .copied()
            .collect();
        ls_slope(&tail)
    }
}

pub fn decide(track: &Track, cfg: &TrackerConfig) -> Result<Decision> {
    if !track.confirmed {
        return Err(Error::invalid(format!("track {} is not confirmed", track.id)));
    }
    let geometry = track.geometry_pass && !track.single;
    let (verdict, reasons) = verdict_for(
        geometry,
        track.width_slope(cfg.expand_window),
        track.mean_confidence(),
        cfg,
    );
    Ok(Decision {
        track_id: track.id,
        verdict,
        reasons,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    pub next_id: u64,
    pub frames_seen: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
            frames_seen: 0,
        })
    }

    fn push_bounded(buf: &mut VecDeque<f64>, v: f64, cap: usize) {
        buf.push_back(v);
        while buf.len() > cap {
            buf.pop_front();
        }
    }

    fn apply(&self, track: &mut Track, det: &Detection) -> Result<()> {
        let r = self.config.r;
        match *det {
            Detection::Pair {
                center,
                width,
                geometry_pass,
                ..
            } => {
                track.state = kf_update(&track.state, &[center[0], center[1], width], &[0, 1, 2], &[r; 3])?;
                track.single = false;
                track.geometry_pass = geometry_pass;
            }
            Detection::Single { center, .. } => {
                track.state = kf_update(&track.state, &center, &[0, 1], &[r; 2])?;
                track.single = true;
                track.geometry_pass = false;
            }
        }
        Ok(())
    }

    fn spawn(&mut self, det: &Detection) -> Track {
        let c = det.center();
        let (w, single, geom) = match *det {
            Detection::Pair {
                width, geometry_pass, ..
            } => (width, false, geometry_pass),
            Detection::Single { .. } => (0.0, true, false),
        };
        let cfg = &self.config;
        let v = cfg.init_velocity_var;
        let id = self.next_id;
        self.next_id += 1;
        let mut t = Track {
            id,
            state: KalmanState {
                x: [c[0], c[1], w, 0.0, 0.0, 0.0],
                p: diag(&[cfg.r, cfg.r, cfg.r, v, v, v]),
            },
            age: 1,
            hits: 1,
            misses: 0,
            confirmed: cfg.birth_hits <= 1,
            single,
            geometry_pass: geom,
            confidence_history: VecDeque::new(),
            width_history: VecDeque::new(),
        };
        Self::push_bounded(&mut t.confidence_history, det.confidence(), cfg.history_len);
        Self::push_bounded(&mut t.width_history, w, cfg.expand_window);
        t
    }

    /// Advance one frame; returns a decision per confirmed track (deleted
    /// confirmed tracks report `rejected`), ordered by track id.
    pub fn step(&mut self, dets: &[Detection]) -> Result<Vec<Decision>> {
        let cfg = self.config.clone();
        self.frames_seen += 1;
        for t in &mut self.tracks {
            t.state = kf_predict(&t.state, &cfg.q())?;
            t.age += 1;
            t.geometry_pass = false;
        }
        let cost: Vec<Vec<f64>> = self
            .tracks
            .iter()
            .map(|t| {
                dets.iter()
                    .map(|d| {
                        let c = d.center();
                        ((t.state.x[0] - c[0]).powi(2) + (t.state.x[1] - c[1]).powi(2)).sqrt()
                    })
                    .collect()
            })
            .collect();
        let a = assign(&cost, dets.len(), cfg.gate);
        let mut matched = vec![false; self.tracks.len()];
        for &(ti, di) in &a.pairs {
            let mut t = self.tracks[ti].clone();
            self.apply(&mut t, &dets[di])?;
            t.hits += 1;
            t.misses = 0;
            Self::push_bounded(&mut t.confidence_history, dets[di].confidence(), cfg.history_len);
            if t.hits >= cfg.birth_hits {
                t.confirmed = true;
            }
            self.tracks[ti] = t;
            matched[ti] = true;
        }
        for (t, m) in self.tracks.iter_mut().zip(&matched) {
            if !m {
                t.misses += 1;
            }
            let w = t.state.x[2];
            Self::push_bounded(&mut t.width_history, w, cfg.expand_window);
        }
        let mut decisions = Vec::new();
        let mut kept = Vec::with_capacity(self.tracks.len());
        for t in std::mem::take(&mut self.tracks) {
            if t.misses >= cfg.death_misses {
                if t.confirmed {
                    decisions.push(Decision {
                        track_id: t.id,
                        verdict: Verdict::Rejected,
                        reasons: Vec::new(),
                    });
                }
            } else {
                kept.push(t);
            }
        }
        self.tracks = kept;
        for &di in &a.unmatched_cols {
            let t = self.spawn(&dets[di]);
            self.tracks.push(t);
        }
        for t in &self.tracks {
            if t.confirmed {
                decisions.push(decide(t, &cfg)?);
            }
        }
        decisions.sort_by_key(|d| d.track_id);
        Ok(decisions)
    }
}

/// Functional form of [`Tracker::step`].
pub fn step_tracker(tracker: &Tracker, dets: &[Detection]) -> Result<(Tracker, Vec<Decision>)> {
    let mut next = tracker.clone();
    let d = next.step(dets)?;
    Ok((next, d))
}

/// Per-frame snapshot of one track for `tracks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSnapshot {
    pub id: u64,
    pub state: Vec6,
    pub covariance_diagonal: Vec6,
    pub confirmed: bool,
    pub single: bool,
    pub verdict: Option<Verdict>,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTracks {
    pub frame_index: u64,
    pub tracks: Vec<TrackSnapshot>,
    pub decisions: Vec<Decision>,
}

/// Run the tracker over a scene's detections in frame order.
pub fn track_scene(frames: &[FrameDetections], cfg: &TrackerConfig) -> Result<Vec<FrameTracks>> {
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let decisions = tracker.step(&detections_from_frame(f))?;
        let tracks = tracker
            .tracks
            .iter()
            .map(|t| {
                let d = decisions.iter().find(|d| d.track_id == t.id);
                TrackSnapshot {
                    id: t.id,
                    state: t.state.x,
                    covariance_diagonal: t.state.covariance_diagonal(),
                    confirmed: t.confirmed,
                    single: t.single,
                    verdict: d.map(|d| d.verdict),
                    reasons: d.map(|d| d.reasons.clone()).unwrap_or_default(),
                }
            })
            .collect();
        out.push(FrameTracks {
            frame_index: f.frame_index,
            tracks,
            decisions,
        });
    }
    Ok(out)
}
