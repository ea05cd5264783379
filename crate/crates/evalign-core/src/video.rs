//! Event extraction from ordinary video.
//!
//! Consecutive grayscale frames are differenced against a pixel threshold;
//! a window of frames yields one accumulated event instance, labelled by
//! majority vote over the per-frame labels when those exist.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::event::{normalize_grid, CountGrid, EventFrame};

/// Decoded grayscale video with optional per-frame normal/abnormal labels.
#[derive(Debug, Clone)]
pub struct VideoClip {
    frames: Vec<Array2<u8>>,
    labels: Option<Vec<u8>>,
}

impl VideoClip {
    pub fn new(frames: Vec<Array2<u8>>, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let dim = first.dim();
            for (i, f) in frames.iter().enumerate() {
                if f.dim() != dim {
                    return Err(Error::Dimension(format!(
                        "frame {i} has shape {:?}, expected {:?}",
                        f.dim(),
                        dim
                    )));
                }
            }
        }
        if let Some(ref l) = labels {
            if l.len() != frames.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} frames",
                    l.len(),
                    frames.len()
                )));
            }
            for (i, &v) in l.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Data(format!("label {v} at frame {i} not in {{0, 1}}")));
                }
            }
        }
        Ok(Self { frames, labels })
    }

    pub fn frames(&self) -> &[Array2<u8>] {
        &self.frames
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One extracted event instance covering `source_range` (half-open frame
/// interval) of its clip.
#[derive(Debug, Clone)]
pub struct EventInstance {
    pub frame: EventFrame,
    pub label: Option<u8>,
    pub source_range: (usize, usize),
}

/// Windowing parameters for [`segment_video`].
#[derive(Debug, Clone, Copy)]
pub struct SegmentConfig {
    pub window: usize,
    pub stride: usize,
    pub threshold: u8,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { window: 16, stride: 16, threshold: 25 }
    }
}

/// Marks pixels whose absolute difference strictly exceeds `threshold`.
///
/// "Exceeds" is read strictly: a difference equal to the threshold does not
/// activate the pixel.
pub fn frame_diff(prev: &Array2<u8>, curr: &Array2<u8>, threshold: u8) -> Result<Array2<u8>> {
    if prev.dim() != curr.dim() {
        return Err(Error::Dimension(format!(
            "frame shapes differ: {:?} vs {:?}",
            prev.dim(),
            curr.dim()
        )));
    }
    let mut out = Array2::<u8>::zeros(prev.dim());
    for ((o, &a), &b) in out.iter_mut().zip(prev.iter()).zip(curr.iter()) {
        let diff = (i16::from(b) - i16::from(a)).unsigned_abs() as u8;
        *o = u8::from(diff > threshold);
    }
    Ok(out)
}

/// Accumulates the W-1 consecutive diff maps of a W-frame window into a
/// count grid and normalizes it into an event frame.
pub fn build_event_instance(window: &[Array2<u8>], threshold: u8) -> Result<EventFrame> {
    if window.len() < 2 {
        return Err(Error::Config(format!(
            "window of {} frames cannot produce a diff; need at least 2",
            window.len()
        )));
    }
    let mut counts = Array2::<u32>::zeros(window[0].dim());
    for pair in window.windows(2) {
        let diff = frame_diff(&pair[0], &pair[1], threshold)?;
        counts.zip_mut_with(&diff, |c, &d| *c += u32::from(d));
    }
    Ok(normalize_grid(&CountGrid::from_counts(counts)))
}

/// Majority label over a window; an exact tie resolves to abnormal (1).
pub fn majority_vote_label(window_labels: &[u8]) -> Result<u8> {
    let mut ones = 0usize;
    for (i, &v) in window_labels.iter().enumerate() {
        match v {
            0 => {}
            1 => ones += 1,
            other => return Err(Error::Data(format!("label {other} at index {i} not in {{0, 1}}"))),
        }
    }
    Ok(u8::from(2 * ones >= window_labels.len()))
}

/// Splits a clip into windowed event instances in frame order.
///
/// The trailing remainder shorter than one window is dropped. Instances get
/// majority-vote labels when the clip carries per-frame labels.
pub fn segment_video(clip: &VideoClip, cfg: &SegmentConfig) -> Result<Vec<EventInstance>> {
    if clip.is_empty() {
        return Err(Error::Data("empty clip".into()));
    }
    if cfg.window < 2 {
        return Err(Error::Config("window must be at least 2 frames".into()));
    }
    if cfg.stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if clip.len() < cfg.window {
        return Err(Error::Data(format!(
            "clip of {} frames shorter than window {}",
            clip.len(),
            cfg.window
        )));
    }
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + cfg.window <= clip.len() {
        let end = start + cfg.window;
        let frame = build_event_instance(&clip.frames()[start..end], cfg.threshold)?;
        let label = match clip.labels() {
            Some(labels) => Some(majority_vote_label(&labels[start..end])?),
            None => None,
        };
        out.push(EventInstance { frame, label, source_range: (start, end) });
        start += cfg.stride;
    }
    Ok(out)
}

/// BT.601 luma conversion for color sources.
pub fn gray_from_rgb(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(h: usize, w: usize, v: u8) -> Array2<u8> {
        Array2::from_elem((h, w), v)
    }

    #[test]
    fn identical_frames_produce_no_events() {
        let a = flat(4, 4, 100);
        let d = frame_diff(&a, &a, 25).unwrap();
        assert!(d.iter().all(|&v| v == 0));
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let mut prev = flat(2, 2, 100);
        let mut curr = flat(2, 2, 100);
        prev[(0, 0)] = 100;
        curr[(0, 0)] = 125; // diff 25: not an event
        curr[(0, 1)] = 126; // diff 26: event
        let d = frame_diff(&prev, &curr, 25).unwrap();
        assert_eq!(d[(0, 0)], 0);
        assert_eq!(d[(0, 1)], 1);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let err = frame_diff(&flat(2, 2, 0), &flat(2, 3, 0), 25).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn static_window_yields_zero_frame() {
        let frames: Vec<_> = (0..16).map(|_| flat(4, 4, 77)).collect();
        let f = build_event_instance(&frames, 25).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_firing_every_transition_counts_fifteen() {
        // One pixel alternates 0/255 across 16 frames: 15 diffs fire.
        let frames: Vec<_> = (0..16)
            .map(|i| {
                let mut f = flat(4, 4, 0);
                f[(1, 1)] = if i % 2 == 0 { 0 } else { 255 };
                f
            })
            .collect();
        let out = build_event_instance(&frames, 25).unwrap();
        assert_eq!(out.values()[(1, 1)], 15.0 / 16.0);
        assert_eq!(out.values()[(0, 0)], 0.0);
    }

    #[test]
    fn alternating_pixels_share_the_denominator() {
        // Pixel A changes on transitions 0,2,...,14 (8 of them); pixel B on
        // 1,3,...,13 (7). Max count 8 gives denominator 9.
        let frames: Vec<_> = (0..16)
            .map(|i| {
                let mut f = flat(4, 4, 0);
                // A flips value on every even transition: value changes at i=1,3,..
                f[(0, 0)] = if (i + 1) / 2 % 2 == 1 { 255 } else { 0 };
                f[(3, 3)] = if i / 2 % 2 == 1 { 255 } else { 0 };
                f
            })
            .collect();
        let out = build_event_instance(&frames, 25).unwrap();
        assert_eq!(out.values()[(0, 0)], 8.0 / 9.0);
        assert_eq!(out.values()[(3, 3)], 7.0 / 9.0);
    }

    #[test]
    fn short_window_is_config_error() {
        let err = build_event_instance(&[flat(2, 2, 0)], 25).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn majority_vote_examples() {
        assert_eq!(majority_vote_label(&[0; 16]).unwrap(), 0);
        let mut nine_ones = vec![1u8; 9];
        nine_ones.extend_from_slice(&[0; 7]);
        assert_eq!(majority_vote_label(&nine_ones).unwrap(), 1);
        let mut tie = vec![1u8; 8];
        tie.extend_from_slice(&[0; 8]);
        assert_eq!(majority_vote_label(&tie).unwrap(), 1);
    }

    #[test]
    fn majority_vote_rejects_bad_labels() {
        assert!(matches!(majority_vote_label(&[0, 2]), Err(Error::Data(_))));
    }

    #[test]
    fn segmentation_counts() {
        let clip = |n: usize| VideoClip::new((0..n).map(|_| flat(2, 2, 0)).collect(), None).unwrap();
        let cfg = SegmentConfig::default();
        let inst = segment_video(&clip(48), &cfg).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0].source_range, (0, 16));
        assert_eq!(inst[2].source_range, (32, 48));

        assert_eq!(segment_video(&clip(47), &cfg).unwrap().len(), 2);

        let cfg8 = SegmentConfig { stride: 8, ..cfg };
        assert_eq!(segment_video(&clip(32), &cfg8).unwrap().len(), 3);
    }

    #[test]
    fn empty_clip_is_data_error() {
        let clip = VideoClip::new(vec![], None).unwrap();
        assert!(matches!(segment_video(&clip, &SegmentConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn window_labels_use_majority_vote() {
        let frames: Vec<_> = (0..32).map(|_| flat(2, 2, 0)).collect();
        let mut labels = vec![0u8; 32];
        for l in labels.iter_mut().take(16).skip(7) {
            *l = 1; // 9 ones in the first window
        }
        let clip = VideoClip::new(frames, Some(labels)).unwrap();
        let inst = segment_video(&clip, &SegmentConfig::default()).unwrap();
        assert_eq!(inst[0].label, Some(1));
        assert_eq!(inst[1].label, Some(0));
    }

    proptest! {
        #[test]
        fn majority_matches_exhaustive_recount(labels in proptest::collection::vec(0u8..2, 1..33)) {
            let got = majority_vote_label(&labels).unwrap();
            let ones = labels.iter().filter(|&&v| v == 1).count();
            let zeros = labels.len() - ones;
            let expect = if ones > zeros { 1 } else if zeros > ones { 0 } else { 1 };
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn instance_frames_obey_event_frame_invariants(
            vals in proptest::collection::vec(0u8..=255, 16 * 9),
        ) {
            let frames: Vec<_> = vals
                .chunks(9)
                .map(|c| Array2::from_shape_vec((3, 3), c.to_vec()).unwrap())
                .collect();
            let f = build_event_instance(&frames, 25).unwrap();
            for &v in f.values().iter() {
                prop_assert!((0.0..1.0).contains(&v));
            }
        }
    }
}
