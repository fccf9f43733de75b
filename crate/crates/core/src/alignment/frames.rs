use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense frame-level features on a uniform time grid: frame `j` sits at
/// `offset + j * stride` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStream {
    pub stride: f64,
    pub offset: f64,
    pub features: Tensor<f32>,
}

pub const DEFAULT_STRIDE: f64 = 0.02;

impl FrameStream {
    pub fn new(stride: f64, offset: f64, features: Tensor<f32>) -> Result<Self> {
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(Error::contract(format!("frame stride {stride} must be positive")));
        }
        if !offset.is_finite() {
            return Err(Error::contract("frame offset must be finite"));
        }
        if features.shape().len() != 2 {
            return Err(Error::contract(format!(
                "frame features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        Ok(FrameStream {
            stride,
            offset,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        self.offset + j as f64 * self.stride
    }

    /// Frames with `start <= t_j < end`. The estimate from division is
    /// corrected against the exact predicate at both edges, so the result
    /// agrees with a frame-by-frame scan.
    pub fn frames_in(&self, start: f64, end: f64) -> Range<usize> {
        let n = self.len();
        let guess = |t: f64| -> usize {
            let x = ((t - self.offset) / self.stride).floor();
            if x <= 0.0 {
                0
            } else {
                (x as usize).min(n)
            }
        };
        let mut lo = guess(start);
        while lo > 0 && self.time(lo - 1) >= start {
            lo -= 1;
        }
        while lo < n && self.time(lo) < start {
            lo += 1;
        }
        let mut hi = guess(end).max(lo);
        while hi > lo && self.time(hi - 1) >= end {
            hi -= 1;
        }
        while hi < n && self.time(hi) < end {
            hi += 1;
        }
        lo..hi
    }

    /// Frame whose timestamp is closest to `t`; ties go to the earlier frame.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let n = self.len();
        let x = ((t - self.offset) / self.stride).round();
        let c = if x <= 0.0 { 0 } else { (x as usize).min(n - 1) };
        let lo = c.saturating_sub(1);
        let hi = (c + 1).min(n - 1);
        let mut best = lo;
        for j in lo..=hi {
            if (self.time(j) - t).abs() < (self.time(best) - t).abs() {
                best = j;
            }
        }
        best
    }

    /// Mean of the frames in `[start, end)`. With no frame inside, falls
    /// back to the frame nearest the interval midpoint.
    pub fn mean_over(&self, start: f64, end: f64) -> Result<Vec<f32>> {
        if self.is_empty() {
            return Err(Error::contract("frame stream is empty"));
        }
        let range = self.frames_in(start, end);
        if range.is_empty() {
            let j = self.nearest_frame(0.5 * (start + end));
            return Ok(self.features.row(j).to_vec());
        }
        let d = self.dim();
        let mut acc = vec![0f64; d];
        for j in range.clone() {
            for (a, &v) in acc.iter_mut().zip(self.features.row(j)) {
                *a += v as f64;
            }
        }
        let n = range.len() as f64;
        Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
    }
}

/// Word-level audio embedding: mean of frames inside `[t_start, t_end)`.
pub fn pool_word_embedding(stream: &FrameStream, t_start: f64, t_end: f64) -> Result<Vec<f32>> {
    if !(t_start < t_end) {
        return Err(Error::contract(format!(
            "word interval [{t_start}, {t_end}) is empty"
        )));
    }
    stream.mean_over(t_start, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, dim: usize) -> FrameStream {
        let data = (0..frames * dim).map(|i| (i / dim) as f32).collect();
        FrameStream::new(0.02, 0.0, Tensor::new(vec![frames, dim], data).unwrap()).unwrap()
    }

    #[test]
    fn word_interval_covers_frames_five_through_nine() {
        let s = ramp(50, 2);
        // enumerate t_j = 0.02 j and test membership directly
        let members: Vec<usize> = (0..50).filter(|&j| {
            let t = j as f64 * 0.02;
            (0.10..0.20).contains(&t)
        }).collect();
        assert_eq!(members, vec![5, 6, 7, 8, 9]);
        assert_eq!(s.frames_in(0.10, 0.20), 5..10);
        let v = pool_word_embedding(&s, 0.10, 0.20).unwrap();
        assert_eq!(v, vec![7.0, 7.0]);
    }

    #[test]
    fn constant_stream_pools_to_constant() {
        let s = FrameStream::new(0.02, 0.0, Tensor::full(vec![30, 3], 1.25)).unwrap();
        for (a, b) in [(0.0, 0.01), (0.013, 0.5), (0.1, 0.33), (2.0, 3.0)] {
            assert_eq!(pool_word_embedding(&s, a, b).unwrap(), vec![1.25; 3]);
        }
    }

    #[test]
    fn narrow_interval_falls_back_to_nearest_frame() {
        let s = ramp(10, 1);
        // [0.101, 0.115) holds no frame timestamp; midpoint 0.108 is nearest t_5 = 0.10
        assert!(s.frames_in(0.101, 0.115).is_empty());
        assert_eq!(pool_word_embedding(&s, 0.101, 0.115).unwrap(), vec![5.0]);
        // midpoint 0.1125 is nearest t_6 = 0.12
        assert_eq!(pool_word_embedding(&s, 0.105, 0.12).unwrap(), vec![6.0]);
    }

    #[test]
    fn interval_past_the_end_uses_last_frame() {
        let s = ramp(10, 1);
        assert_eq!(pool_word_embedding(&s, 5.0, 6.0).unwrap(), vec![9.0]);
    }

    #[test]
    fn empty_stream_and_empty_interval_are_errors() {
        let s = FrameStream::new(0.02, 0.0, Tensor::zeros(vec![0, 4])).unwrap();
        assert!(pool_word_embedding(&s, 0.0, 1.0).is_err());
        let s = ramp(10, 1);
        assert!(pool_word_embedding(&s, 0.2, 0.2).is_err());
    }

    #[test]
    fn offset_shifts_membership() {
        let s = FrameStream::new(0.02, 0.05, Tensor::full(vec![10, 1], 0.0)).unwrap();
        // t_j = 0.05 + 0.02 j
        let expect: Vec<usize> = (0..10).filter(|&j| {
            let t = 0.05 + j as f64 * 0.02;
            t >= 0.09 && t < 0.15
        }).collect();
        let r = s.frames_in(0.09, 0.15);
        assert_eq!(r.collect::<Vec<_>>(), expect);
    }
}
