use std::rc::Rc;

use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Max,
    Min,
    Mean,
}

/// Validated, sorted segment ids with precomputed offsets.
///
/// Segment `s` owns rows `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    ids: Rc<[usize]>,
    offsets: Rc<[usize]>,
}

impl Segments {
    pub fn new(ids: Vec<usize>, n_segments: usize) -> Result<Self> {
        if let Some(w) = ids.windows(2).find(|w| w[0] > w[1]) {
            return Err(Error::InvalidSegments(format!(
                "ids must be sorted ascending ({} before {})",
                w[0], w[1]
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_segments) {
            return Err(Error::InvalidSegments(format!(
                "id {bad} out of range for {n_segments} segments"
            )));
        }
        let mut offsets = vec![0usize; n_segments + 1];
        for &i in &ids {
            offsets[i + 1] += 1;
        }
        if let Some(empty) = (0..n_segments).find(|&s| offsets[s + 1] == 0) {
            return Err(Error::EmptyNeighbourhood(empty));
        }
        for s in 0..n_segments {
            offsets[s + 1] += offsets[s];
        }
        Ok(Self {
            ids: ids.into(),
            offsets: offsets.into(),
        })
    }

    /// Segments given by their sizes, in order.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let ids = counts
            .iter()
            .enumerate()
            .flat_map(|(s, &c)| std::iter::repeat_n(s, c))
            .collect();
        Self::new(ids, counts.len())
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn n_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn count(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.n_segments()).map(|s| self.count(s)).collect()
    }

    /// Segments of `self` followed by those of `other`, ids shifted.
    pub fn concat(parts: &[&Segments]) -> Result<Self> {
        let mut counts = Vec::new();
        for p in parts {
            counts.extend(p.counts());
        }
        Self::from_counts(&counts)
    }
}

impl Tensor {
    /// Per-segment reduction of the rows of an `[m×d]` tensor.
    ///
    /// Max/min route the gradient to the first row (in segment order) that
    /// attains the extremum.
    pub fn segment_reduce(&self, seg: &Segments, kind: ReduceKind) -> Result<Tensor> {
        let m = self.rows();
        if m != seg.n_rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_reduce",
                lhs: self.shape().to_vec(),
                rhs: vec![seg.n_rows()],
            });
        }
        let d = self.cols();
        let n_seg = seg.n_segments();
        let x = self.data();
        let mut out = vec![0.0; n_seg * d];
        // argmax/argmin row per output cell
        let mut arg: Vec<usize> = Vec::new();

        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for s in 0..n_seg {
                    let dst = &mut out[s * d..(s + 1) * d];
                    for r in seg.range(s) {
                        dst.iter_mut().zip(&x[r * d..(r + 1) * d]).for_each(|(o, v)| *o += v);
                    }
                    if kind == ReduceKind::Mean {
                        let inv = 1.0 / seg.count(s) as f64;
                        dst.iter_mut().for_each(|o| *o *= inv);
                    }
                }
            }
            ReduceKind::Max | ReduceKind::Min => {
                arg = vec![0; n_seg * d];
                let better = |cand: f64, best: f64| match kind {
                    ReduceKind::Max => cand > best,
                    _ => cand < best,
                };
                for s in 0..n_seg {
                    let range = seg.range(s);
                    let first = range.start;
                    for j in 0..d {
                        let mut best_row = first;
                        let mut best = x[first * d + j];
                        for r in range.clone().skip(1) {
                            let v = x[r * d + j];
                            if better(v, best) {
                                best = v;
                                best_row = r;
                            }
                        }
                        out[s * d + j] = best;
                        arg[s * d + j] = best_row;
                    }
                }
            }
        }
        drop(x);

        let seg = seg.clone();
        let mut shape = self.shape().to_vec();
        shape[0] = n_seg;
        if shape.len() == 1 {
            shape.push(1);
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; total];
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        for s in 0..seg.n_segments() {
                            let scale = if kind == ReduceKind::Mean {
                                1.0 / seg.count(s) as f64
                            } else {
                                1.0
                            };
                            let src = &ctx.grad[s * d..(s + 1) * d];
                            for r in seg.range(s) {
                                g[r * d..(r + 1) * d]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(o, v)| *o += v * scale);
                            }
                        }
                    }
                    ReduceKind::Max | ReduceKind::Min => {
                        for (cell, &row) in arg.iter().enumerate() {
                            let j = cell % d;
                            g[row * d + j] += ctx.grad[cell];
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Broadcasts per-segment rows back onto the rows of the segmented tensor.
    pub fn segment_expand(&self, seg: &Segments) -> Result<Tensor> {
        if self.rows() != seg.n_segments() {
            return Err(Error::ShapeMismatch {
                op: "segment_expand",
                lhs: self.shape().to_vec(),
                rhs: vec![seg.n_segments()],
            });
        }
        self.gather_rows(seg.ids())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::param(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn reductions_on_two_segments() {
        let seg = Segments::new(vec![0, 0, 1, 1], 2).unwrap();
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let r = |k| x.segment_reduce(&seg, k).unwrap().to_vec();
        assert_eq!(r(ReduceKind::Sum), vec![3.0, 7.0]);
        assert_eq!(r(ReduceKind::Max), vec![2.0, 4.0]);
        assert_eq!(r(ReduceKind::Min), vec![1.0, 3.0]);
        assert_eq!(r(ReduceKind::Mean), vec![1.5, 3.5]);
    }

    #[test]
    fn empty_segment_is_an_error() {
        assert_eq!(Segments::new(vec![0, 0, 2], 3), Err(Error::EmptyNeighbourhood(1)));
    }

    #[test]
    fn unsorted_or_out_of_range_ids_rejected() {
        assert!(matches!(Segments::new(vec![1, 0], 2), Err(Error::InvalidSegments(_))));
        assert!(matches!(Segments::new(vec![0, 2], 2), Err(Error::InvalidSegments(_))));
    }

    #[test]
    fn max_tie_routes_to_first_row() {
        let seg = Segments::new(vec![0, 0, 0], 1).unwrap();
        let x = col(&[5.0, 5.0, 1.0]);
        x.segment_reduce(&seg, ReduceKind::Max)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_backward_scatters_scaled() {
        let seg = Segments::new(vec![0, 0, 1], 2).unwrap();
        let x = col(&[1.0, 2.0, 3.0]);
        x.segment_reduce(&seg, ReduceKind::Mean)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn multi_feature_layout() {
        let seg = Segments::new(vec![0, 0, 1], 2).unwrap();
        let x = Tensor::new(vec![3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let s = x.segment_reduce(&seg, ReduceKind::Sum).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.to_vec(), vec![3.0, 30.0, 3.0, 30.0]);
        let e = s.segment_expand(&seg).unwrap();
        assert_eq!(e.to_vec(), vec![3.0, 30.0, 3.0, 30.0, 3.0, 30.0]);
    }
}
