//! Confusion matrices, mIoU and tiled inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::numerics::{kernels, Tensor};

/// `K x K` pixel counts, rows are ground truth and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { k: num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Shape(format!(
                "{} counts for a {}x{} matrix",
                counts.len(),
                num_classes,
                num_classes
            )));
        }
        Ok(ConfusionMatrix { k: num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose truth is not [`IGNORE_INDEX`].
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE_INDEX {
                continue;
            }
            if t as usize >= self.k || p as usize >= self.k {
                return Err(Error::Data(format!(
                    "class pair (truth {t}, pred {p}) outside 0..{}",
                    self.k
                )));
            }
            self.counts[t as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn accumulate_maps(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
        }
        self.accumulate(pred.data(), truth.data())
    }

    /// Entry-wise sum, for reducing per-thread matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!("merging {}-class into {}-class matrix", other.k, self.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// IoU per class; `None` where the class is absent from truth and prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.k).map(|t| self.get(t, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in truth or prediction; 0 when empty.
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

/// Nearest multiple of `divisor` (halves round up), never below `divisor`.
pub fn nearest_multiple(size: usize, divisor: usize) -> usize {
    (((size + divisor / 2) / divisor) * divisor).max(divisor)
}

/// Resizes an image so both sides are multiples of `divisor`, returning the
/// original `(height, width)` for mapping predictions back.
pub fn resize_for_inference(image: &Tensor, divisor: usize) -> Result<(Tensor, (usize, usize))> {
    if divisor == 0 {
        return Err(Error::Parameter("divisor must be >= 1".into()));
    }
    let [_, _, h, w] = image.dims4()?;
    let resized = kernels::bilinear_resize(image, nearest_multiple(h, divisor), nearest_multiple(w, divisor))?;
    Ok((resized, (h, w)))
}

/// Runs `predict` on an image resized to a multiple of `divisor` and
/// resizes the logits back to the original size.
pub fn predict_any_size<F>(predict: &F, image: &Tensor, divisor: usize) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let (resized, (h, w)) = resize_for_inference(image, divisor)?;
    let logits = predict(&resized)?;
    kernels::bilinear_resize(&logits, h, w)
}

/// Which network of the pair to score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Junior,
    Senior,
}

/// What gets averaged where sliding windows overlap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    #[default]
    Logits,
    Probabilities,
}

/// Window start offsets covering `size`, the last one flush with the border.
pub fn window_starts(size: usize, window: usize, stride: usize) -> Vec<usize> {
    if window >= size {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=size - window).step_by(stride).collect();
    if *starts.last().unwrap() != size - window {
        starts.push(size - window);
    }
    starts
}

/// Tiled prediction for a `[1,C,H,W]` image.
///
/// Windows of `window x window` pixels (clipped to the image) advance by
/// `stride`; overlapping outputs are averaged per pixel. A window larger
/// than the image collapses to a single full-image pass on that axis.
pub fn sliding_window_predict<F>(predict: &F, image: &Tensor, window: usize, stride: usize, blend: Blend) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if stride == 0 || window < stride {
        return Err(Error::Parameter(format!("need window >= stride >= 1, got {window}/{stride}")));
    }
    let [n, _, h, w] = image.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!("sliding window takes one image, got {n}")));
    }
    if window >= h && window >= w {
        return predict(image);
    }
    let (wh, ww) = (window.min(h), window.min(w));
    let mut sum: Option<Vec<f64>> = None;
    let mut count = vec![0u32; h * w];
    let mut k = 0;
    for &top in &window_starts(h, window, stride) {
        for &left in &window_starts(w, window, stride) {
            let tile = predict(&image.crop(top, left, wh, ww)?)?;
            let tile = match blend {
                Blend::Logits => tile,
                Blend::Probabilities => kernels::softmax(&tile, 1, 1.0)?,
            };
            let [_, tk, th, tw] = tile.dims4()?;
            if (th, tw) != (wh, ww) {
                return Err(Error::Shape(format!("tile prediction {th}x{tw}, expected {wh}x{ww}")));
            }
            k = tk;
            let acc = sum.get_or_insert_with(|| vec![0.0; tk * h * w]);
            for c in 0..tk {
                for y in 0..wh {
                    for x in 0..ww {
                        acc[(c * h + top + y) * w + left + x] += tile.data()[(c * wh + y) * ww + x];
                    }
                }
            }
            for y in 0..wh {
                for x in 0..ww {
                    count[(top + y) * w + left + x] += 1;
                }
            }
        }
    }
    let mut acc = sum.expect("at least one window");
    for c in 0..k {
        for p in 0..h * w {
            acc[c * h * w + p] /= count[p] as f64;
        }
    }
    Tensor::new(vec![1, k, h, w], acc)
}

/// Number of windows covering each pixel (for coverage checks).
pub fn window_coverage(h: usize, w: usize, window: usize, stride: usize) -> Vec<u32> {
    let mut count = vec![0u32; h * w];
    let (wh, ww) = (window.min(h), window.min(w));
    for &top in &window_starts(h, window, stride) {
        for &left in &window_starts(w, window, stride) {
            for y in 0..wh {
                for x in 0..ww {
                    count[(top + y) * w + left + x] += 1;
                }
            }
        }
    }
    count
}

/// Per-pixel argmax of `[N,K,H,W]` logits as a label map.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelMap> {
    let [n, _, h, w] = logits.dims4()?;
    let arg = logits.argmax(1)?;
    LabelMap::new([n, h, w], arg.into_iter().map(|c| c as u8).collect())
}

/// Evaluation options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Sliding window side; `0` predicts the whole image at once.
    pub window: usize,
    pub stride: usize,
    pub blend: Blend,
    /// Inputs are resized to multiples of this before prediction.
    pub divisor: usize,
}

impl EvalSettings {
    pub fn whole_image(divisor: usize) -> Self {
        EvalSettings { window: 0, stride: 1, blend: Blend::Logits, divisor }
    }

    pub fn predict<F>(&self, predict: &F, image: &Tensor) -> Result<Tensor>
    where
        F: Fn(&Tensor) -> Result<Tensor>,
    {
        let resized = |x: &Tensor| predict_any_size(predict, x, self.divisor);
        if self.window == 0 {
            resized(image)
        } else {
            sliding_window_predict(&resized, image, self.window, self.stride, self.blend)
        }
    }
}

/// Confusion matrix over `samples` items produced by `sample(i)`.
///
/// Work is split across up to `threads` scoped threads; the per-thread
/// matrices are merged, so the result does not depend on the split.
pub fn evaluate<F, S>(
    predict: &F,
    sample: &S,
    count: usize,
    num_classes: usize,
    settings: &EvalSettings,
    threads: usize,
) -> Result<ConfusionMatrix>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
    S: Fn(usize) -> (Tensor, LabelMap) + Sync,
{
    let threads = threads.clamp(1, count.max(1));
    let chunk = count.div_ceil(threads).max(1);
    let run = |range: std::ops::Range<usize>| -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(num_classes);
        for i in range {
            let (image, truth) = sample(i);
            let logits = settings.predict(predict, &image)?;
            cm.accumulate_maps(&argmax_labels(&logits)?, &truth)?;
        }
        Ok(cm)
    };
    if threads == 1 {
        return run(0..count);
    }
    let parts: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let range = (t * chunk).min(count)..((t + 1) * chunk).min(count);
                let run = &run;
                scope.spawn(move || run(range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut cm = ConfusionMatrix::new(num_classes);
    for part in parts {
        cm.merge(&part?)?;
    }
    Ok(cm)
}

/// Evaluation thread count: `SEGKC_THREADS` if set, else available cores.
pub fn eval_threads() -> usize {
    std::env::var("SEGKC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `class,iou` rows followed by a `miou` row.
pub fn iou_table_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("class,iou\n");
    for (c, iou) in cm.class_iou().iter().enumerate() {
        match iou {
            Some(v) => s.push_str(&format!("{c},{v}\n")),
            None => s.push_str(&format!("{c},\n")),
        }
    }
    s.push_str(&format!("miou,{}\n", cm.miou()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(4);
        let px = vec![2u8; 100];
        cm.accumulate(&px, &px).unwrap();
        assert_eq!(cm.get(2, 2), 100);
        assert_eq!(cm.total(), 100);
        assert_eq!(cm.miou(), 1.0);
    }

    #[test]
    fn ignore_only_truth_leaves_matrix_unchanged() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1, 2], &[IGNORE_INDEX; 3]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(3));
        assert_eq!(cm.miou(), 0.0);
    }

    #[test]
    fn hand_tallied_three_class_example() {
        // truth [[0,1],[2,2]], pred [[0,2],[2,1]]
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 2, 2, 1], &[0, 1, 2, 2]).unwrap();
        let expected = [1, 0, 0, 0, 0, 1, 0, 1, 1];
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p), expected[t * 3 + p]);
            }
        }
        // IoU: c0 = 1/1, c1 = 0/(1+1-0) = 0, c2 = 1/(2+2-1) = 1/3
        let iou = cm.class_iou();
        assert_eq!(iou, vec![Some(1.0), Some(0.0), Some(1.0 / 3.0)]);
        assert!((cm.miou() - (1.0 + 0.0 + 1.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_class_uniform_confusion() {
        let cm = ConfusionMatrix::from_counts(2, vec![1, 1, 1, 1]).unwrap();
        assert!((cm.miou() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 0, 0, 0, 0, 5]).unwrap();
        assert_eq!(cm.class_iou()[1], None);
        assert_eq!(cm.miou(), 1.0);
    }

    #[test]
    fn out_of_range_is_data_error() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(cm.accumulate(&[3], &[0]), Err(Error::Data(_))));
        assert!(matches!(cm.accumulate(&[0], &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn rounding_to_multiples() {
        assert_eq!(nearest_multiple(28, 14), 28);
        assert_eq!(nearest_multiple(30, 14), 28);
        assert_eq!(nearest_multiple(35, 14), 42);
        assert_eq!(nearest_multiple(21, 14), 28);
        assert_eq!(nearest_multiple(3, 14), 14);
        assert_eq!(nearest_multiple(6, 4), 8);
        let img = Tensor::zeros(vec![1, 3, 28, 28]);
        let (r, orig) = resize_for_inference(&img, 14).unwrap();
        assert_eq!(r, img);
        assert_eq!(orig, (28, 28));
        let img = Tensor::zeros(vec![1, 3, 30, 30]);
        assert_eq!(resize_for_inference(&img, 14).unwrap().0.shape(), &[1, 3, 28, 28]);
    }

    #[test]
    fn window_starts_are_flush() {
        assert_eq!(window_starts(10, 4, 2), vec![0, 2, 4, 6]);
        assert_eq!(window_starts(11, 4, 2), vec![0, 2, 4, 6, 7]);
        assert_eq!(window_starts(4, 8, 4), vec![0]);
    }

    #[test]
    fn manual_stitch_on_a_strip() {
        // 1x8 strip, window 6 (clipped to height 1), stride 2 -> tiles at 0 and 2.
        // The "model" returns its input's first channel plus the tile's left offset,
        // recovered from a coordinate channel.
        let coords: Vec<f64> = (0..8).map(|x| x as f64).collect();
        let image = Tensor::new(vec![1, 1, 1, 8], coords).unwrap();
        let predict = |t: &Tensor| -> Result<Tensor> {
            let left = t.data()[0];
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * 10.0 + left).collect())
        };
        let out = sliding_window_predict(&predict, &image, 6, 2, Blend::Logits).unwrap();
        // tile A covers 0..6 with offset 0, tile B covers 2..8 with offset 2
        let expected: Vec<f64> = (0..8)
            .map(|x| {
                let v = x as f64 * 10.0;
                match x {
                    0 | 1 => v,
                    6 | 7 => v + 2.0,
                    _ => ((v) + (v + 2.0)) / 2.0,
                }
            })
            .collect();
        assert_eq!(out.data(), expected.as_slice());
    }

    #[test]
    fn big_window_is_single_pass() {
        let image = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let predict = |t: &Tensor| Ok(t.clone());
        assert_eq!(sliding_window_predict(&predict, &image, 8, 4, Blend::Logits).unwrap(), image);
    }

    #[test]
    fn constant_model_gives_constant_output() {
        let image = Tensor::zeros(vec![1, 3, 10, 13]);
        let predict = |t: &Tensor| {
            let [n, _, h, w] = t.dims4()?;
            Ok(Tensor::full(vec![n, 2, h, w], 0.75))
        };
        let out = sliding_window_predict(&predict, &image, 4, 3, Blend::Logits).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn coverage_has_no_holes(h in 1usize..40, w in 1usize..40, window in 1usize..20, stride_frac in 1usize..20) {
            let stride = stride_frac.min(window);
            let cov = window_coverage(h, w, window, stride);
            prop_assert!(cov.iter().all(|&c| c >= 1));
        }

        #[test]
        fn miou_is_bounded_and_permutation_invariant(
            pairs in prop::collection::vec((0u8..4, 0u8..4), 1..200),
            perm_seed in 0usize..24,
        ) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.iter().cloned().unzip();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&pred, &truth).unwrap();
            let m = cm.miou();
            prop_assert!((0.0..=1.0).contains(&m));

            // a fixed permutation of the 4 classes, indexed by perm_seed
            let mut perm = [0u8, 1, 2, 3];
            let mut s = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, s % (i + 1));
                s /= i + 1;
            }
            let pp: Vec<u8> = pred.iter().map(|&c| perm[c as usize]).collect();
            let tp: Vec<u8> = truth.iter().map(|&c| perm[c as usize]).collect();
            let mut cm2 = ConfusionMatrix::new(4);
            cm2.accumulate(&pp, &tp).unwrap();
            prop_assert!((cm2.miou() - m).abs() < 1e-12);

            // pixel order does not matter
            let mut rev = ConfusionMatrix::new(4);
            let rp: Vec<u8> = pred.iter().rev().cloned().collect();
            let rt: Vec<u8> = truth.iter().rev().cloned().collect();
            rev.accumulate(&rp, &rt).unwrap();
            prop_assert_eq!(rev, cm);
        }
    }
}
