use super::{
    synthesize_window, BitGrid, CoefficientPyramid, LevelMaskSet, SynthScratch, WaveletKind,
    WINDOW_HALO,
};
use crate::error::{Error, Result};
use crate::frame::Plane;

/// Precomputed work list for a mask-restricted inverse transform.
///
/// Per level `k` the plan holds the region of the level `k-1` approximation
/// to compute (as row runs), the intermediate column runs the vertical pass
/// must produce for it, and the detail mask. The compute region starts at
/// the approximation mask and shrinks by the dependency radius per level;
/// with a target it is further cut to what the target depends on.
///
/// The footprint tracks which outputs depend only on selected coefficients;
/// those are bit-identical to [`super::synthesize_2d`] on the same pyramid.
#[derive(Clone, Debug)]
pub struct RegionPlan {
    width: usize,
    height: usize,
    wavelet: WaveletKind,
    // Index 0 is the coarsest level.
    steps: Vec<LevelStep>,
    compute: BitGrid,
    footprint: BitGrid,
}

#[derive(Clone, Debug)]
struct LevelStep {
    level: usize,
    detail: BitGrid,
    row_runs: Vec<(usize, usize, usize)>,
    column_runs: Vec<(usize, usize, usize)>,
}

fn window_halo(kind: WaveletKind) -> usize {
    match kind {
        WaveletKind::Cdf97 => WINDOW_HALO,
        WaveletKind::Haar => 0,
    }
}

impl RegionPlan {
    pub fn new(
        masks: &LevelMaskSet,
        width: usize,
        height: usize,
        wavelet: WaveletKind,
    ) -> Result<Self> {
        Self::build(masks, None, width, height, wavelet)
    }

    /// Plan that only computes what full-resolution `target` pixels need.
    /// Pixels of `target` inside the footprint are as exact as with [`Self::new`].
    pub fn with_target(
        masks: &LevelMaskSet,
        target: &BitGrid,
        width: usize,
        height: usize,
        wavelet: WaveletKind,
    ) -> Result<Self> {
        if target.dims() != (width, height) {
            return Err(Error::Shape(format!(
                "target {:?} for a {width}x{height} plan",
                target.dims()
            )));
        }
        Self::build(masks, Some(target), width, height, wavelet)
    }

    fn build(
        masks: &LevelMaskSet,
        target: Option<&BitGrid>,
        width: usize,
        height: usize,
        wavelet: WaveletKind,
    ) -> Result<Self> {
        let levels = masks.levels();
        super::pyramid::check_dims(width, height, levels)?;
        masks.check_shape(width, height, levels)?;
        let radius = wavelet.dependency_radius();
        let halo = window_halo(wavelet);
        // needs[k]: level-k approximation samples the target depends on.
        let needs = target.map(|t| {
            let mut chain = vec![t.clone()];
            chain.extend(super::closure_chain(t, levels, wavelet));
            chain
        });

        let mut compute = masks.approx.clone();
        let mut exact = masks.approx.clone();
        let mut steps = Vec::with_capacity(levels);
        for k in (1..=levels).rev() {
            let detail = masks.details[k - 1].clone();
            let (w, h) = (width >> k, height >> k);
            let mut next_compute = compute.erode(radius).up_map();
            if let Some(needs) = &needs {
                next_compute = next_compute.and(&needs[k - 1]);
            }
            exact = exact.and(&detail).erode(radius).up_map().and(&next_compute);

            let mut row_runs = Vec::new();
            let mut vertical = BitGrid::new(2 * w, 2 * h);
            for y in 0..2 * h {
                for (x0, x1) in next_compute.row_runs(y) {
                    row_runs.push((y, x0, x1));
                    let lo = (x0 / 2).saturating_sub(halo);
                    let hi = (x1.div_ceil(2) + halo).min(w);
                    for n in lo..hi {
                        vertical.set(n, y, true);
                        vertical.set(w + n, y, true);
                    }
                }
            }
            let mut column_runs = Vec::new();
            for x in 0..2 * w {
                for (y0, y1) in vertical.column_runs(x) {
                    column_runs.push((x, y0, y1));
                }
            }
            steps.push(LevelStep {
                level: k,
                detail,
                row_runs,
                column_runs,
            });
            compute = next_compute;
        }
        Ok(Self {
            width,
            height,
            wavelet,
            steps,
            compute,
            footprint: exact,
        })
    }

    /// Full-resolution pixels guaranteed equal to a full inverse transform.
    pub fn footprint(&self) -> &BitGrid {
        &self.footprint
    }

    /// Full-resolution pixels that are computed; everything else is zero.
    pub fn compute_region(&self) -> &BitGrid {
        &self.compute
    }

    pub fn synthesize(&self, pyramid: &CoefficientPyramid) -> Result<Plane> {
        if pyramid.width != self.width
            || pyramid.height != self.height
            || pyramid.levels != self.steps.len()
        {
            return Err(Error::Shape(format!(
                "pyramid {}x{} with {} levels does not match the mask set",
                pyramid.width, pyramid.height, pyramid.levels
            )));
        }
        let stride = self.width;
        let mut buf = pyramid.data.clone();
        let mut tmp = vec![0.0f32; self.width * self.height];
        let mut scratch = SynthScratch::default();
        for step in &self.steps {
            let (w, h) = (self.width >> step.level, self.height >> step.level);
            let w2 = 2 * w;
            let mask = &step.detail;
            for &(x, y0, y1) in &step.column_runs {
                let buf = &buf;
                if x < w {
                    synthesize_window(
                        self.wavelet,
                        h,
                        |i| buf[i * stride + x],
                        |i| {
                            if mask.get(x, i) {
                                buf[(h + i) * stride + x]
                            } else {
                                0.0
                            }
                        },
                        y0..y1,
                        &mut scratch,
                        |p, v| tmp[p * w2 + x] = v,
                    );
                } else {
                    let c = x - w;
                    synthesize_window(
                        self.wavelet,
                        h,
                        |i| {
                            if mask.get(c, i) {
                                buf[i * stride + x]
                            } else {
                                0.0
                            }
                        },
                        |i| {
                            if mask.get(c, i) {
                                buf[(h + i) * stride + x]
                            } else {
                                0.0
                            }
                        },
                        y0..y1,
                        &mut scratch,
                        |p, v| tmp[p * w2 + x] = v,
                    );
                }
            }
            for &(y, x0, x1) in &step.row_runs {
                let row = &tmp[y * w2..(y + 1) * w2];
                let out = &mut buf[y * stride..y * stride + w2];
                synthesize_window(
                    self.wavelet,
                    w,
                    |i| row[i],
                    |i| row[w + i],
                    x0..x1,
                    &mut scratch,
                    |p, v| out[p] = v,
                );
            }
        }
        for (v, &keep) in buf.iter_mut().zip(self.compute.cells()) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: buf,
        })
    }
}

/// Mask-restricted inverse transform. Returns the pixels and the footprint
/// of pixels that are bit-identical to a full inverse of `pyramid`.
pub fn synthesize_2d_region(
    pyramid: &CoefficientPyramid,
    region: &LevelMaskSet,
    wavelet: WaveletKind,
) -> Result<(Plane, BitGrid)> {
    if region.levels() != pyramid.levels {
        return Err(Error::Shape(format!(
            "{} mask levels for a {}-level pyramid",
            region.levels(),
            pyramid.levels
        )));
    }
    let plan = RegionPlan::new(region, pyramid.width, pyramid.height, wavelet)?;
    let pixels = plan.synthesize(pyramid)?;
    Ok((pixels, plan.footprint))
}
