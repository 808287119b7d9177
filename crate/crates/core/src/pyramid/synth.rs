//! Synthetic slides: per-cell tissue classes, a low-frequency layout
//! pattern keyed by the class's coarse id and a high-frequency stripe
//! texture keyed by its fine id.
//!
//! The fine period divides the 10x pixel footprint, so area averaging at 5x
//! and 10x cancels the texture exactly; it only survives at 20x and 40x.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng as _;

use super::index::ANCHOR_NATIVE;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

/// Single-channel `f32` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Raster> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "raster",
                lhs: vec![height, width],
                rhs: vec![data.len()],
            });
        }
        Ok(Raster { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Raster {
        Raster {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Area average over non-overlapping `f x f` blocks of the region
    /// `(y, x, h, w)`; `h` and `w` must be multiples of `f`.
    pub fn block_mean_region(&self, y: usize, x: usize, h: usize, w: usize, f: usize) -> Result<Raster> {
        if f == 0 || !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::InvalidArgument(alloc::format!(
                "region {h}x{w} not divisible by block {f}"
            )));
        }
        if y + h > self.height || x + w > self.width {
            return Err(Error::OutOfRange(alloc::format!(
                "region ({y}, {x}, {h}, {w}) outside {}x{}",
                self.height,
                self.width
            )));
        }
        let (oh, ow) = (h / f, w / f);
        let mut acc = vec![0.0f64; oh * ow];
        for r in 0..h {
            let src = &self.data[(y + r) * self.width + x..(y + r) * self.width + x + w];
            let orow = &mut acc[(r / f) * ow..(r / f + 1) * ow];
            for (o, chunk) in orow.iter_mut().zip(src.chunks_exact(f)) {
                *o += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let inv = 1.0 / (f * f) as f64;
        Raster::new(oh, ow, acc.into_iter().map(|s| (s * inv) as f32).collect())
    }

    pub fn block_mean(&self, f: usize) -> Result<Raster> {
        self.block_mean_region(0, 0, self.height, self.width, f)
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Raster> {
        self.block_mean_region(y, x, h, w, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_classes: usize,
    /// distinct fine textures; class `c` has coarse id `c / n_fine` and
    /// fine id `c % n_fine`
    pub n_fine: usize,
    /// native side = `side_multiple * 4096`
    pub side_multiple: usize,
    /// native side of one tissue cell
    pub cell_size: usize,
    /// probability a tissue cell carries the slide's own class
    pub p_major: f32,
    /// probability a cell is background instead of tissue
    pub background_prob: f32,
    pub background: f32,
    /// mean intensity of tissue before patterns
    pub tissue_level: f32,
    /// scales every tissue deviation from the background; 0 gives a blank slide
    pub texture_amplitude: f32,
    pub coarse_amp: f32,
    pub fine_amp: f32,
    pub noise_amp: f32,
    pub coarse_period: usize,
    pub fine_period: usize,
    /// random phase offset as a fraction of each period
    pub phase_jitter: f32,
    /// tissue is darker than background
    pub tissue_darker: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_classes: 4,
            n_fine: 2,
            side_multiple: 2,
            cell_size: 2048,
            p_major: 0.6,
            background_prob: 0.25,
            background: 0.9,
            tissue_level: 0.4,
            texture_amplitude: 1.0,
            coarse_amp: 0.1,
            fine_amp: 0.1,
            noise_amp: 0.03,
            coarse_period: 1024,
            fine_period: 32,
            phase_jitter: 0.05,
            tissue_darker: true,
        }
    }
}

impl GenConfig {
    pub fn side(&self) -> usize {
        self.side_multiple * ANCHOR_NATIVE
    }

    pub fn n_coarse(&self) -> usize {
        self.n_classes.div_ceil(self.n_fine)
    }

    pub fn coarse_id(&self, class: usize) -> usize {
        class / self.n_fine
    }

    pub fn fine_id(&self, class: usize) -> usize {
        class % self.n_fine
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_classes < 2 || self.n_fine == 0 || self.n_fine > self.n_classes {
            return bad("need n_classes >= 2 and 1 <= n_fine <= n_classes");
        }
        if self.side_multiple == 0 || self.side() > NOISE_LEN {
            return bad("side_multiple must lie in [1, 16]");
        }
        if self.cell_size == 0 || !self.side().is_multiple_of(self.cell_size) {
            return bad("cell_size must divide the slide side");
        }
        if !(0.0..=1.0).contains(&self.p_major) || !(0.0..=1.0).contains(&self.background_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.coarse_period == 0 || self.fine_period == 0 {
            return bad("periods must be positive");
        }
        Ok(())
    }
}

/// Everything needed to render a slide pixel by pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub seed: u64,
    pub class: usize,
    /// per cell (row-major): tissue class or `None` for background
    pub cells: Vec<Option<usize>>,
    pub cells_per_side: usize,
    pub coarse_phase: f64,
    pub fine_phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slide {
    pub id: u32,
    pub label: usize,
    pub raster: Raster,
    pub gen: GenParams,
}

impl Slide {
    pub fn side(&self) -> usize {
        self.raster.width
    }

    /// Tissue class of the cell containing native pixel `(y, x)`.
    pub fn cell_class(&self, y: usize, x: usize, cell_size: usize) -> Option<usize> {
        let n = self.gen.cells_per_side;
        self.gen.cells[(y / cell_size) * n + x / cell_size]
    }
}

/// Draws cell classes and phases for a slide of class `class`.
pub fn draw_params(seed: u64, class: usize, cfg: &GenConfig) -> Result<GenParams> {
    cfg.validate()?;
    if class >= cfg.n_classes {
        return Err(Error::OutOfRange(alloc::format!(
            "class {class} not in [0, {})",
            cfg.n_classes
        )));
    }
    let mut r = rng::stream(seed, "slide-gen", 0);
    let n = cfg.side() / cfg.cell_size;
    let mut cells = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let bg = r.gen::<f32>() < cfg.background_prob;
        let major = r.gen::<f32>() < cfg.p_major;
        let other = r.gen_range(0..cfg.n_classes - 1);
        let c = if major {
            class
        } else if other >= class {
            other + 1
        } else {
            other
        };
        cells.push(if bg { None } else { Some(c) });
    }
    let j = cfg.phase_jitter as f64;
    let coarse_phase = TAU * j * (r.gen::<f64>() * 2.0 - 1.0);
    let fine_phase = TAU * j * (r.gen::<f64>() * 2.0 - 1.0);
    Ok(GenParams {
        seed,
        class,
        cells,
        cells_per_side: n,
        coarse_phase,
        fine_phase,
    })
}

struct WaveTables {
    sx: Vec<f32>,
    cx: Vec<f32>,
    sy: Vec<f32>,
    cy: Vec<f32>,
}

impl WaveTables {
    /// `sin(2 pi (x cos a + y sin a) / period + phase)` split by the
    /// angle-sum identity into per-axis tables.
    fn new(side: usize, angle: f64, period: usize, phase: f64) -> Self {
        let k = TAU / period as f64;
        let (ca, sa) = (math::cos(angle), math::sin(angle));
        let mut t = WaveTables {
            sx: Vec::with_capacity(side),
            cx: Vec::with_capacity(side),
            sy: Vec::with_capacity(side),
            cy: Vec::with_capacity(side),
        };
        for i in 0..side {
            // centre of the native pixel
            let p = i as f64 + 0.5;
            let ax = k * p * ca + phase;
            let ay = k * p * sa;
            t.sx.push(math::sin(ax) as f32);
            t.cx.push(math::cos(ax) as f32);
            t.sy.push(math::sin(ay) as f32);
            t.cy.push(math::cos(ay) as f32);
        }
        t
    }
}

/// Period of the per-slide noise sequence (prime, so rows never align).
const NOISE_LEN: usize = 65_537;
const NOISE_STRIDE: usize = 40_503;

/// Uniform noise in `[-1, 1)` read as `table[(y * stride + x) mod len]`;
/// the table carries `side` wrapped entries so each row is one slice.
fn noise_table(seed: u64, side: usize) -> Vec<f32> {
    let mut r = rng::stream(seed, "slide-noise", 0);
    let mut t: Vec<f32> = (0..NOISE_LEN).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    t.extend_from_within(..side.min(NOISE_LEN));
    t
}

/// Calls `emit(y, row)` for every native row of the slide, top to bottom.
fn render_rows(params: &GenParams, cfg: &GenConfig, mut emit: impl FnMut(usize, &[f32])) -> Result<()> {
    cfg.validate()?;
    let side = cfg.side();
    let n_coarse = cfg.n_coarse() as f64;
    let n_fine = cfg.n_fine as f64;
    let tables: Vec<(WaveTables, WaveTables)> = (0..cfg.n_classes)
        .map(|c| {
            let ca = PI * cfg.coarse_id(c) as f64 / n_coarse;
            let fa = PI * cfg.fine_id(c) as f64 / n_fine;
            (
                WaveTables::new(side, ca, cfg.coarse_period, params.coarse_phase),
                WaveTables::new(side, fa, cfg.fine_period, params.fine_phase),
            )
        })
        .collect();
    let sign = if cfg.tissue_darker { 1.0 } else { -1.0 };
    let amp = cfg.texture_amplitude;
    let level = cfg.background + amp * (cfg.tissue_level - cfg.background);
    let gain = amp * sign;
    let noise = noise_table(params.seed, side);
    let cs = cfg.cell_size;
    let mut row = vec![cfg.background; side];
    for y in 0..side {
        row.fill(cfg.background);
        if amp != 0.0 {
            let crow = (y / cs) * params.cells_per_side;
            let off = (y * NOISE_STRIDE) % NOISE_LEN;
            let nrow = &noise[off..off + side];
            for (ci, run) in row.chunks_mut(cs).enumerate() {
                let Some(c) = params.cells[crow + ci] else {
                    continue;
                };
                let (coarse, fine) = &tables[c];
                let ca = gain * cfg.coarse_amp;
                let fa = gain * cfg.fine_amp;
                let (k0, k1) = (ca * coarse.cy[y], ca * coarse.sy[y]);
                let (k2, k3) = (fa * fine.cy[y], fa * fine.sy[y]);
                let kn = gain * cfg.noise_amp;
                let xs = ci * cs..(ci + 1) * cs;
                let n = run.len();
                let (csx, ccx) = (&coarse.sx[xs.clone()][..n], &coarse.cx[xs.clone()][..n]);
                let (fsx, fcx) = (&fine.sx[xs.clone()][..n], &fine.cx[xs.clone()][..n]);
                let nz = &nrow[xs][..n];
                for i in 0..n {
                    let v = level + csx[i] * k0 + ccx[i] * k1 + fsx[i] * k2 + fcx[i] * k3 + nz[i] * kn;
                    run[i] = v.clamp(0.0, 1.0);
                }
            }
        }
        emit(y, &row);
    }
    Ok(())
}

/// Renders the native raster for `params`.
pub fn render(params: &GenParams, cfg: &GenConfig) -> Result<Raster> {
    let side = cfg.side();
    let mut data = Vec::with_capacity(side * side);
    render_rows(params, cfg, |_, row| data.extend_from_slice(row))?;
    Raster::new(side, side, data)
}

/// `render(params, cfg).block_mean(f)` without holding the native raster;
/// bit-identical to it.
pub fn render_downsampled(params: &GenParams, cfg: &GenConfig, f: usize) -> Result<Raster> {
    let side = cfg.side();
    if f == 0 || !side.is_multiple_of(f) {
        return Err(Error::InvalidArgument(alloc::format!(
            "block {f} does not divide side {side}"
        )));
    }
    let o = side / f;
    let mut acc = vec![0.0f64; o * o];
    render_rows(params, cfg, |y, row| {
        let orow = &mut acc[(y / f) * o..(y / f + 1) * o];
        for (a, chunk) in orow.iter_mut().zip(row.chunks_exact(f)) {
            *a += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
    })?;
    let inv = 1.0 / (f * f) as f64;
    Raster::new(o, o, acc.into_iter().map(|s| (s * inv) as f32).collect())
}

/// Deterministic synthetic slide of class `class`.
pub fn synth_slide(id: u32, seed: u64, class: usize, cfg: &GenConfig) -> Result<Slide> {
    let gen = draw_params(seed, class, cfg)?;
    let raster = render(&gen, cfg)?;
    Ok(Slide {
        id,
        label: class,
        raster,
        gen,
    })
}
