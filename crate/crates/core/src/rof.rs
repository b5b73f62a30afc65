//! Region-of-fusion box: four greedy one-sided shrink passes that keep
//! trimming a boundary strip while doing so raises the dissimilarity per
//! unit area.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::ssim_plane;

/// Inclusive rectangle; `r*` index rows, `c*` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Region {
    pub fn area(&self) -> u64 {
        ((self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RofMetric {
    Ssd,
    Ssim,
}

impl RofMetric {
    pub fn name(&self) -> &'static str {
        match self {
            RofMetric::Ssd => "ssd",
            RofMetric::Ssim => "ssim",
        }
    }
}

impl FromStr for RofMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(RofMetric::Ssd),
            "ssim" => Ok(RofMetric::Ssim),
            other => Err(Error::validation(format!("unknown RoF metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RofBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    pub metric: RofMetric,
    pub dissim: f64,
}

impl RofBox {
    pub fn region(&self) -> Region {
        Region {
            r0: self.x1,
            r1: self.x2,
            c0: self.y1,
            c1: self.y2,
        }
    }

    /// Intersection over union with another inclusive rectangle.
    pub fn iou(&self, other: &Region) -> f64 {
        let a = self.region();
        let r0 = a.r0.max(other.r0);
        let r1 = a.r1.min(other.r1);
        let c0 = a.c0.max(other.c0);
        let c1 = a.c1.min(other.c1);
        if r0 > r1 || c0 > c1 {
            return 0.0;
        }
        let inter = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
        inter / (a.area() as f64 + other.area() as f64 - inter)
    }
}

impl fmt::Display for RofBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.x1,
            self.y1,
            self.x2,
            self.y2,
            self.metric.name(),
            self.dissim
        )
    }
}

/// Sum of squared differences of two equally sized images.
pub fn dissim_ssd(a: &GrayImage, b: &GrayImage) -> Result<u64> {
    a.expect_same_dims(b)?;
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| sq_diff(x, y))
        .sum())
}

fn sq_diff(a: u8, b: u8) -> u64 {
    let d = u64::from(a.abs_diff(b));
    d * d
}

/// Summed-area table of squared differences, one row and column of zero
/// padding in front.
pub struct SsdTable {
    width: usize,
    sums: Vec<u64>,
}

impl SsdTable {
    pub fn new(a: &GrayImage, b: &GrayImage) -> Result<Self> {
        a.expect_same_dims(b)?;
        let (h, w) = a.dims();
        let stride = w + 1;
        let mut sums = vec![0u64; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0u64;
            for c in 0..w {
                row += sq_diff(a.get(r, c), b.get(r, c));
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Ok(Self { width: w, sums })
    }

    pub fn sum(&self, g: Region) -> u64 {
        let s = self.width + 1;
        let at = |r: usize, c: usize| self.sums[r * s + c];
        at(g.r1 + 1, g.c1 + 1) + at(g.r0, g.c0) - at(g.r0, g.c1 + 1) - at(g.r1 + 1, g.c0)
    }
}

fn ssd_naive(a: &GrayImage, b: &GrayImage, g: Region) -> u64 {
    let mut total = 0;
    for r in g.r0..=g.r1 {
        for c in g.c0..=g.c1 {
            total += sq_diff(a.get(r, c), b.get(r, c));
        }
    }
    total
}

/// Runs the four shrink passes. `shrinks(current, reduced)` decides whether
/// removing the strip that turns `current` into `reduced` is accepted. The
/// region never becomes empty.
pub fn shrink_passes(
    height: usize,
    width: usize,
    mut shrinks: impl FnMut(Region, Region) -> bool,
) -> Region {
    let mut g = Region {
        r0: 0,
        r1: height - 1,
        c0: 0,
        c1: width - 1,
    };
    while g.r0 < g.r1 && shrinks(g, Region { r0: g.r0 + 1, ..g }) {
        g.r0 += 1;
    }
    while g.r1 > g.r0 && shrinks(g, Region { r1: g.r1 - 1, ..g }) {
        g.r1 -= 1;
    }
    while g.c0 < g.c1 && shrinks(g, Region { c0: g.c0 + 1, ..g }) {
        g.c0 += 1;
    }
    while g.c1 > g.c0 && shrinks(g, Region { c1: g.c1 - 1, ..g }) {
        g.c1 -= 1;
    }
    g
}

fn boxed(g: Region, metric: RofMetric, dissim: f64) -> RofBox {
    RofBox {
        x1: g.r0,
        y1: g.c0,
        x2: g.r1,
        y2: g.c1,
        metric,
        dissim,
    }
}

fn ssd_rule(sum: impl Fn(Region) -> u64) -> impl FnMut(Region, Region) -> bool {
    move |cur, next| {
        let (m1, m2) = (u128::from(sum(cur)), u128::from(sum(next)));
        m1 * u128::from(next.area()) < u128::from(cur.area()) * m2
    }
}

/// RoF box with an arbitrary real-valued region dissimilarity, compared by
/// cross-multiplication `M1·A2 < A1·M2`.
pub fn compute_rof_with(
    thermal: &GrayImage,
    fused: &GrayImage,
    metric: RofMetric,
    mut dissim: impl FnMut(Region) -> Result<f64>,
) -> Result<RofBox> {
    thermal.expect_same_dims(fused)?;
    let mut failure = None;
    let g = shrink_passes(thermal.height(), thermal.width(), |cur, next| {
        if failure.is_some() {
            return false;
        }
        match (dissim(cur), dissim(next)) {
            (Ok(m1), Ok(m2)) => m1 * (next.area() as f64) < (cur.area() as f64) * m2,
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e);
                false
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(boxed(g, metric, dissim(g)?))
}

pub fn compute_rof(thermal: &GrayImage, fused: &GrayImage, metric: RofMetric) -> Result<RofBox> {
    match metric {
        RofMetric::Ssd => {
            let table = SsdTable::new(thermal, fused)?;
            let g = shrink_passes(
                thermal.height(),
                thermal.width(),
                ssd_rule(|g| table.sum(g)),
            );
            Ok(boxed(g, metric, table.sum(g) as f64))
        }
        RofMetric::Ssim => {
            let table = SsdTable::new(thermal, fused)?;
            compute_rof_with(thermal, fused, metric, |g| {
                ssim_dissim(thermal, fused, g, &table)
            })
        }
    }
}

/// SSD variant that recomputes every strip sum directly; reference for the
/// summed-area path.
pub fn compute_rof_naive(thermal: &GrayImage, fused: &GrayImage) -> Result<RofBox> {
    thermal.expect_same_dims(fused)?;
    let g = shrink_passes(
        thermal.height(),
        thermal.width(),
        ssd_rule(|g| ssd_naive(thermal, fused, g)),
    );
    Ok(boxed(
        g,
        RofMetric::Ssd,
        ssd_naive(thermal, fused, g) as f64,
    ))
}

/// `1 − SSIM` over the region, or its SSD when the region is narrower than
/// the SSIM window.
fn ssim_dissim(a: &GrayImage, b: &GrayImage, g: Region, table: &SsdTable) -> Result<f64> {
    let h = g.r1 - g.r0 + 1;
    let w = g.c1 - g.c0 + 1;
    if h < crate::metrics::SSIM_WINDOW || w < crate::metrics::SSIM_WINDOW {
        return Ok(table.sum(g) as f64);
    }
    let plane = |img: &GrayImage| -> Vec<f64> {
        (g.r0..=g.r1)
            .flat_map(|r| (g.c0..=g.c1).map(move |c| (r, c)))
            .map(|(r, c)| f64::from(img.get(r, c)))
            .collect()
    };
    Ok(1.0 - ssim_plane(&plane(a), &plane(b), h, w)?)
}

/// Copy of `img` with a one-pixel 255 outline along the box edges.
pub fn draw_box(img: &GrayImage, b: &RofBox) -> Result<GrayImage> {
    let (h, w) = img.dims();
    if b.x1 > b.x2 || b.y1 > b.y2 || b.x2 >= h || b.y2 >= w {
        return Err(Error::validation(format!(
            "box {} {} {} {} outside {h}x{w} image",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    let mut out = img.clone();
    for c in b.y1..=b.y2 {
        out.set(b.x1, c, 255);
        out.set(b.x2, c, 255);
    }
    for r in b.x1..=b.x2 {
        out.set(r, b.y1, 255);
        out.set(r, b.y2, 255);
    }
    Ok(out)
}
