//! Orthonormal 2-D Haar transform.
//!
//! Each 2×2 block `[[a, b], [c, d]]` maps to
//!
//! ```text
//! LL = (a + b + c + d) / 2      HL = ((a + c) - (b + d)) / 2
//! LH = ((a + b) - (c + d)) / 2  HH = (a - b - c + d) / 2
//! ```
//!
//! With this normalization the approximation band of an image in `[0, 1]`
//! lies in `[0, 2^k]` at level `k`, while the detail bands are signed.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_LEVELS: usize = 2;

/// Detail planes of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Multi-level decomposition. `details[0]` is level 1 (finest); `ll` is the
/// approximation band of the deepest level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandPyramid {
    pub ll: Tensor,
    pub details: Vec<DetailBands>,
}

impl SubbandPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Every coefficient plane as `(name, plane)`, deepest level first.
    pub fn named_planes(&self) -> Vec<(String, &Tensor)> {
        let n = self.levels();
        let mut out = vec![(format!("LL{n}"), &self.ll)];
        for (i, d) in self.details.iter().enumerate().rev() {
            let level = i + 1;
            out.push((format!("LH{level}"), &d.lh));
            out.push((format!("HL{level}"), &d.hl));
            out.push((format!("HH{level}"), &d.hh));
        }
        out
    }

    pub fn sum_squares(&self) -> f64 {
        self.ll.sum_squares()
            + self
                .details
                .iter()
                .map(|d| d.lh.sum_squares() + d.hl.sum_squares() + d.hh.sum_squares())
                .sum::<f64>()
    }
}

fn plane_dims(plane: &Tensor) -> Result<(usize, usize)> {
    match plane.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(format!(
            "expected a 2-D plane, got shape {s:?}"
        ))),
    }
}

fn forward_level(plane: &Tensor) -> Result<(Tensor, DetailBands)> {
    let (rows, cols) = plane_dims(plane)?;
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::shape(format!(
            "Haar level needs even extents, got {rows}x{cols}"
        )));
    }
    let (hr, hc) = (rows / 2, cols / 2);
    let src = plane.data();
    let mut ll = vec![0.0; hr * hc];
    let mut lh = vec![0.0; hr * hc];
    let mut hl = vec![0.0; hr * hc];
    let mut hh = vec![0.0; hr * hc];
    for i in 0..hr {
        for j in 0..hc {
            let a = src[2 * i * cols + 2 * j];
            let b = src[2 * i * cols + 2 * j + 1];
            let c = src[(2 * i + 1) * cols + 2 * j];
            let d = src[(2 * i + 1) * cols + 2 * j + 1];
            let k = i * hc + j;
            ll[k] = (a + b + c + d) / 2.0;
            hl[k] = ((a + c) - (b + d)) / 2.0;
            lh[k] = ((a + b) - (c + d)) / 2.0;
            hh[k] = (a - b - c + d) / 2.0;
        }
    }
    let shape = [hr, hc];
    Ok((
        Tensor::from_vec(&shape, ll)?,
        DetailBands {
            lh: Tensor::from_vec(&shape, lh)?,
            hl: Tensor::from_vec(&shape, hl)?,
            hh: Tensor::from_vec(&shape, hh)?,
        },
    ))
}

fn inverse_level(ll: &Tensor, bands: &DetailBands) -> Result<Tensor> {
    let (hr, hc) = plane_dims(ll)?;
    for p in [&bands.lh, &bands.hl, &bands.hh] {
        if p.shape() != ll.shape() {
            return Err(Error::shape(format!(
                "sub-band extents differ: LL {:?} vs {:?}",
                ll.shape(),
                p.shape()
            )));
        }
    }
    let cols = 2 * hc;
    let mut out = vec![0.0; 4 * hr * hc];
    let (ll, lh, hl, hh) = (ll.data(), bands.lh.data(), bands.hl.data(), bands.hh.data());
    for i in 0..hr {
        for j in 0..hc {
            let k = i * hc + j;
            let (s, h, v, d) = (ll[k], hl[k], lh[k], hh[k]);
            out[2 * i * cols + 2 * j] = (s + h + v + d) / 2.0;
            out[2 * i * cols + 2 * j + 1] = (s - h + v - d) / 2.0;
            out[(2 * i + 1) * cols + 2 * j] = (s + h - v - d) / 2.0;
            out[(2 * i + 1) * cols + 2 * j + 1] = (s - h - v + d) / 2.0;
        }
    }
    Tensor::from_vec(&[2 * hr, cols], out)
}

/// Decomposes `image` (a rows × cols plane) into `levels` Haar levels.
pub fn dwt2_forward(image: &Tensor, levels: usize) -> Result<SubbandPyramid> {
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(Error::shape(format!("levels must be 1 or 2, got {levels}")));
    }
    let (rows, cols) = plane_dims(image)?;
    let unit = 1 << levels;
    if rows % unit != 0 || cols % unit != 0 {
        return Err(Error::shape(format!(
            "{rows}x{cols} image is not divisible by 2^{levels}"
        )));
    }
    let mut ll = image.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, bands) = forward_level(&ll)?;
        details.push(bands);
        ll = next;
    }
    Ok(SubbandPyramid { ll, details })
}

pub fn dwt2_inverse(pyr: &SubbandPyramid) -> Result<Tensor> {
    if pyr.details.is_empty() {
        return Err(Error::shape("pyramid has no levels"));
    }
    let mut ll = pyr.ll.clone();
    for bands in pyr.details.iter().rev() {
        ll = inverse_level(&ll, bands)?;
    }
    Ok(ll)
}

fn blit(dst: &mut Tensor, src: &Tensor, row0: usize, col0: usize) {
    let dcols = dst.shape()[1];
    let (r, c) = (src.shape()[0], src.shape()[1]);
    let d = dst.data_mut();
    for i in 0..r {
        d[(row0 + i) * dcols + col0..(row0 + i) * dcols + col0 + c]
            .copy_from_slice(&src.data()[i * c..(i + 1) * c]);
    }
}

fn cut(src: &Tensor, row0: usize, col0: usize, rows: usize, cols: usize) -> Tensor {
    let scols = src.shape()[1];
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let start = (row0 + i) * scols + col0;
        data.extend_from_slice(&src.data()[start..start + cols]);
    }
    Tensor::from_vec(&[rows, cols], data).expect("nonzero cut")
}

/// Tiles a two-level pyramid of an N×N image into one N×N plane: the level-2
/// bands fill the top-left quadrant as `[LL2 HL2; LH2 HH2]`, and the level-1
/// detail bands take the remaining quadrants as `[· HL1; LH1 HH1]`.
pub fn tile_layout(pyr: &SubbandPyramid) -> Result<Tensor> {
    if pyr.levels() != 2 {
        return Err(Error::shape(format!(
            "tile layout needs a 2-level pyramid, got {}",
            pyr.levels()
        )));
    }
    let (q, q2) = plane_dims(&pyr.details[0].hl)?;
    if q != q2 {
        return Err(Error::shape(format!(
            "tile layout needs a square image, got {q}x{q2} bands"
        )));
    }
    let h = q / 2;
    let l2 = &pyr.details[1];
    for p in [&pyr.ll, &l2.lh, &l2.hl, &l2.hh] {
        if p.shape() != [h, h] {
            return Err(Error::shape(
                "level-2 bands must be half the level-1 extent",
            ));
        }
    }
    for p in [&pyr.details[0].lh, &pyr.details[0].hh] {
        if p.shape() != [q, q] {
            return Err(Error::shape("level-1 bands differ in extent"));
        }
    }
    let n = 2 * q;
    let mut out = Tensor::zeros(&[n, n])?;
    blit(&mut out, &pyr.ll, 0, 0);
    blit(&mut out, &l2.hl, 0, h);
    blit(&mut out, &l2.lh, h, 0);
    blit(&mut out, &l2.hh, h, h);
    blit(&mut out, &pyr.details[0].hl, 0, q);
    blit(&mut out, &pyr.details[0].lh, q, 0);
    blit(&mut out, &pyr.details[0].hh, q, q);
    Ok(out)
}

/// Inverse of [`tile_layout`].
pub fn untile_layout(tiled: &Tensor) -> Result<SubbandPyramid> {
    let (n, m) = plane_dims(tiled)?;
    if n != m || n % 4 != 0 {
        return Err(Error::shape(format!(
            "tiled plane must be square with extent divisible by 4, got {n}x{m}"
        )));
    }
    let (q, h) = (n / 2, n / 4);
    Ok(SubbandPyramid {
        ll: cut(tiled, 0, 0, h, h),
        details: vec![
            DetailBands {
                hl: cut(tiled, 0, q, q, q),
                lh: cut(tiled, q, 0, q, q),
                hh: cut(tiled, q, q, q, q),
            },
            DetailBands {
                hl: cut(tiled, 0, h, h, h),
                lh: cut(tiled, h, 0, h, h),
                hh: cut(tiled, h, h, h, h),
            },
        ],
    })
}

/// Writes a plane as two little-endian `u32` extents (rows, cols) followed by
/// row-major little-endian `f64` values.
pub fn write_raw_plane<W: Write>(plane: &Tensor, mut w: W) -> std::io::Result<()> {
    let (rows, cols) = plane_dims(plane).map_err(std::io::Error::other)?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for v in plane.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_raw_plane<R: Read>(mut r: R) -> Result<Tensor> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("raw plane header truncated"))?;
    let rows = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[4..].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format("raw plane payload truncated"))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&[rows, cols], data).map_err(|e| Error::format(e.to_string()))
}
