//! Procedural grayscale glyph corpora used as a small-image in/out pair.
//!
//! Both corpora produce `GLYPH_SIDE x GLYPH_SIDE` single-channel images with
//! 4 classes, jittered placement, random ink intensity and background noise.
//! Pixel values are quantized to multiples of 1/255 so they survive an IDX
//! round trip unchanged.

use rand::Rng;

use crate::autodiff::rng_from_seed;
use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPH_SIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphCorpus {
    /// Horizontal bar, vertical bar, diagonal, anti-diagonal.
    Strokes,
    /// Box outline, plus sign, filled disc, corner bracket.
    Shapes,
}

impl GlyphCorpus {
    pub fn name(self) -> &'static str {
        match self {
            GlyphCorpus::Strokes => "strokes",
            GlyphCorpus::Shapes => "shapes",
        }
    }
}

const CLASSES: usize = 4;

pub fn gen_glyphs(corpus: GlyphCorpus, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::EmptyData("n_per_class is zero".into()));
    }
    let s = GLYPH_SIDE;
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(CLASSES * n_per_class * s * s);
    let mut labels = Vec::with_capacity(CLASSES * n_per_class);
    for class in 0..CLASSES {
        for _ in 0..n_per_class {
            let mut img = vec![0.0f64; s * s];
            let ink = rng.random_range(0.6..1.0);
            let put = |img: &mut [f64], r: isize, c: isize| {
                if (0..s as isize).contains(&r) && (0..s as isize).contains(&c) {
                    img[r as usize * s + c as usize] = ink;
                }
            };
            match (corpus, class) {
                (GlyphCorpus::Strokes, 0) => {
                    let r = rng.random_range(2i64..8) as isize;
                    let thick = rng.random_range(1i64..3) as isize;
                    for t in 0..thick {
                        for c in 1..(s as isize - 1) {
                            put(&mut img, r + t, c);
                        }
                    }
                }
                (GlyphCorpus::Strokes, 1) => {
                    let c = rng.random_range(2i64..8) as isize;
                    let thick = rng.random_range(1i64..3) as isize;
                    for t in 0..thick {
                        for r in 1..(s as isize - 1) {
                            put(&mut img, r, c + t);
                        }
                    }
                }
                (GlyphCorpus::Strokes, 2) => {
                    let off = rng.random_range(-2i64..3) as isize;
                    for i in 0..s as isize {
                        put(&mut img, i, i + off);
                    }
                }
                (GlyphCorpus::Strokes, _) => {
                    let off = rng.random_range(-2i64..3) as isize;
                    for i in 0..s as isize {
                        put(&mut img, i, s as isize - 1 - i + off);
                    }
                }
                (GlyphCorpus::Shapes, 0) => {
                    let lo = rng.random_range(1i64..4) as isize;
                    let hi = rng.random_range(6i64..9) as isize;
                    for k in lo..=hi {
                        put(&mut img, lo, k);
                        put(&mut img, hi, k);
                        put(&mut img, k, lo);
                        put(&mut img, k, hi);
                    }
                }
                (GlyphCorpus::Shapes, 1) => {
                    let cr = rng.random_range(3i64..7) as isize;
                    let cc = rng.random_range(3i64..7) as isize;
                    for k in -3..=3 {
                        put(&mut img, cr + k, cc);
                        put(&mut img, cr, cc + k);
                    }
                }
                (GlyphCorpus::Shapes, 2) => {
                    let cr = rng.random_range(3.5..6.5);
                    let cc = rng.random_range(3.5..6.5);
                    let rad: f64 = rng.random_range(1.5..3.0);
                    for r in 0..s {
                        for c in 0..s {
                            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                            if dr * dr + dc * dc <= rad * rad {
                                put(&mut img, r as isize, c as isize);
                            }
                        }
                    }
                }
                (GlyphCorpus::Shapes, _) => {
                    let r0 = rng.random_range(1i64..4) as isize;
                    let c0 = rng.random_range(1i64..4) as isize;
                    for k in 0..6 {
                        put(&mut img, r0, c0 + k);
                        put(&mut img, r0 + k, c0);
                    }
                }
            }
            for v in &mut img {
                let noisy = (*v + rng.random_range(0.0..0.15)).min(1.0);
                *v = (noisy * 255.0).round() / 255.0;
            }
            data.extend(img);
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, s, s, 1], data)?,
        Some(labels),
        CLASSES,
        Provenance::new(corpus.name(), "all", Some(seed)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_idx, write_idx};

    #[test]
    fn deterministic_and_in_range() {
        let a = gen_glyphs(GlyphCorpus::Strokes, 5, 1).unwrap();
        let b = gen_glyphs(GlyphCorpus::Strokes, 5, 1).unwrap();
        assert_eq!(a.features.to_le_bytes(), b.features.to_le_bytes());
        assert!(a.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.features.shape(), &[20, GLYPH_SIDE, GLYPH_SIDE, 1]);
    }

    #[test]
    fn survives_idx_round_trip() {
        let d = gen_glyphs(GlyphCorpus::Shapes, 3, 2).unwrap();
        let pixels: Vec<u8> = d.features.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        let labels: Vec<u8> = d.labels.as_ref().unwrap().iter().map(|&l| l as u8).collect();
        let (img, lab) = write_idx(&pixels, &labels, GLYPH_SIDE, GLYPH_SIDE).unwrap();
        let back = parse_idx(&img, &lab).unwrap();
        assert_eq!(back.features.data(), d.features.data());
    }
}
