//! Tiny sprite images with known generative factors.
//!
//! The source domain draws squares and crosses, the target domain discs and
//! crosses; position, size and intensity share the same distribution in both.
//! A two-factor family (fixed square, varying position only) is also
//! available for latent-usage experiments.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

pub const DEFAULT_WIDTH: usize = 12;
pub const MIN_SPRITE: usize = 2;
/// Sprite side used by the two-factor family.
pub const TWO_FACTOR_SIZE: usize = 4;
/// Lower (exclusive) end of the intensity range.
pub const MIN_INTENSITY: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Square,
    Cross,
    Disc,
}

impl Shape {
    pub fn index(self) -> usize {
        match self {
            Shape::Square => 0,
            Shape::Cross => 1,
            Shape::Disc => 2,
        }
    }

    /// Whether cell `(r, c)` of an `s × s` box belongs to the sprite.
    fn covers(self, r: usize, c: usize, s: usize) -> bool {
        // Doubled coordinates relative to the box centre.
        let dr = 2 * r as i64 - (s as i64 - 1);
        let dc = 2 * c as i64 - (s as i64 - 1);
        match self {
            Shape::Square => true,
            Shape::Cross => dr.abs() <= 1 || dc.abs() <= 1,
            Shape::Disc => dr * dr + dc * dc <= (s * s) as i64,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Square => "square",
            Shape::Cross => "cross",
            Shape::Disc => "disc",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Shape::Square),
            "cross" => Ok(Shape::Cross),
            "disc" => Ok(Shape::Disc),
            other => Err(Error::parse(format!("unknown shape '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorSpec {
    pub shape: Shape,
    pub pos_x: usize,
    pub pos_y: usize,
    pub size: usize,
    pub intensity: f64,
}

impl FactorSpec {
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.size < MIN_SPRITE || self.size > width / 2 {
            return Err(Error::invalid(format!(
                "sprite size {} outside [{MIN_SPRITE}, {}]",
                self.size,
                width / 2
            )));
        }
        if self.pos_x + self.size > width || self.pos_y + self.size > width {
            return Err(Error::invalid("sprite does not fit in the canvas"));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(Error::invalid(format!("intensity {} outside (0, 1]", self.intensity)));
        }
        Ok(())
    }
}

/// Rasterises one sprite onto a blank `width × width` canvas (row-major).
pub fn render(spec: &FactorSpec, width: usize) -> Result<Vec<f64>> {
    spec.validate(width)?;
    let mut canvas = vec![0.0; width * width];
    for r in 0..spec.size {
        for c in 0..spec.size {
            if spec.shape.covers(r, c, spec.size) {
                canvas[(spec.pos_y + r) * width + spec.pos_x + c] = spec.intensity;
            }
        }
    }
    Ok(canvas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainId {
    Source,
    Target,
    TwoFactor,
}

impl DomainId {
    pub fn shapes(self) -> &'static [Shape] {
        match self {
            DomainId::Source => &[Shape::Square, Shape::Cross],
            DomainId::Target => &[Shape::Disc, Shape::Cross],
            DomainId::TwoFactor => &[Shape::Square],
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainId::Source => "source",
            DomainId::Target => "target",
            DomainId::TwoFactor => "two-factor",
        })
    }
}

impl FromStr for DomainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(DomainId::Source),
            "target" => Ok(DomainId::Target),
            "two-factor" | "two_factor" => Ok(DomainId::TwoFactor),
            other => Err(Error::parse(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub width: usize,
    pub images: Matrix,
    pub labels: Vec<FactorSpec>,
}

impl ImageDataset {
    pub fn from_labels(width: usize, labels: Vec<FactorSpec>) -> Result<Self> {
        let mut data = Vec::with_capacity(labels.len() * width * width);
        for spec in &labels {
            data.extend(render(spec, width)?);
        }
        Ok(Self {
            width,
            images: Matrix::from_raw(labels.len(), width * width, data),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels_csv(&self) -> String {
        let mut out = String::from("shape,pos_x,pos_y,size,intensity\n");
        for l in &self.labels {
            let _ = writeln!(out, "{},{},{},{},{:?}", l.shape, l.pos_x, l.pos_y, l.size, l.intensity);
        }
        out
    }
}

pub fn parse_labels_csv(text: &str) -> Result<Vec<FactorSpec>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("shape,pos_x,pos_y,size,intensity") => {}
        _ => return Err(Error::parse("labels csv: unexpected header")),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::parse(format!("labels csv line {}: expected 5 fields", i + 2)));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(format!("labels csv line {}: bad integer '{s}'", i + 2)))
            };
            Ok(FactorSpec {
                shape: f[0].parse()?,
                pos_x: num(f[1])?,
                pos_y: num(f[2])?,
                size: num(f[3])?,
                intensity: f[4]
                    .parse()
                    .map_err(|_| Error::parse(format!("labels csv line {}: bad intensity", i + 2)))?,
            })
        })
        .collect()
}

/// A generative factor that can be turned into categorical probe labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Shape,
    PosX,
    PosY,
    Size,
    Intensity,
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shape" => Ok(Factor::Shape),
            "pos_x" => Ok(Factor::PosX),
            "pos_y" => Ok(Factor::PosY),
            "size" => Ok(Factor::Size),
            "intensity" => Ok(Factor::Intensity),
            other => Err(Error::parse(format!("unknown factor '{other}'"))),
        }
    }
}

/// Quantises `factor` into `bins` classes. Positions are binned by which
/// horizontal or vertical band of the canvas holds the sprite centre; shape
/// labels are the shape index and ignore `bins`.
pub fn factor_bins(labels: &[FactorSpec], factor: Factor, bins: usize, width: usize) -> Vec<usize> {
    let bins = bins.max(1);
    let band = |doubled_centre: usize| (doubled_centre * bins / (2 * width)).min(bins - 1);
    labels
        .iter()
        .map(|l| match factor {
            Factor::Shape => l.shape.index(),
            Factor::PosX => band(2 * l.pos_x + l.size),
            Factor::PosY => band(2 * l.pos_y + l.size),
            Factor::Size => {
                let range = (width / 2).saturating_sub(MIN_SPRITE) + 1;
                ((l.size.saturating_sub(MIN_SPRITE)) * bins / range).min(bins - 1)
            }
            Factor::Intensity => {
                let u = (1.0 - l.intensity) / (1.0 - MIN_INTENSITY);
                ((u * bins as f64).floor() as usize).min(bins - 1)
            }
        })
        .collect()
}

fn sample_factors(domain: DomainId, width: usize, rng: &mut SplitMix64) -> FactorSpec {
    if domain == DomainId::TwoFactor {
        let span = width - TWO_FACTOR_SIZE + 1;
        return FactorSpec {
            shape: Shape::Square,
            pos_x: rng.below(span),
            pos_y: rng.below(span),
            size: TWO_FACTOR_SIZE,
            intensity: 1.0,
        };
    }
    let shapes = domain.shapes();
    let shape = shapes[rng.below(shapes.len())];
    let size = MIN_SPRITE + rng.below(width / 2 - MIN_SPRITE + 1);
    let span = width - size + 1;
    let pos_x = rng.below(span);
    let pos_y = rng.below(span);
    let intensity = 1.0 - (1.0 - MIN_INTENSITY) * rng.next_f64();
    FactorSpec {
        shape,
        pos_x,
        pos_y,
        size,
        intensity,
    }
}

/// Draws `n` images of the given domain on a `width × width` canvas.
pub fn make_domain_with_width(domain: DomainId, n: usize, seed: u64, width: usize) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one example"));
    }
    if width / 2
        < MIN_SPRITE.max(if domain == DomainId::TwoFactor {
            TWO_FACTOR_SIZE
        } else {
            0
        })
    {
        return Err(Error::invalid(format!("canvas width {width} too small")));
    }
    let mut rng = SplitMix64::new(seed);
    let labels = (0..n).map(|_| sample_factors(domain, width, &mut rng)).collect();
    ImageDataset::from_labels(width, labels)
}

pub fn make_domain(domain: DomainId, n: usize, seed: u64) -> Result<ImageDataset> {
    make_domain_with_width(domain, n, seed, DEFAULT_WIDTH)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_origin() {
        let spec = FactorSpec {
            shape: Shape::Square,
            pos_x: 0,
            pos_y: 0,
            size: 2,
            intensity: 1.0,
        };
        let ds = ImageDataset::from_labels(12, vec![spec]).unwrap();
        let ones = ds.images.data().iter().filter(|&&v| v == 1.0).count();
        let zeros = ds.images.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!((ones, zeros), (4, 140));
        assert_eq!(ds.images.get(0, 0), 1.0);
        assert_eq!(ds.images.get(0, 13), 1.0);
    }

    #[test]
    fn shapes_differ_at_size_five() {
        let mk = |shape| {
            render(
                &FactorSpec {
                    shape,
                    pos_x: 3,
                    pos_y: 2,
                    size: 5,
                    intensity: 0.5,
                },
                12,
            )
            .unwrap()
        };
        let count = |v: Vec<f64>| v.iter().filter(|&&p| p > 0.0).count();
        assert_eq!(count(mk(Shape::Square)), 25);
        assert_eq!(count(mk(Shape::Cross)), 9);
        assert_eq!(count(mk(Shape::Disc)), 21);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = FactorSpec {
            shape: Shape::Disc,
            pos_x: 10,
            pos_y: 0,
            size: 3,
            intensity: 1.0,
        };
        assert!(render(&spec, 12).is_err());
        spec.pos_x = 0;
        spec.intensity = 0.0;
        assert!(render(&spec, 12).is_err());
        spec.intensity = 1.0;
        spec.size = 7;
        assert!(render(&spec, 12).is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = make_domain(DomainId::Source, 200, 4).unwrap();
        let b = make_domain(DomainId::Source, 200, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.labels.iter().all(|l| l.shape != Shape::Disc));
        let t = make_domain(DomainId::Target, 200, 4).unwrap();
        assert!(t.labels.iter().all(|l| l.shape != Shape::Square));
        let two = make_domain(DomainId::TwoFactor, 50, 1).unwrap();
        assert!(two
            .labels
            .iter()
            .all(|l| l.size == TWO_FACTOR_SIZE && l.intensity == 1.0));
    }

    #[test]
    fn labels_csv_round_trip() {
        let ds = make_domain(DomainId::Target, 20, 9).unwrap();
        let parsed = parse_labels_csv(&ds.labels_csv()).unwrap();
        assert_eq!(parsed, ds.labels);
        assert!(parse_labels_csv("a,b\n").is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(make_domain(DomainId::Source, 0, 1).is_err());
    }

    #[test]
    fn factor_binning() {
        let spec = |pos_x, size| FactorSpec {
            shape: Shape::Cross,
            pos_x,
            pos_y: 0,
            size,
            intensity: 1.0,
        };
        let labels = [spec(0, 2), spec(5, 2), spec(10, 2), spec(6, 6)];
        assert_eq!(factor_bins(&labels, Factor::PosX, 3, 12), vec![0, 1, 2, 2]);
        assert_eq!(factor_bins(&labels, Factor::Size, 3, 12), vec![0, 0, 0, 2]);
        assert_eq!(factor_bins(&labels, Factor::Shape, 3, 12), vec![1; 4]);
        assert_eq!(factor_bins(&labels, Factor::Intensity, 3, 12), vec![0; 4]);
        assert!("colour".parse::<Factor>().is_err());
    }
}
