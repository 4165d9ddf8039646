//! Seed-averaged layer × layer similarity grids and their CSV/PGM/SVG renderings.
//!
//! Cell `(j, k)` averages `metric(layer_j of A_i, layer_k of B_l)` over every
//! pair of captures `(A_i, B_l)`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{procrustes_similarity, CkaOperand, MetricKind};
use crate::vae::{ActivationCapture, DECODER_LAYERS, ENCODER_LAYERS};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHeatmap {
    pub row_layers: Vec<String>,
    pub col_layers: Vec<String>,
    /// Row-major; `None` marks a cell where some pair was degenerate.
    pub values: Vec<Option<f64>>,
    pub n_seed_pairs: usize,
    pub metric: MetricKind,
}

impl SimilarityHeatmap {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.col_layers.len() + col]
    }

    pub fn cell(&self, row_layer: &str, col_layer: &str) -> Option<f64> {
        let r = self.row_layers.iter().position(|l| l == row_layer)?;
        let c = self.col_layers.iter().position(|l| l == col_layer)?;
        self.get(r, c)
    }

    /// Mean over the unmasked cells whose row and column layers are listed.
    pub fn block_mean(&self, rows: &[&str], cols: &[&str]) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (r, rl) in self.row_layers.iter().enumerate() {
            if !rows.contains(&rl.as_str()) {
                continue;
            }
            for (c, cl) in self.col_layers.iter().enumerate() {
                if cols.contains(&cl.as_str()) {
                    if let Some(v) = self.get(r, c) {
                        sum += v;
                        count += 1;
                    }
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Mean of the encoder × encoder quadrant.
    pub fn encoder_block_mean(&self) -> Option<f64> {
        self.block_mean(&ENCODER_LAYERS, &ENCODER_LAYERS)
    }

    /// Mean of the decoder × decoder quadrant.
    pub fn decoder_block_mean(&self) -> Option<f64> {
        self.block_mean(&DECODER_LAYERS, &DECODER_LAYERS)
    }
}

fn layer_names(captures: &[ActivationCapture], side: &str) -> Result<Vec<String>> {
    let first = captures
        .first()
        .ok_or_else(|| Error::invalid(format!("capture list {side} is empty")))?;
    let names: Vec<String> = first.layer_names().iter().map(|s| s.to_string()).collect();
    for c in &captures[1..] {
        if c.layer_names() != names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("layer names differ within capture list {side}")));
        }
    }
    Ok(names)
}

enum Prepared {
    Cka(Vec<Vec<Option<CkaOperand>>>),
    Raw,
}

fn prepare(captures: &[ActivationCapture], metric: MetricKind) -> Result<Prepared> {
    match metric {
        MetricKind::Procrustes => Ok(Prepared::Raw),
        MetricKind::Cka => captures
            .iter()
            .map(|c| {
                c.layers()
                    .iter()
                    .map(|(_, m)| match CkaOperand::new(m) {
                        Ok(op) => Ok(Some(op)),
                        Err(Error::Degenerate(_)) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map(Prepared::Cka),
    }
}

/// Averages `metric` over all `|a| × |b|` capture pairs for every layer pair.
pub fn average_heatmap(
    captures_a: &[ActivationCapture],
    captures_b: &[ActivationCapture],
    metric: MetricKind,
) -> Result<SimilarityHeatmap> {
    let row_layers = layer_names(captures_a, "a")?;
    let col_layers = layer_names(captures_b, "b")?;
    let n = captures_a[0].n_examples();
    if captures_a.iter().chain(captures_b).any(|c| c.n_examples() != n) {
        return Err(Error::invalid("captures were not taken on the same evaluation set"));
    }
    let prep_a = prepare(captures_a, metric)?;
    let prep_b = prepare(captures_b, metric)?;

    let pairs = captures_a.len() * captures_b.len();
    let mut values = Vec::with_capacity(row_layers.len() * col_layers.len());
    for j in 0..row_layers.len() {
        for k in 0..col_layers.len() {
            let mut sum = 0.0;
            let mut masked = false;
            'pairs: for (ia, ca) in captures_a.iter().enumerate() {
                for (ib, cb) in captures_b.iter().enumerate() {
                    let score = match (&prep_a, &prep_b) {
                        (Prepared::Cka(pa), Prepared::Cka(pb)) => match (&pa[ia][j], &pb[ib][k]) {
                            (Some(x), Some(y)) => x.cka(y)?.value,
                            _ => {
                                masked = true;
                                break 'pairs;
                            }
                        },
                        _ => match procrustes_similarity(&ca.layers()[j].1, &cb.layers()[k].1) {
                            Ok(s) => s.value,
                            Err(Error::Degenerate(_)) => {
                                masked = true;
                                break 'pairs;
                            }
                            Err(e) => return Err(e),
                        },
                    };
                    sum += score;
                }
            }
            values.push(if masked {
                None
            } else {
                Some((sum / pairs as f64).clamp(0.0, 1.0))
            });
        }
    }
    Ok(SimilarityHeatmap {
        row_layers,
        col_layers,
        values,
        n_seed_pairs: pairs,
        metric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Csv,
    Pgm,
    Svg,
}

impl RenderFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RenderFormat::Csv => "csv",
            RenderFormat::Pgm => "pgm",
            RenderFormat::Svg => "svg",
        }
    }
}

impl FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RenderFormat::Csv),
            "pgm" => Ok(RenderFormat::Pgm),
            "svg" => Ok(RenderFormat::Svg),
            other => Err(Error::parse(format!("unknown render format '{other}'"))),
        }
    }
}

/// 8-bit gray level for a score, rounding halves up.
pub fn gray_level(score: f64) -> u8 {
    (255.0 * score.clamp(0.0, 1.0) + 0.5).floor() as u8
}

pub fn render(h: &SimilarityHeatmap, format: RenderFormat) -> Vec<u8> {
    match format {
        RenderFormat::Csv => render_csv(h).into_bytes(),
        RenderFormat::Pgm => render_pgm(h.col_layers.len(), h.row_layers.len(), |i| {
            h.values[i].map_or(0, gray_level)
        }),
        RenderFormat::Svg => render_svg(h).into_bytes(),
    }
}

/// Sidecar PGM marking masked cells with 255; `None` when nothing is masked.
pub fn render_mask(h: &SimilarityHeatmap) -> Option<Vec<u8>> {
    if h.values.iter().all(Option::is_some) {
        return None;
    }
    Some(render_pgm(h.col_layers.len(), h.row_layers.len(), |i| {
        if h.values[i].is_none() {
            255
        } else {
            0
        }
    }))
}

fn render_pgm(width: usize, height: usize, pixel: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend((0..width * height).map(pixel));
    out
}

fn render_csv(h: &SimilarityHeatmap) -> String {
    let mut out = String::from("layer");
    for c in &h.col_layers {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (r, name) in h.row_layers.iter().enumerate() {
        out.push_str(name);
        for c in 0..h.col_layers.len() {
            match h.get(r, c) {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV rendering back into a heatmap.
pub fn parse_csv(text: &str, metric: MetricKind, n_seed_pairs: usize) -> Result<SimilarityHeatmap> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("empty heatmap csv"))?;
    let mut header_fields = header.split(',');
    if header_fields.next() != Some("layer") {
        return Err(Error::parse("heatmap csv must start with 'layer'"));
    }
    let col_layers: Vec<String> = header_fields.map(str::to_string).collect();
    let mut row_layers = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let mut fields = line.split(',');
        row_layers.push(fields.next().unwrap_or_default().to_string());
        let row: Vec<Option<f64>> = fields
            .map(|f| match f {
                "NA" => Ok(None),
                v => v
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::parse(format!("bad heatmap value '{v}'"))),
            })
            .collect::<Result<_>>()?;
        if row.len() != col_layers.len() {
            return Err(Error::parse("heatmap csv row has the wrong number of cells"));
        }
        values.extend(row);
    }
    Ok(SimilarityHeatmap {
        row_layers,
        col_layers,
        values,
        n_seed_pairs,
        metric,
    })
}

const CELL: usize = 48;
const LABEL: usize = 72;

fn render_svg(h: &SimilarityHeatmap) -> String {
    let (rows, cols) = (h.row_layers.len(), h.col_layers.len());
    let width = LABEL + cols * CELL + 80;
    let height = LABEL + rows * CELL + 16;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="rgb(0,0,0)"/><stop offset="1" stop-color="rgb(255,255,255)"/></linearGradient></defs>"#
    );
    for (c, name) in h.col_layers.iter().enumerate() {
        let x = LABEL + c * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="end" transform="rotate(-45 {x} {})">{name}</text>"#,
            LABEL - 6,
            LABEL - 6
        );
    }
    for (r, name) in h.row_layers.iter().enumerate() {
        let y = LABEL + r * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#,
            LABEL - 6,
            y + CELL / 2 + 4
        );
        for c in 0..cols {
            let x = LABEL + c * CELL;
            match h.get(r, c) {
                Some(v) => {
                    let g = gray_level(v);
                    let ink = if g > 127 { "black" } else { "white" };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/><text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                        x + CELL / 2,
                        y + CELL / 2 + 4
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb(0,0,0)" stroke="red"/><text x="{}" y="{}" text-anchor="middle" fill="red">NA</text>"#,
                        x + CELL / 2,
                        y + CELL / 2 + 4
                    );
                }
            }
        }
    }
    let ramp_x = LABEL + cols * CELL + 24;
    let ramp_h = rows * CELL;
    let _ = writeln!(
        s,
        r#"<rect x="{ramp_x}" y="{LABEL}" width="16" height="{ramp_h}" fill="url(#ramp)" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">1</text>"#, ramp_x + 20, LABEL + 8);
    let _ = writeln!(s, r#"<text x="{}" y="{}">0</text>"#, ramp_x + 20, LABEL + ramp_h);
    let _ = writeln!(
        s,
        r#"<text x="{LABEL}" y="{}">{} averaged over {} pairs</text>"#,
        height - 4,
        h.metric,
        h.n_seed_pairs
    );
    s.push_str("</svg>\n");
    s
}
