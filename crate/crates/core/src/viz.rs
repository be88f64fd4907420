//! SVG snapshots of two-dimensional models on the Poincaré disk.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::distance;
use crate::prototypes::Label;
use crate::training::{forward_embed, ModelParams};

const SIZE: f64 = 600.0;
const RADIUS: f64 = 280.0;
const BONAFIDE: &str = "#1f77b4";
const SPOOF: &str = "#d62728";

fn color(label: Label) -> &'static str {
    match label {
        Label::Bonafide => BONAFIDE,
        Label::Spoof => SPOOF,
    }
}

/// Maps a ball point to SVG coordinates. Ball coordinates are multiplied by
/// `√c`, so the ball boundary lands on the drawn unit circle; the y axis points up.
fn to_svg(p: &[f64], sqrt_c: f64) -> (f64, f64) {
    let c = SIZE / 2.0;
    (c + RADIUS * sqrt_c * p[0], c - RADIUS * sqrt_c * p[1])
}

/// Renders the embeddings of `ds` (original views) together with the data
/// and top prototypes of a `D = 2` model. Each data prototype is joined by a
/// straight chord to its nearest top prototype.
pub fn disk_svg(params: &ModelParams, ds: &EmbeddingDataset) -> Result<String> {
    if params.dim() != 2 {
        return Err(Error::UnsupportedDimension {
            expected: 2,
            got: params.dim(),
        });
    }
    if ds.d_in != params.d_in() {
        return Err(Error::InvalidInput(format!(
            "dataset dimension {} != model input dimension {}",
            ds.d_in,
            params.d_in()
        )));
    }
    let g = params.bank.geometry();
    let sc = g.sqrt_c();
    let m = params.bank.materialize();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<circle cx="{0}" cy="{0}" r="{RADIUS}" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
        SIZE / 2.0
    );

    let _ = writeln!(s, r#"<g id="samples">"#);
    for i in 0..ds.n() {
        let x: Vec<f64> = ds.feature(i).iter().map(|v| f64::from(*v)).collect();
        let z = forward_embed(&x, params)?;
        let (px, py) = to_svg(&z, sc);
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.3}" cy="{py:.3}" r="2" fill="{}" fill-opacity="0.5"/>"#,
            color(ds.labels[i])
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="chords">"#);
    for p in &m.data {
        let nearest = m
            .top
            .iter()
            .enumerate()
            .map(|(t, q)| (t, distance(p, q, g.c)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(t, _)| t)
            .expect("at least one top prototype");
        let (x1, y1) = to_svg(p, sc);
        let (x2, y2) = to_svg(&m.top[nearest], sc);
        let _ = writeln!(
            s,
            r##"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#7f7f7f" stroke-width="1"/>"##
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="top-prototypes">"#);
    for q in &m.top {
        let (x, y) = to_svg(q, sc);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.3}" cy="{y:.3}" r="5" fill="none" stroke="#2ca02c" stroke-width="1.5"/>"##
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="data-prototypes">"#);
    for (k, p) in m.data.iter().enumerate() {
        let (x, y) = to_svg(p, sc);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.3}" cy="{y:.3}" r="8" fill="{}" stroke="#000000" stroke-width="1.5"/>"##,
            color(params.bank.class_of(k))
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_disk_svg(params: &ModelParams, ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_atomic(path, disk_svg(params, ds)?.as_bytes())
}
