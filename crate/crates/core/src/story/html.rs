use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Story, StorySection};
use crate::error::{Error, Result};

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;color:#222}\
section{border-top:1px solid #ccc;padding:0.5em 0}\
figure{display:inline-block;margin:0.5em;text-align:center}\
img{width:192px;height:192px;image-rendering:pixelated}\
table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:0.2em 0.6em;text-align:right}\
footer{font-size:0.8em;color:#666}";

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn figure(out: &mut String, file: &str, caption: &str) {
    let _ = write!(
        out,
        "<figure><img src=\"assets/{}\" alt=\"{}\"/><figcaption>{}</figcaption></figure>",
        esc(file),
        esc(caption),
        esc(caption)
    );
}

fn table<'a>(out: &mut String, header: [&str; 2], rows: impl Iterator<Item = (String, &'a f64)>) {
    let _ = write!(out, "<table><tr><th>{}</th><th>{}</th></tr>", esc(header[0]), esc(header[1]));
    for (k, v) in rows {
        let _ = write!(out, "<tr><td>{}</td><td>{v:.6}</td></tr>", esc(&k));
    }
    out.push_str("</table>");
}

fn section(out: &mut String, i: usize, s: &StorySection) {
    let _ = write!(out, "<section class=\"{}\" id=\"section-{i}\">", s.kind().name());
    match s {
        StorySection::Finding { class_name, probability, laterality, .. } => {
            let _ = write!(
                out,
                "<h2>Finding: {}</h2><p>Probability {probability:.6}, {} field.</p>",
                esc(class_name),
                laterality.word()
            );
        }
        StorySection::Segmentation { overlay, mask_fraction } => {
            out.push_str("<h2>Lung segmentation</h2>");
            figure(out, overlay, &format!("predicted lung mask, {mask_fraction:.6} of the image"));
        }
        StorySection::ReportText { text } => {
            let _ = write!(out, "<h2>Generated report</h2><blockquote>{}</blockquote>", esc(text));
        }
        StorySection::CamGallery { images } => {
            out.push_str("<h2>Class activation maps</h2>");
            for im in images {
                figure(out, &im.file, &im.caption);
            }
        }
        StorySection::AttentionGallery { images } => {
            out.push_str("<h2>Report attention</h2>");
            for im in images {
                figure(out, &im.file, &im.caption);
            }
        }
        StorySection::Narrative { text } => {
            let _ = write!(out, "<p>{}</p>", esc(text));
        }
        StorySection::LimeTable { class_name, overlay, rows, intercept, r2, .. } => {
            let _ = write!(out, "<h2>LIME: {}</h2>", esc(class_name));
            figure(out, overlay, &format!("LIME top segments: {class_name}"));
            table(out, ["segment", "weight"], rows.iter().map(|r| (r.segment.to_string(), &r.weight)));
            let _ = write!(out, "<p>intercept {intercept:.6}, weighted R² {r2:.6}</p>");
        }
        StorySection::Metrics { logits, probabilities, losses, teacher_agreement } => {
            out.push_str("<h2>Metrics</h2>");
            table(out, ["class", "logit"], logits.iter().enumerate().map(|(i, v)| (i.to_string(), v)));
            table(out, ["class", "probability"], probabilities.iter().enumerate().map(|(i, v)| (i.to_string(), v)));
            table(out, ["task", "loss"], losses.iter().map(|(k, v)| (k.clone(), v)));
            table(out, ["task", "teacher agreement"], teacher_agreement.iter().map(|(k, v)| (k.clone(), v)));
        }
    }
    out.push_str("</section>\n");
}

/// The page markup. Assets are referenced as `assets/<file>`.
pub fn html_text(story: &Story) -> String {
    let mut out = String::new();
    let title = format!("Sample {} ({})", story.sample, story.audience);
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"/><title>{}</title><style>{STYLE}</style></head>\n<body><h1>{}</h1>\n",
        esc(&title),
        esc(&title)
    );
    for (i, s) in story.sections.iter().enumerate() {
        section(&mut out, i, s);
    }
    let m = &story.metadata;
    let _ = write!(
        out,
        "<footer><p>student {} · config {} · threshold {:.6}</p></footer>\n</body></html>\n",
        esc(&m.student_checksum),
        esc(&m.config_hash),
        m.threshold
    );
    out
}

/// Writes `index.html` and copies every referenced asset from `assets_src`
/// into `outdir/assets/`, replacing whatever was there. Returns the written
/// files, sorted.
pub fn render_html(story: &Story, assets_src: &Path, outdir: &Path) -> Result<Vec<PathBuf>> {
    let mut seen = BTreeSet::new();
    for s in &story.sections {
        for file in s.assets() {
            if file.contains('/') || file.contains('\\') || file.starts_with('.') {
                return Err(Error::Render(format!("asset name {file:?} is not a plain file name")));
            }
            if !seen.insert(file.to_string()) {
                return Err(Error::Render(format!("asset {file} is referenced twice")));
            }
            if !assets_src.join(file).is_file() {
                return Err(Error::Render(format!("missing asset {}", assets_src.join(file).display())));
            }
        }
    }
    let assets = outdir.join("assets");
    if assets.exists() {
        fs::remove_dir_all(&assets)?;
    }
    fs::create_dir_all(&assets)?;
    let mut written = Vec::new();
    for file in &seen {
        let dst = assets.join(file);
        fs::copy(assets_src.join(file), &dst)?;
        written.push(dst);
    }
    let index = outdir.join("index.html");
    fs::write(&index, html_text(story))?;
    written.push(index);
    written.sort();
    Ok(written)
}
