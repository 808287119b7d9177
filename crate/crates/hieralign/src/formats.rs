//! On-disk formats of the generated corpus and of training logs.
//!
//! Text files start with `# hieralign <kind> v<version>` and, where the
//! content depends on a configuration, `# config <hash>`. Rasters are
//! binary with a fixed 16-byte header.

use std::fmt::Write as _;
use std::path::Path;

use hieralign_core::bags::Vocabulary;
use hieralign_core::dataset::{Dataset, SlideMeta};
use hieralign_core::losses::LossBreakdown;
use hieralign_core::pyramid::{expand_children, AnchorTree, Level, PatchId, PatchIndex, Raster};
use hieralign_core::trainer::{RunLog, StepRecord};

use crate::error::{Error, Result};

pub const RASTER_MAGIC: [u8; 4] = *b"HRAS";
pub const RASTER_VERSION: u16 = 1;
/// dtype code for f32 little-endian
pub const DTYPE_F32LE: u8 = 1;
pub const TEXT_VERSION: u32 = 1;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Header: magic, version (u16), dtype (u8), reserved (u8), height and
/// width (u32 each), all little-endian, then row-major f32 pixels.
pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * r.data.len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.push(DTYPE_F32LE);
    out.push(0);
    out.extend_from_slice(&(r.height as u32).to_le_bytes());
    out.extend_from_slice(&(r.width as u32).to_le_bytes());
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8], path: &Path) -> Result<Raster> {
    if bytes.len() < 16 || bytes[..4] != RASTER_MAGIC {
        return Err(Error::format(path, "not a raster file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RASTER_VERSION {
        return Err(Error::Mismatch {
            what: "raster version",
            expected: RASTER_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    if bytes[6] != DTYPE_F32LE {
        return Err(Error::format(path, format!("unsupported dtype code {}", bytes[6])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (u32_at(8), u32_at(12));
    if bytes.len() != 16 + 4 * h * w {
        return Err(Error::format(
            path,
            format!(
                "{}x{} raster needs {} bytes, file has {}",
                h,
                w,
                16 + 4 * h * w,
                bytes.len()
            ),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Raster::new(h, w, data)?)
}

fn header(kind: &str, config_hash: Option<&str>) -> String {
    let mut s = format!("# hieralign {kind} v{TEXT_VERSION}\n");
    if let Some(h) = config_hash {
        let _ = writeln!(s, "# config {h}");
    }
    s
}

/// Splits off the header, checking kind and version; returns the config
/// hash (if any) and the data lines with their 1-based line numbers.
fn body<'a>(text: &'a str, kind: &str, path: &Path) -> Result<(Option<&'a str>, Vec<(usize, &'a str)>)> {
    let mut lines = text.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).unwrap_or("");
    let want = format!("# hieralign {kind} v");
    let version = first
        .strip_prefix(&want)
        .ok_or_else(|| Error::format(path, format!("missing '{want}N' header")))?;
    if version != TEXT_VERSION.to_string() {
        return Err(Error::Mismatch {
            what: "format version",
            expected: TEXT_VERSION.to_string(),
            found: version.into(),
        });
    }
    let mut hash = None;
    let mut out = Vec::new();
    for (i, l) in lines {
        if let Some(h) = l.strip_prefix("# config ") {
            hash = Some(h.trim());
        } else if !l.starts_with('#') && !l.trim().is_empty() {
            out.push((i + 1, l));
        }
    }
    Ok((hash, out))
}

fn field<T: std::str::FromStr>(s: Option<&str>, what: &str, line: usize, path: &Path) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("line {line}: bad {what}")))
}

fn level_of(m: u32, line: usize, path: &Path) -> Result<Level> {
    Level::from_magnification(m).map_err(|_| Error::format(path, format!("line {line}: bad level {m}")))
}

/// One record per patch: `slide anchor level row col parent_ref`, where
/// `level` is the magnification and `parent_ref` the parent's member
/// index within its anchor (`-` for the anchor itself).
pub fn render_patch_index(trees: &[AnchorTree], config_hash: &str) -> String {
    let mut s = header("patch-index", Some(config_hash));
    for t in trees {
        for (m, p) in t.members.iter().zip(&t.parent) {
            let parent = p.map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                m.slide,
                m.anchor,
                m.level.magnification(),
                m.row,
                m.col,
                parent
            );
        }
    }
    s
}

/// Anchor origins: `slide anchor y x` in native pixels.
pub fn render_anchors(trees: &[AnchorTree], config_hash: &str) -> String {
    let mut s = header("anchors", Some(config_hash));
    for t in trees {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            t.anchor.slide, t.anchor.anchor, t.origin.0, t.origin.1
        );
    }
    s
}

/// Rebuilds the quadtrees from an index and its anchor origins, checking
/// every record against the canonical expansion.
pub fn parse_patch_index(index: &str, anchors: &str, path: &Path) -> Result<(String, PatchIndex)> {
    let (hash, rows) = body(index, "patch-index", path)?;
    let hash = hash
        .ok_or_else(|| Error::format(path, "missing config hash"))?
        .to_string();
    let (_, origins) = body(anchors, "anchors", path)?;
    let mut out = PatchIndex::new();
    let mut rows = rows.into_iter().peekable();
    for (line, l) in origins {
        let mut f = l.split_whitespace();
        let slide: u32 = field(f.next(), "slide", line, path)?;
        let anchor: u32 = field(f.next(), "anchor", line, path)?;
        let y: usize = field(f.next(), "y", line, path)?;
        let x: usize = field(f.next(), "x", line, path)?;
        let tree = expand_children(PatchId::anchor(slide, anchor), (y, x))?;
        for (i, m) in tree.members.iter().enumerate() {
            let (line, l) = rows
                .next()
                .ok_or_else(|| Error::format(path, format!("anchor {slide}/{anchor} has {i} patches")))?;
            let mut f = l.split_whitespace();
            let s: u32 = field(f.next(), "slide", line, path)?;
            let a: u32 = field(f.next(), "anchor", line, path)?;
            let level = level_of(field(f.next(), "level", line, path)?, line, path)?;
            let row: usize = field(f.next(), "row", line, path)?;
            let col: usize = field(f.next(), "col", line, path)?;
            let parent = match f.next() {
                Some("-") => None,
                p => Some(field::<usize>(p, "parent_ref", line, path)?),
            };
            let id = PatchId::new(s, a, level, row, col)?;
            if id != *m || parent != tree.parent[i] {
                return Err(Error::format(
                    path,
                    format!("line {line}: record disagrees with the quadtree"),
                ));
            }
        }
        out.push(tree);
    }
    if let Some((line, _)) = rows.next() {
        return Err(Error::format(path, format!("line {line}: patch of an unknown anchor")));
    }
    out.validate()?;
    Ok((hash, out))
}

/// `slide anchor level row col : token token ...`
pub fn render_captions(data: &Dataset, config_hash: &str) -> String {
    let mut s = header("captions", Some(config_hash));
    for a in &data.anchors {
        for (m, cap) in a.tree.members.iter().zip(&a.captions) {
            let _ = write!(
                s,
                "{} {} {} {} {} :",
                m.slide,
                m.anchor,
                m.level.magnification(),
                m.row,
                m.col
            );
            for &t in cap {
                let _ = write!(s, " {}", data.vocab.token(t).unwrap_or("?"));
            }
            s.push('\n');
        }
    }
    s
}

pub fn parse_captions(text: &str, vocab: &Vocabulary, path: &Path) -> Result<Vec<(PatchId, Vec<usize>)>> {
    let (_, rows) = body(text, "captions", path)?;
    rows.into_iter()
        .map(|(line, l)| {
            let (head, toks) = l
                .split_once(':')
                .ok_or_else(|| Error::format(path, format!("line {line}: missing ':'")))?;
            let mut f = head.split_whitespace();
            let s: u32 = field(f.next(), "slide", line, path)?;
            let a: u32 = field(f.next(), "anchor", line, path)?;
            let level = level_of(field(f.next(), "level", line, path)?, line, path)?;
            let row: usize = field(f.next(), "row", line, path)?;
            let col: usize = field(f.next(), "col", line, path)?;
            let ids = toks
                .split_whitespace()
                .map(|t| {
                    vocab
                        .id(t)
                        .ok_or_else(|| Error::format(path, format!("line {line}: unknown token {t:?}")))
                })
                .collect::<Result<_>>()?;
            Ok((PatchId::new(s, a, level, row, col)?, ids))
        })
        .collect()
}

/// Evaluation tiles: `slide level y x side label`.
pub fn render_tiles(data: &Dataset, config_hash: &str) -> String {
    let mut s = header("tiles", Some(config_hash));
    for t in &data.tiles {
        let (y, x, side) = t.footprint;
        let id = data.slides[t.slide].id;
        let _ = writeln!(s, "{} {} {} {} {} {}", id, t.level.magnification(), y, x, side, t.label);
    }
    s
}

/// `id label split seed threshold tissue_fraction shortfall cells`, where
/// `cells` has one character per tissue cell (class digit or `.` for
/// background).
pub fn render_slides(data: &Dataset, config_hash: &str) -> String {
    let mut s = header("slides", Some(config_hash));
    for m in &data.slides {
        let split = if m.train(&data.config) { "train" } else { "eval" };
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            m.id,
            m.label,
            split,
            m.seed,
            m.threshold_level,
            m.tissue_fraction,
            m.anchor_shortfall,
            cells(m)
        );
    }
    s
}

fn cells(m: &SlideMeta) -> String {
    m.gen
        .cells
        .iter()
        .map(|c| match c {
            None => '.',
            Some(k) => char::from_digit(*k as u32, 36).unwrap_or('?'),
        })
        .collect()
}

/// `step total bl cvta mrtva itc itm mlm plm lr`, values in shortest
/// round-trip form.
pub fn metrics_line(r: &StepRecord) -> String {
    let l = &r.loss;
    format!(
        "{} {} {} {} {} {} {} {} {} {}",
        r.step, l.total, l.bl, l.cvta, l.mrtva, l.itc, l.itm, l.mlm, l.plm, r.lr
    )
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<RunLog> {
    let mut log = RunLog::default();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let v: Vec<&str> = l.split_whitespace().collect();
        if v.len() != 10 {
            return Err(Error::format(path, format!("line {line}: expected 10 fields")));
        }
        let f = |j: usize, what: &str| field::<f32>(Some(v[j]), what, line, path);
        log.records.push(StepRecord {
            step: field(Some(v[0]), "step", line, path)?,
            loss: LossBreakdown {
                total: f(1, "total")?,
                bl: f(2, "bl")?,
                cvta: f(3, "cvta")?,
                mrtva: f(4, "mrtva")?,
                itc: f(5, "itc")?,
                itm: f(6, "itm")?,
                mlm: f(7, "mlm")?,
                plm: f(8, "plm")?,
            },
            lr: f(9, "lr")?,
        });
    }
    Ok(log)
}
