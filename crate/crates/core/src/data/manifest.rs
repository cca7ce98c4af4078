use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,lq,fr,mos";

/// One manifest line; paths are as written (relative to the manifest).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub lq: String,
    pub fr: Option<String>,
    pub mos: f64,
    /// 1-based line in the source text.
    pub line: usize,
}

/// Parses `id,lq,fr,mos` text; `-` marks an absent reference.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        None => return Ok(rows),
        Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
        Some((i, header)) => {
            return Err(Error::Data(format!(
                "line {}: expected header `{MANIFEST_HEADER}`, got `{}`",
                i + 1,
                header.trim()
            )))
        }
    }
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!("line {line}: expected 4 fields, got {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Data(format!("line {line}: empty id or image path")));
        }
        let mos: f64 = fields[3]
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: mos `{}` is not a number", fields[3])))?;
        if !(0.0..=100.0).contains(&mos) {
            return Err(Error::Data(format!("line {line}: mos {mos} outside [0, 100]")));
        }
        if rows.iter().any(|r: &ManifestRow| r.id == fields[0]) {
            return Err(Error::Data(format!("line {line}: duplicate id `{}`", fields[0])));
        }
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            lq: fields[1].to_string(),
            fr: match fields[2] {
                "-" | "" => None,
                p => Some(p.to_string()),
            },
            mos,
            line,
        });
    }
    Ok(rows)
}

pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.lq, r.fr.as_deref().unwrap_or("-"), r.mos));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_an_empty_manifest() {
        assert!(parse_manifest("").unwrap().is_empty());
        assert!(parse_manifest("id,lq,fr,mos\n").unwrap().is_empty());
    }

    #[test]
    fn out_of_range_mos_cites_the_line() {
        let err = parse_manifest("id,lq,fr,mos\na,a.png,-,50\nb,b.png,-,150\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn round_trip() {
        let rows = parse_manifest("id,lq,fr,mos\na,x/a.png,x/r.png,12.5\nb,b.ppm,-,100\n").unwrap();
        assert_eq!(rows[1].fr, None);
        let back = parse_manifest(&render_manifest(&rows)).unwrap();
        assert_eq!(back, rows);
    }
}
