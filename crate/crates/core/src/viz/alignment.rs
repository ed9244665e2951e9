use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VizError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhonemeAlignment {
    pub intervals: Vec<Interval>,
}

/// Reads a JSON interval array or a long-format TextGrid (first
/// IntervalTier). Warnings are logged.
pub fn load_alignment(path: &Path) -> Result<PhonemeAlignment, VizError> {
    let text = std::fs::read_to_string(path).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (alignment, warnings) = parse_alignment(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(alignment)
}

pub fn parse_alignment(text: &str) -> Result<(PhonemeAlignment, Vec<String>), VizError> {
    let trimmed = text.trim_start_matches('\u{feff}').trim_start();
    let intervals = if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<Interval>>(trimmed).map_err(|e| VizError::Format(e.to_string()))?
    } else if trimmed.contains("ooTextFile") {
        parse_textgrid(trimmed)?
    } else {
        return Err(VizError::Format("neither a JSON interval array nor a TextGrid".into()));
    };
    validate(intervals)
}

fn validate(mut intervals: Vec<Interval>) -> Result<(PhonemeAlignment, Vec<String>), VizError> {
    let mut warnings = Vec::new();
    for iv in &intervals {
        if !(iv.start.is_finite() && iv.end.is_finite() && iv.start < iv.end) {
            return Err(VizError::Validation(format!(
                "interval {:?} has start {} not before end {}",
                iv.label, iv.start, iv.end
            )));
        }
    }
    if intervals.windows(2).any(|w| w[1].start < w[0].start) {
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        warnings.push("intervals were out of order and have been sorted".to_string());
    }
    for w in intervals.windows(2) {
        if w[1].start < w[0].end - 1e-9 {
            return Err(VizError::Validation(format!(
                "intervals {:?} [{}, {}] and {:?} [{}, {}] overlap",
                w[0].label, w[0].start, w[0].end, w[1].label, w[1].start, w[1].end
            )));
        }
    }
    Ok((PhonemeAlignment { intervals }, warnings))
}

fn textgrid_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(key)?.trim_start();
    Some(rest.strip_prefix('=')?.trim())
}

fn unquote(v: &str) -> String {
    let inner = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
    inner.replace("\"\"", "\"")
}

fn parse_textgrid(text: &str) -> Result<Vec<Interval>, VizError> {
    let number = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| VizError::Format(format!("bad TextGrid number {v:?}")))
    };
    let mut in_tier = false;
    let mut in_intervals = false;
    let mut out = Vec::new();
    let (mut xmin, mut xmax) = (None, None);
    for line in text.lines().map(str::trim) {
        if let Some(class) = textgrid_value(line, "class") {
            if in_tier {
                break;
            }
            in_tier = unquote(class) == "IntervalTier";
            continue;
        }
        if !in_tier {
            continue;
        }
        if line.starts_with("intervals: size") {
            in_intervals = true;
        } else if !in_intervals {
            continue;
        } else if let Some(v) = textgrid_value(line, "xmin") {
            xmin = Some(number(v)?);
        } else if let Some(v) = textgrid_value(line, "xmax") {
            xmax = Some(number(v)?);
        } else if let Some(v) = textgrid_value(line, "text") {
            match (xmin.take(), xmax.take()) {
                (Some(start), Some(end)) => out.push(Interval {
                    label: unquote(v),
                    start,
                    end,
                }),
                _ => return Err(VizError::Format("TextGrid interval without xmin/xmax".into())),
            }
        }
    }
    if !in_tier && out.is_empty() {
        return Err(VizError::Format("TextGrid has no IntervalTier".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.3
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.3
        intervals: size = 3
        intervals [1]:
            xmin = 0
            xmax = 0.1
            text = ""
        intervals [2]:
            xmin = 0.1
            xmax = 0.22
            text = "ə"
        intervals [3]:
            xmin = 0.22
            xmax = 0.3
            text = "say ""a"""
    item [2]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 0.3
        intervals: size = 1
        intervals [1]:
            xmin = 0
            xmax = 0.3
            text = "word"
"#;

    #[test]
    fn json_single_interval() {
        let (a, w) = parse_alignment(r#"[{"label":"g","start":0.00,"end":0.08}]"#).unwrap();
        assert_eq!(a.intervals.len(), 1);
        assert_eq!(a.intervals[0].end, 0.08);
        assert!(w.is_empty());
    }

    #[test]
    fn textgrid_first_tier_only() {
        let (a, _) = parse_alignment(GRID).unwrap();
        let bounds: Vec<_> = a.intervals.iter().map(|i| (i.start, i.end)).collect();
        assert_eq!(bounds, [(0.0, 0.1), (0.1, 0.22), (0.22, 0.3)]);
        assert_eq!(a.intervals[0].label, "");
        assert_eq!(a.intervals[1].label, "ə");
        assert_eq!(a.intervals[2].label, "say \"a\"");
    }

    #[test]
    fn out_of_order_is_sorted_with_warning() {
        let json = r#"[{"label":"b","start":0.1,"end":0.2},{"label":"a","start":0.0,"end":0.1}]"#;
        let (a, w) = parse_alignment(json).unwrap();
        assert_eq!(a.intervals[0].label, "a");
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn overlap_is_rejected() {
        let json = r#"[{"label":"a","start":0.0,"end":0.15},{"label":"b","start":0.1,"end":0.2}]"#;
        assert!(matches!(parse_alignment(json), Err(VizError::Validation(_))));
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(matches!(parse_alignment("a,b,c"), Err(VizError::Format(_))));
    }
}
