use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use tracing::debug;

/// Largest page range that gets expanded; wider spans are treated as noise.
const MAX_RANGE_SPAN: u32 = 50;

static CITATION: LazyLock<Regex> = LazyLock::new(|| {
    let item = r"\d+(?:\s*[-–—]\s*\d+)?";
    Regex::new(&format!(
        r"(?i)\bpages?\s+({item}(?:\s*(?:,\s*(?:and\s+)?|and\s+|&\s*){item})*)"
    ))
    .unwrap()
});

static ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+)(?:\s*[-–—]\s*(\d+))?").unwrap());

/// Page numbers cited in a report.
///
/// Recognized forms (case-insensitive): `page N`, `pages N and M`,
/// `pages N, M`, `pages N–M` (ranges expand, hyphen or en/em dash), and
/// mixtures such as `pages 56, 22–23`.
pub fn extract_citations(text: &str) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for cap in CITATION.captures_iter(text) {
        for item in ITEM.captures_iter(&cap[1]) {
            let Ok(start) = item[1].parse::<u32>() else {
                debug!(fragment = &item[0], "page number out of range");
                continue;
            };
            match item.get(2).map(|m| m.as_str().parse::<u32>()) {
                None => {
                    out.insert(start);
                }
                Some(Ok(end)) if end >= start && end - start <= MAX_RANGE_SPAN => {
                    out.extend(start..=end);
                }
                _ => debug!(fragment = &item[0], "ignoring unusable page range"),
            }
        }
    }
    out
}
