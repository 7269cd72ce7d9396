//! Splitting a combined harness stream into per-test outputs.
//!
//! A segment is the text between two separator occurrences. One newline
//! directly before a separator and one directly after it belong to the
//! separator line, not to either neighbouring segment.

/// Split `raw` on `separator`. `n` separators give `n + 1` segments.
pub fn split_output(raw: &[u8], separator: &[u8]) -> Vec<Vec<u8>> {
    if separator.is_empty() {
        return vec![raw.to_vec()];
    }
    let mut cuts = Vec::new();
    let mut i = 0;
    while i + separator.len() <= raw.len() {
        if &raw[i..i + separator.len()] == separator {
            cuts.push(i);
            i += separator.len();
        } else {
            i += 1;
        }
    }

    let mut segments = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for (k, &cut) in cuts.iter().chain(std::iter::once(&raw.len())).enumerate() {
        let mut seg = &raw[start..cut];
        if k > 0 {
            seg = seg.strip_prefix(b"\n").unwrap_or(seg);
        }
        if k < cuts.len() {
            seg = seg.strip_suffix(b"\n").unwrap_or(seg);
        }
        segments.push(seg.to_vec());
        start = cut + separator.len();
    }
    segments
}

/// Inverse of [`split_output`] for outputs that do not contain the separator.
pub fn join_outputs<T: AsRef<[u8]>>(outputs: &[T], separator: &[u8]) -> Vec<u8> {
    let mut raw = Vec::new();
    for (k, out) in outputs.iter().enumerate() {
        if k > 0 {
            raw.push(b'\n');
            raw.extend_from_slice(separator);
            raw.push(b'\n');
        }
        raw.extend_from_slice(out.as_ref());
    }
    raw
}
