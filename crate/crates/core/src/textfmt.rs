//! Fixed numeric formatting for CSV artifacts.

/// Formats `v` with 9 significant digits and a '.' decimal separator.
///
/// Values in `[1e-4, 1e9)` use positional notation, everything else
/// scientific. Output is a pure function of the bits of `v`, so files
/// written from identical data are byte-identical.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    // exponent after rounding to 9 significant digits
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// Joins values with commas using [`format_sig9`].
pub fn format_row<I: IntoIterator<Item = f64>>(values: I) -> String {
    values.into_iter().map(format_sig9).collect::<Vec<_>>().join(",")
}

/// Parses comma-separated numeric rows, skipping blank lines.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: {:?}: {e}", n + 1, cell.trim()))
                })
                .collect()
        })
        .collect()
}
