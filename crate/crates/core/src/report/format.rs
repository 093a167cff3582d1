//! Display rules for the published-style tables. Numeric outputs never go
//! through these; they keep full precision.

use crate::artifact::fmt_fixed;

/// "#" for `p <= 0.001`, otherwise three decimals; "NA" for a missing value.
pub fn format_p(p: f64) -> String {
    if p.is_nan() {
        "NA".to_string()
    } else if p <= 0.001 {
        "#".to_string()
    } else {
        fmt_fixed(p, 3)
    }
}

/// `***` for p < 0.01, `**` for p < 0.05, `*` for p < 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Three decimals, or enough decimals to show the first significant digit
/// of a small positive value (`0.00002`).
pub fn format_ratio(v: f64) -> String {
    if !v.is_finite() {
        return "NA".to_string();
    }
    let a = v.abs();
    if a == 0.0 || a >= 0.0005 {
        return fmt_fixed(v, 3);
    }
    let decimals = (-a.log10()).ceil() as usize;
    fmt_fixed(v, decimals).trim_end_matches('0').to_string()
}

/// Fixed decimals with comma thousands separators.
pub fn format_thousands(v: f64, decimals: usize) -> String {
    let s = fmt_fixed(v, decimals);
    let (sign, body) = s.strip_prefix('-').map_or(("", s.as_str()), |b| ("-", b));
    let (int, frac) = body.split_once('.').map_or((body, None), |(i, f)| (i, Some(f)));
    let mut grouped = String::with_capacity(int.len() + int.len() / 3);
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    match frac {
        Some(f) => format!("{sign}{grouped}.{f}"),
        None => format!("{sign}{grouped}"),
    }
}

/// `RRR` followed by its stars and the standard error in parentheses.
pub fn format_rrr_cell(rrr: f64, se: f64, p: f64) -> String {
    format!("{}{} ({})", format_ratio(rrr), significance_stars(p), fmt_fixed(se, 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_rule() {
        assert_eq!(format_p(0.001), "#");
        assert_eq!(format_p(1e-30), "#");
        assert_eq!(format_p(0.0), "#");
        assert_eq!(format_p(0.0011), "0.001");
        assert_eq!(format_p(0.099), "0.099");
        assert_eq!(format_p(1.0), "1.000");
        assert_eq!(format_p(f64::NAN), "NA");
    }

    #[test]
    fn star_boundaries() {
        assert_eq!(significance_stars(0.0099), "***");
        assert_eq!(significance_stars(0.01), "**");
        assert_eq!(significance_stars(0.0499), "**");
        assert_eq!(significance_stars(0.05), "*");
        assert_eq!(significance_stars(0.0999), "*");
        assert_eq!(significance_stars(0.1), "");
        assert_eq!(significance_stars(f64::NAN), "");
    }

    #[test]
    fn ratios_and_separators() {
        assert_eq!(format_ratio(1.2374), "1.237");
        assert_eq!(format_ratio(0.00002), "0.00002");
        assert_eq!(format_ratio(0.0000423), "0.00004");
        assert_eq!(format_ratio(0.0000996), "0.0001");
        assert_eq!(format_ratio(0.0), "0.000");
        assert_eq!(format_thousands(75632.549, 2), "75,632.55");
        assert_eq!(format_thousands(-1234567.0, 0), "-1,234,567");
        assert_eq!(format_thousands(999.5, 1), "999.5");
        assert_eq!(format_rrr_cell(1.237, 0.042, 0.001), "1.237*** (0.042)");
        assert_eq!(format_rrr_cell(1.003, 0.036, 0.93), "1.003 (0.036)");
    }
}
