//! Number formatting shared by the CSV writers.

/// Formats `x` with six significant digits, `%g` style: trailing zeros are
/// trimmed and scientific notation is used outside `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // `{:.5e}` rounds to six significant digits and reports the exponent of
    // the rounded value, which is what decides the layout.
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{}", trim_zeros(mantissa), exp);
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
