//! Compact significant-digit float formatting for report CSVs.

/// Formats `x` with six significant digits, trimming trailing zeros.
///
/// Values whose decimal exponent falls in [-4, 6) print in plain
/// decimal notation, everything else in scientific notation, matching
/// the usual `%g` behavior. The output always parses back as `f64`.
pub fn sig6(x: f64) -> String {
    sig(x, 6)
}

pub(crate) fn sig(x: f64, digits: usize) -> String {
    debug_assert!(digits >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific layout");
    let exp: i32 = exp.parse().expect("decimal exponent");
    if exp >= -4 && exp < digits as i32 {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
