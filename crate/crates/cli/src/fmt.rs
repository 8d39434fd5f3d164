//! Deterministic number formatting: nine significant digits, plain decimal
//! notation for moderate magnitudes, scientific otherwise.

pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let dec = (8 - mag).max(0) as usize;
        format!("{x:.dec$}")
    } else {
        format!("{x:.8e}")
    }
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(2.857142857142857), "2.85714286");
        assert_eq!(sig9(0.8), "0.800000000");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-12345.6789), "-12345.6789");
        assert_eq!(sig9(1.23e-7), "1.23000000e-7");
    }
}
