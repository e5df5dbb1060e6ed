/// 17 significant digits in scientific notation; parses back to the same
/// `f64` bit pattern.
pub fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
