use super::{HarnessError, HarnessResult};

/// Two-sided 95% normal quantile.
pub const WILSON_Z95: f64 = 1.95996;

/// Wilson score interval for `k` successes in `n` trials, clamped to `[0, 1]`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> HarnessResult<(f64, f64)> {
    if n == 0 {
        return Err(HarnessError::Config("wilson interval needs n >= 1".into()));
    }
    if k > n {
        return Err(HarnessError::Config(format!("{k} successes out of {n} trials")));
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_closed_form_values() {
        // Reference values evaluated independently in double precision.
        let (lo, hi) = wilson_interval(342, 360, WILSON_Z95).unwrap();
        assert!((lo - 0.922_356_128_3).abs() < 1e-9 && (hi - 0.968_141_658_7).abs() < 1e-9, "{lo} {hi}");
        let (lo, hi) = wilson_interval(50, 60, WILSON_Z95).unwrap();
        assert!((lo - 0.719_684_132_0).abs() < 1e-9 && (hi - 0.906_868_119_8).abs() < 1e-9, "{lo} {hi}");
    }

    #[test]
    fn boundaries() {
        assert_eq!(wilson_interval(7, 7, WILSON_Z95).unwrap().1, 1.0);
        assert_eq!(wilson_interval(0, 7, WILSON_Z95).unwrap().0, 0.0);
        assert!(wilson_interval(0, 0, WILSON_Z95).is_err());
        assert!(wilson_interval(3, 2, WILSON_Z95).is_err());
    }

    #[test]
    fn textbook_value() {
        // 8 of 10 at z = 1.96: (0.4902, 0.9433).
        let (lo, hi) = wilson_interval(8, 10, 1.96).unwrap();
        assert!((lo - 0.4902).abs() < 1e-4 && (hi - 0.9433).abs() < 1e-4);
    }
}
