//! Exact decimal arithmetic for oracle aggregates.
//!
//! Generated data are integers, but CSV cells are parsed as general decimals
//! so hand-written fixtures behave too. Everything is scaled `i128`; no
//! floating point is involved until rendering.

use std::cmp::Ordering;
use std::fmt;

/// Fractional digits kept when rendering a non-terminating mean.
pub const AVG_FRACTION_DIGITS: u32 = 12;

#[derive(Debug, Clone, Copy)]
pub struct Decimal {
    mantissa: i128,
    scale: u32,
}

impl Decimal {
    pub const ZERO: Decimal = Decimal { mantissa: 0, scale: 0 };

    pub fn from_int(v: i64) -> Decimal {
        Decimal { mantissa: v.into(), scale: 0 }
    }

    /// Parse `[+-]digits[.digits]`. Exponents, blanks and signs without
    /// digits are rejected.
    pub fn parse(s: &str) -> Option<Decimal> {
        let s = s.trim();
        let (neg, body) = match s.as_bytes().first()? {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        if frac.len() > 18 || int.len() > 19 {
            return None;
        }
        let mut m: i128 = 0;
        for b in int.bytes().chain(frac.bytes()) {
            m = m * 10 + i128::from(b - b'0');
        }
        Some(Decimal { mantissa: if neg { -m } else { m }, scale: frac.len() as u32 })
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    fn rescale(&self, scale: u32) -> i128 {
        debug_assert!(scale >= self.scale);
        self.mantissa * 10i128.pow(scale - self.scale)
    }

    pub fn checked_add(self, other: Decimal) -> Option<Decimal> {
        let scale = self.scale.max(other.scale);
        let m = self.rescale(scale).checked_add(other.rescale(scale))?;
        Some(Decimal { mantissa: m, scale })
    }

    /// (numerator, denominator) of this value divided by `count`.
    pub fn ratio_over(self, count: u64) -> (i128, i128) {
        (self.mantissa, 10i128.pow(self.scale) * i128::from(count))
    }

    /// Render with at least one fractional digit: `718313` → `718313.0`.
    pub fn render_min_one_decimal(&self) -> String {
        render_ratio(self.mantissa, 10i128.pow(self.scale), self.scale.max(1))
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        self.rescale(scale).cmp(&other.rescale(scale))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_ratio(self.mantissa, 10i128.pow(self.scale), self.scale))
    }
}

/// Render `num/den` rounded half away from zero to `max_frac` fractional
/// digits, trailing zeros trimmed, keeping at least one fractional digit
/// when `max_frac > 0`.
pub fn render_ratio(num: i128, den: i128, max_frac: u32) -> String {
    assert!(den > 0, "denominator must be positive");
    let neg = num < 0;
    let n = num.unsigned_abs();
    let d = den as u128;
    let pow = 10u128.pow(max_frac);
    // Scaled quotient, rounded half away from zero.
    let scaled_num = n * pow;
    let mut q = scaled_num / d;
    let r = scaled_num % d;
    if r * 2 >= d {
        q += 1;
    }
    let int = q / pow;
    let mut frac = format!("{:0width$}", q % pow, width = max_frac as usize);
    while frac.len() > 1 && frac.ends_with('0') {
        frac.pop();
    }
    let sign = if neg && q != 0 { "-" } else { "" };
    if max_frac == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

/// Mean of `sum` over `count` items, rendered per [`AVG_FRACTION_DIGITS`].
pub fn render_mean(sum: Decimal, count: u64) -> String {
    let (n, d) = sum.ratio_over(count);
    render_ratio(n, d, AVG_FRACTION_DIGITS)
}
