//! Exact decimal amounts, ISO-4217 currencies and payout arithmetic.
//!
//! Amounts never pass through binary floating point once parsed: a JSON
//! number is read back through its shortest round-trip text form and kept as
//! an integer mantissa with a decimal scale. Money is settled in integer
//! minor units of the currency.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MAX_SCALE: u32 = 12;

/// Exact base-10 number: `mantissa * 10^-scale`.
#[derive(Debug, Clone, Copy)]
pub struct Decimal {
    mantissa: i64,
    scale: u32,
}

impl Decimal {
    pub const ZERO: Decimal = Decimal { mantissa: 0, scale: 0 };

    pub const fn new(mantissa: i64, scale: u32) -> Self {
        Self { mantissa, scale }
    }

    pub fn from_int(n: i64) -> Self {
        Self::new(n, 0)
    }

    pub fn mantissa(&self) -> i64 {
        self.mantissa
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa < 0
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0
    }

    /// Drops trailing fractional zeros.
    pub fn normalized(self) -> Self {
        let (mut m, mut s) = (self.mantissa, self.scale);
        while s > 0 && m % 10 == 0 {
            m /= 10;
            s -= 1;
        }
        Self::new(m, s)
    }

    fn widened(&self, scale: u32) -> i128 {
        self.mantissa as i128 * 10i128.pow(scale - self.scale)
    }

    /// Converts to integer minor units; fails if precision would be lost.
    pub fn to_minor(self, exponent: u32) -> Result<i64> {
        let n = self.normalized();
        if n.scale > exponent {
            return Err(Error::validation(format!(
                "{self} has more than {exponent} decimal places"
            )));
        }
        i64::try_from(n.widened(exponent)).map_err(|_| Error::validation(format!("{self} is out of range")))
    }

    pub fn from_minor(minor: i64, exponent: u32) -> Self {
        Self::new(minor, exponent)
    }

    pub fn to_f64(self) -> f64 {
        // Parsing the canonical text is correctly rounded, unlike m / 10^s.
        self.to_string().parse().unwrap_or(f64::NAN)
    }

    /// Rounds half away from zero to `scale` places.
    pub fn round_to(self, scale: u32) -> Self {
        if self.scale <= scale {
            return self;
        }
        let div = 10i64.pow(self.scale - scale);
        let q = self.mantissa / div;
        let r = (self.mantissa % div).abs();
        let q = if r * 2 >= div { q + self.mantissa.signum() } else { q };
        Self::new(q, scale)
    }

    /// `self / divisor`, rounded half away from zero to `scale` places.
    pub fn div_round(self, divisor: i64, scale: u32) -> Self {
        assert!(divisor != 0, "division by zero");
        let num = self.mantissa as i128 * 10i128.pow(scale);
        let den = divisor as i128 * 10i128.pow(self.scale);
        let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
        let q = (2 * num.abs() + den) / (2 * den);
        let q = if num < 0 { -q } else { q };
        Self::new(q as i64, scale)
    }

    pub fn from_f64(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::validation("number is not finite"));
        }
        // f64's Display is the shortest string that round-trips.
        format!("{v}").parse()
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
        let s = self.scale.max(other.scale);
        self.widened(s).cmp(&other.widened(s))
    }
}

impl FromStr for Decimal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("'{s}' is not a decimal number"));
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let frac = if frac.len() > MAX_SCALE as usize { frac.trim_end_matches('0') } else { frac };
        let scale = frac.len() as u32;
        if scale > MAX_SCALE {
            return Err(Error::validation(format!("'{s}' has more than {MAX_SCALE} decimal places")));
        }
        let joined = format!("{int}{frac}");
        let joined = if joined.is_empty() { "0" } else { &joined };
        let m: i64 = joined.parse().map_err(|_| bad())?;
        Ok(Self::new(if neg { -m } else { m }, scale))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let div = 10u64.pow(self.scale);
        let abs = self.mantissa.unsigned_abs();
        let sign = if self.mantissa < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:0width$}", abs / div, abs % div, width = self.scale as usize)
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Decimal::from_int(n)),
            Raw::Float(v) => Decimal::from_f64(v),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(|e| serde::de::Error::custom(e.message))
    }
}

/// ISO-4217 alphabetic currency code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Currency(String);

const ZERO_DECIMAL: &[&str] = &[
    "BIF", "CLP", "DJF", "GNF", "ISK", "JPY", "KMF", "KRW", "PYG", "RWF", "UGX", "VND", "VUV", "XAF", "XOF", "XPF",
];
const THREE_DECIMAL: &[&str] = &["BHD", "IQD", "JOD", "KWD", "LYD", "OMR", "TND"];

impl Currency {
    pub fn new(code: &str) -> Result<Self> {
        if code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase()) {
            Ok(Self(code.to_owned()))
        } else {
            Err(Error::field("currency", format!("'{code}' is not an ISO-4217 code")))
        }
    }

    pub fn usd() -> Self {
        Self("USD".into())
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    /// Number of minor-unit digits.
    pub fn exponent(&self) -> u32 {
        if ZERO_DECIMAL.contains(&self.0.as_str()) {
            0
        } else if THREE_DECIMAL.contains(&self.0.as_str()) {
            3
        } else {
            2
        }
    }

    /// Renders an amount in minor units with exactly `exponent` fraction digits.
    pub fn format_minor(&self, minor: i64) -> String {
        Decimal::from_minor(minor, self.exponent()).to_string()
    }
}

impl TryFrom<String> for Currency {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Currency::new(&s)
    }
}

impl From<Currency> for String {
    fn from(c: Currency) -> String {
        c.0
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Share of the agreed amount left for the courier after the requester's
/// commission, in minor units, rounded half up.
///
/// `fee_percentage` must lie in `[0, 100]`.
pub fn payout_minor(agreed_minor: i64, fee_percentage: Decimal) -> Result<i64> {
    if fee_percentage.is_negative() || fee_percentage > Decimal::from_int(100) {
        return Err(Error::field("feePercentage", "must lie in [0, 100]"));
    }
    if agreed_minor < 0 {
        return Err(Error::validation("agreed amount must be non-negative"));
    }
    let fee = fee_percentage.normalized();
    let denom = 100i128 * 10i128.pow(fee.scale);
    let keep = denom - fee.mantissa as i128;
    let num = agreed_minor as i128 * keep;
    let rounded = (2 * num + denom) / (2 * denom);
    i64::try_from(rounded).map_err(|_| Error::internal("payout overflow"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(d("14.00").to_string(), "14.00");
        assert_eq!(d("14.00"), d("14"));
        assert_eq!(d("-0.5").to_string(), "-0.5");
        assert_eq!(d(".25"), Decimal::new(25, 2));
        assert!("1.2.3".parse::<Decimal>().is_err());
        assert!("abc".parse::<Decimal>().is_err());
        assert!("".parse::<Decimal>().is_err());
    }

    #[test]
    fn json_numbers_are_exact() {
        let v: Decimal = serde_json::from_str("12.6").unwrap();
        assert_eq!(v.to_minor(2).unwrap(), 1260);
        let v: Decimal = serde_json::from_str("0.1").unwrap();
        assert_eq!(v, Decimal::new(1, 1));
        let v: Decimal = serde_json::from_str("\"3.10\"").unwrap();
        assert_eq!(v.to_minor(2).unwrap(), 310);
        assert_eq!(serde_json::to_string(&Decimal::from_minor(1260, 2)).unwrap(), "12.6");
    }

    #[test]
    fn minor_units_reject_excess_precision() {
        assert_eq!(d("1.005").to_minor(3).unwrap(), 1005);
        assert!(d("1.005").to_minor(2).is_err());
        assert_eq!(d("7").to_minor(0).unwrap(), 7);
    }

    #[test]
    fn fourteen_at_ten_percent() {
        assert_eq!(payout_minor(1400, d("10")).unwrap(), 1260);
        assert_eq!(Currency::usd().format_minor(1260), "12.60");
    }

    #[test]
    fn fee_bounds() {
        assert_eq!(payout_minor(1000, d("0")).unwrap(), 1000);
        assert_eq!(payout_minor(1000, d("100")).unwrap(), 0);
        assert!(payout_minor(1000, d("100.01")).is_err());
        assert!(payout_minor(1000, d("-1")).is_err());
        // 0.5 minor unit rounds up
        assert_eq!(payout_minor(1, d("50")).unwrap(), 1);
    }

    #[test]
    fn currency_exponents() {
        assert_eq!(Currency::new("JPY").unwrap().exponent(), 0);
        assert_eq!(Currency::new("KWD").unwrap().exponent(), 3);
        assert_eq!(Currency::new("EUR").unwrap().exponent(), 2);
        assert!(Currency::new("usd").is_err());
        assert_eq!(d("2.5").round_to(0), d("3"));
        assert_eq!(d("-2.5").round_to(0), d("-3"));
        assert_eq!(d("2.449").round_to(2), d("2.45"));
    }
}
