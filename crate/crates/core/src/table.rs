//! Fixed-header CSV tables with C-style `%.12e` numbers.

use std::fmt::Write as _;

/// Formats like C's `%.12e`: at least two exponent digits and an explicit sign.
pub fn sci(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.header.join(",")).unwrap();
        for row in &self.rows {
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_formatting() {
        assert_eq!(sci(0.0), "0.000000000000e+00");
        assert_eq!(sci(1.5e-5), "1.500000000000e-05");
        assert_eq!(sci(-123456.0), "-1.234560000000e+05");
        assert_eq!(sci(2.0e123), "2.000000000000e+123");
        assert_eq!(sci(f64::NAN), "nan");
    }

    #[test]
    fn csv_has_header_then_rows() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![sci(1.0), "x".into()]);
        assert_eq!(t.to_csv(), "a,b\n1.000000000000e+00,x\n");
    }
}
