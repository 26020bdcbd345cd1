//! The `RIGF1` field file: magic line, JSON header line, then raw
//! little-endian f64 values in node order.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{make_domain, FormField, GridDomain, MatrixField};
use crate::error::{Error, Result};
use crate::multiindex::binomial;

pub const MAGIC: &str = "RIGF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Matrix,
    Form,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub n: usize,
    pub res: usize,
    pub radius: f64,
    pub kind: FieldKind,
    pub degree: usize,
}

/// A field read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredField {
    Matrix(MatrixField),
    Form(FormField),
}

fn header_for(d: &GridDomain, kind: FieldKind, degree: usize) -> Header {
    Header {
        n: d.n(),
        res: d.res(),
        radius: d.radius(),
        kind,
        degree,
    }
}

fn write_raw<W: Write>(mut w: W, header: &Header, values: impl Iterator<Item = f64>) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix<W: Write>(w: W, a: &MatrixField) -> Result<()> {
    let header = header_for(a.domain_arc(), FieldKind::Matrix, 1);
    write_raw(w, &header, a.values().iter().copied())
}

pub fn write_form<W: Write>(w: W, f: &FormField) -> Result<()> {
    let header = header_for(f.domain_arc(), FieldKind::Form, f.degree());
    let d = f.domain_arc();
    let comps = f.coeffs().len();
    let values = (0..d.len()).flat_map(move |node| (0..comps).map(move |c| f.coeff(c)[node]));
    write_raw(w, &header, values)
}

pub fn read_field<R: Read>(r: R) -> Result<StoredField> {
    let mut r = std::io::BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    let domain: Arc<GridDomain> = make_domain(header.n, header.res, header.radius)?;
    let per_node = match header.kind {
        FieldKind::Matrix => header.n * header.n,
        FieldKind::Form => {
            if header.degree > header.n {
                return Err(Error::Format(format!("degree {} exceeds n", header.degree)));
            }
            binomial(header.n, header.degree)
        }
    };
    let count = domain.len() * per_node;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} value bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
        .collect();
    match header.kind {
        FieldKind::Matrix => Ok(StoredField::Matrix(MatrixField::from_values(&domain, values)?)),
        FieldKind::Form => {
            let coeffs = (0..per_node)
                .map(|c| values.iter().skip(c).step_by(per_node.max(1)).copied().collect())
                .collect();
            Ok(StoredField::Form(FormField::from_coeffs(&domain, header.degree, coeffs)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_and_form_round_trip() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::from_fn(&d, |p, e| {
            for (k, v) in e.iter_mut().enumerate() {
                *v = p[k % 3] + k as f64;
            }
        })
        .unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        assert!(buf.starts_with(b"RIGF1\n{"));
        assert_eq!(read_field(&buf[..]).unwrap(), StoredField::Matrix(a));

        let f = FormField::from_fn(&d, 2, |p, c| p[c] * 0.5 - c as f64).unwrap();
        let mut buf = Vec::new();
        write_form(&mut buf, &f).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap(), StoredField::Form(f));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let d = make_domain(2, 3, 1.0).unwrap();
        let f = FormField::zeros(&d, 1).unwrap();
        let mut buf = Vec::new();
        write_form(&mut buf, &f).unwrap();
        buf.pop();
        assert!(matches!(read_field(&buf[..]), Err(Error::Format(_))));
        assert!(read_field(&b"RIGF2\n{}\n"[..]).is_err());
    }
}
