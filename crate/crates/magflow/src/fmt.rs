//! Deterministic text formatting for CSV and report output.
//!
//! All floating-point values are written with 17 significant digits so that
//! files round-trip exactly and repeated runs produce byte-identical output.

use std::io::Write;

/// Full-precision scientific representation (round-trips any finite f64).
pub fn f64_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV row from float columns.
pub fn csv_row(vals: &[f64]) -> String {
    let cols: Vec<String> = vals.iter().map(|&v| f64_full(v)).collect();
    cols.join(",")
}

/// Writes a CSV table: header, then one row per record.
pub fn write_csv<W: Write>(
    out: &mut W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", csv_row(&row))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_precision_round_trips() {
        for &x in &[
            std::f64::consts::PI,
            1.0 / 3.0,
            -2.718281828459045e-10,
            6.02214076e23,
        ] {
            let s = f64_full(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &["t", "x"], vec![vec![0.0, 1.0], vec![0.5, 2.0]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x");
        assert!(lines.next().unwrap().starts_with("0.0000000000000000e0,"));
    }
}
