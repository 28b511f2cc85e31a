//! CSV tables. Every numeric column name carries its unit; empty cells mark
//! missing values. Numbers are written in shortest round-trip form.

use super::IoError;
use crate::compensation::{ResponseMatrix, SuppressionReport};
use crate::constants::MICRO;
use crate::crystal::{SpacingReport, SpacingStats};
use crate::fields::{
    rf_pseudopotential, FieldError, MinimumRing, SecularModes, StaticField, VoltageSet,
};
use crate::geometry::TrapModel;
use crate::metrology::{FieldEstimate, SiteMeasurement};
use nalgebra::DMatrix;

const MHZ: f64 = crate::constants::TWO_PI * 1e6;

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn to_csv<S: AsRef<str>>(header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header.iter().map(|h| h.as_ref()))
        .expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Parsed CSV body with positional access and error pointers.
pub struct Table {
    origin: String,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    /// Parses `text`, requiring the header to start with `expected`.
    pub fn parse(text: &str, origin: &str, expected: &[&str]) -> Result<Self, IoError> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| IoError::format(origin, e))?
            .iter()
            .map(str::to_string)
            .collect();
        for (i, want) in expected.iter().enumerate() {
            if header.get(i).map(String::as_str) != Some(*want) {
                return Err(IoError::format(
                    format!("{origin} line 1"),
                    format!(
                        "column {} must be '{want}', found '{}'",
                        i + 1,
                        header.get(i).map_or("", |s| s)
                    ),
                ));
            }
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| IoError::format(origin, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            origin: origin.to_string(),
            header,
            rows,
        })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn err(&self, row: usize, col: usize, msg: impl std::fmt::Display) -> IoError {
        IoError::format(
            format!(
                "{} line {}, column '{}'",
                self.origin, self.rows[row].0, self.header[col]
            ),
            msg,
        )
    }

    pub fn text(&self, row: usize, col: usize) -> &str {
        &self.rows[row].1[col]
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64, IoError> {
        let s = self.text(row, col);
        s.parse::<f64>()
            .map_err(|_| self.err(row, col, format!("'{s}' is not a number")))
    }

    pub fn optional(&self, row: usize, col: usize) -> Result<Option<f64>, IoError> {
        if self.text(row, col).is_empty() {
            Ok(None)
        } else {
            self.number(row, col).map(Some)
        }
    }

    pub fn integer(&self, row: usize, col: usize) -> Result<usize, IoError> {
        let s = self.text(row, col);
        s.parse::<usize>()
            .map_err(|_| self.err(row, col, format!("'{s}' is not a non-negative integer")))
    }
}

pub const RING_HEADER: [&str; 5] = ["azimuth_deg", "r_um", "z_um", "pseudo_eV", "grad_V_per_m"];

pub fn ring_csv(ring: &MinimumRing) -> String {
    to_csv(
        &RING_HEADER,
        ring.points.iter().map(|p| {
            vec![
                num(p.azimuth.to_degrees()),
                num(p.radius / MICRO),
                num(p.height / MICRO),
                num(p.pseudopotential),
                num(p.gradient_norm),
            ]
        }),
    )
}

pub const FIELD_MAP_HEADER: [&str; 8] = [
    "x_um",
    "y_um",
    "z_um",
    "phi_V",
    "Ex_V_per_m",
    "Ey_V_per_m",
    "Ez_V_per_m",
    "pseudo_eV",
];

/// Control potential, control field and rf pseudopotential on a point list.
pub fn field_map_csv(
    model: &TrapModel<f64>,
    volts: &VoltageSet,
    points: &[[f64; 3]],
) -> Result<String, FieldError> {
    let field = StaticField::new(model, volts)?;
    let mut rows = Vec::with_capacity(points.len());
    for &p in points {
        crate::fields::check_point(p)?;
        let s = field.sample(p);
        let psi = rf_pseudopotential(model, p)?;
        let mut row: Vec<String> = p.iter().map(|v| num(v / MICRO)).collect();
        row.push(num(s.potential));
        row.extend(s.e_field.iter().map(|&v| num(v)));
        row.push(num(psi));
        rows.push(row);
    }
    Ok(to_csv(&FIELD_MAP_HEADER, rows))
}

pub const MODES_HEADER: [&str; 8] = [
    "site",
    "x_um",
    "y_um",
    "z_um",
    "f_T_MHz",
    "f_R_MHz",
    "f_Z_MHz",
    "rotation_deg",
];

pub fn modes_csv(modes: &[SecularModes]) -> String {
    to_csv(
        &MODES_HEADER,
        modes.iter().map(|m| {
            let mut row = vec![m.site.clone()];
            row.extend(m.position.iter().map(|v| num(v / MICRO)));
            row.extend([m.omega_t, m.omega_r, m.omega_z].map(|w| num(w / MHZ)));
            row.push(num(m.rotation_angle.to_degrees()));
            row
        }),
    )
}

pub const ESTIMATES_HEADER: [&str; 5] = [
    "site",
    "E_T_V_per_m",
    "sigma_V_per_m",
    "residual_um",
    "error",
];

/// One row per site; failed sites have empty numbers and the error text.
pub fn estimates_csv(measurements: &[SiteMeasurement]) -> String {
    to_csv(
        &ESTIMATES_HEADER,
        measurements.iter().map(|m| match &m.result {
            Ok((_, e)) => vec![
                m.site.clone(),
                num(e.e_t),
                num(e.sigma),
                num(e.residual / MICRO),
                String::new(),
            ],
            Err(err) => vec![
                m.site.clone(),
                String::new(),
                String::new(),
                String::new(),
                err.to_string(),
            ],
        }),
    )
}

/// Reads [`estimates_csv`] output; rows without a field value are `None`.
pub fn read_estimates(
    text: &str,
    origin: &str,
) -> Result<Vec<(String, Option<FieldEstimate>)>, IoError> {
    let t = Table::parse(text, origin, &ESTIMATES_HEADER[..3])?;
    let has_residual = t.header().get(3).map(String::as_str) == Some(ESTIMATES_HEADER[3]);
    (0..t.len())
        .map(|i| {
            let site = t.text(i, 0).to_string();
            let e = match t.optional(i, 1)? {
                None => None,
                Some(e_t) => Some(FieldEstimate {
                    e_t,
                    sigma: t.optional(i, 2)?.unwrap_or(0.0),
                    residual: if has_residual {
                        t.optional(i, 3)?.unwrap_or(0.0) * MICRO
                    } else {
                        0.0
                    },
                }),
            };
            Ok((site, e))
        })
        .collect()
}

pub const VOLTAGES_HEADER: [&str; 2] = ["electrode", "volts_V"];

/// Voltages of `ids` relative to the set's reference.
pub fn voltages_csv(ids: &[String], volts: &VoltageSet) -> String {
    to_csv(
        &VOLTAGES_HEADER,
        ids.iter()
            .map(|id| vec![id.clone(), num(volts.get(id) - volts.reference())]),
    )
}

pub fn read_voltages(text: &str, origin: &str) -> Result<VoltageSet, IoError> {
    let t = Table::parse(text, origin, &VOLTAGES_HEADER)?;
    let mut v = VoltageSet::new();
    for i in 0..t.len() {
        v.set(t.text(i, 0), t.number(i, 1)?);
    }
    Ok(v)
}

const RESPONSE_UNIT: &str = "_V_per_m_per_V";

/// Tangential response, one row per site, one column per electrode.
pub fn response_csv(r: &ResponseMatrix) -> String {
    let mut header = vec!["site".to_string()];
    header.extend(r.electrodes.iter().map(|e| format!("{e}{RESPONSE_UNIT}")));
    to_csv(
        &header,
        r.sites.iter().enumerate().map(|(i, s)| {
            let mut row = vec![s.clone()];
            row.extend(r.matrix.row(i).iter().map(|&v| num(v)));
            row
        }),
    )
}

/// Reads [`response_csv`] output. Only the tangential block is stored, so
/// the radial and vertical blocks come back as zeros.
pub fn read_response(text: &str, origin: &str) -> Result<ResponseMatrix, IoError> {
    let t = Table::parse(text, origin, &["site"])?;
    let mut electrodes = Vec::new();
    for h in &t.header()[1..] {
        let id = h.strip_suffix(RESPONSE_UNIT).ok_or_else(|| {
            IoError::format(
                format!("{origin} line 1"),
                format!("column '{h}' must end in '{RESPONSE_UNIT}'"),
            )
        })?;
        electrodes.push(id.to_string());
    }
    let (n, m) = (t.len(), electrodes.len());
    let mut matrix = DMatrix::zeros(n, m);
    let mut sites = Vec::with_capacity(n);
    for i in 0..n {
        sites.push(t.text(i, 0).to_string());
        for j in 0..m {
            matrix[(i, j)] = t.number(i, j + 1)?;
        }
    }
    Ok(ResponseMatrix {
        sites,
        electrodes,
        matrix,
        radial: DMatrix::zeros(n, m),
        vertical: DMatrix::zeros(n, m),
    })
}

pub const RESIDUAL_HEADER: [&str; 3] = ["site", "E_residual_V_per_m", "measured"];

pub fn residual_csv(rows: &[(String, f64, bool)]) -> String {
    to_csv(
        &RESIDUAL_HEADER,
        rows.iter()
            .map(|(s, e, m)| vec![s.clone(), num(*e), m.to_string()]),
    )
}

pub const SUPPRESSION_HEADER: [&str; 5] = [
    "site",
    "E_before_V_per_m",
    "sigma_before_V_per_m",
    "E_after_V_per_m",
    "sigma_after_V_per_m",
];
pub const SUPPRESSION_SUMMARY_HEADER: [&str; 3] =
    ["rms_before_V_per_m", "rms_after_V_per_m", "ratio"];

/// Per-site rows; empty cells mark absent measurements.
pub fn suppression_csv(r: &SuppressionReport) -> String {
    to_csv(
        &SUPPRESSION_HEADER,
        r.rows.iter().map(|row| {
            vec![
                row.site.clone(),
                opt(row.e_before),
                opt(row.sigma_before),
                opt(row.e_after),
                opt(row.sigma_after),
            ]
        }),
    )
}

pub fn suppression_summary_csv(r: &SuppressionReport) -> String {
    to_csv(
        &SUPPRESSION_SUMMARY_HEADER,
        [vec![num(r.rms_before), num(r.rms_after), num(r.ratio)]],
    )
}

pub const POSITIONS_HEADER: [&str; 5] = ["index", "azimuth_deg", "x_um", "y_um", "z_um"];

pub fn positions_csv(positions: &[[f64; 3]]) -> String {
    to_csv(
        &POSITIONS_HEADER,
        positions.iter().enumerate().map(|(i, p)| {
            let az = p[1].atan2(p[0]).rem_euclid(crate::constants::TWO_PI);
            let mut row = vec![i.to_string(), num(az.to_degrees())];
            row.extend(p.iter().map(|v| num(v / MICRO)));
            row
        }),
    )
}

/// Positions in m, in file order. The azimuth column is ignored.
pub fn read_positions(text: &str, origin: &str) -> Result<Vec<[f64; 3]>, IoError> {
    let t = Table::parse(text, origin, &POSITIONS_HEADER)?;
    let mut out = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        if t.integer(i, 0)? != i {
            return Err(t.err(i, 0, format!("expected index {i}")));
        }
        out.push([
            t.number(i, 2)? * MICRO,
            t.number(i, 3)? * MICRO,
            t.number(i, 4)? * MICRO,
        ]);
    }
    Ok(out)
}

pub const SPACING_HEADER: [&str; 6] =
    ["from", "to", "start_deg", "end_deg", "spacing_um", "octant"];
pub const SPACING_SUMMARY_HEADER: [&str; 7] = [
    "scope", "count", "mean_um", "std_um", "rel_std", "min_um", "max_um",
];

pub fn spacing_csv(r: &SpacingReport) -> String {
    to_csv(
        &SPACING_HEADER,
        r.spacings.iter().map(|s| {
            vec![
                s.from.to_string(),
                s.to.to_string(),
                num(s.start.to_degrees()),
                num(s.end.to_degrees()),
                num(s.spacing / MICRO),
                s.octant.to_string(),
            ]
        }),
    )
}

/// Whole ring, each octant, then any extra named scopes.
pub fn spacing_summary_csv(r: &SpacingReport, extra: &[(String, SpacingStats)]) -> String {
    let row = |scope: String, s: &SpacingStats| {
        vec![
            scope,
            s.count.to_string(),
            num(s.mean / MICRO),
            num(s.std / MICRO),
            num(s.relative_std()),
            num(s.min / MICRO),
            num(s.max / MICRO),
        ]
    };
    let mut rows = vec![row("all".into(), &r.stats)];
    rows.extend(
        r.octants
            .iter()
            .enumerate()
            .map(|(i, s)| row(format!("octant{}", i + 1), s)),
    );
    rows.extend(extra.iter().map(|(n, s)| row(n.clone(), s)));
    to_csv(&SPACING_SUMMARY_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_round_trip() {
        let p = vec![
            [625.123456789e-6, -1.5e-6, 93.0e-6],
            [1e-9, 625e-6, 9.999999e-5],
        ];
        let text = positions_csv(&p);
        let back = read_positions(&text, "p.csv").unwrap();
        for (a, b) in p.iter().zip(&back) {
            for k in 0..3 {
                assert!(
                    (a[k] - b[k]).abs() <= 2.0 * f64::EPSILON * a[k].abs(),
                    "{} {}",
                    a[k],
                    b[k]
                );
            }
        }
        assert_eq!(positions_csv(&back), text);
    }

    #[test]
    fn voltages_and_estimates_round_trip() {
        let v = VoltageSet::from_pairs([("e01", 0.1 + 0.2), ("e02", -3.0e-12)]);
        let ids = vec!["e01".to_string(), "e02".to_string()];
        let back = read_voltages(&voltages_csv(&ids, &v), "v.csv").unwrap();
        assert_eq!(back.get("e01"), 0.1 + 0.2);
        assert_eq!(back.get("e02"), -3.0e-12);

        let text = "site,E_T_V_per_m,sigma_V_per_m\ng00,12.5,0.25\ng01,,\n";
        let e = read_estimates(text, "m.csv").unwrap();
        assert_eq!(e[0].1.unwrap().e_t, 12.5);
        assert!(e[1].1.is_none());
    }

    #[test]
    fn errors_point_at_line_and_column() {
        let err = read_voltages("electrode,volts_V\ne01,1\ne02,abc\n", "v.csv").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("line 3") && msg.contains("volts_V") && msg.contains("abc"),
            "{msg}"
        );
        let err = read_voltages("electrode,volts\n", "v.csv").unwrap_err();
        assert!(err.to_string().contains("volts_V"));
    }
}
