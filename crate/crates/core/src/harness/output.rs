use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{SweepConfig, SweepRow, FAILURE_FLAG_RATIO};
use crate::error::{Error, Result};
use crate::problem::PartitionSpec;
use crate::theory::ExtendedReal;

pub const CSV_HEADER: [&str; 14] = [
    "n",
    "p",
    "K",
    "sizes",
    "lambda",
    "N",
    "T",
    "seed",
    "empirical_first_iter",
    "theory_first_iter",
    "gen_error",
    "train_error",
    "failures",
    "wall_time_ms",
];

/// A sweep's configuration, its truth vector and one row per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub x_true: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

fn float(v: Option<f64>) -> String {
    match v {
        Some(v) if v == f64::INFINITY => "inf".to_string(),
        Some(v) => format!("{v:e}"),
        None => String::new(),
    }
}

/// Writes rows with the fixed header; missing metrics are left empty.
pub fn write_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CSV_HEADER)?;
    for row in rows {
        out.write_record([
            row.n.to_string(),
            row.p.to_string(),
            row.k.to_string(),
            row.sizes.label(),
            row.lambda.to_string(),
            row.trials.to_string(),
            row.iterations.to_string(),
            row.seed.to_string(),
            float(row.empirical_first_iter),
            row.theory_first_iter.map(|t| match t {
                ExtendedReal::Finite(v) => format!("{v:e}"),
                ExtendedReal::Infinite => "inf".to_string(),
            })
            .unwrap_or_default(),
            float(row.gen_error),
            float(row.train_error),
            row.failures.to_string(),
            float(row.wall_time_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    if field == "inf" {
        return Ok(Some(f64::INFINITY));
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad number {field:?}")))
}

fn parse<T: std::str::FromStr>(field: &str, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("bad {name} value {field:?}")))
}

/// Reads a results file back; standard errors and population values are not stored in CSV.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in input.records() {
        let r = record?;
        let trials: usize = parse(&r[5], "N")?;
        let failures: usize = parse(&r[12], "failures")?;
        let theory = if r[9].is_empty() {
            None
        } else {
            Some(ExtendedReal::parse(&r[9])?)
        };
        rows.push(SweepRow {
            n: parse(&r[0], "n")?,
            p: parse(&r[1], "p")?,
            k: parse(&r[2], "K")?,
            sizes: PartitionSpec::parse_label(&r[3])?,
            lambda: parse(&r[4], "lambda")?,
            trials,
            iterations: parse(&r[6], "T")?,
            seed: parse(&r[7], "seed")?,
            empirical_first_iter: parse_opt(&r[8])?,
            first_iter_std_error: None,
            theory_first_iter: theory,
            gen_error: parse_opt(&r[10])?,
            gen_error_std_error: None,
            population_gen_error: None,
            train_error: parse_opt(&r[11])?,
            failures,
            flagged: failures as f64 > FAILURE_FLAG_RATIO * trials as f64,
            wall_time_ms: parse_opt(&r[13])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(theory: Option<ExtendedReal>) -> SweepRow {
        SweepRow {
            n: 50,
            p: 150,
            k: 2,
            sizes: PartitionSpec::new(vec![50, 100]).unwrap(),
            lambda: 0.0,
            trials: 100,
            iterations: 200,
            seed: 7,
            empirical_first_iter: Some(1.25e5),
            first_iter_std_error: None,
            theory_first_iter: theory,
            gen_error: Some(3.5e4),
            gen_error_std_error: None,
            population_gen_error: None,
            train_error: Some(1.5e-25),
            failures: 0,
            flagged: false,
            wall_time_ms: None,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[row(Some(ExtendedReal::Infinite))], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,p,K,sizes,lambda,N,T,seed,empirical_first_iter,theory_first_iter,gen_error,train_error,failures,wall_time_ms"
        );
        assert_eq!(lines.next().unwrap(), "50,150,2,50|100,0,100,200,7,1.25e5,inf,3.5e4,1.5e-25,0,");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(Some(ExtendedReal::Infinite)), row(Some(ExtendedReal::Finite(153.125))), row(None)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn csv_rejects_foreign_header() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
