//! CSV ingestion and emission for `country,period,value,quantity,fx_rate,stri`.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{Panel, PanelObservation};
use crate::error::{Error, Result};

/// Header names for each field; `quantity` and `stri` may be absent from the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub country: String,
    pub period: String,
    pub value: String,
    pub quantity: String,
    pub fx_rate: String,
    pub stri: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            country: "country".into(),
            period: "period".into(),
            value: "value".into(),
            quantity: "quantity".into(),
            fx_rate: "fx_rate".into(),
            stri: "stri".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema: ColumnSchema,
    /// Reject (rather than drop) rows whose value or exchange rate is not
    /// strictly positive.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub panel: Panel,
    pub dropped: Vec<DroppedRow>,
    /// Rows whose STRI was zero or negative and therefore treated as missing.
    pub stri_missing: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PeriodFormat {
    Integer,
    YearMonth,
}

fn parse_period(raw: &str) -> Option<(i64, PeriodFormat)> {
    if let Ok(p) = raw.parse::<i64>() {
        return Some((p, PeriodFormat::Integer));
    }
    let (y, m) = raw.split_once('-')?;
    let (y, m) = (y.parse::<i64>().ok()?, m.parse::<i64>().ok()?);
    (1..=12)
        .contains(&m)
        .then_some((y * 12 + m - 1, PeriodFormat::YearMonth))
}

fn parse_number(raw: &str, field: &str, line: u64) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("{field} `{raw}` is not a finite number"),
        })
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan")
}

/// Read a panel from CSV text with a header row.
///
/// Periods may be integers or `YYYY-MM` labels (mapped to month ordinals);
/// a file must use one style throughout.
pub fn load_panel<R: Read>(source: R, options: &LoadOptions) -> Result<LoadOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let schema = &options.schema;
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let c_country = required(&schema.country)?;
    let c_period = required(&schema.period)?;
    let c_value = required(&schema.value)?;
    let c_fx = required(&schema.fx_rate)?;
    let c_quantity = find(&schema.quantity);
    let c_stri = find(&schema.stri);

    let mut observations = Vec::new();
    let mut labels = HashMap::new();
    let mut dropped = Vec::new();
    let mut stri_missing = 0;
    let mut format: Option<PeriodFormat> = None;
    let mut seen: HashMap<(String, i64), u64> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");

        let country = field(c_country).to_string();
        if country.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty country".into(),
            });
        }
        let raw_period = field(c_period);
        let (period, fmt) = parse_period(raw_period).ok_or_else(|| Error::Parse {
            line,
            message: format!("unreadable period `{raw_period}`"),
        })?;
        match format {
            None => format = Some(fmt),
            Some(f) if f != fmt => {
                return Err(Error::Parse {
                    line,
                    message: "mixed period formats".into(),
                })
            }
            _ => {}
        }
        labels
            .entry(period)
            .or_insert_with(|| raw_period.to_string());

        let value = parse_number(field(c_value), "value", line)?;
        let fx_rate = parse_number(field(c_fx), "fx_rate", line)?;
        if value <= 0.0 || fx_rate <= 0.0 {
            let reason = format!("non-positive value ({value}) or fx_rate ({fx_rate})");
            if options.strict {
                return Err(Error::Parse {
                    line,
                    message: reason,
                });
            }
            dropped.push(DroppedRow { line, reason });
            continue;
        }

        let quantity = match c_quantity.map(field).filter(|r| !is_missing(r)) {
            None => None,
            Some(raw) => {
                let q = parse_number(raw, "quantity", line)?;
                if q <= 0.0 && options.strict {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-positive quantity ({q})"),
                    });
                }
                (q > 0.0).then_some(q)
            }
        };

        let stri = match c_stri.map(field).filter(|r| !is_missing(r)) {
            None => None,
            Some(raw) => {
                let r = parse_number(raw, "stri", line)?;
                if !(0.0..=1.0).contains(&r) {
                    if options.strict {
                        return Err(Error::Parse {
                            line,
                            message: format!("stri {r} outside [0, 1]"),
                        });
                    }
                    None
                } else if r == 0.0 {
                    stri_missing += 1;
                    None
                } else {
                    Some(r)
                }
            }
        };

        if seen.insert((country.clone(), period), line).is_some() {
            return Err(Error::Conflict {
                country,
                period: raw_period.to_string(),
            });
        }
        observations.push(PanelObservation {
            country,
            period,
            value,
            quantity,
            fx_rate,
            stri,
        });
    }

    let panel = Panel::with_labels(observations, &labels)?;
    Ok(LoadOutcome {
        panel,
        dropped,
        stri_missing,
    })
}

/// Write a panel in the ingestion schema. Optional columns are emitted only
/// when at least one observation carries them.
pub fn write_panel_csv<W: Write>(panel: &Panel, sink: W) -> Result<()> {
    let with_q = panel.observations().iter().any(|o| o.quantity.is_some());
    let with_r = panel.has_any_stri();
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["country", "period", "value"];
    if with_q {
        header.push("quantity");
    }
    header.push("fx_rate");
    if with_r {
        header.push("stri");
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    writer.write_record(&header).map_err(io)?;
    let t_index: HashMap<i64, usize> = panel
        .periods()
        .iter()
        .enumerate()
        .map(|(t, &p)| (p, t))
        .collect();
    for o in panel.observations() {
        let mut row = vec![
            o.country.clone(),
            panel.period_label(t_index[&o.period]).to_string(),
            o.value.to_string(),
        ];
        if with_q {
            row.push(o.quantity.map(|q| q.to_string()).unwrap_or_default());
        }
        row.push(o.fx_rate.to_string());
        if with_r {
            row.push(o.stri.map(|r| r.to_string()).unwrap_or_default());
        }
        writer.write_record(&row).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, strict: bool) -> Result<LoadOutcome> {
        load_panel(
            text.as_bytes(),
            &LoadOptions {
                strict,
                ..Default::default()
            },
        )
    }

    #[test]
    fn minimal_full_panel() {
        let csv =
            "country,period,value,fx_rate\nA,1,1,1\nB,1,2,1\nC,1,3,1\nA,2,1,1\nB,2,2,1\nC,2,3,1\n";
        let out = load(csv, true).unwrap();
        assert_eq!(out.panel.n_countries(), 3);
        assert_eq!(out.panel.n_periods(), 2);
        assert!(out.panel.is_balanced());
    }

    #[test]
    fn zero_value_rejected_in_strict_mode() {
        let csv = "country,period,value,fx_rate\nA,1,1,1\nB,1,0,1\nA,2,1,1\nB,2,1,1\n";
        match load(csv, true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let out = load(csv, false).unwrap();
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.dropped[0].line, 3);
        assert_eq!(out.panel.present_count(), 3);
    }

    #[test]
    fn one_missing_cell() {
        let csv = "country,period,value,fx_rate\nA,1,1,1\nB,1,2,1\nC,1,3,1\nA,2,1,1\nC,2,3,1\n";
        let p = load(csv, true).unwrap().panel;
        assert_eq!(p.mask().iter().filter(|m| !**m).count(), 1);
        assert!(p.cell(1, 1).is_none());
    }

    #[test]
    fn malformed_number_names_line() {
        let csv = "country,period,value,fx_rate\nA,1,1,1\nB,1,abc,1\n";
        assert!(matches!(
            load(csv, false),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn duplicate_row_conflicts() {
        let csv = "country,period,value,fx_rate\nA,1,1,1\nA,1,2,1\nB,2,1,1\n";
        assert!(matches!(load(csv, true), Err(Error::Conflict { .. })));
    }

    #[test]
    fn calendar_periods_map_to_ordinals() {
        let csv = "country,period,value,fx_rate\nA,2008-12,1,1\nB,2008-12,1,1\nA,2009-01,1,1\nB,2009-01,1,1\n";
        let p = load(csv, true).unwrap().panel;
        assert_eq!(p.periods()[1] - p.periods()[0], 1);
        assert_eq!(p.period_label(1), "2009-01");
        assert_eq!(p.period_index("2009-01"), Some(1));
    }

    #[test]
    fn zero_stri_is_missing_not_error() {
        let csv =
            "country,period,value,fx_rate,stri\nA,1,1,1,0\nB,1,1,1,0.3\nA,2,1,1,0.2\nB,2,1,1,\n";
        let out = load(csv, true).unwrap();
        assert_eq!(out.stri_missing, 1);
        assert_eq!(out.panel.log_stri().present_count(), 2);
    }

    #[test]
    fn missing_required_column() {
        let csv = "country,period,value\nA,1,1\n";
        assert!(matches!(load(csv, true), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_read_is_identity() {
        let csv = "country,period,value,quantity,fx_rate\nA,1,1.5,2,0.25\nA,2,1,1,1\nB,1,2,4,1\nB,2,3.25,1,2\n";
        let p = load(csv, true).unwrap().panel;
        let mut buf = Vec::new();
        write_panel_csv(&p, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), csv);
        assert_eq!(
            load(std::str::from_utf8(&buf).unwrap(), true)
                .unwrap()
                .panel,
            p
        );
    }
}
