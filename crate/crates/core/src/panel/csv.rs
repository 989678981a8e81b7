//! Long-format panel CSV.
//!
//! ```text
//! #treatment_time=200
//! unit,role,time,v0,v1
//! treated,treated,0,1.5,0.2
//! c1,control,0,0.3,0.9
//! ```
//!
//! Rows of one unit must appear in ascending time order. Values are written
//! with the shortest representation that parses back to the same `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{validation, Error, Result};
use crate::panel::{Panel, UnitSeries};

const TREATMENT_KEY: &str = "treatment_time";

/// Parses a panel. `treatment_time` overrides the `#treatment_time=` metadata row.
pub fn load_panel<R: Read>(mut source: R, treatment_time: Option<f64>) -> Result<Panel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut meta_time = None;
    for (idx, line) in text.lines().enumerate() {
        let Some(meta) = line.trim().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = meta.split_once('=') {
            if key.trim() == TREATMENT_KEY {
                let t = value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line: idx as u64 + 1, message: format!("bad treatment_time {value:?}: {e}") })?;
                meta_time = Some(t);
            }
        }
    }
    let treatment_time = treatment_time
        .or(meta_time)
        .ok_or_else(|| validation("no treatment time: pass --treatment-time or add a #treatment_time= row"))?;

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let expected = ["unit", "role", "time"];
    if header.len() < 4 || header.iter().take(3).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: header.position().map_or(1, |p| p.line()),
            message: "header must start with unit,role,time followed by v0..v{d-1}".into(),
        });
    }
    let d = header.len() - 3;

    struct Pending {
        id: String,
        treated: bool,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 3 + d {
            return Err(parse_err(format!("expected {} fields, found {}", 3 + d, record.len())));
        }
        let id = &record[0];
        let treated = match &record[1] {
            "treated" => true,
            "control" => false,
            other => return Err(parse_err(format!("role must be treated or control, got {other:?}"))),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(format!("bad number {s:?}: {e}")));
        let t = num(&record[2])?;
        let values = (3..3 + d).map(|k| num(&record[k])).collect::<Result<Vec<_>>>()?;

        let entry = match pending.iter_mut().position(|p| p.id == id) {
            Some(pos) => &mut pending[pos],
            None => {
                pending.push(Pending { id: id.to_string(), treated, times: Vec::new(), values: Vec::new() });
                pending.last_mut().expect("just pushed")
            }
        };
        if entry.treated != treated {
            return Err(parse_err(format!("unit {id:?} has conflicting roles")));
        }
        entry.times.push(t);
        entry.values.push(values);
    }

    let treated: Vec<usize> = pending.iter().enumerate().filter(|(_, p)| p.treated).map(|(i, _)| i).collect();
    match treated.len() {
        0 => return Err(validation("no unit has role=treated")),
        1 => {}
        _ => return Err(validation("more than one unit has role=treated")),
    }
    let treated_unit = pending.remove(treated[0]);
    let units = std::iter::once(treated_unit)
        .chain(pending)
        .map(|p| UnitSeries::new(p.id, p.times, p.values))
        .collect::<Result<Vec<_>>>()?;
    Panel::new(units, treatment_time)
}

pub fn export_panel<W: Write>(panel: &Panel, mut out: W) -> Result<()> {
    writeln!(out, "#{TREATMENT_KEY}={}", panel.treatment_time)?;
    write!(out, "unit,role,time")?;
    for k in 0..panel.dims {
        write!(out, ",v{k}")?;
    }
    writeln!(out)?;
    for (i, unit) in panel.units.iter().enumerate() {
        let role = if i == 0 { "treated" } else { "control" };
        for (t, row) in unit.times.iter().zip(&unit.values) {
            write!(out, "{},{role},{t}", unit.unit_id)?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_panel_file(path: impl AsRef<Path>, treatment_time: Option<f64>) -> Result<Panel> {
    let file = fs::File::open(path.as_ref())?;
    load_panel(std::io::BufReader::new(file), treatment_time)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_panel_file(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    export_panel(panel, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

/// Single series as `time,v0,...`, preceded by a `#unit=` row.
pub fn export_series<W: Write>(series: &UnitSeries, mut out: W) -> Result<()> {
    writeln!(out, "#unit={}", series.unit_id)?;
    write!(out, "time")?;
    for k in 0..series.dims() {
        write!(out, ",v{k}")?;
    }
    writeln!(out)?;
    for (t, row) in series.times.iter().zip(&series.values) {
        write!(out, "{t}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_series<R: Read>(mut source: R) -> Result<UnitSeries> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let id = text.lines().filter_map(|l| l.trim().strip_prefix("#unit=")).next().unwrap_or("series").trim().to_string();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    if header.len() < 2 || &header[0] != "time" {
        return Err(Error::Parse { line: 1, message: "header must be time,v0..v{d-1}".into() });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad number {s:?}: {e}") });
        times.push(num(&record[0])?);
        values.push((1..record.len()).map(|k| num(&record[k])).collect::<Result<Vec<_>>>()?);
    }
    UnitSeries::new(id, times, values)
}

pub fn read_series_file(path: impl AsRef<Path>) -> Result<UnitSeries> {
    load_series(std::io::BufReader::new(fs::File::open(path.as_ref())?))
}

pub fn write_series_file(series: &UnitSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    export_series(series, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "#treatment_time=2.5\nunit,role,time,v0\n\
        a,treated,0,1\na,treated,1,2\na,treated,2,3\na,treated,3,4\na,treated,4,5\n\
        b,control,0,1\nb,control,1,1\nb,control,2,1\nb,control,3,1\nb,control,4,1\n\
        c,control,0,0\nc,control,1,2\nc,control,2,4\nc,control,3,6\nc,control,4,8\n";

    #[test]
    fn loads_small_panel() {
        let panel = load_panel(SMALL.as_bytes(), None).unwrap();
        assert_eq!(panel.units.len(), 3);
        assert_eq!(panel.treatment_time, 2.5);
        assert!(panel.units.iter().all(|u| u.len() == 5));
        assert_eq!(panel.treated().unit_id, "a");
        let overridden = load_panel(SMALL.as_bytes(), Some(3.5)).unwrap();
        assert_eq!(overridden.treatment_time, 3.5);
    }

    #[test]
    fn round_trip_is_exact() {
        let panel = load_panel(SMALL.as_bytes(), None).unwrap();
        let mut buf = Vec::new();
        export_panel(&panel, &mut buf).unwrap();
        assert_eq!(load_panel(buf.as_slice(), None).unwrap(), panel);
    }

    #[test]
    fn treated_unit_is_moved_first() {
        let text = "unit,role,time,v0\nc,control,0,1\nc,control,1,2\nt,treated,0,0\nt,treated,1,1\nt,treated,2,2\n";
        let panel = load_panel(text.as_bytes(), Some(1.5)).unwrap();
        assert_eq!(panel.treated().unit_id, "t");
        assert_eq!(panel.controls()[0].unit_id, "c");
    }

    #[test]
    fn errors_carry_context() {
        let bad_row = "unit,role,time,v0\na,treated,0,1\na,treated,1,oops\n";
        match load_panel(bad_row.as_bytes(), Some(1.0)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }

        let dup = "unit,role,time,v0\nt,treated,0,1\nt,treated,1,1\nt,treated,2,1\nA,control,0,1\nA,control,0,2\n";
        let err = load_panel(dup.as_bytes(), Some(1.5)).unwrap_err();
        assert!(err.to_string().contains("\"A\""), "{err}");

        let unsorted = "unit,role,time,v0\nt,treated,0,1\nt,treated,1,1\nt,treated,2,1\nB,control,1,1\nB,control,0,2\n";
        let err = load_panel(unsorted.as_bytes(), Some(1.5)).unwrap_err();
        assert!(err.to_string().contains("\"B\""), "{err}");

        let no_treated = "unit,role,time,v0\nA,control,0,1\nA,control,1,2\n";
        assert!(matches!(load_panel(no_treated.as_bytes(), Some(1.0)), Err(Error::Validation(_))));

        let no_time = "unit,role,time,v0\nt,treated,0,1\n";
        assert!(matches!(load_panel(no_time.as_bytes(), None), Err(Error::Validation(_))));

        let bad_role = "unit,role,time,v0\nt,placebo,0,1\n";
        assert!(matches!(load_panel(bad_role.as_bytes(), Some(1.0)), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn series_round_trip() {
        let series =
            UnitSeries::new("treated", vec![0.0, 0.5, 2.0], vec![vec![1.0, -2.5], vec![0.1, 3.0], vec![1e-17, 4.0]]).unwrap();
        let mut buf = Vec::new();
        export_series(&series, &mut buf).unwrap();
        assert_eq!(load_series(buf.as_slice()).unwrap(), series);
        assert!(load_series("t,v0\n0,1\n".as_bytes()).is_err());
    }
}
