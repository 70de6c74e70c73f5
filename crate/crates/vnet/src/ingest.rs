//! Readers and writers for the line-oriented CSV inputs.
//!
//! Every file has one header line; lines starting with `#` are skipped.
//! Parse errors carry the 1-based line number and the offending field.

use std::io::{self, BufRead, BufReader, Read, Write};

use log::warn;
use vnet_core::records::{INDICATOR_COUNT, INDICATOR_NAMES};
use vnet_core::spatial::SiteRow;
use vnet_core::{
    BehaviorRecord, FlowRecord, HourStamp, LatLon, Level, PovertyRecord, SpatialHierarchy, UserCallEvent,
};

use crate::error::ParseError;

pub const FLOWS_HEADER: [&str; 5] = ["hour", "from_site", "to_site", "calls", "texts"];
pub const HIERARCHY_HEADER: [&str; 5] = ["site_id", "arrondissement_id", "region_id", "lat", "lon"];
pub const POVERTY_HEADER: [&str; 5] = ["region_id", "name", "H", "A", "MPI"];
pub const USERLOG_HEADER: [&str; 3] = ["user_id", "hour", "arrondissement_id"];

pub fn behavior_header() -> Vec<&'static str> {
    let mut h = vec!["user_id", "month"];
    h.extend(INDICATOR_NAMES);
    h
}

/// Streaming reader over a headed CSV file with a fixed column list.
///
/// Fields are split on commas without quoting; blank lines and lines
/// starting with `#` are skipped.
pub struct CsvRows<R> {
    input: BufReader<R>,
    buf: String,
    line: u64,
    bounds: Vec<(usize, usize)>,
    columns: Vec<&'static str>,
}

impl<R: Read> CsvRows<R> {
    pub fn new(input: R, columns: &[&'static str]) -> Result<Self, ParseError> {
        let mut rows = CsvRows {
            input: BufReader::with_capacity(1 << 16, input),
            buf: String::new(),
            line: 0,
            bounds: Vec::with_capacity(columns.len()),
            columns: columns.to_vec(),
        };
        if !rows.advance()? {
            return Err(ParseError::new(1, "header", "file is empty"));
        }
        let line = rows.line;
        let header: Vec<&str> = rows.bounds.iter().map(|&(a, b)| &rows.buf[a..b]).collect();
        for (k, expected) in columns.iter().enumerate() {
            match header.get(k) {
                Some(found) if found == expected => {}
                Some(found) => {
                    return Err(ParseError::new(line, *expected, format!("unexpected column `{found}`")))
                }
                None => return Err(ParseError::new(line, *expected, "missing column")),
            }
        }
        if let Some(extra) = header.get(columns.len()) {
            return Err(ParseError::new(line, *extra, format!("unknown column `{extra}`")));
        }
        Ok(rows)
    }

    /// Read up to the next content line and split it; false at end of input.
    fn advance(&mut self) -> Result<bool, ParseError> {
        loop {
            self.buf.clear();
            self.line += 1;
            let n = self
                .input
                .read_line(&mut self.buf)
                .map_err(|e| ParseError::new(self.line, "<line>", e.to_string()))?;
            if n == 0 {
                return Ok(false);
            }
            let content = self.buf.trim_end_matches(['\n', '\r']);
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            self.bounds.clear();
            let mut start = 0;
            for (k, b) in content.bytes().enumerate() {
                if b == b',' {
                    self.bounds.push((start, k));
                    start = k + 1;
                }
            }
            self.bounds.push((start, content.len()));
            return Ok(true);
        }
    }

    /// Advance to the next data row.
    pub fn next_row(&mut self) -> Option<Result<Row<'_>, ParseError>> {
        match self.advance() {
            Ok(false) => None,
            Err(e) => Some(Err(e)),
            Ok(true) => {
                if self.bounds.len() != self.columns.len() {
                    let field = self.columns.get(self.bounds.len()).copied().unwrap_or("<extra>");
                    return Some(Err(ParseError::new(
                        self.line,
                        field,
                        format!("expected {} fields, found {}", self.columns.len(), self.bounds.len()),
                    )));
                }
                Some(Ok(Row {
                    line: self.line,
                    text: &self.buf,
                    bounds: &self.bounds,
                    columns: &self.columns,
                }))
            }
        }
    }
}

/// One row with the expected number of fields.
pub struct Row<'a> {
    pub line: u64,
    text: &'a str,
    bounds: &'a [(usize, usize)],
    columns: &'a [&'static str],
}

impl Row<'_> {
    pub fn str(&self, k: usize) -> Result<&str, ParseError> {
        let (a, b) = self.bounds[k];
        Ok(&self.text[a..b])
    }

    /// A non-empty identifier.
    pub fn id(&self, k: usize) -> Result<&str, ParseError> {
        let s = self.str(k)?;
        if s.is_empty() {
            return Err(self.error(k, "empty identifier"));
        }
        Ok(s)
    }

    pub fn u64(&self, k: usize) -> Result<u64, ParseError> {
        let s = self.str(k)?;
        s.parse()
            .map_err(|_| self.error(k, format!("`{s}` is not a nonnegative integer")))
    }

    pub fn f64(&self, k: usize) -> Result<f64, ParseError> {
        let s = self.str(k)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(k, format!("`{s}` is not a finite number"))),
        }
    }

    pub fn hour(&self, k: usize) -> Result<HourStamp, ParseError> {
        HourStamp::parse(self.str(k)?).map_err(|e| self.error(k, e.to_string()))
    }

    pub fn error(&self, k: usize, message: impl Into<String>) -> ParseError {
        ParseError::new(self.line, self.columns[k], message)
    }
}

/// Streaming flow reader; holds one record at a time.
pub struct FlowReader<R> {
    rows: CsvRows<R>,
}

impl<R: Read> FlowReader<R> {
    pub fn new(input: R) -> Result<Self, ParseError> {
        Ok(FlowReader {
            rows: CsvRows::new(input, &FLOWS_HEADER)?,
        })
    }

    /// Line number of the record last returned.
    pub fn line(&self) -> u64 {
        self.rows.line
    }
}

impl<R: Read> Iterator for FlowReader<R> {
    type Item = Result<FlowRecord, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = match self.rows.next_row()? {
            Ok(row) => row,
            Err(e) => return Some(Err(e)),
        };
        Some((|| {
            Ok(FlowRecord {
                hour: row.hour(0)?,
                from_site: row.id(1)?.to_string(),
                to_site: row.id(2)?.to_string(),
                calls: row.u64(3)?,
                texts: row.u64(4)?,
            })
        })())
    }
}

pub fn parse_flows<R: Read>(input: R) -> Result<Vec<FlowRecord>, ParseError> {
    FlowReader::new(input)?.collect()
}

pub fn parse_hierarchy<R: Read>(input: R) -> Result<SpatialHierarchy, ParseError> {
    let mut rows = CsvRows::new(input, &HIERARCHY_HEADER)?;
    let mut builder = SpatialHierarchy::builder();
    let mut last_line = 1;
    while let Some(row) = rows.next_row() {
        let row = row?;
        last_line = row.line;
        let (lat, lon) = (row.f64(3)?, row.f64(4)?);
        let position = LatLon::new(lat, lon).map_err(|e| {
            let k = if (-90.0..=90.0).contains(&lat) { 4 } else { 3 };
            row.error(k, e.to_string())
        })?;
        let site = SiteRow {
            site: row.id(0)?.to_string(),
            arrondissement: row.id(1)?.to_string(),
            region: row.id(2)?.to_string(),
            position,
        };
        builder.add_site(site).map_err(|e| {
            let k = match e {
                vnet_core::Error::ConflictingParent { .. } => 2,
                _ => 0,
            };
            row.error(k, e.to_string())
        })?;
    }
    builder
        .build()
        .map_err(|e| ParseError::new(last_line, "site_id", e.to_string()))
}

/// Poverty rows; an MPI inconsistent with H·A is logged, not rejected.
pub fn parse_poverty<R: Read>(input: R) -> Result<Vec<PovertyRecord>, ParseError> {
    let mut rows = CsvRows::new(input, &POVERTY_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        let record = PovertyRecord::new(
            row.id(0)?.to_string(),
            row.str(1)?.to_string(),
            row.f64(2)?,
            row.f64(3)?,
            row.f64(4)?,
        )
        .map_err(|e| {
            let k = match e {
                vnet_core::Error::OutOfRange { field: "H", .. } => 2,
                vnet_core::Error::OutOfRange { field: "A", .. } => 3,
                _ => 4,
            };
            row.error(k, e.to_string())
        })?;
        if !record.is_consistent() {
            warn!(
                "poverty line {}: MPI {} differs from H·A by {:.4}",
                row.line,
                record.mpi,
                record.consistency_gap()
            );
        }
        out.push(record);
    }
    Ok(out)
}

pub fn parse_user_log<R: Read>(input: R) -> Result<Vec<UserCallEvent>, ParseError> {
    let mut rows = CsvRows::new(input, &USERLOG_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        out.push(UserCallEvent {
            user: row.id(0)?.to_string(),
            hour: row.hour(1)?,
            arrondissement: row.id(2)?.to_string(),
        });
    }
    Ok(out)
}

pub fn parse_behavior<R: Read>(input: R) -> Result<Vec<BehaviorRecord>, ParseError> {
    let header = behavior_header();
    let mut rows = CsvRows::new(input, &header)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        let month = row.u64(1)?;
        let month = u8::try_from(month).map_err(|_| row.error(1, format!("{month} is not a month")))?;
        let indicators = (0..INDICATOR_COUNT)
            .map(|k| row.f64(k + 2))
            .collect::<Result<Vec<_>, _>>()?;
        let record = BehaviorRecord::new(row.id(0)?.to_string(), month, indicators).map_err(|e| {
            let k = match e {
                vnet_core::Error::OutOfRange { field: "month", .. } => 1,
                _ => 2 + vnet_core::records::PIC_INDEX,
            };
            row.error(k, e.to_string())
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_flow_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", FLOWS_HEADER.join(","))
}

pub fn write_flow<W: Write>(w: &mut W, r: &FlowRecord) -> io::Result<()> {
    writeln!(w, "{},{},{},{},{}", r.hour, r.from_site, r.to_site, r.calls, r.texts)
}

pub fn write_flows<'a, W: Write>(w: &mut W, records: impl IntoIterator<Item = &'a FlowRecord>) -> io::Result<()> {
    write_flow_header(w)?;
    records.into_iter().try_for_each(|r| write_flow(w, r))
}

/// Sites in index order with their parents and positions.
pub fn write_hierarchy<W: Write>(w: &mut W, h: &SpatialHierarchy) -> io::Result<()> {
    writeln!(w, "{}", HIERARCHY_HEADER.join(","))?;
    for (i, site) in h.units(Level::Site).iter().enumerate() {
        let arr = h.parent_index(Level::Site, i).expect("sites have parents");
        let region = h.parent_index(Level::Arrondissement, arr).expect("arrondissements have parents");
        let p = site.centroid.expect("sites have positions");
        writeln!(
            w,
            "{},{},{},{},{}",
            site.id,
            h.unit_at(Level::Arrondissement, arr).id,
            h.unit_at(Level::Region, region).id,
            p.lat,
            p.lon
        )?;
    }
    Ok(())
}

pub fn write_poverty<'a, W: Write>(w: &mut W, records: impl IntoIterator<Item = &'a PovertyRecord>) -> io::Result<()> {
    writeln!(w, "{}", POVERTY_HEADER.join(","))?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.region, r.name, r.h, r.a, r.mpi)?;
    }
    Ok(())
}

pub fn write_user_log<'a, W: Write>(w: &mut W, events: impl IntoIterator<Item = &'a UserCallEvent>) -> io::Result<()> {
    writeln!(w, "{}", USERLOG_HEADER.join(","))?;
    for e in events {
        writeln!(w, "{},{},{}", e.user, e.hour, e.arrondissement)?;
    }
    Ok(())
}

pub fn write_behavior<'a, W: Write>(w: &mut W, records: impl IntoIterator<Item = &'a BehaviorRecord>) -> io::Result<()> {
    writeln!(w, "{}", behavior_header().join(","))?;
    for r in records {
        write!(w, "{},{}", r.user, r.month)?;
        for v in &r.indicators {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_line() {
        let text = "hour,from_site,to_site,calls,texts\n2013-01-07T13,S0001,S0002,5,3\n";
        let r = parse_flows(text.as_bytes()).unwrap();
        assert_eq!(
            r,
            vec![FlowRecord {
                hour: HourStamp::new(2013, 1, 7, 13).unwrap(),
                from_site: "S0001".into(),
                to_site: "S0002".into(),
                calls: 5,
                texts: 3,
            }]
        );
    }

    #[test]
    fn negative_count_names_line_and_field() {
        let text = "hour,from_site,to_site,calls,texts\n# note\n2013-01-07T13,S0001,S0002,-1,0\n";
        let e = parse_flows(text.as_bytes()).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (3, "calls"));
    }

    #[test]
    fn bad_timestamp_and_unknown_column() {
        let text = "hour,from_site,to_site,calls,texts\n2013-13-07T13,S1,S2,1,0\n";
        let e = parse_flows(text.as_bytes()).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (2, "hour"));

        let text = "hour,from_site,to_site,calls,texts,duration\n";
        let e = parse_flows(text.as_bytes()).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (1, "duration"));

        let text = "hour,from,to_site,calls,texts\n";
        assert_eq!(parse_flows(text.as_bytes()).unwrap_err().field, "from_site");
    }

    #[test]
    fn three_line_fixture() {
        let text = "\
hour,from_site,to_site,calls,texts
2013-01-01T00,S1,S2,0,0
# skipped
2013-06-30T23,S2,S1,12,1
2013-12-31T05,S3,S3,7,40
";
        let r = parse_flows(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].volume(), 0);
        assert_eq!(r[1].hour.to_string(), "2013-06-30T23");
        assert_eq!((r[1].from_site.as_str(), r[1].to_site.as_str(), r[1].volume()), ("S2", "S1", 13));
        assert_eq!((r[2].calls, r[2].texts), (7, 40));
    }

    #[test]
    fn hierarchy_counts() {
        let one = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,14.7,-17.4\n";
        let h = parse_hierarchy(one.as_bytes()).unwrap();
        for level in Level::ALL {
            assert_eq!(h.len(level), 1);
        }
        let four = "site_id,arrondissement_id,region_id,lat,lon
S1,A1,R1,14.0,-17.0
S2,A1,R1,14.1,-17.0
S3,A2,R1,14.2,-16.0
S4,A2,R1,14.3,-16.0
";
        let h = parse_hierarchy(four.as_bytes()).unwrap();
        assert_eq!(h.site_counts(Level::Region), &[4]);
        assert_eq!(h.site_counts(Level::Arrondissement), &[2, 2]);
    }

    #[test]
    fn hierarchy_errors() {
        let dup = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,14,-17\nS1,A2,R1,14,-17\n";
        let e = parse_hierarchy(dup.as_bytes()).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("S1"), "{e}");

        let moved = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,14,-17\nS2,A1,R2,14,-17\n";
        assert_eq!(parse_hierarchy(moved.as_bytes()).unwrap_err().field, "region_id");

        let bad = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,91,-17\n";
        assert_eq!(parse_hierarchy(bad.as_bytes()).unwrap_err().field, "lat");
        let bad = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,14,-181\n";
        assert_eq!(parse_hierarchy(bad.as_bytes()).unwrap_err().field, "lon");
    }

    #[test]
    fn poverty_rows() {
        let text = "region_id,name,H,A,MPI\nR01,Dakar,10.0,40.0,0.04\nR02,X,47.0,58.0,0.273\n";
        let p = parse_poverty(text.as_bytes()).unwrap();
        assert!(p.iter().all(|r| r.is_consistent()));
        assert_eq!(p[1].mpi, 0.273);

        let text = "region_id,name,H,A,MPI\nR03,Y,120,50,0.6\n";
        let e = parse_poverty(text.as_bytes()).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (2, "H"));
    }

    #[test]
    fn user_log_row() {
        let text = "user_id,hour,arrondissement_id\nU1,2013-03-02T21,A017\n";
        let e = parse_user_log(text.as_bytes()).unwrap();
        assert_eq!(e[0].user, "U1");
        assert_eq!(e[0].hour, HourStamp::new(2013, 3, 2, 21).unwrap());
        assert_eq!(e[0].arrondissement, "A017");
    }

    fn behavior_row(user: &str, month: u8, pic: f64, columns: usize) -> String {
        let mut values: Vec<String> = (0..columns).map(|k| format!("{}", k as f64 * 0.5)).collect();
        if columns > vnet_core::records::PIC_INDEX {
            values[vnet_core::records::PIC_INDEX] = pic.to_string();
        }
        format!("{user},{month},{}\n", values.join(","))
    }

    #[test]
    fn behavior_rows() {
        let mut text = behavior_header().join(",") + "\n";
        text += &behavior_row("U1", 1, 0.25, 33);
        text += &behavior_row("U2", 12, 0.75, 33);
        let r = parse_behavior(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].user.as_str(), r[0].month), ("U1", 1));
        assert_eq!(r[1].indicators[vnet_core::records::PIC_INDEX], 0.75);
        assert_eq!(r[1].indicators[1], 0.5);

        let mut short = behavior_header().join(",") + "\n";
        short += &behavior_row("U1", 1, 0.25, 32);
        let e = parse_behavior(short.as_bytes()).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("expected 35 fields, found 34"), "{e}");
    }

    #[test]
    fn round_trips() {
        let flows = "hour,from_site,to_site,calls,texts\n2013-01-07T13,S0001,S0002,5,3\n2013-02-28T00,S9,S0001,0,11\n";
        let parsed = parse_flows(flows.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_flows(&mut out, &parsed).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), flows);

        let hier = "site_id,arrondissement_id,region_id,lat,lon\nS1,A1,R1,14.000001,-17.25\nS2,A2,R1,12.5,-16\n";
        let h = parse_hierarchy(hier.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_hierarchy(&mut out, &h).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), hier);

        let pov = "region_id,name,H,A,MPI\nR01,Dakar,10,40,0.04\n";
        let p = parse_poverty(pov.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_poverty(&mut out, &p).unwrap();
        assert_eq!(parse_poverty(out.as_slice()).unwrap(), p);

        let mut text = behavior_header().join(",") + "\n";
        text += &behavior_row("U1", 3, 0.1, 33);
        let b = parse_behavior(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_behavior(&mut out, &b).unwrap();
        assert_eq!(parse_behavior(out.as_slice()).unwrap(), b);
    }
}
