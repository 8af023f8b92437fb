//! Tab-separated tables: word events, voxel geometry, voxel masks and parcel
//! labels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::volume::{Hemisphere, Mask, VoxelGeometry};

use super::{io_err, write_atomic, MatioError};

#[derive(Debug, Clone, PartialEq)]
pub struct WordEvent {
    pub word: String,
    pub onset: f64,
    pub duration: Option<f64>,
}

/// Words in presentation order with onsets in seconds from run start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventList {
    entries: Vec<WordEvent>,
}

impl EventList {
    /// Validates that onsets are finite, non-negative and non-decreasing.
    pub fn new(entries: Vec<WordEvent>) -> Result<Self, MatioError> {
        let mut prev = 0.0;
        for (i, e) in entries.iter().enumerate() {
            let line = i + 2;
            if !e.onset.is_finite() || e.onset < 0.0 {
                return Err(MatioError::Events {
                    line,
                    msg: format!("onset {} is negative or non-finite", e.onset),
                });
            }
            if e.onset < prev {
                return Err(MatioError::Events {
                    line,
                    msg: format!("onset {} precedes previous onset {prev}", e.onset),
                });
            }
            prev = e.onset;
        }
        Ok(EventList { entries })
    }

    pub fn entries(&self) -> &[WordEvent] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn onsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.onset)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.word.as_str())
    }
}

struct Tsv<'a> {
    header: Vec<&'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn split_tsv(text: &str) -> Option<Tsv<'_>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next()?;
    Some(Tsv {
        header: header.split('\t').map(str::trim).collect(),
        rows: lines.map(|(n, l)| (n, l.split('\t').collect())).collect(),
    })
}

impl<'a> Tsv<'a> {
    fn column(&self, name: &str, table: &'static str) -> Result<usize, MatioError> {
        self.header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| MatioError::MissingColumn {
                table,
                column: name.to_string(),
            })
    }

    fn optional_column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }
}

fn cell<'a>(row: &[&'a str], col: usize, line: usize, table: &'static str) -> Result<&'a str, MatioError> {
    row.get(col)
        .map(|s| s.trim())
        .ok_or_else(|| MatioError::Table {
            table,
            line,
            msg: format!("missing field {}", col + 1),
        })
}

fn number(s: &str, line: usize, column: &str, table: &'static str) -> Result<f64, MatioError> {
    let v: f64 = s.parse().map_err(|_| MatioError::Table {
        table,
        line,
        msg: format!("{column} {s:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MatioError::Table {
            table,
            line,
            msg: format!("{column} {s:?} is not finite"),
        });
    }
    Ok(v)
}

fn index(s: &str, line: usize, column: &str, table: &'static str) -> Result<usize, MatioError> {
    s.parse().map_err(|_| MatioError::Table {
        table,
        line,
        msg: format!("{column} {s:?} is not a non-negative integer"),
    })
}

/// Parse an events table with header `word<TAB>onset[<TAB>duration]`.
pub fn parse_events(text: &str) -> Result<EventList, MatioError> {
    const T: &str = "events";
    let Some(tsv) = split_tsv(text) else {
        return Err(MatioError::MissingColumn {
            table: T,
            column: "word".into(),
        });
    };
    let wcol = tsv.column("word", T)?;
    let ocol = tsv.column("onset", T)?;
    let dcol = tsv.optional_column("duration");
    let mut entries = Vec::with_capacity(tsv.rows.len());
    let mut prev = 0.0f64;
    for (line, row) in &tsv.rows {
        let word = row
            .get(wcol)
            .ok_or_else(|| MatioError::Table {
                table: T,
                line: *line,
                msg: "missing word".into(),
            })?
            .to_string();
        let onset = number(cell(row, ocol, *line, T)?, *line, "onset", T)?;
        if onset < 0.0 {
            return Err(MatioError::Events {
                line: *line,
                msg: format!("onset {onset} is negative"),
            });
        }
        if onset < prev {
            return Err(MatioError::Events {
                line: *line,
                msg: format!("onset {onset} precedes previous onset {prev}"),
            });
        }
        prev = onset;
        let duration = match dcol.and_then(|c| row.get(c)).map(|s| s.trim()) {
            None | Some("") | Some("n/a") => None,
            Some(s) => Some(number(s, *line, "duration", T)?),
        };
        entries.push(WordEvent {
            word,
            onset,
            duration,
        });
    }
    Ok(EventList { entries })
}

pub fn read_events(path: &Path) -> Result<EventList, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_events(&text)
}

pub fn format_events(events: &EventList) -> String {
    let with_duration = events.entries.iter().any(|e| e.duration.is_some());
    let mut out = String::from(if with_duration {
        "word\tonset\tduration\n"
    } else {
        "word\tonset\n"
    });
    for e in &events.entries {
        let _ = write!(out, "{}\t{}", e.word, e.onset);
        if with_duration {
            match e.duration {
                Some(d) => {
                    let _ = write!(out, "\t{d}");
                }
                None => out.push_str("\tn/a"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_events(path: &Path, events: &EventList) -> Result<(), MatioError> {
    write_atomic(path, format_events(events).as_bytes())
}

/// Parse a geometry table with columns `voxel_id, x_mm, y_mm, z_mm`. Ids
/// must cover `0..n` exactly once; row order is free.
pub fn parse_geometry(text: &str) -> Result<VoxelGeometry, MatioError> {
    const T: &str = "geometry";
    let Some(tsv) = split_tsv(text) else {
        return Ok(VoxelGeometry::new(Vec::new()));
    };
    let cols = [
        tsv.column("voxel_id", T)?,
        tsv.column("x_mm", T)?,
        tsv.column("y_mm", T)?,
        tsv.column("z_mm", T)?,
    ];
    let n = tsv.rows.len();
    let mut coords: Vec<Option<[f64; 3]>> = vec![None; n];
    for (line, row) in &tsv.rows {
        let id = index(cell(row, cols[0], *line, T)?, *line, "voxel_id", T)?;
        let mut c = [0.0; 3];
        for (k, name) in ["x_mm", "y_mm", "z_mm"].iter().enumerate() {
            c[k] = number(cell(row, cols[k + 1], *line, T)?, *line, name, T)?;
        }
        let slot = coords.get_mut(id).ok_or(MatioError::VoxelIdRange { id, n })?;
        if slot.is_some() {
            return Err(MatioError::DuplicateVoxel(id));
        }
        *slot = Some(c);
    }
    // n rows, ids < n, no duplicates: every slot is filled.
    Ok(VoxelGeometry::new(coords.into_iter().flatten().collect()))
}

pub fn read_geometry(path: &Path) -> Result<VoxelGeometry, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_geometry(&text)
}

pub fn write_geometry(path: &Path, geometry: &VoxelGeometry) -> Result<(), MatioError> {
    let mut out = String::from("voxel_id\tx_mm\ty_mm\tz_mm\n");
    for (i, c) in geometry.coords().iter().enumerate() {
        let _ = writeln!(out, "{i}\t{}\t{}\t{}", c[0], c[1], c[2]);
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a mask table (single `voxel_id` column) for a volume of `n` voxels.
pub fn parse_mask(text: &str, n: usize, label: &str) -> Result<Mask, MatioError> {
    const T: &str = "mask";
    let Some(tsv) = split_tsv(text) else {
        return Ok(Mask::empty(n, label));
    };
    let col = tsv.column("voxel_id", T)?;
    let mut ids = Vec::with_capacity(tsv.rows.len());
    for (line, row) in &tsv.rows {
        ids.push(index(cell(row, col, *line, T)?, *line, "voxel_id", T)?);
    }
    Mask::from_ids(n, ids, label).map_err(|id| MatioError::VoxelIdRange { id, n })
}

pub fn read_mask(path: &Path, n: usize) -> Result<Mask, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mask".into());
    parse_mask(&text, n, &label)
}

pub fn format_mask(mask: &Mask) -> String {
    let mut out = String::from("voxel_id\n");
    for id in mask.ids() {
        let _ = writeln!(out, "{id}");
    }
    out
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), MatioError> {
    write_atomic(path, format_mask(mask).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParcelLabel {
    pub parcel_id: usize,
    pub parcel_name: String,
    pub hemisphere: Hemisphere,
}

/// Voxel to parcel assignment. Voxels absent from the file are unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcelLabels {
    pub labels: Vec<Option<ParcelLabel>>,
}

/// Parse a label table with columns `voxel_id, parcel_id, parcel_name,
/// hemisphere`.
pub fn parse_parcel_labels(text: &str, n: usize) -> Result<ParcelLabels, MatioError> {
    const T: &str = "parcels";
    let mut labels = vec![None; n];
    let Some(tsv) = split_tsv(text) else {
        return Ok(ParcelLabels { labels });
    };
    let cols = [
        tsv.column("voxel_id", T)?,
        tsv.column("parcel_id", T)?,
        tsv.column("parcel_name", T)?,
        tsv.column("hemisphere", T)?,
    ];
    let mut names: HashMap<usize, (String, Hemisphere)> = HashMap::new();
    for (line, row) in &tsv.rows {
        let id = index(cell(row, cols[0], *line, T)?, *line, "voxel_id", T)?;
        let parcel_id = index(cell(row, cols[1], *line, T)?, *line, "parcel_id", T)?;
        let parcel_name = cell(row, cols[2], *line, T)?.to_string();
        let hemi_text = cell(row, cols[3], *line, T)?;
        let hemisphere = Hemisphere::parse(hemi_text).ok_or_else(|| MatioError::Table {
            table: T,
            line: *line,
            msg: format!("hemisphere {hemi_text:?} is not left/right"),
        })?;
        match names.get(&parcel_id) {
            Some((name, h)) if *name != parcel_name || *h != hemisphere => {
                return Err(MatioError::Table {
                    table: T,
                    line: *line,
                    msg: format!("parcel {parcel_id} relabeled as {parcel_name:?}/{hemi_text}"),
                })
            }
            Some(_) => {}
            None => {
                names.insert(parcel_id, (parcel_name.clone(), hemisphere));
            }
        }
        let slot = labels.get_mut(id).ok_or(MatioError::VoxelIdRange { id, n })?;
        if slot.is_some() {
            return Err(MatioError::DuplicateVoxel(id));
        }
        *slot = Some(ParcelLabel {
            parcel_id,
            parcel_name,
            hemisphere,
        });
    }
    Ok(ParcelLabels { labels })
}

pub fn read_parcel_labels(path: &Path, n: usize) -> Result<ParcelLabels, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_parcel_labels(&text, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_basic() {
        let ev = parse_events("word\tonset\nthe\t0.50\nprince\t0.82\n").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev.entries()[1].word, "prince");
        assert_eq!(ev.entries()[1].onset, 0.82);
        assert!(parse_events("word\tonset\n").unwrap().is_empty());
    }

    #[test]
    fn events_errors() {
        let e = parse_events("word\tonset\nthe\t0.82\nprince\t0.50\n").unwrap_err();
        assert!(matches!(e, MatioError::Events { line: 3, .. }), "{e:?}");
        let e = parse_events("word\tstart\nthe\t0.5\n").unwrap_err();
        assert!(matches!(e, MatioError::MissingColumn { .. }));
        let e = parse_events("word\tonset\nthe\tsoon\n").unwrap_err();
        assert!(matches!(e, MatioError::Table { line: 2, .. }));
    }

    #[test]
    fn events_duration_roundtrip() {
        let text = "word\tonset\tduration\nle\t0\t0.2\npetit\t0.3\tn/a\n";
        let ev = parse_events(text).unwrap();
        assert_eq!(ev.entries()[0].duration, Some(0.2));
        assert_eq!(ev.entries()[1].duration, None);
        assert_eq!(parse_events(&format_events(&ev)).unwrap(), ev);
    }

    #[test]
    fn geometry_rows() {
        let g = parse_geometry("voxel_id\tx_mm\ty_mm\tz_mm\n1\t48\t15\t-27\n0\t-48\t15\t-27\n").unwrap();
        assert_eq!(g.coord(0), [-48.0, 15.0, -27.0]);
        assert_eq!(g.mirror_index(), vec![Some(1), Some(0)]);
        let dup = parse_geometry("voxel_id\tx_mm\ty_mm\tz_mm\n0\t1\t1\t1\n0\t2\t2\t2\n");
        assert!(matches!(dup, Err(MatioError::DuplicateVoxel(0))));
        let gap = parse_geometry("voxel_id\tx_mm\ty_mm\tz_mm\n0\t1\t1\t1\n2\t2\t2\t2\n");
        assert!(matches!(gap, Err(MatioError::VoxelIdRange { id: 2, n: 2 })));
    }

    #[test]
    fn mask_roundtrip() {
        let m = Mask::from_ids(6, [1, 4], "m").unwrap();
        assert_eq!(parse_mask(&format_mask(&m), 6, "m").unwrap(), m);
        assert!(matches!(
            parse_mask("voxel_id\n9\n", 6, "m"),
            Err(MatioError::VoxelIdRange { id: 9, n: 6 })
        ));
    }

    #[test]
    fn parcel_labels() {
        let text = "voxel_id\tparcel_id\tparcel_name\themisphere\n0\t1\tAngular\tL\n1\t2\tAngular\tR\n";
        let p = parse_parcel_labels(text, 3).unwrap();
        assert_eq!(p.labels[1].as_ref().unwrap().hemisphere, Hemisphere::Right);
        assert!(p.labels[2].is_none());
        let bad = "voxel_id\tparcel_id\tparcel_name\themisphere\n0\t1\tA\tL\n1\t1\tB\tL\n";
        assert!(parse_parcel_labels(bad, 3).is_err());
    }
}
