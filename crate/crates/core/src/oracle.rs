//! Exact in-memory aggregation over binned records.
//!
//! The store keeps one dense `u16` bin column per axis (geospatial attributes
//! contribute an x and a y column) plus an optional measure column for averages.
//! Queries are plain scans with per-axis predicate lookup tables.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{Bin, Measure, Schema};
pub use crate::state::{Range, Selection, SelectionState};

const STORE_MAGIC: &[u8; 4] = b"NCST";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ColumnStore {
    schema: Schema,
    /// Axis columns in schema order.
    columns: Vec<Vec<u16>>,
    /// Index of the first axis column of each attribute.
    first_column: Vec<usize>,
    measure: Option<Vec<f64>>,
    len: usize,
}

/// Group-by result for one target attribute. Cells whose average would be
/// taken over zero records hold `0.0` and are flagged in `empty`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBy {
    pub values: Vec<f64>,
    pub empty: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
}

impl ColumnStore {
    pub fn new(schema: &Schema) -> Self {
        let mut first_column = Vec::with_capacity(schema.len());
        let mut ncols = 0;
        for a in schema.attributes() {
            first_column.push(ncols);
            ncols += a.axis_bins().len();
        }
        let measure = match schema.measure() {
            Measure::Count => None,
            Measure::Average { .. } => Some(Vec::new()),
        };
        ColumnStore {
            schema: schema.clone(),
            columns: vec![Vec::new(); ncols],
            first_column,
            measure,
            len: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bin index of record `row` on axis `axis` of attribute `attr`.
    pub fn bin(&self, attr: usize, axis: usize, row: usize) -> usize {
        self.columns[self.first_column[attr] + axis][row] as usize
    }

    pub fn measure_value(&self, row: usize) -> Option<f64> {
        self.measure.as_ref().map(|m| m[row])
    }

    /// Appends one already-binned record. `value` is required iff the measure is an average.
    pub fn push(&mut self, bins: &[Bin], value: Option<f64>) -> Result<()> {
        if bins.len() != self.schema.len() {
            return Err(Error::Shape(format!(
                "record has {} bins, schema has {} attributes",
                bins.len(),
                self.schema.len()
            )));
        }
        for (i, (bin, spec)) in bins.iter().zip(self.schema.attributes()).enumerate() {
            let ok = match (bin, spec.axis_bins().as_slice()) {
                (Bin::Linear(b), [m]) => b < m,
                (Bin::Cell { x, y }, [xb, yb]) => x < xb && y < yb,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "bin {bin:?} out of range for attribute `{}`",
                    self.schema.attributes()[i].name
                )));
            }
        }
        match (&mut self.measure, value) {
            (Some(m), Some(v)) if v.is_finite() => m.push(v),
            (None, None) => {}
            _ => return Err(Error::Shape("measure value presence does not match schema".into())),
        }
        for (i, bin) in bins.iter().enumerate() {
            let c = self.first_column[i];
            match *bin {
                Bin::Linear(b) => self.columns[c].push(b as u16),
                Bin::Cell { x, y } => {
                    self.columns[c].push(x as u16);
                    self.columns[c + 1].push(y as u16);
                }
            }
        }
        self.len += 1;
        Ok(())
    }

    pub fn ingest_csv(schema: &Schema, path: impl AsRef<Path>) -> Result<(Self, IngestReport)> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::ingest_reader(schema, file)
    }

    /// Reads RFC-4180 CSV with a header row. Rows with unparseable or
    /// out-of-domain cells are skipped and counted.
    pub fn ingest_reader<R: Read>(schema: &Schema, reader: R) -> Result<(Self, IngestReport)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let mut sources = Vec::with_capacity(schema.len());
        for a in schema.attributes() {
            let idx = a.columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
            sources.push(idx);
        }
        let measure_col = match schema.measure() {
            Measure::Count => None,
            Measure::Average { column } => Some(find(column)?),
        };

        let mut store = ColumnStore::new(schema);
        let mut report = IngestReport {
            accepted: 0,
            rejected: 0,
        };
        let mut bins = Vec::with_capacity(schema.len());
        let mut record = csv::StringRecord::new();
        loop {
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) if e.is_io_error() => return Err(e.into()),
                Err(_) => {
                    report.rejected += 1;
                    continue;
                }
            }
            bins.clear();
            let mut ok = true;
            for (spec, idx) in schema.attributes().iter().zip(&sources) {
                let cells: Option<Vec<&str>> = idx.iter().map(|&i| record.get(i)).collect();
                match cells.map(|c| spec.bin_text(&c)) {
                    Some(Ok(b)) => bins.push(b),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            let value = match measure_col {
                None => None,
                Some(i) => match record.get(i).and_then(|s| s.trim().parse::<f64>().ok()) {
                    Some(v) if v.is_finite() => Some(v),
                    _ => {
                        ok = false;
                        None
                    }
                },
            };
            if ok {
                store.push(&bins, value)?;
                report.accepted += 1;
            } else {
                report.rejected += 1;
            }
        }
        log::info!("ingested {} records ({} rejected)", report.accepted, report.rejected);
        Ok((store, report))
    }

    fn predicate_tables(&self, state: &SelectionState) -> Vec<Vec<bool>> {
        let mut tables = Vec::with_capacity(self.columns.len());
        for (sel, spec) in state.selections().iter().zip(self.schema.attributes()) {
            let ranges: Vec<Range> = match *sel {
                Selection::Linear(r) => vec![r],
                Selection::Rect { x, y } => vec![x, y],
            };
            for (r, bins) in ranges.iter().zip(spec.axis_bins()) {
                tables.push((0..bins).map(|j| r.contains(j)).collect());
            }
        }
        tables
    }

    /// `DB(S)`: count of matching records, or mean of their measure values.
    pub fn aggregate(&self, state: &SelectionState) -> Result<f64> {
        state.validate(&self.schema)?;
        let tables = self.predicate_tables(state);
        let mut count = 0u64;
        let mut sum = 0.0;
        for row in 0..self.len {
            let pass = self.columns.iter().zip(&tables).all(|(col, t)| t[col[row] as usize]);
            if pass {
                count += 1;
                if let Some(m) = &self.measure {
                    sum += m[row];
                }
            }
        }
        match self.measure {
            None => Ok(count as f64),
            Some(_) if count == 0 => Err(Error::EmptyAggregate),
            Some(_) => Ok(sum / count as f64),
        }
    }

    pub fn group_by(&self, state: &SelectionState, target: &str) -> Result<GroupBy> {
        let (idx, _) = self.schema.attribute(target)?;
        state.validate(&self.schema)?;
        let mut all = self.scan_groups(state, Some(idx));
        Ok(all.swap_remove(idx))
    }

    /// Group-by over every attribute in one pass: a record contributes to the
    /// histogram of attribute `a` iff it satisfies every selection except `a`'s.
    pub fn group_by_all(&self, state: &SelectionState) -> Result<Vec<GroupBy>> {
        state.validate(&self.schema)?;
        Ok(self.scan_groups(state, None))
    }

    fn scan_groups(&self, state: &SelectionState, only: Option<usize>) -> Vec<GroupBy> {
        let attrs = self.schema.attributes();
        let tables = self.predicate_tables(state);
        let sizes: Vec<usize> = attrs.iter().map(|a| a.group_size()).collect();
        let mut counts: Vec<Vec<u64>> = sizes.iter().map(|&n| vec![0; n]).collect();
        let mut sums: Vec<Vec<f64>> = match self.measure {
            Some(_) => sizes.iter().map(|&n| vec![0.0; n]).collect(),
            None => Vec::new(),
        };
        let geo_xbins: Vec<Option<usize>> = attrs
            .iter()
            .map(|a| match a.axis_bins().as_slice() {
                [xb, _] => Some(*xb),
                _ => None,
            })
            .collect();

        for row in 0..self.len {
            let mut failing = None;
            let mut fails = 0;
            for (a, &c) in self.first_column.iter().enumerate() {
                let mut pass = tables[c][self.columns[c][row] as usize];
                if geo_xbins[a].is_some() {
                    pass &= tables[c + 1][self.columns[c + 1][row] as usize];
                }
                if !pass {
                    fails += 1;
                    failing = Some(a);
                    if fails > 1 {
                        break;
                    }
                }
            }
            let targets = match (fails, failing) {
                (0, _) => None,
                (1, Some(a)) => Some(a),
                _ => continue,
            };
            let value = self.measure.as_ref().map(|m| m[row]);
            let mut credit = |a: usize| {
                let c = self.first_column[a];
                let cell = match geo_xbins[a] {
                    Some(xb) => self.columns[c + 1][row] as usize * xb + self.columns[c][row] as usize,
                    None => self.columns[c][row] as usize,
                };
                counts[a][cell] += 1;
                if let Some(v) = value {
                    sums[a][cell] += v;
                }
            };
            match (targets, only) {
                (Some(a), Some(o)) if a == o => credit(a),
                (Some(a), None) => credit(a),
                (None, Some(o)) => credit(o),
                (None, None) => (0..attrs.len()).for_each(&mut credit),
                _ => {}
            }
        }

        counts
            .into_iter()
            .enumerate()
            .map(|(a, c)| match self.measure {
                None => GroupBy {
                    values: c.iter().map(|&n| n as f64).collect(),
                    empty: vec![false; c.len()],
                },
                Some(_) => GroupBy {
                    values: c
                        .iter()
                        .zip(&sums[a])
                        .map(|(&n, &s)| if n == 0 { 0.0 } else { s / n as f64 })
                        .collect(),
                    empty: c.iter().map(|&n| n == 0).collect(),
                },
            })
            .collect()
    }

    /// Binary cache: `NCST`, version u32, record count u64, then the u16 bin
    /// columns and (for average measures) the f64 measure column, little-endian.
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + self.len * (2 * self.columns.len() + 8));
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len as u64).to_le_bytes());
        for col in &self.columns {
            for &b in col {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        if let Some(m) = &self.measure {
            for &v in m {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(schema: &Schema, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = crate::bytes::Reader::new(&bytes);
        if r.take(4)? != STORE_MAGIC {
            return Err(Error::Format("not a store cache (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: STORE_VERSION,
            });
        }
        let len = r.u64()? as usize;
        let mut store = ColumnStore::new(schema);
        let axis_bins: Vec<usize> = schema.attributes().iter().flat_map(|a| a.axis_bins()).collect();
        for (col, bins) in store.columns.iter_mut().zip(axis_bins) {
            col.reserve_exact(len);
            for _ in 0..len {
                let b = r.u16()?;
                if b as usize >= bins {
                    return Err(Error::Format(format!("bin index {b} out of range")));
                }
                col.push(b);
            }
        }
        if let Some(m) = &mut store.measure {
            m.reserve_exact(len);
            for _ in 0..len {
                m.push(r.f64()?);
            }
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after store cache".into()));
        }
        store.len = len;
        Ok(store)
    }
}
