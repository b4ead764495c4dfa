//! Application model: attributes, their discretization, and the aggregated measure.
//!
//! Every other module derives vector widths and network shapes from a [`Schema`].
//! Bins are uniform; a numeric value `v` in `[min, max]` maps to
//! `floor((v - min) / (max - min) * bins)`, with `v == max` clamped into the last bin.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Categorical,
    TemporalCyclic,
    BinnedContinuous,
    #[serde(rename = "geospatial-2d")]
    Geospatial2d,
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttributeKind::Categorical => "categorical",
            AttributeKind::TemporalCyclic => "temporal-cyclic",
            AttributeKind::BinnedContinuous => "binned-continuous",
            AttributeKind::Geospatial2d => "geospatial-2d",
        };
        f.write_str(s)
    }
}

/// One uniformly binned numeric axis, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub bins: usize,
    pub min: f64,
    pub max: f64,
}

impl Axis {
    pub fn bin(&self, v: f64) -> Option<usize> {
        if !v.is_finite() || v < self.min || v > self.max {
            return None;
        }
        let t = (v - self.min) / (self.max - self.min);
        let idx = (t * self.bins as f64).floor() as usize;
        Some(idx.min(self.bins - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Labels(Vec<String>),
    Numeric(Axis),
    Grid { x: Axis, y: Axis },
}

/// A raw cell value handed to [`AttributeSpec::bin_value`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue<'a> {
    Number(f64),
    Label(&'a str),
    Point(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bin {
    Linear(usize),
    Cell { x: usize, y: usize },
}

/// The value could not be placed in any bin; callers count and skip the record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub domain: Domain,
    /// CSV source columns: one for 1-D kinds, `[x, y]` for geospatial.
    pub columns: Vec<String>,
}

impl AttributeSpec {
    pub fn is_geo(&self) -> bool {
        matches!(self.domain, Domain::Grid { .. })
    }

    /// Number of bins of a 1-D attribute; for geospatial, the number of cells.
    pub fn cardinality(&self) -> usize {
        match &self.domain {
            Domain::Labels(l) => l.len(),
            Domain::Numeric(a) => a.bins,
            Domain::Grid { x, y } => x.bins * y.bins,
        }
    }

    /// Width of this attribute's segment in the many-hot input.
    pub fn encoding_width(&self) -> usize {
        match &self.domain {
            Domain::Grid { x, y } => x.bins + y.bins,
            _ => self.cardinality(),
        }
    }

    /// Number of group-by entries (histogram bars or heatmap cells).
    pub fn group_size(&self) -> usize {
        self.cardinality()
    }

    /// Bin counts per axis: `[m]` for 1-D kinds, `[x_bins, y_bins]` for geospatial.
    pub fn axis_bins(&self) -> Vec<usize> {
        match &self.domain {
            Domain::Grid { x, y } => vec![x.bins, y.bins],
            _ => vec![self.cardinality()],
        }
    }

    pub fn bin_value(&self, raw: RawValue<'_>) -> Result<Bin, Rejected> {
        let reject = || Rejected {
            attribute: self.name.clone(),
        };
        match (&self.domain, raw) {
            (Domain::Labels(labels), RawValue::Label(s)) => {
                labels.iter().position(|l| l == s).map(Bin::Linear).ok_or_else(reject)
            }
            (Domain::Numeric(axis), RawValue::Number(v)) => axis.bin(v).map(Bin::Linear).ok_or_else(reject),
            (Domain::Grid { x, y }, RawValue::Point(vx, vy)) => match (x.bin(vx), y.bin(vy)) {
                (Some(bx), Some(by)) => Ok(Bin::Cell { x: bx, y: by }),
                _ => Err(reject()),
            },
            _ => Err(reject()),
        }
    }

    /// Bins a CSV cell (or pair of cells for geospatial).
    pub fn bin_text(&self, cells: &[&str]) -> Result<Bin, Rejected> {
        let reject = || Rejected {
            attribute: self.name.clone(),
        };
        match &self.domain {
            Domain::Labels(_) => self.bin_value(RawValue::Label(cells[0].trim())),
            Domain::Numeric(_) => {
                let v: f64 = cells[0].trim().parse().map_err(|_| reject())?;
                self.bin_value(RawValue::Number(v))
            }
            Domain::Grid { .. } => {
                let vx: f64 = cells[0].trim().parse().map_err(|_| reject())?;
                let vy: f64 = cells[1].trim().parse().map_err(|_| reject())?;
                self.bin_value(RawValue::Point(vx, vy))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Measure {
    Count,
    Average { column: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    attributes: Vec<AttributeSpec>,
    measure: Measure,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>, measure: Measure) -> Result<Self> {
        let schema = Schema { attributes, measure };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaFile::from(self)).expect("schema serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, name: &str) -> Result<(usize, &AttributeSpec)> {
        self.attributes
            .iter()
            .enumerate()
            .find(|(_, a)| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn input_width(&self) -> usize {
        self.attributes.iter().map(AttributeSpec::encoding_width).sum()
    }

    /// Offset of each attribute's segment in the concatenated input.
    pub fn offsets(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .scan(0, |acc, a| {
                let off = *acc;
                *acc += a.encoding_width();
                Some(off)
            })
            .collect()
    }

    /// Sum of group sizes: the number of training samples one state expands to.
    pub fn samples_per_state(&self) -> usize {
        self.attributes.iter().map(AttributeSpec::group_size).sum()
    }

    /// Stable 64-bit identity of the canonical schema document.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(&SchemaFile::from(self)).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::schema("", "attributes", "schema has no attributes"));
        }
        let mut seen = HashSet::new();
        for a in &self.attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::schema(&a.name, "name", "duplicate attribute name"));
            }
            let expected_columns = if a.is_geo() { 2 } else { 1 };
            if a.columns.len() != expected_columns {
                return Err(Error::schema(
                    &a.name,
                    "columns",
                    format!("expected {expected_columns} source column(s)"),
                ));
            }
            match (&a.kind, &a.domain) {
                (AttributeKind::Categorical, Domain::Labels(labels)) => {
                    if labels.is_empty() {
                        return Err(Error::schema(&a.name, "labels", "cardinality is zero"));
                    }
                    let mut uniq = HashSet::new();
                    for l in labels {
                        if !uniq.insert(l) {
                            return Err(Error::schema(&a.name, "labels", format!("duplicate label `{l}`")));
                        }
                    }
                }
                (AttributeKind::TemporalCyclic | AttributeKind::BinnedContinuous, Domain::Numeric(axis)) => {
                    validate_axis(&a.name, "bins", "domain", axis)?
                }
                (AttributeKind::Geospatial2d, Domain::Grid { x, y }) => {
                    validate_axis(&a.name, "x_bins", "domain", x)?;
                    validate_axis(&a.name, "y_bins", "domain", y)?;
                }
                _ => {
                    return Err(Error::schema(
                        &a.name,
                        "kind",
                        format!("domain does not fit kind {}", a.kind),
                    ))
                }
            }
            // Bin indices are stored as u16.
            for bins in a.axis_bins() {
                if bins > u16::MAX as usize {
                    return Err(Error::schema(&a.name, "bins", "more than 65535 bins"));
                }
            }
        }
        Ok(())
    }
}

fn validate_axis(name: &str, bins_field: &str, domain_field: &str, axis: &Axis) -> Result<()> {
    if axis.bins == 0 {
        return Err(Error::schema(name, bins_field, "cardinality is zero"));
    }
    if !(axis.min.is_finite() && axis.max.is_finite() && axis.min < axis.max) {
        return Err(Error::schema(
            name,
            domain_field,
            format!("malformed domain [{}, {}]: need min < max", axis.min, axis.max),
        ));
    }
    Ok(())
}

// On-disk document.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    schema_version: u32,
    attributes: Vec<AttributeFile>,
    measure: Measure,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    name: String,
    kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_bins: Option<usize>,
    /// `[min, max]` for 1-D numeric kinds, `[[xmin, xmax], [ymin, ymax]]` for geospatial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<String>>,
}

fn parse_pair(name: &str, v: &serde_json::Value) -> Result<(f64, f64)> {
    let bad = || Error::schema(name, "domain", format!("expected [min, max], got {v}"));
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.len() != 2 {
        return Err(bad());
    }
    let lo = arr[0].as_f64().ok_or_else(bad)?;
    let hi = arr[1].as_f64().ok_or_else(bad)?;
    Ok((lo, hi))
}

impl TryFrom<SchemaFile> for Schema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut attributes = Vec::with_capacity(file.attributes.len());
        for a in file.attributes {
            let name = a.name.clone();
            let (domain, columns) = match a.kind {
                AttributeKind::Categorical => {
                    let labels = a
                        .labels
                        .ok_or_else(|| Error::schema(&name, "labels", "categorical needs labels"))?;
                    if let Some(b) = a.bins {
                        if b != labels.len() {
                            return Err(Error::schema(
                                &name,
                                "bins",
                                format!("bins {b} != {} labels", labels.len()),
                            ));
                        }
                    }
                    let col = a.column.unwrap_or_else(|| name.clone());
                    (Domain::Labels(labels), vec![col])
                }
                AttributeKind::TemporalCyclic | AttributeKind::BinnedContinuous => {
                    let bins = a
                        .bins
                        .ok_or_else(|| Error::schema(&name, "bins", "missing bin count"))?;
                    let (min, max) = match &a.domain {
                        Some(v) => parse_pair(&name, v)?,
                        // Cyclic attributes default to integer codes 0..bins.
                        None if a.kind == AttributeKind::TemporalCyclic => (0.0, bins as f64),
                        None => return Err(Error::schema(&name, "domain", "missing domain")),
                    };
                    let col = a.column.unwrap_or_else(|| name.clone());
                    (Domain::Numeric(Axis { bins, min, max }), vec![col])
                }
                AttributeKind::Geospatial2d => {
                    let x_bins = a
                        .x_bins
                        .ok_or_else(|| Error::schema(&name, "x_bins", "missing x bin count"))?;
                    let y_bins = a
                        .y_bins
                        .ok_or_else(|| Error::schema(&name, "y_bins", "missing y bin count"))?;
                    let dom = a
                        .domain
                        .ok_or_else(|| Error::schema(&name, "domain", "missing domain"))?;
                    let axes = dom
                        .as_array()
                        .filter(|v| v.len() == 2)
                        .ok_or_else(|| Error::schema(&name, "domain", "expected [[xmin, xmax], [ymin, ymax]]"))?;
                    let (xmin, xmax) = parse_pair(&name, &axes[0])?;
                    let (ymin, ymax) = parse_pair(&name, &axes[1])?;
                    let cols = a
                        .columns
                        .unwrap_or_else(|| vec![format!("{name}_x"), format!("{name}_y")]);
                    (
                        Domain::Grid {
                            x: Axis {
                                bins: x_bins,
                                min: xmin,
                                max: xmax,
                            },
                            y: Axis {
                                bins: y_bins,
                                min: ymin,
                                max: ymax,
                            },
                        },
                        cols,
                    )
                }
            };
            attributes.push(AttributeSpec {
                name,
                kind: a.kind,
                domain,
                columns,
            });
        }
        Schema::new(attributes, file.measure)
    }
}

impl From<&Schema> for SchemaFile {
    fn from(s: &Schema) -> Self {
        let attributes = s
            .attributes
            .iter()
            .map(|a| {
                let mut f = AttributeFile {
                    name: a.name.clone(),
                    kind: a.kind,
                    bins: None,
                    x_bins: None,
                    y_bins: None,
                    domain: None,
                    labels: None,
                    column: None,
                    columns: None,
                };
                match &a.domain {
                    Domain::Labels(l) => {
                        f.bins = Some(l.len());
                        f.labels = Some(l.clone());
                        f.column = Some(a.columns[0].clone());
                    }
                    Domain::Numeric(axis) => {
                        f.bins = Some(axis.bins);
                        f.domain = Some(serde_json::json!([axis.min, axis.max]));
                        f.column = Some(a.columns[0].clone());
                    }
                    Domain::Grid { x, y } => {
                        f.x_bins = Some(x.bins);
                        f.y_bins = Some(y.bins);
                        f.domain = Some(serde_json::json!([[x.min, x.max], [y.min, y.max]]));
                        f.columns = Some(a.columns.clone());
                    }
                }
                f
            })
            .collect();
        SchemaFile {
            schema_version: SCHEMA_VERSION,
            attributes,
            measure: s.measure.clone(),
        }
    }
}

impl Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SchemaFile::from(self).serialize(serializer)
    }
}

/// Convenience constructors, mostly used by tests and the synthetic data generator.
impl AttributeSpec {
    pub fn numeric(name: &str, kind: AttributeKind, bins: usize, min: f64, max: f64) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind,
            domain: Domain::Numeric(Axis { bins, min, max }),
            columns: vec![name.to_string()],
        }
    }

    pub fn categorical(name: &str, labels: &[&str]) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind: AttributeKind::Categorical,
            domain: Domain::Labels(labels.iter().map(|s| s.to_string()).collect()),
            columns: vec![name.to_string()],
        }
    }

    pub fn geo(name: &str, x: Axis, y: Axis) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind: AttributeKind::Geospatial2d,
            domain: Domain::Grid { x, y },
            columns: vec![format!("{name}_x"), format!("{name}_y")],
        }
    }
}

/// Month(12), day-of-week(7), hour(24), and a 20x20 geographic grid.
pub fn brightkite_like() -> Schema {
    Schema::new(
        vec![
            AttributeSpec::numeric("month", AttributeKind::TemporalCyclic, 12, 0.0, 12.0),
            AttributeSpec::numeric("dayofweek", AttributeKind::TemporalCyclic, 7, 0.0, 7.0),
            AttributeSpec::numeric("hour", AttributeKind::TemporalCyclic, 24, 0.0, 24.0),
            AttributeSpec::geo(
                "geo",
                Axis {
                    bins: 20,
                    min: -74.3,
                    max: -73.7,
                },
                Axis {
                    bins: 20,
                    min: 40.5,
                    max: 40.9,
                },
            ),
        ],
        Measure::Count,
    )
    .expect("valid built-in schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRIGHTKITE: &str = r#"{
        "schema_version": 1,
        "attributes": [
            {"name": "month", "kind": "temporal-cyclic", "bins": 12, "domain": [1, 13]},
            {"name": "dayofweek", "kind": "temporal-cyclic", "bins": 7},
            {"name": "hour", "kind": "temporal-cyclic", "bins": 24},
            {"name": "geo", "kind": "geospatial-2d", "x_bins": 20, "y_bins": 20,
             "domain": [[-74.3, -73.7], [40.5, 40.9]], "columns": ["lon", "lat"]}
        ],
        "measure": {"type": "count"}
    }"#;

    #[test]
    fn brightkite_width_is_83() {
        let s = Schema::from_json(BRIGHTKITE).unwrap();
        assert_eq!(s.input_width(), 83);
        assert_eq!(s.samples_per_state(), 12 + 7 + 24 + 400);
        assert_eq!(s.offsets(), vec![0, 12, 19, 43]);
        assert_eq!(brightkite_like().input_width(), 83);
    }

    #[test]
    fn single_bin_categorical_is_valid() {
        let s = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "c", "kind": "categorical", "labels": ["only"]}],
                "measure": {"type": "count"}}"#,
        )
        .unwrap();
        assert_eq!(s.input_width(), 1);
    }

    #[test]
    fn duplicate_name_is_reported() {
        let err = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "hour", "kind": "temporal-cyclic", "bins": 24},
                               {"name": "hour", "kind": "temporal-cyclic", "bins": 24}],
                "measure": {"type": "count"}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hour") && msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn zero_bins_and_bad_domain_rejected() {
        let zero = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "x", "kind": "binned-continuous", "bins": 0, "domain": [0, 1]}],
                "measure": {"type": "count"}}"#,
        )
        .unwrap_err();
        assert!(zero.to_string().contains("`bins`"), "{zero}");

        let dom = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "x", "kind": "binned-continuous", "bins": 3, "domain": [5, 5]}],
                "measure": {"type": "count"}}"#,
        )
        .unwrap_err();
        assert!(dom.to_string().contains("`domain`"), "{dom}");
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "x", "kind": "polar", "bins": 3}],
                "measure": {"type": "count"}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        let err = Schema::from_json(
            r#"{"schema_version": 1,
                "attributes": [{"name": "c", "kind": "categorical", "labels": ["a", "a"]}],
                "measure": {"type": "count"}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate label"));
    }

    #[test]
    fn uniform_binning() {
        let a = AttributeSpec::numeric("v", AttributeKind::BinnedContinuous, 5, 0.0, 10.0);
        assert_eq!(a.bin_value(RawValue::Number(7.3)), Ok(Bin::Linear(3)));
        assert_eq!(a.bin_value(RawValue::Number(0.0)), Ok(Bin::Linear(0)));
        assert_eq!(a.bin_value(RawValue::Number(10.0)), Ok(Bin::Linear(4)));
        assert!(a.bin_value(RawValue::Number(10.01)).is_err());
        assert!(a.bin_value(RawValue::Number(-0.1)).is_err());
        assert!(a.bin_value(RawValue::Number(f64::NAN)).is_err());
    }

    #[test]
    fn label_binning() {
        let a = AttributeSpec::categorical("c", &["x", "y", "z"]);
        assert_eq!(a.bin_value(RawValue::Label("z")), Ok(Bin::Linear(2)));
        assert!(a.bin_value(RawValue::Label("w")).is_err());
    }

    #[test]
    fn geo_binning_and_width() {
        let s = brightkite_like();
        let geo = &s.attributes()[3];
        assert_eq!(geo.encoding_width(), 40);
        assert_eq!(geo.group_size(), 400);
        assert_eq!(
            geo.bin_value(RawValue::Point(-74.3, 40.9)),
            Ok(Bin::Cell { x: 0, y: 19 })
        );
    }

    #[test]
    fn json_round_trip_keeps_fingerprint() {
        let s = Schema::from_json(BRIGHTKITE).unwrap();
        let again = Schema::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.fingerprint(), again.fingerprint());
        assert_ne!(s.fingerprint(), brightkite_like().fingerprint());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bins_in_range_and_monotone(
                bins in 1usize..200,
                min in -1e3f64..1e3,
                span in 1e-3f64..1e4,
                a in 0.0f64..=1.0,
                b in 0.0f64..=1.0,
            ) {
                let axis = Axis { bins, min, max: min + span };
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let va = min + lo * span;
                let vb = (min + hi * span).min(axis.max);
                let ba = axis.bin(va).unwrap();
                let bb = axis.bin(vb).unwrap();
                prop_assert!(ba < bins && bb < bins);
                prop_assert!(ba <= bb);
            }
        }
    }
}
