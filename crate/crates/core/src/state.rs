//! Selection states: one half-open bin range per attribute.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSpec, Schema};

/// Half-open interval `[lo, hi)` over bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Range {
    pub lo: usize,
    pub hi: usize,
}

impl Range {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Range { lo, hi }
    }

    pub const fn full(bins: usize) -> Self {
        Range { lo: 0, hi: bins }
    }

    pub const fn singleton(j: usize) -> Self {
        Range { lo: j, hi: j + 1 }
    }

    pub const fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub const fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub const fn contains(&self, j: usize) -> bool {
        self.lo <= j && j < self.hi
    }

    fn is_valid(&self, bins: usize) -> bool {
        self.lo < self.hi && self.hi <= bins
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selection {
    Linear(Range),
    Rect { x: Range, y: Range },
}

impl Selection {
    pub fn full(spec: &AttributeSpec) -> Self {
        match spec.axis_bins().as_slice() {
            [x, y] => Selection::Rect {
                x: Range::full(*x),
                y: Range::full(*y),
            },
            [m] => Selection::Linear(Range::full(*m)),
            _ => unreachable!("attributes have one or two axes"),
        }
    }

    /// The `j`-th group-by cell of an attribute. Geospatial cells are numbered
    /// row-major with y outer: `j = y * x_bins + x`.
    pub fn group_cell(spec: &AttributeSpec, j: usize) -> Self {
        match spec.axis_bins().as_slice() {
            [xb, _] => Selection::Rect {
                x: Range::singleton(j % xb),
                y: Range::singleton(j / xb),
            },
            _ => Selection::Linear(Range::singleton(j)),
        }
    }

    pub fn linear(&self) -> Option<Range> {
        match self {
            Selection::Linear(r) => Some(*r),
            Selection::Rect { .. } => None,
        }
    }

    fn check(&self, spec: &AttributeSpec) -> Result<()> {
        let ok = match (self, spec.axis_bins().as_slice()) {
            (Selection::Linear(r), [m]) => r.is_valid(*m),
            (Selection::Rect { x, y }, [xb, yb]) => x.is_valid(*xb) && y.is_valid(*yb),
            _ => {
                return Err(Error::InvalidState(format!(
                    "attribute `{}`: selection shape does not match kind {}",
                    spec.name, spec.kind
                )))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidState(format!(
                "attribute `{}`: range out of bounds or empty: {self}",
                spec.name
            )))
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Linear(r) => write!(f, "{r}"),
            Selection::Rect { x, y } => write!(f, "x{x} y{y}"),
        }
    }
}

/// One selection per attribute, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionState {
    selections: Vec<Selection>,
}

impl SelectionState {
    /// Validates against the schema.
    pub fn new(schema: &Schema, selections: Vec<Selection>) -> Result<Self> {
        if selections.len() != schema.len() {
            return Err(Error::InvalidState(format!(
                "expected {} selections, got {}",
                schema.len(),
                selections.len()
            )));
        }
        for (sel, spec) in selections.iter().zip(schema.attributes()) {
            sel.check(spec)?;
        }
        Ok(SelectionState { selections })
    }

    /// The default dashboard view: every attribute fully selected.
    pub fn full(schema: &Schema) -> Self {
        SelectionState {
            selections: schema.attributes().iter().map(Selection::full).collect(),
        }
    }

    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }

    pub fn get(&self, attr: usize) -> Selection {
        self.selections[attr]
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        Self::new(schema, self.selections.clone()).map(|_| ())
    }

    /// Copy with attribute `attr` replaced. The replacement is not validated.
    pub fn with(&self, attr: usize, sel: Selection) -> Self {
        let mut next = self.clone();
        next.selections[attr] = sel;
        next
    }

    /// Wire form: `{name: {lo, hi}}` or `{name: {x: {lo, hi}, y: {lo, hi}}}`.
    pub fn to_wire(&self, schema: &Schema) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (sel, spec) in self.selections.iter().zip(schema.attributes()) {
            let v = match *sel {
                Selection::Linear(r) => WireSelection::Linear(r),
                Selection::Rect { x, y } => WireSelection::Rect { x, y },
            };
            map.insert(spec.name.clone(), serde_json::to_value(v).expect("plain data"));
        }
        serde_json::Value::Object(map)
    }

    /// Parses the wire form. Attributes absent from the object are fully selected.
    pub fn from_wire(schema: &Schema, value: &serde_json::Value) -> Result<Self> {
        let obj = match value {
            serde_json::Value::Null => return Ok(Self::full(schema)),
            serde_json::Value::Object(o) => o,
            other => return Err(Error::InvalidState(format!("state must be an object, got {other}"))),
        };
        for key in obj.keys() {
            schema.attribute(key)?;
        }
        let mut selections = Vec::with_capacity(schema.len());
        for spec in schema.attributes() {
            let sel = match obj.get(&spec.name) {
                None | Some(serde_json::Value::Null) => Selection::full(spec),
                Some(v) => match serde_json::from_value::<WireSelection>(v.clone()) {
                    Ok(WireSelection::Linear(r)) => Selection::Linear(r),
                    Ok(WireSelection::Rect { x, y }) => Selection::Rect { x, y },
                    Err(e) => return Err(Error::InvalidState(format!("attribute `{}`: {e}", spec.name))),
                },
            };
            selections.push(sel);
        }
        Self::new(schema, selections)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireSelection {
    Rect { x: Range, y: Range },
    Linear(Range),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::brightkite_like;

    #[test]
    fn full_state_is_valid() {
        let s = brightkite_like();
        let st = SelectionState::full(&s);
        st.validate(&s).unwrap();
        assert_eq!(st.get(2), Selection::Linear(Range::new(0, 24)));
    }

    #[test]
    fn empty_and_out_of_bounds_rejected() {
        let s = brightkite_like();
        let full = SelectionState::full(&s);
        assert!(full.with(0, Selection::Linear(Range::new(3, 3))).validate(&s).is_err());
        assert!(full.with(0, Selection::Linear(Range::new(3, 13))).validate(&s).is_err());
        assert!(full.with(3, Selection::Linear(Range::new(0, 1))).validate(&s).is_err());
    }

    #[test]
    fn geo_cells_are_y_outer() {
        let s = brightkite_like();
        let geo = &s.attributes()[3];
        assert_eq!(
            Selection::group_cell(geo, 21),
            Selection::Rect {
                x: Range::singleton(1),
                y: Range::singleton(1)
            }
        );
        assert_eq!(
            Selection::group_cell(geo, 20),
            Selection::Rect {
                x: Range::singleton(0),
                y: Range::singleton(1)
            }
        );
    }

    #[test]
    fn wire_round_trip_and_defaults() {
        let s = brightkite_like();
        let st = SelectionState::full(&s)
            .with(0, Selection::Linear(Range::new(2, 5)))
            .with(
                3,
                Selection::Rect {
                    x: Range::new(1, 4),
                    y: Range::new(0, 2),
                },
            );
        let wire = st.to_wire(&s);
        assert_eq!(wire["month"], serde_json::json!({"lo": 2, "hi": 5}));
        assert_eq!(SelectionState::from_wire(&s, &wire).unwrap(), st);

        let partial = serde_json::json!({"hour": {"lo": 8, "hi": 9}});
        let parsed = SelectionState::from_wire(&s, &partial).unwrap();
        assert_eq!(parsed.get(2), Selection::Linear(Range::new(8, 9)));
        assert_eq!(parsed.get(0), Selection::Linear(Range::full(12)));

        let unknown = serde_json::json!({"minute": {"lo": 0, "hi": 1}});
        assert!(SelectionState::from_wire(&s, &unknown).is_err());
    }
}
