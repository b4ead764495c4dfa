//! Many-hot input vectors.
//!
//! A 1-D attribute with `m` bins becomes `m` bits with ones on the selected
//! range. A geospatial rectangle becomes the x-range bits followed by the
//! y-range bits. Segments are concatenated in schema order.

use crate::error::{Error, Result};
use crate::schema::{AttributeSpec, Schema};
use crate::state::{Range, Selection, SelectionState};

/// Fixed-width bit vector, packed LSB-first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManyHotQuery {
    width: usize,
    bits: Vec<u8>,
}

impl ManyHotQuery {
    pub fn zeros(width: usize) -> Self {
        ManyHotQuery {
            width,
            bits: vec![0; width.div_ceil(8)],
        }
    }

    pub fn from_bytes(width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width.div_ceil(8) {
            return Err(Error::Shape(format!(
                "{} bytes cannot hold a {width}-bit query",
                bits.len()
            )));
        }
        let q = ManyHotQuery { width, bits };
        // Padding bits must be clear so equal queries compare equal.
        if (width..q.bits.len() * 8).any(|i| q.bits[i / 8] >> (i % 8) & 1 == 1) {
            return Err(Error::MalformedQuery("padding bits set".into()));
        }
        Ok(q)
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut q = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v == 1.0 {
                q.set(i);
            } else if v != 0.0 {
                return Err(Error::MalformedQuery(format!("entry {i} is {v}, not 0 or 1")));
            }
        }
        Ok(q)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        self.bits[i / 8] |= 1 << (i % 8);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Writes the query as 0.0/1.0 values into `out` (length `width`).
    pub fn write_values(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        for (i, v) in out.iter_mut().enumerate() {
            *v = if self.get(i) { 1.0 } else { 0.0 };
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        self.write_values(&mut v);
        v
    }

    fn fill(&mut self, offset: usize, r: Range) {
        for j in r.lo..r.hi {
            self.set(offset + j);
        }
    }
}

pub fn encode_state(schema: &Schema, state: &SelectionState) -> ManyHotQuery {
    let mut q = ManyHotQuery::zeros(schema.input_width());
    for ((sel, spec), off) in state.selections().iter().zip(schema.attributes()).zip(schema.offsets()) {
        match *sel {
            Selection::Linear(r) => q.fill(off, r),
            Selection::Rect { x, y } => {
                q.fill(off, x);
                q.fill(off + spec.axis_bins()[0], y);
            }
        }
    }
    q
}

fn decode_run(q: &ManyHotQuery, offset: usize, len: usize, name: &str) -> Result<Range> {
    let ones: Vec<usize> = (0..len).filter(|&j| q.get(offset + j)).collect();
    let (Some(&lo), Some(&last)) = (ones.first(), ones.last()) else {
        return Err(Error::MalformedQuery(format!("attribute `{name}`: no bits set")));
    };
    if last - lo + 1 != ones.len() {
        return Err(Error::MalformedQuery(format!(
            "attribute `{name}`: ones are not contiguous"
        )));
    }
    Ok(Range::new(lo, last + 1))
}

pub fn decode_query(schema: &Schema, q: &ManyHotQuery) -> Result<SelectionState> {
    if q.width() != schema.input_width() {
        return Err(Error::Shape(format!(
            "query width {} != schema input width {}",
            q.width(),
            schema.input_width()
        )));
    }
    let mut selections = Vec::with_capacity(schema.len());
    for (spec, off) in schema.attributes().iter().zip(schema.offsets()) {
        let sel = match spec.axis_bins().as_slice() {
            [xb, yb] => Selection::Rect {
                x: decode_run(q, off, *xb, &spec.name)?,
                y: decode_run(q, off + xb, *yb, &spec.name)?,
            },
            [m] => Selection::Linear(decode_run(q, off, *m, &spec.name)?),
            _ => unreachable!(),
        };
        selections.push(sel);
    }
    SelectionState::new(schema, selections)
}

/// Every contiguous range of a 1-D attribute, ordered by length then start.
pub fn enumerate_ranges(spec: &AttributeSpec) -> Result<Vec<Range>> {
    if spec.is_geo() {
        return Err(Error::Unsupported(format!(
            "range enumeration for geospatial attribute `{}`",
            spec.name
        )));
    }
    let m = spec.cardinality();
    Ok((1..=m)
        .flat_map(|len| (0..=m - len).map(move |lo| Range::new(lo, lo + len)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{brightkite_like, AttributeKind, Measure};
    use proptest::prelude::*;

    fn one_attr(m: usize) -> Schema {
        Schema::new(
            vec![AttributeSpec::numeric(
                "a",
                AttributeKind::BinnedContinuous,
                m,
                0.0,
                1.0,
            )],
            Measure::Count,
        )
        .unwrap()
    }

    #[test]
    fn linear_segment() {
        let s = one_attr(5);
        let st = SelectionState::new(&s, vec![Selection::Linear(Range::new(1, 3))]).unwrap();
        let q = encode_state(&s, &st);
        assert_eq!(q.to_values(), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(decode_query(&s, &q).unwrap(), st);
    }

    #[test]
    fn full_state_is_all_ones() {
        let s = brightkite_like();
        let q = encode_state(&s, &SelectionState::full(&s));
        assert_eq!(q.count_ones(), 83);
        assert_eq!(decode_query(&s, &q).unwrap(), SelectionState::full(&s));
    }

    #[test]
    fn geo_concatenation_layout() {
        let s = brightkite_like();
        let st = SelectionState::full(&s).with(
            3,
            Selection::Rect {
                x: Range::new(2, 4),
                y: Range::new(0, 1),
            },
        );
        let q = encode_state(&s, &st);
        let geo: Vec<usize> = (0..40).filter(|&j| q.get(43 + j)).collect();
        assert_eq!(geo, vec![2, 3, 20]);
    }

    #[test]
    fn non_contiguous_is_malformed() {
        let s = one_attr(5);
        let q = ManyHotQuery::from_values(&[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(decode_query(&s, &q), Err(Error::MalformedQuery(_))));
        let z = ManyHotQuery::zeros(5);
        assert!(matches!(decode_query(&s, &z), Err(Error::MalformedQuery(_))));
        assert!(ManyHotQuery::from_values(&[0.5]).is_err());
    }

    #[test]
    fn range_enumeration() {
        let s = brightkite_like();
        assert_eq!(enumerate_ranges(&s.attributes()[2]).unwrap().len(), 300);
        assert!(enumerate_ranges(&s.attributes()[3]).is_err());
        let one = one_attr(1);
        assert_eq!(enumerate_ranges(&one.attributes()[0]).unwrap(), vec![Range::new(0, 1)]);
        let three = one_attr(3);
        assert_eq!(
            enumerate_ranges(&three.attributes()[0]).unwrap(),
            vec![
                Range::new(0, 1),
                Range::new(1, 2),
                Range::new(2, 3),
                Range::new(0, 2),
                Range::new(1, 3),
                Range::new(0, 3)
            ]
        );
    }

    fn arb_range(m: usize) -> impl Strategy<Value = Range> {
        (0..m).prop_flat_map(move |lo| (lo + 1..=m).prop_map(move |hi| Range::new(lo, hi)))
    }

    proptest! {
        #[test]
        fn encode_decode_inverse(
            month in arb_range(12), dow in arb_range(7), hour in arb_range(24),
            gx in arb_range(20), gy in arb_range(20),
        ) {
            let s = brightkite_like();
            let st = SelectionState::new(&s, vec![
                Selection::Linear(month), Selection::Linear(dow), Selection::Linear(hour),
                Selection::Rect { x: gx, y: gy },
            ]).unwrap();
            let q = encode_state(&s, &st);
            prop_assert_eq!(q.count_ones(), month.len() + dow.len() + hour.len() + gx.len() + gy.len());
            prop_assert_eq!(decode_query(&s, &q).unwrap(), st);
        }

        #[test]
        fn enumeration_is_complete(m in 1usize..40) {
            let s = one_attr(m);
            let ranges = enumerate_ranges(&s.attributes()[0]).unwrap();
            prop_assert_eq!(ranges.len(), m * (m + 1) / 2);
            let uniq: std::collections::HashSet<_> = ranges.iter().collect();
            prop_assert_eq!(uniq.len(), ranges.len());
        }
    }
}
