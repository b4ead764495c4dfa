//! Training data from a model of user interaction.
//!
//! A random dashboard state is sampled (one range per attribute), then expanded
//! into the group-by queries a dashboard refresh would issue: for every
//! attribute, one query per bin (or heatmap cell) with that attribute's range
//! replaced by the singleton and every other selection held fixed.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_state, ManyHotQuery};
use crate::error::{Error, Result};
use crate::oracle::ColumnStore;
use crate::schema::Schema;
use crate::state::{Range, Selection, SelectionState};

const SET_MAGIC: &[u8; 4] = b"NCTS";
const SET_VERSION: u32 = 1;

pub const DEFAULT_STATES_PER_BATCH: usize = 8;

/// How a single range selection is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// Lower bound uniform over all bins, then upper bound uniform over the valid ones.
    /// Favors short ranges.
    LowerBoundFirst,
    /// Length uniform over `1..=m`, then start uniform over the valid ones.
    /// Favors long ranges; the default.
    #[default]
    LengthFirst,
}

impl SamplingStrategy {
    pub fn tag(self) -> u8 {
        match self {
            SamplingStrategy::LowerBoundFirst => 1,
            SamplingStrategy::LengthFirst => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(SamplingStrategy::LowerBoundFirst),
            2 => Ok(SamplingStrategy::LengthFirst),
            t => Err(Error::Format(format!("unknown sampling strategy tag {t}"))),
        }
    }
}

pub fn sample_range_lower_bound_first<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Range {
    let lo = rng.random_range(0..m);
    let hi = rng.random_range(lo + 1..=m);
    Range::new(lo, hi)
}

pub fn sample_range_length_first<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Range {
    let len = rng.random_range(1..=m);
    let lo = rng.random_range(0..=m - len);
    Range::new(lo, lo + len)
}

pub fn sample_range<R: Rng + ?Sized>(strategy: SamplingStrategy, m: usize, rng: &mut R) -> Range {
    match strategy {
        SamplingStrategy::LowerBoundFirst => sample_range_lower_bound_first(m, rng),
        SamplingStrategy::LengthFirst => sample_range_length_first(m, rng),
    }
}

/// Independent range per attribute; geospatial attributes get one per axis.
pub fn sample_state<R: Rng + ?Sized>(schema: &Schema, strategy: SamplingStrategy, rng: &mut R) -> SelectionState {
    let selections = schema
        .attributes()
        .iter()
        .map(|a| match a.axis_bins().as_slice() {
            [xb, yb] => Selection::Rect {
                x: sample_range(strategy, *xb, rng),
                y: sample_range(strategy, *yb, rng),
            },
            [m] => Selection::Linear(sample_range(strategy, *m, rng)),
            _ => unreachable!(),
        })
        .collect();
    SelectionState::new(schema, selections).expect("sampled ranges are in bounds")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub query: ManyHotQuery,
    pub target: f64,
    pub state_id: u32,
    /// The target is an average over zero records, stored as 0.
    pub empty: bool,
}

/// The query for group-by cell `j` of attribute `attr` under `state`.
pub fn group_query(schema: &Schema, state: &SelectionState, attr: usize, j: usize) -> ManyHotQuery {
    let spec = &schema.attributes()[attr];
    encode_state(schema, &state.with(attr, Selection::group_cell(spec, j)))
}

/// Every group-by query of one state, in schema order, with oracle answers.
pub fn expand_state(store: &ColumnStore, state: &SelectionState, state_id: u32) -> Result<Vec<TrainingSample>> {
    let schema = store.schema();
    let groups = store.group_by_all(state)?;
    let mut out = Vec::with_capacity(schema.samples_per_state());
    for (attr, g) in groups.into_iter().enumerate() {
        for (j, (&target, &empty)) in g.values.iter().zip(&g.empty).enumerate() {
            out.push(TrainingSample {
                query: group_query(schema, state, attr, j),
                target,
                state_id,
                empty,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub fingerprint: u64,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub input_width: usize,
    /// Samples of state `i` occupy `samples[i * per_state..(i + 1) * per_state]`.
    pub per_state: usize,
    pub samples: Vec<TrainingSample>,
}

/// A mini-batch made of every sample of a few whole states.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub states: Vec<usize>,
    pub samples: Vec<&'a TrainingSample>,
}

impl TrainingSet {
    pub fn n_states(&self) -> usize {
        self.samples.len().checked_div(self.per_state).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_samples(&self, state: usize) -> &[TrainingSample] {
        &self.samples[state * self.per_state..(state + 1) * self.per_state]
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.target)
    }

    /// One epoch: states shuffled, then chunked into groups of `states_per_batch`.
    pub fn make_batches<'a, R: Rng + ?Sized>(
        &'a self,
        states_per_batch: usize,
        rng: &mut R,
    ) -> impl Iterator<Item = Batch<'a>> + 'a {
        assert!(states_per_batch >= 1, "states_per_batch must be positive");
        let mut order: Vec<usize> = (0..self.n_states()).collect();
        order.shuffle(rng);
        let chunks: Vec<Vec<usize>> = order.chunks(states_per_batch).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |states| {
            let samples = states.iter().flat_map(|&s| self.state_samples(s)).collect();
            Batch { states, samples }
        })
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let fp = schema.fingerprint();
        if fp != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: fp,
                found: self.fingerprint,
            });
        }
        Ok(())
    }

    /// `NCTS` file: magic, version u32, fingerprint u64, seed u64, strategy u8,
    /// state count u32, sample count u64, input width u32, per-state count u32;
    /// then per sample: state id u32, packed query bits, target f64, empty flag u8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let qbytes = self.input_width.div_ceil(8);
        let mut buf = Vec::with_capacity(41 + self.samples.len() * (13 + qbytes));
        buf.extend_from_slice(SET_MAGIC);
        buf.extend_from_slice(&SET_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.push(self.strategy.tag());
        buf.extend_from_slice(&(self.n_states() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.input_width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.per_state as u32).to_le_bytes());
        for s in &self.samples {
            buf.extend_from_slice(&s.state_id.to_le_bytes());
            buf.extend_from_slice(s.query.as_bytes());
            buf.extend_from_slice(&s.target.to_le_bytes());
            buf.push(u8::from(s.empty));
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::bytes::Reader::new(bytes);
        if r.take(4)? != SET_MAGIC {
            return Err(Error::Format("not a training set (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SET_VERSION,
            });
        }
        let fingerprint = r.u64()?;
        let seed = r.u64()?;
        let strategy = SamplingStrategy::from_tag(r.u8()?)?;
        let n_states = r.u32()? as usize;
        let n_samples = r.u64()? as usize;
        let input_width = r.u32()? as usize;
        let per_state = r.u32()? as usize;
        if n_states * per_state != n_samples {
            return Err(Error::Format("sample count does not match state count".into()));
        }
        let qbytes = input_width.div_ceil(8);
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let state_id = r.u32()?;
            let query = ManyHotQuery::from_bytes(input_width, r.take(qbytes)?.to_vec())?;
            let target = r.f64()?;
            let empty = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("bad empty flag {b}"))),
            };
            samples.push(TrainingSample {
                query,
                target,
                state_id,
                empty,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after training set".into()));
        }
        Ok(TrainingSet {
            fingerprint,
            strategy,
            seed,
            input_width,
            per_state,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Samples `n_states` states (state 0 is always the all-full default view) and
/// expands each against the oracle.
pub fn generate(store: &ColumnStore, n_states: usize, strategy: SamplingStrategy, seed: u64) -> Result<TrainingSet> {
    if n_states == 0 {
        return Err(Error::InvalidArgument("n_states must be at least 1".into()));
    }
    let schema = store.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_state = schema.samples_per_state();
    let mut samples = Vec::with_capacity(n_states * per_state);
    for id in 0..n_states {
        let state = if id == 0 {
            SelectionState::full(schema)
        } else {
            sample_state(schema, strategy, &mut rng)
        };
        samples.extend(expand_state(store, &state, id as u32)?);
    }
    Ok(TrainingSet {
        fingerprint: schema.fingerprint(),
        strategy,
        seed,
        input_width: schema.input_width(),
        per_state,
        samples,
    })
}

/// Seed for the held-out set, derived so it never coincides with the training seed.
pub fn test_seed(train_seed: u64) -> u64 {
    train_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Held-out set: same strategy, independent seed, 10% of the training states.
pub fn generate_test(
    store: &ColumnStore,
    train_states: usize,
    strategy: SamplingStrategy,
    train_seed: u64,
) -> Result<TrainingSet> {
    generate(store, (train_states / 10).max(1), strategy, test_seed(train_seed))
}
