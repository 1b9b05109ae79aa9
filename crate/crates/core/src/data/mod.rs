//! Hierarchical datasets keyed by (school, child, wave), wide/long
//! reshaping and cluster dummy indicators.
//!
//! Missing cells are `None`. Numeric kernels obtain plain `f64` slices via
//! [`require_complete`], which rejects both `None` and NaN.

mod csvio;

pub use csvio::{read_long, read_wide, write_long, write_wide};

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;

pub type Cell = Option<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierIndex {
    pub school: u32,
    pub child: u32,
    pub wave: Option<u8>,
}

impl HierIndex {
    pub fn child_key(&self) -> (u32, u32) {
        (self.school, self.child)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Outcome,
    Exposure,
    Confounder,
    Auxiliary,
    Derived,
    Id,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// Time-varying (level 1).
    Occasion,
    /// Constant within child (level 2).
    Child,
    /// Constant within school (level 3).
    School,
}

impl Level {
    pub fn number(self) -> u8 {
        match self {
            Level::Occasion => 1,
            Level::Child => 2,
            Level::School => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Product(String, String),
    Square(String),
}

impl Derivation {
    pub fn parents(&self) -> Vec<&str> {
        match self {
            Derivation::Product(a, b) => vec![a, b],
            Derivation::Square(a) => vec![a],
        }
    }

    pub fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            Derivation::Product(..) => a * b,
            Derivation::Square(_) => a * a,
        }
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivation::Product(a, b) => write!(f, "{a}*{b}"),
            Derivation::Square(a) => write!(f, "{a}^2"),
        }
    }
}

impl FromStr for Derivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(base) = s.strip_suffix("^2") {
            return Ok(Derivation::Square(base.to_string()));
        }
        match s.split_once('*') {
            Some((a, b)) => Ok(Derivation::Product(a.to_string(), b.to_string())),
            None => Err(Error::Structure(format!("bad derivation formula `{s}`"))),
        }
    }
}

/// Column descriptor. `wave_offset` applies to time-varying columns only:
/// the value on the row for analysis wave `k` was measured at wave
/// `k + wave_offset` (the exposure and auxiliary carry `-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMeta {
    pub name: String,
    pub role: Role,
    pub level: Level,
    pub wave_offset: i8,
    pub derivation: Option<Derivation>,
}

impl ColumnMeta {
    pub fn new(name: &str, role: Role, level: Level) -> Self {
        Self { name: name.to_string(), role, level, wave_offset: 0, derivation: None }
    }

    pub fn lagged(mut self, offset: i8) -> Self {
        self.wave_offset = offset;
        self
    }

    pub fn derived(mut self, d: Derivation) -> Self {
        self.derivation = Some(d);
        self
    }

    fn wide_name(&self, wave: u8) -> String {
        format!("{}{}", self.name, wave as i16 + self.wave_offset as i16)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub meta: ColumnMeta,
    pub values: Vec<Cell>,
}

impl Column {
    pub fn new(meta: ColumnMeta, values: Vec<Cell>) -> Self {
        Self { meta, values }
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Convert a column to plain floats, rejecting missing cells and NaN.
pub fn require_complete(name: &str, values: &[Cell]) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(row, v)| match v {
            Some(x) if !x.is_nan() => Ok(*x),
            _ => Err(Error::MissingValue { column: name.to_string(), row }),
        })
        .collect()
}

/// Read access shared by long and wide datasets (used by the model fitter).
pub trait Frame {
    fn index(&self) -> &[HierIndex];
    fn columns(&self) -> &[Column];

    fn n_rows(&self) -> usize {
        self.index().len()
    }

    fn column(&self, name: &str) -> Option<&Column> {
        self.columns().iter().find(|c| c.meta.name == name)
    }

    /// Values of a named column. `wave` resolves to the row's wave index
    /// when no stored column carries that name.
    fn cells(&self, name: &str) -> Result<Cow<'_, [Cell]>> {
        if let Some(c) = self.column(name) {
            return Ok(Cow::Borrowed(&c.values));
        }
        if name == "wave" && self.index().iter().all(|h| h.wave.is_some()) {
            return Ok(Cow::Owned(self.index().iter().map(|h| h.wave.map(f64::from)).collect()));
        }
        Err(Error::UnknownColumn(name.to_string()))
    }

    fn complete(&self, name: &str) -> Result<Vec<f64>> {
        require_complete(name, &self.cells(name)?)
    }

    fn school_ids(&self) -> Vec<u32> {
        self.index().iter().map(|h| h.school).collect()
    }
}

fn check_lengths(n: usize, columns: &[Column]) -> Result<()> {
    for c in columns {
        if c.values.len() != n {
            return Err(Error::Structure(format!(
                "column `{}` has {} values, expected {n}",
                c.meta.name,
                c.values.len()
            )));
        }
    }
    let mut seen = BTreeSet::new();
    for c in columns {
        if !seen.insert(c.meta.name.as_str()) {
            return Err(Error::Structure(format!("duplicate column `{}`", c.meta.name)));
        }
    }
    Ok(())
}

fn same_cell(a: Cell, b: Cell) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

/// Check level-2 constancy within child and level-3 constancy within school.
fn check_levels(index: &[HierIndex], columns: &[Column]) -> Result<()> {
    for c in columns {
        let key: fn(&HierIndex) -> (u32, u32) = match c.meta.level {
            Level::Occasion => continue,
            Level::Child => |h| (h.school, h.child),
            Level::School => |h| (h.school, 0),
        };
        let mut first: HashMap<(u32, u32), Cell> = HashMap::new();
        for (h, v) in index.iter().zip(&c.values) {
            let k = key(h);
            match first.get(&k) {
                Some(prev) if !same_cell(*prev, *v) => {
                    return Err(Error::Structure(format!(
                        "level-{} column `{}` varies within school {} child {}",
                        c.meta.level.number(),
                        c.meta.name,
                        h.school,
                        h.child
                    )))
                }
                Some(_) => {}
                None => {
                    first.insert(k, *v);
                }
            }
        }
    }
    Ok(())
}

/// One row per (school, child, wave).
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset {
    index: Vec<HierIndex>,
    columns: Vec<Column>,
}

impl LongDataset {
    /// Rows are sorted by index; keys must be unique and carry a wave.
    pub fn new(index: Vec<HierIndex>, columns: Vec<Column>) -> Result<Self> {
        check_lengths(index.len(), &columns)?;
        if let Some(h) = index.iter().find(|h| h.wave.is_none()) {
            return Err(Error::Structure(format!(
                "long row for school {} child {} has no wave",
                h.school, h.child
            )));
        }
        let mut order: Vec<usize> = (0..index.len()).collect();
        order.sort_by_key(|&i| index[i]);
        for w in order.windows(2) {
            if index[w[0]] == index[w[1]] {
                let h = index[w[0]];
                return Err(Error::Structure(format!(
                    "duplicate row school {} child {} wave {:?}",
                    h.school, h.child, h.wave
                )));
            }
        }
        let sorted = order.windows(2).all(|w| w[0] < w[1]);
        let (index, columns) = if sorted {
            (index, columns)
        } else {
            let idx = order.iter().map(|&i| index[i]).collect();
            let cols = columns
                .into_iter()
                .map(|c| Column { values: order.iter().map(|&i| c.values[i]).collect(), meta: c.meta })
                .collect();
            (idx, cols)
        };
        check_levels(&index, &columns)?;
        Ok(Self { index, columns })
    }

    pub fn waves(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.index.iter().filter_map(|h| h.wave).collect();
        set.into_iter().collect()
    }

    pub fn check_levels(&self) -> Result<()> {
        check_levels(&self.index, &self.columns)
    }

    /// Same rows and metadata, with one column's values replaced.
    pub fn with_values(&self, name: &str, values: Vec<Cell>) -> Result<Self> {
        let mut out = self.clone();
        out.set_values(name, values)?;
        Ok(out)
    }

    pub(crate) fn set_values(&mut self, name: &str, values: Vec<Cell>) -> Result<()> {
        if values.len() != self.index.len() {
            return Err(Error::Structure(format!("replacement for `{name}` has wrong length")));
        }
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.meta.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        col.values = values;
        Ok(())
    }

    pub fn with_column(&self, column: Column) -> Result<Self> {
        let mut cols = self.columns.clone();
        cols.push(column);
        Self::new(self.index.clone(), cols)
    }

    /// Row positions grouped by child, in row order.
    pub fn child_rows(&self) -> Vec<((u32, u32), Vec<usize>)> {
        group_rows(&self.index, |h| h.child_key())
    }
}

impl Frame for LongDataset {
    fn index(&self) -> &[HierIndex] {
        &self.index
    }
    fn columns(&self) -> &[Column] {
        &self.columns
    }
}

pub(crate) fn group_rows<K: Ord + Copy>(index: &[HierIndex], key: impl Fn(&HierIndex) -> K) -> Vec<(K, Vec<usize>)> {
    let mut map: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, h) in index.iter().enumerate() {
        map.entry(key(h)).or_default().push(i);
    }
    map.into_iter().collect()
}

/// One row per (school, child). Time-varying variables appear as one
/// column per measurement wave named `<base><wave>`.
#[derive(Debug, Clone, PartialEq)]
pub struct WideDataset {
    index: Vec<HierIndex>,
    columns: Vec<Column>,
    /// Analysis waves of the originating long layout.
    waves: Vec<u8>,
    /// Long-format descriptors of the time-varying variables.
    time_varying: Vec<ColumnMeta>,
}

impl WideDataset {
    pub fn new(
        index: Vec<HierIndex>,
        columns: Vec<Column>,
        waves: Vec<u8>,
        time_varying: Vec<ColumnMeta>,
    ) -> Result<Self> {
        check_lengths(index.len(), &columns)?;
        let mut keys = BTreeSet::new();
        for h in &index {
            if h.wave.is_some() {
                return Err(Error::Structure("wide rows must not carry a wave".into()));
            }
            if !keys.insert(h.child_key()) {
                return Err(Error::Structure(format!(
                    "duplicate wide row school {} child {}",
                    h.school, h.child
                )));
            }
        }
        if index.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Structure("wide rows must be sorted by (school, child)".into()));
        }
        let out = Self { index, columns, waves, time_varying };
        out.layout()?;
        check_levels(&out.index, &out.columns)?;
        Ok(out)
    }

    pub fn waves(&self) -> &[u8] {
        &self.waves
    }

    pub fn time_varying(&self) -> &[ColumnMeta] {
        &self.time_varying
    }

    /// Resolve every wide column to either a baseline column or a
    /// (time-varying base, wave) pair, enforcing the canonical ordering:
    /// per-wave columns of one base are contiguous and in wave order.
    fn layout(&self) -> Result<Vec<Slot>> {
        let mut lookup: HashMap<String, (usize, usize)> = HashMap::new();
        for (b, meta) in self.time_varying.iter().enumerate() {
            for (w, &wave) in self.waves.iter().enumerate() {
                lookup.insert(meta.wide_name(wave), (b, w));
            }
        }
        let mut slots = Vec::with_capacity(self.columns.len());
        let mut i = 0;
        let mut seen_bases = BTreeSet::new();
        while i < self.columns.len() {
            let c = &self.columns[i];
            if c.meta.level != Level::Occasion {
                slots.push(Slot::Baseline(i));
                i += 1;
                continue;
            }
            let (b, w) = *lookup.get(&c.meta.name).ok_or_else(|| {
                Error::Structure(format!("wide column `{}` has an unknown wave suffix", c.meta.name))
            })?;
            if w != 0 || !seen_bases.insert(b) {
                return Err(Error::Structure(format!(
                    "per-wave columns of `{}` are not contiguous in wave order",
                    self.time_varying[b].name
                )));
            }
            for (k, _) in self.waves.iter().enumerate() {
                let expected = self.time_varying[b].wide_name(self.waves[k]);
                match self.columns.get(i + k) {
                    Some(cc) if cc.meta.name == expected => {}
                    _ => {
                        return Err(Error::Structure(format!(
                            "expected wide column `{expected}` for `{}`",
                            self.time_varying[b].name
                        )))
                    }
                }
            }
            slots.push(Slot::TimeVarying { base: b, first: i });
            i += self.waves.len();
        }
        if seen_bases.len() != self.time_varying.len() {
            return Err(Error::Structure("registered time-varying variable has no wide columns".into()));
        }
        Ok(slots)
    }

    pub fn with_values(&self, name: &str, values: Vec<Cell>) -> Result<Self> {
        let mut out = self.clone();
        out.set_values(name, values)?;
        Ok(out)
    }

    pub(crate) fn set_values(&mut self, name: &str, values: Vec<Cell>) -> Result<()> {
        if values.len() != self.index.len() {
            return Err(Error::Structure(format!("replacement for `{name}` has wrong length")));
        }
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.meta.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        col.values = values;
        Ok(())
    }

    /// Append a time-varying variable given its long descriptor and
    /// per-wave values (outer index: wave position).
    pub fn with_time_varying(&self, meta: ColumnMeta, per_wave: Vec<Vec<Cell>>) -> Result<Self> {
        if per_wave.len() != self.waves.len() {
            return Err(Error::Structure("per-wave values do not match the wave set".into()));
        }
        let mut out = self.clone();
        for (k, values) in per_wave.into_iter().enumerate() {
            let mut m = meta.clone();
            m.name = meta.wide_name(self.waves[k]);
            m.derivation = meta.derivation.as_ref().map(|d| wide_derivation(d, &self.time_varying, self.waves[k]));
            out.columns.push(Column::new(m, values));
        }
        out.time_varying.push(meta);
        Self::new(out.index, out.columns, out.waves, out.time_varying)
    }

    /// Per-wave wide column name of a time-varying base.
    pub fn wide_name(&self, base: &str, wave: u8) -> Option<String> {
        self.time_varying.iter().find(|m| m.name == base).map(|m| m.wide_name(wave))
    }
}

fn wide_derivation(d: &Derivation, tv: &[ColumnMeta], wave: u8) -> Derivation {
    let name = |p: &String| match tv.iter().find(|m| &m.name == p) {
        Some(m) => m.wide_name(wave),
        None => p.clone(),
    };
    match d {
        Derivation::Product(a, b) => Derivation::Product(name(a), name(b)),
        Derivation::Square(a) => Derivation::Square(name(a)),
    }
}

enum Slot {
    Baseline(usize),
    TimeVarying { base: usize, first: usize },
}

impl Frame for WideDataset {
    fn index(&self) -> &[HierIndex] {
        &self.index
    }
    fn columns(&self) -> &[Column] {
        &self.columns
    }
}

/// Long to wide: one row per child, time-varying columns split per wave.
pub fn reshape_wide(data: &LongDataset) -> Result<WideDataset> {
    let waves = data.waves();
    let children = data.child_rows();
    let mut index = Vec::with_capacity(children.len());
    let mut rows_by_wave: Vec<Vec<usize>> = Vec::with_capacity(children.len());
    for (key, rows) in &children {
        let got: Vec<u8> = rows.iter().map(|&r| data.index[r].wave.unwrap()).collect();
        if got != waves {
            return Err(Error::Structure(format!(
                "unbalanced panel: school {} child {} has waves {got:?}, expected {waves:?}",
                key.0, key.1
            )));
        }
        index.push(HierIndex { school: key.0, child: key.1, wave: None });
        rows_by_wave.push(rows.clone());
    }
    let mut columns = Vec::new();
    let mut time_varying = Vec::new();
    for c in &data.columns {
        if c.meta.level == Level::Occasion {
            for (k, &wave) in waves.iter().enumerate() {
                let mut meta = c.meta.clone();
                meta.name = c.meta.wide_name(wave);
                meta.derivation = c.meta.derivation.as_ref().map(|d| wide_derivation(d, &data_tv(data), wave));
                let values = rows_by_wave.iter().map(|rows| c.values[rows[k]]).collect();
                columns.push(Column::new(meta, values));
            }
            time_varying.push(c.meta.clone());
        } else {
            let values = rows_by_wave.iter().map(|rows| c.values[rows[0]]).collect();
            columns.push(Column::new(c.meta.clone(), values));
        }
    }
    WideDataset::new(index, columns, waves, time_varying)
}

fn data_tv(data: &LongDataset) -> Vec<ColumnMeta> {
    data.columns.iter().filter(|c| c.meta.level == Level::Occasion).map(|c| c.meta.clone()).collect()
}

/// Wide to long: inverse of [`reshape_wide`].
pub fn reshape_long(data: &WideDataset) -> Result<LongDataset> {
    let slots = data.layout()?;
    let nw = data.waves.len();
    let n = data.index.len() * nw;
    let mut index = Vec::with_capacity(n);
    for h in &data.index {
        for &w in &data.waves {
            index.push(HierIndex { school: h.school, child: h.child, wave: Some(w) });
        }
    }
    let mut columns = Vec::new();
    for slot in slots {
        match slot {
            Slot::Baseline(i) => {
                let c = &data.columns[i];
                let values = c.values.iter().flat_map(|v| std::iter::repeat_n(*v, nw)).collect();
                columns.push(Column::new(c.meta.clone(), values));
            }
            Slot::TimeVarying { base, first } => {
                let mut values = Vec::with_capacity(n);
                for r in 0..data.index.len() {
                    for k in 0..nw {
                        values.push(data.columns[first + k].values[r]);
                    }
                }
                columns.push(Column::new(data.time_varying[base].clone(), values));
            }
        }
    }
    LongDataset::new(index, columns)
}

/// `I - 1` dummy indicators for `I` distinct clusters; the smallest id is
/// the reference and encodes as an all-zero row.
pub fn build_dummy_indicators(cluster_ids: &[u32]) -> DesignMatrix {
    let distinct: BTreeSet<u32> = cluster_ids.iter().copied().collect();
    let levels: Vec<u32> = distinct.into_iter().skip(1).collect();
    let labels = levels.iter().map(|id| format!("school_{id}")).collect();
    let pos: HashMap<u32, usize> = levels.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut m = DesignMatrix::zeros(cluster_ids.len(), labels);
    for (i, id) in cluster_ids.iter().enumerate() {
        if let Some(&k) = pos.get(id) {
            m.row_mut(i)[k] = 1.0;
        }
    }
    m
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Outcome => "outcome",
            Role::Exposure => "exposure",
            Role::Confounder => "confounder",
            Role::Auxiliary => "auxiliary",
            Role::Derived => "derived",
            Role::Id => "id",
            Role::Time => "time",
        };
        f.write_str(s)
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "outcome" => Role::Outcome,
            "exposure" => Role::Exposure,
            "confounder" => Role::Confounder,
            "auxiliary" => Role::Auxiliary,
            "derived" => Role::Derived,
            "id" => Role::Id,
            "time" => Role::Time,
            other => return Err(Error::Structure(format!("unknown column role `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn toy_long(children: &[(u32, u32)], waves: &[u8]) -> LongDataset {
        let mut index = Vec::new();
        for &(s, c) in children {
            for &w in waves {
                index.push(HierIndex { school: s, child: c, wave: Some(w) });
            }
        }
        let n = index.len();
        let dep: Vec<Cell> = (0..n).map(|i| if i % 4 == 1 { None } else { Some(i as f64 * 0.5 - 1.0) }).collect();
        let napz: Vec<Cell> = (0..n).map(|i| Some(i as f64)).collect();
        let ses: Vec<Cell> = index.iter().map(|h| Some(h.child as f64 * 0.1)).collect();
        LongDataset::new(
            index,
            vec![
                Column::new(ColumnMeta::new("napz", Role::Outcome, Level::Occasion), napz),
                Column::new(ColumnMeta::new("dep", Role::Exposure, Level::Occasion).lagged(-1), dep),
                Column::new(ColumnMeta::new("ses", Role::Confounder, Level::Child), ses),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_two_children_three_waves() {
        let long = toy_long(&[(1, 1), (1, 2)], &[3, 5, 7]);
        let wide = reshape_wide(&long).unwrap();
        assert_eq!(wide.n_rows(), 2);
        // 2 time-varying variables x 3 waves + 1 baseline
        assert_eq!(wide.columns().len(), 7);
        let names: Vec<&str> = wide.columns().iter().map(|c| c.name()).collect();
        assert_eq!(names, ["napz3", "napz5", "napz7", "dep2", "dep4", "dep6", "ses"]);
        assert_eq!(reshape_long(&wide).unwrap(), long);
    }

    #[test]
    fn single_wave_panel() {
        let long = toy_long(&[(1, 1), (2, 1)], &[3]);
        let wide = reshape_wide(&long).unwrap();
        let names: Vec<&str> = wide.columns().iter().map(|c| c.name()).collect();
        assert_eq!(names, ["napz3", "dep2", "ses"]);
        assert_eq!(reshape_long(&wide).unwrap(), long);
    }

    #[test]
    fn hand_table_places_cells_exactly() {
        // child 1: dep2 = 0.5, dep4 missing; child 2: dep2 = -1, dep4 = 2
        let index = vec![
            HierIndex { school: 1, child: 1, wave: Some(3) },
            HierIndex { school: 1, child: 1, wave: Some(5) },
            HierIndex { school: 1, child: 2, wave: Some(3) },
            HierIndex { school: 1, child: 2, wave: Some(5) },
        ];
        let dep = vec![Some(0.5), None, Some(-1.0), Some(2.0)];
        let long = LongDataset::new(
            index,
            vec![Column::new(ColumnMeta::new("dep", Role::Exposure, Level::Occasion).lagged(-1), dep)],
        )
        .unwrap();
        let wide = reshape_wide(&long).unwrap();
        assert_eq!(wide.column("dep2").unwrap().values, vec![Some(0.5), Some(-1.0)]);
        assert_eq!(wide.column("dep4").unwrap().values, vec![None, Some(2.0)]);
        let missing: usize = wide.columns().iter().map(Column::n_missing).sum();
        assert_eq!(missing, 1);
    }

    #[test]
    fn one_child_wide_row_expands_to_three_waves() {
        let long = toy_long(&[(4, 9)], &[3, 5, 7]);
        let wide = reshape_wide(&long).unwrap();
        let back = reshape_long(&wide).unwrap();
        let waves: Vec<Option<u8>> = back.index().iter().map(|h| h.wave).collect();
        assert_eq!(waves, vec![Some(3), Some(5), Some(7)]);
    }

    #[test]
    fn all_missing_variable_stays_missing() {
        let long = toy_long(&[(1, 1), (1, 2)], &[3, 5, 7]);
        let wide = reshape_wide(&long).unwrap();
        let mut wide2 = wide.clone();
        for name in ["dep2", "dep4", "dep6"] {
            wide2.set_values(name, vec![None, None]).unwrap();
        }
        let back = reshape_long(&wide2).unwrap();
        assert!(back.column("dep").unwrap().values.iter().all(Option::is_none));
    }

    #[test]
    fn unbalanced_panel_names_child() {
        let mut index = vec![];
        for w in [3u8, 5, 7] {
            index.push(HierIndex { school: 1, child: 1, wave: Some(w) });
        }
        index.push(HierIndex { school: 2, child: 8, wave: Some(3) });
        let long = LongDataset::new(
            index,
            vec![Column::new(ColumnMeta::new("y", Role::Outcome, Level::Occasion), vec![Some(1.0); 4])],
        )
        .unwrap();
        let err = reshape_wide(&long).unwrap_err().to_string();
        assert!(err.contains("school 2 child 8"), "{err}");
    }

    #[test]
    fn unknown_suffix_is_structural_error() {
        let long = toy_long(&[(1, 1)], &[3, 5, 7]);
        let wide = reshape_wide(&long).unwrap();
        let mut cols = wide.columns().to_vec();
        cols[3].meta.name = "dep9".into();
        let err = WideDataset::new(wide.index().to_vec(), cols, wide.waves().to_vec(), wide.time_varying().to_vec());
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn level_two_constancy_checked() {
        let index = vec![
            HierIndex { school: 1, child: 1, wave: Some(3) },
            HierIndex { school: 1, child: 1, wave: Some(5) },
        ];
        let err = LongDataset::new(
            index,
            vec![Column::new(ColumnMeta::new("ses", Role::Confounder, Level::Child), vec![Some(1.0), Some(2.0)])],
        );
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn dummy_indicators_hand_enumerated() {
        let m = build_dummy_indicators(&[3, 1, 2, 1]);
        assert_eq!(m.labels, vec!["school_2", "school_3"]);
        assert_eq!(m.row(0), &[0.0, 1.0]);
        assert_eq!(m.row(1), &[0.0, 0.0]);
        assert_eq!(m.row(2), &[1.0, 0.0]);
        assert_eq!(m.row(3), &[0.0, 0.0]);
        assert_eq!(m.column_sums(), vec![1.0, 1.0]);
    }

    #[test]
    fn dummy_indicator_counts() {
        let ids: Vec<u32> = (1..=40).flat_map(|s| std::iter::repeat_n(s, 3)).collect();
        let m = build_dummy_indicators(&ids);
        assert_eq!(m.cols(), 39);
        assert!(crate::linalg::collinear_columns(&m.gram(), &m.labels).is_empty());
        assert_eq!(build_dummy_indicators(&[5, 5, 5]).cols(), 0);
        let empty = build_dummy_indicators(&[]);
        assert_eq!((empty.rows, empty.cols()), (0, 0));
    }

    #[test]
    fn complete_view_rejects_missing_and_nan() {
        assert!(require_complete("x", &[Some(1.0), None]).is_err());
        assert!(require_complete("x", &[Some(f64::NAN)]).is_err());
        assert_eq!(require_complete("x", &[Some(1.0)]).unwrap(), vec![1.0]);
    }

    proptest! {
        #[test]
        fn reshape_round_trip_preserves_cells(
            n_children in 1usize..6,
            cells in proptest::collection::vec(proptest::option::of(-5.0f64..5.0), 18),
        ) {
            let children: Vec<(u32, u32)> = (0..n_children).map(|c| (1 + (c as u32 % 2), c as u32 + 1)).collect();
            let mut long = toy_long(&children, &[3, 5, 7]);
            let n = long.n_rows();
            long.set_values("dep", cells[..n].to_vec()).unwrap();
            let wide = reshape_wide(&long).unwrap();
            let back = reshape_long(&wide).unwrap();
            prop_assert_eq!(&back, &long);
            prop_assert_eq!(reshape_wide(&back).unwrap(), wide);
        }
    }
}
