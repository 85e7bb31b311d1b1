//! Value pools for random placeholders and generated data.
//!
//! A default pool file is embedded in the binary; `--pools` swaps in another
//! file with the same schema.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::suite::{DataKind, SEMANTIC_POOLS};

pub const DEFAULT_POOLS: &str = include_str!("../data/pools.yaml");

const FORBIDDEN: &[char] = &[',', '"', '\'', '\n', '\r'];

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("cannot read pool file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed pool file: {0}")]
    Malformed(String),
    #[error("pool `{0}` is missing or empty")]
    Empty(String),
    #[error("pool `{pool}` value {value:?} contains a forbidden character")]
    BadValue { pool: String, value: String },
    #[error("entity {0:?} is not a lowercase path-safe word")]
    BadEntity(String),
    #[error("numeric range `{name}` is inverted: {min} > {max}")]
    Range { name: String, min: i64, max: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from_year: i32,
    pub to_year: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPools {
    pub version: u32,
    pub entities: Vec<String>,
    pub semantic: BTreeMap<String, Vec<String>>,
    pub numeric: BTreeMap<String, (i64, i64)>,
    pub dates: DateRange,
    pub lorem: Vec<String>,
}

/// One generated cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellValue {
    Int(i64),
    Text(String),
}

impl CellValue {
    pub fn render(&self) -> String {
        match self {
            CellValue::Int(i) => i.to_string(),
            CellValue::Text(s) => s.clone(),
        }
    }
}

impl DataPools {
    /// The embedded default pools.
    pub fn default_pools() -> DataPools {
        DataPools::from_yaml(DEFAULT_POOLS).expect("embedded pool file is valid")
    }

    pub fn from_yaml(source: &str) -> Result<DataPools, PoolError> {
        let pools: DataPools = serde_yaml::from_str(source).map_err(|e| PoolError::Malformed(e.to_string()))?;
        pools.check()?;
        Ok(pools)
    }

    pub fn load(path: &Path) -> Result<DataPools, PoolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PoolError::Io { path: path.display().to_string(), source })?;
        DataPools::from_yaml(&text)
    }

    fn check(&self) -> Result<(), PoolError> {
        if self.entities.is_empty() {
            return Err(PoolError::Empty("entities".into()));
        }
        for e in &self.entities {
            let ok = !e.is_empty()
                && e.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
            if !ok {
                return Err(PoolError::BadEntity(e.clone()));
            }
        }
        for name in SEMANTIC_POOLS.iter().filter(|p| **p != "date") {
            match self.semantic.get(*name) {
                Some(v) if !v.is_empty() => {}
                _ => return Err(PoolError::Empty((*name).to_string())),
            }
        }
        for (pool, values) in self.semantic.iter().chain([(&"lorem".to_string(), &self.lorem)]) {
            if values.is_empty() {
                return Err(PoolError::Empty(pool.clone()));
            }
            if let Some(v) = values.iter().find(|v| v.is_empty() || v.contains(FORBIDDEN)) {
                return Err(PoolError::BadValue { pool: pool.clone(), value: v.clone() });
            }
        }
        if let Some(w) = self.lorem.iter().find(|w| w.chars().any(char::is_whitespace)) {
            return Err(PoolError::BadValue { pool: "lorem".into(), value: w.clone() });
        }
        for name in ["age", "price", "currency", "salary", "score"] {
            match self.numeric.get(name) {
                None => return Err(PoolError::Empty(name.to_string())),
                Some(&(min, max)) if min > max => return Err(PoolError::Range { name: name.into(), min, max }),
                Some(_) => {}
            }
        }
        if self.dates.from_year > self.dates.to_year {
            return Err(PoolError::Range {
                name: "dates".into(),
                min: self.dates.from_year.into(),
                max: self.dates.to_year.into(),
            });
        }
        Ok(())
    }

    /// A uniformly drawn value from a semantic pool. `date` yields an ISO date.
    pub fn draw_semantic<R: Rng + ?Sized>(&self, pool: &str, rng: &mut R) -> Option<String> {
        if pool == "date" {
            return Some(self.random_date(rng));
        }
        self.semantic.get(pool)?.choose(rng).cloned()
    }

    /// ISO-8601 date uniform over the configured years.
    pub fn random_date<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let year = rng.random_range(self.dates.from_year..=self.dates.to_year);
        let month = rng.random_range(1..=12u32);
        let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        let days = match month {
            2 if leap => 29,
            2 => 28,
            4 | 6 | 9 | 11 => 30,
            _ => 31,
        };
        let day = rng.random_range(1..=days);
        format!("{year:04}-{month:02}-{day:02}")
    }

    pub fn lorem_word<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        self.lorem.choose(rng).expect("lorem pool checked non-empty")
    }

    /// Draw one cell of the given kind. `Id` has no random value; callers
    /// assign sequence numbers themselves.
    pub fn draw<R: Rng + ?Sized>(&self, kind: DataKind, rng: &mut R) -> CellValue {
        if let Some(range) = kind.numeric_range() {
            let (min, max) = self.numeric[range];
            return CellValue::Int(rng.random_range(min..=max));
        }
        if let Some(pool) = kind.semantic_pool() {
            return CellValue::Text(self.draw_semantic(pool, rng).expect("semantic pool checked non-empty"));
        }
        match kind {
            DataKind::Date => CellValue::Text(self.random_date(rng)),
            DataKind::EntityPool => {
                CellValue::Text(self.entities.choose(rng).expect("entity pool checked non-empty").clone())
            }
            DataKind::Id => panic!("id columns are sequence-numbered, not drawn"),
            _ => unreachable!("every data kind is numeric, semantic, date or entity"),
        }
    }
}
