use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::kg::{EntityType, KnowledgeGraph};

use super::DataError;

/// Per-region indicator values, keyed by indicator then region id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionIndicatorTable {
    values: BTreeMap<String, BTreeMap<String, f64>>,
}

impl RegionIndicatorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, region: &str, indicator: &str, value: f64) -> Result<(), DataError> {
        if !value.is_finite() {
            return Err(DataError::Parse {
                file: "<table>".into(),
                line: 0,
                msg: format!("non-finite value for {region}/{indicator}"),
            });
        }
        let slot = self.values.entry(indicator.to_string()).or_default();
        if slot.insert(region.to_string(), value).is_some() {
            return Err(DataError::Duplicate {
                region: region.into(),
                indicator: indicator.into(),
            });
        }
        Ok(())
    }

    pub fn indicators(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get(&self, region: &str, indicator: &str) -> Option<f64> {
        self.values.get(indicator)?.get(region).copied()
    }

    pub fn len(&self) -> usize {
        self.values.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of `indicator` for `regions`, in that order.
    pub fn values_for(&self, indicator: &str, regions: &[String]) -> Result<Vec<f64>, DataError> {
        let col = self
            .values
            .get(indicator)
            .ok_or_else(|| DataError::UnknownIndicator(indicator.to_string()))?;
        regions
            .iter()
            .map(|r| {
                col.get(r).copied().ok_or_else(|| DataError::MissingValue {
                    region: r.clone(),
                    indicator: indicator.to_string(),
                })
            })
            .collect()
    }

    /// Checks every row names an existing Region.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<(), DataError> {
        for col in self.values.values() {
            for region in col.keys() {
                let ix = kg
                    .entity_index(region)
                    .ok_or_else(|| DataError::UnknownRegion(region.clone()))?;
                if kg.entity(ix).etype != EntityType::Region {
                    return Err(DataError::NotARegion(region.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let parse_err = |line: usize, msg: String| DataError::Parse {
            file: origin.to_string(),
            line,
            msg,
        };
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["region_id", "indicator", "value"] {
            return Err(parse_err(
                1,
                "header must be `region_id,indicator,value`".into(),
            ));
        }
        let mut table = Self::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != 3 {
                return Err(parse_err(
                    line,
                    format!("expected 3 fields, found {}", rec.len()),
                ));
            }
            let value: f64 = rec[2]
                .parse()
                .map_err(|_| parse_err(line, format!("bad value `{}`", &rec[2])))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{}`", &rec[2])));
            }
            table.insert(&rec[0], &rec[1], value).map_err(|e| match e {
                DataError::Duplicate { .. } => parse_err(line, e.to_string()),
                other => other,
            })?;
        }
        Ok(table)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
        Self::parse_csv(&text, &p.display().to_string())
    }

    /// Rows sorted by indicator, then region id.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["region_id", "indicator", "value"])
            .expect("in-memory write");
        for (ind, col) in &self.values {
            for (region, v) in col {
                w.write_record([region.as_str(), ind.as_str(), &format!("{v}")])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let p = path.as_ref();
        fs::write(p, self.to_csv()).map_err(|e| DataError::io(p, e))
    }
}
