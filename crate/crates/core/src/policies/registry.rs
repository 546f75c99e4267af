//! Name-keyed construction of policies and the shared Gittins table cache.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Cause, Gittins, Myopic, Oracle, Policy, PredictiveSampling, Thompson, Ucb};
use crate::error::{Error, Result};
use crate::gittins::{build_bonus_table, build_shared_range_table, BonusTable, GittinsConfig};
use crate::model::ArmParams;

/// Which arms size the variance/mean grid of a Gittins table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableScope {
    /// Largest `v` and `s` among all arms of the regime.
    #[default]
    Shared,
    /// Each arm's own `v` and `s`.
    PerArm,
}

type TableKey = [u64; 13];

/// Bonus tables reused across policies and experiments with the same inputs.
#[derive(Debug, Default)]
pub struct TableCache {
    tables: Mutex<HashMap<TableKey, Arc<BonusTable>>>,
}

impl TableCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tables.lock().expect("table cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every cached table, in a fixed order.
    pub fn tables(&self) -> Vec<Arc<BonusTable>> {
        let guard = self.tables.lock().expect("table cache poisoned");
        let mut entries: Vec<(&TableKey, &Arc<BonusTable>)> = guard.iter().collect();
        entries.sort_by_key(|(k, _)| **k);
        entries.into_iter().map(|(_, t)| Arc::clone(t)).collect()
    }

    fn key(v: f64, s: f64, bounds: Option<(f64, f64)>, gamma: f64, cfg: &GittinsConfig) -> TableKey {
        let (v_max, s_max) = bounds.unwrap_or((f64::NAN, f64::NAN));
        [
            v.to_bits(),
            s.to_bits(),
            v_max.to_bits(),
            s_max.to_bits(),
            gamma.to_bits(),
            cfg.m_grid_points as u64,
            cfg.p_grid_points as u64,
            cfg.quad_nodes as u64,
            cfg.vi_tol.to_bits(),
            cfg.vi_max_iters as u64,
            cfg.bisect_iters as u64,
            cfg.bisect_tol.to_bits(),
            cfg.p_min.to_bits(),
        ]
    }

    fn get_or_build(
        &self,
        v: f64,
        s: f64,
        bounds: Option<(f64, f64)>,
        gamma: f64,
        cfg: &GittinsConfig,
    ) -> Result<Arc<BonusTable>> {
        let key = Self::key(v, s, bounds, gamma, cfg);
        if let Some(t) = self.tables.lock().expect("table cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        // built outside the lock: the build itself runs on the thread pool
        let table = Arc::new(match bounds {
            Some((v_max, s_max)) => build_shared_range_table(v, s, v_max, s_max, gamma, cfg)?,
            None => build_bonus_table(v, s, gamma, cfg)?,
        });
        let mut guard = self.tables.lock().expect("table cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(table)))
    }

    /// One table per arm, built once per distinct `(v, s)`.
    pub fn tables_for(&self, arms: &[ArmParams], gamma: f64, settings: &PolicySettings) -> Result<Vec<Arc<BonusTable>>> {
        let bounds = match settings.table_scope {
            TableScope::Shared => Some((
                arms.iter().map(|a| a.v).fold(0.0, f64::max),
                arms.iter().map(|a| a.s).fold(0.0, f64::max),
            )),
            TableScope::PerArm => None,
        };
        arms.iter()
            .map(|a| self.get_or_build(a.v, a.s, bounds, gamma, &settings.gittins))
            .collect()
    }
}

/// Tunables shared by every policy constructor.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySettings {
    pub ucb_c: f64,
    pub cause_scale: f64,
    pub gittins: GittinsConfig,
    pub table_scope: TableScope,
    #[serde(skip)]
    pub tables: Arc<TableCache>,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            ucb_c: 2.0,
            cause_scale: crate::cause::DEFAULT_SCALE,
            gittins: GittinsConfig::default(),
            table_scope: TableScope::default(),
            tables: Arc::new(TableCache::new()),
        }
    }
}

pub type PolicyFactory = Arc<dyn Fn(&PolicySettings) -> Result<Box<dyn Policy>> + Send + Sync>;

#[derive(Clone, Default)]
pub struct PolicyRegistry {
    entries: Vec<(String, PolicyFactory)>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// myopic, thompson, ucb, ps, cause, gittins, oracle.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("myopic", |_| Ok(Box::new(Myopic)));
        r.register("thompson", |_| Ok(Box::new(Thompson)));
        r.register("ucb", |s| Ok(Box::new(Ucb::new(s.ucb_c)?)));
        r.register("ps", |_| Ok(Box::new(PredictiveSampling)));
        r.register("cause", |s| Ok(Box::new(Cause::new(s.cause_scale))));
        r.register("gittins", |s| Ok(Box::new(Gittins::new(s.clone()))));
        r.register("oracle", |_| Ok(Box::new(Oracle)));
        r
    }

    /// Adds a policy, replacing any existing entry with the same name.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PolicySettings) -> Result<Box<dyn Policy>> + Send + Sync + 'static,
    {
        let factory: PolicyFactory = Arc::new(factory);
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = factory,
            None => self.entries.push((name.to_string(), factory)),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn create(&self, name: &str, settings: &PolicySettings) -> Result<Box<dyn Policy>> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownPolicy {
                name: name.to_string(),
                available: self.names().join(", "),
            })?;
        factory(settings)
    }
}
