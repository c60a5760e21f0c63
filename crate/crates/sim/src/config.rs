//! Scenario files.
//!
//! A scenario is TOML with one table per concern (`[nodes]`, `[network]`,
//! `[mining]`, `[committee]`, `[workload]`, `[adversary]`, `[rewards]`,
//! `[sharding]`, `[assertions]`, `[metrics]`). Every table is optional and
//! falls back to the defaults below. Unknown keys are rejected.

use std::path::Path;

use hybrid_core::fruitchain::{ChainRule, FruitTieBreak, MiningParams};
use hybrid_core::sharding::ShardingParams;
use hybrid_core::truehash::TruehashParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Run length.
    pub ticks: u64,
    #[serde(default)]
    pub nodes: NodesConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub committee: CommitteeConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub sharding: Option<ShardingConfig>,
    #[serde(default)]
    pub assertions: AssertionConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodesConfig {
    pub count: usize,
    /// Hash draws per tick for each node; empty means one each. A shorter
    /// list is padded with ones.
    pub hash_power: Vec<u32>,
    /// Nodes willing to serve on committees; empty means all.
    pub opt_in: Vec<u32>,
}

impl Default for NodesConfig {
    fn default() -> Self {
        NodesConfig { count: 12, hash_power: Vec::new(), opt_in: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub from: u32,
    pub to: u32,
    pub min_delay: u64,
    pub max_delay: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub min_delay: u64,
    pub max_delay: u64,
    pub links: Vec<LinkOverride>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { min_delay: 1, max_delay: 4, links: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    /// Expected ticks between snail blocks.
    pub block_interval: u64,
    /// Expected ticks between fruits.
    pub fruit_interval: u64,
    /// λ.
    pub recency: u64,
    /// κ.
    pub pointer_window: u64,
    pub rule: ChainRule,
    pub tie_break: FruitTieBreak,
    /// Truehash group degree n.
    pub group_degree: usize,
    /// Truehash rotation epoch E.
    pub epoch_length: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            block_interval: 20,
            fruit_interval: 2,
            recency: 17,
            pointer_window: 17,
            rule: ChainRule::Fruitchain,
            tie_break: FruitTieBreak::LowerHash,
            group_degree: 16,
            epoch_length: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommitteeConfig {
    /// Without a committee, fast-block messages come from a fixed schedule
    /// (mining-only experiments).
    pub enabled: bool,
    pub csize: usize,
    pub gsize: usize,
    /// Snail blocks per election window; flagged heights are its multiples.
    pub window: u64,
    /// ν.
    pub min_fruits: u64,
    pub view_timeout: u64,
    /// T_Δ.
    pub time_window: u64,
    pub block_limit: usize,
    /// Minimum ticks between fast blocks.
    pub fast_interval: u64,
    /// Ticks between scheduled fast messages when the committee is off.
    pub synthetic_interval: u64,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            enabled: true,
            csize: 7,
            gsize: 2,
            window: 12,
            min_fruits: 1,
            view_timeout: 16,
            time_window: 60,
            block_limit: 64,
            fast_interval: 4,
            synthetic_interval: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub accounts: u64,
    pub initial_balance: u64,
    /// Expected client transactions per tick.
    pub tx_rate: f64,
    pub max_amount: u64,
    pub gas_price: u64,
    /// No submissions at or after this tick; defaults to the last quarter
    /// of the run so the tail can drain.
    pub stop_at: Option<u64>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            accounts: 8,
            initial_balance: 1_000_000,
            tx_rate: 0.5,
            max_amount: 100,
            gas_price: 1,
            stop_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Votes yes on everything; as leader, sends conflicting proposals to
    /// two halves of the committee.
    ByzantineVote,
    /// Selfish mining: withholds snail blocks and releases by lead.
    WithholdBlocks,
    /// Sends nothing and stops mining.
    Silent,
    /// Behaves honestly but hands its address table to the adversary.
    LeakAddresses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub strategy: Strategy,
    /// Explicit node ids.
    #[serde(default)]
    pub nodes: Vec<u32>,
    /// Corrupt the first `committee_count` members (in selection order) of
    /// this term's committee, `tau` ticks after it takes office.
    #[serde(default)]
    pub committee_term: Option<u64>,
    #[serde(default)]
    pub committee_count: usize,
    /// Trigger tick for explicit nodes.
    #[serde(default)]
    pub at: u64,
    /// Delay from trigger to effect; 0 is raised to 1.
    #[serde(default = "one")]
    pub tau: u64,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdosSpec {
    pub at: u64,
    pub duration: u64,
    /// Explicit targets; each must be known to a corrupted node.
    #[serde(default)]
    pub targets: Vec<u32>,
    /// Target everything the adversary has learned.
    #[serde(default)]
    pub all_leaked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    /// Largest corrupted share of any committee; ⌈budget·csize⌉ members.
    pub committee_budget: f64,
    /// Largest corrupted share of total hash power.
    pub hash_budget: f64,
    /// Corrupt nodes see honest messages at minimum delay and their own
    /// messages travel at minimum delay.
    pub rushing: bool,
    pub corruptions: Vec<CorruptionSpec>,
    pub ddos: Vec<DdosSpec>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            committee_budget: 1.0 / 3.0,
            hash_budget: 1.0 / 3.0,
            rushing: true,
            corruptions: Vec::new(),
            ddos: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// α in the committee/miner split; must exceed 1.
    pub alpha: u64,
    /// Tokens minted per snail block.
    pub block_reward: u64,
    /// Block miner's cut of the fruit pool, per mille.
    pub beta_permille: u64,
    /// Share of the miner reward paid to the block miner before the fruit
    /// pool is formed, per mille.
    pub base_permille: u64,
    /// Mean settled gas price above which another committee is spawned.
    pub spawn_threshold: Option<f64>,
    /// Mean settled gas price below which a committee is retired.
    pub retire_threshold: Option<f64>,
    /// Terms in the gas-price moving average.
    pub price_window: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 4,
            block_reward: 1000,
            beta_permille: 100,
            base_permille: 0,
            spawn_threshold: None,
            retire_threshold: None,
            price_window: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShardingConfig {
    /// C.
    pub shards: u32,
    pub shard_size: usize,
    /// T_o.
    pub timeout: u64,
    pub batch_interval: u64,
    pub batch_timeout: u64,
    /// Size of the primary shard's committee.
    pub primary_size: usize,
    pub txs: usize,
    pub sectors: usize,
    pub max_ops: usize,
    pub spread: u64,
    pub fault_percent: u32,
    pub min_delay: u64,
    pub max_delay: u64,
}

impl Default for ShardingConfig {
    fn default() -> Self {
        ShardingConfig {
            shards: 3,
            shard_size: 4,
            timeout: 30,
            batch_interval: 20,
            batch_timeout: 20,
            primary_size: 4,
            txs: 40,
            sectors: 16,
            max_ops: 4,
            spread: 400,
            fault_percent: 0,
            min_delay: 1,
            max_delay: 6,
        }
    }
}

impl ShardingConfig {
    pub fn params(&self) -> ShardingParams {
        ShardingParams {
            shards: self.shards,
            shard_size: self.shard_size,
            timeout: self.timeout,
            batch_interval: self.batch_interval,
            batch_timeout: self.batch_timeout,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// No checks beyond the ones listed.
    #[default]
    None,
    /// Safety and consistency must hold.
    Consistent,
    /// The monitor must detect a safety or liveness violation.
    Violation,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssertionConfig {
    pub expect: Expectation,
    /// τ: largest allowed submission-to-log delay.
    pub liveness_bound: Option<u64>,
    pub min_fast_blocks: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Ticks between time-series samples.
    pub sample_every: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { sample_every: 50 }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash_power(&self, node: u32) -> u32 {
        self.nodes.hash_power.get(node as usize).copied().unwrap_or(1)
    }

    pub fn total_hash(&self) -> u64 {
        (0..self.nodes.count as u32).map(|n| self.hash_power(n) as u64).sum()
    }

    pub fn opt_in(&self) -> Vec<u32> {
        if self.nodes.opt_in.is_empty() {
            (0..self.nodes.count as u32).collect()
        } else {
            self.nodes.opt_in.clone()
        }
    }

    pub fn submissions_end(&self) -> u64 {
        self.workload.stop_at.unwrap_or(self.ticks - self.ticks / 4)
    }

    pub fn truehash_params(&self) -> TruehashParams {
        TruehashParams::new(self.mining.group_degree, self.mining.epoch_length).expect("validated")
    }

    pub fn mining_params(&self) -> MiningParams {
        let m = &self.mining;
        let mut p = MiningParams::from_intervals(m.block_interval, m.fruit_interval, self.total_hash());
        p.recency = m.recency;
        p.pointer_window = m.pointer_window;
        p.tie_break = m.tie_break;
        p.rule = m.rule;
        p.elect_interval = if self.committee.enabled { self.committee.window } else { 0 };
        p
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ticks == 0 {
            return Err(invalid("ticks", "must be > 0"));
        }
        let n = self.nodes.count;
        if n == 0 {
            return Err(invalid("nodes.count", "must be > 0"));
        }
        if self.nodes.hash_power.len() > n {
            return Err(invalid("nodes.hash_power", format!("{} entries for {n} nodes", self.nodes.hash_power.len())));
        }
        if self.total_hash() == 0 {
            return Err(invalid("nodes.hash_power", "total hash power is zero"));
        }
        if let Some(&bad) = self.nodes.opt_in.iter().find(|&&i| i as usize >= n) {
            return Err(invalid("nodes.opt_in", format!("unknown node {bad}")));
        }
        let net = &self.network;
        if net.min_delay == 0 {
            return Err(invalid("network.min_delay", "must be ≥ 1 tick"));
        }
        if net.min_delay > net.max_delay {
            return Err(invalid("network.max_delay", "below min_delay"));
        }
        for (i, l) in net.links.iter().enumerate() {
            if l.from as usize >= n || l.to as usize >= n || l.min_delay == 0 || l.min_delay > l.max_delay {
                return Err(invalid(&format!("network.links[{i}]"), "bad endpoints or delay bounds"));
            }
        }
        TruehashParams::new(self.mining.group_degree, self.mining.epoch_length)
            .map_err(|e| invalid("mining.group_degree", e.to_string()))?;
        self.mining_params().validate().map_err(|e| invalid("mining", e))?;
        let c = &self.committee;
        if c.enabled {
            if c.csize < 4 {
                return Err(invalid("committee.csize", "must be ≥ 4"));
            }
            if c.csize > self.opt_in().len() {
                return Err(invalid("committee.csize", "exceeds the opted-in nodes"));
            }
            if c.gsize == 0 || c.gsize >= c.csize {
                return Err(invalid("committee.gsize", "must be in 1..csize"));
            }
            if c.window == 0 || c.min_fruits == 0 {
                return Err(invalid("committee.window", "window and min_fruits must be ≥ 1"));
            }
            if c.view_timeout == 0 || c.fast_interval == 0 {
                return Err(invalid("committee.view_timeout", "timeouts must be > 0"));
            }
            if c.block_limit == 0 {
                return Err(invalid("committee.block_limit", "must be > 0"));
            }
        } else if c.synthetic_interval == 0 {
            return Err(invalid("committee.synthetic_interval", "must be > 0"));
        }
        let w = &self.workload;
        if !(0.0..=1000.0).contains(&w.tx_rate) {
            return Err(invalid("workload.tx_rate", "must be in [0, 1000]"));
        }
        if w.tx_rate > 0.0 && (w.accounts == 0 || !c.enabled) {
            return Err(invalid("workload.accounts", "transactions need accounts and a committee"));
        }
        let a = &self.adversary;
        for (field, b) in [("adversary.committee_budget", a.committee_budget), ("adversary.hash_budget", a.hash_budget)]
        {
            if !(0.0..=1.0).contains(&b) {
                return Err(invalid(field, "must be a fraction"));
            }
        }
        for (i, cs) in a.corruptions.iter().enumerate() {
            let field = format!("adversary.corruptions[{i}]");
            if let Some(&bad) = cs.nodes.iter().find(|&&x| x as usize >= n) {
                return Err(invalid(&field, format!("unknown node {bad}")));
            }
            if cs.committee_term.is_some() && !c.enabled {
                return Err(invalid(&field, "committee targets need a committee"));
            }
            if cs.committee_term.is_none() && cs.nodes.is_empty() {
                return Err(invalid(&field, "no target"));
            }
        }
        for (i, d) in a.ddos.iter().enumerate() {
            if let Some(&bad) = d.targets.iter().find(|&&x| x as usize >= n) {
                return Err(invalid(&format!("adversary.ddos[{i}]"), format!("unknown node {bad}")));
            }
        }
        if self.rewards.alpha <= 1 {
            return Err(invalid("rewards.alpha", "must exceed 1"));
        }
        if self.rewards.beta_permille > 1000 || self.rewards.base_permille > 1000 {
            return Err(invalid("rewards.beta_permille", "per mille values must be ≤ 1000"));
        }
        if let Some(s) = &self.sharding {
            s.params().validate().map_err(|e| invalid("sharding", e))?;
            if s.min_delay == 0 || s.min_delay > s.max_delay {
                return Err(invalid("sharding.max_delay", "bad delay bounds"));
            }
            let needed = s.primary_size + s.shards as usize * s.shard_size;
            if needed > self.opt_in().len() {
                return Err(invalid("sharding.shard_size", format!("{needed} disjoint members needed")));
            }
        }
        if self.metrics.sample_every == 0 {
            return Err(invalid("metrics.sample_every", "must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "sample"
seed = 9
ticks = 500

[nodes]
count = 6
hash_power = [2, 1, 1]

[committee]
csize = 4
gsize = 1

[[adversary.corruptions]]
strategy = "byzantine_vote"
committee_term = 0
committee_count = 1
tau = 3

[sharding]
shards = 2
shard_size = 1
primary_size = 1
"#;

    #[test]
    fn loads_with_defaults() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.nodes.count, 6);
        assert_eq!(c.hash_power(0), 2);
        assert_eq!(c.hash_power(5), 1);
        assert_eq!(c.total_hash(), 7);
        assert_eq!(c.mining.recency, 17);
        assert_eq!(c.adversary.corruptions[0].tau, 3);
        assert_eq!(c.submissions_end(), 375);
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn field_level_errors() {
        let bad = SAMPLE.replace("csize = 4", "csize = 3");
        assert_eq!(
            ScenarioConfig::from_toml(&bad),
            Err(ConfigError::Invalid { field: "committee.csize".into(), message: "must be ≥ 4".into() })
        );
        let bad = SAMPLE.replace("[nodes]", "[nodes]\nbogus = 1");
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
        let bad = format!("{SAMPLE}\n[rewards]\nalpha = 1\n");
        assert!(
            matches!(ScenarioConfig::from_toml(&bad), Err(ConfigError::Invalid { field, .. }) if field == "rewards.alpha")
        );
    }
}
