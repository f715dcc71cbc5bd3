//! Category-based choice of monitoring condition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Condition, Task, TaskCategory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("routing policy has no entry for {0:?}")]
pub struct IncompletePolicy(pub TaskCategory);

/// Total map from task category to condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct RoutingPolicy {
    map: BTreeMap<TaskCategory, Condition>,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        Self {
            map: BTreeMap::from([
                (TaskCategory::LoopProne, Condition::ProbeCompanion),
                (TaskCategory::DriftProne, Condition::ProbeCompanion),
                (TaskCategory::Structured, Condition::Baseline),
                (TaskCategory::Unknown, Condition::Baseline),
            ]),
        }
    }
}

impl RoutingPolicy {
    pub fn new(map: BTreeMap<TaskCategory, Condition>) -> Result<Self, IncompletePolicy> {
        if let Some(&missing) = TaskCategory::ALL.iter().find(|c| !map.contains_key(c)) {
            return Err(IncompletePolicy(missing));
        }
        Ok(Self { map })
    }

    pub fn condition_for(&self, category: TaskCategory) -> Condition {
        self.map[&category]
    }
}

impl<'de> Deserialize<'de> for RoutingPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<TaskCategory, Condition>::deserialize(d)?;
        RoutingPolicy::new(map).map_err(serde::de::Error::custom)
    }
}

pub fn route(task: &Task, policy: &RoutingPolicy) -> Condition {
    policy.condition_for(task.category)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(c: TaskCategory) -> Task {
        Task::new("t", "do it", c).unwrap()
    }

    #[test]
    fn default_policy() {
        let p = RoutingPolicy::default();
        assert_eq!(
            route(&task(TaskCategory::LoopProne), &p),
            Condition::ProbeCompanion
        );
        assert_eq!(
            route(&task(TaskCategory::DriftProne), &p),
            Condition::ProbeCompanion
        );
        assert_eq!(
            route(&task(TaskCategory::Structured), &p),
            Condition::Baseline
        );
        assert_eq!(route(&task(TaskCategory::Unknown), &p), Condition::Baseline);
    }

    #[test]
    fn partial_policies_are_rejected() {
        let map = BTreeMap::from([(TaskCategory::LoopProne, Condition::LlmCompanion)]);
        assert_eq!(
            RoutingPolicy::new(map).unwrap_err(),
            IncompletePolicy(TaskCategory::DriftProne)
        );
        let json = r#"{"LOOP_PRONE":"BASELINE"}"#;
        assert!(serde_json::from_str::<RoutingPolicy>(json).is_err());
        let full = serde_json::to_string(&RoutingPolicy::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<RoutingPolicy>(&full).unwrap(),
            RoutingPolicy::default()
        );
    }
}
