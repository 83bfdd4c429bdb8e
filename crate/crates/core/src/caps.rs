use serde::{Deserialize, Serialize};

/// Resource limits for one replicate.
///
/// Hitting `max_nodes` or `max_generation` censors the run. `depth_limit`
/// is different: it makes the tree finite (nodes at that depth are leaves)
/// and never censors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_nodes: u64,
    pub max_generation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_limit: Option<u32>,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_nodes: 10_000_000,
            max_generation: 10_000,
            depth_limit: None,
        }
    }
}

impl Caps {
    pub fn with_max_generation(mut self, g: u32) -> Self {
        self.max_generation = g;
        self
    }

    pub fn with_max_nodes(mut self, n: u64) -> Self {
        self.max_nodes = n;
        self
    }

    pub fn truncated_at(mut self, depth: u32) -> Self {
        self.depth_limit = Some(depth);
        self
    }

    #[inline]
    pub(crate) fn is_leaf_depth(&self, generation: u32) -> bool {
        self.depth_limit == Some(generation)
    }
}

/// Which cap ended (or truncated) a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapKind {
    Nodes,
    Generation,
    Steps,
}
