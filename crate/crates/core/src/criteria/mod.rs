//! Selection without cross-validation: penalized likelihood and community
//! detection.

pub mod ic;
pub mod infomap;
pub mod modularity;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use ic::{
    aic, bic, degrees_of_freedom, full_data_fits, select_from_fits, select_model_ic, CriterionKind,
    InformationCriterion,
};
pub use infomap::{codelength, infomap, infomap_with, InfomapOptions};
pub use modularity::{directed_modularity, greedy_modularity, greedy_modularity_path};

use crate::netgen::Membership;

/// Output of a community detection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityResult {
    pub labels: Membership,
    /// Number of nonempty communities.
    pub k_hat: usize,
    /// Modularity Q or map-equation codelength, depending on the method.
    pub score: f64,
}

impl CommunityResult {
    pub(crate) fn from_labels(labels: Vec<usize>, score: f64) -> Self {
        let labels = Membership::from_labels(labels).canonical();
        let k_hat = labels.occupied_blocks();
        Self {
            labels,
            k_hat,
            score,
        }
    }

    /// `node,community` rows with one-based ids.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,community\n");
        for (i, l) in self.labels.labels().iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, l + 1);
        }
        out
    }
}
