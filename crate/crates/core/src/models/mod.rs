//! Concrete network families and their on-disk representation.

pub mod dag;
pub mod epn;
pub mod jackson;
pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::Problem;

pub use dag::{generate_dag, DagGenSpec, DagRecord};
pub use epn::{EnergyDelay, EpnModel};
pub use jackson::{JacksonModel, Link, LinkKind};
pub use metrics::{queue_metrics, QueueMetrics};

/// A model document, discriminated by `model_type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "snake_case")]
pub enum ModelFile {
    Jackson(JacksonModel),
    Epn(EpnModel),
    DagSpec(DagGenSpec),
}

impl ModelFile {
    pub fn model_type(&self) -> &'static str {
        match self {
            ModelFile::Jackson(_) => "jackson",
            ModelFile::Epn(_) => "epn",
            ModelFile::DagSpec(_) => "dag_spec",
        }
    }

    /// Generated specs are expanded to their Jackson network.
    pub fn jackson(&self) -> Result<Option<JacksonModel>> {
        match self {
            ModelFile::Jackson(m) => Ok(Some(m.clone())),
            ModelFile::DagSpec(spec) => Ok(Some(generate_dag(spec)?.0)),
            ModelFile::Epn(_) => Ok(None),
        }
    }

    pub fn build(&self) -> Result<Problem> {
        match self {
            ModelFile::Jackson(m) => m.build(),
            ModelFile::Epn(m) => m.build(),
            ModelFile::DagSpec(spec) => generate_dag(spec)?.0.build(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tagged_documents() {
        let text = r#"{"model_type":"dag_spec","d":10,"p":3,"seed":1}"#;
        let file: ModelFile = serde_json::from_str(text).unwrap();
        assert_eq!(file, ModelFile::DagSpec(DagGenSpec::new(10, 3, 1)));
        assert_eq!(file.build().unwrap().param_dim(), 3);

        let epn = serde_json::to_value(ModelFile::Epn(EpnModel::five_node())).unwrap();
        assert_eq!(epn["model_type"], "epn");
        assert!(serde_json::from_str::<ModelFile>(r#"{"model_type":"bcmp"}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(d in 2usize..30, seed in any::<u64>(), which in 0u8..3) {
            let spec = DagGenSpec::new(d, (d - 2) / 2, seed);
            let file = match which {
                0 => ModelFile::Jackson(generate_dag(&spec).unwrap().0),
                1 => {
                    let mut m = EpnModel::five_node();
                    m.budget = 1.0 + (seed % 100) as f64;
                    ModelFile::Epn(m)
                }
                _ => ModelFile::DagSpec(spec),
            };
            let text = serde_json::to_string(&file).unwrap();
            prop_assert_eq!(serde_json::from_str::<ModelFile>(&text).unwrap(), file);
        }
    }
}
