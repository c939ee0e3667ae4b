//! Shareable bundle: the canonical document text plus, optionally, the plan
//! compiled from it and a run report.

use serde::{Deserialize, Serialize};

use super::{canonical, export, import, sha256_hex, CompiledPlan, ImportError, RunReport, SimulationDocument};

pub const BUNDLE_FORMAT: &str = "qndk-bundle";
pub const BUNDLE_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format: String,
    pub version: String,
    /// Canonical document text, kept verbatim so its hash can be re-checked.
    pub document: String,
    pub document_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<CompiledPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

impl Bundle {
    pub fn new(doc: &SimulationDocument) -> Self {
        let bytes = export(doc);
        Self {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION.into(),
            document_hash: sha256_hex(&bytes),
            document: String::from_utf8(bytes).expect("canonical output is UTF-8"),
            plan: None,
            report: None,
        }
    }

    pub fn with_plan(mut self, plan: CompiledPlan) -> Self {
        self.plan = Some(plan);
        self
    }

    pub fn with_report(mut self, report: RunReport) -> Self {
        self.report = Some(report);
        self
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("bundles hold only finite numbers")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImportError> {
        let bundle: Bundle =
            serde_json::from_slice(bytes).map_err(|e| ImportError::Malformed(e.to_string()))?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(ImportError::Malformed(format!(
                "not a bundle (format {:?})",
                bundle.format
            )));
        }
        Ok(bundle)
    }

    /// Whether the embedded document still hashes to `document_hash`.
    pub fn verify(&self) -> bool {
        sha256_hex(self.document.as_bytes()) == self.document_hash
    }

    pub fn document(&self) -> Result<SimulationDocument, ImportError> {
        import(self.document.as_bytes())
    }
}
