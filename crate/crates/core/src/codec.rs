//! Versioned text containers for scorers and ensembles: a magic line
//! followed by a JSON body.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ensemble::LikelihoodRatioEnsemble;
use crate::error::{ObilError, Result};
use crate::mlp::CalibratedScorer;

pub const SCORER_MAGIC: &str = "OBIL-SCORER-v1";
pub const ENSEMBLE_MAGIC: &str = "OBIL-ENS-v1";

fn encode<T: Serialize>(magic: &str, value: &T) -> String {
    let body = serde_json::to_string(value).expect("plain data serializes");
    format!("{magic}\n{body}\n")
}

fn decode<T: DeserializeOwned>(magic: &str, bytes: &[u8]) -> Result<T> {
    let text = std::str::from_utf8(bytes).map_err(|e| ObilError::Decode(format!("not UTF-8: {e}")))?;
    let (head, body) = text.split_once('\n').ok_or_else(|| ObilError::Decode("missing header line".into()))?;
    if head.trim_end_matches('\r') != magic {
        return Err(ObilError::Decode(format!("expected magic '{magic}'")));
    }
    serde_json::from_str(body).map_err(|e| ObilError::Decode(e.to_string()))
}

pub fn encode_scorer(scorer: &CalibratedScorer) -> String {
    encode(SCORER_MAGIC, scorer)
}

pub fn decode_scorer(bytes: &[u8]) -> Result<CalibratedScorer> {
    let s: CalibratedScorer = decode(SCORER_MAGIC, bytes)?;
    s.validate()?;
    Ok(s)
}

pub fn encode_ensemble(ensemble: &LikelihoodRatioEnsemble) -> String {
    encode(ENSEMBLE_MAGIC, ensemble)
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<LikelihoodRatioEnsemble> {
    let e: LikelihoodRatioEnsemble = decode(ENSEMBLE_MAGIC, bytes)?;
    e.validate()?;
    Ok(e)
}
