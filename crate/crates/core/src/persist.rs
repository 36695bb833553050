//! Versioned JSON envelopes for fitted artifacts.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("expected a {expected} v{version} document, found {found} v{found_version}")]
    WrongFormat { expected: &'static str, version: u32, found: String, found_version: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    body: T,
}

pub fn to_json<T: Serialize>(format: &'static str, version: u32, body: &T) -> String {
    serde_json::to_string(&Envelope { format: format.to_string(), version, body }).expect("artifact serializes")
}

pub fn from_json<T: DeserializeOwned>(format: &'static str, version: u32, text: &str) -> Result<T, PersistError> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != format || env.version != version {
        return Err(PersistError::WrongFormat { expected: format, version, found: env.format, found_version: env.version });
    }
    Ok(env.body)
}
