//! Outward face of the plant twin: batch scenario runs with reports, figure
//! CSVs, and an HTTP service with a newline-delimited JSON telemetry stream.

pub mod figures;
pub mod pipeline;
pub mod runner;
pub mod service;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use hydrotwin::bus::User;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Plant(#[from] hydrotwin::plant::PlantError),
    #[error(transparent)]
    StateDb(#[from] hydrotwin::statedb::StateDbError),
    #[error(transparent)]
    Twin(#[from] hydrotwin::twin::TwinError),
    #[error(transparent)]
    Rules(#[from] hydrotwin::agents::RuleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

/// The three human users of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Operator,
    Dispatch,
    Corps,
}

impl Role {
    pub fn user(self) -> User {
        match self {
            Role::Operator => User::Operator,
            Role::Dispatch => User::Dispatch,
            Role::Corps => User::Corps,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.user(), f)
    }
}

impl FromStr for Role {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "operator" => Ok(Role::Operator),
            "dispatch" => Ok(Role::Dispatch),
            "corps" => Ok(Role::Corps),
            _ => Err(GatewayError::Config(format!("unknown role {s:?}"))),
        }
    }
}

/// Bearer token to role bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tokens(pub HashMap<String, Role>);

impl Tokens {
    /// Parses `token=role` pairs separated by commas.
    pub fn parse(spec: &str) -> Result<Self, GatewayError> {
        let mut map = HashMap::new();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (tok, role) = pair
                .split_once('=')
                .ok_or_else(|| GatewayError::Config(format!("expected token=role, got {pair:?}")))?;
            if tok.is_empty() {
                return Err(GatewayError::Config("empty token".into()));
            }
            if map.insert(tok.to_string(), role.trim().parse()?).is_some() {
                return Err(GatewayError::Config(format!("token {tok:?} bound twice")));
            }
        }
        Ok(Self(map))
    }

    pub fn role(&self, token: &str) -> Option<Role> {
        self.0.get(token).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_spec() {
        let t = Tokens::parse("a=operator, b=corps").unwrap();
        assert_eq!(t.role("a"), Some(Role::Operator));
        assert_eq!(t.role("b"), Some(Role::Corps));
        assert_eq!(t.role("c"), None);
        assert!(Tokens::parse("a=admin").is_err());
        assert!(Tokens::parse("a=corps,a=dispatch").is_err());
        assert!(Tokens::parse("nobody").is_err());
    }
}
