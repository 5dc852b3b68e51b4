//! Bearer tokens. Only SHA-256 digests of tokens are stored.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use opencourier_core::ids::Role;
use opencourier_core::store::{Repo, Store};
use opencourier_core::{Error, ErrorCode, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Principal {
    pub role: Role,
    pub id: String,
    /// Instance the principal belongs to; requesters and registry
    /// operators have none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

impl Principal {
    pub fn new(role: Role, id: impl Into<String>, instance: Option<&str>) -> Self {
        Self {
            role,
            id: id.into(),
            instance: instance.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TokenRecord {
    digest: String,
    principal: Principal,
    revoked: bool,
    issued_at: DateTime<Utc>,
}

pub struct TokenStore {
    repo: Repo<TokenRecord>,
}

fn digest(token: &str) -> [u8; 32] {
    Sha256::digest(token.as_bytes()).into()
}

fn unauthenticated(msg: &str) -> Error {
    Error::new(ErrorCode::Unauthenticated, msg)
}

/// A fresh 256-bit token, hex encoded.
pub fn new_token() -> String {
    let mut b = [0u8; 32];
    rand::rng().fill_bytes(&mut b);
    hex::encode(b)
}

impl TokenStore {
    pub fn new(store: Arc<dyn Store>) -> Self {
        Self {
            repo: Repo::new(store, "token"),
        }
    }

    pub fn issue(&self, principal: Principal, at: DateTime<Utc>) -> Result<String> {
        let token = new_token();
        self.install(&token, principal, at)?;
        Ok(token)
    }

    /// Registers a caller-chosen token (bootstrap admin tokens from config).
    pub fn install(&self, token: &str, principal: Principal, at: DateTime<Utc>) -> Result<()> {
        if token.len() < 16 {
            return Err(Error::validation("tokens must be at least 16 characters"));
        }
        let d = hex::encode(digest(token));
        let rec = TokenRecord {
            digest: d.clone(),
            principal,
            revoked: false,
            issued_at: at,
        };
        match self.repo.get(&d)? {
            Some(cur) if cur.value.principal == rec.principal && !cur.value.revoked => Ok(()),
            Some(cur) => {
                self.repo.put(&d, &rec, cur.version)?;
                Ok(())
            }
            None => self.repo.insert(&d, &rec).map(|_| ()),
        }
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal> {
        let presented = digest(token);
        let rec = self
            .repo
            .get(&hex::encode(presented))?
            .ok_or_else(|| unauthenticated("unknown bearer token"))?
            .value;
        let stored = hex::decode(&rec.digest).map_err(|_| Error::internal("bad token digest"))?;
        if !bool::from(stored.ct_eq(&presented)) || rec.revoked {
            return Err(unauthenticated("token revoked"));
        }
        Ok(rec.principal)
    }

    /// Revokes every token of principal `id`. Returns how many were live.
    pub fn revoke(&self, role: Role, id: &str) -> Result<usize> {
        let live = self
            .repo
            .entries()?
            .into_iter()
            .filter(|(_, r)| !r.revoked && r.principal.role == role && r.principal.id == id);
        let mut n = 0;
        for (key, _) in live {
            self.repo.update(&key, |r| {
                r.revoked = true;
                Ok((true, ()))
            })?;
            n += 1;
        }
        Ok(n)
    }
}
