//! Keyed dummy-identity vault with epoch rotation and dual-key resolution.
//!
//! The vault replaces true student IDs with short-lived dummy names (word
//! plus three digits, e.g. `mulan654`). Issuance is a keyed pseudorandom
//! function of `(ek1, epoch, true_id)`, so dummies are deterministic within
//! an epoch, injective (collisions re-draw with a counter), and change when
//! the epoch rotates. Mapping a dummy back to a true ID requires the mapping
//! key `ek1`, the admin unlock key `ek2` (derived from the administrator
//! passphrase), and the passphrase itself, which is verified against a
//! salted iterated hash stored in the vault file.
//!
//! Storage layout:
//! - the vault file is a single JSON document (`version`, current epoch,
//!   salted credential hash, key-check digests, per-epoch mapping tables,
//!   audit log), written atomically with mode 0600;
//! - `ek1` lives in a sibling key file (hex, mode 0600); it is never stored
//!   inside the vault document;
//! - `ek2` is never stored at all — it is re-derived from the passphrase on
//!   every resolution and verified against a keyed check value.
//!
//! Mutating operations update the in-memory state only; callers persist via
//! [`Vault::save`] once per command. The audit log records every resolution
//! attempt (timestamp, epoch, dummy, outcome) and never contains true IDs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::report::{read_json, write_atomic_with_mode, write_json_with_mode};
use crate::rng::named_stream;

/// Name words used to build dummy IDs. Frozen: changing this list changes
/// every issued dummy. 64 entries, each combining with a 3-digit suffix for
/// a namespace of 64,000 dummies per epoch.
pub const WORDS: [&str; 64] = [
    "aladdin", "alice", "anna", "ariel", "aurora", "bambi", "baloo", "basil", "beast", "belle",
    "casper", "cinder", "dumbo", "elsa", "eric", "felix", "fiona", "flora", "flynn", "gaston",
    "genie", "gerda", "goofy", "gus", "hans", "hazel", "hugo", "iris", "jasmine", "juno", "kai",
    "koda", "luna", "marlin", "merida", "milo", "moana", "mowgli", "mulan", "nala", "nemo",
    "olaf", "oliver", "otto", "pablo", "pascal", "peach", "pinocchio", "pluto", "poppy", "quinn",
    "remy", "rex", "rocky", "rosie", "simba", "stitch", "tarzan", "teddy", "tiana", "timon",
    "todd", "wendy", "ziggy",
];

/// Default PBKDF2 iteration count for credential hashing and ek2 derivation.
pub const DEFAULT_ITERATIONS: u32 = 10_000;

const DUMMY_PRF_INFO: &[u8] = b"gazelab-dummy-v1";
const EK1_CHECK_INFO: &[u8] = b"gazelab-ek1-check";
const EK2_CHECK_INFO: &[u8] = b"gazelab-ek2-check";
const CREDENTIAL_INFO: &[u8] = b"credential";
const NAMESPACE: u64 = WORDS.len() as u64 * 1000;

type HmacSha256 = Hmac<Sha256>;

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

fn hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

/// PBKDF2-HMAC-SHA256 with a 32-byte output (exactly one block):
/// `U_1 = HMAC(P, S || INT(1))`, `U_j = HMAC(P, U_{j-1})`, output is the
/// XOR of all `U_j`.
pub fn pbkdf2_sha256(password: &[u8], salt: &[u8], iterations: u32) -> [u8; 32] {
    assert!(iterations >= 1, "PBKDF2 requires at least one iteration");
    let mut block = Vec::with_capacity(salt.len() + 4);
    block.extend_from_slice(salt);
    block.extend_from_slice(&1u32.to_be_bytes());
    let mut u = hmac_sha256(password, &block);
    let mut out = u;
    for _ in 1..iterations {
        u = hmac_sha256(password, &u);
        for (o, b) in out.iter_mut().zip(u.iter()) {
            *o ^= b;
        }
    }
    out
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// The dummy name produced by draw `ctr` of the keyed PRF for
/// `(epoch, true_id)`: the first 8 bytes of
/// `HMAC-SHA256(ek1, info || epoch_be || id_be || ctr_be)` select a slot in
/// the 64,000-name space; slot / 1000 picks the word, slot % 1000 the
/// zero-padded suffix.
pub fn dummy_name(ek1: &[u8; 32], epoch: u64, true_id: u32, ctr: u32) -> String {
    let mut msg = Vec::with_capacity(DUMMY_PRF_INFO.len() + 16);
    msg.extend_from_slice(DUMMY_PRF_INFO);
    msg.extend_from_slice(&epoch.to_be_bytes());
    msg.extend_from_slice(&true_id.to_be_bytes());
    msg.extend_from_slice(&ctr.to_be_bytes());
    let digest = hmac_sha256(ek1, &msg);
    let h = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    let slot = h % NAMESPACE;
    format!("{}{:03}", WORDS[(slot / 1000) as usize], slot % 1000)
}

/// True when `name` has the dummy shape: one or more lowercase letters
/// followed by exactly three digits.
pub fn is_valid_dummy(name: &str) -> bool {
    let bytes = name.as_bytes();
    if bytes.len() < 4 {
        return false;
    }
    let (prefix, suffix) = bytes.split_at(bytes.len() - 3);
    !prefix.is_empty()
        && prefix.iter().all(|b| b.is_ascii_lowercase())
        && suffix.iter().all(|b| b.is_ascii_digit())
}

// ---------------------------------------------------------------------------
// Key material
// ---------------------------------------------------------------------------

/// The two vault secrets: `ek1` keys the dummy-issuance PRF, `ek2` unlocks
/// administrator resolution. Debug output is redacted so the keys cannot
/// leak through logs.
#[derive(Clone)]
pub struct VaultKeys {
    pub ek1: [u8; 32],
    pub ek2: [u8; 32],
}

impl std::fmt::Debug for VaultKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VaultKeys(redacted)")
    }
}

// ---------------------------------------------------------------------------
// Persistent state
// ---------------------------------------------------------------------------

/// Outcome of a resolution attempt, as recorded in the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Resolved,
    Denied,
    NotFound,
}

/// One audit record. Deliberately excludes the true ID: the log proves who
/// was looked up (by dummy) and when, without becoming a mapping table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: u64,
    pub epoch: u64,
    pub dummy: String,
    pub outcome: AuditOutcome,
}

/// The mapping table of one epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpochMapping {
    /// true_id -> dummy. Injective by construction.
    pub forward: BTreeMap<u32, String>,
    /// dummy -> true_id; always the exact inverse of `forward`.
    pub reverse: BTreeMap<String, u32>,
    /// Wall-clock seconds when the first dummy of this epoch was issued.
    pub issued_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VaultState {
    version: u32,
    epoch: u64,
    salt: String,
    iterations: u32,
    credential_hash: String,
    ek1_check: String,
    ek2_check: String,
    epochs: BTreeMap<u64, EpochMapping>,
    audit: Vec<AuditEntry>,
}

fn now_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Vault
// ---------------------------------------------------------------------------

/// A dummy-identity vault bound to its on-disk JSON document.
#[derive(Debug)]
pub struct Vault {
    path: PathBuf,
    state: VaultState,
}

impl Vault {
    /// Default location of the `ek1` key file next to a vault file.
    pub fn key_path(vault_path: &Path) -> PathBuf {
        vault_path.with_extension("key")
    }

    /// Creates a new vault at `path` protected by `passphrase`.
    ///
    /// The mapping key `ek1` and the credential salt are drawn from keyed
    /// RNG streams of `seed` so a run is reproducible end to end; `ek1` is
    /// written in hex to the sibling key file. Fails if either file exists.
    pub fn create(path: &Path, passphrase: &str, iterations: u32, seed: u64) -> Result<Vault> {
        if passphrase.is_empty() {
            return Err(Error::Config("vault passphrase must not be empty".into()));
        }
        if iterations < 1 {
            return Err(Error::Config(
                "vault iteration count must be at least 1".into(),
            ));
        }
        let key_file = Self::key_path(path);
        if path.exists() || key_file.exists() {
            return Err(Error::Config(format!(
                "vault already exists at {}",
                path.display()
            )));
        }
        use rand::RngCore;
        let mut salt = [0u8; 16];
        named_stream(seed, "vault-salt").fill_bytes(&mut salt);
        let mut ek1 = [0u8; 32];
        named_stream(seed, "vault-keys").fill_bytes(&mut ek1);

        let ek2 = pbkdf2_sha256(passphrase.as_bytes(), &salt, iterations);
        let mut credential_salt = salt.to_vec();
        credential_salt.extend_from_slice(CREDENTIAL_INFO);
        let credential = pbkdf2_sha256(passphrase.as_bytes(), &credential_salt, iterations);

        let state = VaultState {
            version: 1,
            epoch: 0,
            salt: hex::encode(salt),
            iterations,
            credential_hash: hex::encode(credential),
            ek1_check: hex::encode(hmac_sha256(&ek1, EK1_CHECK_INFO)),
            ek2_check: hex::encode(hmac_sha256(&ek2, EK2_CHECK_INFO)),
            epochs: BTreeMap::new(),
            audit: Vec::new(),
        };
        write_atomic_with_mode(&key_file, hex::encode(ek1).as_bytes(), Some(0o600))?;
        let vault = Vault {
            path: path.to_path_buf(),
            state,
        };
        vault.save()?;
        Ok(vault)
    }

    /// Opens an existing vault file.
    pub fn open(path: &Path) -> Result<Vault> {
        let state: VaultState = read_json(path)?;
        if state.version != 1 {
            return Err(Error::Data(format!(
                "unsupported vault version {}",
                state.version
            )));
        }
        Ok(Vault {
            path: path.to_path_buf(),
            state,
        })
    }

    /// Persists the vault document atomically with mode 0600.
    pub fn save(&self) -> Result<()> {
        write_json_with_mode(&self.path, &self.state, Some(0o600))
    }

    /// Reads `ek1` from the sibling key file and verifies it against the
    /// stored check value.
    pub fn load_ek1(&self) -> Result<[u8; 32]> {
        let key_file = Self::key_path(&self.path);
        let text = std::fs::read_to_string(&key_file)
            .map_err(|e| Error::io(key_file.clone(), e))?;
        let bytes = hex::decode(text.trim())
            .map_err(|e| Error::Data(format!("malformed vault key file: {e}")))?;
        let ek1: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Data("vault key file must hold 32 hex-encoded bytes".into()))?;
        if !self.check_ek1(&ek1) {
            return Err(Error::Auth(
                "key file does not match this vault (ek1 check failed)".into(),
            ));
        }
        Ok(ek1)
    }

    /// Derives `ek2` from the passphrase and verifies it against the stored
    /// check value. A wrong passphrase yields an authorization error.
    pub fn derive_ek2(&self, passphrase: &str) -> Result<[u8; 32]> {
        let salt = self.salt_bytes()?;
        let ek2 = pbkdf2_sha256(passphrase.as_bytes(), &salt, self.state.iterations);
        if !self.check_ek2(&ek2) {
            return Err(Error::Auth("passphrase does not unlock this vault".into()));
        }
        Ok(ek2)
    }

    /// True when `passphrase` matches the stored salted credential hash.
    pub fn verify_credential(&self, passphrase: &str) -> Result<bool> {
        let mut credential_salt = self.salt_bytes()?;
        credential_salt.extend_from_slice(CREDENTIAL_INFO);
        let candidate =
            pbkdf2_sha256(passphrase.as_bytes(), &credential_salt, self.state.iterations);
        let stored = hex::decode(&self.state.credential_hash)
            .map_err(|e| Error::Data(format!("malformed credential hash: {e}")))?;
        Ok(constant_time_eq(&candidate, &stored))
    }

    fn salt_bytes(&self) -> Result<Vec<u8>> {
        hex::decode(&self.state.salt).map_err(|e| Error::Data(format!("malformed vault salt: {e}")))
    }

    fn check_ek1(&self, ek1: &[u8; 32]) -> bool {
        let expected = hex::decode(&self.state.ek1_check).unwrap_or_default();
        constant_time_eq(&hmac_sha256(ek1, EK1_CHECK_INFO), &expected)
    }

    fn check_ek2(&self, ek2: &[u8; 32]) -> bool {
        let expected = hex::decode(&self.state.ek2_check).unwrap_or_default();
        constant_time_eq(&hmac_sha256(ek2, EK2_CHECK_INFO), &expected)
    }

    /// Current epoch index.
    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    /// The mapping table of the current epoch, if any dummy was issued.
    pub fn current_mapping(&self) -> Option<&EpochMapping> {
        self.state.epochs.get(&self.state.epoch)
    }

    /// The dummy already issued to `true_id` in the current epoch, if any.
    pub fn dummy_for(&self, true_id: u32) -> Option<&str> {
        self.current_mapping()
            .and_then(|m| m.forward.get(&true_id))
            .map(String::as_str)
    }

    /// The append-only audit log.
    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.state.audit
    }

    /// Issues (or returns the already-issued) dummy for `true_id` in the
    /// current epoch.
    ///
    /// Issuance evaluates the keyed PRF with an escalating counter until an
    /// unused name appears, which keeps the epoch's forward map injective.
    /// If the new epoch's map would end up identical to the previous
    /// epoch's map over the same ID set, the just-issued dummy is re-drawn
    /// so consecutive epochs always differ; re-drawing the latest issue
    /// (rather than an earlier one) keeps previously returned dummies
    /// stable.
    pub fn issue_dummy(&mut self, true_id: u32, ek1: &[u8; 32]) -> Result<String> {
        if !self.check_ek1(ek1) {
            return Err(Error::Auth(
                "ek1 does not match this vault (ek1 check failed)".into(),
            ));
        }
        let epoch = self.state.epoch;
        if let Some(existing) = self.dummy_for(true_id) {
            return Ok(existing.to_string());
        }
        let mapping = self.state.epochs.entry(epoch).or_insert_with(|| EpochMapping {
            issued_at: now_seconds(),
            ..EpochMapping::default()
        });
        if mapping.reverse.len() as u64 >= NAMESPACE {
            return Err(Error::Data(format!(
                "dummy name space exhausted: {} names for {} issued ids",
                NAMESPACE,
                mapping.reverse.len()
            )));
        }
        let dummy = Self::draw_unused(ek1, epoch, true_id, &mapping.reverse, None)?;
        mapping.forward.insert(true_id, dummy.clone());
        mapping.reverse.insert(dummy.clone(), true_id);

        // Epoch-separation guard: if this issue just made the current map
        // identical to the previous epoch's map, re-draw it.
        if epoch > 0 {
            let identical = match self.state.epochs.get(&(epoch - 1)) {
                Some(prev) => {
                    let cur = &self.state.epochs[&epoch];
                    prev.forward == cur.forward
                }
                None => false,
            };
            if identical {
                let mapping = self
                    .state
                    .epochs
                    .get_mut(&epoch)
                    .expect("mapping inserted above");
                mapping.forward.remove(&true_id);
                mapping.reverse.remove(&dummy);
                let redrawn =
                    Self::draw_unused(ek1, epoch, true_id, &mapping.reverse, Some(&dummy))?;
                mapping.forward.insert(true_id, redrawn.clone());
                mapping.reverse.insert(redrawn.clone(), true_id);
                return Ok(redrawn);
            }
        }
        Ok(dummy)
    }

    /// First PRF draw for `(epoch, true_id)` that collides with neither the
    /// issued names nor the optional extra exclusion.
    fn draw_unused(
        ek1: &[u8; 32],
        epoch: u64,
        true_id: u32,
        taken: &BTreeMap<String, u32>,
        also_exclude: Option<&str>,
    ) -> Result<String> {
        for ctr in 0..u32::MAX {
            let candidate = dummy_name(ek1, epoch, true_id, ctr);
            if !taken.contains_key(&candidate) && Some(candidate.as_str()) != also_exclude {
                debug_assert!(is_valid_dummy(&candidate));
                return Ok(candidate);
            }
        }
        Err(Error::Data("dummy draw exhausted the counter space".into()))
    }

    /// Advances to the next epoch. The new epoch's mapping is built lazily
    /// by subsequent [`Vault::issue_dummy`] calls; prior epochs remain
    /// resolvable.
    pub fn rotate_epoch(&mut self) -> u64 {
        self.state.epoch += 1;
        self.state.epoch
    }

    /// Resolves a dummy back to its true ID for the given epoch.
    ///
    /// Requires the administrator passphrase (checked against the stored
    /// salted hash) plus both keys: `ek2` must pass the vault's check value
    /// and `ek1` is demanded for interface fidelity even though the lookup
    /// itself is table-backed. Authorization is verified before the dummy
    /// is looked up, so a caller with a bad credential learns nothing about
    /// whether the dummy exists. Every attempt is appended to the audit
    /// log.
    pub fn resolve_dummy(
        &mut self,
        dummy: &str,
        epoch: u64,
        keys: &VaultKeys,
        passphrase: &str,
    ) -> Result<u32> {
        let authorized = self.verify_credential(passphrase)?
            && self.check_ek2(&keys.ek2)
            && self.check_ek1(&keys.ek1);
        if !authorized {
            self.append_audit(epoch, dummy, AuditOutcome::Denied);
            return Err(Error::Auth(
                "vault resolution denied: credential or key check failed".into(),
            ));
        }
        let found = self
            .state
            .epochs
            .get(&epoch)
            .and_then(|m| m.reverse.get(dummy))
            .copied();
        match found {
            Some(id) => {
                self.append_audit(epoch, dummy, AuditOutcome::Resolved);
                Ok(id)
            }
            None => {
                self.append_audit(epoch, dummy, AuditOutcome::NotFound);
                Err(Error::NotFound(format!(
                    "dummy '{dummy}' is not mapped in epoch {epoch}"
                )))
            }
        }
    }

    fn append_audit(&mut self, epoch: u64, dummy: &str, outcome: AuditOutcome) {
        self.state.audit.push(AuditEntry {
            timestamp: now_seconds(),
            epoch,
            dummy: dummy.to_string(),
            outcome,
        });
    }
}
