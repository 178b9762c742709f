//! C ABI for the gazelab privacy laboratory.
//!
//! Exposes the identity vault (create/open, dummy issuance, epoch rotation,
//! authorized resolution) plus the two pure primitives other runtimes most
//! often embed: feature hashing and nearest-neighbor match confidence.
//!
//! Conventions:
//! - Every fallible function returns [`GlStatus`]; outputs go through `out_`
//!   pointers that are written only on `GL_STATUS_OK`.
//! - `GlVault` is an opaque handle; release it with [`gl_vault_free`].
//!   Strings returned through `out_` pointers are owned by the caller and
//!   must be released with [`gl_string_free`].
//! - On any non-OK status, [`gl_last_error_message`] returns a descriptive
//!   message for the calling thread, valid until that thread's next call
//!   into this library.
//! - The header `include/gazelab.h` is generated from these declarations at
//!   build time.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gazelab::cluster::knn_confidence;
use gazelab::error::Error;
use gazelab::id_assign::feature_hash_id;
use gazelab::vault::{Vault, VaultKeys};

/// Status code of every fallible call. Mirrors the library's error
/// categories (and the CLI's exit codes) one-to-one.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    /// Success.
    Ok = 0,
    /// Unexpected internal failure (bug; never expected in normal use).
    Internal = 1,
    /// Invalid configuration value.
    Config = 2,
    /// Invalid data or I/O failure.
    Data = 3,
    /// Authorization failure: wrong passphrase or key.
    Auth = 4,
    /// Lookup target does not exist.
    NotFound = 5,
    /// Null pointer, non-UTF-8 string, or out-of-domain argument.
    InvalidArgument = 6,
}

/// Opaque vault handle. Not thread-safe: guard it with a lock if shared.
pub struct GlVault {
    inner: Vault,
    ek1: Option<[u8; 32]>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn fail(status: GlStatus, message: impl AsRef<str>) -> GlStatus {
    let text = CString::new(message.as_ref().replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").expect("static"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    status
}

fn fail_error(err: &Error) -> GlStatus {
    let status = match err {
        Error::Io { .. } | Error::Data(_) => GlStatus::Data,
        Error::Config(_) => GlStatus::Config,
        Error::Auth(_) => GlStatus::Auth,
        Error::NotFound(_) => GlStatus::NotFound,
    };
    fail(status, err.to_string())
}

/// Runs `body` with panic containment; a panic crossing the FFI boundary
/// would be undefined behavior, so it is converted to `GL_STATUS_INTERNAL`.
fn guarded(body: impl FnOnce() -> GlStatus) -> GlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(GlStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, GlStatus> {
    if ptr.is_null() {
        return Err(fail(GlStatus::InvalidArgument, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(GlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn ek1_of(handle: &mut GlVault) -> Result<[u8; 32], GlStatus> {
    if let Some(ek1) = handle.ek1 {
        return Ok(ek1);
    }
    match handle.inner.load_ek1() {
        Ok(ek1) => {
            handle.ek1 = Some(ek1);
            Ok(ek1)
        }
        Err(e) => Err(fail_error(&e)),
    }
}

/// Message describing the calling thread's most recent failure, or null if
/// its last call succeeded. The pointer is valid until the thread's next
/// call into this library; do not free it.
#[no_mangle]
pub extern "C" fn gl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Confidence assigned to a nearest-neighbor match at `distance`:
/// `exp(-distance)`. `distance` must be finite and non-negative.
///
/// # Safety
/// `out_confidence` must be valid for writes (or null, which is rejected).
#[no_mangle]
pub unsafe extern "C" fn gl_knn_confidence(distance: f64, out_confidence: *mut f64) -> GlStatus {
    guarded(|| {
        if out_confidence.is_null() {
            return fail(GlStatus::InvalidArgument, "out_confidence is null");
        }
        if !distance.is_finite() || distance < 0.0 {
            return fail(
                GlStatus::InvalidArgument,
                "distance must be finite and non-negative",
            );
        }
        unsafe { *out_confidence = knn_confidence(distance) };
        GlStatus::Ok
    })
}

/// Deterministic MD5-derived ID in `[0, 10000)` for a feature vector,
/// probing past `existing_ids` (linear, wrapping) until a free ID is found.
///
/// # Safety
/// `features` must point to `n_features` readable doubles; `existing_ids`
/// must point to `n_existing` readable u32s (it may be null when
/// `n_existing` is 0); `out_id` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_feature_hash_id(
    features: *const f64,
    n_features: usize,
    existing_ids: *const u32,
    n_existing: usize,
    out_id: *mut u32,
) -> GlStatus {
    guarded(|| {
        if features.is_null() || out_id.is_null() {
            return fail(GlStatus::InvalidArgument, "features/out_id is null");
        }
        if existing_ids.is_null() && n_existing > 0 {
            return fail(
                GlStatus::InvalidArgument,
                "existing_ids is null but n_existing > 0",
            );
        }
        let features = unsafe { std::slice::from_raw_parts(features, n_features) };
        let existing: BTreeSet<u32> = if n_existing == 0 {
            BTreeSet::new()
        } else {
            unsafe { std::slice::from_raw_parts(existing_ids, n_existing) }
                .iter()
                .copied()
                .collect()
        };
        match feature_hash_id(features, &existing) {
            Ok(decision) => {
                unsafe { *out_id = decision.outcome.id() };
                GlStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Creates a new vault at `path` (the hex key file lands beside it) and
/// returns a handle through `out_vault`. Fails if either file exists.
///
/// # Safety
/// `path` and `passphrase` must be NUL-terminated strings; `out_vault` must
/// be valid for writes. The returned handle must be released with
/// [`gl_vault_free`].
#[no_mangle]
pub unsafe extern "C" fn gl_vault_create(
    path: *const c_char,
    passphrase: *const c_char,
    iterations: u32,
    seed: u64,
    out_vault: *mut *mut GlVault,
) -> GlStatus {
    guarded(|| {
        if out_vault.is_null() {
            return fail(GlStatus::InvalidArgument, "out_vault is null");
        }
        let path = match unsafe { read_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let passphrase = match unsafe { read_str(passphrase, "passphrase") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match Vault::create(Path::new(path), passphrase, iterations, seed) {
            Ok(inner) => {
                let ek1 = inner.load_ek1().ok();
                let handle = Box::new(GlVault { inner, ek1 });
                unsafe { *out_vault = Box::into_raw(handle) };
                GlStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Opens an existing vault file and returns a handle through `out_vault`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_vault` must be valid for
/// writes. The returned handle must be released with [`gl_vault_free`].
#[no_mangle]
pub unsafe extern "C" fn gl_vault_open(
    path: *const c_char,
    out_vault: *mut *mut GlVault,
) -> GlStatus {
    guarded(|| {
        if out_vault.is_null() {
            return fail(GlStatus::InvalidArgument, "out_vault is null");
        }
        let path = match unsafe { read_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match Vault::open(Path::new(path)) {
            Ok(inner) => {
                let handle = Box::new(GlVault { inner, ek1: None });
                unsafe { *out_vault = Box::into_raw(handle) };
                GlStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Writes the vault's current epoch number to `out_epoch`.
///
/// # Safety
/// `vault` must be a live handle from this library; `out_epoch` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_epoch(vault: *const GlVault, out_epoch: *mut u64) -> GlStatus {
    guarded(|| {
        if vault.is_null() || out_epoch.is_null() {
            return fail(GlStatus::InvalidArgument, "vault/out_epoch is null");
        }
        let handle = unsafe { &*vault };
        unsafe { *out_epoch = handle.inner.epoch() };
        GlStatus::Ok
    })
}

/// Issues (or returns the already-issued) dummy name for `true_id` in the
/// current epoch. The name is returned through `out_dummy` as a heap string
/// owned by the caller; release it with [`gl_string_free`]. Requires the
/// key file created beside the vault. Call [`gl_vault_save`] to persist.
///
/// # Safety
/// `vault` must be a live handle from this library with no other
/// outstanding references; `out_dummy` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_issue_dummy(
    vault: *mut GlVault,
    true_id: u32,
    out_dummy: *mut *mut c_char,
) -> GlStatus {
    guarded(|| {
        if vault.is_null() || out_dummy.is_null() {
            return fail(GlStatus::InvalidArgument, "vault/out_dummy is null");
        }
        let handle = unsafe { &mut *vault };
        let ek1 = match ek1_of(handle) {
            Ok(ek1) => ek1,
            Err(status) => return status,
        };
        match handle.inner.issue_dummy(true_id, &ek1) {
            Ok(dummy) => {
                let c = CString::new(dummy).expect("dummy names contain no NUL");
                unsafe { *out_dummy = c.into_raw() };
                GlStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Advances the vault to the next epoch and writes the new epoch number to
/// `out_epoch` (which may be null). Call [`gl_vault_save`] to persist.
///
/// # Safety
/// `vault` must be a live handle from this library with no other
/// outstanding references; `out_epoch` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_rotate_epoch(
    vault: *mut GlVault,
    out_epoch: *mut u64,
) -> GlStatus {
    guarded(|| {
        if vault.is_null() {
            return fail(GlStatus::InvalidArgument, "vault is null");
        }
        let handle = unsafe { &mut *vault };
        let epoch = handle.inner.rotate_epoch();
        if !out_epoch.is_null() {
            unsafe { *out_epoch = epoch };
        }
        GlStatus::Ok
    })
}

/// Resolves `dummy` in `epoch` back to the true ID, writing it to
/// `out_true_id`. Requires the admin passphrase and the key file; every
/// attempt (granted or denied) is appended to the audit log, so call
/// [`gl_vault_save`] afterwards to persist it.
///
/// # Safety
/// `vault` must be a live handle from this library with no other
/// outstanding references; `dummy` and `passphrase` must be NUL-terminated
/// strings; `out_true_id` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_resolve_dummy(
    vault: *mut GlVault,
    dummy: *const c_char,
    epoch: u64,
    passphrase: *const c_char,
    out_true_id: *mut u32,
) -> GlStatus {
    guarded(|| {
        if vault.is_null() || out_true_id.is_null() {
            return fail(GlStatus::InvalidArgument, "vault/out_true_id is null");
        }
        let dummy = match unsafe { read_str(dummy, "dummy") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let passphrase = match unsafe { read_str(passphrase, "passphrase") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let handle = unsafe { &mut *vault };
        let ek1 = match ek1_of(handle) {
            Ok(ek1) => ek1,
            Err(status) => return status,
        };
        let ek2 = match handle.inner.derive_ek2(passphrase) {
            Ok(ek2) => ek2,
            Err(e) => return fail_error(&e),
        };
        let keys = VaultKeys { ek1, ek2 };
        match handle.inner.resolve_dummy(dummy, epoch, &keys, passphrase) {
            Ok(id) => {
                unsafe { *out_true_id = id };
                GlStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Persists the vault document (mapping tables and audit log) atomically.
///
/// # Safety
/// `vault` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_save(vault: *const GlVault) -> GlStatus {
    guarded(|| {
        if vault.is_null() {
            return fail(GlStatus::InvalidArgument, "vault is null");
        }
        let handle = unsafe { &*vault };
        match handle.inner.save() {
            Ok(()) => GlStatus::Ok,
            Err(e) => fail_error(&e),
        }
    })
}

/// Releases a vault handle. Null is a no-op. Does not save: unsaved
/// issuances and audit entries are dropped.
///
/// # Safety
/// `vault` must be null or a handle from this library that has not already
/// been freed; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gl_vault_free(vault: *mut GlVault) {
    if !vault.is_null() {
        drop(unsafe { Box::from_raw(vault) });
    }
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string pointer returned by this library that has
/// not already been freed.
#[no_mangle]
pub unsafe extern "C" fn gl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
