/* C interface to the gazelab privacy laboratory. */

#ifndef GAZELAB_H
#define GAZELAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call. Mirrors the library's error
// categories (and the CLI's exit codes) one-to-one.
typedef enum GlStatus {
  // Success.
  GL_STATUS_OK = 0,
  // Unexpected internal failure (bug; never expected in normal use).
  GL_STATUS_INTERNAL = 1,
  // Invalid configuration value.
  GL_STATUS_CONFIG = 2,
  // Invalid data or I/O failure.
  GL_STATUS_DATA = 3,
  // Authorization failure: wrong passphrase or key.
  GL_STATUS_AUTH = 4,
  // Lookup target does not exist.
  GL_STATUS_NOT_FOUND = 5,
  // Null pointer, non-UTF-8 string, or out-of-domain argument.
  GL_STATUS_INVALID_ARGUMENT = 6,
} GlStatus;

// Opaque vault handle. Not thread-safe: guard it with a lock if shared.
typedef struct GlVault GlVault;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the calling thread's most recent failure, or null if
// its last call succeeded. The pointer is valid until the thread's next
// call into this library; do not free it.
const char *gl_last_error_message(void);

// Confidence assigned to a nearest-neighbor match at `distance`:
// `exp(-distance)`. `distance` must be finite and non-negative.
//
// # Safety
// `out_confidence` must be valid for writes (or null, which is rejected).
enum GlStatus gl_knn_confidence(double distance, double *out_confidence);

// Deterministic MD5-derived ID in `[0, 10000)` for a feature vector,
// probing past `existing_ids` (linear, wrapping) until a free ID is found.
//
// # Safety
// `features` must point to `n_features` readable doubles; `existing_ids`
// must point to `n_existing` readable u32s (it may be null when
// `n_existing` is 0); `out_id` must be valid for writes.
enum GlStatus gl_feature_hash_id(const double *features,
                                 size_t n_features,
                                 const uint32_t *existing_ids,
                                 size_t n_existing,
                                 uint32_t *out_id);

// Creates a new vault at `path` (the hex key file lands beside it) and
// returns a handle through `out_vault`. Fails if either file exists.
//
// # Safety
// `path` and `passphrase` must be NUL-terminated strings; `out_vault` must
// be valid for writes. The returned handle must be released with
// [`gl_vault_free`].
enum GlStatus gl_vault_create(const char *path,
                              const char *passphrase,
                              uint32_t iterations,
                              uint64_t seed,
                              struct GlVault **out_vault);

// Opens an existing vault file and returns a handle through `out_vault`.
//
// # Safety
// `path` must be a NUL-terminated string; `out_vault` must be valid for
// writes. The returned handle must be released with [`gl_vault_free`].
enum GlStatus gl_vault_open(const char *path, struct GlVault **out_vault);

// Writes the vault's current epoch number to `out_epoch`.
//
// # Safety
// `vault` must be a live handle from this library; `out_epoch` must be
// valid for writes.
enum GlStatus gl_vault_epoch(const struct GlVault *vault, uint64_t *out_epoch);

// Issues (or returns the already-issued) dummy name for `true_id` in the
// current epoch. The name is returned through `out_dummy` as a heap string
// owned by the caller; release it with [`gl_string_free`]. Requires the
// key file created beside the vault. Call [`gl_vault_save`] to persist.
//
// # Safety
// `vault` must be a live handle from this library with no other
// outstanding references; `out_dummy` must be valid for writes.
enum GlStatus gl_vault_issue_dummy(struct GlVault *vault, uint32_t true_id, char **out_dummy);

// Advances the vault to the next epoch and writes the new epoch number to
// `out_epoch` (which may be null). Call [`gl_vault_save`] to persist.
//
// # Safety
// `vault` must be a live handle from this library with no other
// outstanding references; `out_epoch` must be null or valid for writes.
enum GlStatus gl_vault_rotate_epoch(struct GlVault *vault, uint64_t *out_epoch);

// Resolves `dummy` in `epoch` back to the true ID, writing it to
// `out_true_id`. Requires the admin passphrase and the key file; every
// attempt (granted or denied) is appended to the audit log, so call
// [`gl_vault_save`] afterwards to persist it.
//
// # Safety
// `vault` must be a live handle from this library with no other
// outstanding references; `dummy` and `passphrase` must be NUL-terminated
// strings; `out_true_id` must be valid for writes.
enum GlStatus gl_vault_resolve_dummy(struct GlVault *vault,
                                     const char *dummy,
                                     uint64_t epoch,
                                     const char *passphrase,
                                     uint32_t *out_true_id);

// Persists the vault document (mapping tables and audit log) atomically.
//
// # Safety
// `vault` must be a live handle from this library.
enum GlStatus gl_vault_save(const struct GlVault *vault);

// Releases a vault handle. Null is a no-op. Does not save: unsaved
// issuances and audit entries are dropped.
//
// # Safety
// `vault` must be null or a handle from this library that has not already
// been freed; it must not be used afterwards.
void gl_vault_free(struct GlVault *vault);

// Releases a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a string pointer returned by this library that has
// not already been freed.
void gl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZELAB_H */
