#ifndef GOOSEGUARD_H
#define GOOSEGUARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GgMode {
  GG_MODE_MAC_ONLY = 0,
  GG_MODE_IDS_ONLY = 1,
  GG_MODE_HYBRID = 2,
} GgMode;

typedef enum GgStage {
  GG_STAGE_NONE = 0,
  GG_STAGE_MAC = 1,
  GG_STAGE_IDS = 2,
} GgStage;

// Result of every fallible call.
typedef enum GgStatus {
  GG_STATUS_OK = 0,
  GG_STATUS_NULL_ARGUMENT = 1,
  GG_STATUS_INVALID_ARGUMENT = 2,
  // Output buffer too small; the required size was still written.
  GG_STATUS_BUFFER_TOO_SMALL = 3,
  GG_STATUS_DECODE = 4,
  GG_STATUS_SIGN = 5,
  GG_STATUS_CONFIG = 6,
  GG_STATUS_IO = 7,
  GG_STATUS_INTERNAL = 8,
} GgStatus;

typedef struct GgKeyStore GgKeyStore;

typedef struct GgPipeline GgPipeline;

typedef struct GgSigner GgSigner;

// Outcome of one frame. `flags` has bit `1 << n` set for every rule `n`
// that fired; `gg_rule_name(n)` names it.
typedef struct GgVerdict {
  bool delivered;
  // Stage that dropped the frame; `None` when delivered.
  enum GgStage stage;
  uint32_t flags;
  bool alert;
} GgVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next failing call on the same thread.
const char *gg_last_error(void);

// Static upper-case name of the rule at bit `bit`, or NULL if out of range.
const char *gg_rule_name(uint32_t bit);

struct GgKeyStore *gg_keystore_new(void);

// Loads a keystore file (`<key id hex> = <32 hex digits>` per line).
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum GgStatus gg_keystore_load(const char *path, struct GgKeyStore **out);

// # Safety
// `ks` must come from this library and `key` point at 16 bytes.
enum GgStatus gg_keystore_insert(struct GgKeyStore *ks, uint32_t key_id, const uint8_t *key);

// Selects the key `sender_id` signs with.
//
// # Safety
// `ks` must come from this library.
enum GgStatus gg_keystore_set_active(struct GgKeyStore *ks, uint32_t sender_id, uint32_t key_id);

// # Safety
// `ks` must come from this library or be NULL, and not be used afterwards.
void gg_keystore_free(struct GgKeyStore *ks);

struct GgSigner *gg_signer_new(uint32_t sender_id);

// # Safety
// `signer` must come from this library or be NULL, and not be used afterwards.
void gg_signer_free(struct GgSigner *signer);

// Signs an encoded GOOSE frame, replacing any existing extension. The
// signed frame goes to `out`; `out_len` receives its length even when
// the buffer is too small.
//
// # Safety
// Pointers must be valid for the given lengths; handles must come from
// this library.
enum GgStatus gg_sign_frame(struct GgSigner *signer,
                            const struct GgKeyStore *ks,
                            const uint8_t *frame,
                            size_t frame_len,
                            uint8_t *out,
                            size_t out_cap,
                            size_t *out_len);

// Creates a subscriber pipeline. The keystore is copied. `t0_ms`,
// `t1_ms` and `ttl_multiplier` describe the publisher being watched.
//
// # Safety
// `ks` must come from this library and `out` be writable.
enum GgStatus gg_pipeline_new(enum GgMode mode,
                              const struct GgKeyStore *ks,
                              uint32_t t0_ms,
                              uint32_t t1_ms,
                              uint32_t ttl_multiplier,
                              struct GgPipeline **out);

// Runs one received frame through the pipeline at `now_us` (simulation
// microseconds, non-decreasing).
//
// # Safety
// `p` must come from this library, `frame` be valid for `frame_len`
// bytes and `verdict` writable.
enum GgStatus gg_pipeline_process(struct GgPipeline *p,
                                  const uint8_t *frame,
                                  size_t frame_len,
                                  uint64_t now_us,
                                  struct GgVerdict *verdict);

// Microsecond instant of the next TTL deadline, or `UINT64_MAX` if none.
// A stream expires once the clock passes its deadline.
//
// # Safety
// `p` must come from this library.
uint64_t gg_pipeline_next_expiry(const struct GgPipeline *p);

// Checks TTL expiry at `now_us`; `flags` receives the mask of rules raised.
//
// # Safety
// `p` must come from this library and `flags` be writable.
enum GgStatus gg_pipeline_check_expiry(struct GgPipeline *p, uint64_t now_us, uint32_t *flags);

// # Safety
// `p` must come from this library or be NULL, and not be used afterwards.
void gg_pipeline_free(struct GgPipeline *p);

// Retransmission intervals (ms) after an event. Writes up to `cap`
// entries; `out_len` receives the full count.
//
// # Safety
// `out` must hold `cap` entries and `out_len` be writable.
enum GgStatus gg_burst_schedule(uint32_t t0_ms,
                                uint32_t t1_ms,
                                uint32_t *out,
                                size_t cap,
                                size_t *out_len);

// Runs the attack matrix and returns the structured report as JSON in
// `*out`, to be released with `gg_string_free`. `config_path` may be NULL
// for the built-in scenario; a nonzero `seed` overrides the scenario seed.
//
// # Safety
// `config_path` must be NULL or NUL-terminated, and `out` writable.
enum GgStatus gg_run_matrix_json(const char *config_path, uint64_t seed, char **out);

// # Safety
// `s` must come from this library or be NULL.
void gg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOOSEGUARD_H */
