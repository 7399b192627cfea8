#ifndef FGSHIELD_H
#define FGSHIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FG_FLAG_URG 32

#define FG_FLAG_ACK 16

#define FG_FLAG_PSH 8

#define FG_FLAG_RST 4

#define FG_FLAG_SYN 2

#define FG_FLAG_FIN 1

typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_UTF8 = 2,
  FG_STATUS_INVALID_ARGUMENT = 3,
  FG_STATUS_PARSE = 4,
  FG_STATUS_IO = 5,
  FG_STATUS_INTERNAL = 6,
} FgStatus;

typedef enum FgFlagVerdict {
  FG_FLAG_VERDICT_NORMAL = 0,
  FG_FLAG_VERDICT_SYN_FIN = 1,
  FG_FLAG_VERDICT_FIN_ONLY = 2,
  FG_FLAG_VERDICT_NULL_FLAGS = 3,
} FgFlagVerdict;

/**
 * Opaque learning database handle.
 */
typedef struct FgLdb FgLdb;

/**
 * Decoded LDB entry. Addresses are host-order integers.
 */
typedef struct FgFlowTuple {
  uint32_t src_ip;
  uint16_t src_port;
  uint32_t dst_ip;
  uint16_t dst_port;
  uint32_t pkt_size;
  uint8_t proto;
} FgFlowTuple;

/**
 * Header fields of one parsed log line.
 */
typedef struct FgHeader {
  double timestamp;
  uint8_t proto;
  uint32_t src_ip;
  uint32_t dst_ip;
  uint16_t src_port;
  uint16_t dst_port;
  uint8_t flags;
  uint32_t pkt_size;
  uint32_t header_len;
  uint8_t ttl;
  uint32_t window;
} FgHeader;

/**
 * Outcome of a GA search. `best` is owned by the caller; release it with
 * `fg_match_result_clear`.
 */
typedef struct FgMatchResult {
  bool exact;
  bool confirmed;
  double fitness;
  uint64_t generation;
  double elapsed_seconds;
  char *best;
} FgMatchResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *fg_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void fg_string_free(char *s);

/**
 * # Safety
 * `ip` must be a NUL-terminated string and `out` writable.
 */
enum FgStatus fg_ip_to_decimal(const char *ip, uint32_t *out);

/**
 * Dotted-quad text for `n`, written to `*out`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FgStatus fg_decimal_to_ip(uint32_t n, char **out);

/**
 * Classifies a flag byte built from the `FG_FLAG_*` weights. Bits above
 * the six flags are ignored.
 */
enum FgFlagVerdict fg_classify_flags(uint8_t flags);

/**
 * Encodes a tuple as an LDB entry string.
 *
 * # Safety
 * `tuple` must be readable and `out` writable.
 */
enum FgStatus fg_encode_entry(const struct FgFlowTuple *tuple, char **out);

/**
 * # Safety
 * `raw` must be a NUL-terminated string and `out` writable.
 */
enum FgStatus fg_decode_entry(const char *raw, struct FgFlowTuple *out);

/**
 * Parses one netfilter (`custom == false`) or custom log line.
 *
 * # Safety
 * `line` must be a NUL-terminated string and `out` writable.
 */
enum FgStatus fg_parse_line(const char *line, bool custom, struct FgHeader *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum FgStatus fg_detection_rate(uint64_t a, uint64_t n, double *out);

/**
 * # Safety
 * `runs` must point to `len` readable doubles and `out` be writable.
 */
enum FgStatus fg_performance_mean(const double *runs, size_t len, double *out);

/**
 * Creates an empty LDB that lives only in memory.
 *
 * # Safety
 * `out` must be writable.
 */
enum FgStatus fg_ldb_new(struct FgLdb **out);

/**
 * Opens (or creates) a file-backed LDB and its rule ledger.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` writable.
 */
enum FgStatus fg_ldb_open(const char *entries_path, const char *ledger_path, struct FgLdb **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `db` must come from `fg_ldb_new`/`fg_ldb_open` and not be used afterwards.
 */
void fg_ldb_free(struct FgLdb *db);

/**
 * Appends one entry string after validating its grammar.
 *
 * # Safety
 * `db` must be a live handle and `raw` a NUL-terminated string.
 */
enum FgStatus fg_ldb_append(struct FgLdb *db, const char *raw);

/**
 * # Safety
 * `db` must be a live handle and `out` writable.
 */
enum FgStatus fg_ldb_len(const struct FgLdb *db, size_t *out);

/**
 * Whether a live rule for (src_ip, proto, dst_port) exists at time `now`.
 * `dst_port` is ignored for protocols without ports.
 *
 * # Safety
 * `db` must be a live handle and `out` writable.
 */
enum FgStatus fg_ldb_contains_rule(const struct FgLdb *db,
                                   uint32_t src_ip,
                                   uint8_t proto,
                                   uint16_t dst_port,
                                   double now,
                                   bool *out);

/**
 * Runs the GA against a snapshot of `db` with default settings and the
 * given seed.
 *
 * # Safety
 * `db` must be a live handle, `target` a NUL-terminated string and `out`
 * writable.
 */
enum FgStatus fg_ga_search(const struct FgLdb *db,
                           const char *target,
                           uint64_t seed,
                           struct FgMatchResult *out);

/**
 * Frees the string inside a result and nulls it.
 *
 * # Safety
 * `result` must be NULL or point to a result filled by `fg_ga_search`.
 */
void fg_match_result_clear(struct FgMatchResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGSHIELD_H */
