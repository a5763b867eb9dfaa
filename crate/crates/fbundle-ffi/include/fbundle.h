#ifndef FBUNDLE_H
#define FBUNDLE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every call.
 */
typedef enum FbStatus {
  FB_STATUS_OK = 0,
  FB_STATUS_NULL_POINTER = 1,
  FB_STATUS_INVALID_UTF8 = 2,
  FB_STATUS_PARSE = 3,
  FB_STATUS_INVALID = 4,
  FB_STATUS_COMPUTATION = 5,
  FB_STATUS_PANIC = 6,
} FbStatus;

/**
 * A flat connection with a pole along u = 0.
 */
typedef struct FbConnection FbConnection;

/**
 * The outcome of a batch job.
 */
typedef struct FbReport FbReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fb_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` is null or a string returned through an out-pointer of this library,
 * not yet freed.
 */
void fb_string_free(char *s);

/**
 * Parse a connection from JSON.
 *
 * # Safety
 * `json` is a valid NUL-terminated string and `out` a writable pointer.
 */
enum FbStatus fb_connection_from_json(const char *json, struct FbConnection **out);

/**
 * Release a connection handle.
 *
 * # Safety
 * `c` is null or a handle from this library, not yet freed.
 */
void fb_connection_free(struct FbConnection *c);

/**
 * Fiber rank of a connection.
 *
 * # Safety
 * `c` is a live handle and `out` a writable pointer.
 */
enum FbStatus fb_connection_rank(const struct FbConnection *c, size_t *out);

/**
 * Whether the connection is flat to its caps.
 *
 * # Safety
 * `c` is a live handle and `out` a writable pointer.
 */
enum FbStatus fb_connection_is_flat(const struct FbConnection *c, bool *out);

/**
 * Serialize a connection to JSON; free the result with [`fb_string_free`].
 *
 * # Safety
 * `c` is a live handle and `out` a writable pointer.
 */
enum FbStatus fb_connection_to_json(const struct FbConnection *c, char **out);

/**
 * Extend the framing at the center and return the framed connection.
 *
 * # Safety
 * `c` is a live handle and `out` a writable pointer.
 */
enum FbStatus fb_connection_frame(const struct FbConnection *c, struct FbConnection **out);

/**
 * Run a batch job given as command-line arguments (without the program
 * name), e.g. `{"projbundle", "input.json", "--order-u", "8"}`.
 *
 * Fails only on unusable arguments; a job whose stages fail still yields a
 * report with a nonzero exit code.
 *
 * # Safety
 * `argv` points to `argc` valid NUL-terminated strings and `out` is a
 * writable pointer.
 */
enum FbStatus fb_run_job(size_t argc, const char *const *argv, struct FbReport **out);

/**
 * Process exit code the job would have: 0 iff every verification passed.
 *
 * # Safety
 * `r` is null or a live report handle.
 */
int32_t fb_report_exit_code(const struct FbReport *r);

/**
 * JSON text of a report, owned by the handle.
 *
 * # Safety
 * `r` is null or a live report handle; the string dies with the handle.
 */
const char *fb_report_json(const struct FbReport *r);

/**
 * Release a report handle.
 *
 * # Safety
 * `r` is null or a report handle from this library, not yet freed.
 */
void fb_report_free(struct FbReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBUNDLE_H */
