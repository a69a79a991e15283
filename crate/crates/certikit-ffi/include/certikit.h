#ifndef CERTIKIT_H
#define CERTIKIT_H

/* Generated by cbindgen from the certikit-ffi crate; regenerate with `cbindgen --crate certikit-ffi --output include/certikit.h` from crates/certikit-ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code returned by every fallible entry point.
 */
typedef enum {
  /**
   * The call succeeded.
   */
  CK_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CK_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CK_INVALID_UTF8 = 2,
  /**
   * The model text was rejected; see `certikit_last_error`.
   */
  CK_PARSE_ERROR = 3,
  /**
   * Solving or certification failed; see `certikit_last_error`.
   */
  CK_PROTOCOL_ERROR = 4,
  /**
   * An index argument was out of range.
   */
  CK_OUT_OF_RANGE = 5,
  /**
   * The library panicked internally; the handle state is unspecified.
   */
  CK_INTERNAL = 6,
} CkStatus;

/**
 * A parsed transition system together with its specifications.
 */
typedef struct CkModel CkModel;

/**
 * The outcome of one certified model-checking run.
 */
typedef struct CkReport CkReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the library version as a static nul-terminated string.
 *
 * The pointer is valid for the lifetime of the process and must not be
 * freed.
 */
const char *certikit_version(void);

/**
 * Returns the message for the most recent failure on this thread, or
 * null if the most recent call succeeded.
 *
 * The pointer is owned by the library and is invalidated by the next
 * certikit call on the same thread; copy it if it needs to outlive
 * that. Do not free it.
 */
const char *certikit_last_error(void);

/**
 * Parses model text into a new handle.
 *
 * `text` must be a nul-terminated UTF-8 string in the model language.
 * On `CK_OK`, `*out` receives a handle that must eventually be passed
 * to `certikit_model_free`.
 *
 * # Safety
 *
 * `text` must point to a valid nul-terminated string and `out` to a
 * writable pointer slot.
 */
CkStatus certikit_model_parse(const char *text, CkModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 *
 * `model` must be null or a handle from `certikit_model_parse` that has
 * not been freed.
 */
void certikit_model_free(CkModel *model);

/**
 * Returns the number of specifications the model declares, which is
 * also the number of answers a report for it will carry. Null yields 0.
 *
 * # Safety
 *
 * `model` must be null or a live handle from `certikit_model_parse`.
 */
uint32_t certikit_model_spec_count(const CkModel *model);

/**
 * Checks every specification of the model and certifies the run.
 *
 * The solver records its work as a trace, the prover compiles the trace
 * into a circuit, and the verifier interrogates the prover in-process;
 * `seed` drives all verifier randomness, `gc` selects incremental
 * certification with prover-side garbage collection, and `repetitions`
 * (clamped to at least 1) repeats the interrogation to sharpen the
 * error bound. On `CK_OK`, `*out` receives a report that must
 * eventually be passed to `certikit_report_free`; the certification
 * verdict — including a rejection — is reported there, not as a status
 * code.
 *
 * # Safety
 *
 * `model` must be a live handle from `certikit_model_parse` and `out` a
 * writable pointer slot.
 */
CkStatus certikit_certify(const CkModel *model,
                          uint64_t seed,
                          bool gc,
                          uint32_t repetitions,
                          CkReport **out);

/**
 * Returns whether the verifier accepted the certification. Null yields
 * false.
 *
 * # Safety
 *
 * `report` must be null or a live handle from `certikit_certify`.
 */
bool certikit_report_accepted(const CkReport *report);

/**
 * Returns the number of per-specification answers in the report. Null
 * yields 0.
 *
 * # Safety
 *
 * `report` must be null or a live handle from `certikit_certify`.
 */
uint32_t certikit_report_answer_count(const CkReport *report);

/**
 * Writes the answer for the `index`-th specification (in declaration
 * order) to `*out`.
 *
 * # Safety
 *
 * `report` must be a live handle from `certikit_certify` and `out` a
 * writable bool slot.
 */
CkStatus certikit_report_answer(const CkReport *report, uint32_t index, bool *out);

/**
 * Returns the report's statistics as a newly allocated `key=value`
 * block, one pair per line — the same keys the command-line tool
 * prints, minus timings. Free it with `certikit_string_free`. Null
 * yields null.
 *
 * # Safety
 *
 * `report` must be null or a live handle from `certikit_certify`.
 */
char *certikit_report_stats(const CkReport *report);

/**
 * Releases a report handle. Null is ignored.
 *
 * # Safety
 *
 * `report` must be null or a handle from `certikit_certify` that has
 * not been freed.
 */
void certikit_report_free(CkReport *report);

/**
 * Releases a string allocated by this library. Null is ignored.
 *
 * # Safety
 *
 * `s` must be null or a pointer returned by `certikit_report_stats`
 * that has not been freed.
 */
void certikit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CERTIKIT_H */
