#ifndef WEBSCOUT_H
#define WEBSCOUT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an ABI call. Anything but `Ok` leaves an explanation in
// [`ws_last_error_message`].
typedef enum WsStatus {
  WsStatus_Ok = 0,
  // A required pointer argument was null.
  WsStatus_NullArgument = 1,
  // A string argument was not valid UTF-8.
  WsStatus_InvalidUtf8 = 2,
  // The world file could not be read.
  WsStatus_Io = 3,
  // The world file parsed but failed validation.
  WsStatus_InvalidWorld = 4,
  // The world defines no task with the requested id.
  WsStatus_UnknownTask = 5,
  // The configuration JSON was malformed or out of range.
  WsStatus_InvalidConfig = 6,
  // The run itself failed partway (environment or trace error).
  WsStatus_SearchFailed = 7,
  // A panic was caught at the boundary; state may be stale.
  WsStatus_Panic = 8,
} WsStatus;

// What one finished run reports.
typedef struct WsRunResult WsRunResult;

// A loaded world plus everything needed to run it.
typedef struct WsWorld WsWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a world file and resolves its demonstrations file, if any, relative
// to it. On success writes a fresh handle to `out`.
//
// # Safety
// `path` must be a valid nul-terminated string; `out` must be a valid
// location to store a pointer.
enum WsStatus ws_world_load(const char *path, struct WsWorld **out);

// Releases a world handle. Accepts null.
//
// # Safety
// `world` must be null or a pointer returned by [`ws_world_load`] that has
// not been freed yet.
void ws_world_free(struct WsWorld *world);

// Number of tasks the world defines.
//
// # Safety
// `world` must be a live handle from [`ws_world_load`].
size_t ws_world_task_count(const struct WsWorld *world);

// Task id at `index`, or null when out of range. The string borrows from
// the world handle.
//
// # Safety
// `world` must be a live handle from [`ws_world_load`].
const char *ws_world_task_id_at(const struct WsWorld *world, size_t index);

// Runs `task_id` against the world with scripted oracles and writes a result
// handle to `out`.
//
// `config_json` is optional (pass null for defaults) and takes the same
// shape as the CLI's `"search"` section, for example
// `{"n_max": 5, "backprop": "average"}`. `honor_reflections` toggles whether
// the proposer obeys recorded reflections; runs are deterministic either
// way. `trace_path` is optional; when set, the JSONL trace plus its manifest
// and report are written there.
//
// # Safety
// `world` must be a live handle from [`ws_world_load`]; string arguments
// must be null or valid nul-terminated strings; `out` must be a valid
// location to store a pointer.
enum WsStatus ws_run_task(const struct WsWorld *world,
                          const char *task_id,
                          const char *config_json,
                          bool honor_reflections,
                          const char *trace_path,
                          struct WsRunResult **out);

// Releases a run result. Accepts null.
//
// # Safety
// `result` must be null or a pointer returned by [`ws_run_task`] that has
// not been freed yet.
void ws_result_free(struct WsRunResult *result);

// Whether the task's own evaluation passed.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
bool ws_result_success(const struct WsRunResult *result);

// The extracted answer, or null when the run produced none. Borrows from
// the result handle.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
const char *ws_result_answer(const struct WsRunResult *result);

// How many actions the run committed.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
size_t ws_result_executed_len(const struct WsRunResult *result);

// The committed action at `index` ("click [4]", "type [3] [Abishek]"), or
// null when out of range. Borrows from the result handle.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
const char *ws_result_executed_at(const struct WsRunResult *result, size_t index);

// Total tree expansions across every subtask attempt.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
uint32_t ws_result_expansions(const struct WsRunResult *result);

// Completed and planned subtask counts.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`]; the out parameters
// may each be null when that count is not wanted.
void ws_result_subtasks(const struct WsRunResult *result, size_t *completed, size_t *total);

// Hash of the run's event stream; equal hashes mean byte-identical traces.
// Borrows from the result handle.
//
// # Safety
// `result` must be a live handle from [`ws_run_task`].
const char *ws_result_trace_hash(const struct WsRunResult *result);

// A copy of the explanation for the most recent failure on this thread, or
// null when the last call succeeded. Release it with [`ws_string_free`].
char *ws_last_error_message(void);

// Releases a string returned by [`ws_last_error_message`]. Accepts null.
//
// # Safety
// `s` must be null or an owned string handed out by this library that has
// not been freed yet.
void ws_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEBSCOUT_H */
