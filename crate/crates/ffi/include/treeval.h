#ifndef TREEVAL_H
#define TREEVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TreevalStatus {
  TREEVAL_STATUS_OK = 0,
  TREEVAL_STATUS_NULL_ARGUMENT = 1,
  TREEVAL_STATUS_INVALID_UTF8 = 2,
  TREEVAL_STATUS_PARSE_ERROR = 3,
  TREEVAL_STATUS_INVALID_ARGUMENT = 4,
  TREEVAL_STATUS_NOT_FOUND = 5,
  TREEVAL_STATUS_INVALID_TRANSITION = 6,
  TREEVAL_STATUS_BACKEND_ERROR = 7,
  TREEVAL_STATUS_IO_ERROR = 8,
  TREEVAL_STATUS_CALLBACK_FAILED = 9,
  TREEVAL_STATUS_PANIC = 10,
} TreevalStatus;

/**
 * Opaque scene graph handle.
 */
typedef struct TreevalSceneGraph TreevalSceneGraph;

/**
 * Opaque session handle.
 */
typedef struct TreevalSession TreevalSession;

/**
 * Probe callback for [`treeval_locate_json`]. Receives the combined graph as
 * canonical JSON and its rendered text. Returns 1 for pass, 0 for fail and a
 * negative value to abort the search.
 */
typedef int (*TreevalOracle)(const char *graph_json, const char *text, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Free with
 * [`treeval_string_free`].
 */
char *treeval_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void treeval_string_free(char *s);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TreevalStatus treeval_scene_graph_parse(const char *json, struct TreevalSceneGraph **out);

/**
 * Canonical JSON of the graph.
 *
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum TreevalStatus treeval_scene_graph_serialize(const struct TreevalSceneGraph *graph, char **out);

/**
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum TreevalStatus treeval_scene_graph_node_count(const struct TreevalSceneGraph *graph,
                                                  size_t *out);

/**
 * Splits a graph into two halves. Atomic and empty graphs fail with
 * `InvalidArgument`.
 *
 * # Safety
 * `graph` must be a live handle; `left` and `right` valid pointers.
 */
enum TreevalStatus treeval_scene_graph_split(const struct TreevalSceneGraph *graph,
                                             struct TreevalSceneGraph **left,
                                             struct TreevalSceneGraph **right);

/**
 * # Safety
 * `a` and `b` must be live handles and `out` a valid pointer.
 */
enum TreevalStatus treeval_scene_graph_merge(const struct TreevalSceneGraph *a,
                                             const struct TreevalSceneGraph *b,
                                             struct TreevalSceneGraph **out);

/**
 * # Safety
 * `graph` must be null or a handle from this library, freed once.
 */
void treeval_scene_graph_free(struct TreevalSceneGraph *graph);

/**
 * Runs failure location on a graph the caller already knows to fail. Writes
 * `{"triggers": [...], "trace": {...}}` to `out`.
 *
 * # Safety
 * `graph_json` must be a NUL-terminated string, `oracle` a valid function
 * and `out` a valid pointer. `user_data` is passed through untouched.
 */
enum TreevalStatus treeval_locate_json(const char *graph_json,
                                       size_t budget,
                                       TreevalOracle oracle,
                                       void *user_data,
                                       char **out);

/**
 * Creates a session. `config_json` may be null for defaults.
 *
 * # Safety
 * `root_topic` must be a NUL-terminated string, `config_json` null or one,
 * and `out` a valid pointer.
 */
enum TreevalStatus treeval_session_new(const char *root_topic,
                                       const char *config_json,
                                       struct TreevalSession **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TreevalStatus treeval_session_load(const char *path, struct TreevalSession **out);

/**
 * Applies one command (`{"op": "build", "node": "0.0"}` and so on) and
 * writes the result JSON to `out`.
 *
 * # Safety
 * `session` must be a live handle, `command_json` a NUL-terminated string
 * and `out` a valid pointer.
 */
enum TreevalStatus treeval_session_apply(struct TreevalSession *session,
                                         const char *command_json,
                                         char **out);

/**
 * Session-wide pass rates, bug count and curve as JSON.
 *
 * # Safety
 * `session` must be a live handle and `out` a valid pointer.
 */
enum TreevalStatus treeval_session_metrics(const struct TreevalSession *session, char **out);

/**
 * # Safety
 * `session` must be a live handle and `path` a NUL-terminated string.
 */
enum TreevalStatus treeval_session_save(const struct TreevalSession *session, const char *path);

/**
 * # Safety
 * `session` must be null or a handle from this library, freed once.
 */
void treeval_session_free(struct TreevalSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREEVAL_H */
