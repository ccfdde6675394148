#ifndef FASHIONKB_H
#define FASHIONKB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FkbStatus {
  FKB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FKB_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FKB_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read or was damaged.
   */
  FKB_STATUS_IO = 3,
  /**
   * Malformed JSON input.
   */
  FKB_STATUS_PARSE = 4,
  /**
   * The query was rejected; the last error is the JSON error body.
   */
  FKB_STATUS_QUERY = 5,
  /**
   * The post does not fit the model.
   */
  FKB_STATUS_MODEL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  FKB_STATUS_PANIC = 7,
} FkbStatus;

/**
 * Opaque knowledge base handle.
 */
typedef struct FkbKb FkbKb;

/**
 * Opaque concept model handle.
 */
typedef struct FkbModel FkbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * success. Owned by the library; valid until the next call on the thread.
 */
const char *fkb_last_error(void);

/**
 * Library version, a static string.
 */
const char *fkb_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fkb_string_free(char *s);

/**
 * Loads a knowledge base snapshot.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FkbStatus fkb_kb_open(const char *path, struct FkbKb **out);

/**
 * Releases a knowledge base. Null is ignored.
 *
 * # Safety
 * `kb` must come from [`fkb_kb_open`] and not have been freed.
 */
void fkb_kb_free(struct FkbKb *kb);

/**
 * Number of stored triplet instances and of posts.
 *
 * # Safety
 * `kb` must be a live handle; the out pointers must be writable.
 */
enum FkbStatus fkb_kb_counts(const struct FkbKb *kb, size_t *instances, size_t *posts);

/**
 * Facet option lists as JSON, the same body as `GET /api/vocab`.
 *
 * # Safety
 * `kb` must be a live handle; `out` must be writable.
 */
enum FkbStatus fkb_kb_vocab_json(const struct FkbKb *kb, char **out);

/**
 * Aggregated triplets matching a URL query string such as
 * `occasion=wedding&category=dress&limit=10`, as the JSON page returned
 * by `GET /api/triplets`. A rejected query yields [`FkbStatus::Query`]
 * with the JSON error body as the last error.
 *
 * # Safety
 * `kb` must be a live handle, `query` a NUL-terminated string and `out`
 * writable.
 */
enum FkbStatus fkb_kb_query_triplets(const struct FkbKb *kb, const char *query, char **out);

/**
 * Matching posts, as the JSON page returned by `GET /api/posts` without
 * captions.
 *
 * # Safety
 * As for [`fkb_kb_query_triplets`].
 */
enum FkbStatus fkb_kb_query_posts(const struct FkbKb *kb, const char *query, char **out);

/**
 * Loads the concept model from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FkbStatus fkb_model_open(const char *path, struct FkbModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`fkb_model_open`] and not have been freed.
 */
void fkb_model_free(struct FkbModel *model);

/**
 * Predicts labels for one post given as JSON (the `post` object of a
 * corpus line). Writes `{"occasion": ..., "garments": [...]}` with one
 * entry per garment region.
 *
 * # Safety
 * `model` must be a live handle, `post_json` a NUL-terminated string and
 * `out` writable.
 */
enum FkbStatus fkb_model_predict(const struct FkbModel *model, const char *post_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASHIONKB_H */
