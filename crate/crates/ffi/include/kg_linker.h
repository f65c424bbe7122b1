#ifndef KG_LINKER_H
#define KG_LINKER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KglStatus {
  KGL_STATUS_OK = 0,
  KGL_STATUS_NULL_ARGUMENT = 1,
  KGL_STATUS_INVALID_UTF8 = 2,
  KGL_STATUS_IO = 3,
  // Malformed facts, types or names.
  KGL_STATUS_INPUT = 4,
  KGL_STATUS_CONFIG = 5,
  // Checkpoint unreadable or trained on different vocabularies.
  KGL_STATUS_CHECKPOINT_MISMATCH = 6,
  // No path of length at most `l_max` joins the pair.
  KGL_STATUS_NO_SUBGRAPH = 7,
  KGL_STATUS_BUFFER_TOO_SMALL = 8,
  KGL_STATUS_INTERNAL = 9,
  KGL_STATUS_PANIC = 10,
} KglStatus;

// Opaque knowledge base.
typedef struct KglKb KglKb;

// Opaque trained model plus its class names.
typedef struct KglModel KglModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *kgl_last_error(void);

// Library version, a static string.
const char *kgl_version(void);

// Loads a facts file and an optional types file (`types` may be null).
enum KglStatus kgl_kb_load(const char *facts, const char *types, struct KglKb **out);

// Releases a knowledge base. Null is ignored.
void kgl_kb_free(struct KglKb *kb);

// Vocabulary and fact counts. Any output pointer may be null.
enum KglStatus kgl_kb_counts(const struct KglKb *kb,
                             size_t *entities,
                             size_t *relations,
                             size_t *types,
                             size_t *facts);

// Loads a checkpoint (and its `.json` sidecar) for inference.
enum KglStatus kgl_model_load(const char *checkpoint, struct KglModel **out);

// Releases a model. Null is ignored.
void kgl_model_free(struct KglModel *model);

// Number of output classes (class 0 is the null relation); 0 for null.
size_t kgl_model_num_classes(const struct KglModel *model);

// Copies the NUL-terminated name of `class` into `buf`. `needed` (if not
// null) receives the required size including the terminator; a short buffer
// yields `KGL_STATUS_BUFFER_TOO_SMALL` and writes nothing.
enum KglStatus kgl_model_class_name(const struct KglModel *model,
                                    size_t class_,
                                    char *buf,
                                    size_t buf_len,
                                    size_t *needed);

// Scores every class for `source -> target`.
//
// `scores[c]` receives the logit of class `c` and `ranking[i]` the class at
// rank `i` (best first). Either array may be null; non-null arrays must hold
// `len >= kgl_model_num_classes(model)` elements. `l_max = 0` uses the path
// bound the model was trained with.
enum KglStatus kgl_predict(const struct KglModel *model,
                           const struct KglKb *kb,
                           const char *source,
                           const char *target,
                           size_t l_max,
                           double *scores,
                           size_t *ranking,
                           size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KG_LINKER_H */
